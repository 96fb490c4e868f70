//! Unilateral misreport profit curves.
//!
//! An eligible agent (trading at truth with a positive VCG discount) keeps
//! only its winning atom and reports it at ratio `rho` of the true value:
//! buyers report `rho * v`, sellers inflate their reserve to `(2 - rho) * v`.
//! Everyone else reports truthfully. Profit is normalized by the agent's VCG
//! discount at truth.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::generators::{generate_batch, GeneratorConfig};
use crate::market::{Atom, Instance, Role, XorValuation};
use crate::payment::{settle, RuleId};
use crate::wd::WdResult;
use crate::{par, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Single,
    Expected,
    ConditionalGain,
    ConditionalLoss,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Single => "single",
            Variant::Expected => "expected",
            Variant::ConditionalGain => "conditional-gain",
            Variant::ConditionalLoss => "conditional-loss",
        }
    }
}

/// `0.025, 0.05, ..., 1.0`.
pub fn default_rho_grid() -> Vec<f64> {
    (1..=40).map(|k| f64::from(k) * 0.025).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationCurve {
    pub variant: Variant,
    pub rule: RuleId,
    pub rho: Vec<f64>,
    /// Mean normalized profit per `rho`; `None` where no pair contributed.
    pub values: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationPoint {
    pub rho: f64,
    /// True value of the realized trade minus payment, over the VCG discount at truth.
    pub profit: f64,
    pub trades: bool,
}

/// The single-atom report at ratio `rho`.
pub fn misreport(truth: &XorValuation, atom: usize, rho: f64) -> XorValuation {
    let factor = match truth.role() {
        Role::Buyer => rho,
        Role::Seller => 2.0 - rho,
    };
    let a = &truth.atoms()[atom];
    XorValuation::from_parts(truth.role(), vec![Atom { trade: a.trade.clone(), value: a.value * factor }])
}

/// Winning atom and VCG discount of `agent` at truth, when it is eligible.
pub fn eligibility(truthful: &WdResult, agent: usize) -> Option<(usize, f64)> {
    let atom = truthful.profile.assignment[agent]?;
    let d = truthful.vcg_discounts[agent];
    (d > 0.0).then_some((atom, d))
}

/// Points of the single-instance curve, or `None` for ineligible agents.
pub fn unilateral_points(
    instance: &Instance,
    agent: usize,
    rule: RuleId,
    rhos: &[f64],
) -> Result<Option<Vec<DeviationPoint>>> {
    let truth = instance.valuations();
    let truthful = WdResult::solve(instance, &truth);
    unilateral_points_given(instance, &truth, &truthful, agent, rule, rhos)
}

fn unilateral_points_given(
    instance: &Instance,
    truth: &[XorValuation],
    truthful: &WdResult,
    agent: usize,
    rule: RuleId,
    rhos: &[f64],
) -> Result<Option<Vec<DeviationPoint>>> {
    let Some((atom, denom)) = eligibility(truthful, agent) else {
        return Ok(None);
    };
    let mut reports = truth.to_vec();
    let mut points = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        reports[agent] = misreport(&truth[agent], atom, rho);
        let out = settle(instance.goods, &reports, rule)?;
        let trades = out.profile.assignment[agent].is_some();
        let value = if trades { truth[agent].atoms()[atom].value } else { 0.0 };
        points.push(DeviationPoint { rho, profit: (value - out.payments[agent]) / denom, trades });
    }
    Ok(Some(points))
}

pub fn unilateral_curve(
    instance: &Instance,
    agent: usize,
    rule: RuleId,
    rhos: &[f64],
) -> Result<Option<DeviationCurve>> {
    Ok(unilateral_points(instance, agent, rule, rhos)?.map(|points| DeviationCurve {
        variant: Variant::Single,
        rule,
        rho: rhos.to_vec(),
        values: points.iter().map(|p| Some(p.profit)).collect(),
        counts: vec![1; rhos.len()],
    }))
}

/// Every eligible agent's curve on every instance.
pub fn all_points(instances: &[Instance], rule: RuleId, rhos: &[f64]) -> Result<Vec<Vec<DeviationPoint>>> {
    let per_instance: Vec<Result<Vec<Vec<DeviationPoint>>>> = par::map(instances, |inst| {
        let truth = inst.valuations();
        let truthful = WdResult::solve(inst, &truth);
        let mut out = Vec::new();
        for i in 0..inst.n_agents() {
            if let Some(p) = unilateral_points_given(inst, &truth, &truthful, i, rule, rhos)? {
                out.push(p);
            }
        }
        Ok(out)
    });
    let mut all = Vec::new();
    for r in per_instance {
        all.extend(r?);
    }
    Ok(all)
}

/// Expected, conditional-gain and conditional-loss curves from curve points.
pub fn aggregate(rule: RuleId, rhos: &[f64], curves: &[Vec<DeviationPoint>]) -> [DeviationCurve; 3] {
    let build = |variant: Variant, keep: &dyn Fn(&DeviationPoint) -> bool| {
        let mut sums = vec![0.0; rhos.len()];
        let mut counts = vec![0usize; rhos.len()];
        for c in curves {
            for (j, p) in c.iter().enumerate() {
                if keep(p) {
                    sums[j] += p.profit;
                    counts[j] += 1;
                }
            }
        }
        DeviationCurve {
            variant,
            rule,
            rho: rhos.to_vec(),
            values: sums.iter().zip(&counts).map(|(&s, &n)| (n > 0).then(|| s / n as f64)).collect(),
            counts,
        }
    };
    [
        build(Variant::Expected, &|_| true),
        build(Variant::ConditionalGain, &|p| p.trades),
        build(Variant::ConditionalLoss, &|p| !p.trades),
    ]
}

/// Expected and conditional curves over `n_instances` fresh instances.
pub fn expected_curves(
    config: &GeneratorConfig,
    rule: RuleId,
    rhos: &[f64],
    n_instances: usize,
    seed: u64,
) -> Result<[DeviationCurve; 3]> {
    let instances = generate_batch(config, seed, "deviation", n_instances)?;
    let curves = all_points(&instances, rule, rhos)?;
    Ok(aggregate(rule, rhos, &curves))
}

/// `rho` at the curve maximum; ties go to the larger `rho`.
pub fn argmax_rho(curve: &DeviationCurve) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&rho, v) in curve.rho.iter().zip(&curve.values) {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v >= b) {
                best = Some((rho, v));
            }
        }
    }
    best.map(|(r, _)| r)
}
