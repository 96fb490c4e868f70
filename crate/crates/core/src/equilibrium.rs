//! Restricted Bayes-Nash equilibrium by iterated best response over
//! multiplicative shave factors.
//!
//! Buyers report `(1 - a) v`, sellers `(1 + a) v`. Agents are grouped into
//! `K <= 3` valuation classes by the 95th percentile of their absolute atom
//! values, and every class shares one shave factor.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::generators::{generate_batch, GeneratorConfig};
use crate::market::{Instance, Role, XorValuation};
use crate::payment::{settle, RuleId};
use crate::wd::efficient_trade_goods;
use crate::{math, par, Error, Result};

pub const MAX_CLASSES: usize = 3;
/// Best responses must beat the incumbent by more than this to win a tie.
pub const UTILITY_TIE: f64 = 1e-9;

pub fn apply_shave(valuation: &XorValuation, alpha: f64) -> XorValuation {
    match valuation.role() {
        Role::Buyer => valuation.scaled(1.0 - alpha),
        Role::Seller => valuation.scaled(1.0 + alpha),
    }
}

/// Nearest-rank quantile of ascending `sorted`: element `ceil(q n)` (1-based).
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (libm::ceil(q * n as f64) as usize).clamp(1, n);
    sorted[rank - 1]
}

/// 95th percentile of `|value|` over the agent's atoms.
pub fn class_statistic(valuation: &XorValuation) -> f64 {
    let mut values: Vec<f64> = valuation.atoms().iter().map(|a| math::abs(a.value)).collect();
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    nearest_rank(&values, 0.95)
}

/// The `K - 1` cut points splitting `stats` into equally populated classes.
/// Cut `j` is the element of rank `ceil(j n / K)`.
pub fn class_boundaries(stats: &[f64], classes: usize) -> Result<Vec<f64>> {
    if classes == 0 || classes > MAX_CLASSES {
        return Err(Error::Unsupported(alloc::format!("{classes} valuation classes (1 to 3 supported)")));
    }
    if stats.is_empty() {
        return Err(Error::InsufficientData(String::from("no reference agents")));
    }
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok((1..classes).map(|j| sorted[((j * n).div_ceil(classes)).clamp(1, n) - 1]).collect())
}

/// Samples `n_samples` fresh agents and returns the class cut points of
/// their 95th-percentile statistics.
pub fn build_class_reference(
    config: &GeneratorConfig,
    n_samples: usize,
    classes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if classes == 0 || classes > MAX_CLASSES {
        return Err(Error::Unsupported(alloc::format!("{classes} valuation classes (1 to 3 supported)")));
    }
    if classes == 1 {
        return Ok(Vec::new());
    }
    let per_instance = config.n_agents();
    let n_instances = n_samples.div_ceil(per_instance);
    let instances = generate_batch(config, seed, "class-reference", n_instances)?;
    let stats: Vec<f64> = instances
        .iter()
        .flat_map(|inst| inst.agents.iter().map(|a| class_statistic(&a.valuation)))
        .take(n_samples)
        .collect();
    class_boundaries(&stats, classes)
}

/// Index of the class whose interval holds the agent's statistic; values on
/// a boundary go to the lower class.
pub fn classify_agent(valuation: &XorValuation, boundaries: &[f64]) -> usize {
    classify_statistic(class_statistic(valuation), boundaries)
}

pub fn classify_statistic(stat: f64, boundaries: &[f64]) -> usize {
    boundaries.iter().filter(|&&b| stat > b).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShaveProfile {
    pub alphas: Vec<f64>,
    pub boundaries: Vec<f64>,
}

impl ShaveProfile {
    pub fn new(alphas: Vec<f64>, boundaries: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() || alphas.len() > MAX_CLASSES || boundaries.len() + 1 != alphas.len() {
            return Err(Error::Domain(String::from("need one shave factor per class and K-1 boundaries")));
        }
        if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Domain(String::from("shave factors must lie in [0, 1]")));
        }
        if boundaries.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Domain(String::from("class boundaries must be sorted")));
        }
        Ok(ShaveProfile { alphas, boundaries })
    }

    pub fn truthful(boundaries: Vec<f64>) -> Self {
        ShaveProfile { alphas: vec![0.0; boundaries.len() + 1], boundaries }
    }

    pub fn classes(&self) -> usize {
        self.alphas.len()
    }

    pub fn class_of(&self, valuation: &XorValuation) -> usize {
        classify_agent(valuation, &self.boundaries)
    }

    pub fn alpha_for(&self, valuation: &XorValuation) -> f64 {
        self.alphas[self.class_of(valuation)]
    }

    /// Every agent's report under the profile.
    pub fn bids(&self, instance: &Instance) -> Vec<XorValuation> {
        instance.agents.iter().map(|a| apply_shave(&a.valuation, self.alpha_for(&a.valuation))).collect()
    }

    pub fn mean_alpha(&self) -> f64 {
        self.alphas.iter().sum::<f64>() / self.alphas.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterationParams {
    pub theta: f64,
    pub kappa: f64,
    pub grid_points: usize,
    pub instances_per_iteration: usize,
    pub max_iterations: usize,
    pub initial_grid: (f64, f64),
    /// Fresh agents sampled to fix the class boundaries.
    pub reference_samples: usize,
    /// Instances used to measure efficiency of the final profile.
    pub eval_instances: usize,
}

impl Default for IterationParams {
    fn default() -> Self {
        IterationParams {
            theta: 0.5,
            kappa: 0.001,
            grid_points: 10,
            instances_per_iteration: 200,
            max_iterations: 100,
            initial_grid: (0.0, 0.9),
            reference_samples: 3000,
            eval_instances: 200,
        }
    }
}

impl IterationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(String::from(m)));
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad("theta must lie in (0, 1)");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        if self.grid_points < 2 {
            return bad("at least two grid points are required");
        }
        if self.instances_per_iteration == 0 || self.max_iterations == 0 || self.eval_instances == 0 {
            return bad("instance and iteration counts must be positive");
        }
        let (lo, hi) = self.initial_grid;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("initial grid must be an interval inside [0, 1]");
        }
        if self.reference_samples == 0 {
            return bad("reference_samples must be positive");
        }
        Ok(())
    }
}

/// `points` equally spaced values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 || hi <= lo {
        return vec![lo];
    }
    (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect()
}

/// Grid centered on `center` with the given half-width, clamped to `[0, 1]`
/// with duplicates removed.
pub fn centered_grid(center: f64, half_width: f64, points: usize) -> Vec<f64> {
    let mut g: Vec<f64> =
        linspace(center - half_width, center + half_width, points).into_iter().map(|a| a.clamp(0.0, 1.0)).collect();
    g.dedup();
    g
}

/// Realized true utility of `agent` when it reports `report` and everybody
/// else reports `bids`.
pub fn deviation_utility(
    instance: &Instance,
    agent: usize,
    bids: &[XorValuation],
    report: XorValuation,
    rule: RuleId,
) -> Result<f64> {
    let mut reports = bids.to_vec();
    reports[agent] = report;
    let out = settle(instance.goods, &reports, rule)?;
    let choice = out.profile.assignment[agent];
    let truth = &instance.agents[agent].valuation;
    Ok(truth.atom_value(choice) - out.payments[agent])
}

/// Grid point maximizing the agent's realized true utility against `bids`;
/// ties go to the smaller shave.
pub fn best_response_alpha(
    instance: &Instance,
    agent: usize,
    bids: &[XorValuation],
    rule: RuleId,
    grid: &[f64],
) -> Result<f64> {
    let truth = &instance.agents[agent].valuation;
    let mut best: Option<(f64, f64)> = None;
    for &alpha in grid {
        let u = deviation_utility(instance, agent, bids, apply_shave(truth, alpha), rule)?;
        match best {
            Some((_, bu)) if u <= bu + UTILITY_TIE => {}
            _ => best = Some((alpha, u)),
        }
    }
    best.map(|(a, _)| a).ok_or_else(|| Error::Domain(String::from("empty best-response grid")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub alpha_hat: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// `|alpha_hat - alpha_bar|` per class.
    pub error: Vec<f64>,
    pub agents: Vec<usize>,
    pub grids: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub rule: RuleId,
    pub profile: ShaveProfile,
    /// Average of the class shave factors, in `[0, 1]`.
    pub mean_shave: f64,
    /// Allocative efficiency of the profile, in `[0, 1]`.
    pub efficiency: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
}

/// Runs the damped best-response iteration for `rule` and measures the
/// efficiency of the resulting profile on fresh instances.
pub fn iterate_equilibrium(
    config: &GeneratorConfig,
    rule: RuleId,
    classes: usize,
    params: &IterationParams,
    seed: u64,
) -> Result<EquilibriumResult> {
    params.validate()?;
    config.validate()?;
    let boundaries =
        build_class_reference(config, params.reference_samples, classes, crate::rng::derive(seed, "classes"))?;
    let mut profile = ShaveProfile::truthful(boundaries);
    let (lo, hi) = params.initial_grid;
    let mut grids = vec![linspace(lo, hi, params.grid_points); classes];
    let mut trace = Vec::new();
    let mut converged = false;

    for t in 0..params.max_iterations {
        let round = crate::rng::derive_indexed(seed, "iteration", t as u64);
        let instances = generate_batch(config, round, "instances", params.instances_per_iteration)?;
        let per_instance: Vec<Result<Vec<(usize, f64)>>> = par::map(&instances, |inst| {
            let bids = profile.bids(inst);
            (0..inst.n_agents())
                .map(|i| {
                    let k = profile.class_of(&inst.agents[i].valuation);
                    best_response_alpha(inst, i, &bids, rule, &grids[k]).map(|a| (k, a))
                })
                .collect()
        });
        let mut sums = vec![0.0; classes];
        let mut counts = vec![0usize; classes];
        for row in per_instance {
            for (k, a) in row? {
                sums[k] += a;
                counts[k] += 1;
            }
        }
        let alpha_hat = profile.alphas.clone();
        let alpha_bar: Vec<f64> =
            (0..classes).map(|k| if counts[k] > 0 { sums[k] / counts[k] as f64 } else { alpha_hat[k] }).collect();
        let error: Vec<f64> = (0..classes).map(|k| math::abs(alpha_hat[k] - alpha_bar[k])).collect();
        trace.push(IterationRecord {
            iteration: t,
            alpha_hat: alpha_hat.clone(),
            alpha_bar: alpha_bar.clone(),
            error: error.clone(),
            agents: counts,
            grids: grids.clone(),
        });
        if error.iter().all(|&e| e < params.kappa) {
            converged = true;
            break;
        }
        for k in 0..classes {
            let next = (params.theta * alpha_hat[k] + (1.0 - params.theta) * alpha_bar[k]).clamp(0.0, 1.0);
            profile.alphas[k] = next;
            grids[k] = centered_grid(next, error[k], params.grid_points);
        }
    }

    let (mean_shave, efficiency) =
        measure_equilibrium(config, &profile, params.eval_instances, crate::rng::derive(seed, "evaluation"))?;
    Ok(EquilibriumResult { rule, profile, mean_shave, efficiency, converged, iterations: trace.len(), trace })
}

/// `V(lambda(bids), truth) / V*(truth)`, or `None` when `V*(truth) = 0`.
pub fn instance_efficiency(instance: &Instance, bids: &[XorValuation]) -> Option<f64> {
    let truth = instance.valuations();
    let (_, best) = efficient_trade_goods(instance.goods, &truth);
    if best <= 0.0 {
        return None;
    }
    let (profile, _) = efficient_trade_goods(instance.goods, bids);
    let realized = crate::market::total_value(&profile, &truth);
    Some(realized / best)
}

/// Mean efficiency over instances with positive optimal surplus.
pub fn mean_efficiency(instances: &[Instance], profile: &ShaveProfile) -> f64 {
    let effs: Vec<Option<f64>> = par::map(instances, |inst| instance_efficiency(inst, &profile.bids(inst)));
    let valid: Vec<f64> = effs.into_iter().flatten().collect();
    if valid.is_empty() {
        1.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    }
}

/// `(mean shave, efficiency)` of a profile, both as fractions.
pub fn measure_equilibrium(
    config: &GeneratorConfig,
    profile: &ShaveProfile,
    n_instances: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let instances = generate_batch(config, seed, "instances", n_instances)?;
    Ok((profile.mean_alpha(), mean_efficiency(&instances, profile)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{generate, Scenario};
    use crate::market::fixtures::{atom, fixture_a};
    use crate::market::Atom;

    fn grid10() -> Vec<f64> {
        linspace(0.0, 0.9, 10)
    }

    #[test]
    fn shaving_arithmetic() {
        let inst = fixture_a();
        let b1 = &inst.agents[1].valuation;
        assert_eq!(apply_shave(b1, 0.0), *b1);
        assert!((apply_shave(b1, 0.3).atoms()[0].value - 7.0).abs() < 1e-12);
        let s1 = &inst.agents[0].valuation;
        assert_eq!(apply_shave(s1, 0.5).atoms()[0].value, -6.0);
        assert_eq!(apply_shave(s1, 0.5).atoms()[0].trade, s1.atoms()[0].trade);
    }

    #[test]
    fn grids() {
        let g = grid10();
        assert_eq!(g.len(), 10);
        assert!((g[1] - 0.1).abs() < 1e-12 && (g[9] - 0.9).abs() < 1e-12);
        let c = centered_grid(0.05, 0.2, 10);
        assert_eq!(c[0], 0.0);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!((c.last().unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(centered_grid(0.3, 0.0, 10), vec![0.3]);
    }

    #[test]
    fn damped_update_formula() {
        let theta: f64 = 0.5;
        assert!((theta * 0.4 + (1.0 - theta) * 0.2 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn tritiles_of_one_to_99() {
        let stats: Vec<f64> = (1..=99).map(f64::from).collect();
        assert_eq!(class_boundaries(&stats, 3).unwrap(), vec![33.0, 66.0]);
        assert_eq!(class_boundaries(&stats, 2).unwrap(), vec![50.0]);
        assert!(class_boundaries(&stats, 1).unwrap().is_empty());
        assert!(matches!(class_boundaries(&stats, 4), Err(Error::Unsupported(_))));
    }

    #[test]
    fn classification_ties_go_low() {
        let b = [33.0, 66.0];
        assert_eq!(classify_statistic(10.0, &b), 0);
        assert_eq!(classify_statistic(33.0, &b), 0);
        assert_eq!(classify_statistic(33.5, &b), 1);
        assert_eq!(classify_statistic(66.0, &b), 1);
        assert_eq!(classify_statistic(70.0, &b), 2);
        assert_eq!(classify_statistic(1e9, &[]), 0);
    }

    #[test]
    fn class_statistic_uses_nearest_rank() {
        let v = XorValuation::new(
            Role::Buyer,
            (1..=20).map(|k| Atom { trade: crate::market::TradeVector::new(vec![k]), value: f64::from(k) }).collect(),
        )
        .unwrap();
        assert_eq!(class_statistic(&v), 19.0);
        let single = XorValuation::new(Role::Seller, vec![atom(&[-1], -4.0)]).unwrap();
        assert_eq!(class_statistic(&single), 4.0);
    }

    #[test]
    fn class_reference_is_deterministic() {
        let cfg = GeneratorConfig::for_scenario(Scenario::Super);
        let a = build_class_reference(&cfg, 300, 3, 9).unwrap();
        let b = build_class_reference(&cfg, 300, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(a[0] <= a[1]);
        assert!(build_class_reference(&cfg, 300, 1, 9).unwrap().is_empty());
    }

    #[test]
    fn fixture_a_no_discount_best_response() {
        let inst = fixture_a();
        let bids = inst.valuations();
        let a = best_response_alpha(&inst, 1, &bids, RuleId::NoDiscount, &grid10()).unwrap();
        assert!((a - 0.5).abs() < 1e-12);
    }

    #[test]
    fn vcg_best_response_is_truthful() {
        let cfg = GeneratorConfig::for_scenario(Scenario::Super);
        for seed in 0..20 {
            let inst = generate(&cfg, seed).unwrap();
            let bids = inst.valuations();
            for i in 0..inst.n_agents() {
                assert_eq!(best_response_alpha(&inst, i, &bids, RuleId::Vcg, &grid10()).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn never_trading_agent_keeps_smallest_point() {
        let inst = crate::market::fixtures::fixture_a_with(3.5);
        // b2 cannot trade: s1 needs both goods sold together
        let a = best_response_alpha(&inst, 2, &inst.valuations(), RuleId::Small, &grid10()).unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn efficiency_examples() {
        let inst = fixture_a();
        let truthful = ShaveProfile::truthful(Vec::new());
        assert_eq!(instance_efficiency(&inst, &truthful.bids(&inst)), Some(1.0));
        let mut bids = inst.valuations();
        bids[1] = apply_shave(&bids[1], 0.7);
        assert_eq!(instance_efficiency(&inst, &bids), Some(0.0));
    }

    #[test]
    fn vcg_converges_immediately() {
        let cfg = GeneratorConfig::for_scenario(Scenario::Decay);
        let params = IterationParams {
            instances_per_iteration: 30,
            eval_instances: 30,
            reference_samples: 300,
            ..Default::default()
        };
        let r = iterate_equilibrium(&cfg, RuleId::Vcg, 2, &params, 4).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!(r.profile.alphas.iter().all(|&a| a == 0.0));
        assert_eq!(r.efficiency, 1.0);
    }

    #[test]
    fn no_discount_shaves_and_stays_bounded() {
        let cfg = GeneratorConfig::for_scenario(Scenario::Uniform);
        let params = IterationParams {
            instances_per_iteration: 40,
            eval_instances: 40,
            reference_samples: 300,
            max_iterations: 15,
            ..Default::default()
        };
        let r = iterate_equilibrium(&cfg, RuleId::NoDiscount, 1, &params, 1).unwrap();
        assert!(r.mean_shave > 0.05);
        assert!(r.efficiency <= 1.0 + 1e-9);
        let again = iterate_equilibrium(&cfg, RuleId::NoDiscount, 1, &params, 1).unwrap();
        assert_eq!(r, again);
        for w in r.trace.windows(2) {
            assert_eq!(w[1].alpha_hat[0], 0.5 * w[0].alpha_hat[0] + 0.5 * w[0].alpha_bar[0]);
        }
    }

    #[test]
    fn profile_validation() {
        assert!(ShaveProfile::new(vec![0.1, 0.2], vec![1.0]).is_ok());
        assert!(ShaveProfile::new(vec![0.1, 1.2], vec![1.0]).is_err());
        assert!(ShaveProfile::new(vec![0.1], vec![1.0]).is_err());
        assert!(ShaveProfile::new(vec![0.1, 0.2, 0.3], vec![2.0, 1.0]).is_err());
    }
}
