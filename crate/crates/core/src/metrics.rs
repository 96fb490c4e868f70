//! Payoff distributions and the distance metrics between a mechanism and the
//! VCG reference.
//!
//! Payoffs are discounts: with quasi-linear utility an agent's payoff at its
//! reported values is `v_i(lambda*) - p_i = discount_i`. Only agents active in
//! the efficient trade of the evaluated reports contribute, and instances with
//! zero surplus are skipped.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::market::{Instance, XorValuation};
use crate::math;
use crate::payment::{allocate_discounts, RuleId};
use crate::wd::WdResult;
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffSample {
    pub instance: usize,
    pub agent: usize,
    pub payoff: f64,
    /// `payoff / V*`; absent when `V* = 0`.
    pub normalized: Option<f64>,
    pub active: bool,
}

/// Solves every instance under its reports.
pub fn solve_all(instances: &[Instance], reports: &[Vec<XorValuation>]) -> Vec<WdResult> {
    let pairs: Vec<(&Instance, &Vec<XorValuation>)> = instances.iter().zip(reports).collect();
    par::map(&pairs, |(inst, r)| WdResult::solve(inst, r))
}

pub fn collect_payoffs(
    instances: &[Instance],
    reports: &[Vec<XorValuation>],
    rule: RuleId,
) -> Result<Vec<PayoffSample>> {
    if instances.len() != reports.len() {
        return Err(Error::Domain(String::from("one report profile per instance is required")));
    }
    payoffs_from_solved(&solve_all(instances, reports), rule)
}

/// Per-agent payoffs of the active agents under `rule`.
pub fn payoffs_from_solved(solved: &[WdResult], rule: RuleId) -> Result<Vec<PayoffSample>> {
    let mut out = Vec::new();
    for (k, wd) in solved.iter().enumerate() {
        if wd.surplus <= 0.0 {
            continue;
        }
        let trading = wd.trading();
        let alloc = allocate_discounts(rule, &wd.vcg_discounts, &trading, wd.surplus)?;
        for (i, &active) in trading.iter().enumerate() {
            if active {
                let payoff = alloc.discounts[i];
                out.push(PayoffSample { instance: k, agent: i, payoff, normalized: Some(payoff / wd.surplus), active });
            }
        }
    }
    Ok(out)
}

/// Binned, additively smoothed histogram over `[lo, hi]` plus one overflow
/// bin for values above `hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub edges: Vec<f64>,
    /// One entry per regular bin followed by the overflow bin.
    pub probabilities: Vec<f64>,
    pub smoothing: f64,
    pub samples: usize,
}

impl EmpiricalDistribution {
    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }
}

/// Histogram on `[0, 1]` (normalized payoffs).
pub fn build_histogram(values: &[f64], n_bins: usize, smoothing: f64) -> Result<EmpiricalDistribution> {
    build_histogram_on(values, 0.0, 1.0, n_bins, smoothing)
}

pub fn build_histogram_on(
    values: &[f64],
    lo: f64,
    hi: f64,
    n_bins: usize,
    smoothing: f64,
) -> Result<EmpiricalDistribution> {
    if n_bins < 2 {
        return Err(Error::Domain(String::from("at least two bins are required")));
    }
    if !(smoothing > 0.0) {
        return Err(Error::Domain(String::from("smoothing pseudo-count must be positive")));
    }
    if !(hi > lo) {
        return Err(Error::Domain(String::from("empty histogram range")));
    }
    if values.is_empty() {
        return Err(Error::InsufficientData(String::from("no samples to bin")));
    }
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|b| lo + width * b as f64).collect();
    let mut counts = vec![0usize; n_bins + 1];
    for &x in values {
        let bin = if x > hi {
            n_bins
        } else if x <= lo {
            0
        } else {
            (math::floor((x - lo) / width) as usize).min(n_bins - 1)
        };
        counts[bin] += 1;
    }
    let total = values.len() as f64 + smoothing * (n_bins + 1) as f64;
    let probabilities = counts.iter().map(|&c| (c as f64 + smoothing) / total).collect();
    Ok(EmpiricalDistribution { edges, probabilities, smoothing, samples: values.len() })
}

/// `sum_b ref(b) ln(ref(b) / other(b))`, natural log.
pub fn kl_divergence(reference: &EmpiricalDistribution, other: &EmpiricalDistribution) -> Result<f64> {
    if reference.edges != other.edges || reference.smoothing != other.smoothing {
        return Err(Error::BinningMismatch);
    }
    Ok(reference
        .probabilities
        .iter()
        .zip(&other.probabilities)
        .map(|(&p, &q)| p * math::ln(p / q))
        .sum::<f64>()
        .max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub n_bins: usize,
    pub pseudo_count: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { n_bins: 50, pseudo_count: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "KLnorm")]
    KlNorm,
    #[serde(rename = "KL")]
    Kl,
    L1,
    #[serde(rename = "L1norm")]
    L1Norm,
    L2,
    #[serde(rename = "L2norm")]
    L2Norm,
    Linf,
    #[serde(rename = "Linfnorm")]
    LinfNorm,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::KlNorm,
        Metric::Kl,
        Metric::L1,
        Metric::L1Norm,
        Metric::L2,
        Metric::L2Norm,
        Metric::Linf,
        Metric::LinfNorm,
    ];

    /// The four normalized metrics reported in the correlation tables.
    pub const NORMALIZED: [Metric; 4] = [Metric::KlNorm, Metric::L1Norm, Metric::L2Norm, Metric::LinfNorm];

    pub fn name(self) -> &'static str {
        match self {
            Metric::KlNorm => "KLnorm",
            Metric::Kl => "KL",
            Metric::L1 => "L1",
            Metric::L1Norm => "L1norm",
            Metric::L2 => "L2",
            Metric::L2Norm => "L2norm",
            Metric::Linf => "Linf",
            Metric::LinfNorm => "Linfnorm",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Metric::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::Config(alloc::format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpNorm {
    L1,
    L2,
    Inf,
}

impl LpNorm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| math::abs(x - y));
        match self {
            LpNorm::L1 => diffs.sum(),
            LpNorm::L2 => math::sqrt(diffs.map(|d| d * d).sum()),
            LpNorm::Inf => diffs.fold(0.0, f64::max),
        }
    }
}

/// Reference and mechanism payoffs of the active agents in one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffPair {
    pub reference: Vec<f64>,
    pub mechanism: Vec<f64>,
    pub surplus: f64,
}

/// Mean over instances of the Lp distance between reference and mechanism
/// payoff vectors, each divided by `V*` when `normalized`.
pub fn lp_metric(norm: LpNorm, normalized: bool, pairs: &[PayoffPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = pairs
        .iter()
        .map(|p| {
            let d = norm.distance(&p.reference, &p.mechanism);
            if normalized {
                d / p.surplus
            } else {
                d
            }
        })
        .sum();
    total / pairs.len() as f64
}

/// KL divergence between the normalized-payoff histograms on `[0, 1]`.
pub fn klnorm_metric(reference: &[PayoffSample], mechanism: &[PayoffSample], config: &MetricConfig) -> Result<f64> {
    let r: Vec<f64> = reference.iter().filter_map(|s| s.normalized).collect();
    let m: Vec<f64> = mechanism.iter().filter_map(|s| s.normalized).collect();
    kl_on(&r, &m, 0.0, 1.0, config)
}

/// KL divergence between raw-payoff histograms on the pooled range.
pub fn kl_metric(reference: &[PayoffSample], mechanism: &[PayoffSample], config: &MetricConfig) -> Result<f64> {
    let r: Vec<f64> = reference.iter().map(|s| s.payoff).collect();
    let m: Vec<f64> = mechanism.iter().map(|s| s.payoff).collect();
    let hi = r.iter().chain(&m).copied().fold(0.0, f64::max);
    kl_on(&r, &m, 0.0, if hi > 0.0 { hi } else { 1.0 }, config)
}

fn kl_on(reference: &[f64], mechanism: &[f64], lo: f64, hi: f64, config: &MetricConfig) -> Result<f64> {
    let hr = build_histogram_on(reference, lo, hi, config.n_bins, config.pseudo_count)?;
    let hm = build_histogram_on(mechanism, lo, hi, config.n_bins, config.pseudo_count)?;
    kl_divergence(&hr, &hm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rule: RuleId,
    pub metric: Metric,
    pub value: f64,
    pub reference_samples: usize,
    pub mechanism_samples: usize,
}

/// Reference (VCG) and rule payoff pairs, one per instance with positive
/// surplus.
pub fn payoff_pairs(solved: &[WdResult], rule: RuleId) -> Result<Vec<PayoffPair>> {
    let mut out = Vec::new();
    for wd in solved {
        if wd.surplus <= 0.0 {
            continue;
        }
        let trading = wd.trading();
        let alloc = allocate_discounts(rule, &wd.vcg_discounts, &trading, wd.surplus)?;
        let active: Vec<usize> = (0..trading.len()).filter(|&i| trading[i]).collect();
        out.push(PayoffPair {
            reference: active.iter().map(|&i| wd.vcg_discounts[i]).collect(),
            mechanism: active.iter().map(|&i| alloc.discounts[i]).collect(),
            surplus: wd.surplus,
        });
    }
    Ok(out)
}

/// Evaluates one metric for `rule` against the VCG reference on solved
/// instances.
pub fn evaluate_metric(
    solved: &[WdResult],
    rule: RuleId,
    metric: Metric,
    config: &MetricConfig,
) -> Result<MetricReport> {
    let reference = payoffs_from_solved(solved, RuleId::Vcg)?;
    let mechanism = payoffs_from_solved(solved, rule)?;
    let value = metric_value(solved, &reference, &mechanism, rule, metric, config)?;
    Ok(MetricReport { rule, metric, value, reference_samples: reference.len(), mechanism_samples: mechanism.len() })
}

/// All eight metrics for `rule`, in [`Metric::ALL`] order.
pub fn evaluate_all(solved: &[WdResult], rule: RuleId, config: &MetricConfig) -> Result<Vec<MetricReport>> {
    let reference = payoffs_from_solved(solved, RuleId::Vcg)?;
    let mechanism = payoffs_from_solved(solved, rule)?;
    Metric::ALL
        .iter()
        .map(|&metric| {
            let value = metric_value(solved, &reference, &mechanism, rule, metric, config)?;
            Ok(MetricReport {
                rule,
                metric,
                value,
                reference_samples: reference.len(),
                mechanism_samples: mechanism.len(),
            })
        })
        .collect()
}

fn metric_value(
    solved: &[WdResult],
    reference: &[PayoffSample],
    mechanism: &[PayoffSample],
    rule: RuleId,
    metric: Metric,
    config: &MetricConfig,
) -> Result<f64> {
    let lp = |norm, normalized| -> Result<f64> { Ok(lp_metric(norm, normalized, &payoff_pairs(solved, rule)?)) };
    match metric {
        Metric::KlNorm => klnorm_metric(reference, mechanism, config),
        Metric::Kl => kl_metric(reference, mechanism, config),
        Metric::L1 => lp(LpNorm::L1, false),
        Metric::L1Norm => lp(LpNorm::L1, true),
        Metric::L2 => lp(LpNorm::L2, false),
        Metric::L2Norm => lp(LpNorm::L2, true),
        Metric::Linf => lp(LpNorm::Inf, false),
        Metric::LinfNorm => lp(LpNorm::Inf, true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures::fixture_a;

    #[test]
    fn fixture_a_vcg_samples() {
        let inst = fixture_a();
        let s = collect_payoffs(core::slice::from_ref(&inst), &[inst.valuations()], RuleId::Vcg).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].agent, s[0].normalized), (0, Some(1.0)));
        assert_eq!((s[1].agent, s[1].normalized), (1, Some(1.0)));
        let nd = collect_payoffs(core::slice::from_ref(&inst), &[inst.valuations()], RuleId::NoDiscount).unwrap();
        assert!(nd.iter().all(|s| s.payoff == 0.0));
        assert!(collect_payoffs(&[], &[], RuleId::Small).unwrap().is_empty());
    }

    #[test]
    fn point_mass_histogram() {
        let h = build_histogram(&[0.5; 10], 2, 1e-9).unwrap();
        assert!(h.probabilities[0] < 1e-9);
        assert!((h.probabilities[1] - 1.0).abs() < 1e-9);
        assert!(h.probabilities[2] < 1e-9);
        let h = build_histogram(&[0.5; 10], 2, 0.5).unwrap();
        assert!(h.probabilities.iter().all(|&p| p > 0.0));
        assert!((h.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_edges_and_overflow() {
        let h = build_histogram(&[0.0, 1.0, 1.5], 4, 1.0).unwrap();
        assert_eq!(h.edges, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        // 0 -> first bin, 1 -> last regular bin, 1.5 -> overflow
        let total = 3.0 + 5.0;
        assert_eq!(h.probabilities, vec![2.0 / total, 1.0 / total, 1.0 / total, 2.0 / total, 2.0 / total]);
    }

    #[test]
    fn histogram_errors() {
        assert!(build_histogram(&[], 10, 1.0).is_err());
        assert!(build_histogram(&[0.1], 1, 1.0).is_err());
        assert!(build_histogram(&[0.1], 10, 0.0).is_err());
    }

    #[test]
    fn uniform_samples_fill_bins_evenly() {
        use rand::Rng as _;
        let mut rng = crate::rng::from_seed(1);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.gen::<f64>()).collect();
        let h = build_histogram(&xs, 10, 1e-6).unwrap();
        for p in &h.probabilities[..10] {
            assert!((p - 0.1).abs() < 0.01);
        }
    }

    #[test]
    fn kl_basics() {
        let a = build_histogram(&[0.1, 0.2, 0.7], 2, 1.0).unwrap();
        assert_eq!(kl_divergence(&a, &a).unwrap(), 0.0);
        let b = build_histogram(&[0.9, 0.95, 0.99], 2, 1.0).unwrap();
        assert!(kl_divergence(&a, &b).unwrap() > 0.0);
        let c = build_histogram(&[0.1], 3, 1.0).unwrap();
        assert_eq!(kl_divergence(&a, &c), Err(Error::BinningMismatch));
        let d = build_histogram(&[0.1], 2, 2.0).unwrap();
        assert_eq!(kl_divergence(&a, &d), Err(Error::BinningMismatch));
    }

    #[test]
    fn kl_grows_as_smoothing_shrinks() {
        let spread: Vec<f64> = (0..200).map(|k| k as f64 / 200.0).collect();
        let point = vec![0.0; 200];
        let mut last = 0.0;
        for eps in [1.0, 0.1, 0.01] {
            let r = build_histogram(&spread, 50, eps).unwrap();
            let m = build_histogram(&point, 50, eps).unwrap();
            let kl = kl_divergence(&r, &m).unwrap();
            assert!(kl.is_finite() && kl > last);
            last = kl;
        }
    }

    #[test]
    fn fixture_a_lp_distances() {
        let inst = fixture_a();
        let solved = solve_all(core::slice::from_ref(&inst), &[inst.valuations()]);
        let pairs = payoff_pairs(&solved, RuleId::Equal).unwrap();
        assert_eq!(pairs[0].reference, vec![6.0, 6.0]);
        assert_eq!(pairs[0].mechanism, vec![3.0, 3.0]);
        assert_eq!(lp_metric(LpNorm::L1, true, &pairs), 1.0);
        assert_eq!(lp_metric(LpNorm::Inf, true, &pairs), 0.5);
        assert_eq!(lp_metric(LpNorm::L1, false, &pairs), 6.0);
        let same = payoff_pairs(&solved, RuleId::Vcg).unwrap();
        assert_eq!(lp_metric(LpNorm::L2, true, &same), 0.0);
    }

    #[test]
    fn vcg_against_itself_is_zero() {
        let inst = fixture_a();
        let solved = solve_all(core::slice::from_ref(&inst), &[inst.valuations()]);
        for r in evaluate_all(&solved, RuleId::Vcg, &MetricConfig::default()).unwrap() {
            assert_eq!(r.value, 0.0, "{}", r.metric);
        }
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
    }
}
