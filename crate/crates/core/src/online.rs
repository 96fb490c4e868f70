//! Epoch-based online mechanism selection.
//!
//! Each epoch deploys one rule, with every agent bidding according to that
//! rule's equilibrium shave profile. The selector sees only bids, the
//! resulting trades and payments. It scores every candidate rule on the data
//! gathered under the deployed rule, using the VCG discounts of the bids as
//! the reference, and switches to the best. When recommendations form a
//! cycle, all rules in the cycle are scored on their pooled data.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{instance_efficiency, iterate_equilibrium, EquilibriumResult, IterationParams};
use crate::generators::{generate_batch, GeneratorConfig};
use crate::metrics::{evaluate_metric, Metric, MetricConfig};
use crate::payment::RuleId;
use crate::wd::WdResult;
use crate::{par, Error, Result};

/// The seven balanced rules and No Discount, in tie-breaking order.
pub const CANDIDATES: [RuleId; 8] = [
    RuleId::NoDiscount,
    RuleId::Equal,
    RuleId::Fractional,
    RuleId::Small,
    RuleId::Large,
    RuleId::Threshold,
    RuleId::Reverse,
    RuleId::TwoTriangle,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    pub metric: Metric,
    pub epochs: usize,
    pub epoch_size: usize,
    pub classes: usize,
    pub start: RuleId,
    pub candidates: Vec<RuleId>,
    pub equilibrium: IterationParams,
    pub metrics: MetricConfig,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            metric: Metric::KlNorm,
            epochs: 20,
            epoch_size: 100,
            classes: 1,
            start: RuleId::NoDiscount,
            candidates: CANDIDATES.to_vec(),
            equilibrium: IterationParams::default(),
            metrics: MetricConfig::default(),
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if !Metric::NORMALIZED.contains(&self.metric) {
            return Err(Error::Config(alloc::format!(
                "online selection needs a normalized metric, got {}",
                self.metric
            )));
        }
        if self.epoch_size == 0 {
            return Err(Error::Config(String::from("epoch size must be positive")));
        }
        if self.candidates.is_empty() || self.candidates.contains(&RuleId::Vcg) {
            return Err(Error::Config(String::from("candidates must be nonempty and exclude VCG")));
        }
        self.equilibrium.validate()
    }
}

/// What the selector observes in one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rule: RuleId,
    /// Winner determination on the equilibrium bids of each instance.
    pub observed: Vec<WdResult>,
}

/// Equilibrium profiles keyed by (rule, classes, seed), computed on first
/// use. One cache should serve a single generator configuration.
#[derive(Debug, Clone, Default)]
pub struct EquilibriumCache {
    entries: BTreeMap<(RuleId, usize, u64), EquilibriumResult>,
}

impl EquilibriumCache {
    pub fn get_or_compute(
        &mut self,
        config: &GeneratorConfig,
        rule: RuleId,
        classes: usize,
        params: &IterationParams,
        seed: u64,
    ) -> Result<&EquilibriumResult> {
        let key = (rule, classes, seed);
        match self.entries.entry(key) {
            alloc::collections::btree_map::Entry::Occupied(e) => Ok(e.into_mut()),
            alloc::collections::btree_map::Entry::Vacant(e) => {
                let s = crate::rng::derive(seed, rule.name());
                Ok(e.insert(iterate_equilibrium(config, rule, classes, params, s)?))
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Runs one epoch of `rule` on the given instances.
pub fn run_epoch(
    epoch: usize,
    rule: RuleId,
    instances: &[crate::market::Instance],
    eq: &EquilibriumResult,
) -> EpochRecord {
    let observed = par::map(instances, |inst| WdResult::solve(inst, &eq.profile.bids(inst)));
    EpochRecord { epoch, rule, observed }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectorState {
    /// Observations accumulated under each deployed rule.
    pub history: BTreeMap<RuleId, Vec<WdResult>>,
    pub visits: Vec<RuleId>,
    /// Latest recommendation derived from each rule's own data.
    pub recommendations: BTreeMap<RuleId, RuleId>,
}

impl SelectorState {
    pub fn record(&mut self, epoch: EpochRecord) {
        self.visits.push(epoch.rule);
        self.history.entry(epoch.rule).or_default().extend(epoch.observed);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub next: RuleId,
    /// Candidate scores on the current rule's data, in candidate order.
    pub scores: Vec<(RuleId, f64)>,
    /// Rules whose pooled data settled a cycle, if one was found.
    pub cycle: Vec<RuleId>,
}

fn argmin(scores: &[(RuleId, f64)]) -> RuleId {
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 < best.1 {
            best = s;
        }
    }
    best.0
}

fn score(
    data: &[WdResult],
    candidates: &[RuleId],
    metric: Metric,
    config: &MetricConfig,
) -> Result<Vec<(RuleId, f64)>> {
    candidates.iter().map(|&c| Ok((c, evaluate_metric(data, c, metric, config)?.value))).collect()
}

/// Picks the next rule from the data of `current`, breaking recommendation
/// cycles on pooled data.
pub fn evaluate_and_select(
    state: &mut SelectorState,
    current: RuleId,
    candidates: &[RuleId],
    metric: Metric,
    config: &MetricConfig,
) -> Result<Selection> {
    let data = state
        .history
        .get(&current)
        .ok_or_else(|| Error::InsufficientData(alloc::format!("no epochs recorded under {current}")))?;
    let scores = if candidates.len() == 1 {
        alloc::vec![(candidates[0], 0.0)]
    } else {
        score(data, candidates, metric, config)?
    };
    let rec = argmin(&scores);
    state.recommendations.insert(current, rec);

    // follow earlier recommendations from `rec`; returning to the path is a cycle
    let mut path = alloc::vec![current];
    let mut x = rec;
    while x != current && !path.contains(&x) {
        path.push(x);
        match state.recommendations.get(&x) {
            Some(&y) if state.history.contains_key(&x) => x = y,
            _ => return Ok(Selection { next: rec, scores, cycle: Vec::new() }),
        }
    }
    let start = path.iter().position(|&r| r == x).expect("cycle closes on the path");
    let mut cycle: Vec<RuleId> = path[start..].to_vec();
    if cycle.len() < 2 {
        return Ok(Selection { next: rec, scores, cycle: Vec::new() });
    }
    cycle.sort_by_key(|r| candidates.iter().position(|c| c == r));
    let pooled: Vec<WdResult> =
        cycle.iter().filter_map(|r| state.history.get(r)).flat_map(|d| d.iter().cloned()).collect();
    let next = argmin(&score(&pooled, &cycle, metric, config)?);
    Ok(Selection { next, scores, cycle })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub rule: RuleId,
    /// Efficiency of the deployed rule over Small's efficiency on the same instances.
    pub efficiency_fraction: f64,
    pub next: RuleId,
    pub cycle: Vec<RuleId>,
    pub scores: Vec<(RuleId, f64)>,
}

/// Runs the selection loop from `config.start` for `config.epochs` epochs.
pub fn run_online_search(
    generator: &GeneratorConfig,
    config: &OnlineConfig,
    seed: u64,
    cache: &mut EquilibriumCache,
) -> Result<Vec<EpochSummary>> {
    config.validate()?;
    let eq_seed = crate::rng::derive(seed, "equilibria");
    let mut state = SelectorState::default();
    let mut current = config.start;
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let instances = generate_batch(
            generator,
            crate::rng::derive_indexed(seed, "epoch", epoch as u64),
            "instances",
            config.epoch_size,
        )?;
        let small = cache
            .get_or_compute(generator, RuleId::Small, config.classes, &config.equilibrium, eq_seed)?
            .profile
            .clone();
        let eq = cache.get_or_compute(generator, current, config.classes, &config.equilibrium, eq_seed)?;
        let deployed = mean_of(&par::map(&instances, |inst| instance_efficiency(inst, &eq.profile.bids(inst))));
        let reference = mean_of(&par::map(&instances, |inst| instance_efficiency(inst, &small.bids(inst))));
        let record = run_epoch(epoch, current, &instances, eq);
        state.record(record);
        let sel = evaluate_and_select(&mut state, current, &config.candidates, config.metric, &config.metrics)?;
        trace.push(EpochSummary {
            epoch,
            rule: current,
            efficiency_fraction: if reference > 0.0 { deployed / reference } else { 1.0 },
            next: sel.next,
            cycle: sel.cycle,
            scores: sel.scores,
        });
        current = sel.next;
    }
    Ok(trace)
}

fn mean_of(values: &[Option<f64>]) -> f64 {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        1.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
