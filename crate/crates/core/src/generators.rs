//! Random exchange instances under the Decay, Uniform and Super scenarios.
//!
//! Goods are first dealt to sellers as endowments and to buyers as demand
//! sets; each agent then receives XOR atoms over subsets of its set. Sellers
//! carry negative reserve values, buyers positive values.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::market::{Agent, Atom, Instance, Role, TradeVector, XorValuation};
use crate::math;
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Decay,
    Uniform,
    Super,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Decay, Scenario::Uniform, Scenario::Super];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Decay => "decay",
            Scenario::Uniform => "uniform",
            Scenario::Super => "super",
        }
    }
}

impl core::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "decay" => Ok(Scenario::Decay),
            "uniform" => Ok(Scenario::Uniform),
            "super" => Ok(Scenario::Super),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

impl core::fmt::Display for Scenario {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    pub const UNIT: ValueRange = ValueRange { lo: 0.0, hi: 1.0 };

    fn sample(&self, rng: &mut Rng) -> f64 {
        self.lo + (self.hi - self.lo) * rng.gen::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub scenario: Scenario,
    pub n_goods: usize,
    pub n_buyers: usize,
    pub n_sellers: usize,
    pub atoms_per_agent: usize,
    /// Goods per seller endowment and per buyer demand set.
    pub endowment_size: usize,
    /// Range of the common per-good value `c(g)` (Super).
    pub common_value: ValueRange,
    /// Range of the private per-good value `y_i(g)` (Super).
    pub private_value: ValueRange,
    /// Weight of the private value in `w_i(g)` (Super).
    pub beta: f64,
    /// Exponent applied to bundle weight sums (Super).
    pub gamma: f64,
    /// Probability of growing a Decay bundle by one more good.
    pub decay_prob: f64,
    /// Per-good value cap for Decay and Uniform.
    pub v_max: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::for_scenario(Scenario::Super)
    }
}

impl GeneratorConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        GeneratorConfig {
            scenario,
            n_goods: 4,
            n_buyers: 3,
            n_sellers: 3,
            atoms_per_agent: 2,
            endowment_size: 2,
            common_value: ValueRange::UNIT,
            private_value: ValueRange::UNIT,
            beta: 0.5,
            gamma: 1.5,
            decay_prob: 0.75,
            v_max: 1.0,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_buyers + self.n_sellers
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_goods", self.n_goods),
            ("n_buyers", self.n_buyers),
            ("n_sellers", self.n_sellers),
            ("atoms_per_agent", self.atoms_per_agent),
            ("endowment_size", self.endowment_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.endowment_size > self.n_goods {
            return Err(Error::Config(String::from("endowment_size exceeds n_goods")));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(String::from("beta must lie in [0, 1]")));
        }
        if !(self.gamma > 1.0) || !self.gamma.is_finite() {
            return Err(Error::Config(String::from("gamma must exceed 1")));
        }
        if !(0.0..1.0).contains(&self.decay_prob) {
            return Err(Error::Config(String::from("decay_prob must lie in [0, 1)")));
        }
        if !(self.v_max > 0.0) || !self.v_max.is_finite() {
            return Err(Error::Config(String::from("v_max must be positive")));
        }
        for (name, r) in [("common_value", self.common_value), ("private_value", self.private_value)] {
            if !(r.lo >= 0.0 && r.hi > r.lo && r.hi.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonempty nonnegative range")));
            }
        }
        Ok(())
    }
}

/// Dispatches on `config.scenario`.
pub fn generate(config: &GeneratorConfig, seed: u64) -> Result<Instance> {
    match config.scenario {
        Scenario::Super => gen_super(config, seed),
        Scenario::Decay => gen_decay(config, seed),
        Scenario::Uniform => gen_uniform(config, seed),
    }
}

/// `count` instances seeded from the named stream `stream` under `root`.
pub fn generate_batch(config: &GeneratorConfig, root: u64, stream: &str, count: usize) -> Result<Vec<Instance>> {
    config.validate()?;
    let seeds: Vec<u64> = (0..count as u64).map(|k| crate::rng::derive_indexed(root, stream, k)).collect();
    crate::par::map(&seeds, |&s| generate(config, s)).into_iter().collect()
}

/// `w_i(g) = beta * y_i(g) + (1 - beta) * c(g)`.
pub fn blended_weight(beta: f64, private: f64, common: f64) -> f64 {
    beta * private + (1.0 - beta) * common
}

/// Magnitude of a Super bundle value, `(sum of weights)^gamma`.
pub fn super_bundle_magnitude(weights: &[f64], gamma: f64) -> f64 {
    math::powf(weights.iter().sum::<f64>(), gamma)
}

pub fn gen_super(config: &GeneratorConfig, seed: u64) -> Result<Instance> {
    expect_scenario(config, Scenario::Super)?;
    build(config, seed, |ctx, rng, set| {
        let weights: Vec<f64> =
            set.iter().map(|&g| blended_weight(ctx.beta, ctx.private_value.sample(rng), ctx.common[g])).collect();
        let mut bundles: Vec<Vec<usize>> = Vec::new();
        bundles.push((0..set.len()).collect());
        fill_distinct(&mut bundles, ctx.atoms_per_agent, set.len(), rng, random_subset);
        bundles
            .into_iter()
            .map(|b| {
                let w: Vec<f64> = b.iter().map(|&k| weights[k]).collect();
                (b.iter().map(|&k| set[k]).collect(), super_bundle_magnitude(&w, ctx.gamma))
            })
            .collect()
    })
}

pub fn gen_decay(config: &GeneratorConfig, seed: u64) -> Result<Instance> {
    expect_scenario(config, Scenario::Decay)?;
    build(config, seed, |ctx, rng, set| {
        let mut bundles: Vec<Vec<usize>> = Vec::new();
        let p = ctx.decay_prob;
        fill_distinct(&mut bundles, ctx.atoms_per_agent, set.len(), rng, |rng, n| decay_bundle(rng, n, p));
        bundles
            .into_iter()
            .map(|b| {
                let value: f64 = b.iter().map(|_| positive_uniform(rng, ctx.v_max)).sum();
                (b.iter().map(|&k| set[k]).collect(), value)
            })
            .collect()
    })
}

pub fn gen_uniform(config: &GeneratorConfig, seed: u64) -> Result<Instance> {
    expect_scenario(config, Scenario::Uniform)?;
    build(config, seed, |ctx, rng, set| {
        let mut bundles: Vec<Vec<usize>> = Vec::new();
        fill_distinct(&mut bundles, ctx.atoms_per_agent, set.len(), rng, uniform_bundle);
        bundles
            .into_iter()
            .map(|b| {
                let value = positive_uniform(rng, b.len() as f64 * ctx.v_max);
                (b.iter().map(|&k| set[k]).collect(), value)
            })
            .collect()
    })
}

fn expect_scenario(config: &GeneratorConfig, scenario: Scenario) -> Result<()> {
    config.validate()?;
    if config.scenario != scenario {
        return Err(Error::Config(format!("generator `{scenario}` called with a `{}` config", config.scenario)));
    }
    Ok(())
}

struct Context {
    common: Vec<f64>,
    private_value: ValueRange,
    beta: f64,
    gamma: f64,
    decay_prob: f64,
    v_max: f64,
    atoms_per_agent: usize,
}

/// Shared skeleton: deal goods, then ask `bundles_for` for (goods, |value|)
/// pairs per agent. Sellers come first in id order.
fn build<F>(config: &GeneratorConfig, seed: u64, mut bundles_for: F) -> Result<Instance>
where
    F: FnMut(&Context, &mut Rng, &[usize]) -> Vec<(Vec<usize>, f64)>,
{
    let mut rng = rng::from_seed(seed);
    let k = config.n_goods;
    let endowments = deal(&mut rng, k, config.n_sellers, config.endowment_size);
    let demands = deal(&mut rng, k, config.n_buyers, config.endowment_size);
    let common: Vec<f64> = (0..k).map(|_| config.common_value.sample(&mut rng)).collect();
    let ctx = Context {
        common,
        private_value: config.private_value,
        beta: config.beta,
        gamma: config.gamma,
        decay_prob: config.decay_prob,
        v_max: config.v_max,
        atoms_per_agent: config.atoms_per_agent,
    };

    let mut agents = Vec::with_capacity(config.n_agents());
    let roles = endowments.into_iter().map(|s| (Role::Seller, s)).chain(demands.into_iter().map(|s| (Role::Buyer, s)));
    for (id, (role, set)) in roles.enumerate() {
        let (sign, unit) = match role {
            Role::Seller => (-1.0, -1),
            Role::Buyer => (1.0, 1),
        };
        let atoms = bundles_for(&ctx, &mut rng, &set)
            .into_iter()
            .map(|(goods, magnitude)| {
                let mut q = alloc::vec![0i32; k];
                for g in goods {
                    q[g] = unit;
                }
                Atom { trade: TradeVector::new(q), value: sign * magnitude }
            })
            .collect();
        let mut demand_set = set;
        demand_set.sort_unstable();
        agents.push(Agent { id, valuation: XorValuation::new(role, atoms)?, demand_set });
    }
    Instance::new(k, agents, seed, String::from(config.scenario.name()))
}

/// Deals `per_agent` distinct goods to each of `n_agents`, cycling through a
/// random permutation so that every good is covered once enough slots exist.
fn deal(rng: &mut Rng, goods: usize, n_agents: usize, per_agent: usize) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..goods).collect();
    perm.shuffle(rng);
    (0..n_agents).map(|a| (0..per_agent).map(|j| perm[(a * per_agent + j) % goods]).collect()).collect()
}

/// Appends distinct bundles (as positions into the agent's set) drawn from
/// `draw` until `target` are present or the attempt budget runs out.
fn fill_distinct<D>(bundles: &mut Vec<Vec<usize>>, target: usize, set_len: usize, rng: &mut Rng, mut draw: D)
where
    D: FnMut(&mut Rng, usize) -> Vec<usize>,
{
    let possible = if set_len >= 63 { usize::MAX } else { (1usize << set_len) - 1 };
    let target = target.min(possible);
    let mut attempts = 64 * target.max(1);
    while bundles.len() < target && attempts > 0 {
        attempts -= 1;
        let mut b = draw(rng, set_len);
        b.sort_unstable();
        if !bundles.contains(&b) {
            bundles.push(b);
        }
    }
}

/// Nonempty subset with each element kept with probability one half.
fn random_subset(rng: &mut Rng, n: usize) -> Vec<usize> {
    loop {
        let s: Vec<usize> = (0..n).filter(|_| rng.gen::<bool>()).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

/// Start from one good and keep adding another with probability `p`.
pub(crate) fn decay_bundle(rng: &mut Rng, n: usize, p: f64) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut bundle = Vec::new();
    bundle.push(remaining.swap_remove(rng.gen_range(0..remaining.len())));
    while !remaining.is_empty() && rng.gen::<f64>() < p {
        bundle.push(remaining.swap_remove(rng.gen_range(0..remaining.len())));
    }
    bundle
}

/// Bundle size uniform on `1..=n`, then a uniformly random subset of that size.
pub(crate) fn uniform_bundle(rng: &mut Rng, n: usize) -> Vec<usize> {
    let size = rng.gen_range(1..=n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(size);
    idx
}

/// Uniform on `(0, hi]`, so generated values are never exactly zero.
fn positive_uniform(rng: &mut Rng, hi: f64) -> f64 {
    hi * (1.0 - rng.gen::<f64>())
}
