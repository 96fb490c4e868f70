//! Goods, trades, XOR valuations and exchange instances.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Buyer,
    Seller,
}

/// Integer quantity per good; positive entries are units received by the
/// agent, negative entries units given up.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TradeVector(Vec<i32>);

impl TradeVector {
    pub fn new(quantities: Vec<i32>) -> Self {
        TradeVector(quantities)
    }

    pub fn null(goods: usize) -> Self {
        TradeVector(vec![0; goods])
    }

    pub fn quantities(&self) -> &[i32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_null(&self) -> bool {
        self.0.iter().all(|&q| q == 0)
    }

    /// Goods with a nonzero entry.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &q)| q != 0).map(|(g, _)| g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub trade: TradeVector,
    pub value: f64,
}

/// Mutually exclusive (trade, value) atoms; at most one executes and the null
/// trade is implicitly worth zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XorValuation {
    role: Role,
    atoms: Vec<Atom>,
}

impl XorValuation {
    /// Validated constructor: buyer values are positive, seller values
    /// negative, trade signs match the role and trades are distinct.
    pub fn new(role: Role, atoms: Vec<Atom>) -> Result<Self> {
        let v = XorValuation { role, atoms };
        v.validate()?;
        Ok(v)
    }

    /// Skips validation. Used for misreports, which may reach a zero value.
    pub(crate) fn from_parts(role: Role, atoms: Vec<Atom>) -> Self {
        XorValuation { role, atoms }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, atom) in self.atoms.iter().enumerate() {
            if atom.trade.is_null() {
                return Err(Error::Domain(format!("atom {k} is the null trade")));
            }
            if !atom.value.is_finite() {
                return Err(Error::Domain(format!("atom {k} has a non-finite value")));
            }
            let signs_ok = match self.role {
                Role::Buyer => atom.trade.quantities().iter().all(|&q| q >= 0),
                Role::Seller => atom.trade.quantities().iter().all(|&q| q <= 0),
            };
            if !signs_ok {
                return Err(Error::Domain(format!("atom {k} trade signs disagree with role")));
            }
            let value_ok = match self.role {
                Role::Buyer => atom.value > 0.0,
                Role::Seller => atom.value < 0.0,
            };
            if !value_ok {
                return Err(Error::Domain(format!("atom {k} value has the wrong sign")));
            }
            if self.atoms[..k].iter().any(|a| a.trade == atom.trade) {
                return Err(Error::Domain(format!("atom {k} duplicates an earlier trade")));
            }
        }
        Ok(())
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Value of `trade` (`None` is the null trade).
    pub fn value_of(&self, trade: Option<&TradeVector>) -> Result<f64> {
        match trade {
            None => Ok(0.0),
            Some(t) if t.is_null() => Ok(0.0),
            Some(t) => self
                .atoms
                .iter()
                .find(|a| &a.trade == t)
                .map(|a| a.value)
                .ok_or_else(|| Error::Domain(String::from("trade is not among the valuation's atoms"))),
        }
    }

    /// Value of the atom at `index`, or zero for the null assignment.
    pub fn atom_value(&self, index: Option<usize>) -> f64 {
        index.map_or(0.0, |k| self.atoms[k].value)
    }

    /// Largest atom value (negative infinity without atoms).
    pub fn max_value(&self) -> f64 {
        self.atoms.iter().map(|a| a.value).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same trades with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> XorValuation {
        XorValuation::from_parts(
            self.role,
            self.atoms.iter().map(|a| Atom { trade: a.trade.clone(), value: a.value * factor }).collect(),
        )
    }
}

/// Free function form of [`XorValuation::value_of`].
pub fn value_of(valuation: &XorValuation, trade: Option<&TradeVector>) -> Result<f64> {
    valuation.value_of(trade)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: usize,
    #[serde(flatten)]
    pub valuation: XorValuation,
    /// Endowment (sellers) or demand set (buyers), as good indices.
    pub demand_set: Vec<usize>,
}

impl Agent {
    pub fn role(&self) -> Role {
        self.valuation.role()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub goods: usize,
    pub agents: Vec<Agent>,
    pub seed: u64,
    pub generator: String,
}

impl Instance {
    pub fn new(goods: usize, agents: Vec<Agent>, seed: u64, generator: String) -> Result<Self> {
        let inst = Instance { goods, agents, seed, generator };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        for (pos, agent) in self.agents.iter().enumerate() {
            if agent.id != pos {
                return Err(Error::Domain(format!("agent at position {pos} has id {}", agent.id)));
            }
            if agent.demand_set.iter().any(|&g| g >= self.goods) {
                return Err(Error::Domain(format!("agent {pos} demand set names an unknown good")));
            }
            agent.valuation.validate()?;
            for atom in agent.valuation.atoms() {
                if atom.trade.len() != self.goods {
                    return Err(Error::Domain(format!("agent {pos} trade has wrong length")));
                }
                if atom.trade.support().any(|g| !agent.demand_set.contains(&g)) {
                    return Err(Error::Domain(format!("agent {pos} trades a good outside its endowment/demand set")));
                }
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Truthful reports.
    pub fn valuations(&self) -> Vec<XorValuation> {
        self.agents.iter().map(|a| a.valuation.clone()).collect()
    }

    pub fn roles(&self) -> Vec<Role> {
        self.agents.iter().map(Agent::role).collect()
    }
}

/// Per-agent choice of an atom index (into that agent's reported valuation)
/// or the null trade.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TradeProfile {
    pub assignment: Vec<Option<usize>>,
}

impl TradeProfile {
    pub fn null(n_agents: usize) -> Self {
        TradeProfile { assignment: vec![None; n_agents] }
    }

    pub fn is_active(&self, agent: usize) -> bool {
        self.assignment[agent].is_some()
    }

    pub fn active_agents(&self) -> impl Iterator<Item = usize> + '_ {
        self.assignment.iter().enumerate().filter(|(_, a)| a.is_some()).map(|(i, _)| i)
    }

    /// Trade vector executed by `agent` under `reports`, `None` for null.
    pub fn trade<'a>(&self, agent: usize, reports: &'a [XorValuation]) -> Option<&'a TradeVector> {
        self.assignment[agent].map(|k| &reports[agent].atoms()[k].trade)
    }

    /// Net units of each good flowing to agents.
    pub fn net_flow(&self, goods: usize, reports: &[XorValuation]) -> Vec<i64> {
        let mut flow = vec![0i64; goods];
        for (i, choice) in self.assignment.iter().enumerate() {
            if let Some(k) = choice {
                for (g, &q) in reports[i].atoms()[*k].trade.quantities().iter().enumerate() {
                    flow[g] += i64::from(q);
                }
            }
        }
        flow
    }
}

/// Supply covers demand for every good (excess supply is disposed of).
pub fn feasible(instance: &Instance, profile: &TradeProfile) -> bool {
    feasible_with(instance.goods, profile, &instance.valuations())
}

pub fn feasible_with(goods: usize, profile: &TradeProfile, reports: &[XorValuation]) -> bool {
    profile.net_flow(goods, reports).iter().all(|&f| f <= 0)
}

/// Sum of the assigned atom values, accumulated in agent id order.
pub fn total_value(profile: &TradeProfile, valuations: &[XorValuation]) -> f64 {
    profile.assignment.iter().zip(valuations).fold(0.0, |acc, (choice, v)| acc + v.atom_value(*choice))
}

/// Value of `profile` (expressed in `reports` atom indices) under `truth`.
pub fn true_value(profile: &TradeProfile, reports: &[XorValuation], truth: &[XorValuation]) -> Result<f64> {
    let mut total = 0.0;
    for (i, t) in truth.iter().enumerate().take(profile.assignment.len()) {
        total += t.value_of(profile.trade(i, reports))?;
    }
    Ok(total)
}
