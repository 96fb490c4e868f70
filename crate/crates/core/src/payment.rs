//! Payment rules: how the available surplus `V*` is handed out as discounts.
//!
//! Each rule maps the VCG discounts, the set of trading agents and `V*` to a
//! discount vector; payments follow as reported value minus discount. Seven
//! rules are budget balanced (discounts sum to `V*`). VCG and No Discount are
//! the two reference points.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::market::{TradeProfile, XorValuation};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleId {
    Vcg,
    NoDiscount,
    Equal,
    Fractional,
    Small,
    Large,
    Threshold,
    Reverse,
    TwoTriangle,
}

impl RuleId {
    pub const ALL: [RuleId; 9] = [
        RuleId::Vcg,
        RuleId::NoDiscount,
        RuleId::Equal,
        RuleId::Fractional,
        RuleId::Small,
        RuleId::Large,
        RuleId::Threshold,
        RuleId::Reverse,
        RuleId::TwoTriangle,
    ];

    /// Rules whose discounts sum to `V*`.
    pub const BALANCED: [RuleId; 7] = [
        RuleId::Equal,
        RuleId::Fractional,
        RuleId::Small,
        RuleId::Large,
        RuleId::Threshold,
        RuleId::Reverse,
        RuleId::TwoTriangle,
    ];

    /// Balanced rules that never exceed the VCG discount and hand out all
    /// surplus.
    pub const CAPPED: [RuleId; 6] =
        [RuleId::Fractional, RuleId::Small, RuleId::Large, RuleId::Threshold, RuleId::Reverse, RuleId::TwoTriangle];

    pub fn is_balanced(self) -> bool {
        !matches!(self, RuleId::Vcg | RuleId::NoDiscount)
    }

    pub fn is_capped(self) -> bool {
        Self::CAPPED.contains(&self)
    }

    /// Whether the rule reads the VCG discounts (and thus needs marginal
    /// economies solved).
    pub fn needs_vcg(self) -> bool {
        !matches!(self, RuleId::NoDiscount | RuleId::Equal)
    }

    /// Short display label.
    pub fn abbrev(self) -> &'static str {
        match self {
            RuleId::Vcg => "VCG",
            RuleId::NoDiscount => "N",
            RuleId::Equal => "E",
            RuleId::Fractional => "F",
            RuleId::Small => "S",
            RuleId::Large => "L",
            RuleId::Threshold => "T",
            RuleId::Reverse => "R",
            RuleId::TwoTriangle => "W",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RuleId::Vcg => "vcg",
            RuleId::NoDiscount => "no-discount",
            RuleId::Equal => "equal",
            RuleId::Fractional => "fractional",
            RuleId::Small => "small",
            RuleId::Large => "large",
            RuleId::Threshold => "threshold",
            RuleId::Reverse => "reverse",
            RuleId::TwoTriangle => "two-triangle",
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| !matches!(c, '-' | '_' | ' ')).collect();
        let rule = match key.to_ascii_lowercase().as_str() {
            "vcg" | "v" => RuleId::Vcg,
            "nodiscount" | "n" => RuleId::NoDiscount,
            "equal" | "e" => RuleId::Equal,
            "fractional" | "f" => RuleId::Fractional,
            "small" | "s" => RuleId::Small,
            "large" | "l" => RuleId::Large,
            "threshold" | "t" => RuleId::Threshold,
            "reverse" | "r" => RuleId::Reverse,
            "twotriangle" | "w" => RuleId::TwoTriangle,
            _ => return Err(Error::Config(format!("unknown payment rule `{s}`"))),
        };
        Ok(rule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub discounts: Vec<f64>,
    /// Set when the VCG discounts sum to less than `V*`, so a capped rule
    /// had to spread the residual beyond the caps.
    pub residual: bool,
}

/// Discounts for `rule`.
///
/// `trading[i]` marks agents with a nonzero trade in the efficient profile;
/// everybody else gets a zero discount.
pub fn allocate_discounts(rule: RuleId, vcg: &[f64], trading: &[bool], surplus: f64) -> Result<Allocation> {
    if vcg.len() != trading.len() {
        return Err(Error::Domain(String::from("discount and trading vectors differ in length")));
    }
    if !(surplus >= 0.0) || vcg.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::Domain(String::from("VCG discounts and surplus must be nonnegative")));
    }
    let n = vcg.len();
    let caps: Vec<f64> = (0..n).map(|i| if trading[i] { vcg[i] } else { 0.0 }).collect();

    let plain = |discounts| Ok(Allocation { discounts, residual: false });
    match rule {
        RuleId::Vcg => return plain(caps),
        RuleId::NoDiscount => return plain(vec![0.0; n]),
        RuleId::Equal => return plain(equal_split(trading, surplus)),
        _ => {}
    }

    let total: f64 = caps.iter().sum();
    if total < surplus {
        // capped rules cannot balance: saturate every cap, share the rest
        let mut discounts = caps;
        let extra = equal_split(trading, surplus - total);
        for (d, e) in discounts.iter_mut().zip(extra) {
            *d += e;
        }
        return Ok(Allocation { discounts, residual: true });
    }

    let discounts = match rule {
        RuleId::Fractional => {
            if total > 0.0 {
                caps.iter().map(|d| surplus * d / total).collect()
            } else {
                equal_split(trading, surplus)
            }
        }
        RuleId::Small => greedy_fill(&caps, surplus, false),
        RuleId::Large => greedy_fill(&caps, surplus, true),
        RuleId::Threshold => threshold(&caps, surplus).1,
        RuleId::Reverse => reverse(&caps, surplus).1,
        RuleId::TwoTriangle => {
            let half = surplus / 2.0;
            let (_, first) = threshold(&caps, half);
            let residual_caps: Vec<f64> = caps.iter().zip(&first).map(|(c, d)| c - d).collect();
            let second = greedy_fill_ordered(&residual_caps, surplus - half, &ascending(&caps));
            first.iter().zip(second).map(|(a, b)| a + b).collect()
        }
        RuleId::Vcg | RuleId::NoDiscount | RuleId::Equal => unreachable!(),
    };
    plain(discounts)
}

fn equal_split(trading: &[bool], amount: f64) -> Vec<f64> {
    let k = trading.iter().filter(|&&t| t).count();
    if k == 0 {
        return vec![0.0; trading.len()];
    }
    let share = amount / k as f64;
    trading.iter().map(|&t| if t { share } else { 0.0 }).collect()
}

/// Indices sorted by cap ascending, ties by id.
fn ascending(caps: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..caps.len()).collect();
    idx.sort_by(|&a, &b| caps[a].total_cmp(&caps[b]).then(a.cmp(&b)));
    idx
}

/// Hands each agent `min(cap, remaining)` in cap order; `descending` flips
/// the cap order (ties still by id).
fn greedy_fill(caps: &[f64], budget: f64, descending: bool) -> Vec<f64> {
    let order = if descending {
        let mut idx: Vec<usize> = (0..caps.len()).collect();
        idx.sort_by(|&a, &b| caps[b].total_cmp(&caps[a]).then(a.cmp(&b)));
        idx
    } else {
        ascending(caps)
    };
    greedy_fill_ordered(caps, budget, &order)
}

fn greedy_fill_ordered(caps: &[f64], budget: f64, order: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; caps.len()];
    let mut remaining = budget;
    for &i in order {
        if remaining <= 0.0 {
            break;
        }
        let give = caps[i].min(remaining);
        out[i] = give;
        remaining -= give;
    }
    out
}

/// Smallest `C >= 0` with `sum_i max(0, cap_i - C) = budget`, and the
/// resulting discounts. Requires `sum(caps) >= budget`.
pub fn threshold(caps: &[f64], budget: f64) -> (f64, Vec<f64>) {
    let mut sorted: Vec<f64> = caps.iter().copied().filter(|&c| c > 0.0).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.is_empty() {
        return (0.0, vec![0.0; caps.len()]);
    }
    let mut level = sorted[0];
    let mut prefix = 0.0;
    for (k, &c) in sorted.iter().enumerate() {
        prefix += c;
        let candidate = (prefix - budget) / (k + 1) as f64;
        let next = sorted.get(k + 1).copied().unwrap_or(0.0);
        if candidate >= next {
            level = candidate.max(0.0);
            break;
        }
    }
    let discounts = caps.iter().map(|&c| (c - level).max(0.0)).collect();
    (level, discounts)
}

/// Largest common regret floor `r*` over agents with a positive cap and a
/// vertex allocation attaining it: surplus goes to the largest caps first,
/// each agent keeping at least `r*` of regret.
pub fn reverse(caps: &[f64], budget: f64) -> (f64, Vec<f64>) {
    let positive: Vec<usize> = (0..caps.len()).filter(|&i| caps[i] > 0.0).collect();
    if positive.is_empty() {
        return (0.0, vec![0.0; caps.len()]);
    }
    let total: f64 = positive.iter().map(|&i| caps[i]).sum();
    let smallest = positive.iter().map(|&i| caps[i]).fold(f64::INFINITY, f64::min);
    let floor = smallest.min((total - budget) / positive.len() as f64).max(0.0);
    let room: Vec<f64> = caps.iter().map(|&c| if c > 0.0 { (c - floor).max(0.0) } else { 0.0 }).collect();
    let mut order = positive;
    order.sort_by(|&a, &b| caps[b].total_cmp(&caps[a]).then(a.cmp(&b)));
    (floor, greedy_fill_ordered(&room, budget, &order))
}

/// Full outcome of running `rule` on one set of reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub profile: TradeProfile,
    pub surplus: f64,
    /// VCG discounts of the reports; only solved when the rule reads them.
    pub vcg: Option<Vec<f64>>,
    pub discounts: Vec<f64>,
    pub payments: Vec<f64>,
    pub residual: bool,
}

/// Winner determination plus payments under `rule`.
pub fn settle(goods: usize, reports: &[XorValuation], rule: RuleId) -> Result<Settlement> {
    let (profile, surplus, vcg) = if rule.needs_vcg() {
        let wd = crate::wd::solve_goods(goods, reports);
        (wd.profile, wd.surplus, Some(wd.vcg_discounts))
    } else {
        let (profile, surplus) = crate::wd::efficient_trade_goods(goods, reports);
        (profile, surplus, None)
    };
    let trading: Vec<bool> = profile.assignment.iter().map(Option::is_some).collect();
    let zeros;
    let caps = match &vcg {
        Some(v) => v.as_slice(),
        None => {
            zeros = vec![0.0; reports.len()];
            zeros.as_slice()
        }
    };
    let alloc = allocate_discounts(rule, caps, &trading, surplus)?;
    let payments = payments_from_discounts(reports, &profile, &alloc.discounts);
    Ok(Settlement { profile, surplus, vcg, discounts: alloc.discounts, payments, residual: alloc.residual })
}

/// `p_i = reported value of the assigned trade - discount_i`.
pub fn payments_from_discounts(reports: &[XorValuation], profile: &TradeProfile, discounts: &[f64]) -> Vec<f64> {
    crate::wd::vcg_payments(reports, profile, discounts)
}

/// `vcg_i - discount_i`.
pub fn regrets(vcg: &[f64], discounts: &[f64]) -> Vec<f64> {
    vcg.iter().zip(discounts).map(|(v, d)| v - d).collect()
}
