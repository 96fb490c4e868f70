//! Exact winner determination, marginal economies and VCG discounts.
//!
//! The solver is a depth-first branch-and-bound over agents ordered by their
//! best atom value. Every candidate profile is scored by summing atom values
//! in agent id order, and profiles are ranked by (value descending, assignment
//! ascending) with `None < Some(0) < Some(1) < ...`. The bound only prunes
//! subtrees that cannot reach the incumbent minus [`PRUNE_SLACK`], so the
//! search returns exactly the profile an exhaustive scan would.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::market::{feasible_with, total_value, Instance, TradeProfile, XorValuation};

/// Absolute tolerance used when pruning by the value bound.
pub const PRUNE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdResult {
    pub profile: TradeProfile,
    /// `V*` of the reports.
    pub surplus: f64,
    /// `V*` with each agent removed in turn.
    pub marginal: Vec<f64>,
    /// `V* - V*_{-i}`.
    pub vcg_discounts: Vec<f64>,
}

impl WdResult {
    /// Efficient trade plus all marginal economies.
    pub fn solve(instance: &Instance, reports: &[XorValuation]) -> WdResult {
        solve_goods(instance.goods, reports)
    }

    /// Agents with a nonzero trade in the efficient profile.
    pub fn trading(&self) -> Vec<bool> {
        self.profile.assignment.iter().map(Option::is_some).collect()
    }
}

pub fn solve_goods(goods: usize, reports: &[XorValuation]) -> WdResult {
    let (profile, surplus) = search(goods, reports, None, None);
    let marginal = marginals_given(goods, reports, &profile, surplus);
    let vcg_discounts = marginal.iter().map(|m| surplus - m).collect();
    WdResult { profile, surplus, marginal, vcg_discounts }
}

/// Feasible profile maximizing reported value, with deterministic tie-breaking.
pub fn efficient_trade(instance: &Instance, reports: &[XorValuation]) -> (TradeProfile, f64) {
    search(instance.goods, reports, None, None)
}

pub fn efficient_trade_goods(goods: usize, reports: &[XorValuation]) -> (TradeProfile, f64) {
    search(goods, reports, None, None)
}

/// `V*(v_{-i})` for every agent.
pub fn marginal_surpluses(instance: &Instance, reports: &[XorValuation]) -> Vec<f64> {
    let (profile, surplus) = efficient_trade(instance, reports);
    marginals_given(instance.goods, reports, &profile, surplus)
}

pub fn vcg_discounts(instance: &Instance, reports: &[XorValuation]) -> Vec<f64> {
    WdResult::solve(instance, reports).vcg_discounts
}

/// `p_i = v_i(lambda*) - discount_i`.
pub fn vcg_payments(reports: &[XorValuation], profile: &TradeProfile, discounts: &[f64]) -> Vec<f64> {
    reports.iter().zip(&profile.assignment).zip(discounts).map(|((v, choice), d)| v.atom_value(*choice) - d).collect()
}

fn marginals_given(goods: usize, reports: &[XorValuation], profile: &TradeProfile, surplus: f64) -> Vec<f64> {
    (0..reports.len())
        .map(|i| {
            if profile.assignment[i].is_none() {
                // lambda* stays optimal without a null trader
                return surplus;
            }
            let mut warm = profile.clone();
            warm.assignment[i] = None;
            let warm = feasible_with(goods, &warm, reports).then_some(warm);
            search(goods, reports, Some(i), warm).1
        })
        .collect()
}

struct Candidate {
    index: usize,
    value: f64,
    quantities: Vec<i32>,
}

struct Search<'a> {
    goods: usize,
    reports: &'a [XorValuation],
    order: Vec<usize>,
    candidates: Vec<Vec<Candidate>>,
    /// Sum of positive best values over positions `p..`.
    optimism: Vec<f64>,
    /// Units each good could still receive from positions `p..`.
    supply: Vec<Vec<i64>>,
    flow: Vec<i64>,
    assign: Vec<Option<usize>>,
    best_value: f64,
    best: Vec<Option<usize>>,
}

fn search(
    goods: usize,
    reports: &[XorValuation],
    excluded: Option<usize>,
    warm: Option<TradeProfile>,
) -> (TradeProfile, f64) {
    let n = reports.len();
    let mut order: Vec<usize> = (0..n).filter(|&i| Some(i) != excluded && !reports[i].atoms().is_empty()).collect();
    order.sort_by(|&a, &b| reports[b].max_value().total_cmp(&reports[a].max_value()).then(a.cmp(&b)));

    let candidates: Vec<Vec<Candidate>> = order
        .iter()
        .map(|&i| {
            let mut c: Vec<Candidate> = reports[i]
                .atoms()
                .iter()
                .enumerate()
                .map(|(k, a)| Candidate { index: k, value: a.value, quantities: a.trade.quantities().to_vec() })
                .collect();
            c.sort_by(|x, y| y.value.total_cmp(&x.value).then(x.index.cmp(&y.index)));
            c
        })
        .collect();

    let m = order.len();
    let mut optimism = vec![0.0; m + 1];
    let mut supply = vec![vec![0i64; goods]; m + 1];
    for p in (0..m).rev() {
        let best = candidates[p].iter().map(|c| c.value).fold(0.0, f64::max);
        optimism[p] = optimism[p + 1] + best;
        let mut s = supply[p + 1].clone();
        for (g, slot) in s.iter_mut().enumerate() {
            let most = candidates[p].iter().map(|c| i64::from(-c.quantities[g]).max(0)).max().unwrap_or(0);
            *slot += most;
        }
        supply[p] = s;
    }

    let (best, best_value) = match warm {
        Some(w) => {
            let v = total_value(&w, reports);
            if v > 0.0 || (v == 0.0 && w.assignment.iter().all(Option::is_none)) {
                (w.assignment, v)
            } else {
                (vec![None; n], 0.0)
            }
        }
        None => (vec![None; n], 0.0),
    };

    let mut s = Search {
        goods,
        reports,
        order,
        candidates,
        optimism,
        supply,
        flow: vec![0; goods],
        assign: vec![None; n],
        best_value,
        best,
    };
    s.descend(0, 0.0);
    (TradeProfile { assignment: s.best }, s.best_value)
}

impl Search<'_> {
    fn descend(&mut self, pos: usize, partial: f64) {
        if partial + self.optimism[pos] < self.best_value - PRUNE_SLACK {
            return;
        }
        if (0..self.goods).any(|g| self.flow[g] > self.supply[pos][g]) {
            return;
        }
        if pos == self.order.len() {
            self.offer();
            return;
        }
        let agent = self.order[pos];
        for c in 0..self.candidates[pos].len() {
            let (index, value) = (self.candidates[pos][c].index, self.candidates[pos][c].value);
            for g in 0..self.goods {
                self.flow[g] += i64::from(self.candidates[pos][c].quantities[g]);
            }
            self.assign[agent] = Some(index);
            self.descend(pos + 1, partial + value);
            for g in 0..self.goods {
                self.flow[g] -= i64::from(self.candidates[pos][c].quantities[g]);
            }
        }
        self.assign[agent] = None;
        self.descend(pos + 1, partial);
    }

    fn offer(&mut self) {
        if self.flow.iter().any(|&f| f > 0) {
            return;
        }
        let value = self.assign.iter().zip(self.reports).fold(0.0, |acc, (choice, v)| acc + v.atom_value(*choice));
        if value > self.best_value || (value == self.best_value && self.assign < self.best) {
            self.best_value = value;
            self.best.clone_from(&self.assign);
        }
    }
}

/// Enumerates every atom/null combination. Reference implementation for
/// small instances.
pub fn exhaustive_efficient_trade(goods: usize, reports: &[XorValuation]) -> (TradeProfile, f64) {
    let n = reports.len();
    let radix: Vec<usize> = reports.iter().map(|v| v.atoms().len() + 1).collect();
    let mut digits = vec![0usize; n];
    let mut best = TradeProfile::null(n);
    let mut best_value = 0.0;
    loop {
        let profile = TradeProfile { assignment: digits.iter().map(|&d| d.checked_sub(1)).collect() };
        if feasible_with(goods, &profile, reports) {
            let v = total_value(&profile, reports);
            // lexicographic enumeration: the first maximizer is the smallest
            if v > best_value {
                best_value = v;
                best = profile;
            }
        }
        let mut k = n;
        loop {
            if k == 0 {
                return (best, best_value);
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < radix[k] {
                break;
            }
            digits[k] = 0;
        }
    }
}

/// The winner-determination integer program in CPLEX LP text format.
pub fn to_lp(goods: usize, reports: &[XorValuation]) -> String {
    let var = |i: usize, k: usize| format!("x_{i}_{k}");
    let mut out = String::new();
    out.push_str("\\ combinatorial exchange winner determination\nMaximize\n obj:");
    let mut any = false;
    for (i, v) in reports.iter().enumerate() {
        for (k, a) in v.atoms().iter().enumerate() {
            let sign = if a.value < 0.0 { '-' } else { '+' };
            let _ = write!(out, " {sign} {} {}", a.value.abs(), var(i, k));
            any = true;
        }
    }
    if !any {
        out.push_str(" 0");
    }
    out.push_str("\nSubject To\n");
    for (i, v) in reports.iter().enumerate() {
        if v.atoms().is_empty() {
            continue;
        }
        let terms: Vec<String> = (0..v.atoms().len()).map(|k| var(i, k)).collect();
        let _ = writeln!(out, " xor_{i}: {} <= 1", terms.join(" + "));
    }
    for g in 0..goods {
        let mut line = String::new();
        for (i, v) in reports.iter().enumerate() {
            for (k, a) in v.atoms().iter().enumerate() {
                let q = a.trade.quantities()[g];
                if q != 0 {
                    let sign = if q < 0 { '-' } else { '+' };
                    let _ = write!(line, " {sign} {} {}", q.abs(), var(i, k));
                }
            }
        }
        if !line.is_empty() {
            let _ = writeln!(out, " good_{g}:{line} <= 0");
        }
    }
    out.push_str("Binary\n");
    for (i, v) in reports.iter().enumerate() {
        for k in 0..v.atoms().len() {
            let _ = writeln!(out, " {}", var(i, k));
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{generate, GeneratorConfig, Scenario};
    use crate::market::fixtures::*;
    use crate::market::{Instance, Role};

    #[test]
    fn fixture_a_efficient_trade() {
        let inst = fixture_a();
        let (p, v) = efficient_trade(&inst, &inst.valuations());
        assert_eq!(p.assignment, vec![Some(0), Some(0), None]);
        assert_eq!(v, 6.0);
        assert_eq!(exhaustive_efficient_trade(2, &inst.valuations()), (p, v));
    }

    #[test]
    fn fixture_a_low_b1_trades_nothing() {
        let inst = fixture_a_with(3.0);
        let (p, v) = efficient_trade(&inst, &inst.valuations());
        assert_eq!(p, TradeProfile::null(3));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn lone_seller_is_null() {
        let inst =
            Instance::new(1, vec![agent(0, Role::Seller, &[0], vec![atom(&[-1], -1.0)])], 0, String::new()).unwrap();
        let r = WdResult::solve(&inst, &inst.valuations());
        assert_eq!(r.surplus, 0.0);
        assert_eq!(r.marginal, vec![0.0]);
        assert_eq!(r.vcg_discounts, vec![0.0]);
    }

    #[test]
    fn fixture_a_marginals_and_discounts() {
        let inst = fixture_a();
        let r = WdResult::solve(&inst, &inst.valuations());
        assert_eq!(r.marginal, vec![0.0, 0.0, 6.0]);
        assert_eq!(r.vcg_discounts, vec![6.0, 6.0, 0.0]);
        let p = vcg_payments(&inst.valuations(), &r.profile, &r.vcg_discounts);
        assert_eq!(p, vec![-10.0, 4.0, 0.0]);
        assert_eq!(p.iter().sum::<f64>(), -6.0);
    }

    #[test]
    fn competition_shrinks_the_winner_discount() {
        let base = fixture_a();
        let twin = Instance::new(
            2,
            vec![
                agent(0, Role::Seller, &[0, 1], vec![atom(&[-1, -1], -4.0)]),
                agent(1, Role::Buyer, &[0, 1], vec![atom(&[1, 1], 10.0)]),
                agent(2, Role::Buyer, &[0, 1], vec![atom(&[1, 0], 3.0)]),
                agent(3, Role::Buyer, &[0, 1], vec![atom(&[1, 1], 10.0)]),
            ],
            0,
            String::new(),
        )
        .unwrap();
        let solo = WdResult::solve(&base, &base.valuations());
        let duo = WdResult::solve(&twin, &twin.valuations());
        // identical buyers tie; the lexicographically smallest assignment
        // (None before Some) hands the trade to the higher id
        assert_eq!(duo.profile.assignment, vec![Some(0), None, None, Some(0)]);
        assert!(duo.vcg_discounts[3] < solo.vcg_discounts[1]);
        assert_eq!(duo.vcg_discounts[3], 0.0);
        assert_eq!(duo.vcg_discounts[0], 6.0);
    }

    #[test]
    fn matches_exhaustive_on_generated_instances() {
        for s in Scenario::ALL {
            let cfg = GeneratorConfig::for_scenario(s);
            for seed in 0..150 {
                let inst = generate(&cfg, seed).unwrap();
                let v = inst.valuations();
                let fast = efficient_trade(&inst, &v);
                let slow = exhaustive_efficient_trade(inst.goods, &v);
                assert_eq!(fast.1.to_bits(), slow.1.to_bits(), "{s} seed {seed}");
                assert_eq!(fast.0, slow.0);
            }
        }
    }

    #[test]
    fn vcg_discount_invariants() {
        let cfg = GeneratorConfig::for_scenario(Scenario::Super);
        for seed in 0..100 {
            let inst = generate(&cfg, seed).unwrap();
            let r = WdResult::solve(&inst, &inst.valuations());
            assert!(r.surplus >= 0.0);
            for i in 0..inst.n_agents() {
                assert!(r.marginal[i] >= 0.0 && r.marginal[i] <= r.surplus);
                assert!(r.vcg_discounts[i] >= 0.0);
                if r.profile.assignment[i].is_none() {
                    assert_eq!(r.vcg_discounts[i], 0.0);
                }
            }
            // marginal via full re-solve without warm start
            for i in 0..inst.n_agents() {
                let mut v = inst.valuations();
                v[i] = XorValuation::from_parts(v[i].role(), Vec::new());
                assert_eq!(exhaustive_efficient_trade(inst.goods, &v).1, r.marginal[i]);
            }
        }
    }

    #[test]
    fn lp_export_lists_every_atom() {
        let inst = fixture_a();
        let lp = to_lp(2, &inst.valuations());
        assert!(lp.contains("Maximize"));
        assert!(lp.contains("- 4 x_0_0"));
        assert!(lp.contains("+ 10 x_1_0"));
        assert!(lp.contains("good_0: - 1 x_0_0 + 1 x_1_0 + 1 x_2_0 <= 0"));
        assert!(lp.contains("good_1: - 1 x_0_0 + 1 x_1_0 <= 0"));
        assert!(lp.trim_end().ends_with("End"));
    }
}
