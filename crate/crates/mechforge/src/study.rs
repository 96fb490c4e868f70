//! The full experiment: at-truth metrics, equilibria per condition, metrics in
//! equilibrium, correlations, fits, deviation curves and online selection.

use std::collections::BTreeMap;

use mechforge_core::deviation::{self, default_rho_grid, DeviationCurve, DeviationPoint};
use mechforge_core::equilibrium::{iterate_equilibrium, EquilibriumResult};
use mechforge_core::fitting::{self, density_histogram, ExpParams, Fit, GevParams, GpdParams};
use mechforge_core::generators::generate_batch;
use mechforge_core::metrics::{evaluate_all, payoffs_from_solved, solve_all, Metric};
use mechforge_core::online::{run_online_search, EpochSummary, EquilibriumCache};
use mechforge_core::stats::{self, Correlation};
use mechforge_core::{rng, Error, Instance, RuleId, Scenario, WdResult, XorValuation};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::CliError;
use crate::output::{num, opt, OutDir};

pub const SIGNIFICANCE: f64 = 0.05;
const DENSITY_BINS: usize = 30;
const CDF_POINTS: usize = 101;

/// Named random stream under the run seed.
pub fn stream(seed: u64, name: &str) -> u64 {
    rng::derive(seed, name)
}

/// Truthful instances shared by the at-truth metrics of `metrics` and `study`.
pub fn truth_instances(config: &Config, scenario: Scenario, count: usize) -> Result<Vec<Instance>, CliError> {
    let seed = stream(config.seed, &format!("truth/{scenario}"));
    Ok(generate_batch(&config.generators.get(scenario), seed, "instances", count)?)
}

/// Seed of the equilibrium search for one scenario and class count. Rules
/// share it so that they face the same instances.
pub fn equilibrium_seed(config: &Config, scenario: Scenario, classes: usize) -> u64 {
    stream(config.seed, &format!("equilibrium/{scenario}/{classes}"))
}

fn truthful_reports(instances: &[Instance]) -> Vec<Vec<XorValuation>> {
    instances.iter().map(Instance::valuations).collect()
}

/// Metric values of `rule` in [`Metric::ALL`] order.
pub fn metric_row(solved: &[WdResult], rule: RuleId, config: &Config) -> Result<Vec<f64>, CliError> {
    Ok(evaluate_all(solved, rule, &config.metrics.binning)?.into_iter().map(|m| m.value).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct TruthRow {
    pub scenario: Scenario,
    pub rule: RuleId,
    pub metrics: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionResult {
    pub scenario: Scenario,
    pub rule: RuleId,
    pub classes: usize,
    /// Reference rules are reported but kept out of the correlations.
    pub reference: bool,
    pub equilibrium: EquilibriumResult,
    pub truth_metrics: Vec<f64>,
    pub equilibrium_metrics: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Efficiency,
    MeanShave,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Efficiency => "efficiency",
            Target::MeanShave => "mean_shave",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationReport {
    pub metric: Metric,
    pub target: Target,
    /// `truth` or `equilibrium`.
    pub evaluated_at: &'static str,
    pub n: usize,
    /// Conditions left out because their equilibrium search did not converge.
    pub excluded: usize,
    /// `None` when either series has zero variance.
    pub result: Option<Correlation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub scenario: Scenario,
    pub samples: Vec<f64>,
    pub gev: Option<Fit<GevParams>>,
    pub gumbel: Option<Fit<GevParams>>,
    pub gpd: Option<Fit<GpdParams>>,
    pub exponential: Option<Fit<ExpParams>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleCurve {
    pub scenario: Scenario,
    pub instance: usize,
    pub agent: usize,
    pub rule: RuleId,
    pub points: Vec<DeviationPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResults {
    pub truth: Vec<TruthRow>,
    /// Normalized at-truth payoffs per (scenario, rule), for the c.d.f. figure.
    pub normalized_payoffs: Vec<(Scenario, RuleId, Vec<f64>)>,
    pub conditions: Vec<ConditionResult>,
    pub truth_correlations: Vec<CorrelationReport>,
    pub equilibrium_correlations: Vec<CorrelationReport>,
    pub surplus_fits: Vec<FitSummary>,
    pub payoff_fits: Vec<FitSummary>,
    pub single_curves: Vec<SingleCurve>,
    pub deviation_curves: Vec<(Scenario, [DeviationCurve; 3])>,
    pub online: Vec<EpochSummary>,
}

/// Payment rule actually applied for `rule` (VCG everywhere in the control run).
fn payment_rule(config: &Config, rule: RuleId) -> RuleId {
    if config.study.force_vcg {
        RuleId::Vcg
    } else {
        rule
    }
}

fn condition_list(config: &Config) -> Vec<(Scenario, RuleId, usize, bool)> {
    let st = &config.study;
    let mut out = Vec::new();
    for &s in &st.scenarios {
        for (rules, reference) in [(&st.rules, false), (&st.reference_rules, true)] {
            for &r in rules.iter() {
                if reference && st.rules.contains(&r) {
                    continue;
                }
                for &k in &st.classes {
                    out.push((s, r, k, reference));
                }
            }
        }
    }
    out
}

/// Pearson correlation, or `None` when a series is (numerically) constant.
pub fn correlate(xs: &[f64], ys: &[f64]) -> Result<Option<Correlation>, CliError> {
    let flat = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0)
    };
    if xs.len() >= 3 && (flat(xs) || flat(ys)) {
        return Ok(None);
    }
    match stats::correlation(xs, ys) {
        Ok(c) => Ok(Some(c)),
        Err(Error::Domain(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn correlation_table(conditions: &[ConditionResult], at_equilibrium: bool) -> Result<Vec<CorrelationReport>, CliError> {
    let candidates: Vec<&ConditionResult> = conditions.iter().filter(|c| !c.reference).collect();
    let used: Vec<&ConditionResult> = candidates.iter().copied().filter(|c| c.equilibrium.converged).collect();
    let excluded = candidates.len() - used.len();
    let mut out = Vec::new();
    for metric in Metric::NORMALIZED {
        let idx = Metric::ALL.iter().position(|&m| m == metric).expect("normalized metrics are listed");
        let xs: Vec<f64> = used
            .iter()
            .map(|c| if at_equilibrium { c.equilibrium_metrics[idx] } else { c.truth_metrics[idx] })
            .collect();
        for target in [Target::Efficiency, Target::MeanShave] {
            let ys: Vec<f64> = used
                .iter()
                .map(|c| match target {
                    Target::Efficiency => c.equilibrium.efficiency,
                    Target::MeanShave => c.equilibrium.mean_shave,
                })
                .collect();
            let result = if used.len() >= 3 { correlate(&xs, &ys)? } else { None };
            out.push(CorrelationReport {
                metric,
                target,
                evaluated_at: if at_equilibrium { "equilibrium" } else { "truth" },
                n: used.len(),
                excluded,
                result,
            });
        }
    }
    Ok(out)
}

fn skip_insufficient<T>(r: mechforge_core::Result<T>) -> Result<Option<T>, CliError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::InsufficientData(_)) | Err(Error::Domain(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Optimal surplus and positive-surplus VCG payoffs on fresh truthful instances.
pub fn fit_samples(config: &Config, scenario: Scenario, count: usize) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let seed = stream(config.seed, &format!("fit/{scenario}"));
    let instances = generate_batch(&config.generators.get(scenario), seed, "instances", count)?;
    let solved = solve_all(&instances, &truthful_reports(&instances));
    let surplus = solved.iter().map(|w| w.surplus).collect();
    let payoffs = payoffs_from_solved(&solved, RuleId::Vcg)?.into_iter().map(|p| p.payoff).collect();
    Ok((surplus, payoffs))
}

pub fn fit_surplus(scenario: Scenario, samples: Vec<f64>) -> Result<FitSummary, CliError> {
    Ok(FitSummary {
        scenario,
        gev: skip_insufficient(fitting::fit_gev(&samples))?,
        gumbel: skip_insufficient(fitting::fit_gumbel(&samples))?,
        gpd: None,
        exponential: None,
        samples,
    })
}

pub fn fit_payoffs(scenario: Scenario, samples: Vec<f64>) -> Result<FitSummary, CliError> {
    Ok(FitSummary {
        scenario,
        gev: None,
        gumbel: None,
        gpd: skip_insufficient(fitting::fit_gpd(&samples))?,
        exponential: skip_insufficient(fitting::fit_exponential(&samples))?,
        samples,
    })
}

/// Deviation instances for a scenario.
pub fn deviation_instances(config: &Config, scenario: Scenario, count: usize) -> Result<Vec<Instance>, CliError> {
    let seed = stream(config.seed, &format!("deviation/{scenario}"));
    Ok(generate_batch(&config.generators.get(scenario), seed, "instances", count)?)
}

/// First eligible (instance, agent) pair, in instance then agent order.
pub fn first_eligible(instances: &[Instance]) -> Option<(usize, usize)> {
    for (k, inst) in instances.iter().enumerate() {
        let wd = WdResult::solve(inst, &inst.valuations());
        if let Some(i) = (0..inst.n_agents()).find(|&i| deviation::eligibility(&wd, i).is_some()) {
            return Some((k, i));
        }
    }
    None
}

pub fn run_study(config: &Config) -> Result<StudyResults, CliError> {
    config.validate()?;
    let st = &config.study;

    // At-truth metrics for every rule.
    let mut truth = Vec::new();
    let mut normalized_payoffs = Vec::new();
    let mut truth_index: BTreeMap<(Scenario, RuleId), Vec<f64>> = BTreeMap::new();
    for &s in &st.scenarios {
        let instances = truth_instances(config, s, config.metrics.instances)?;
        let solved = solve_all(&instances, &truthful_reports(&instances));
        for rule in RuleId::ALL {
            let applied = payment_rule(config, rule);
            let metrics = metric_row(&solved, applied, config)?;
            let norm = payoffs_from_solved(&solved, applied)?.into_iter().filter_map(|p| p.normalized).collect();
            truth_index.insert((s, rule), metrics.clone());
            normalized_payoffs.push((s, rule, norm));
            truth.push(TruthRow { scenario: s, rule, metrics });
        }
    }

    // Equilibria and metrics in equilibrium, one condition per worker.
    let mut eq_instances = BTreeMap::new();
    for &s in &st.scenarios {
        let seed = stream(config.seed, &format!("equilibrium-metrics/{s}"));
        eq_instances.insert(s, generate_batch(&config.generators.get(s), seed, "instances", config.metrics.instances)?);
    }
    let conditions: Vec<Result<ConditionResult, CliError>> = condition_list(config)
        .into_par_iter()
        .map(|(s, rule, k, reference)| {
            let applied = payment_rule(config, rule);
            let gen = config.generators.get(s);
            let mut eq = iterate_equilibrium(&gen, applied, k, &config.equilibrium, equilibrium_seed(config, s, k))?;
            eq.rule = rule;
            let instances = &eq_instances[&s];
            let bids: Vec<Vec<XorValuation>> = instances.iter().map(|i| eq.profile.bids(i)).collect();
            let solved = solve_all(instances, &bids);
            Ok(ConditionResult {
                scenario: s,
                rule,
                classes: k,
                reference,
                truth_metrics: truth_index[&(s, rule)].clone(),
                equilibrium_metrics: metric_row(&solved, applied, config)?,
                equilibrium: eq,
            })
        })
        .collect();
    let conditions = conditions.into_iter().collect::<Result<Vec<_>, _>>()?;

    let truth_correlations = correlation_table(&conditions, false)?;
    let equilibrium_correlations = correlation_table(&conditions, true)?;

    // Extreme-value fits.
    let mut surplus_fits = Vec::new();
    let mut payoff_fits = Vec::new();
    for &s in &st.scenarios {
        let (surplus, payoffs) = fit_samples(config, s, st.fit_instances)?;
        surplus_fits.push(fit_surplus(s, surplus)?);
        payoff_fits.push(fit_payoffs(s, payoffs)?);
    }

    // Deviation curves.
    let rhos = default_rho_grid();
    let mut single_curves = Vec::new();
    let mut deviation_curves = Vec::new();
    for &s in &st.scenarios {
        let instances = deviation_instances(config, s, st.deviation_instances)?;
        if let Some((k, i)) = first_eligible(&instances) {
            for rule in RuleId::ALL {
                if let Some(points) = deviation::unilateral_points(&instances[k], i, payment_rule(config, rule), &rhos)?
                {
                    single_curves.push(SingleCurve { scenario: s, instance: k, agent: i, rule, points });
                }
            }
        }
        for rule in RuleId::ALL {
            let points = deviation::all_points(&instances, payment_rule(config, rule), &rhos)?;
            deviation_curves.push((s, deviation::aggregate(rule, &rhos, &points)));
        }
    }

    // Online selection on the Decay generator.
    let mut cache = EquilibriumCache::default();
    let online = run_online_search(
        &config.generators.get(Scenario::Decay),
        &config.online,
        stream(config.seed, "online"),
        &mut cache,
    )?;

    Ok(StudyResults {
        truth,
        normalized_payoffs,
        conditions,
        truth_correlations,
        equilibrium_correlations,
        surplus_fits,
        payoff_fits,
        single_curves,
        deviation_curves,
        online,
    })
}

fn metric_header(prefix: &str) -> Vec<String> {
    Metric::ALL.iter().map(|m| format!("{prefix}{}", m.name())).collect()
}

fn pct(x: f64) -> String {
    num(100.0 * x)
}

pub fn write_correlations(out: &OutDir, name: &str, reports: &[CorrelationReport]) -> Result<(), CliError> {
    let mut t =
        out.csv(name, &["metric", "target", "evaluated_at", "n", "excluded", "r", "p", "significant", "status"])?;
    for c in reports {
        let (r, p, sig, status) = match c.result {
            Some(x) => (num(x.r), num(x.p), x.significant(SIGNIFICANCE).to_string(), "ok"),
            None => (String::new(), String::new(), String::new(), "undefined"),
        };
        t.row([
            c.metric.name().to_string(),
            c.target.name().to_string(),
            c.evaluated_at.to_string(),
            c.n.to_string(),
            c.excluded.to_string(),
            r,
            p,
            sig,
            status.to_string(),
        ])?;
    }
    t.finish()
}

pub fn write_density(out: &OutDir, name: &str, fits: &[FitSummary], surplus: bool) -> Result<(), CliError> {
    let header: &[&str] = if surplus {
        &["scenario", "x", "empirical_density", "gev_density", "gumbel_density"]
    } else {
        &["scenario", "x", "empirical_density", "gpd_density", "exponential_density"]
    };
    let mut t = out.csv(name, header)?;
    for f in fits {
        let Some(h) = skip_insufficient(density_histogram(&f.samples, DENSITY_BINS))? else {
            continue;
        };
        for (&x, &d) in h.centers.iter().zip(&h.density) {
            let (a, b) = if surplus {
                (f.gev.map(|g| fitting::gev_pdf(x, &g.params)), f.gumbel.map(|g| fitting::gev_pdf(x, &g.params)))
            } else {
                (f.gpd.map(|g| fitting::gpd_pdf(x, &g.params)), f.exponential.map(|g| fitting::exp_pdf(x, &g.params)))
            };
            t.row([f.scenario.name().to_string(), num(x), num(d), opt(a), opt(b)])?;
        }
    }
    t.finish()
}

pub fn write_fit_params(
    out: &OutDir,
    name: &str,
    surplus: &[FitSummary],
    payoff: &[FitSummary],
) -> Result<(), CliError> {
    let mut t =
        out.csv(name, &["scenario", "quantity", "model", "n", "location", "scale", "shape", "rate", "log_likelihood"])?;
    let gev_row = |t: &mut crate::output::CsvTable, f: &FitSummary, model: &str, fit: Option<Fit<GevParams>>| {
        if let Some(g) = fit {
            let p = g.params;
            t.row([
                f.scenario.name().to_string(),
                "surplus".into(),
                model.into(),
                f.samples.len().to_string(),
                num(p.location),
                num(p.scale),
                num(p.shape),
                String::new(),
                num(g.log_likelihood),
            ])?;
        }
        Ok::<(), CliError>(())
    };
    for f in surplus {
        gev_row(&mut t, f, "gev", f.gev)?;
        gev_row(&mut t, f, "gumbel", f.gumbel)?;
    }
    for f in payoff {
        let base = [f.scenario.name().to_string(), "vcg_payoff".into()];
        if let Some(g) = f.gpd {
            t.row(base.iter().cloned().chain([
                "gpd".into(),
                f.samples.len().to_string(),
                "0".into(),
                num(g.params.scale),
                num(g.params.shape),
                String::new(),
                num(g.log_likelihood),
            ]))?;
        }
        if let Some(e) = f.exponential {
            t.row(base.iter().cloned().chain([
                "exponential".into(),
                f.samples.len().to_string(),
                "0".into(),
                String::new(),
                String::new(),
                num(e.params.rate),
                num(e.log_likelihood),
            ]))?;
        }
    }
    t.finish()
}

fn write_curves(out: &OutDir, name: &str, curves: &[(Scenario, &DeviationCurve)]) -> Result<(), CliError> {
    let mut t = out.csv(name, &["scenario", "rule", "rho", "value", "count"])?;
    for (s, c) in curves {
        for ((&rho, v), n) in c.rho.iter().zip(&c.values).zip(&c.counts) {
            t.row([s.name().to_string(), c.rule.name().to_string(), num(rho), opt(*v), n.to_string()])?;
        }
    }
    t.finish()
}

pub fn write_online(out: &OutDir, name: &str, trace: &[EpochSummary]) -> Result<(), CliError> {
    let candidates: Vec<RuleId> = trace.first().map(|e| e.scores.iter().map(|s| s.0).collect()).unwrap_or_default();
    let mut header =
        vec!["epoch".to_string(), "rule".into(), "efficiency_fraction".into(), "next".into(), "cycle".into()];
    header.extend(candidates.iter().map(|r| format!("score_{}", r.abbrev())));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = out.csv(name, &header)?;
    for e in trace {
        let mut row = vec![
            e.epoch.to_string(),
            e.rule.name().to_string(),
            num(e.efficiency_fraction),
            e.next.name().to_string(),
            e.cycle.iter().map(|r| r.abbrev()).collect::<Vec<_>>().join("|"),
        ];
        row.extend(candidates.iter().map(|c| opt(e.scores.iter().find(|s| s.0 == *c).map(|s| s.1))));
        t.row(row)?;
    }
    t.finish()
}

#[derive(Serialize)]
struct TraceEntry<'a> {
    scenario: Scenario,
    rule: RuleId,
    classes: usize,
    result: &'a EquilibriumResult,
}

pub fn write_study(out: &OutDir, res: &StudyResults) -> Result<(), CliError> {
    let mut header = vec!["scenario".to_string(), "rule".into(), "abbrev".into()];
    header.extend(metric_header(""));
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t1 = out.csv("table1.csv", &h)?;
    for row in &res.truth {
        let mut fields =
            vec![row.scenario.name().to_string(), row.rule.name().to_string(), row.rule.abbrev().to_string()];
        fields.extend(row.metrics.iter().map(|&v| num(v)));
        t1.row(fields)?;
    }
    t1.finish()?;

    let mut t2 = out.csv(
        "table2.csv",
        &[
            "scenario",
            "rule",
            "classes",
            "alpha_1",
            "alpha_2",
            "alpha_3",
            "mean_shave_pct",
            "efficiency_pct",
            "converged",
            "iterations",
            "reference",
        ],
    )?;
    for c in &res.conditions {
        let eq = &c.equilibrium;
        let mut fields = vec![c.scenario.name().to_string(), c.rule.name().to_string(), c.classes.to_string()];
        fields.extend((0..3).map(|k| opt(eq.profile.alphas.get(k).copied())));
        fields.extend([
            pct(eq.mean_shave),
            pct(eq.efficiency),
            eq.converged.to_string(),
            eq.iterations.to_string(),
            c.reference.to_string(),
        ]);
        t2.row(fields)?;
    }
    t2.finish()?;

    write_correlations(out, "table3.csv", &res.truth_correlations)?;
    write_correlations(out, "table4.csv", &res.equilibrium_correlations)?;

    // In-equilibrium metrics averaged over scenarios, per (rule, classes).
    let mut header = vec!["rule".to_string(), "classes".into(), "scenarios".into()];
    header.extend(metric_header(""));
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t5 = out.csv("table5.csv", &h)?;
    let mut groups: Vec<(RuleId, usize)> = Vec::new();
    for c in &res.conditions {
        if !groups.contains(&(c.rule, c.classes)) {
            groups.push((c.rule, c.classes));
        }
    }
    for (rule, k) in groups {
        let members: Vec<&ConditionResult> =
            res.conditions.iter().filter(|c| c.rule == rule && c.classes == k).collect();
        let n = members.len() as f64;
        let mut fields = vec![rule.name().to_string(), k.to_string(), members.len().to_string()];
        fields.extend(
            (0..Metric::ALL.len()).map(|j| num(members.iter().map(|c| c.equilibrium_metrics[j]).sum::<f64>() / n)),
        );
        t5.row(fields)?;
    }
    t5.finish()?;

    let mut header = vec![
        "scenario".to_string(),
        "rule".into(),
        "classes".into(),
        "reference".into(),
        "converged".into(),
        "iterations".into(),
        "mean_shave_pct".into(),
        "efficiency_pct".into(),
    ];
    header.extend(metric_header("truth_"));
    header.extend(metric_header("equilibrium_"));
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut tc = out.csv("conditions.csv", &h)?;
    for c in &res.conditions {
        let eq = &c.equilibrium;
        let mut fields = vec![
            c.scenario.name().to_string(),
            c.rule.name().to_string(),
            c.classes.to_string(),
            c.reference.to_string(),
            eq.converged.to_string(),
            eq.iterations.to_string(),
            pct(eq.mean_shave),
            pct(eq.efficiency),
        ];
        fields.extend(c.truth_metrics.iter().map(|&v| num(v)));
        fields.extend(c.equilibrium_metrics.iter().map(|&v| num(v)));
        tc.row(fields)?;
    }
    tc.finish()?;

    write_density(out, "fig1_surplus_gev.csv", &res.surplus_fits, true)?;
    write_density(out, "fig2_payoff_gpd.csv", &res.payoff_fits, false)?;
    write_fit_params(out, "fits.csv", &res.surplus_fits, &res.payoff_fits)?;

    let mut t3 = out.csv("fig3_payoff_cdf.csv", &["scenario", "rule", "x", "cdf", "samples"])?;
    for (s, rule, samples) in &res.normalized_payoffs {
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        for j in 0..CDF_POINTS {
            let x = j as f64 / (CDF_POINTS - 1) as f64;
            let below = sorted.partition_point(|&v| v <= x);
            let cdf = if sorted.is_empty() { None } else { Some(below as f64 / sorted.len() as f64) };
            t3.row([s.name().to_string(), rule.name().to_string(), num(x), opt(cdf), sorted.len().to_string()])?;
        }
    }
    t3.finish()?;

    let mut t4 =
        out.csv("fig4_single_deviation.csv", &["scenario", "instance", "agent", "rule", "rho", "profit", "trades"])?;
    for c in &res.single_curves {
        for p in &c.points {
            t4.row([
                c.scenario.name().to_string(),
                c.instance.to_string(),
                c.agent.to_string(),
                c.rule.name().to_string(),
                num(p.rho),
                num(p.profit),
                p.trades.to_string(),
            ])?;
        }
    }
    t4.finish()?;

    for (j, name) in
        ["fig5_expected_deviation.csv", "fig6_conditional_gain.csv", "fig7_conditional_loss.csv"].iter().enumerate()
    {
        let curves: Vec<(Scenario, &DeviationCurve)> = res.deviation_curves.iter().map(|(s, c)| (*s, &c[j])).collect();
        write_curves(out, name, &curves)?;
    }

    write_online(out, "fig8_online.csv", &res.online)?;

    let traces: Vec<TraceEntry> = res
        .conditions
        .iter()
        .map(|c| TraceEntry { scenario: c.scenario, rule: c.rule, classes: c.classes, result: &c.equilibrium })
        .collect();
    out.write_json("equilibrium_traces.json", &traces)?;
    Ok(())
}
