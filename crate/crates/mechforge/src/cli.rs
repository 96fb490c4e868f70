//! Command-line interface.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mechforge_core::deviation::{self, default_rho_grid};
use mechforge_core::equilibrium::iterate_equilibrium;
use mechforge_core::generators::generate;
use mechforge_core::metrics::{evaluate_all, payoffs_from_solved, solve_all, Metric};
use mechforge_core::online::{run_online_search, EquilibriumCache};
use mechforge_core::stats::{self, Correlation};
use mechforge_core::wd::to_lp;
use mechforge_core::{RuleId, Scenario};
use serde::Serialize;

use crate::config::Config;
use crate::error::CliError;
use crate::output::{num, opt, read_csv, Manifest, OutDir};
use crate::study::{self, SIGNIFICANCE};

#[derive(Debug, Parser)]
#[command(name = "mechforge", version, about = "Combinatorial exchange payment-rule laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Directory receiving the outputs and manifest.json.
    #[arg(long, default_value = "results")]
    pub out_dir: PathBuf,
    /// JSON config file (a run manifest is accepted too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate instances as JSON.
    Gen(GenArgs),
    /// Metrics of payment rules at truthful reports.
    Metrics(MetricsArgs),
    /// Restricted equilibrium of one rule by iterated best response.
    Equilibrium(EquilibriumArgs),
    /// Unilateral misreport profit curves.
    Deviation(DeviationArgs),
    /// Extreme-value fits of surplus and VCG payoffs.
    Fit(FitArgs),
    /// Pearson correlation with a two-sided t-test.
    Correlate(CorrelateArgs),
    /// The full study: every table and figure data file.
    Study(StudyArgs),
    /// Online mechanism selection over epochs.
    Online(OnlineArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, default_value = "super")]
    pub scenario: Scenario,
    /// Number of instances; instance k uses seed + k.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Also write each winner-determination program in LP format.
    #[arg(long)]
    pub emit_lp: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, default_value = "super")]
    pub scenario: Scenario,
    /// Rule name or letter (repeatable); all rules when omitted.
    #[arg(long = "rule")]
    pub rules: Vec<RuleId>,
    /// Instance count; defaults to the config's metrics.instances.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Also write every payoff sample to samples.csv.
    #[arg(long)]
    pub dump_samples: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EquilibriumArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, default_value = "super")]
    pub scenario: Scenario,
    #[arg(long, default_value = "small")]
    pub rule: RuleId,
    /// Valuation classes (1 to 3).
    #[arg(long, default_value_t = 1)]
    pub classes: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct DeviationArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, default_value = "super")]
    pub scenario: Scenario,
    /// Rule name or letter (repeatable); all rules when omitted.
    #[arg(long = "rule")]
    pub rules: Vec<RuleId>,
    /// Instance count; defaults to the config's study.deviation_instances.
    #[arg(long)]
    pub instances: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, default_value = "super")]
    pub scenario: Scenario,
    /// Instance count; defaults to the config's study.fit_instances.
    #[arg(long)]
    pub instances: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct CorrelateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// CSV file holding the two series.
    #[arg(long, requires_all = ["x", "y"], conflicts_with_all = ["r", "n"])]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long)]
    pub y: Option<String>,
    /// Test a given coefficient instead of computing one.
    #[arg(long, requires = "n", allow_hyphen_values = true)]
    pub r: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct StudyArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct OnlineArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, default_value = "decay")]
    pub scenario: Scenario,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub epoch_size: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}

/// Applies `MECHFORGE_THREADS` to the global worker pool.
fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("MECHFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("MECHFORGE_THREADS must be a positive integer, got `{value}`")))?;
    // A pool that is already running (e.g. a second in-process run) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn setup<A: Serialize>(command: &str, common: &Common, args: &A) -> Result<(Config, OutDir), CliError> {
    configure_threads()?;
    let mut config = Config::load_or_default(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let manifest = Manifest::new(command, serde_json::to_value(args)?, &config)?;
    let out = OutDir::create(&common.out_dir, manifest)?;
    Ok((config, out))
}

fn metric_header(first: &[&str]) -> Vec<String> {
    first.iter().map(|s| s.to_string()).chain(Metric::ALL.iter().map(|m| m.name().to_string())).collect()
}

fn rules_or_all(rules: &[RuleId]) -> Vec<RuleId> {
    if rules.is_empty() {
        RuleId::ALL.to_vec()
    } else {
        rules.to_vec()
    }
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Equilibrium(a) => cmd_equilibrium(a),
        Command::Deviation(a) => cmd_deviation(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Correlate(a) => cmd_correlate(a),
        Command::Study(a) => cmd_study(a),
        Command::Online(a) => cmd_online(a),
    }
}

fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    let (config, out) = setup("gen", &a.common, &a)?;
    let gen = config.generators.get(a.scenario);
    for k in 0..a.count as u64 {
        let seed = config.seed.wrapping_add(k);
        let inst = generate(&gen, seed)?;
        let stem = format!("{}_{seed}", a.scenario);
        out.write_json(&format!("{stem}.json"), &inst)?;
        if a.emit_lp {
            out.write_text(&format!("{stem}.lp"), &to_lp(inst.goods, &inst.valuations()))?;
        }
    }
    println!("wrote {} instance(s) to {}", a.count, a.common.out_dir.display());
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<(), CliError> {
    let (config, out) = setup("metrics", &a.common, &a)?;
    let n = a.instances.unwrap_or(config.metrics.instances);
    let instances = study::truth_instances(&config, a.scenario, n)?;
    let reports: Vec<_> = instances.iter().map(|i| i.valuations()).collect();
    let solved = solve_all(&instances, &reports);
    let header = metric_header(&["scenario", "rule", "abbrev", "samples"]);
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = out.csv("metrics.csv", &h)?;
    let mut samples = if a.dump_samples {
        Some(out.csv("samples.csv", &["rule", "instance", "agent", "payoff", "normalized"])?)
    } else {
        None
    };
    for rule in rules_or_all(&a.rules) {
        let reports = evaluate_all(&solved, rule, &config.metrics.binning)?;
        let count = reports.first().map_or(0, |r| r.mechanism_samples);
        let mut row =
            vec![a.scenario.to_string(), rule.name().to_string(), rule.abbrev().to_string(), count.to_string()];
        row.extend(reports.iter().map(|r| num(r.value)));
        println!("{}", row.join(","));
        table.row(row)?;
        if let Some(t) = samples.as_mut() {
            for s in payoffs_from_solved(&solved, rule)? {
                t.row([
                    rule.name().to_string(),
                    s.instance.to_string(),
                    s.agent.to_string(),
                    num(s.payoff),
                    opt(s.normalized),
                ])?;
            }
        }
    }
    table.finish()?;
    if let Some(t) = samples {
        t.finish()?;
    }
    Ok(())
}

fn cmd_equilibrium(a: EquilibriumArgs) -> Result<(), CliError> {
    if a.classes == 0 || a.classes > 3 {
        return Err(CliError::Config("--classes must be 1, 2 or 3".into()));
    }
    let (config, out) = setup("equilibrium", &a.common, &a)?;
    let gen = config.generators.get(a.scenario);
    let seed = study::equilibrium_seed(&config, a.scenario, a.classes);
    let eq = iterate_equilibrium(&gen, a.rule, a.classes, &config.equilibrium, seed)?;
    let mut t = out.csv(
        "equilibrium.csv",
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
        ],
    )?;
    let mut row = vec![a.scenario.to_string(), a.rule.name().to_string(), a.classes.to_string()];
    row.extend((0..3).map(|k| opt(eq.profile.alphas.get(k).copied())));
    row.extend([
        num(100.0 * eq.mean_shave),
        num(100.0 * eq.efficiency),
        eq.converged.to_string(),
        eq.iterations.to_string(),
    ]);
    println!("{}", row.join(","));
    t.row(row)?;
    t.finish()?;
    out.write_json("equilibrium_trace.json", &eq)?;
    Ok(())
}

fn cmd_deviation(a: DeviationArgs) -> Result<(), CliError> {
    let (config, out) = setup("deviation", &a.common, &a)?;
    let n = a.instances.unwrap_or(config.study.deviation_instances);
    let instances = study::deviation_instances(&config, a.scenario, n)?;
    let rhos = default_rho_grid();
    let single = study::first_eligible(&instances);
    let mut t = out.csv("deviation.csv", &["scenario", "rule", "variant", "rho", "value", "count"])?;
    for rule in rules_or_all(&a.rules) {
        let mut curves = Vec::new();
        if let Some((k, i)) = single {
            curves.extend(deviation::unilateral_curve(&instances[k], i, rule, &rhos)?);
        }
        let points = deviation::all_points(&instances, rule, &rhos)?;
        curves.extend(deviation::aggregate(rule, &rhos, &points));
        for c in curves {
            for ((&rho, v), cnt) in c.rho.iter().zip(&c.values).zip(&c.counts) {
                t.row([
                    a.scenario.to_string(),
                    rule.name().to_string(),
                    c.variant.name().to_string(),
                    num(rho),
                    opt(*v),
                    cnt.to_string(),
                ])?;
            }
        }
    }
    t.finish()?;
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<(), CliError> {
    let (config, out) = setup("fit", &a.common, &a)?;
    let n = a.instances.unwrap_or(config.study.fit_instances);
    let (surplus, payoffs) = study::fit_samples(&config, a.scenario, n)?;
    let s = study::fit_surplus(a.scenario, surplus)?;
    let p = study::fit_payoffs(a.scenario, payoffs)?;
    if s.gev.is_none() && p.gpd.is_none() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "too few samples to fit (at least {} needed)",
            mechforge_core::fitting::MIN_SAMPLES
        )));
    }
    study::write_fit_params(&out, "fits.csv", std::slice::from_ref(&s), std::slice::from_ref(&p))?;
    study::write_density(&out, "surplus_density.csv", std::slice::from_ref(&s), true)?;
    study::write_density(&out, "payoff_density.csv", std::slice::from_ref(&p), false)?;
    for (name, ll) in [
        ("gev", s.gev.map(|f| f.log_likelihood)),
        ("gumbel", s.gumbel.map(|f| f.log_likelihood)),
        ("gpd", p.gpd.map(|f| f.log_likelihood)),
        ("exponential", p.exponential.map(|f| f.log_likelihood)),
    ] {
        println!("{name}: log-likelihood {}", opt(ll));
    }
    Ok(())
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<f64>, CliError> {
    let j = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Config(format!("no column `{name}` in input")))?;
    rows.iter()
        .map(|r| {
            r.get(j)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::Config(format!("non-numeric value in column `{name}`")))
        })
        .collect()
}

fn cmd_correlate(a: CorrelateArgs) -> Result<(), CliError> {
    let corr: Option<Correlation> = match (&a.input, a.r, a.n) {
        (Some(path), _, _) => {
            let (header, rows) = read_csv(path)?;
            let xs = column(&header, &rows, a.x.as_deref().unwrap_or_default())?;
            let ys = column(&header, &rows, a.y.as_deref().unwrap_or_default())?;
            if xs.len() < 3 {
                return Err(CliError::Config("correlation needs at least 3 rows".into()));
            }
            study::correlate(&xs, &ys)?
        }
        (None, Some(r), Some(n)) => {
            if !(-1.0..=1.0).contains(&r) || n < 3 {
                return Err(CliError::Config("need -1 <= r <= 1 and n >= 3".into()));
            }
            Some(Correlation { r, p: stats::correlation_p_value(r, n), n })
        }
        _ => return Err(CliError::Config("give either --input with --x and --y, or --r with --n".into())),
    };
    let (_, out) = setup("correlate", &a.common, &a)?;
    let n = corr.map_or(0, |c| c.n);
    let mut t = out.csv("correlation.csv", &["n", "r", "p", "significant", "status"])?;
    let row = match corr {
        Some(c) => [n.to_string(), num(c.r), num(c.p), c.significant(SIGNIFICANCE).to_string(), "ok".into()],
        None => [n.to_string(), String::new(), String::new(), String::new(), "undefined".into()],
    };
    println!("{}", row.join(","));
    t.row(row)?;
    t.finish()?;
    Ok(())
}

fn cmd_study(a: StudyArgs) -> Result<(), CliError> {
    let (config, out) = setup("study", &a.common, &a)?;
    let res = study::run_study(&config)?;
    study::write_study(&out, &res)?;
    let unconverged = res.conditions.iter().filter(|c| !c.equilibrium.converged).count();
    println!(
        "study: {} conditions ({} without convergence), outputs in {}",
        res.conditions.len(),
        unconverged,
        a.common.out_dir.display()
    );
    Ok(())
}

fn cmd_online(a: OnlineArgs) -> Result<(), CliError> {
    let (mut config, out) = setup("online", &a.common, &a)?;
    let oc = &mut config.online;
    if let Some(m) = a.metric {
        oc.metric = m;
    }
    if let Some(e) = a.epochs {
        oc.epochs = e;
    }
    if let Some(s) = a.epoch_size {
        oc.epoch_size = s;
    }
    if let Some(k) = a.classes {
        oc.classes = k;
    }
    oc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let gen = config.generators.get(a.scenario);
    let mut cache = EquilibriumCache::default();
    let trace = run_online_search(&gen, &config.online, study::stream(config.seed, "online"), &mut cache)?;
    for e in &trace {
        println!(
            "epoch {:>3}: {} (efficiency {:.4}) -> {}",
            e.epoch,
            e.rule.abbrev(),
            e.efficiency_fraction,
            e.next.abbrev()
        );
    }
    study::write_online(&out, "online.csv", &trace)?;
    Ok(())
}
