//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line.

use std::path::Path;
use std::time::Instant;

use mechforge::config::Config;
use mechforge::study;
use mechforge_core::deviation::unilateral_points;
use mechforge_core::equilibrium::{apply_shave, deviation_utility, iterate_equilibrium, IterationParams};
use mechforge_core::fitting::{fit_exponential, fit_gev, fit_gpd, GevParams, GpdParams};
use mechforge_core::generators::{generate, generate_batch};
use mechforge_core::metrics::{
    build_histogram_on, evaluate_metric, kl_divergence, payoff_pairs, solve_all, LpNorm, Metric, MetricConfig,
};
use mechforge_core::online::{run_online_search, EquilibriumCache, OnlineConfig};
use mechforge_core::payment::{allocate_discounts, settle};
use mechforge_core::stats::{correlation, correlation_p_value};
use mechforge_core::wd::{efficient_trade_goods, exhaustive_efficient_trade};
use mechforge_core::{rng, GeneratorConfig, Instance, RuleId, Scenario, WdResult};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn truthful_solve(instances: &[Instance]) -> Vec<WdResult> {
    let reports: Vec<_> = instances.iter().map(Instance::valuations).collect();
    solve_all(instances, &reports)
}

fn wd_exactness() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for scenario in Scenario::ALL {
        for k in 0..500u64 {
            // 2 to 8 agents with 1 to 4 atoms each
            let mut cfg = GeneratorConfig::for_scenario(scenario);
            cfg.n_buyers = 1 + (k % 4) as usize;
            cfg.n_sellers = 1 + ((k / 4) % 4) as usize;
            cfg.atoms_per_agent = 1 + ((k / 16) % 4) as usize;
            let inst = generate(&cfg, 10_000 + k).map_err(|e| e.to_string())?;
            let reports = inst.valuations();
            let (p1, v1) = efficient_trade_goods(inst.goods, &reports);
            let (p2, v2) = exhaustive_efficient_trade(inst.goods, &reports);
            if v1.to_bits() != v2.to_bits() || p1 != p2 {
                return Err(format!("{scenario} instance {k}: {v1} vs exhaustive {v2}"));
            }
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("{checked} instances identical to enumeration in {secs:.1}s"))
}

fn vcg_strategyproof() -> Outcome {
    let shaves: Vec<f64> = (0..20).map(|j| -0.5 + 0.075 * j as f64).collect();
    let rhos: Vec<f64> = (1..=20).map(|j| 0.05 * j as f64).collect();
    let mut deviations = 0usize;
    let mut violations = 0usize;
    for k in 0..200u64 {
        let scenario = Scenario::ALL[(k % 3) as usize];
        let inst = generate(&GeneratorConfig::for_scenario(scenario), 20_000 + k).map_err(|e| e.to_string())?;
        let truth = inst.valuations();
        let wd = WdResult::solve(&inst, &truth);
        for i in 0..inst.n_agents() {
            let honest =
                deviation_utility(&inst, i, &truth, truth[i].clone(), RuleId::Vcg).map_err(|e| e.to_string())?;
            for &a in &shaves {
                let u = deviation_utility(&inst, i, &truth, apply_shave(&truth[i], a), RuleId::Vcg)
                    .map_err(|e| e.to_string())?;
                deviations += 1;
                if u > honest + 1e-9 {
                    violations += 1;
                }
            }
            // single-atom reports; profit is normalized so that truth scores 1
            if let Some(points) = unilateral_points(&inst, i, RuleId::Vcg, &rhos).map_err(|e| e.to_string())? {
                let scale = wd.vcg_discounts[i];
                for p in points {
                    deviations += 1;
                    if (p.profit - 1.0) * scale > 1e-9 {
                        violations += 1;
                    }
                }
            }
        }
    }
    check(violations == 0, format!("{violations} violations in {deviations} misreports"))
}

fn budget_balance() -> Outcome {
    let mut residual = 0usize;
    let mut settlements = 0usize;
    for scenario in Scenario::ALL {
        let cfg = GeneratorConfig::for_scenario(scenario);
        let instances = generate_batch(&cfg, 3, "balance", 1000).map_err(|e| e.to_string())?;
        for inst in &instances {
            let truth = inst.valuations();
            let wd = WdResult::solve(inst, &truth);
            let scale = wd.surplus.abs().max(1.0);
            for rule in RuleId::ALL {
                let s = settle(inst.goods, &truth, rule).map_err(|e| e.to_string())?;
                settlements += 1;
                let total: f64 = s.payments.iter().sum();
                if rule.is_balanced() && total.abs() > 1e-9 * scale {
                    return Err(format!("{rule} on {scenario}: payments sum to {total}"));
                }
                if s.residual {
                    residual += 1;
                    continue;
                }
                if rule != RuleId::Equal {
                    for (d, cap) in s.discounts.iter().zip(&wd.vcg_discounts) {
                        if *d > cap + 1e-9 * scale || *d < -1e-12 {
                            return Err(format!("{rule} on {scenario}: discount {d} outside [0, {cap}]"));
                        }
                    }
                }
            }
        }
    }
    Ok(format!("{settlements} settlements balanced; {residual} flagged as residual (VCG discounts below V*)"))
}

/// Smallest grid point satisfying a monotone predicate, refined by bisection.
fn grid_then_bisect(lo: f64, hi: f64, feasible: impl Fn(f64) -> bool, increasing: bool) -> f64 {
    let steps = 100;
    let h = (hi - lo) / steps as f64;
    let point = |j: usize| if increasing { lo + h * j as f64 } else { hi - h * j as f64 };
    let j = (0..=steps).find(|&j| feasible(point(j))).unwrap_or(steps);
    if j == 0 {
        return point(0);
    }
    let (mut bad, mut good) = (point(j - 1), point(j));
    for _ in 0..200 {
        let mid = 0.5 * (bad + good);
        if feasible(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}

fn threshold_reverse_optimal() -> Outcome {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut seed = 0u64;
    while checked < 200 {
        let scenario = Scenario::ALL[(seed % 3) as usize];
        let inst = generate(&GeneratorConfig::for_scenario(scenario), 30_000 + seed).map_err(|e| e.to_string())?;
        seed += 1;
        let wd = WdResult::solve(&inst, &inst.valuations());
        let trading = wd.trading();
        let caps: Vec<f64> = (0..trading.len()).map(|i| if trading[i] { wd.vcg_discounts[i] } else { 0.0 }).collect();
        let n_trading = trading.iter().filter(|&&t| t).count();
        let total: f64 = caps.iter().sum();
        if n_trading == 0 || n_trading > 5 || total < wd.surplus || wd.surplus <= 0.0 {
            continue;
        }
        let budget = wd.surplus;
        let top = caps.iter().copied().fold(0.0, f64::max);
        let positive: Vec<f64> = caps.iter().copied().filter(|&c| c > 0.0).collect();
        // min over balanced capped allocations of the largest regret
        let minmax =
            grid_then_bisect(0.0, top, |c| caps.iter().map(|&x| (x - c).max(0.0)).sum::<f64>() <= budget, true);
        // max over balanced capped allocations of the smallest positive-cap regret
        let floor_max = positive.iter().copied().fold(f64::INFINITY, f64::min);
        let maxmin =
            grid_then_bisect(0.0, floor_max, |r| positive.iter().map(|&x| x - r).sum::<f64>() >= budget, false);
        let t =
            allocate_discounts(RuleId::Threshold, &wd.vcg_discounts, &trading, budget).map_err(|e| e.to_string())?;
        let r = allocate_discounts(RuleId::Reverse, &wd.vcg_discounts, &trading, budget).map_err(|e| e.to_string())?;
        let t_max = caps.iter().zip(&t.discounts).map(|(c, d)| c - d).fold(0.0, f64::max);
        let r_min =
            caps.iter().zip(&r.discounts).filter(|(c, _)| **c > 0.0).map(|(c, d)| c - d).fold(f64::INFINITY, f64::min);
        let err = (t_max - minmax).abs().max((r_min - maxmin).abs());
        worst = worst.max(err);
        if err > 1e-6 {
            return Err(format!("instance {seed}: threshold {t_max} vs {minmax}, reverse {r_min} vs {maxmin}"));
        }
        checked += 1;
    }
    Ok(format!("{checked} instances, largest gap to the oracle {worst:.2e}"))
}

fn l1_identity() -> Outcome {
    let mut rows = Vec::new();
    for scenario in Scenario::ALL {
        let instances =
            generate_batch(&GeneratorConfig::for_scenario(scenario), 5, "l1", 1000).map_err(|e| e.to_string())?;
        let solved = truthful_solve(&instances);
        let per_rule: Vec<Vec<f64>> = RuleId::CAPPED
            .iter()
            .map(|&rule| {
                payoff_pairs(&solved, rule)
                    .map(|pairs| pairs.iter().map(|p| LpNorm::L1.distance(&p.reference, &p.mechanism)).collect())
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        for d in &per_rule[1..] {
            for (a, b) in d.iter().zip(&per_rule[0]) {
                if (a - b).abs() > 1e-9 {
                    return Err(format!("{scenario}: per-instance L1 distances differ ({a} vs {b})"));
                }
            }
        }
        let col: Vec<f64> = RuleId::CAPPED
            .iter()
            .map(|&rule| evaluate_metric(&solved, rule, Metric::L1Norm, &MetricConfig::default()).map(|m| m.value))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        if col.iter().any(|v| (v - col[0]).abs() > 1e-9) {
            return Err(format!("{scenario}: L1norm column {col:?}"));
        }
        rows.push(format!("{scenario} {:.4}", col[0]));
    }
    Ok(format!("L1norm constant across capped rules ({})", rows.join(", ")))
}

fn kl_properties() -> Outcome {
    let cfg = MetricConfig::default();
    let mut g = rng::from_seed(6);
    for _ in 0..10_000 {
        let n1 = g.gen_range(1..200);
        let n2 = g.gen_range(1..200);
        let a: Vec<f64> = (0..n1).map(|_| g.gen::<f64>() * 1.2).collect();
        let b: Vec<f64> = (0..n2).map(|_| g.gen::<f64>().powi(3)).collect();
        let ha = build_histogram_on(&a, 0.0, 1.0, cfg.n_bins, cfg.pseudo_count).map_err(|e| e.to_string())?;
        let hb = build_histogram_on(&b, 0.0, 1.0, cfg.n_bins, cfg.pseudo_count).map_err(|e| e.to_string())?;
        let d = kl_divergence(&ha, &hb).map_err(|e| e.to_string())?;
        let same = kl_divergence(&ha, &ha).map_err(|e| e.to_string())?;
        if d.is_nan() || d < 0.0 || same != 0.0 {
            return Err(format!("KL = {d}, self-divergence {same}"));
        }
    }
    let mut notes = Vec::new();
    for scenario in Scenario::ALL {
        for seed in 0..3u64 {
            let instances = generate_batch(&GeneratorConfig::for_scenario(scenario), seed, "instances", 1000)
                .map_err(|e| e.to_string())?;
            let solved = truthful_solve(&instances);
            let kl =
                |rule| evaluate_metric(&solved, rule, Metric::KlNorm, &cfg).map(|m| m.value).map_err(|e| e.to_string());
            let values: Vec<(RuleId, f64)> =
                RuleId::ALL.iter().map(|&r| kl(r).map(|v| (r, v))).collect::<Result<_, _>>()?;
            let nd = values.iter().find(|v| v.0 == RuleId::NoDiscount).unwrap().1;
            if values.iter().any(|v| v.1 > nd) {
                return Err(format!("{scenario} seed {seed}: No Discount is not the maximum ({values:?})"));
            }
            if scenario == Scenario::Super {
                let balanced: Vec<&(RuleId, f64)> = values.iter().filter(|v| v.0.is_balanced()).collect();
                let small = values.iter().find(|v| v.0 == RuleId::Small).unwrap().1;
                if balanced.iter().any(|v| v.1 < small) {
                    return Err(format!("super seed {seed}: Small is not the minimum ({values:?})"));
                }
                notes.push(format!("{small:.3}"));
            }
        }
    }
    Ok(format!(
        "KL >= 0 on 10000 pairs; No Discount maximal everywhere; Small minimal on super (KLnorm {})",
        notes.join(", ")
    ))
}

fn equilibrium_sanity() -> Outcome {
    let start = Instant::now();
    let params = IterationParams::default();
    let resolution = (params.initial_grid.1 - params.initial_grid.0) / (params.grid_points - 1) as f64;
    for scenario in Scenario::ALL {
        let eq = iterate_equilibrium(&GeneratorConfig::for_scenario(scenario), RuleId::Vcg, 1, &params, 7)
            .map_err(|e| e.to_string())?;
        if eq.mean_shave > resolution {
            return Err(format!("VCG shaves {} on {scenario}", eq.mean_shave));
        }
    }
    let cfg = GeneratorConfig::for_scenario(Scenario::Super);
    let s = iterate_equilibrium(&cfg, RuleId::Small, 1, &params, 7).map_err(|e| e.to_string())?;
    let t = iterate_equilibrium(&cfg, RuleId::Threshold, 1, &params, 7).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        s.mean_shave < t.mean_shave && s.efficiency >= t.efficiency && secs < 1800.0,
        format!(
            "Small shave {:.2}% eff {:.2}% vs Threshold shave {:.2}% eff {:.2}% ({secs:.1}s)",
            100.0 * s.mean_shave,
            100.0 * s.efficiency,
            100.0 * t.mean_shave,
            100.0 * t.efficiency
        ),
    )
}

fn correlation_formula() -> Outcome {
    let p = correlation_p_value(-0.3814, 54);
    let two_sig = format!("{p:.1e}");
    if two_sig != "4.4e-3" || (p - 0.004433).abs() > 5e-6 {
        return Err(format!("p = {p}"));
    }
    let mut g = rng::from_seed(8);
    let trials = 1000;
    let mut rejections = 0;
    for _ in 0..trials {
        let xs: Vec<f64> = (0..54).map(|_| g.gen()).collect();
        let ys: Vec<f64> = (0..54).map(|_| g.gen()).collect();
        if correlation(&xs, &ys).map_err(|e| e.to_string())?.p < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / trials as f64;
    check((rate - 0.05).abs() <= 0.02, format!("p(r=-0.3814, n=54) = {p:.6}; null rejection rate {rate:.3}"))
}

fn fitting_checks() -> Outcome {
    let mut notes = Vec::new();
    let config = Config::default();
    for scenario in Scenario::ALL {
        let (_, payoffs) = study::fit_samples(&config, scenario, 1000).map_err(|e| e.to_string())?;
        let gpd = fit_gpd(&payoffs).map_err(|e| e.to_string())?;
        let exp = fit_exponential(&payoffs).map_err(|e| e.to_string())?;
        if gpd.log_likelihood < exp.log_likelihood {
            return Err(format!("{scenario}: GPD {} < exponential {}", gpd.log_likelihood, exp.log_likelihood));
        }
        notes.push(format!("{scenario} {:+.1}", gpd.log_likelihood - exp.log_likelihood));
    }
    let mut g = rng::from_seed(9);
    let gumbel: Vec<f64> = (0..10_000).map(|_| -(-(g.gen::<f64>().max(1e-300)).ln()).ln()).collect();
    let fit: GevParams = fit_gev(&gumbel).map_err(|e| e.to_string())?.params;
    if fit.shape.abs() > 0.05 {
        return Err(format!("Gumbel sample fitted with shape {}", fit.shape));
    }
    let shifted: Vec<f64> = gumbel.iter().map(|x| 3.0 * x + 2.0).collect();
    let fit2 = fit_gev(&shifted).map_err(|e| e.to_string())?.params;
    if (fit2.location - (3.0 * fit.location + 2.0)).abs() > 1e-2
        || (fit2.scale - 3.0 * fit.scale).abs() > 1e-2
        || (fit2.shape - fit.shape).abs() > 1e-3
    {
        return Err(format!("equivariance: {fit:?} vs {fit2:?}"));
    }
    let expo: Vec<f64> = (0..10_000).map(|_| -(1.0 - g.gen::<f64>()).ln() / 2.0).collect();
    let p: GpdParams = fit_gpd(&expo).map_err(|e| e.to_string())?.params;
    if p.shape.abs() > 0.05 || (p.scale - 0.5).abs() > 0.05 {
        return Err(format!("exponential sample fitted with {p:?}"));
    }
    Ok(format!("GPD - exponential log-likelihood: {}; synthetic recovery within tolerance", notes.join(", ")))
}

fn online_selection() -> Outcome {
    let start = Instant::now();
    let generator = GeneratorConfig::for_scenario(Scenario::Decay);
    let config = OnlineConfig { epochs: 15, ..OnlineConfig::default() };
    let mut good = 0;
    let mut notes = Vec::new();
    for seed in 0..3u64 {
        let mut cache = EquilibriumCache::default();
        let trace = run_online_search(&generator, &config, study::stream(seed, "online"), &mut cache)
            .map_err(|e| e.to_string())?;
        let deployed: Vec<RuleId> = trace.iter().map(|e| e.rule).collect();
        let first = deployed.iter().position(|&r| r == RuleId::Small);
        let stays = first.is_some_and(|f| {
            f < 10 && deployed.len() >= f + 6 && deployed[f..f + 6].iter().all(|&r| r == RuleId::Small)
        });
        if stays {
            good += 1;
        }
        let path: Vec<&str> = deployed.iter().map(|r| r.abbrev()).collect();
        notes.push(format!("seed {seed}: {}", path.join("")));
    }
    let secs = start.elapsed().as_secs_f64();
    check(good >= 2 && secs < 1200.0, format!("{good}/3 seeds settle on Small ({}) in {secs:.1}s", notes.join("; ")))
}

fn reduced_config() -> Config {
    let mut c = Config::default();
    c.metrics.instances = 120;
    let eq = IterationParams {
        instances_per_iteration: 20,
        reference_samples: 300,
        eval_instances: 40,
        max_iterations: 8,
        ..IterationParams::default()
    };
    c.equilibrium = eq.clone();
    c.study.classes = vec![1, 2];
    c.study.fit_instances = 60;
    c.study.deviation_instances = 15;
    c.online.epochs = 3;
    c.online.epoch_size = 20;
    c.online.equilibrium = eq;
    c
}

fn files_of(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg_path = tmp.path().join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&reduced_config()).unwrap()).map_err(|e| e.to_string())?;
    let run = |dir: &Path, config: &Path| {
        mechforge::cli::run([
            "mechforge",
            "study",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            dir.to_str().unwrap(),
        ])
    };
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, config) in [(&a, cfg_path.clone()), (&b, cfg_path.clone()), (&c, a.join("manifest.json"))] {
        let code = run(dir, &config);
        if code != 0 {
            return Err(format!("study exited with {code}"));
        }
    }
    let (fa, fb, fc) = (files_of(&a), files_of(&b), files_of(&c));
    let csvs = fa.iter().filter(|f| f.0.ends_with(".csv")).count();
    check(
        fa == fb && fa == fc && csvs >= 13,
        format!("{} files ({csvs} CSV) identical across two runs and a rerun from the manifest", fa.len()),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("winner determination matches exhaustive enumeration", wd_exactness),
        ("VCG is strategyproof on misreport grids", vcg_strategyproof),
        ("balanced rules balance the budget and respect caps", budget_balance),
        ("Threshold and Reverse match the regret oracle", threshold_reverse_optimal),
        ("capped rules share the L1 distance to VCG", l1_identity),
        ("KL properties and at-truth KLnorm orderings", kl_properties),
        ("equilibrium sanity and Small vs Threshold", equilibrium_sanity),
        ("correlation p-value formula and null rate", correlation_formula),
        ("distribution fitting", fitting_checks),
        ("online selection settles on Small", online_selection),
        ("study outputs are byte-for-byte reproducible", determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2}: PASS  {name}: {detail} [{secs:.1}s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2}: FAIL  {name}: {detail} [{secs:.1}s]", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
