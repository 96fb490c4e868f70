//! Maximum-likelihood fits of extreme-value models: GEV for optimal surplus,
//! and GPD (threshold 0) or exponential for payoff exceedences.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::optimize::{nelder_mead, Minimum, NelderMeadOptions};
use crate::{rng, Error, Result};

/// Shape parameters are kept inside `[-SHAPE_LIMIT, SHAPE_LIMIT]`.
pub const SHAPE_LIMIT: f64 = 0.9;
pub const MIN_SAMPLES: usize = 30;
const RESTARTS: usize = 5;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const RESTART_SEED: u64 = 0x6d6c_655f_6669_7473;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub scale: f64,
    pub shape: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpParams {
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit<P> {
    pub params: P,
    pub log_likelihood: f64,
}

fn tiny_shape(xi: f64) -> bool {
    math::abs(xi) < 1e-12
}

fn clamp_shape(xi: f64) -> f64 {
    xi.clamp(-SHAPE_LIMIT, SHAPE_LIMIT)
}

pub fn gev_log_pdf(x: f64, p: &GevParams) -> f64 {
    let z = (x - p.location) / p.scale;
    let ln_s = math::ln(p.scale);
    if tiny_shape(p.shape) {
        return -ln_s - z - math::exp(-z);
    }
    let u = p.shape * z;
    if u <= -1.0 {
        return f64::NEG_INFINITY;
    }
    let ln_t = math::ln_1p(u);
    -ln_s - (1.0 + 1.0 / p.shape) * ln_t - math::exp(-ln_t / p.shape)
}

pub fn gev_pdf(x: f64, p: &GevParams) -> f64 {
    math::exp(gev_log_pdf(x, p))
}

pub fn gpd_log_pdf(x: f64, p: &GpdParams) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    let ln_s = math::ln(p.scale);
    if tiny_shape(p.shape) {
        return -ln_s - x / p.scale;
    }
    let u = p.shape * x / p.scale;
    if u <= -1.0 {
        return f64::NEG_INFINITY;
    }
    -ln_s - (1.0 + 1.0 / p.shape) * math::ln_1p(u)
}

pub fn gpd_pdf(x: f64, p: &GpdParams) -> f64 {
    math::exp(gpd_log_pdf(x, p))
}

pub fn exp_pdf(x: f64, p: &ExpParams) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        p.rate * math::exp(-p.rate * x)
    }
}

fn gev_log_likelihood(xs: &[f64], p: &GevParams) -> f64 {
    xs.iter().map(|&x| gev_log_pdf(x, p)).sum()
}

fn gpd_log_likelihood(xs: &[f64], p: &GpdParams) -> f64 {
    xs.iter().map(|&x| gpd_log_pdf(x, p)).sum()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn check_samples(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(alloc::format!(
            "{} samples given, at least {MIN_SAMPLES} needed",
            xs.len()
        )));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(String::from("samples must be finite")));
    }
    let (mean, var) = mean_var(xs);
    if !(var > 0.0) {
        return Err(Error::Domain(String::from("degenerate sample: all values equal")));
    }
    Ok((mean, var))
}

fn opts() -> NelderMeadOptions {
    NelderMeadOptions { f_tol: 1e-8, max_evals: 20_000 }
}

fn best_of(runs: impl IntoIterator<Item = Minimum>) -> Minimum {
    runs.into_iter().reduce(|a, b| if b.value < a.value { b } else { a }).expect("at least one run")
}

/// Gumbel (GEV with zero shape) maximum-likelihood fit.
pub fn fit_gumbel(xs: &[f64]) -> Result<Fit<GevParams>> {
    let (mean, var) = check_samples(xs)?;
    let scale0 = math::sqrt(6.0 * var) / core::f64::consts::PI;
    let loc0 = mean - EULER_GAMMA * scale0;
    let nll = |q: &[f64]| {
        let p = GevParams { location: q[0], scale: math::exp(q[1]), shape: 0.0 };
        -gev_log_likelihood(xs, &p)
    };
    let first = nelder_mead(nll, &[loc0, math::ln(scale0)], &[scale0 * 0.5, 0.3], &opts());
    let m = nelder_mead(nll, &first.x, &[scale0 * 0.05, 0.03], &opts());
    let params = GevParams { location: m.x[0], scale: math::exp(m.x[1]), shape: 0.0 };
    Ok(Fit { params, log_likelihood: -m.value })
}

/// GEV maximum-likelihood fit by multistart Nelder-Mead.
///
/// The first start is the Gumbel optimum, so the returned log-likelihood is
/// never below the Gumbel fit.
pub fn fit_gev(xs: &[f64]) -> Result<Fit<GevParams>> {
    let gumbel = fit_gumbel(xs)?;
    let (mean, var) = mean_var(xs);
    let sd = math::sqrt(var);
    let nll = |q: &[f64]| {
        let p = GevParams { location: q[0], scale: math::exp(q[1]), shape: clamp_shape(q[2]) };
        -gev_log_likelihood(xs, &p)
    };
    let g = gumbel.params;
    let step = [0.3 * g.scale, 0.2, 0.1];
    let mut rng = rng::from_seed(RESTART_SEED);
    let mut runs = Vec::with_capacity(RESTARTS + 1);
    runs.push(nelder_mead(nll, &[g.location, math::ln(g.scale), 0.0], &step, &opts()));
    for _ in 0..RESTARTS {
        let shape = rng.gen_range(-0.5..0.5);
        let scale = math::sqrt(6.0 * var) / core::f64::consts::PI * rng.gen_range(0.5..1.5);
        let location = mean - EULER_GAMMA * scale + rng.gen_range(-0.5..0.5) * sd;
        runs.push(nelder_mead(nll, &[location, math::ln(scale), shape], &step, &opts()));
    }
    let best = best_of(runs);
    let polished = nelder_mead(nll, &best.x, &[0.02 * g.scale, 0.02, 0.01], &opts());
    let m = best_of([best, polished]);
    let params = GevParams { location: m.x[0], scale: math::exp(m.x[1]), shape: clamp_shape(m.x[2]) };
    Ok(Fit { params, log_likelihood: -m.value })
}

fn check_nonnegative(xs: &[f64]) -> Result<()> {
    if xs.iter().any(|&x| x < 0.0) {
        return Err(Error::Domain(String::from("exceedences must be nonnegative")));
    }
    Ok(())
}

/// Closed-form exponential fit, `rate = 1 / mean`.
pub fn fit_exponential(xs: &[f64]) -> Result<Fit<ExpParams>> {
    check_nonnegative(xs)?;
    let (mean, _) = check_samples(xs)?;
    let rate = 1.0 / mean;
    let n = xs.len() as f64;
    Ok(Fit { params: ExpParams { rate }, log_likelihood: n * math::ln(rate) - n })
}

/// GPD fit with threshold 0. Starts from the exponential optimum, so the
/// result is never worse than [`fit_exponential`].
pub fn fit_gpd(xs: &[f64]) -> Result<Fit<GpdParams>> {
    fit_exponential(xs)?;
    let (mean, var) = mean_var(xs);
    let nll = |q: &[f64]| {
        let p = GpdParams { scale: math::exp(q[0]), shape: clamp_shape(q[1]) };
        -gpd_log_likelihood(xs, &p)
    };
    let step = [0.2, 0.1];
    let ratio = mean * mean / var;
    let mom_shape = clamp_shape(0.5 * (1.0 - ratio));
    let mom_scale = 0.5 * mean * (ratio + 1.0);
    let mut rng = rng::from_seed(RESTART_SEED ^ 1);
    let mut runs = Vec::with_capacity(RESTARTS + 1);
    runs.push(nelder_mead(nll, &[math::ln(mean), 0.0], &step, &opts()));
    for k in 0..RESTARTS {
        let (scale, shape) = if k == 0 {
            (mom_scale, mom_shape)
        } else {
            (mom_scale * rng.gen_range(0.5..1.5), clamp_shape(mom_shape + rng.gen_range(-0.3..0.3)))
        };
        runs.push(nelder_mead(nll, &[math::ln(scale), shape], &step, &opts()));
    }
    let best = best_of(runs);
    let polished = nelder_mead(nll, &best.x, &[0.02, 0.01], &opts());
    let m = best_of([best, polished]);
    let params = GpdParams { scale: math::exp(m.x[0]), shape: clamp_shape(m.x[1]) };
    Ok(Fit { params, log_likelihood: -m.value })
}

/// Equal-width density histogram over the sample range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityHistogram {
    pub centers: Vec<f64>,
    pub width: f64,
    pub density: Vec<f64>,
}

pub fn density_histogram(xs: &[f64], n_bins: usize) -> Result<DensityHistogram> {
    if xs.is_empty() || n_bins == 0 {
        return Err(Error::InsufficientData(String::from("no samples to bin")));
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let mut counts = alloc::vec![0usize; n_bins];
    for &x in xs {
        let b = (math::floor((x - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    let n = xs.len() as f64;
    Ok(DensityHistogram {
        centers: (0..n_bins).map(|b| lo + width * (b as f64 + 0.5)).collect(),
        width,
        density: counts.iter().map(|&c| c as f64 / (n * width)).collect(),
    })
}
