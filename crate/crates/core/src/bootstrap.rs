//! Bootstrap standard deviations and confidence intervals.
//!
//! A bootstrap world is a synthetic population assembled from the fitted
//! model: observed cluster sizes replicated up to the frame size, fitted
//! venue effects alongside them, observed persons' predicted effects and
//! responses, and model-based fill-ins for the unobserved remainder. Each
//! replicate redraws a sample from that world and recomputes every estimate.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Continuous, FisherSnedecor, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::estimators::{estimate_set, weighted_observations, BetaPredictor, EstimateKey, EstimateSet, Quantity, Scope};
use crate::likelihood::{fit, FitMethod, FitOptions, RaschFit};
use crate::model::{clamp_prob, FrameGeometry, Portion};
use crate::quadrature::{sigmoid, QuadratureRule};
use crate::rng::{substream, tags, StreamRng};
use crate::sampling::{draw_from, LinkSource, LtsSample, PortionLinkModel, ResponseKind};

/// How unobserved responses are imputed in the bootstrap world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionMode {
    /// Linear for continuous responses, logistic for binary ones.
    #[default]
    Auto,
    ForceLinear,
    ForceLogistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootConfig {
    /// Number of bootstrap replicates.
    #[serde(rename = "B")]
    pub b: usize,
    /// Intervals have level `1 - alpha_level`.
    pub alpha_level: f64,
    pub huber_tuning: f64,
    pub regression_mode: RegressionMode,
}

impl Default for BootConfig {
    fn default() -> Self {
        Self {
            b: 50,
            alpha_level: 0.05,
            huber_tuning: 1.5,
            regression_mode: RegressionMode::Auto,
        }
    }
}

impl BootConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b < 2 {
            return Err(Error::config("bootstrap.B", format!("need B >= 2, got {}", self.b)));
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(Error::config(
                "bootstrap.alpha_level",
                format!("must lie in (0, 1), got {}", self.alpha_level),
            ));
        }
        if !(self.huber_tuning > 0.0) {
            return Err(Error::config("bootstrap.huber_tuning", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CiKind {
    LognormalSize,
    KornGraubardProportion,
    WaldNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRecord {
    pub lower: f64,
    pub upper: f64,
    pub kind: CiKind,
    pub sd_used: f64,
    /// Set when a degenerate or fallback interval was produced.
    pub flag: Option<String>,
}

fn z_upper(alpha_level: f64) -> f64 {
    StdNormal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - alpha_level / 2.0)
}

/// Interval assuming `tau_hat - nu` is lognormal.
pub fn ci_lognormal_size(tau_hat: f64, nu: f64, var_hat: f64, alpha_level: f64) -> CiRecord {
    let sd = var_hat.max(0.0).sqrt();
    let excess = tau_hat - nu;
    if !(excess > 0.0) {
        return CiRecord {
            lower: nu,
            upper: nu,
            kind: CiKind::LognormalSize,
            sd_used: sd,
            flag: Some("estimate does not exceed the observed count".into()),
        };
    }
    let c = (z_upper(alpha_level) * (var_hat.max(0.0) / (excess * excess)).ln_1p().sqrt()).exp();
    CiRecord {
        lower: nu + excess / c,
        upper: nu + excess * c,
        kind: CiKind::LognormalSize,
        sd_used: sd,
        flag: None,
    }
}

/// Clopper-Pearson-type interval with the effective sample size implied by
/// the estimated variance.
pub fn ci_korn_graubard(p_hat: f64, var_hat: f64, alpha_level: f64) -> CiRecord {
    let sd = var_hat.max(0.0).sqrt();
    let record = |lower: f64, upper: f64, flag: Option<String>| CiRecord {
        lower,
        upper,
        kind: CiKind::KornGraubardProportion,
        sd_used: sd,
        flag,
    };
    let mut flag = None;
    let p = if (0.0..=1.0).contains(&p_hat) {
        p_hat
    } else {
        flag = Some("estimate clamped into [0, 1]".to_string());
        p_hat.clamp(0.0, 1.0)
    };
    if var_hat <= 0.0 {
        return record(p, p, Some("zero variance".into()));
    }
    let n_eff = p * (1.0 - p) / var_hat;
    if n_eff <= 1.0 {
        return record(0.0, 1.0, Some("effective sample size <= 1".into()));
    }
    let y = n_eff * p;
    let lower = if y <= 0.0 {
        0.0
    } else {
        let (d1, d2) = (2.0 * y, 2.0 * (n_eff - y + 1.0));
        let f = FisherSnedecor::new(d1, d2).unwrap().inverse_cdf(alpha_level / 2.0);
        d1 * f / (d2 + d1 * f)
    };
    let upper = if y >= n_eff {
        1.0
    } else {
        let (d3, d4) = (2.0 * (y + 1.0), 2.0 * (n_eff - y));
        let f = FisherSnedecor::new(d3, d4).unwrap().inverse_cdf(1.0 - alpha_level / 2.0);
        d3 * f / (d4 + d3 * f)
    };
    record(lower.clamp(0.0, 1.0), upper.clamp(0.0, 1.0), flag)
}

/// Normal-theory interval.
pub fn ci_wald(theta_hat: f64, var_hat: f64, alpha_level: f64) -> CiRecord {
    let sd = var_hat.max(0.0).sqrt();
    let half = z_upper(alpha_level) * sd;
    CiRecord {
        lower: theta_hat - half,
        upper: theta_hat + half,
        kind: CiKind::WaldNormal,
        sd_used: sd,
        flag: if sd == 0.0 { Some("zero variance".into()) } else { None },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberEstimate {
    pub location: f64,
    pub scale: f64,
    /// All values were identical.
    pub zero_spread: bool,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Joint robust location and scale by Huber's proposal 2.
pub fn huber_scale(values: &[f64], tuning: f64) -> Result<HuberEstimate> {
    let b = values.len();
    if b < 2 {
        return Err(Error::invalid(format!("need at least 2 values, got {b}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut mu = median(&sorted);
    if sorted[0] == sorted[b - 1] {
        return Ok(HuberEstimate {
            location: mu,
            scale: 0.0,
            zero_spread: true,
        });
    }
    let mut dev: Vec<f64> = values.iter().map(|v| (v - mu).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mut s = 1.482_602_218_505_602 * median(&dev);
    if s == 0.0 {
        let mean = values.iter().sum::<f64>() / b as f64;
        s = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64).sqrt();
    }
    let k = tuning;
    let std = StdNormal::new(0.0, 1.0).unwrap();
    let chi = (2.0 * std.cdf(k) - 1.0) - 2.0 * k * std.pdf(k) + 2.0 * k * k * (1.0 - std.cdf(k));
    let target = (b - 1) as f64 * chi;
    for _ in 0..1000 {
        let (mut sum_psi, mut sum_psi2) = (0.0, 0.0);
        for &v in values {
            let psi = ((v - mu) / s).clamp(-k, k);
            sum_psi += psi;
            sum_psi2 += psi * psi;
        }
        let mu_new = mu + s * sum_psi / b as f64;
        let s_new = s * (sum_psi2 / target).sqrt();
        let done = (mu_new - mu).abs() <= 1e-12 * s && (s_new - s).abs() <= 1e-12 * s;
        mu = mu_new;
        s = s_new;
        if done {
            break;
        }
    }
    Ok(HuberEstimate {
        location: mu,
        scale: s,
        zero_spread: false,
    })
}

/// Synthetic population for one bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct BootWorld {
    pub m_boot: Vec<usize>,
    pub alpha_boot: [Vec<f64>; 2],
    pub beta_boot: [Vec<f64>; 2],
    pub y_boot: [Vec<f64>; 2],
    /// Predicted effect of an unobserved person, per portion.
    pub beta_zero: [f64; 2],
    /// Persons observed in the original sample, per portion.
    pub observed: [usize; 2],
    pub response: ResponseKind,
    links: LinkSource,
}

impl BootWorld {
    pub fn n_frame(&self) -> usize {
        self.m_boot.len()
    }
}

/// Cluster-size vector: `N / n` copies of the observed sizes plus a random
/// subset for the remainder, trimmed from the end to fit within `cap`.
pub(crate) fn replicate_sizes<R: Rng + ?Sized>(
    sizes: &[usize],
    n_frame: usize,
    cap: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = sizes.len();
    let (a, b) = (n_frame / n, n_frame % n);
    let mut idx: Vec<usize> = (0..a).flat_map(|_| 0..n).collect();
    if b > 0 {
        let mut extra = index::sample(rng, n, b).into_vec();
        extra.sort_unstable();
        idx.extend(extra);
    }
    let mut total: usize = idx.iter().map(|&i| sizes[i]).sum();
    while total > cap && idx.len() > 1 {
        total -= sizes[idx.pop().unwrap()];
    }
    idx
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Imputer {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

fn sample_moments(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    if y.is_empty() {
        return (0.0, 0.0);
    }
    let mean = y.iter().sum::<f64>() / n;
    let var = if y.len() > 1 {
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Condition number of a symmetric 2x2 matrix `[[a, b], [b, c]]`.
fn condition_2x2(a: f64, b: f64, c: f64) -> f64 {
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let (hi, lo) = (mid + rad, mid - rad);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

const SINGULAR_CONDITION: f64 = 1e10;

fn linear_imputer(x: &[f64], y: &[f64], x0: f64) -> Imputer {
    let n = x.len() as f64;
    let (sx, sxx) = (x.iter().sum::<f64>(), x.iter().map(|v| v * v).sum::<f64>());
    if x.len() < 3 || condition_2x2(n, sx, sxx) > SINGULAR_CONDITION {
        let (mean, var) = sample_moments(y);
        return Imputer::Normal { mean, sd: var.sqrt() };
    }
    let (xm, ym) = (sx / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let sxx_c: f64 = x.iter().map(|a| (a - xm).powi(2)).sum();
    let slope = sxy / sxx_c;
    let icpt = ym - slope * xm;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    Imputer::Normal {
        mean: icpt + slope * x0,
        sd: (sse / (n - 2.0)).sqrt(),
    }
}

fn logistic_imputer(x: &[f64], y: &[f64], x0: f64) -> Imputer {
    let fallback = || Imputer::Bernoulli {
        p: sample_moments(y).0.clamp(0.0, 1.0),
    };
    if x.len() < 3 {
        return fallback();
    }
    let (mut b0, mut b1) = (0.0, 0.0);
    for _ in 0..50 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let p = sigmoid(b0 + b1 * xi);
            let w = p * (1.0 - p);
            g0 += yi - p;
            g1 += (yi - p) * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        if condition_2x2(h00, h01, h11) > SINGULAR_CONDITION {
            return fallback();
        }
        let det = h00 * h11 - h01 * h01;
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        b0 += d0;
        b1 += d1;
        if !(b0.is_finite() && b1.is_finite()) {
            return fallback();
        }
        if d0.abs() + d1.abs() <= 1e-10 * (1.0 + b0.abs() + b1.abs()) {
            return Imputer::Bernoulli {
                p: sigmoid(b0 + b1 * x0),
            };
        }
    }
    fallback()
}

impl Imputer {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Imputer::Normal { mean, sd } => {
                if sd > 0.0 {
                    Normal::new(mean, sd).unwrap().sample(rng)
                } else {
                    mean
                }
            }
            Imputer::Bernoulli { p } => {
                if Bernoulli::new(p).unwrap().sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn portion_side<R: Rng + ?Sized>(
    sample: &LtsSample,
    fit: &RaschFit,
    geom: &FrameGeometry,
    rule: &QuadratureRule,
    mode: RegressionMode,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let size = fit.tau_hat.floor() as usize;
    let pred = BetaPredictor::new(fit, geom, rule)?;
    let obs = weighted_observations(sample, fit, geom, rule)?;
    let mut beta: Vec<f64> = sample
        .portion_members(fit.portion)
        .map(|p| pred.beta_for(p.stratum, &p.pattern))
        .collect();
    let mut y: Vec<f64> = obs.iter().map(|o| o.0).collect();
    if beta.len() > size {
        return Err(Error::DegenerateWorld(format!(
            "size estimate {} below the observed count",
            fit.tau_hat
        )));
    }
    let x: Vec<f64> = obs.iter().map(|o| o.1).collect();
    let pi0 = clamp_prob(pred.pi_zero());
    let logistic = match mode {
        RegressionMode::Auto => sample.response == ResponseKind::Binary,
        RegressionMode::ForceLinear => false,
        RegressionMode::ForceLogistic => true,
    };
    let imputer = if logistic {
        logistic_imputer(&x, &y, pi0)
    } else {
        linear_imputer(&x, &y, pi0)
    };
    let missing = size - beta.len();
    beta.extend(std::iter::repeat_n(pred.beta_zero(), missing));
    for _ in 0..missing {
        y.push(imputer.draw(rng));
    }
    Ok((beta, y, pred.beta_zero()))
}

/// Builds the bootstrap population from a sample and its fits. The outside
/// portion is left empty when `fit2` is absent.
pub fn build_boot_world<R: Rng + ?Sized>(
    sample: &LtsSample,
    fit1: &RaschFit,
    fit2: Option<&RaschFit>,
    geom: &FrameGeometry,
    rule: &QuadratureRule,
    mode: RegressionMode,
    rng: &mut R,
) -> Result<BootWorld> {
    let cap = fit1.tau_hat.floor() as usize;
    let largest = sample.venue_sizes.iter().copied().max().unwrap_or(0);
    if cap < largest {
        return Err(Error::DegenerateWorld(format!(
            "size estimate {} is below the largest cluster size {largest}",
            fit1.tau_hat
        )));
    }
    let idx = replicate_sizes(&sample.venue_sizes, geom.n_frame(), cap, rng);
    if idx.len() < sample.n() {
        return Err(Error::DegenerateWorld("fewer clusters than sampled venues".into()));
    }
    let m_boot: Vec<usize> = idx.iter().map(|&i| sample.venue_sizes[i]).collect();
    let alpha1: Vec<f64> = idx.iter().map(|&i| fit1.alpha_hat[i]).collect();
    let (beta1, y1, b01) = portion_side(sample, fit1, geom, rule, mode, rng)?;
    let (alpha2, beta2, y2, b02) = match fit2 {
        Some(f2) => {
            let (b, y, b0) = portion_side(sample, f2, geom, rule, mode, rng)?;
            (idx.iter().map(|&i| f2.alpha_hat[i]).collect(), b, y, b0)
        }
        None => (vec![0.0; idx.len()], Vec::new(), Vec::new(), 0.0),
    };
    let model = |alpha: &Vec<f64>, beta: &Vec<f64>| PortionLinkModel {
        venue_effect: alpha.clone(),
        person_effect: beta.clone(),
        person_class: Vec::new(),
        interaction: Vec::new(),
    };
    let links = LinkSource::Model {
        u1: model(&alpha1, &beta1),
        u2: model(&alpha2, &beta2),
    };
    Ok(BootWorld {
        m_boot,
        alpha_boot: [alpha1, alpha2],
        beta_boot: [beta1, beta2],
        y_boot: [y1, y2],
        beta_zero: [b01, b02],
        observed: [
            sample.portion_members(Portion::U1).count(),
            sample.portion_members(Portion::U2).count(),
        ],
        response: sample.response,
        links,
    })
}

/// Fits both portions of a sample and computes every estimate.
pub fn estimate_sample(
    sample: &LtsSample,
    geom: &FrameGeometry,
    rule: &QuadratureRule,
    opts: &FitOptions,
    method: FitMethod,
) -> (Result<RaschFit>, Result<RaschFit>, EstimateSet) {
    let counts = crate::sampling::observed_counts(sample);
    let f1 = fit(&counts, geom, Portion::U1, rule, opts, method);
    let f2 = fit(&counts, geom, Portion::U2, rule, opts, method);
    let set = estimate_set(sample, &f1, &f2, method, geom, rule);
    (f1, f2, set)
}

/// Draws one sample from the world and re-estimates everything.
pub fn boot_replicate<R: Rng + ?Sized>(
    world: &BootWorld,
    n: usize,
    rule: &QuadratureRule,
    opts: &FitOptions,
    method: FitMethod,
    rng: &mut R,
) -> Result<EstimateSet> {
    let sample = draw_from(
        &world.m_boot,
        &world.y_boot[0],
        &world.y_boot[1],
        &world.links,
        world.response,
        n,
        rng,
    )?;
    let geom = FrameGeometry::new(n, world.n_frame())?;
    Ok(estimate_sample(&sample, &geom, rule, opts, method).2)
}

fn replicate_stream(seed: u64, b: usize) -> StreamRng {
    substream(seed, &[tags::BOOTSTRAP, b as u64])
}

/// Attaches bootstrap standard deviations and intervals to `point`.
///
/// All randomness derives from `seed`; replicates run in parallel and are
/// combined in index order.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_estimates(
    sample: &LtsSample,
    fit1: &RaschFit,
    fit2: Option<&RaschFit>,
    point: &EstimateSet,
    geom: &FrameGeometry,
    rule: &QuadratureRule,
    opts: &FitOptions,
    config: &BootConfig,
    seed: u64,
) -> Result<EstimateSet> {
    config.validate()?;
    let mut world_rng = substream(seed, &[tags::BOOTSTRAP, tags::WORLD, u64::MAX]);
    let world = build_boot_world(sample, fit1, fit2, geom, rule, config.regression_mode, &mut world_rng)?;
    let n = sample.n();
    let replicates: Vec<Option<EstimateSet>> = (0..config.b)
        .into_par_iter()
        .map(|b| boot_replicate(&world, n, rule, opts, point.method, &mut replicate_stream(seed, b)).ok())
        .collect();
    Ok(summarize(sample, point, &replicates, config))
}

fn summarize(sample: &LtsSample, point: &EstimateSet, replicates: &[Option<EstimateSet>], config: &BootConfig) -> EstimateSet {
    let b = config.b;
    let mut out = point.clone();
    let mut failed = 0;
    for r in replicates {
        match r {
            Some(set) if set.estimates.iter().all(|e| e.value.is_some()) => {}
            _ => failed += 1,
        }
    }
    out.boot_failures = Some(failed);
    out.variance_unreliable = 2 * failed > b;

    let nu1 = sample.portion_members(Portion::U1).count() as f64;
    let nu2 = sample.portion_members(Portion::U2).count() as f64;
    for est in &mut out.estimates {
        let values: Vec<f64> = replicates
            .iter()
            .filter_map(|r| r.as_ref().and_then(|s| s.value(est.key)))
            .filter(|v| v.is_finite())
            .collect();
        let Ok(h) = huber_scale(&values, config.huber_tuning) else {
            continue;
        };
        est.sd = Some(h.scale);
        let Some(theta) = est.value else { continue };
        let var = h.scale * h.scale;
        est.ci = Some(interval_for(est.key, theta, var, nu1, nu2, sample.response, config.alpha_level));
    }
    out
}

/// Routes a parameter to its interval construction.
pub fn interval_for(
    key: EstimateKey,
    theta: f64,
    var: f64,
    nu1: f64,
    nu2: f64,
    response: ResponseKind,
    alpha_level: f64,
) -> CiRecord {
    match key.quantity {
        Quantity::Size => {
            let nu = match key.scope {
                Scope::One => nu1,
                Scope::Two => nu2,
                Scope::All => nu1 + nu2,
            };
            ci_lognormal_size(theta, nu, var, alpha_level)
        }
        Quantity::Mean if response == ResponseKind::Binary => ci_korn_graubard(theta, var, alpha_level),
        _ => ci_wald(theta, var, alpha_level),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand_distr::StandardNormal;

    #[test]
    fn size_replication_arithmetic() {
        let mut rng = substream(1, &[]);
        let sizes = [3, 5, 2];
        assert_eq!(replicate_sizes(&sizes, 6, 1000, &mut rng), vec![0, 1, 2, 0, 1, 2]);
        let idx = replicate_sizes(&sizes, 7, 1000, &mut rng);
        assert_eq!(idx.len(), 7);
        assert_eq!(&idx[..6], &[0, 1, 2, 0, 1, 2]);
        // Trimming from the end.
        let idx = replicate_sizes(&sizes, 6, 14, &mut rng);
        assert_eq!(idx, vec![0, 1, 2, 0]);
        let total: usize = idx.iter().map(|&i| sizes[i]).sum();
        assert!(total <= 14);
    }

    #[test]
    fn lognormal_interval_arithmetic() {
        let ci = ci_lognormal_size(130.0, 30.0, 1e4, 0.05);
        let c = (1.959_963_984_540_054 * 2f64.ln().sqrt()).exp();
        assert!((ci.lower - (30.0 + 100.0 / c)).abs() < 1e-9);
        assert!((ci.upper - (30.0 + 100.0 * c)).abs() < 1e-9);
        let tight = ci_lognormal_size(130.0, 30.0, 1e-20, 0.05);
        assert!((tight.lower - 130.0).abs() < 1e-9 && (tight.upper - 130.0).abs() < 1e-9);
        assert!(ci_lognormal_size(30.0, 30.0, 4.0, 0.05).flag.is_some());
    }

    #[test]
    fn wald_interval() {
        let ci = ci_wald(0.0, 1.0, 0.05);
        assert!((ci.upper - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((ci.lower + 1.959_963_984_540_054).abs() < 1e-9);
        let d = ci_wald(3.0, 0.0, 0.05);
        assert_eq!((d.lower, d.upper), (3.0, 3.0));
    }

    /// Clopper-Pearson bounds by bisection on binomial tails.
    fn clopper_pearson(y: u64, n: u64, alpha: f64) -> (f64, f64) {
        let tail_ge = |p: f64| -> f64 {
            let mut s = 0.0;
            for k in y..=n {
                s += (statrs::function::factorial::ln_binomial(n, k) + k as f64 * p.ln()
                    + (n - k) as f64 * (1.0 - p).ln())
                .exp();
            }
            s
        };
        let tail_le = |p: f64| -> f64 {
            let mut s = 0.0;
            for k in 0..=y {
                s += (statrs::function::factorial::ln_binomial(n, k) + k as f64 * p.ln()
                    + (n - k) as f64 * (1.0 - p).ln())
                .exp();
            }
            s
        };
        let solve = |f: &dyn Fn(f64) -> f64, increasing: bool| {
            let (mut lo, mut hi) = (1e-15, 1.0 - 1e-15);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (f(mid) < alpha / 2.0) == increasing {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let lower = if y == 0 { 0.0 } else { solve(&tail_ge, true) };
        let upper = if y == n { 1.0 } else { solve(&tail_le, false) };
        (lower, upper)
    }

    #[test]
    fn korn_graubard_is_clopper_pearson() {
        let ci = ci_korn_graubard(0.5, 0.25 / 100.0, 0.05);
        let (lo, hi) = clopper_pearson(50, 100, 0.05);
        assert!((ci.lower - lo).abs() < 1e-6 && (ci.upper - hi).abs() < 1e-6);
        assert!(ci.flag.is_none());
    }

    #[test]
    fn korn_graubard_edges() {
        assert_eq!(ci_korn_graubard(0.0, 0.01, 0.05).lower, 0.0);
        let wide = ci_korn_graubard(0.5, 0.3, 0.05);
        assert_eq!((wide.lower, wide.upper), (0.0, 1.0));
        assert!(wide.flag.is_some());
    }

    #[test]
    fn huber_constant_and_normal() {
        let h = huber_scale(&[2.5; 10], 1.5).unwrap();
        assert_eq!((h.location, h.scale), (2.5, 0.0));
        assert!(h.zero_spread);
        let mut rng = substream(11, &[]);
        let v: Vec<f64> = (0..10_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let h = huber_scale(&v, 1.5).unwrap();
        assert!((h.scale - 1.0).abs() < 0.05, "{}", h.scale);
        assert!(h.location.abs() < 0.05);
    }

    #[test]
    fn huber_resists_outlier() {
        let mut rng = substream(12, &[]);
        let clean: Vec<f64> = (0..49).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut dirty = clean.clone();
        dirty.push(1e9);
        let a = huber_scale(&clean, 1.5).unwrap().scale;
        let b = huber_scale(&dirty, 1.5).unwrap().scale;
        assert!((b / a - 1.0).abs() < 0.25, "{a} {b}");
    }

    #[test]
    fn huber_equivariance() {
        let mut rng = substream(13, &[]);
        let v: Vec<f64> = (0..57).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0 + 1.0).collect();
        let base = huber_scale(&v, 1.5).unwrap();
        for &(a, b) in &[(5.0, 2.0), (-3.0, -0.5), (1e3, 7.0)] {
            let w: Vec<f64> = v.iter().map(|x| a + b * x).collect();
            let h = huber_scale(&w, 1.5).unwrap();
            assert!((h.location - (a + b * base.location)).abs() < 1e-9 * (1.0 + h.location.abs()));
            assert!((h.scale - b.abs() * base.scale).abs() < 1e-9 * h.scale);
        }
    }

    #[test]
    fn singular_regression_falls_back_to_moments() {
        let x = vec![0.4; 30];
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let imp = linear_imputer(&x, &y, 0.3);
        let (mean, var) = sample_moments(&y);
        assert_eq!(imp, Imputer::Normal { mean, sd: var.sqrt() });
        let mut rng = substream(5, &[]);
        let draws: Vec<f64> = (0..10_000).map(|_| imp.draw(&mut rng)).collect();
        let (dm, dv) = sample_moments(&draws);
        let se_mean = (var / 1e4).sqrt();
        assert!((dm - mean).abs() < 3.0 * se_mean);
        // Variance of the sample variance for normal draws: 2 var^2 / (n - 1).
        let se_var = (2.0 * var * var / 9_999.0).sqrt();
        assert!((dv - var).abs() < 3.0 * se_var);
        let bin = logistic_imputer(&x, &[1.0, 0.0, 1.0].repeat(10), 0.3);
        assert_eq!(bin, Imputer::Bernoulli { p: 2.0 / 3.0 });
    }

    #[test]
    fn regression_prediction() {
        let x: Vec<f64> = (0..20).map(|i| 0.1 + 0.04 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 10.0 * v).collect();
        match linear_imputer(&x, &y, 0.05) {
            Imputer::Normal { mean, sd } => {
                assert!((mean - 2.5).abs() < 1e-10);
                assert!(sd < 1e-10);
            }
            other => panic!("{other:?}"),
        }
        let yb: Vec<f64> = (0..20).map(|i| if i % 3 == 0 || i > 14 { 1.0 } else { 0.0 }).collect();
        match logistic_imputer(&x, &yb, 0.05) {
            Imputer::Bernoulli { p } => assert!(p > 0.0 && p < 0.5),
            other => panic!("{other:?}"),
        }
    }
}
