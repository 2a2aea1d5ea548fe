//! Unconditional and conditional likelihoods of one portion and their
//! maximizers.
//!
//! A cell probability depends on its pattern only through the linked venues'
//! effects and the pattern sum `s`:
//!
//! ```text
//!   ln pi_x = sum_i x_i alpha_i + A_s,
//!   A_s     = LSE_t [ ln nu_t + sigma z_t s - sum_i softplus(alpha_i + sigma z_t) ]
//! ```
//!
//! so every log-likelihood reduces to per-venue link counts plus histograms of
//! `s`, and evaluation costs `O(q n^2)` regardless of the number of people.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::model::{FrameGeometry, Portion, RaschParams};
use crate::optimize::{bfgs, nelder_mead, MinimizeOptions};
use crate::quadrature::{log_sum_exp, sigmoid, softplus, QuadratureRule};
use crate::sampling::ObservedCounts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    #[default]
    Unconditional,
    Conditional,
}

impl FitMethod {
    pub fn tag(self) -> &'static str {
        match self {
            FitMethod::Unconditional => "U",
            FitMethod::Conditional => "C",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Bfgs,
    NelderMead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub optimizer: OptimizerKind,
    pub max_iterations: usize,
    /// Gradient tolerance on the per-person objective.
    pub grad_tol: f64,
    pub rel_tol: f64,
    /// Size estimates above this are reported as divergence.
    pub tau_cap: f64,
    /// Smallest admissible `1 - kappa pi_0` in the closed-form size update.
    pub denominator_floor: f64,
    pub sigma_start: f64,
    /// Box for the venue effects during the search.
    pub alpha_bound: f64,
    /// Box for the random-effect standard deviation.
    pub sigma_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Bfgs,
            max_iterations: 500,
            grad_tol: 1e-6,
            rel_tol: 1e-12,
            tau_cap: 1e6,
            denominator_floor: 1e-8,
            sigma_start: 0.5,
            alpha_bound: 40.0,
            sigma_bound: 12.0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.grad_tol > 0.0
            && self.rel_tol >= 0.0
            && self.tau_cap > 1.0
            && self.denominator_floor > 0.0
            && self.denominator_floor < 1.0
            && self.sigma_start >= 0.0
            && self.alpha_bound > 0.0
            && self.sigma_bound > self.sigma_start;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("inconsistent fit options {self:?}")))
        }
    }
}

/// Fitted `(tau, alpha, sigma)` for one portion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaschFit {
    pub portion: Portion,
    pub method: FitMethod,
    pub tau_hat: f64,
    pub alpha_hat: Vec<f64>,
    pub sigma_hat: f64,
    /// Maximized objective: the profile unconditional log-likelihood, or the
    /// conditional log-likelihood, each without parameter-free constants.
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Distinct persons observed in the portion (`m + r1` or `r2`).
    pub observed: usize,
    /// True when every observed pattern was saturated and `sigma` was held
    /// at zero.
    pub sigma_fixed: bool,
}

impl RaschFit {
    pub fn params(&self) -> RaschParams {
        RaschParams {
            alpha: self.alpha_hat.clone(),
            sigma: self.sigma_hat,
            portion: self.portion,
        }
    }
}

/// Sufficient statistics of one portion.
#[derive(Debug, Clone, PartialEq)]
pub struct PortionStats {
    pub portion: Portion,
    pub n: usize,
    /// `1 - n/N` for the frame portion, `1` outside it.
    pub kappa: f64,
    /// Venue members (`m`; zero outside the frame).
    pub members: usize,
    /// Persons who entered by being named (`r1` or `r2`).
    pub named: usize,
    /// Links to each sampled venue summed over observed persons.
    pub link_counts: Vec<f64>,
    /// Named persons by pattern sum, `0..=n`.
    pub named_hist: Vec<f64>,
    /// Venue members by pattern sum, per venue, `0..n`.
    pub member_hist: Vec<Vec<f64>>,
}

impl PortionStats {
    pub fn from_counts(counts: &ObservedCounts, geom: &FrameGeometry, portion: Portion) -> Result<Self> {
        let n = counts.n;
        if geom.n_sampled() != n {
            return Err(Error::invalid(format!(
                "geometry has n = {} but the sample has {n} venues",
                geom.n_sampled()
            )));
        }
        let mut link_counts = vec![0.0; n];
        let mut named_hist = vec![0.0; n + 1];
        let histogram = match portion {
            Portion::U1 => &counts.beyond,
            Portion::U2 => &counts.outside,
        };
        let mut named = 0;
        for (pattern, &c) in histogram {
            if pattern.len() != n {
                return Err(Error::invalid("pattern length does not match the number of venues"));
            }
            named += c;
            named_hist[pattern.count_ones()] += c as f64;
            for (i, &b) in pattern.bits().iter().enumerate() {
                if b {
                    link_counts[i] += c as f64;
                }
            }
        }
        let mut member_hist = Vec::new();
        let mut members = 0;
        if portion == Portion::U1 {
            member_hist = vec![vec![0.0; n]; n];
            for (v, hist) in counts.within.iter().enumerate() {
                for (pattern, &c) in hist {
                    if pattern.len() + 1 != n {
                        return Err(Error::invalid("within-venue pattern has the wrong length"));
                    }
                    members += c;
                    member_hist[v][pattern.count_ones()] += c as f64;
                    for (pos, &b) in pattern.bits().iter().enumerate() {
                        if b {
                            let i = if pos < v { pos } else { pos + 1 };
                            link_counts[i] += c as f64;
                        }
                    }
                }
            }
            if members != counts.m_total() {
                return Err(Error::invalid("venue member histograms do not add up to m"));
            }
        }
        Ok(Self {
            portion,
            n,
            kappa: match portion {
                Portion::U1 => geom.unsampled_fraction(),
                Portion::U2 => 1.0,
            },
            members,
            named,
            link_counts,
            named_hist,
            member_hist,
        })
    }

    pub fn observed(&self) -> usize {
        self.members + self.named
    }

    /// Every observed pattern links to all available venues.
    pub fn saturated(&self) -> bool {
        let n = self.n;
        let named_full = self.named_hist[..n].iter().all(|&c| c == 0.0);
        let members_full = self
            .member_hist
            .iter()
            .all(|h| h[..n.saturating_sub(1)].iter().all(|&c| c == 0.0));
        named_full && members_full
    }
}

/// Log cell-probability pieces and their gradients at one `(alpha, sigma)`.
struct Evaluation {
    /// `sum over observed persons of ln pi_x`.
    data: f64,
    /// `ln pi_0` of the named strata.
    log_p0: f64,
    grad_data: Vec<f64>,
    grad_log_p0: Vec<f64>,
}

/// Reusable buffers for repeated evaluations on one portion.
struct Evaluator<'a> {
    stats: &'a PortionStats,
    nodes: &'a [f64],
    log_weights: &'a [f64],
    sp: Vec<f64>,
    sig: Vec<f64>,
    total_sp: Vec<f64>,
    total_sig: Vec<f64>,
    terms: Vec<f64>,
    agg: Vec<f64>,
    agg_s: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(stats: &'a PortionStats, rule: &'a QuadratureRule) -> Self {
        let q = rule.len();
        let n = stats.n;
        Self {
            stats,
            nodes: rule.nodes(),
            log_weights: rule.log_weights(),
            sp: vec![0.0; q * n],
            sig: vec![0.0; q * n],
            total_sp: vec![0.0; q],
            total_sig: vec![0.0; q],
            terms: vec![0.0; q],
            agg: vec![0.0; q],
            agg_s: vec![0.0; q],
        }
    }

    /// `theta = (alpha_1..alpha_n, sigma)`; `sigma` may be negative, which
    /// is equivalent to `|sigma|` for a symmetric rule.
    fn eval(&mut self, theta: &[f64], with_grad: bool) -> Evaluation {
        let stats = self.stats;
        let n = stats.n;
        let q = self.nodes.len();
        let (alpha, sigma) = (&theta[..n], theta[n]);

        for t in 0..q {
            let shift = sigma * self.nodes[t];
            let (mut l, mut p) = (0.0, 0.0);
            for i in 0..n {
                let eta = alpha[i] + shift;
                let sp = softplus(eta);
                self.sp[t * n + i] = sp;
                l += sp;
                if with_grad {
                    let s = sigmoid(eta);
                    self.sig[t * n + i] = s;
                    p += s;
                }
            }
            self.total_sp[t] = l;
            self.total_sig[t] = p;
        }

        let mut grad_data = vec![0.0; n + 1];
        grad_data[..n].copy_from_slice(&stats.link_counts);
        let mut grad_log_p0 = vec![0.0; n + 1];
        let mut data: f64 = alpha.iter().zip(&stats.link_counts).map(|(a, k)| a * k).sum();

        // Named strata, including the zero cell.
        self.agg.iter_mut().for_each(|v| *v = 0.0);
        self.agg_s.iter_mut().for_each(|v| *v = 0.0);
        let mut log_p0 = 0.0;
        for s in 0..=n {
            let count = stats.named_hist[s];
            if s > 0 && count == 0.0 {
                continue;
            }
            for t in 0..q {
                self.terms[t] = self.log_weights[t] + sigma * self.nodes[t] * s as f64 - self.total_sp[t];
            }
            let a = log_sum_exp(&self.terms);
            if s == 0 {
                log_p0 = a;
                if with_grad {
                    for t in 0..q {
                        let w = (self.terms[t] - a).exp();
                        for i in 0..n {
                            grad_log_p0[i] -= w * self.sig[t * n + i];
                        }
                        grad_log_p0[n] -= w * self.nodes[t] * self.total_sig[t];
                    }
                }
            }
            if count == 0.0 {
                continue;
            }
            data += count * a;
            if with_grad {
                for t in 0..q {
                    let w = count * (self.terms[t] - a).exp();
                    self.agg[t] += w;
                    self.agg_s[t] += w * s as f64;
                }
            }
        }
        if with_grad {
            for t in 0..q {
                for i in 0..n {
                    grad_data[i] -= self.agg[t] * self.sig[t * n + i];
                }
                grad_data[n] += self.nodes[t] * (self.agg_s[t] - self.agg[t] * self.total_sig[t]);
            }
        }

        // Venue members: the product skips their own venue.
        for (v, hist) in stats.member_hist.iter().enumerate() {
            self.agg.iter_mut().for_each(|x| *x = 0.0);
            self.agg_s.iter_mut().for_each(|x| *x = 0.0);
            let mut any = false;
            for (s, &count) in hist.iter().enumerate() {
                if count == 0.0 {
                    continue;
                }
                any = true;
                for t in 0..q {
                    self.terms[t] = self.log_weights[t] + sigma * self.nodes[t] * s as f64 - self.total_sp[t]
                        + self.sp[t * n + v];
                }
                let a = log_sum_exp(&self.terms);
                data += count * a;
                if with_grad {
                    for t in 0..q {
                        let w = count * (self.terms[t] - a).exp();
                        self.agg[t] += w;
                        self.agg_s[t] += w * s as f64;
                    }
                }
            }
            if with_grad && any {
                for t in 0..q {
                    let w = self.agg[t];
                    for i in 0..n {
                        if i != v {
                            grad_data[i] -= w * self.sig[t * n + i];
                        }
                    }
                    let p_minus = self.total_sig[t] - self.sig[t * n + v];
                    grad_data[n] += self.nodes[t] * (self.agg_s[t] - w * p_minus);
                }
            }
        }

        Evaluation {
            data,
            log_p0,
            grad_data,
            grad_log_p0,
        }
    }
}

/// `a ln b` with `0 ln 0 = 0`.
fn xlogy(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.ln()
    }
}

/// Maximizer over `tau >= nu` of
/// `ln Gamma(tau+1) - ln Gamma(tau-nu+1) + (tau-nu) c` for `c < 0`.
///
/// Returns the maximizer and whether it was cut at `cap`.
pub(crate) fn profile_tau(nu: f64, c: f64, cap: f64) -> (f64, bool) {
    if nu == 0.0 || c == f64::NEG_INFINITY {
        return (nu, false);
    }
    let g = |tau: f64| digamma(tau + 1.0) - digamma(tau - nu + 1.0) + c;
    if g(nu) <= 0.0 {
        return (nu, false);
    }
    if cap <= nu || g(cap) >= 0.0 {
        return (cap.max(nu), true);
    }
    // g is decreasing; Newton on u = tau - nu in log space, safeguarded by
    // a bracket.
    let (mut lo, mut hi) = (nu, cap);
    let mut tau = (nu / -c.exp_m1()).clamp(lo, hi);
    if !(tau > lo && tau < hi) {
        tau = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let v = g(tau);
        if v > 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        let dv = 1.0 / (tau + 0.5) - 1.0 / (tau - nu + 0.5);
        let mut next = tau - v / dv;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi / lo.max(1e-300) > 4.0 {
                (lo.max(1e-300) * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
        }
        if (next - tau).abs() <= 1e-13 * tau || hi - lo <= 1e-13 * hi {
            return (next, false);
        }
        tau = next;
    }
    (tau, false)
}

fn check_params(stats: &PortionStats, params: &RaschParams) -> Result<()> {
    if params.portion != stats.portion {
        return Err(Error::invalid("parameters belong to the other portion"));
    }
    if params.n() != stats.n {
        return Err(Error::invalid(format!(
            "{} venue effects for {} sampled venues",
            params.n(),
            stats.n
        )));
    }
    Ok(())
}

fn theta_of(params: &RaschParams) -> Vec<f64> {
    let mut theta = params.alpha.clone();
    theta.push(params.sigma);
    theta
}

/// Unconditional log-likelihood of portion `params.portion` at size `tau`,
/// without terms that are free of `(tau, alpha, sigma)`.
pub fn loglik_unconditional(
    counts: &ObservedCounts,
    geom: &FrameGeometry,
    tau: f64,
    params: &RaschParams,
    rule: &QuadratureRule,
) -> Result<f64> {
    let stats = PortionStats::from_counts(counts, geom, params.portion)?;
    check_params(&stats, params)?;
    let nu = stats.observed() as f64;
    if !(tau >= nu) {
        return Err(Error::invalid(format!(
            "tau = {tau} is below the {nu} observed persons"
        )));
    }
    let e = Evaluator::new(&stats, rule).eval(&theta_of(params), false);
    Ok(size_term(&stats, tau, e.log_p0) + e.data)
}

/// The `tau`-dependent part of the unconditional likelihood.
fn size_term(stats: &PortionStats, tau: f64, log_p0: f64) -> f64 {
    let nu = stats.observed() as f64;
    let zero = tau - nu;
    let mut v = ln_gamma(tau + 1.0) - ln_gamma(zero + 1.0) + zero * log_p0;
    if stats.portion == Portion::U1 {
        // (tau - m) ln(1 - n/N)
        v += xlogy(tau - stats.members as f64, stats.kappa);
    }
    v
}

/// Conditional log-likelihood of the observed patterns given inclusion.
pub fn loglik_conditional(
    counts: &ObservedCounts,
    geom: &FrameGeometry,
    params: &RaschParams,
    rule: &QuadratureRule,
) -> Result<f64> {
    let stats = PortionStats::from_counts(counts, geom, params.portion)?;
    check_params(&stats, params)?;
    let e = Evaluator::new(&stats, rule).eval(&theta_of(params), false);
    Ok(e.data - stats.observed() as f64 * (-stats.kappa * e.log_p0.exp()).ln_1p())
}

/// Closed-form size estimate `nu / (1 - kappa pi_0)`.
pub fn tau_update(
    counts: &ObservedCounts,
    geom: &FrameGeometry,
    params: &RaschParams,
    rule: &QuadratureRule,
) -> Result<f64> {
    let stats = PortionStats::from_counts(counts, geom, params.portion)?;
    check_params(&stats, params)?;
    let e = Evaluator::new(&stats, rule).eval(&theta_of(params), false);
    closed_form_tau(&stats, e.log_p0, &FitOptions::default())
}

fn closed_form_tau(stats: &PortionStats, log_p0: f64, opts: &FitOptions) -> Result<f64> {
    let denom = if stats.kappa == 0.0 {
        1.0
    } else {
        -(stats.kappa.ln() + log_p0).exp_m1()
    };
    let nu = stats.observed() as f64;
    if denom <= opts.denominator_floor {
        return Err(Error::Diverged {
            reason: format!("size denominator {denom:.3e} below floor"),
            tau: if denom > 0.0 { nu / denom } else { f64::INFINITY },
        });
    }
    let tau = nu / denom;
    if tau > opts.tau_cap {
        return Err(Error::Diverged {
            reason: "size estimate exceeds the cap".into(),
            tau,
        });
    }
    Ok(tau.max(nu))
}

fn start_point(stats: &PortionStats, counts: &ObservedCounts, opts: &FitOptions) -> Vec<f64> {
    let n = stats.n;
    let nu = stats.observed() as f64;
    let mut theta = Vec::with_capacity(n + 1);
    for i in 0..n {
        // Venue i's own members carry no slot for it.
        let own = if stats.portion == Portion::U1 {
            counts.venue_sizes[i] as f64
        } else {
            0.0
        };
        let at_risk = (nu - own).max(1.0);
        let rate = (stats.link_counts[i] / at_risk).clamp(0.02, 0.98);
        theta.push((rate / (1.0 - rate)).ln());
    }
    theta.push(opts.sigma_start);
    theta
}

fn identifiability(stats: &PortionStats) -> Result<()> {
    if stats.observed() == 0 {
        return Err(Error::NonIdentifiable(format!(
            "no observed persons in portion {}",
            stats.portion.label()
        )));
    }
    if stats.n < 2 {
        return Err(Error::NonIdentifiable(
            "a single sampled venue carries no information on link heterogeneity".into(),
        ));
    }
    if stats.named == 0 && stats.portion == Portion::U2 {
        return Err(Error::NonIdentifiable("no persons outside the frame were named".into()));
    }
    Ok(())
}

fn fit_portion(
    counts: &ObservedCounts,
    geom: &FrameGeometry,
    portion: Portion,
    rule: &QuadratureRule,
    opts: &FitOptions,
    method: FitMethod,
) -> Result<RaschFit> {
    opts.validate()?;
    let stats = PortionStats::from_counts(counts, geom, portion)?;
    identifiability(&stats)?;
    let n = stats.n;
    let nu = stats.observed() as f64;
    let sigma_fixed = stats.saturated();

    let mut lower = vec![-opts.alpha_bound; n + 1];
    let mut upper = vec![opts.alpha_bound; n + 1];
    lower[n] = -opts.sigma_bound;
    upper[n] = opts.sigma_bound;
    let mut start = start_point(&stats, counts, opts);
    if sigma_fixed {
        lower[n] = 0.0;
        upper[n] = 0.0;
        start[n] = 0.0;
    }

    let kappa = stats.kappa;
    let log_kappa = kappa.ln();
    let scale = 1.0 / nu;
    let mut ev = Evaluator::new(&stats, rule);
    let mut objective = |theta: &[f64], grad: Option<&mut [f64]>| -> f64 {
        let with_grad = grad.is_some();
        let e = ev.eval(theta, with_grad);
        let (value, coef) = match method {
            FitMethod::Unconditional => {
                let (tau, _) = profile_tau(nu, log_kappa + e.log_p0, opts.tau_cap);
                (size_term(&stats, tau, e.log_p0) + e.data, tau - nu)
            }
            FitMethod::Conditional => {
                let kp0 = kappa * e.log_p0.exp();
                (e.data - nu * (-kp0).ln_1p(), nu * kp0 / (1.0 - kp0))
            }
        };
        if let Some(g) = grad {
            for i in 0..=n {
                g[i] = -scale * (e.grad_data[i] + coef * e.grad_log_p0[i]);
            }
            if sigma_fixed {
                g[n] = 0.0;
            }
        }
        -scale * value
    };

    let mopts = MinimizeOptions {
        max_iterations: opts.max_iterations,
        grad_tol: opts.grad_tol,
        rel_tol: opts.rel_tol,
    };
    let m = match opts.optimizer {
        OptimizerKind::Bfgs => bfgs(|x, g| objective(x, Some(g)), &start, &lower, &upper, &mopts),
        OptimizerKind::NelderMead => nelder_mead(|x| objective(x, None), &start, 0.5, &lower, &upper, &mopts),
    };
    if !m.value.is_finite() {
        return Err(Error::Diverged {
            reason: "objective is not finite at the optimum".into(),
            tau: f64::NAN,
        });
    }

    let theta = m.x;
    let e = Evaluator::new(&stats, rule).eval(&theta, false);
    let tau_hat = match method {
        FitMethod::Unconditional => {
            let (tau, capped) = profile_tau(nu, log_kappa + e.log_p0, opts.tau_cap);
            if capped {
                return Err(Error::Diverged {
                    reason: "size estimate exceeds the cap".into(),
                    tau,
                });
            }
            tau
        }
        FitMethod::Conditional => closed_form_tau(&stats, e.log_p0, opts)?,
    };
    debug_assert!(tau_hat >= nu);
    Ok(RaschFit {
        portion,
        method,
        tau_hat,
        alpha_hat: theta[..n].to_vec(),
        sigma_hat: theta[n].abs(),
        loglik: -m.value / scale,
        converged: m.converged,
        iterations: m.iterations,
        observed: stats.observed(),
        sigma_fixed,
    })
}

/// Joint maximum likelihood over `(tau, alpha, sigma)`.
///
/// For fixed `(alpha, sigma)` the likelihood is maximized over `tau` exactly,
/// and the resulting profile is maximized over `(alpha, sigma)`.
pub fn fit_unconditional(
    counts: &ObservedCounts,
    geom: &FrameGeometry,
    portion: Portion,
    rule: &QuadratureRule,
    opts: &FitOptions,
) -> Result<RaschFit> {
    fit_portion(counts, geom, portion, rule, opts, FitMethod::Unconditional)
}

/// Maximizes the likelihood of the observed patterns conditional on
/// inclusion, then sets `tau = nu / (1 - kappa pi_0)`.
pub fn fit_conditional(
    counts: &ObservedCounts,
    geom: &FrameGeometry,
    portion: Portion,
    rule: &QuadratureRule,
    opts: &FitOptions,
) -> Result<RaschFit> {
    fit_portion(counts, geom, portion, rule, opts, FitMethod::Conditional)
}

pub fn fit(
    counts: &ObservedCounts,
    geom: &FrameGeometry,
    portion: Portion,
    rule: &QuadratureRule,
    opts: &FitOptions,
    method: FitMethod,
) -> Result<RaschFit> {
    fit_portion(counts, geom, portion, rule, opts, method)
}
