//! Gauss-Hermite rules for integrating against the standard normal density,
//! and the quadrature-approximated link-pattern cell probabilities built on
//! top of them.
//!
//! A person's link pattern across the `n` sampled venues is a binary vector
//! `x`. Under the Rasch link model with venue effects `alpha` and a normal
//! person effect with standard deviation `sigma`, the probability of `x` is
//!
//! ```text
//!   sum_t  nu_t * prod_i  exp[x_i (alpha_i + sigma z_t)] / (1 + exp(alpha_i + sigma z_t))
//! ```
//!
//! All products are accumulated as sums of log-sigmoids so that patterns over
//! twenty or more venues do not underflow.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Default number of quadrature nodes.
pub const DEFAULT_NODES: usize = 15;

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(e^x / (1 + e^x))`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-sum-exp over a slice; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Nodes `z_t` and weights `nu_t` of a Gauss-Hermite rule normalized for the
/// N(0, 1) density, so that `sum_t nu_t f(z_t) ~ E[f(Z)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl QuadratureRule {
    /// Builds a `q`-node rule.
    ///
    /// Nodes come from the Golub-Welsch eigen-decomposition of the
    /// (physicists') Hermite Jacobi matrix, mapped with `z = sqrt(2) x`.
    /// Each node is then polished by Newton steps on the orthonormal Hermite
    /// polynomial and weights are taken from the Christoffel function, which
    /// keeps the tiny tail weights accurate to full relative precision.
    pub fn new(q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::invalid(format!(
                "quadrature needs at least 2 nodes, got {q}"
            )));
        }
        let jacobi = DMatrix::from_fn(q, q, |r, c| {
            if r + 1 == c || c + 1 == r {
                (r.max(c) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut nodes: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|x| x * std::f64::consts::SQRT_2)
            .collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

        for z in nodes.iter_mut() {
            for _ in 0..4 {
                let (p, dp, _) = orthonormal_hermite(q, *z);
                if dp == 0.0 {
                    break;
                }
                let step = p / dp;
                *z -= step;
                if step.abs() < 1e-16 * z.abs().max(1.0) {
                    break;
                }
            }
        }
        // Exact symmetry about zero.
        for t in 0..q / 2 {
            let half = 0.5 * (nodes[q - 1 - t] - nodes[t]);
            nodes[t] = -half;
            nodes[q - 1 - t] = half;
        }
        if q % 2 == 1 {
            nodes[q / 2] = 0.0;
        }

        let mut weights: Vec<f64> = nodes
            .iter()
            .map(|&z| 1.0 / orthonormal_hermite(q, z).2)
            .collect();
        for t in 0..q / 2 {
            let avg = 0.5 * (weights[t] + weights[q - 1 - t]);
            weights[t] = avg;
            weights[q - 1 - t] = avg;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let log_weights = weights.iter().map(|w| w.ln()).collect();

        Ok(Self {
            nodes,
            weights,
            log_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::new(DEFAULT_NODES).expect("default rule is valid")
    }
}

/// Evaluates the orthonormal probabilists' Hermite polynomial of degree `q`
/// and its derivative at `z`, together with `sum_{k<q} p_k(z)^2`.
fn orthonormal_hermite(q: usize, z: f64) -> (f64, f64, f64) {
    let mut p_prev = 0.0;
    let mut p = 1.0;
    let mut dp_prev = 0.0;
    let mut dp = 0.0;
    let mut christoffel = 0.0;
    for k in 0..q {
        christoffel += p * p;
        let kf = k as f64;
        let scale = (kf + 1.0).sqrt();
        let p_next = (z * p - kf.sqrt() * p_prev) / scale;
        let dp_next = (p + z * dp - kf.sqrt() * dp_prev) / scale;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, dp, christoffel)
}

/// Convenience constructor mirroring [`QuadratureRule::new`].
pub fn make_rule(q: usize) -> Result<QuadratureRule> {
    QuadratureRule::new(q)
}

/// A binary link pattern over sampled venues.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkPattern {
    bits: Vec<bool>,
    count_ones: usize,
}

impl LinkPattern {
    pub fn new(bits: Vec<bool>) -> Self {
        let count_ones = bits.iter().filter(|&&b| b).count();
        Self { bits, count_ones }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![false; len])
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::invalid(format!("invalid link bit {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(bits))
    }

    pub fn from_u8(bits: &[u8]) -> Self {
        Self::new(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.count_ones
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }
}

impl std::fmt::Display for LinkPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

fn check_alpha(alpha: &[f64], sigma: f64) -> Result<()> {
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("venue effects must be finite"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    Ok(())
}

/// Log of the quadrature cell probability; `skip` drops one venue from the
/// product (the venue a within-venue respondent belongs to), in which case
/// `x` is indexed over the remaining venues in order.
pub(crate) fn log_cell_prob_raw(
    alpha: &[f64],
    sigma: f64,
    x: &[bool],
    skip: Option<usize>,
    rule: &QuadratureRule,
) -> f64 {
    let mut terms = Vec::with_capacity(rule.len());
    for (&z, &lw) in rule.nodes().iter().zip(rule.log_weights()) {
        let shift = sigma * z;
        let mut acc = lw;
        let mut xi = x.iter();
        for (i, &a) in alpha.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            let eta = a + shift;
            acc += if *xi.next().unwrap() {
                log_sigmoid(eta)
            } else {
                log_sigmoid(-eta)
            };
        }
        terms.push(acc);
    }
    log_sum_exp(&terms)
}

/// Quadrature-approximated probability that a random person in a portion
/// exhibits link pattern `x` over the `n = alpha.len()` sampled venues.
pub fn cell_prob(alpha: &[f64], sigma: f64, x: &LinkPattern, rule: &QuadratureRule) -> Result<f64> {
    check_alpha(alpha, sigma)?;
    if x.len() != alpha.len() {
        return Err(Error::invalid(format!(
            "pattern length {} does not match {} venues",
            x.len(),
            alpha.len()
        )));
    }
    Ok(log_cell_prob_raw(alpha, sigma, x.bits(), None, rule).exp())
}

/// Cell probability for a member of sampled venue `excluded_venue`
/// (zero-based), whose pattern covers the other `n - 1` venues.
pub fn cell_prob_excluding(
    alpha: &[f64],
    sigma: f64,
    excluded_venue: usize,
    x: &LinkPattern,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_alpha(alpha, sigma)?;
    if excluded_venue >= alpha.len() {
        return Err(Error::invalid(format!(
            "excluded venue {excluded_venue} out of range for {} venues",
            alpha.len()
        )));
    }
    if x.len() + 1 != alpha.len() {
        return Err(Error::invalid(format!(
            "within-venue pattern length {} does not match {} venues",
            x.len(),
            alpha.len()
        )));
    }
    Ok(log_cell_prob_raw(alpha, sigma, x.bits(), Some(excluded_venue), rule).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn two_and_three_point_rules() {
        let r2 = make_rule(2).unwrap();
        assert!(close(r2.nodes()[0], -1.0, 1e-14) && close(r2.nodes()[1], 1.0, 1e-14));
        assert!(r2.weights().iter().all(|w| close(*w, 0.5, 1e-14)));

        let r3 = make_rule(3).unwrap();
        let s3 = 3f64.sqrt();
        assert!(close(r3.nodes()[0], -s3, 1e-14));
        assert_eq!(r3.nodes()[1], 0.0);
        assert!(close(r3.nodes()[2], s3, 1e-14));
        assert!(close(r3.weights()[0], 1.0 / 6.0, 1e-14));
        assert!(close(r3.weights()[1], 2.0 / 3.0, 1e-14));
    }

    #[test]
    fn rejects_single_node() {
        assert!(make_rule(1).is_err());
        assert!(make_rule(0).is_err());
    }

    #[test]
    fn moment_identities() {
        for q in [2, 5, 10, 15, 20, 30, 40] {
            let r = make_rule(q).unwrap();
            let s0: f64 = r.weights().iter().sum();
            let s1: f64 = r.nodes().iter().zip(r.weights()).map(|(z, w)| z * w).sum();
            let s2: f64 = r.nodes().iter().zip(r.weights()).map(|(z, w)| z * z * w).sum();
            assert!(close(s0, 1.0, 1e-12), "q={q} sum {s0}");
            assert!(close(s1, 0.0, 1e-10), "q={q} first moment {s1}");
            if q >= 10 {
                assert!(close(s2, 1.0, 1e-8), "q={q} second moment {s2}");
            }
            for t in 0..q {
                assert!(close(r.nodes()[t], -r.nodes()[q - 1 - t], 1e-12));
            }
        }
        // Higher even moments of N(0,1): E Z^4 = 3, E Z^6 = 15 (exact for q >= 4).
        let r = make_rule(15).unwrap();
        let m4: f64 = r.nodes().iter().zip(r.weights()).map(|(z, w)| z.powi(4) * w).sum();
        let m6: f64 = r.nodes().iter().zip(r.weights()).map(|(z, w)| z.powi(6) * w).sum();
        assert!(close(m4, 3.0, 1e-10) && close(m6, 15.0, 1e-9));
    }

    #[test]
    fn zero_sigma_is_bernoulli_product() {
        let rule = make_rule(15).unwrap();
        let alpha = [-1.3, 0.2, 2.5, -0.7];
        let x = LinkPattern::from_u8(&[1, 0, 1, 1]);
        let got = cell_prob(&alpha, 0.0, &x, &rule).unwrap();
        let want: f64 = alpha
            .iter()
            .zip(x.bits())
            .map(|(&a, &b)| if b { sigmoid(a) } else { 1.0 - sigmoid(a) })
            .product();
        assert!(close(got, want, 1e-15));
        let one = cell_prob(&[0.0], 0.0, &LinkPattern::from_u8(&[1]), &rule).unwrap();
        assert!(close(one, 0.5, 1e-15));
    }

    #[test]
    fn excluding_reduces_to_smaller_problem() {
        let rule = make_rule(20).unwrap();
        let alpha = [0.4, -1.1];
        for bit in [0u8, 1] {
            let x = LinkPattern::from_u8(&[bit]);
            let a = cell_prob_excluding(&alpha, 1.3, 0, &x, &rule).unwrap();
            let b = cell_prob(&alpha[1..], 1.3, &x, &rule).unwrap();
            assert!(close(a, b, 1e-15));
        }
        let x = LinkPattern::from_u8(&[1, 0]);
        assert!(cell_prob_excluding(&alpha, 1.0, 2, &x, &rule).is_err());
        assert!(cell_prob_excluding(&alpha, 1.0, 0, &x, &rule).is_err());
    }

    fn trapezoid(alpha: &[f64], sigma: f64, bits: &[bool], skip: Option<usize>) -> f64 {
        let points = 100_000;
        let h = 16.0 / (points - 1) as f64;
        let mut total = 0.0;
        for k in 0..points {
            let z = -8.0 + h * k as f64;
            let mut f = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let mut pos = 0;
            for (i, &a) in alpha.iter().enumerate() {
                if Some(i) == skip {
                    continue;
                }
                let p = sigmoid(a + sigma * z);
                f *= if bits[pos] { p } else { 1.0 - p };
                pos += 1;
            }
            total += if k == 0 || k == points - 1 { 0.5 * f } else { f };
        }
        total * h
    }

    #[test]
    fn matches_fine_grid_integration() {
        let rule = make_rule(30).unwrap();
        let alpha = [-1.0, 0.0, 1.0];
        let x = LinkPattern::from_u8(&[1, 0, 1]);
        let got = cell_prob(&alpha, 1.0, &x, &rule).unwrap();
        assert!(close(got, trapezoid(&alpha, 1.0, x.bits(), None), 1e-8));

        let alpha = [0.3, -1.2, 0.9, -0.4];
        let x = LinkPattern::from_u8(&[0, 1, 1]);
        let got = cell_prob_excluding(&alpha, 0.8, 1, &x, &rule).unwrap();
        let want = trapezoid(&alpha, 0.8, x.bits(), Some(1));
        assert!(close(got, want, 1e-8), "{got} {want}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let rule = make_rule(5).unwrap();
        let x = LinkPattern::from_u8(&[1, 0]);
        assert!(cell_prob(&[0.0], 0.5, &x, &rule).is_err());
        assert!(cell_prob(&[0.0, 0.0], -0.5, &x, &rule).is_err());
    }

    #[test]
    fn no_underflow_for_many_venues() {
        let rule = make_rule(15).unwrap();
        let alpha = vec![-6.0; 24];
        let x = LinkPattern::new(vec![true; 24]);
        let p = cell_prob(&alpha, 2.0, &x, &rule).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn pattern_parse_display() {
        let p = LinkPattern::parse("10110").unwrap();
        assert_eq!(p.count_ones(), 3);
        assert_eq!(p.to_string(), "10110");
        assert!(LinkPattern::parse("10a").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn params(max_n: usize) -> impl Strategy<Value = (Vec<f64>, f64)> {
            (1..=max_n).prop_flat_map(|n| (proptest::collection::vec(-4.0..4.0f64, n), 0.0..3.0f64))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn patterns_sum_to_one((alpha, sigma) in params(8)) {
                let rule = make_rule(15).unwrap();
                let n = alpha.len();
                let total: f64 = (0..1usize << n)
                    .map(|k| LinkPattern::new((0..n).map(|i| k >> i & 1 == 1).collect()))
                    .map(|x| cell_prob(&alpha, sigma, &x, &rule).unwrap())
                    .sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }

            #[test]
            fn all_ones_nondecreasing_in_alpha((alpha, sigma) in params(5), i in 0usize..5, bump in 0.0..2.0f64) {
                let rule = make_rule(15).unwrap();
                let i = i % alpha.len();
                let x = LinkPattern::new(vec![true; alpha.len()]);
                let mut up = alpha.clone();
                up[i] += bump;
                let a = cell_prob(&alpha, sigma, &x, &rule).unwrap();
                let b = cell_prob(&up, sigma, &x, &rule).unwrap();
                prop_assert!(b >= a * (1.0 - 1e-12));
            }

            #[test]
            fn joint_permutation_invariant((alpha, sigma) in params(6), bits in proptest::collection::vec(any::<bool>(), 6), rot in 0usize..6) {
                let rule = make_rule(15).unwrap();
                let n = alpha.len();
                let x = LinkPattern::new(bits[..n].to_vec());
                let r = rot % n;
                let mut a2 = alpha.clone();
                a2.rotate_left(r);
                let mut b2 = bits[..n].to_vec();
                b2.rotate_left(r);
                let p = cell_prob(&alpha, sigma, &x, &rule).unwrap();
                let q = cell_prob(&a2, sigma, &LinkPattern::new(b2), &rule).unwrap();
                prop_assert!((p - q).abs() <= 1e-14 * p.max(1e-300).max(1.0));
            }
        }
    }
}
