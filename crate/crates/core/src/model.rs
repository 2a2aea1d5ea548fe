//! Rasch link model and the model-based inclusion probabilities.

use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::quadrature::{log_sigmoid, sigmoid};

/// Lower/upper bound applied to inclusion probabilities before they are used
/// as Horvitz-Thompson divisors.
pub const PROB_FLOOR: f64 = 1e-12;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of times [`clamp_prob`] has altered a value in this process.
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

/// Clamps a probability into `[PROB_FLOOR, 1 - PROB_FLOOR]`, counting clamps.
pub fn clamp_prob(p: f64) -> f64 {
    let c = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if c != p {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
    }
    c
}

/// Which part of the hidden population a quantity refers to: the part
/// covered by the venue frame, or the part outside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Portion {
    U1,
    U2,
}

impl Portion {
    pub fn index(self) -> usize {
        match self {
            Portion::U1 => 0,
            Portion::U2 => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Portion::U1 => "1",
            Portion::U2 => "2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaschParams {
    pub alpha: Vec<f64>,
    pub sigma: f64,
    pub portion: Portion,
}

impl RaschParams {
    pub fn new(alpha: Vec<f64>, sigma: f64, portion: Portion) -> Result<Self> {
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("venue effects must be finite"));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(Self {
            alpha,
            sigma,
            portion,
        })
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }
}

/// Number of sampled venues `n` and frame size `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGeometry {
    n_sampled: usize,
    n_frame: usize,
}

impl FrameGeometry {
    pub fn new(n_sampled: usize, n_frame: usize) -> Result<Self> {
        if n_sampled == 0 || n_sampled > n_frame {
            return Err(Error::invalid(format!(
                "need 1 <= n <= N, got n = {n_sampled}, N = {n_frame}"
            )));
        }
        Ok(Self { n_sampled, n_frame })
    }

    pub fn n_sampled(&self) -> usize {
        self.n_sampled
    }

    pub fn n_frame(&self) -> usize {
        self.n_frame
    }

    /// `1 - n/N`, the chance a frame member's venue is not sampled.
    pub fn unsampled_fraction(&self) -> f64 {
        1.0 - self.n_sampled as f64 / self.n_frame as f64
    }
}

/// Probability that a venue with effect `alpha_i` links to a person with
/// effect `beta_j`.
#[inline]
pub fn link_prob(alpha_i: f64, beta_j: f64) -> f64 {
    sigmoid(alpha_i + beta_j)
}

/// `ln prod_i (1 - p_ij)` over the given venue effects.
pub(crate) fn log_no_link(alpha: &[f64], beta: f64) -> f64 {
    alpha.iter().map(|&a| log_sigmoid(-(a + beta))).sum()
}

/// Inclusion probability of a frame-covered person: either their venue is
/// sampled or some sampled venue links to them.
pub fn inclusion_prob_u1(params: &RaschParams, beta_j: f64, geom: &FrameGeometry) -> Result<f64> {
    if params.portion != Portion::U1 {
        return Err(Error::invalid("inclusion_prob_u1 needs U1 parameters"));
    }
    Ok(inclusion_u1_raw(&params.alpha, beta_j, geom.unsampled_fraction()))
}

/// Inclusion probability of a person outside the frame.
pub fn inclusion_prob_u2(params: &RaschParams, beta_j: f64) -> Result<f64> {
    if params.portion != Portion::U2 {
        return Err(Error::invalid("inclusion_prob_u2 needs U2 parameters"));
    }
    Ok(inclusion_u2_raw(&params.alpha, beta_j))
}

pub(crate) fn inclusion_u1_raw(alpha: &[f64], beta: f64, unsampled: f64) -> f64 {
    1.0 - unsampled * log_no_link(alpha, beta).exp()
}

pub(crate) fn inclusion_u2_raw(alpha: &[f64], beta: f64) -> f64 {
    -log_no_link(alpha, beta).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u1(alpha: Vec<f64>) -> RaschParams {
        RaschParams::new(alpha, 1.0, Portion::U1).unwrap()
    }

    fn u2(alpha: Vec<f64>) -> RaschParams {
        RaschParams::new(alpha, 1.0, Portion::U2).unwrap()
    }

    #[test]
    fn link_prob_values() {
        assert_eq!(link_prob(0.0, 0.0), 0.5);
        for (a, b) in [(0.3, -1.2), (4.0, 2.5), (-30.0, 1.0)] {
            assert!((link_prob(a, b) + link_prob(-a, -b) - 1.0).abs() < 1e-15);
        }
        let alpha = -5.45 / (0.001 + 8f64.powf(0.25));
        let direct = alpha.exp() / (1.0 + alpha.exp());
        assert!((link_prob(alpha, 0.0) - direct).abs() < 1e-16);
    }

    #[test]
    fn u1_inclusion() {
        let g = FrameGeometry::new(4, 4).unwrap();
        assert_eq!(inclusion_prob_u1(&u1(vec![-3.0; 4]), -2.0, &g).unwrap(), 1.0);

        let g = FrameGeometry::new(3, 10).unwrap();
        let p = inclusion_prob_u1(&u1(vec![-50.0; 3]), 0.0, &g).unwrap();
        assert!((p - 0.3).abs() < 1e-12);

        let g = FrameGeometry::new(2, 4).unwrap();
        let p = inclusion_prob_u1(&u1(vec![0.0, 0.0]), 0.0, &g).unwrap();
        assert!((p - 0.875).abs() < 1e-15);
        assert!(inclusion_prob_u1(&u2(vec![0.0]), 0.0, &g).is_err());
    }

    #[test]
    fn u2_inclusion() {
        assert!((inclusion_prob_u2(&u2(vec![0.0]), 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((inclusion_prob_u2(&u2(vec![-3.0, 1.0, 0.0]), 50.0).unwrap() - 1.0).abs() < 1e-12);
        let alpha = [-1.0, -2.0, -3.0];
        let beta = 0.7;
        let direct = 1.0
            - alpha
                .iter()
                .map(|a: &f64| 1.0 - 1.0 / (1.0 + (-(a + beta)).exp()))
                .product::<f64>();
        let got = inclusion_prob_u2(&u2(alpha.to_vec()), beta).unwrap();
        assert!((got - direct).abs() < 1e-14);
        assert!(inclusion_prob_u2(&u1(vec![0.0]), 0.0).is_err());
    }

    #[test]
    fn u1_degenerates_to_u2_as_frame_grows() {
        let alpha = vec![-1.0, 0.5, -2.0];
        let p2 = inclusion_prob_u2(&u2(alpha.clone()), 0.3).unwrap();
        let g = FrameGeometry::new(3, 3_000_000_000).unwrap();
        let p1 = inclusion_prob_u1(&u1(alpha), 0.3, &g).unwrap();
        assert!((p1 - p2).abs() < 1e-8);
    }

    #[test]
    fn geometry_checks() {
        assert!(FrameGeometry::new(0, 5).is_err());
        assert!(FrameGeometry::new(6, 5).is_err());
        assert!(RaschParams::new(vec![f64::NAN], 0.0, Portion::U1).is_err());
        assert!(RaschParams::new(vec![0.0], -1.0, Portion::U1).is_err());
    }

    #[test]
    fn clamp_counts_changes() {
        let before = clamp_events();
        assert_eq!(clamp_prob(0.5), 0.5);
        assert_eq!(clamp_prob(0.0), PROB_FLOOR);
        assert!(clamp_events() > before);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inclusion_bounds_and_monotone(
                alpha in proptest::collection::vec(-6.0f64..3.0, 1..8),
                beta in -4.0f64..4.0,
                extra in 0usize..50,
            ) {
                let n = alpha.len();
                let g = FrameGeometry::new(n, n + extra).unwrap();
                let frac = n as f64 / (n + extra) as f64;
                let p1 = inclusion_u1_raw(&alpha, beta, g.unsampled_fraction());
                let p1b = inclusion_u1_raw(&alpha, beta + 0.5, g.unsampled_fraction());
                prop_assert!(p1 >= frac - 1e-15);
                prop_assert!(p1b >= p1);
                let p2 = inclusion_u2_raw(&alpha, beta);
                let p2b = inclusion_u2_raw(&alpha, beta + 0.5);
                prop_assert!((0.0..1.0).contains(&p2));
                prop_assert!(p2b > p2);
            }
        }
    }
}
