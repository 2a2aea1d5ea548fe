//! Predicted person effects and the model-based Horvitz-Thompson-like and
//! Hajek-like estimators of sizes, totals and means.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bootstrap::CiRecord;
use crate::error::{Error, Result};
use crate::likelihood::{FitMethod, RaschFit};
use crate::model::{clamp_prob, inclusion_u1_raw, inclusion_u2_raw, FrameGeometry, Portion};
use crate::quadrature::{softplus, LinkPattern, QuadratureRule};
use crate::sampling::{LtsSample, Stratum};

/// `E[beta | pattern]` by quadrature; depends on the pattern only through its
/// sum and, for venue members, on which venue is left out.
fn beta_given_sum(alpha: &[f64], sigma: f64, s: usize, skip: Option<usize>, rule: &QuadratureRule) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let mut terms = Vec::with_capacity(rule.len());
    for (&z, &lw) in rule.nodes().iter().zip(rule.log_weights()) {
        let shift = sigma * z;
        let l: f64 = alpha
            .iter()
            .enumerate()
            .filter(|&(i, _)| Some(i) != skip)
            .map(|(_, &a)| softplus(a + shift))
            .sum();
        terms.push(lw + shift * s as f64 - l);
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (&t, &z) in terms.iter().zip(rule.nodes()) {
        let w = (t - max).exp();
        num += z * w;
        den += w;
    }
    sigma * num / den
}

/// Predicted person effect for a link pattern. `excluded_venue` marks a
/// member of that sampled venue, whose pattern covers the other venues.
pub fn predict_beta(
    fit: &RaschFit,
    pattern: &LinkPattern,
    excluded_venue: Option<usize>,
    rule: &QuadratureRule,
) -> Result<f64> {
    let n = fit.alpha_hat.len();
    let expected = match excluded_venue {
        None => n,
        Some(v) if v < n => n - 1,
        Some(v) => {
            return Err(Error::invalid(format!("excluded venue {v} out of range for {n} venues")))
        }
    };
    if pattern.len() != expected {
        return Err(Error::invalid(format!(
            "pattern has {} bits, expected {expected}",
            pattern.len()
        )));
    }
    Ok(beta_given_sum(
        &fit.alpha_hat,
        fit.sigma_hat,
        pattern.count_ones(),
        excluded_venue,
        rule,
    ))
}

/// Lookup of `beta` predictions and estimated inclusion probabilities by
/// stratum and pattern sum.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaPredictor {
    pub portion: Portion,
    /// Named persons, by sum `0..=n`.
    pub named: Vec<f64>,
    /// Members of sampled venue `v`, by sum `0..n`.
    pub members: Vec<Vec<f64>>,
    named_pi: Vec<f64>,
    member_pi: Vec<Vec<f64>>,
}

impl BetaPredictor {
    pub fn new(fit: &RaschFit, geom: &FrameGeometry, rule: &QuadratureRule) -> Result<Self> {
        let n = fit.alpha_hat.len();
        if geom.n_sampled() != n {
            return Err(Error::invalid("fit and geometry disagree on n"));
        }
        let alpha = &fit.alpha_hat;
        let pi = |beta: f64| -> f64 {
            match fit.portion {
                Portion::U1 => inclusion_u1_raw(alpha, beta, geom.unsampled_fraction()),
                Portion::U2 => inclusion_u2_raw(alpha, beta),
            }
        };
        let named: Vec<f64> = (0..=n)
            .map(|s| beta_given_sum(alpha, fit.sigma_hat, s, None, rule))
            .collect();
        let named_pi = named.iter().map(|&b| pi(b)).collect();
        let mut members = Vec::new();
        let mut member_pi = Vec::new();
        if fit.portion == Portion::U1 {
            for v in 0..n {
                let row: Vec<f64> = (0..n)
                    .map(|s| beta_given_sum(alpha, fit.sigma_hat, s, Some(v), rule))
                    .collect();
                member_pi.push(row.iter().map(|&b| pi(b)).collect());
                members.push(row);
            }
        }
        Ok(Self {
            portion: fit.portion,
            named,
            members,
            named_pi,
            member_pi,
        })
    }

    /// Prediction for the all-zero pattern of an unobserved person.
    pub fn beta_zero(&self) -> f64 {
        self.named[0]
    }

    /// Estimated inclusion probability of an unobserved person.
    pub fn pi_zero(&self) -> f64 {
        self.named_pi[0]
    }

    pub fn beta_for(&self, stratum: Stratum, pattern: &LinkPattern) -> f64 {
        match stratum {
            Stratum::InVenue(v) => self.members[v][pattern.count_ones()],
            _ => self.named[pattern.count_ones()],
        }
    }

    /// Unclamped inclusion probability. Venue members use the full product
    /// over all sampled venues, evaluated at their predicted effect.
    pub fn pi_for(&self, stratum: Stratum, pattern: &LinkPattern) -> f64 {
        match stratum {
            Stratum::InVenue(v) => self.member_pi[v][pattern.count_ones()],
            _ => self.named_pi[pattern.count_ones()],
        }
    }
}

/// Observed persons of one portion as `(y, clamped pi_hat)` pairs.
pub fn weighted_observations(
    sample: &LtsSample,
    fit: &RaschFit,
    geom: &FrameGeometry,
    rule: &QuadratureRule,
) -> Result<Vec<(f64, f64)>> {
    let pred = BetaPredictor::new(fit, geom, rule)?;
    Ok(sample
        .portion_members(fit.portion)
        .map(|p| (p.y, clamp_prob(pred.pi_for(p.stratum, &p.pattern))))
        .collect())
}

/// Values for the frame portion, the outside portion and the whole population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub one: f64,
    pub two: f64,
    pub all: f64,
}

impl Triple {
    pub fn new(one: f64, two: f64) -> Self {
        Self { one, two, all: one + two }
    }

    pub fn get(&self, scope: Scope) -> f64 {
        match scope {
            Scope::One => self.one,
            Scope::Two => self.two,
            Scope::All => self.all,
        }
    }
}

fn portion_total(
    sample: &LtsSample,
    fit: Option<&RaschFit>,
    portion: Portion,
    geom: &FrameGeometry,
    rule: &QuadratureRule,
    unit: bool,
) -> Result<f64> {
    match fit {
        Some(fit) => {
            if fit.portion != portion {
                return Err(Error::invalid("fit passed for the wrong portion"));
            }
            Ok(weighted_observations(sample, fit, geom, rule)?
                .iter()
                .map(|&(y, pi)| if unit { 1.0 } else { y } / pi)
                .sum())
        }
        None if sample.portion_members(portion).next().is_none() => Ok(0.0),
        None => Err(Error::UndefinedEstimate(format!(
            "portion {} has observed persons but no fit",
            portion.label()
        ))),
    }
}

/// Horvitz-Thompson-like totals. A missing outside-frame fit is accepted
/// only when no one outside the frame was observed.
pub fn ht_total(
    sample: &LtsSample,
    fit1: &RaschFit,
    fit2: Option<&RaschFit>,
    geom: &FrameGeometry,
    rule: &QuadratureRule,
) -> Result<Triple> {
    Ok(Triple::new(
        portion_total(sample, Some(fit1), Portion::U1, geom, rule, false)?,
        portion_total(sample, fit2, Portion::U2, geom, rule, false)?,
    ))
}

/// Horvitz-Thompson-like sizes: [`ht_total`] with unit responses.
pub fn ht_size(
    sample: &LtsSample,
    fit1: &RaschFit,
    fit2: Option<&RaschFit>,
    geom: &FrameGeometry,
    rule: &QuadratureRule,
) -> Result<Triple> {
    Ok(Triple::new(
        portion_total(sample, Some(fit1), Portion::U1, geom, rule, true)?,
        portion_total(sample, fit2, Portion::U2, geom, rule, true)?,
    ))
}

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if den == 0.0 || !den.is_finite() {
        return Err(Error::UndefinedEstimate(format!("{what}: zero divisor")));
    }
    Ok(num / den)
}

/// HT totals divided by the maximum-likelihood sizes.
pub fn ht_mean(totals: &Triple, mle_sizes: &Triple) -> Result<Triple> {
    Ok(Triple {
        one: ratio(totals.one, mle_sizes.one, "HT mean 1")?,
        two: ratio(totals.two, mle_sizes.two, "HT mean 2")?,
        all: ratio(totals.all, mle_sizes.all, "HT mean")?,
    })
}

/// HT totals divided by the HT sizes.
pub fn hk_mean(totals: &Triple, ht_sizes: &Triple) -> Result<Triple> {
    Ok(Triple {
        one: ratio(totals.one, ht_sizes.one, "HK mean 1")?,
        two: ratio(totals.two, ht_sizes.two, "HK mean 2")?,
        all: ratio(totals.all, ht_sizes.all, "HK mean")?,
    })
}

/// HK means scaled by the maximum-likelihood sizes.
pub fn hk_total(means: &Triple, mle_sizes: &Triple) -> Triple {
    Triple {
        one: means.one * mle_sizes.one,
        two: means.two * mle_sizes.two,
        all: means.all * mle_sizes.all,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mle,
    Ht,
    Hk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Size,
    Total,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    One,
    Two,
    All,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::One, Scope::Two, Scope::All];

    pub fn portion(self) -> Option<Portion> {
        match self {
            Scope::One => Some(Portion::U1),
            Scope::Two => Some(Portion::U2),
            Scope::All => None,
        }
    }
}

/// One estimator of one population parameter, e.g. the HT estimator of the
/// outside-frame total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EstimateKey {
    pub family: Family,
    pub quantity: Quantity,
    pub scope: Scope,
}

impl EstimateKey {
    pub const fn new(family: Family, quantity: Quantity, scope: Scope) -> Self {
        Self {
            family,
            quantity,
            scope,
        }
    }

    /// All reported estimators in table order.
    pub fn all() -> Vec<EstimateKey> {
        let groups = [
            (Family::Mle, Quantity::Size),
            (Family::Ht, Quantity::Size),
            (Family::Ht, Quantity::Total),
            (Family::Ht, Quantity::Mean),
            (Family::Hk, Quantity::Total),
            (Family::Hk, Quantity::Mean),
        ];
        groups
            .iter()
            .flat_map(|&(f, q)| Scope::ALL.iter().map(move |&s| EstimateKey::new(f, q, s)))
            .collect()
    }

    pub fn parse(label: &str) -> Option<Self> {
        Self::all().into_iter().find(|k| k.to_string() == label)
    }
}

impl fmt::Display for EstimateKey {
    /// Labels such as `tau_1`, `tau_HT`, `Y_HT.2`, `Ybar_HK.1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let symbol = match self.quantity {
            Quantity::Size => "tau",
            Quantity::Total => "Y",
            Quantity::Mean => "Ybar",
        };
        let suffix = match self.scope {
            Scope::One => "1",
            Scope::Two => "2",
            Scope::All => "",
        };
        match (self.family, self.scope) {
            (Family::Mle, Scope::All) => write!(f, "{symbol}"),
            (Family::Mle, _) => write!(f, "{symbol}_{suffix}"),
            (fam, Scope::All) => write!(f, "{symbol}_{}", family_label(fam)),
            (fam, _) => write!(f, "{symbol}_{}.{suffix}", family_label(fam)),
        }
    }
}

fn family_label(f: Family) -> &'static str {
    match f {
        Family::Mle => "MLE",
        Family::Ht => "HT",
        Family::Hk => "HK",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub key: EstimateKey,
    pub value: Option<f64>,
    /// Why the value is missing.
    pub failure: Option<String>,
    pub sd: Option<f64>,
    pub ci: Option<CiRecord>,
}

/// Point estimates of every reported parameter, with optional bootstrap
/// standard deviations and intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    pub method: FitMethod,
    pub estimates: Vec<Estimate>,
    /// Bootstrap replicates that failed, when a bootstrap was run.
    pub boot_failures: Option<usize>,
    /// Set when more than half the bootstrap replicates failed.
    pub variance_unreliable: bool,
}

impl EstimateSet {
    pub fn get(&self, key: EstimateKey) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.key == key)
    }

    pub fn value(&self, key: EstimateKey) -> Option<f64> {
        self.get(key).and_then(|e| e.value)
    }
}

/// Computes every estimator from fitted portions. A failed portion fit
/// leaves the estimates that depend on it missing, tagged with the failure.
pub fn estimate_set(
    sample: &LtsSample,
    fit1: &Result<RaschFit>,
    fit2: &Result<RaschFit>,
    method: FitMethod,
    geom: &FrameGeometry,
    rule: &QuadratureRule,
) -> EstimateSet {
    let keys = EstimateKey::all();
    let mut values: Vec<(EstimateKey, std::result::Result<f64, String>)> = Vec::with_capacity(keys.len());

    let portion_values = |fit: &Result<RaschFit>, portion: Portion| -> std::result::Result<[f64; 4], String> {
        let fit = fit.as_ref().map_err(|e| e.kind().to_string())?;
        let obs = weighted_observations(sample, fit, geom, rule).map_err(|e| e.kind().to_string())?;
        debug_assert_eq!(fit.portion, portion);
        let total: f64 = obs.iter().map(|&(y, pi)| y / pi).sum();
        let size: f64 = obs.iter().map(|&(_, pi)| 1.0 / pi).sum();
        Ok([fit.tau_hat, size, total, obs.len() as f64])
    };
    let one = portion_values(fit1, Portion::U1);
    let two = portion_values(fit2, Portion::U2);

    for key in keys {
        let pick = |v: &[f64; 4]| -> std::result::Result<f64, String> {
            let (mle, ht_size, ht_total) = (v[0], v[1], v[2]);
            Ok(match (key.family, key.quantity) {
                (Family::Mle, Quantity::Size) => mle,
                (Family::Ht, Quantity::Size) => ht_size,
                (Family::Ht, Quantity::Total) => ht_total,
                (Family::Ht, Quantity::Mean) => checked_ratio(ht_total, mle)?,
                (Family::Hk, Quantity::Mean) => checked_ratio(ht_total, ht_size)?,
                (Family::Hk, Quantity::Total) => checked_ratio(ht_total, ht_size)? * mle,
                _ => unreachable!("no such estimator"),
            })
        };
        let result = match key.scope {
            Scope::One => one.as_ref().map_err(Clone::clone).and_then(pick),
            Scope::Two => two.as_ref().map_err(Clone::clone).and_then(pick),
            Scope::All => match (&one, &two) {
                (Ok(a), Ok(b)) => {
                    let sum = [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]];
                    pick(&sum)
                }
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            },
        };
        values.push((key, result));
    }
    EstimateSet {
        method,
        estimates: values
            .into_iter()
            .map(|(key, r)| match r {
                Ok(v) => Estimate {
                    key,
                    value: Some(v),
                    failure: None,
                    sd: None,
                    ci: None,
                },
                Err(e) => Estimate {
                    key,
                    value: None,
                    failure: Some(e),
                    sd: None,
                    ci: None,
                },
            })
            .collect(),
        boot_failures: None,
        variance_unreliable: false,
    }
}

fn checked_ratio(num: f64, den: f64) -> std::result::Result<f64, String> {
    ratio(num, den, "ratio").map_err(|e| e.kind().to_string())
}
