//! Synthetic populations and replicated Monte Carlo experiments.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::PathBuf;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_estimates, estimate_sample, BootConfig, CiKind, CiRecord};
use crate::error::{Error, Result};
use crate::estimators::{EstimateKey, Family, Quantity, Scope};
use crate::likelihood::{FitMethod, FitOptions};
use crate::quadrature::{sigmoid, QuadratureRule, DEFAULT_NODES};
use crate::rng::{derive_seed, substream, tags};
use crate::sampling::{draw_sample, GeneratorBlock, LinkSource, LtsSample, Population, PortionLinkModel, ResponseKind, Truth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PopulationKind {
    /// Rasch links with normal person effects.
    #[serde(rename = "I")]
    TableThreeI,
    /// Two latent classes with venue-by-class interactions.
    #[serde(rename = "II")]
    TableThreeII,
    #[serde(rename = "file")]
    ExplicitFile,
}

/// Recipe for a synthetic population. Index 0 of each pair refers to the
/// frame portion, index 1 to the outside portion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub kind: PopulationKind,
    pub response: ResponseKind,
    pub n_frame: usize,
    /// Mean and variance of the untruncated negative binomial venue-size law.
    pub size_mean: f64,
    pub size_var: f64,
    pub tau2: usize,
    /// Venue effect is `c / (0.001 + M^(1/4))`.
    pub c: [f64; 2],
    pub mu: [f64; 2],
    pub class_effects: [f64; 2],
    pub class_probs: [f64; 2],
    pub interaction_sd: f64,
    /// Continuous response scale: `psi = 5 + d * sigmoid(eta)`.
    pub d: [f64; 2],
    /// Binary response scale: `phi = g * sigmoid(eta)`.
    pub g: [f64; 2],
}

impl PopulationSpec {
    pub fn table_three_i(response: ResponseKind) -> Self {
        Self {
            kind: PopulationKind::TableThreeI,
            response,
            n_frame: 150,
            size_mean: 8.0,
            size_var: 24.0,
            tau2: 400,
            c: [-5.45, -5.85],
            mu: [0.0, 0.0],
            class_effects: [0.0, 0.0],
            class_probs: [1.0, 0.0],
            interaction_sd: 0.0,
            d: [87.0, 65.0],
            g: [0.6, 0.39],
        }
    }

    pub fn table_three_ii(response: ResponseKind) -> Self {
        Self {
            kind: PopulationKind::TableThreeII,
            response,
            mu: [0.25, 0.05],
            c: [-7.0, -7.0],
            class_effects: [1.5, 0.0],
            class_probs: [0.3, 0.7],
            interaction_sd: 1.25,
            d: [65.05, 50.05],
            g: [0.46, 0.33],
            ..Self::table_three_i(response)
        }
    }

    pub fn defaults(kind: PopulationKind, response: ResponseKind) -> Result<Self> {
        match kind {
            PopulationKind::TableThreeI => Ok(Self::table_three_i(response)),
            PopulationKind::TableThreeII => Ok(Self::table_three_ii(response)),
            PopulationKind::ExplicitFile => Err(Error::invalid("file populations have no generator recipe")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == PopulationKind::ExplicitFile {
            return Err(Error::invalid("file populations have no generator recipe"));
        }
        if self.n_frame < 2 {
            return Err(Error::invalid("need at least two venues"));
        }
        if !(self.size_mean > 0.0 && self.size_var > self.size_mean && self.size_var.is_finite()) {
            return Err(Error::invalid(format!(
                "negative binomial needs variance > mean > 0, got mean {} and variance {}",
                self.size_mean, self.size_var
            )));
        }
        let finite = self.c.iter().chain(&self.mu).chain(&self.class_effects).all(|v| v.is_finite());
        if !finite || !(self.interaction_sd >= 0.0) {
            return Err(Error::invalid("link parameters must be finite"));
        }
        if self.kind == PopulationKind::TableThreeII {
            let p = self.class_probs;
            if !(p[0] > 0.0 && p[0] < 1.0 && (p[0] + p[1] - 1.0).abs() < 1e-12) {
                return Err(Error::invalid("class probabilities must lie in (0, 1) and sum to 1"));
            }
        }
        if self.d.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
            return Err(Error::invalid("d must be non-negative"));
        }
        if self.g.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
            return Err(Error::invalid("g must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Zero-truncated negative binomial by gamma-Poisson mixing with rejection
/// of zeros.
fn venue_sizes<R: Rng + ?Sized>(n: usize, mean: f64, var: f64, rng: &mut R) -> Vec<usize> {
    let shape = mean * mean / (var - mean);
    let gamma = Gamma::new(shape, (var - mean) / mean).unwrap();
    (0..n)
        .map(|_| loop {
            let lambda: f64 = gamma.sample(rng);
            if lambda > 0.0 {
                let k: f64 = Poisson::new(lambda).unwrap().sample(rng);
                if k >= 1.0 {
                    break k as usize;
                }
            }
        })
        .collect()
}

/// Noncentral chi-square with two degrees of freedom as a Poisson mixture
/// of central chi-squares.
fn noncentral_chi2_2<R: Rng + ?Sized>(psi: f64, rng: &mut R) -> f64 {
    let k: f64 = if psi > 0.0 {
        Poisson::new(psi / 2.0).unwrap().sample(rng)
    } else {
        0.0
    };
    Gamma::new(1.0 + k, 2.0).unwrap().sample(rng)
}

fn synth_portion<R: Rng + ?Sized>(
    spec: &PopulationSpec,
    k: usize,
    sizes: &[usize],
    persons: usize,
    rng: &mut R,
) -> (PortionLinkModel, Vec<f64>) {
    let alpha: Vec<f64> = sizes.iter().map(|&m| spec.c[k] / (0.001 + (m as f64).powf(0.25))).collect();
    let (model, eta) = match spec.kind {
        PopulationKind::TableThreeII => {
            let class: Vec<u8> = (0..persons)
                .map(|_| if rng.random::<f64>() < spec.class_probs[0] { 0 } else { 1 })
                .collect();
            let inter = Normal::new(0.0, spec.interaction_sd).unwrap();
            let interaction: Vec<Vec<f64>> = (0..sizes.len()).map(|_| vec![inter.sample(rng), 0.0]).collect();
            let effect: Vec<f64> = class.iter().map(|&c| spec.class_effects[c as usize]).collect();
            let eta = effect.iter().map(|b| spec.mu[k] + b).collect();
            let model = PortionLinkModel {
                venue_effect: alpha.iter().map(|a| spec.mu[k] + a).collect(),
                person_effect: effect,
                person_class: class,
                interaction,
            };
            (model, eta)
        }
        _ => {
            let beta: Vec<f64> = (0..persons).map(|_| rng.sample(StandardNormal)).collect();
            let model = PortionLinkModel {
                venue_effect: alpha,
                person_effect: beta.clone(),
                person_class: Vec::new(),
                interaction: Vec::new(),
            };
            (model, beta)
        }
    };
    let y = match spec.response {
        ResponseKind::Continuous => eta
            .iter()
            .map(|&e| noncentral_chi2_2(5.0 + spec.d[k] * sigmoid(e), rng))
            .collect(),
        ResponseKind::Binary => eta
            .iter()
            .map(|&e| {
                let hit = Bernoulli::new(spec.g[k] * sigmoid(e)).unwrap().sample(rng);
                if hit { 1.0 } else { 0.0 }
            })
            .collect(),
    };
    (model, y)
}

/// Draws a population instance from a recipe.
pub fn synth_population<R: Rng + ?Sized>(spec: &PopulationSpec, rng: &mut R) -> Result<Population> {
    spec.validate()?;
    let sizes = venue_sizes(spec.n_frame, spec.size_mean, spec.size_var, rng);
    let tau1 = sizes.iter().sum();
    let (u1, y1) = synth_portion(spec, 0, &sizes, tau1, rng);
    let (u2, y2) = synth_portion(spec, 1, &sizes, spec.tau2, rng);
    Ok(Population {
        n_frame: spec.n_frame,
        venue_sizes: sizes,
        y1,
        y2,
        response: spec.response,
        links: LinkSource::Model { u1, u2 },
        generator: None,
    })
}

pub(crate) fn population_from_generator(gen: &GeneratorBlock) -> Result<Population> {
    let kind = match gen.population.as_str() {
        "I" => PopulationKind::TableThreeI,
        "II" => PopulationKind::TableThreeII,
        other => return Err(Error::invalid(format!("unknown generator population {other:?}"))),
    };
    let spec = PopulationSpec::defaults(kind, gen.response)?;
    let mut pop = synth_population(&spec, &mut substream(gen.seed, &[tags::POPULATION]))?;
    pop.generator = Some(gen.clone());
    Ok(pop)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let r = sxy / (sxx * syy).sqrt();
    r.is_finite().then_some(r)
}

/// Correlation between responses and true inclusion probabilities, averaged
/// over 50 venue samples of size `n`. `None` where it is undefined.
pub fn correlation_check(pop: &Population, n: usize, seed: u64) -> Result<(Option<f64>, Option<f64>)> {
    let LinkSource::Model { u1, u2 } = &pop.links else {
        return Err(Error::Unsupported("correlations need a model-backed population".into()));
    };
    let big_n = pop.venue_sizes.len();
    if n == 0 || n > big_n {
        return Err(Error::invalid(format!("need 1 <= n <= {big_n}")));
    }
    let venue_of = pop.venue_of();
    let unsampled = 1.0 - n as f64 / big_n as f64;
    let mut acc = [(0.0, 0usize); 2];
    for s in 0..50u64 {
        let mut rng = substream(seed, &[tags::CORRELATION, s]);
        let venues = index::sample(&mut rng, big_n, n).into_vec();
        let pi1: Vec<f64> = (0..pop.y1.len())
            .map(|j| {
                let none: f64 = venues
                    .iter()
                    .filter(|&&i| venue_of.get(j) != Some(&i))
                    .map(|&i| 1.0 - u1.prob(i, j))
                    .product();
                1.0 - unsampled * none
            })
            .collect();
        let pi2: Vec<f64> = (0..pop.y2.len())
            .map(|j| 1.0 - venues.iter().map(|&i| 1.0 - u2.prob(i, j)).product::<f64>())
            .collect();
        for (k, (y, pi)) in [(&pop.y1, &pi1), (&pop.y2, &pi2)].into_iter().enumerate() {
            if let Some(r) = pearson(y, pi) {
                acc[k].0 += r;
                acc[k].1 += 1;
            }
        }
    }
    let avg = |(sum, count): (f64, usize)| (count > 0).then(|| sum / count as f64);
    Ok((avg(acc[0]), avg(acc[1])))
}

/// Population section of a run configuration. Unset numeric fields take the
/// built-in values for `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub kind: PopulationKind,
    #[serde(default)]
    pub response: ResponseKind,
    /// Seed of the population draw; derived from the master seed if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Population file for `kind = "file"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_var: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_effects: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_probs: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<[f64; 2]>,
}

impl PopulationConfig {
    pub fn new(kind: PopulationKind, response: ResponseKind) -> Self {
        Self {
            kind,
            response,
            seed: None,
            path: None,
            n_frame: None,
            size_mean: None,
            size_var: None,
            tau2: None,
            c: None,
            mu: None,
            class_effects: None,
            class_probs: None,
            interaction_sd: None,
            d: None,
            g: None,
        }
    }

    fn has_overrides(&self) -> bool {
        self.n_frame.is_some()
            || self.size_mean.is_some()
            || self.size_var.is_some()
            || self.tau2.is_some()
            || self.c.is_some()
            || self.mu.is_some()
            || self.class_effects.is_some()
            || self.class_probs.is_some()
            || self.interaction_sd.is_some()
            || self.d.is_some()
            || self.g.is_some()
    }

    /// Resolved generator recipe.
    pub fn spec(&self) -> Result<PopulationSpec> {
        let mut s = PopulationSpec::defaults(self.kind, self.response)?;
        s.n_frame = self.n_frame.unwrap_or(s.n_frame);
        s.size_mean = self.size_mean.unwrap_or(s.size_mean);
        s.size_var = self.size_var.unwrap_or(s.size_var);
        s.tau2 = self.tau2.unwrap_or(s.tau2);
        s.c = self.c.unwrap_or(s.c);
        s.mu = self.mu.unwrap_or(s.mu);
        s.class_effects = self.class_effects.unwrap_or(s.class_effects);
        s.class_probs = self.class_probs.unwrap_or(s.class_probs);
        s.interaction_sd = self.interaction_sd.unwrap_or(s.interaction_sd);
        s.d = self.d.unwrap_or(s.d);
        s.g = self.g.unwrap_or(s.g);
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PopulationKind::ExplicitFile => {
                if self.path.is_none() {
                    return Err(Error::config("population.path", "required when kind = \"file\""));
                }
                if self.has_overrides() || self.seed.is_some() {
                    return Err(Error::config("population", "file populations take no generator fields"));
                }
                Ok(())
            }
            _ => {
                if self.path.is_some() {
                    return Err(Error::config("population.path", "only valid when kind = \"file\""));
                }
                self.spec()?.validate().map_err(|e| Error::config("population", e.to_string()))
            }
        }
    }

    /// Loads or synthesizes the population.
    pub fn build(&self, master_seed: u64) -> Result<Population> {
        self.validate()?;
        if self.kind == PopulationKind::ExplicitFile {
            return Population::load(self.path.as_ref().unwrap());
        }
        let seed = self.seed.unwrap_or_else(|| derive_seed(master_seed, &[tags::POPULATION]));
        let mut pop = synth_population(&self.spec()?, &mut substream(seed, &[tags::POPULATION]))?;
        if !self.has_overrides() {
            pop.generator = Some(GeneratorBlock {
                population: if self.kind == PopulationKind::TableThreeI { "I" } else { "II" }.into(),
                seed,
                response: self.response,
            });
        }
        Ok(pop)
    }
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

fn default_methods() -> Vec<FitMethod> {
    vec![FitMethod::Unconditional]
}

fn default_families() -> Vec<Family> {
    vec![Family::Mle, Family::Ht, Family::Hk]
}

/// A complete Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub master_seed: u64,
    /// Venues per sample.
    pub n: usize,
    /// Number of Monte Carlo samples.
    pub r: usize,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<FitMethod>,
    /// Estimator families to record.
    #[serde(default = "default_families")]
    pub estimators: Vec<Family>,
    pub population: PopulationConfig,
    #[serde(default)]
    pub fit: FitOptions,
    /// Bootstrap settings; no bootstrap when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootConfig>,
}

impl McConfig {
    pub fn new(population: PopulationConfig, n: usize, r: usize, master_seed: u64) -> Self {
        Self {
            master_seed,
            n,
            r,
            quadrature_nodes: DEFAULT_NODES,
            methods: default_methods(),
            estimators: default_families(),
            population,
            fit: FitOptions::default(),
            bootstrap: None,
        }
    }

    /// Checks every invariant that does not need the population.
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::config("r", "need r >= 1"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "need n >= 1"));
        }
        if self.quadrature_nodes == 0 || self.quadrature_nodes > 200 {
            return Err(Error::config("quadrature_nodes", "must lie in 1..=200"));
        }
        if self.methods.iter().collect::<HashSet<_>>().len() != self.methods.len() {
            return Err(Error::config("methods", "duplicate entries"));
        }
        if self.estimators.iter().collect::<HashSet<_>>().len() != self.estimators.len() {
            return Err(Error::config("estimators", "duplicate entries"));
        }
        self.fit.validate().map_err(|e| Error::config("fit", e.to_string()))?;
        if let Some(b) = &self.bootstrap {
            b.validate()?;
        }
        self.population.validate()
    }
}

/// Seed of the bootstrap run attached to replicate `i`.
pub fn bootstrap_seed(master_seed: u64, replicate: usize) -> u64 {
    derive_seed(master_seed, &[tags::BOOTSTRAP, replicate as u64])
}

/// True value of the parameter an estimator targets.
pub fn truth_value(truth: &Truth, key: EstimateKey) -> f64 {
    let (size, total) = match key.scope {
        Scope::One => (truth.tau1, truth.y1_total),
        Scope::Two => (truth.tau2, truth.y2_total),
        Scope::All => (truth.tau(), truth.y_total()),
    };
    match key.quantity {
        Quantity::Size => size,
        Quantity::Total => total,
        Quantity::Mean => total / size,
    }
}

/// One estimator in one Monte Carlo sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub method: FitMethod,
    pub key: EstimateKey,
    pub truth: f64,
    pub value: Option<f64>,
    pub sd: Option<f64>,
    pub ci: Option<CiRecord>,
    pub failure: Option<String>,
    pub boot_failures: Option<usize>,
}

/// Output of a Monte Carlo run.
#[derive(Debug, Clone)]
pub struct McOutput {
    pub truth: Truth,
    pub records: Vec<ReplicateRecord>,
    pub report: McReport,
    /// Realized samples with their bootstrap seeds, when requested.
    pub samples: Vec<(usize, LtsSample)>,
}

fn replicate_records(
    pop: &Population,
    truth: &Truth,
    config: &McConfig,
    rule: &QuadratureRule,
    i: usize,
) -> Result<(Vec<ReplicateRecord>, LtsSample)> {
    let mut rng = substream(config.master_seed, &[tags::REPLICATE, i as u64]);
    let sample = draw_sample(pop, config.n, &mut rng)?;
    let mut out = Vec::new();
    if config.estimators.is_empty() {
        return Ok((out, sample));
    }
    let geom = sample.geometry()?;
    for &method in &config.methods {
        let (f1, f2, mut set) = estimate_sample(&sample, &geom, rule, &config.fit, method);
        if let (Some(boot), Ok(fit1)) = (&config.bootstrap, &f1) {
            let seed = bootstrap_seed(config.master_seed, i);
            if let Ok(with_sd) = bootstrap_estimates(&sample, fit1, f2.as_ref().ok(), &set, &geom, rule, &config.fit, boot, seed) {
                set = with_sd;
            }
        }
        for est in set.estimates {
            if !config.estimators.contains(&est.key.family) {
                continue;
            }
            out.push(ReplicateRecord {
                replicate: i,
                method,
                key: est.key,
                truth: truth_value(truth, est.key),
                value: est.value,
                sd: est.sd,
                ci: est.ci,
                failure: est.failure,
                boot_failures: set.boot_failures,
            });
        }
    }
    Ok((out, sample))
}

/// Runs the experiment on the current rayon pool. Output does not depend on
/// the number of threads.
pub fn run_monte_carlo(config: &McConfig, keep_samples: bool) -> Result<McOutput> {
    config.validate()?;
    let pop = config.population.build(config.master_seed)?;
    run_on_population(config, &pop, keep_samples)
}

/// As [`run_monte_carlo`] with a ready population.
pub fn run_on_population(config: &McConfig, pop: &Population, keep_samples: bool) -> Result<McOutput> {
    config.validate()?;
    if config.n > pop.venue_sizes.len() {
        return Err(Error::config(
            "n",
            format!("{} venues requested from a frame of {}", config.n, pop.venue_sizes.len()),
        ));
    }
    let rule = QuadratureRule::new(config.quadrature_nodes)?;
    let truth = pop.truth();
    let per: Vec<(Vec<ReplicateRecord>, LtsSample)> = (0..config.r)
        .into_par_iter()
        .map(|i| replicate_records(pop, &truth, config, &rule, i))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut samples = Vec::new();
    for (i, (recs, sample)) in per.into_iter().enumerate() {
        records.extend(recs);
        if keep_samples {
            samples.push((i, sample));
        }
    }
    let report = compute_report(&records);
    Ok(McOutput {
        truth,
        records,
        report,
        samples,
    })
}

/// Performance summary of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub method: FitMethod,
    pub key: EstimateKey,
    pub truth: f64,
    pub replicates: usize,
    pub successes: usize,
    pub failures: usize,
    pub failure_pct: f64,
    pub r_bias: Option<f64>,
    pub sqrt_r_mse: Option<f64>,
    pub mdre: Option<f64>,
    pub mdare: Option<f64>,
    /// Bootstrap variance against the Monte Carlo variance.
    pub var_r_bias: Option<f64>,
    pub var_sqrt_r_mse: Option<f64>,
    pub var_mdre: Option<f64>,
    pub var_mdare: Option<f64>,
    pub cp: Option<f64>,
    pub mrl: Option<f64>,
    pub mdrl: Option<f64>,
    pub intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct McReport {
    pub rows: Vec<MetricRow>,
}

impl McReport {
    pub fn row(&self, method: FitMethod, key: EstimateKey) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.key == key)
    }
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// `(r-bias, sqrt r-mse, mdre, mdare)` of estimates against `theta`.
pub fn relative_metrics(estimates: &[f64], theta: f64) -> Option<[f64; 4]> {
    if estimates.is_empty() || theta == 0.0 || !theta.is_finite() {
        return None;
    }
    let r = estimates.len() as f64;
    let rel: Vec<f64> = estimates.iter().map(|e| (e - theta) / theta).collect();
    let bias = rel.iter().sum::<f64>() / r;
    let rmse = (rel.iter().map(|d| d * d).sum::<f64>() / r).sqrt();
    let abs: Vec<f64> = rel.iter().map(|d| d.abs()).collect();
    Some([bias, rmse, median(&rel)?, median(&abs)?])
}

/// Aggregates per-replicate records into metrics, one row per method and
/// estimator in first-seen order.
pub fn compute_report(records: &[ReplicateRecord]) -> McReport {
    let mut order: Vec<(FitMethod, EstimateKey)> = Vec::new();
    for r in records {
        if !order.contains(&(r.method, r.key)) {
            order.push((r.method, r.key));
        }
    }
    let rows = order
        .into_iter()
        .map(|(method, key)| {
            let group: Vec<&ReplicateRecord> = records.iter().filter(|r| r.method == method && r.key == key).collect();
            let truth = group[0].truth;
            let values: Vec<f64> = group.iter().filter_map(|r| r.value).collect();
            let m = relative_metrics(&values, truth);
            let var_m = if values.len() >= 2 {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let mc_var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
                let boot_var: Vec<f64> = group.iter().filter(|r| r.value.is_some()).filter_map(|r| r.sd.map(|s| s * s)).collect();
                relative_metrics(&boot_var, mc_var)
            } else {
                None
            };
            let cis: Vec<&CiRecord> = group.iter().filter(|r| r.value.is_some()).filter_map(|r| r.ci.as_ref()).collect();
            let (cp, mrl, mdrl) = if cis.is_empty() || truth == 0.0 {
                (None, None, None)
            } else {
                let k = cis.len() as f64;
                let covered = cis.iter().filter(|c| c.lower <= truth && truth <= c.upper).count();
                let rel_len: Vec<f64> = cis.iter().map(|c| (c.upper - c.lower) / truth.abs()).collect();
                (
                    Some(covered as f64 / k),
                    Some(rel_len.iter().sum::<f64>() / k),
                    median(&rel_len),
                )
            };
            let failures = group.len() - values.len();
            MetricRow {
                method,
                key,
                truth,
                replicates: group.len(),
                successes: values.len(),
                failures,
                failure_pct: 100.0 * failures as f64 / group.len() as f64,
                r_bias: m.map(|m| m[0]),
                sqrt_r_mse: m.map(|m| m[1]),
                mdre: m.map(|m| m[2]),
                mdare: m.map(|m| m[3]),
                var_r_bias: var_m.map(|m| m[0]),
                var_sqrt_r_mse: var_m.map(|m| m[1]),
                var_mdre: var_m.map(|m| m[2]),
                var_mdare: var_m.map(|m| m[3]),
                cp,
                mrl,
                mdrl,
                intervals: cis.len(),
            }
        })
        .collect();
    McReport { rows }
}

/// Machine-precision float text (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Column order of the per-replicate CSV.
pub const REPLICATE_HEADER: [&str; 13] = [
    "replicate",
    "method",
    "parameter",
    "truth",
    "value",
    "sd",
    "ci_lower",
    "ci_upper",
    "ci_kind",
    "ci_sd",
    "ci_flag",
    "failure",
    "boot_failures",
];

pub(crate) fn kind_label(k: CiKind) -> &'static str {
    match k {
        CiKind::LognormalSize => "lognormal",
        CiKind::KornGraubardProportion => "korn-graubard",
        CiKind::WaldNormal => "wald",
    }
}

fn parse_kind(s: &str) -> Option<CiKind> {
    match s {
        "lognormal" => Some(CiKind::LognormalSize),
        "korn-graubard" => Some(CiKind::KornGraubardProportion),
        "wald" => Some(CiKind::WaldNormal),
        _ => None,
    }
}

fn parse_method(s: &str) -> Option<FitMethod> {
    match s {
        "U" => Some(FitMethod::Unconditional),
        "C" => Some(FitMethod::Conditional),
        _ => None,
    }
}

pub fn write_replicate_csv<W: Write>(records: &[ReplicateRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(REPLICATE_HEADER).map_err(csv_err)?;
    for r in records {
        let (lo, hi, kind, ci_sd, flag) = match &r.ci {
            Some(c) => (
                fmt_f64(c.lower),
                fmt_f64(c.upper),
                kind_label(c.kind).to_string(),
                fmt_f64(c.sd_used),
                c.flag.clone().unwrap_or_default(),
            ),
            None => Default::default(),
        };
        w.write_record([
            r.replicate.to_string(),
            r.method.tag().to_string(),
            r.key.to_string(),
            fmt_f64(r.truth),
            fmt_opt(r.value),
            fmt_opt(r.sd),
            lo,
            hi,
            kind,
            ci_sd,
            flag,
            r.failure.clone().unwrap_or_default(),
            r.boot_failures.map(|b| b.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a per-replicate CSV written by [`write_replicate_csv`].
pub fn read_replicate_csv<R: Read>(input: R) -> Result<Vec<ReplicateRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.iter().ne(REPLICATE_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    for (idx, row) in rd.records().enumerate() {
        let line = idx + 2;
        let bad = |m: &str| Error::Parse {
            line,
            message: m.to_string(),
        };
        let row = row.map_err(|e| bad(&e.to_string()))?;
        let num = |i: usize| -> Result<Option<f64>> {
            let s = &row[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(&format!("bad number in `{}`", REPLICATE_HEADER[i])))
            }
        };
        let ci = if row[8].is_empty() {
            None
        } else {
            Some(CiRecord {
                lower: num(6)?.ok_or_else(|| bad("missing ci_lower"))?,
                upper: num(7)?.ok_or_else(|| bad("missing ci_upper"))?,
                kind: parse_kind(&row[8]).ok_or_else(|| bad("unknown ci_kind"))?,
                sd_used: num(9)?.ok_or_else(|| bad("missing ci_sd"))?,
                flag: (!row[10].is_empty()).then(|| row[10].to_string()),
            })
        };
        out.push(ReplicateRecord {
            replicate: row[0].parse().map_err(|_| bad("bad replicate index"))?,
            method: parse_method(&row[1]).ok_or_else(|| bad("unknown method"))?,
            key: EstimateKey::parse(&row[2]).ok_or_else(|| bad("unknown parameter"))?,
            truth: num(3)?.ok_or_else(|| bad("missing truth"))?,
            value: num(4)?,
            sd: num(5)?,
            ci,
            failure: (!row[11].is_empty()).then(|| row[11].to_string()),
            boot_failures: if row[12].is_empty() {
                None
            } else {
                Some(row[12].parse().map_err(|_| bad("bad boot_failures"))?)
            },
        });
    }
    Ok(out)
}

pub const METRICS_HEADER: [&str; 20] = [
    "method",
    "parameter",
    "truth",
    "replicates",
    "successes",
    "failures",
    "failure_pct",
    "r_bias",
    "sqrt_r_mse",
    "mdre",
    "mdare",
    "var_r_bias",
    "var_sqrt_r_mse",
    "var_mdre",
    "var_mdare",
    "cp",
    "mrl",
    "mdrl",
    "intervals",
    "family",
];

pub fn write_metrics_csv<W: Write>(report: &McReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            r.method.tag().to_string(),
            r.key.to_string(),
            fmt_f64(r.truth),
            r.replicates.to_string(),
            r.successes.to_string(),
            r.failures.to_string(),
            fmt_f64(r.failure_pct),
            fmt_opt(r.r_bias),
            fmt_opt(r.sqrt_r_mse),
            fmt_opt(r.mdre),
            fmt_opt(r.mdare),
            fmt_opt(r.var_r_bias),
            fmt_opt(r.var_sqrt_r_mse),
            fmt_opt(r.var_mdre),
            fmt_opt(r.var_mdare),
            fmt_opt(r.cp),
            fmt_opt(r.mrl),
            fmt_opt(r.mdrl),
            r.intervals.to_string(),
            format!("{:?}", r.key.family).to_lowercase(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.abs() >= 10.0 => format!("{x:.1}"),
        Some(x) => format!("{x:.3}"),
        None => "-".into(),
    }
}

/// Human-readable table, one block per fitting method.
pub fn render_table(report: &McReport) -> String {
    let mut s = String::new();
    let mut methods: Vec<FitMethod> = Vec::new();
    for r in &report.rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    for m in methods {
        let _ = writeln!(s, "method {}", m.tag());
        let _ = writeln!(
            s,
            "{:<11} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7}",
            "parameter", "r-bias", "sqrt-mse", "mdre", "mdare", "var-bias", "cp", "mrl", "mdrl", "fail%"
        );
        for r in report.rows.iter().filter(|r| r.method == m) {
            let _ = writeln!(
                s,
                "{:<11} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7.2}",
                r.key.to_string(),
                cell(r.r_bias),
                cell(r.sqrt_r_mse),
                cell(r.mdre),
                cell(r.mdare),
                cell(r.var_r_bias),
                cell(r.cp),
                cell(r.mrl),
                cell(r.mdrl),
                r.failure_pct
            );
        }
        s.push('\n');
    }
    s
}
