//! Populations and the two-stage design: a simple random sample without
//! replacement of venues, full enumeration of the sampled venues, and one
//! wave of naming that adds every linked person to the sample.
//!
//! Frame-covered persons are indexed `0..tau1` with venue `i` holding the
//! contiguous block that follows venues `0..i`. Link indicators between a
//! venue and its own members are always zero.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FrameGeometry, Portion};
use crate::quadrature::{sigmoid, LinkPattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    #[default]
    Continuous,
    Binary,
}

impl ResponseKind {
    pub fn label(self) -> &'static str {
        match self {
            ResponseKind::Continuous => "continuous",
            ResponseKind::Binary => "binary",
        }
    }
}

impl std::str::FromStr for ResponseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(ResponseKind::Continuous),
            "binary" => Ok(ResponseKind::Binary),
            other => Err(Error::invalid(format!("unknown response kind {other:?}"))),
        }
    }
}

/// Logit-linear link generator:
/// `logit p_ij = venue_effect[i] + person_effect[j] + interaction[i][class[j]]`.
///
/// The interaction term is absent when `person_class` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PortionLinkModel {
    pub venue_effect: Vec<f64>,
    pub person_effect: Vec<f64>,
    pub person_class: Vec<u8>,
    pub interaction: Vec<Vec<f64>>,
}

impl PortionLinkModel {
    #[inline]
    pub fn logit(&self, venue: usize, person: usize) -> f64 {
        let mut eta = self.venue_effect[venue] + self.person_effect[person];
        if !self.person_class.is_empty() {
            eta += self.interaction[venue][self.person_class[person] as usize];
        }
        eta
    }

    #[inline]
    pub fn prob(&self, venue: usize, person: usize) -> f64 {
        sigmoid(self.logit(venue, person))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinkSource {
    /// Row-major `N x tau_k` 0/1 matrices.
    Explicit { x1: Vec<Vec<u8>>, x2: Vec<Vec<u8>> },
    Model { u1: PortionLinkModel, u2: PortionLinkModel },
}

/// Reference to a built-in population recipe, kept so a synthesized
/// population can be written back to a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorBlock {
    /// `"I"` or `"II"`.
    pub population: String,
    pub seed: u64,
    #[serde(default)]
    pub response: ResponseKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub n_frame: usize,
    pub venue_sizes: Vec<usize>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub response: ResponseKind,
    pub links: LinkSource,
    pub generator: Option<GeneratorBlock>,
}

impl Population {
    pub fn tau1(&self) -> usize {
        self.venue_sizes.iter().sum()
    }

    pub fn tau2(&self) -> usize {
        self.y2.len()
    }

    /// Start offset of each venue's member block.
    pub fn venue_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.n_frame + 1);
        let mut acc = 0;
        offsets.push(0);
        for &m in &self.venue_sizes {
            acc += m;
            offsets.push(acc);
        }
        offsets
    }

    /// Person-level U1 venue membership.
    pub fn venue_of(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.tau1());
        for (i, &m) in self.venue_sizes.iter().enumerate() {
            out.extend(std::iter::repeat_n(i, m));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frame == 0 || self.venue_sizes.len() != self.n_frame {
            return Err(Error::invalid(format!(
                "venue_sizes has {} entries for a frame of {}",
                self.venue_sizes.len(),
                self.n_frame
            )));
        }
        if self.venue_sizes.contains(&0) {
            return Err(Error::invalid("venue sizes must be positive"));
        }
        let tau1 = self.tau1();
        if self.y1.len() != tau1 {
            return Err(Error::invalid(format!(
                "y1 has {} values, expected tau1 = {tau1}",
                self.y1.len()
            )));
        }
        if self.y1.iter().chain(&self.y2).any(|y| !y.is_finite()) {
            return Err(Error::invalid("y values must be finite"));
        }
        match &self.links {
            LinkSource::Explicit { x1, x2 } => {
                check_matrix("x1", x1, self.n_frame, tau1)?;
                check_matrix("x2", x2, self.n_frame, self.tau2())?;
                let offsets = self.venue_offsets();
                for i in 0..self.n_frame {
                    if x1[i][offsets[i]..offsets[i + 1]].iter().any(|&b| b != 0) {
                        return Err(Error::invalid(format!(
                            "x1 links venue {i} to one of its own members"
                        )));
                    }
                }
            }
            LinkSource::Model { u1, u2 } => {
                for (name, m, tau) in [("u1", u1, tau1), ("u2", u2, self.tau2())] {
                    if m.venue_effect.len() != self.n_frame || m.person_effect.len() != tau {
                        return Err(Error::invalid(format!("link model {name} has wrong dimensions")));
                    }
                    if !m.person_class.is_empty()
                        && (m.person_class.len() != tau || m.interaction.len() != self.n_frame)
                    {
                        return Err(Error::invalid(format!("link model {name} class table mismatch")));
                    }
                }
            }
        }
        Ok(())
    }

    /// True sizes, totals and means `(tau1, tau2, Y1, Y2)`.
    pub fn truth(&self) -> Truth {
        Truth {
            tau1: self.tau1() as f64,
            tau2: self.tau2() as f64,
            y1_total: self.y1.iter().sum(),
            y2_total: self.y2.iter().sum(),
        }
    }

    /// Probability that venue `i` links to person `j` of a portion (1 or 0
    /// for explicit matrices).
    pub fn link_probability(&self, portion: Portion, venue: usize, person: usize) -> f64 {
        match (&self.links, portion) {
            (LinkSource::Explicit { x1, .. }, Portion::U1) => x1[venue][person] as f64,
            (LinkSource::Explicit { x2, .. }, Portion::U2) => x2[venue][person] as f64,
            (LinkSource::Model { u1, .. }, Portion::U1) => u1.prob(venue, person),
            (LinkSource::Model { u2, .. }, Portion::U2) => u2.prob(venue, person),
        }
    }
}

fn check_matrix(name: &str, x: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    if x.len() != rows || x.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid(format!("{name} must be {rows} x {cols}")));
    }
    if x.iter().flatten().any(|&b| b > 1) {
        return Err(Error::invalid(format!("{name} must contain only 0/1")));
    }
    Ok(())
}

/// Population parameters used as the truth in Monte Carlo studies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub tau1: f64,
    pub tau2: f64,
    pub y1_total: f64,
    pub y2_total: f64,
}

impl Truth {
    pub fn tau(&self) -> f64 {
        self.tau1 + self.tau2
    }

    pub fn y_total(&self) -> f64 {
        self.y1_total + self.y2_total
    }
}

/// Where a sampled person was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stratum {
    /// Member of the sampled venue at this position in `selected_venues`.
    InVenue(usize),
    /// Frame-covered, outside the sampled venues, named at least once.
    BeyondFrameSample,
    /// Outside the frame, named at least once.
    OutsideFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonRecord {
    pub stratum: Stratum,
    pub pattern: LinkPattern,
    pub y: f64,
}

/// One realized sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LtsSample {
    pub n_frame: usize,
    /// Frame indices of the sampled venues, in sample order.
    pub selected_venues: Vec<usize>,
    pub venue_sizes: Vec<usize>,
    pub persons: Vec<PersonRecord>,
    pub response: ResponseKind,
}

impl LtsSample {
    pub fn n(&self) -> usize {
        self.selected_venues.len()
    }

    pub fn geometry(&self) -> Result<FrameGeometry> {
        FrameGeometry::new(self.n(), self.n_frame)
    }

    pub fn m_total(&self) -> usize {
        self.venue_sizes.iter().sum()
    }

    pub fn r1(&self) -> usize {
        self.count(|s| s == Stratum::BeyondFrameSample)
    }

    pub fn r2(&self) -> usize {
        self.count(|s| s == Stratum::OutsideFrame)
    }

    fn count(&self, pred: impl Fn(Stratum) -> bool) -> usize {
        self.persons.iter().filter(|p| pred(p.stratum)).count()
    }

    /// Persons of the given portion (`S1*` or `S2*`), in record order.
    pub fn portion_members(&self, portion: Portion) -> impl Iterator<Item = &PersonRecord> {
        self.persons.iter().filter(move |p| match portion {
            Portion::U1 => p.stratum != Stratum::OutsideFrame,
            Portion::U2 => p.stratum == Stratum::OutsideFrame,
        })
    }

    /// Checks the structural invariants of a sample.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || n > self.n_frame {
            return Err(Error::invalid(format!(
                "sample has {n} venues for a frame of {}",
                self.n_frame
            )));
        }
        if self.venue_sizes.len() != n {
            return Err(Error::invalid("venue_sizes must match selected venues"));
        }
        let mut members = vec![0usize; n];
        for (k, p) in self.persons.iter().enumerate() {
            match p.stratum {
                Stratum::InVenue(v) => {
                    if v >= n {
                        return Err(Error::invalid(format!("person {k}: venue {v} out of range")));
                    }
                    if p.pattern.len() + 1 != n {
                        return Err(Error::invalid(format!(
                            "person {k}: within-venue pattern must have {} bits",
                            n - 1
                        )));
                    }
                    members[v] += 1;
                }
                _ => {
                    if p.pattern.len() != n {
                        return Err(Error::invalid(format!("person {k}: pattern must have {n} bits")));
                    }
                    if p.pattern.count_ones() == 0 {
                        return Err(Error::invalid(format!(
                            "person {k}: named persons must be linked to at least one venue"
                        )));
                    }
                }
            }
            if !p.y.is_finite() {
                return Err(Error::invalid(format!("person {k}: y must be finite")));
            }
        }
        if members != self.venue_sizes {
            return Err(Error::invalid(
                "venue member records do not match the declared venue sizes",
            ));
        }
        Ok(())
    }
}

/// Draws one sample of `n` venues and collects everyone they name.
pub fn draw_sample<R: Rng + ?Sized>(pop: &Population, n: usize, rng: &mut R) -> Result<LtsSample> {
    draw_from(
        &pop.venue_sizes,
        &pop.y1,
        &pop.y2,
        &pop.links,
        pop.response,
        n,
        rng,
    )
}

/// Sampling core shared with the bootstrap. Frame-covered persons past the
/// last venue block belong to no venue and can only enter by being named.
pub(crate) fn draw_from<R: Rng + ?Sized>(
    venue_sizes: &[usize],
    y1: &[f64],
    y2: &[f64],
    links: &LinkSource,
    response: ResponseKind,
    n: usize,
    rng: &mut R,
) -> Result<LtsSample> {
    let n_frame = venue_sizes.len();
    if n == 0 || n > n_frame {
        return Err(Error::invalid(format!(
            "cannot sample {n} venues from a frame of {n_frame}"
        )));
    }
    let mut venues = index::sample(rng, n_frame, n).into_vec();
    venues.sort_unstable();

    let mut offsets = Vec::with_capacity(n_frame + 1);
    offsets.push(0usize);
    for &m in venue_sizes {
        offsets.push(offsets.last().unwrap() + m);
    }
    let assigned = offsets[n_frame];
    let mut in_sampled = vec![false; y1.len()];
    for &v in &venues {
        for flag in &mut in_sampled[offsets[v]..offsets[v + 1]] {
            *flag = true;
        }
    }
    debug_assert!(assigned <= y1.len());

    let link = |portion: Portion, venue: usize, person: usize, rng: &mut R| -> bool {
        match (links, portion) {
            (LinkSource::Explicit { x1, .. }, Portion::U1) => x1[venue][person] != 0,
            (LinkSource::Explicit { x2, .. }, Portion::U2) => x2[venue][person] != 0,
            (LinkSource::Model { u1, .. }, Portion::U1) => rng.random::<f64>() < u1.prob(venue, person),
            (LinkSource::Model { u2, .. }, Portion::U2) => rng.random::<f64>() < u2.prob(venue, person),
        }
    };

    let mut persons = Vec::new();
    let mut bits = Vec::with_capacity(n);

    // Members of sampled venues, in sample order.
    for (pos, &v) in venues.iter().enumerate() {
        for j in offsets[v]..offsets[v + 1] {
            bits.clear();
            for &other in venues.iter().filter(|&&o| o != v) {
                bits.push(link(Portion::U1, other, j, rng));
            }
            persons.push(PersonRecord {
                stratum: Stratum::InVenue(pos),
                pattern: LinkPattern::new(bits.clone()),
                y: y1[j],
            });
        }
    }
    // Frame-covered persons outside the sampled venues.
    for j in (0..y1.len()).filter(|&j| !in_sampled[j]) {
        bits.clear();
        for &v in &venues {
            bits.push(link(Portion::U1, v, j, rng));
        }
        if bits.iter().any(|&b| b) {
            persons.push(PersonRecord {
                stratum: Stratum::BeyondFrameSample,
                pattern: LinkPattern::new(bits.clone()),
                y: y1[j],
            });
        }
    }
    for (j, &y) in y2.iter().enumerate() {
        bits.clear();
        for &v in &venues {
            bits.push(link(Portion::U2, v, j, rng));
        }
        if bits.iter().any(|&b| b) {
            persons.push(PersonRecord {
                stratum: Stratum::OutsideFrame,
                pattern: LinkPattern::new(bits.clone()),
                y,
            });
        }
    }

    Ok(LtsSample {
        n_frame,
        venue_sizes: venues.iter().map(|&v| venue_sizes[v]).collect(),
        selected_venues: venues,
        persons,
        response,
    })
}

/// Pattern histograms of one sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservedCounts {
    pub n: usize,
    pub venue_sizes: Vec<usize>,
    pub r1: usize,
    pub r2: usize,
    /// `R_x^(1)`: frame-covered persons outside the sampled venues.
    pub beyond: BTreeMap<LinkPattern, usize>,
    /// `R_x^(2)`: persons outside the frame.
    pub outside: BTreeMap<LinkPattern, usize>,
    /// `R_x^(A_i)` for each sampled venue.
    pub within: Vec<BTreeMap<LinkPattern, usize>>,
}

impl ObservedCounts {
    pub fn m_total(&self) -> usize {
        self.venue_sizes.iter().sum()
    }

    /// Number of distinct persons observed in a portion.
    pub fn observed(&self, portion: Portion) -> usize {
        match portion {
            Portion::U1 => self.m_total() + self.r1,
            Portion::U2 => self.r2,
        }
    }
}

pub fn observed_counts(sample: &LtsSample) -> ObservedCounts {
    let n = sample.n();
    let mut counts = ObservedCounts {
        n,
        venue_sizes: sample.venue_sizes.clone(),
        within: vec![BTreeMap::new(); n],
        ..Default::default()
    };
    for p in &sample.persons {
        let slot = match p.stratum {
            Stratum::InVenue(v) => &mut counts.within[v],
            Stratum::BeyondFrameSample => {
                counts.r1 += 1;
                &mut counts.beyond
            }
            Stratum::OutsideFrame => {
                counts.r2 += 1;
                &mut counts.outside
            }
        };
        *slot.entry(p.pattern.clone()).or_insert(0) += 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// Population files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PopulationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    venue_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response: Option<ResponseKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x1: Option<Vec<Vec<u8>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x2: Option<Vec<Vec<u8>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GeneratorBlock>,
}

impl Population {
    /// Parses a population file (JSON).
    pub fn from_json(text: &str) -> Result<Self> {
        let file: PopulationFile = serde_json::from_str(text)?;
        if let Some(gen) = file.generator {
            if file.x1.is_some() || file.x2.is_some() || file.y1.is_some() || file.y2.is_some() {
                return Err(Error::invalid(
                    "a population file gives either a generator block or explicit data, not both",
                ));
            }
            return crate::simulation::population_from_generator(&gen);
        }
        let missing = |f: &str| Error::invalid(format!("population file is missing `{f}`"));
        let venue_sizes = file.venue_sizes.ok_or_else(|| missing("venue_sizes"))?;
        let pop = Population {
            n_frame: file.n_frame.unwrap_or(venue_sizes.len()),
            venue_sizes,
            y1: file.y1.ok_or_else(|| missing("y1"))?,
            y2: file.y2.ok_or_else(|| missing("y2"))?,
            response: file.response.unwrap_or_default(),
            links: LinkSource::Explicit {
                x1: file.x1.ok_or_else(|| missing("x1"))?,
                x2: file.x2.ok_or_else(|| missing("x2"))?,
            },
            generator: None,
        };
        pop.validate()?;
        Ok(pop)
    }

    /// Serializes the population. Generator-backed populations are written as
    /// their generator block; explicit populations as full matrices.
    pub fn to_json(&self) -> Result<String> {
        let file = match (&self.generator, &self.links) {
            (Some(gen), _) => PopulationFile {
                n_frame: None,
                venue_sizes: None,
                response: None,
                y1: None,
                y2: None,
                x1: None,
                x2: None,
                generator: Some(gen.clone()),
            },
            (None, LinkSource::Explicit { x1, x2 }) => PopulationFile {
                n_frame: Some(self.n_frame),
                venue_sizes: Some(self.venue_sizes.clone()),
                response: Some(self.response),
                y1: Some(self.y1.clone()),
                y2: Some(self.y2.clone()),
                x1: Some(x1.clone()),
                x2: Some(x2.clone()),
                generator: None,
            },
            (None, LinkSource::Model { .. }) => {
                return Err(Error::Unsupported(
                    "model-backed populations without a generator block cannot be serialized".into(),
                ))
            }
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
