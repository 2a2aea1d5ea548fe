//! Line-oriented text format for a realized sample.
//!
//! ```text
//! # comments and blank lines are ignored
//! lts-sample 1
//! n_frame 150
//! response continuous
//! seed 42                      optional bootstrap seed
//! venue 17 3                   frame index, cluster size (one line per venue, in order)
//! person venue 0 01101 12.5    member of the first venue: n-1 bits, own venue omitted
//! person frame 100110 3.0      frame-covered, named from outside its venue: n bits
//! person outside 000101 1.0    outside the frame: n bits
//! ```
//!
//! A pattern with no bits (members when `n = 1`) is written `-`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::quadrature::LinkPattern;
use crate::sampling::{LtsSample, PersonRecord, ResponseKind, Stratum};
use crate::simulation::fmt_f64;

const MAGIC: &str = "lts-sample";
const VERSION: &str = "1";

fn pattern_text(p: &LinkPattern) -> String {
    if p.is_empty() {
        "-".into()
    } else {
        p.to_string()
    }
}

/// Renders a sample. The output parses back to an identical sample.
pub fn write_sample(sample: &LtsSample, seed: Option<u64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "n_frame {}", sample.n_frame);
    let _ = writeln!(s, "response {}", sample.response.label());
    if let Some(seed) = seed {
        let _ = writeln!(s, "seed {seed}");
    }
    for (v, m) in sample.selected_venues.iter().zip(&sample.venue_sizes) {
        let _ = writeln!(s, "venue {v} {m}");
    }
    for p in &sample.persons {
        let stratum = match p.stratum {
            Stratum::InVenue(v) => format!("venue {v}"),
            Stratum::BeyondFrameSample => "frame".into(),
            Stratum::OutsideFrame => "outside".into(),
        };
        let _ = writeln!(s, "person {stratum} {} {}", pattern_text(&p.pattern), fmt_f64(p.y));
    }
    s
}

/// A parsed sample file.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFile {
    pub sample: LtsSample,
    pub seed: Option<u64>,
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, what: &str, line: usize) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        message: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} {tok:?}"),
    })
}

/// Parses a sample file. Errors carry 1-based line numbers.
pub fn parse_sample(text: &str) -> Result<SampleFile> {
    let mut n_frame = None;
    let mut response = None;
    let mut seed = None;
    let mut venues = Vec::new();
    let mut sizes = Vec::new();
    // Person lines with their line numbers, resolved once the venue count is known.
    let mut persons: Vec<(usize, Stratum, String, f64)> = Vec::new();
    let mut saw_magic = false;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tok = content.split_whitespace();
        let head = tok.next().unwrap();
        let err = |m: String| Error::Parse { line, message: m };
        if !saw_magic {
            if head != MAGIC || tok.next() != Some(VERSION) {
                return Err(err(format!("expected `{MAGIC} {VERSION}` header")));
            }
            saw_magic = true;
            continue;
        }
        match head {
            "n_frame" => n_frame = Some(parse_num::<usize>(tok.next(), "n_frame", line)?),
            "response" => {
                let r = tok.next().ok_or_else(|| err("missing response kind".into()))?;
                response = Some(r.parse::<ResponseKind>().map_err(|e| err(e.to_string()))?);
            }
            "seed" => seed = Some(parse_num::<u64>(tok.next(), "seed", line)?),
            "venue" => {
                if !persons.is_empty() {
                    return Err(err("venue lines must precede person lines".into()));
                }
                venues.push(parse_num::<usize>(tok.next(), "venue index", line)?);
                sizes.push(parse_num::<usize>(tok.next(), "venue size", line)?);
            }
            "person" => {
                let stratum = match tok.next() {
                    Some("venue") => Stratum::InVenue(parse_num(tok.next(), "venue position", line)?),
                    Some("frame") => Stratum::BeyondFrameSample,
                    Some("outside") => Stratum::OutsideFrame,
                    other => return Err(err(format!("unknown stratum {other:?}"))),
                };
                let bits = tok.next().ok_or_else(|| err("missing link pattern".into()))?.to_string();
                let y: f64 = parse_num(tok.next(), "y value", line)?;
                persons.push((line, stratum, bits, y));
            }
            other => return Err(err(format!("unknown record {other:?}"))),
        }
        if tok.next().is_some() {
            return Err(err("trailing fields".into()));
        }
    }
    let end = text.lines().count().max(1);
    if !saw_magic {
        return Err(Error::Parse {
            line: end,
            message: "empty sample file".into(),
        });
    }
    let n_frame = n_frame.ok_or_else(|| Error::Parse {
        line: end,
        message: "missing n_frame".into(),
    })?;
    let n = venues.len();
    let mut records = Vec::with_capacity(persons.len());
    for (line, stratum, bits, y) in persons {
        let err = |m: String| Error::Parse { line, message: m };
        let pattern = if bits == "-" {
            LinkPattern::zeros(0)
        } else {
            LinkPattern::parse(&bits).map_err(|e| err(e.to_string()))?
        };
        let want = match stratum {
            Stratum::InVenue(v) => {
                if v >= n {
                    return Err(err(format!("venue position {v} out of range (n = {n})")));
                }
                n - 1
            }
            _ => n,
        };
        if pattern.len() != want {
            return Err(err(format!("pattern has {} bits, expected {want}", pattern.len())));
        }
        if !matches!(stratum, Stratum::InVenue(_)) && pattern.count_ones() == 0 {
            return Err(err("named persons need at least one link".into()));
        }
        if !y.is_finite() {
            return Err(err("y must be finite".into()));
        }
        records.push(PersonRecord { stratum, pattern, y });
    }
    let sample = LtsSample {
        n_frame,
        selected_venues: venues,
        venue_sizes: sizes,
        persons: records,
        response: response.unwrap_or_default(),
    };
    sample.validate().map_err(|e| Error::Parse {
        line: end,
        message: e.to_string(),
    })?;
    Ok(SampleFile { sample, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::sampling::draw_sample;
    use crate::simulation::{synth_population, PopulationSpec};
    use proptest::prelude::*;

    #[test]
    fn documented_example_parses() {
        let text = "lts-sample 1\nn_frame 10\nresponse binary\n# two venues\nvenue 3 1\nvenue 7 2\n\
                    person venue 0 1 1\nperson venue 1 0 0\nperson venue 1 1 1\nperson frame 10 0\nperson outside 11 1\n";
        let f = parse_sample(text).unwrap();
        assert_eq!(f.sample.n(), 2);
        assert_eq!((f.sample.r1(), f.sample.r2()), (1, 1));
        assert_eq!(f.sample.response, ResponseKind::Binary);
        assert_eq!(f.seed, None);
    }

    #[test]
    fn errors_name_lines() {
        let base = "lts-sample 1\nn_frame 10\nvenue 3 1\nvenue 7 1\nperson venue 0 1 1\nperson venue 1 1 2\n";
        let cases = [
            (format!("{base}person frame 1x 0\n"), 7),
            (format!("{base}person frame 101 0\n"), 7),
            (format!("{base}person elsewhere 10 0\n"), 7),
            (format!("{base}person outside 10 abc\n"), 7),
            (format!("{base}person outside 00 1\n"), 7),
            ("lts-sample 1\nn_frame x\n".to_string(), 2),
            ("nonsense\n".to_string(), 1),
        ];
        for (text, want) in cases {
            match parse_sample(&text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn single_venue_patterns() {
        let text = "lts-sample 1\nn_frame 4\nvenue 2 1\nperson venue 0 - 5\nperson outside 1 2\n";
        let f = parse_sample(text).unwrap();
        assert_eq!(parse_sample(&write_sample(&f.sample, Some(3))).unwrap().sample, f.sample);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip(seed in 0u64..1000, n in 1usize..20, boot in proptest::option::of(0u64..u64::MAX)) {
            let spec = PopulationSpec::table_three_i(ResponseKind::Continuous);
            let pop = synth_population(&spec, &mut substream(seed, &[1])).unwrap();
            let s = draw_sample(&pop, n, &mut substream(seed, &[2])).unwrap();
            let back = parse_sample(&write_sample(&s, boot)).unwrap();
            prop_assert_eq!(back.sample, s);
            prop_assert_eq!(back.seed, boot);
        }
    }
}
