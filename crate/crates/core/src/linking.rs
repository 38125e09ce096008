//! City linking: postal-code candidate retrieval followed by a normalized
//! edit-distance decision.
//!
//! Candidates come from a dump of external city entities with their postal
//! code attribute. Range-valued codes such as `10115-14199` are expanded into
//! numeric intervals; everything else is matched literally. Among the
//! retrieved candidates the one with the smallest normalized distance wins,
//! provided it is within [`MAX_DISTANCE`] and not tied with another entity.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::Serialize;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::ingest::{IngestError, Parsed, RowError, RowIssue};
use crate::model::{Company, Lei};
use crate::par;

pub const MAX_DISTANCE: f64 = 0.3;

pub const CANDIDATE_HEADER: [&str; 3] = ["externalId", "cityName", "postalSpec"];
pub const CITY_LINK_HEADER: [&str; 3] = ["lei", "hqCityLink", "legalCityLink"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PostalSpec {
    Literal(String),
    Interval { low: u64, high: u64, width: usize },
}

/// `D-D` with equal-width digit sides and `low <= high` is an interval;
/// anything else is a trimmed literal.
pub fn parse_postal_spec(raw: &str) -> PostalSpec {
    let raw = raw.trim();
    if let Some((lo, hi)) = raw.split_once('-') {
        let digits =
            |s: &str| !s.is_empty() && s.len() <= 19 && s.bytes().all(|b| b.is_ascii_digit());
        if digits(lo) && digits(hi) && lo.len() == hi.len() {
            let (low, high) = (lo.parse::<u64>().unwrap(), hi.parse::<u64>().unwrap());
            if low <= high {
                return PostalSpec::Interval {
                    low,
                    high,
                    width: lo.len(),
                };
            }
        }
    }
    PostalSpec::Literal(raw.to_string())
}

/// Lowercase, decompose, drop combining marks.
pub fn fold(s: &str) -> String {
    s.chars()
        .flat_map(char::to_lowercase)
        .nfd()
        .filter(|c| !is_combining_mark(*c))
        .collect()
}

/// Levenshtein distance of the folded strings divided by the longer folded
/// length, in characters. Two empty strings are at distance 0.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let (a, b) = (fold(a), fold(b));
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    strsim::levenshtein(&a, &b) as f64 / longest as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CityCandidate {
    pub external_id: String,
    pub city_name: String,
    pub postal: PostalSpec,
}

#[derive(Debug, Clone, Default)]
struct IntervalBucket {
    /// `(low, high, entry)` sorted by `low`.
    spans: Vec<(u64, u64, usize)>,
    max_span: u64,
}

fn literal_key(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_uppercase()
}

/// Postal code -> candidate lookup over literal codes and numeric intervals.
#[derive(Debug, Clone, Default)]
pub struct CityCandidateIndex {
    entries: Vec<CityCandidate>,
    literal: HashMap<String, Vec<usize>>,
    intervals: BTreeMap<usize, IntervalBucket>,
}

impl CityCandidateIndex {
    pub fn new(entries: Vec<CityCandidate>) -> Self {
        let mut literal: HashMap<String, Vec<usize>> = HashMap::new();
        let mut intervals: BTreeMap<usize, IntervalBucket> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            match &e.postal {
                PostalSpec::Literal(code) => literal.entry(literal_key(code)).or_default().push(i),
                &PostalSpec::Interval { low, high, width } => {
                    let bucket = intervals.entry(width).or_default();
                    bucket.spans.push((low, high, i));
                    bucket.max_span = bucket.max_span.max(high - low);
                }
            }
        }
        for bucket in intervals.values_mut() {
            bucket.spans.sort_unstable();
        }
        CityCandidateIndex {
            entries,
            literal,
            intervals,
        }
    }

    pub fn entries(&self) -> &[CityCandidate] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries whose postal spec covers `code`, in index order.
    pub fn candidates(&self, code: &str) -> Vec<&CityCandidate> {
        let code = code.trim();
        let mut hits: Vec<usize> = self
            .literal
            .get(&literal_key(code))
            .cloned()
            .unwrap_or_default();
        let numeric =
            !code.is_empty() && code.len() <= 19 && code.bytes().all(|b| b.is_ascii_digit());
        if numeric {
            if let Some(bucket) = self.intervals.get(&code.len()) {
                let value: u64 = code.parse().unwrap();
                let floor = value.saturating_sub(bucket.max_span);
                let start = bucket.spans.partition_point(|s| s.0 < floor);
                hits.extend(
                    bucket.spans[start..]
                        .iter()
                        .take_while(|s| s.0 <= value)
                        .filter(|s| s.1 >= value)
                        .map(|s| s.2),
                );
            }
        }
        hits.sort_unstable();
        hits.dedup();
        hits.into_iter().map(|i| &self.entries[i]).collect()
    }

    pub fn match_city(&self, name: &str, postal: &str) -> CityMatch {
        self.match_city_within(name, postal, MAX_DISTANCE)
    }

    pub fn match_city_within(&self, name: &str, postal: &str, threshold: f64) -> CityMatch {
        let candidates = self.candidates(postal);
        // best distance per external entity
        let mut per_entity: BTreeMap<&str, f64> = BTreeMap::new();
        for c in &candidates {
            let d = normalized_edit_distance(name, &c.city_name);
            per_entity
                .entry(c.external_id.as_str())
                .and_modify(|best| *best = best.min(d))
                .or_insert(d);
        }
        let best = per_entity.values().copied().fold(f64::INFINITY, f64::min);
        let outcome = if candidates.is_empty() {
            MatchOutcome::NoCandidates
        } else if best > threshold {
            MatchOutcome::AboveThreshold
        } else {
            let winners: Vec<&str> = per_entity
                .iter()
                .filter(|(_, &d)| d == best)
                .map(|(id, _)| *id)
                .collect();
            if winners.len() > 1 {
                MatchOutcome::Ambiguous
            } else {
                MatchOutcome::Matched(winners[0].to_string())
            }
        };
        CityMatch {
            candidates: per_entity.len(),
            best_distance: best.is_finite().then_some(best),
            outcome,
        }
    }
}

/// Convenience wrapper over [`CityCandidateIndex::match_city`].
pub fn match_city(name: &str, postal: &str, index: &CityCandidateIndex) -> CityMatch {
    index.match_city(name, postal)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchOutcome {
    Matched(String),
    NoCandidates,
    AboveThreshold,
    /// Two or more entities share the minimum distance.
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CityMatch {
    pub candidates: usize,
    pub best_distance: Option<f64>,
    pub outcome: MatchOutcome,
}

impl CityMatch {
    pub fn external_id(&self) -> Option<&str> {
        match &self.outcome {
            MatchOutcome::Matched(id) => Some(id),
            _ => None,
        }
    }
}

pub fn parse_city_candidates<R: Read>(input: R) -> Result<Parsed<Vec<CityCandidate>>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    check_header(&mut rdr, &CANDIDATE_HEADER)?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut data_rows = 0;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        data_rows += 1;
        if row.len() != 3 {
            errors.push(RowError {
                line,
                issue: RowIssue::ColumnCount {
                    expected: 3,
                    found: row.len(),
                },
            });
            continue;
        }
        let (id, name, spec) = (row[0].trim(), row[1].trim(), row[2].trim());
        let empty = [("externalId", id), ("cityName", name), ("postalSpec", spec)]
            .into_iter()
            .find(|(_, v)| v.is_empty());
        if let Some((col, _)) = empty {
            errors.push(RowError {
                line,
                issue: RowIssue::EmptyField(col),
            });
            continue;
        }
        records.push(CityCandidate {
            external_id: id.to_string(),
            city_name: name.to_string(),
            postal: parse_postal_spec(spec),
        });
    }
    Ok(Parsed {
        records,
        errors,
        data_rows,
    })
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, header: &[&str]) -> Result<(), IngestError> {
    let found: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').trim().to_string())
        .collect();
    if found != header {
        return Err(IngestError::Header {
            expected: header.join(","),
            found: found.join(","),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CityLink {
    pub hq: Option<String>,
    pub legal: Option<String>,
}

/// Per-company city links, keyed by LEI.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CityLinks(BTreeMap<Lei, CityLink>);

impl CityLinks {
    pub fn insert(&mut self, lei: Lei, link: CityLink) {
        if link.hq.is_some() || link.legal.is_some() {
            self.0.insert(lei, link);
        }
    }

    pub fn get(&self, lei: &Lei) -> Option<&CityLink> {
        self.0.get(lei)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Lei, &CityLink)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn parse_city_links<R: Read>(input: R) -> Result<Parsed<CityLinks>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    check_header(&mut rdr, &CITY_LINK_HEADER)?;
    let mut records = CityLinks::default();
    let mut errors = Vec::new();
    let mut data_rows = 0;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        data_rows += 1;
        if row.len() != 3 {
            errors.push(RowError {
                line,
                issue: RowIssue::ColumnCount {
                    expected: 3,
                    found: row.len(),
                },
            });
            continue;
        }
        let lei = match Lei::parse(row[0].trim()) {
            Ok(l) => l,
            Err(_) => {
                errors.push(RowError {
                    line,
                    issue: RowIssue::MalformedLei(row[0].to_string()),
                });
                continue;
            }
        };
        if records.get(&lei).is_some() {
            errors.push(RowError {
                line,
                issue: RowIssue::DuplicateLei(lei),
            });
            continue;
        }
        let opt = |s: &str| (!s.trim().is_empty()).then(|| s.trim().to_string());
        records.insert(
            lei,
            CityLink {
                hq: opt(&row[1]),
                legal: opt(&row[2]),
            },
        );
    }
    Ok(Parsed {
        records,
        errors,
        data_rows,
    })
}

pub fn write_city_links<W: Write>(out: W, links: &CityLinks) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CITY_LINK_HEADER)?;
    for (lei, link) in links.iter() {
        w.write_record([
            lei.as_str(),
            link.hq.as_deref().unwrap_or(""),
            link.legal.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LinkSummary {
    /// Distinct (city, postal) pairs looked up.
    pub pairs: usize,
    pub matched: usize,
    pub no_candidates: usize,
    pub above_threshold: usize,
    pub ambiguous: usize,
    pub hq_linked: usize,
    pub legal_linked: usize,
}

/// Links headquarter and legal cities of every non-stub company. Each
/// distinct (city, postal) pair is matched once.
pub fn link_companies(
    companies: &[Company],
    index: &CityCandidateIndex,
    threshold: f64,
) -> (CityLinks, LinkSummary) {
    let mut pairs: Vec<(&str, &str)> = companies
        .iter()
        .filter(|c| !c.stub)
        .flat_map(|c| [(&c.hq.city, &c.hq.postal), (&c.legal.city, &c.legal.postal)])
        .filter(|(city, postal)| !city.trim().is_empty() && !postal.trim().is_empty())
        .map(|(a, b)| (a.as_str(), b.as_str()))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();

    let results = par::map(&pairs, |(city, postal)| {
        index.match_city_within(city, postal, threshold)
    });

    let mut summary = LinkSummary {
        pairs: pairs.len(),
        ..Default::default()
    };
    for r in &results {
        match r.outcome {
            MatchOutcome::Matched(_) => summary.matched += 1,
            MatchOutcome::NoCandidates => summary.no_candidates += 1,
            MatchOutcome::AboveThreshold => summary.above_threshold += 1,
            MatchOutcome::Ambiguous => summary.ambiguous += 1,
        }
    }
    let lookup = |city: &str, postal: &str| -> Option<String> {
        pairs
            .binary_search(&(city, postal))
            .ok()
            .and_then(|i| results[i].external_id().map(str::to_string))
    };

    let mut links = CityLinks::default();
    for c in companies.iter().filter(|c| !c.stub) {
        let link = CityLink {
            hq: lookup(&c.hq.city, &c.hq.postal),
            legal: lookup(&c.legal.city, &c.legal.postal),
        };
        summary.hq_linked += link.hq.is_some() as usize;
        summary.legal_linked += link.legal.is_some() as usize;
        links.insert(c.lei, link);
    }
    (links, summary)
}
