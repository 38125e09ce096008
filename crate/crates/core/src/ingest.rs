//! CSV ingestion for entities, relationships, country indicators and legal
//! form names, and construction of the [`GraphStore`].
//!
//! Every parser is row-tolerant: malformed rows are skipped and reported with
//! their line number, and only a missing or garbled header is fatal. For each
//! parser `records.len() + errors.len() == data_rows`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use csv::{ByteRecord, ReaderBuilder, WriterBuilder};
use serde::Serialize;
use thiserror::Error;

use crate::linking::CityLinks;
use crate::model::{
    Address, Company, CompanyRecord, CountryCode, CountryIndicators, EdgeKind, GraphStore, Lei,
    NodeId, RelationshipEdge,
};

pub const ENTITY_HEADER: [&str; 13] = [
    "lei",
    "legalName",
    "legalCountry",
    "legalRegion",
    "legalCity",
    "legalPostal",
    "legalAddressLine",
    "hqCountry",
    "hqRegion",
    "hqCity",
    "hqPostal",
    "hqAddressLine",
    "legalFormCode",
];
pub const RELATIONSHIP_HEADER: [&str; 3] = ["childLei", "parentLei", "relationshipType"];
pub const INDICATOR_HEADER: [&str; 4] = [
    "country",
    "population",
    "gdpMillionUsd",
    "corporateTaxRatePct",
];
pub const LEGAL_FORM_HEADER: [&str; 2] = ["elfCode", "name"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: duplicate country {country}")]
    DuplicateCountry { country: CountryCode, line: u64 },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{file}: {source}")]
    InFile {
        file: String,
        #[source]
        source: Box<IngestError>,
    },
}

impl IngestError {
    pub fn in_file(self, file: &Path) -> Self {
        match self {
            e @ IngestError::Io { .. } => e,
            other => IngestError::InFile {
                file: file.display().to_string(),
                source: Box::new(other),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowIssue {
    ColumnCount { expected: usize, found: usize },
    InvalidUtf8,
    MalformedLei(String),
    DuplicateLei(Lei),
    MalformedCountry { column: &'static str, value: String },
    MalformedLegalForm(String),
    EmptyField(&'static str),
    UnknownRelationshipType(String),
    SelfLoop(Lei),
    NotNumeric(&'static str),
    OutOfRange(&'static str),
    DuplicateLegalForm(String),
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowIssue::ColumnCount { expected, found } => {
                write!(f, "column count: expected {expected}, found {found}")
            }
            RowIssue::InvalidUtf8 => write!(f, "invalid utf-8"),
            RowIssue::MalformedLei(s) => write!(f, "malformed lei {s:?}"),
            RowIssue::DuplicateLei(l) => write!(f, "duplicate lei {l}"),
            RowIssue::MalformedCountry { column, value } => {
                write!(f, "malformed country in {column}: {value:?}")
            }
            RowIssue::MalformedLegalForm(s) => write!(f, "malformed legal form {s:?}"),
            RowIssue::EmptyField(c) => write!(f, "empty {c}"),
            RowIssue::UnknownRelationshipType(s) => write!(f, "unknown relationship type {s:?}"),
            RowIssue::SelfLoop(l) => write!(f, "self-loop on {l}"),
            RowIssue::NotNumeric(c) => write!(f, "{c} not numeric"),
            RowIssue::OutOfRange(c) => write!(f, "{c} out of range"),
            RowIssue::DuplicateLegalForm(s) => write!(f, "duplicate legal form {s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub issue: RowIssue,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.issue)
    }
}

#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: T,
    pub errors: Vec<RowError>,
    pub data_rows: usize,
}

impl<T> Parsed<T> {
    pub fn self_loops(&self) -> usize {
        self.errors
            .iter()
            .filter(|e| matches!(e.issue, RowIssue::SelfLoop(_)))
            .count()
    }
}

fn open_reader<R: Read>(input: R, header: &[&str]) -> Result<csv::Reader<R>, IngestError> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let found = rdr.byte_headers()?.clone();
    let found: Vec<String> = found
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let s = String::from_utf8_lossy(f);
            let s = if i == 0 {
                s.trim_start_matches('\u{feff}')
            } else {
                &s
            };
            s.trim().to_string()
        })
        .collect();
    if found.len() != header.len() || found.iter().zip(header).any(|(a, b)| a != b) {
        return Err(IngestError::Header {
            expected: header.join(","),
            found: found.join(","),
        });
    }
    Ok(rdr)
}

/// Iterates data rows as UTF-8 fields, reporting per-row shape problems.
fn for_each_row<R: Read>(
    mut rdr: csv::Reader<R>,
    columns: usize,
    mut on_row: impl FnMut(u64, &[&str]) -> Result<(), RowIssue>,
    errors: &mut Vec<RowError>,
) -> Result<usize, IngestError> {
    let mut record = ByteRecord::new();
    let mut rows = 0usize;
    while rdr.read_byte_record(&mut record)? {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        // blank trailing lines are not data
        if record.len() == 1 && record.get(0).is_some_and(|f| f.is_empty()) {
            continue;
        }
        rows += 1;
        let issue = if record.len() != columns {
            Err(RowIssue::ColumnCount {
                expected: columns,
                found: record.len(),
            })
        } else {
            match record
                .iter()
                .map(std::str::from_utf8)
                .collect::<Result<Vec<&str>, _>>()
            {
                Ok(fields) => on_row(line, &fields),
                Err(_) => Err(RowIssue::InvalidUtf8),
            }
        };
        if let Err(issue) = issue {
            errors.push(RowError { line, issue });
        }
    }
    Ok(rows)
}

fn parse_lei(raw: &str) -> Result<Lei, RowIssue> {
    let raw = raw.trim();
    Lei::parse(raw).map_err(|_| RowIssue::MalformedLei(raw.to_string()))
}

fn opt_country(column: &'static str, raw: &str) -> Result<Option<CountryCode>, RowIssue> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    CountryCode::parse(raw)
        .map(Some)
        .map_err(|_| RowIssue::MalformedCountry {
            column,
            value: raw.to_string(),
        })
}

fn opt_string(raw: &str) -> Option<String> {
    let raw = raw.trim();
    (!raw.is_empty()).then(|| raw.to_string())
}

fn entity_row(f: &[&str]) -> Result<CompanyRecord, RowIssue> {
    if f[0].trim().is_empty() {
        return Err(RowIssue::EmptyField("lei"));
    }
    let lei = parse_lei(f[0])?;
    let legal = Address {
        country: opt_country("legalCountry", f[2])?,
        region: opt_string(f[3]),
        city: f[4].to_string(),
        postal: f[5].to_string(),
        line: f[6].to_string(),
    };
    let hq = Address {
        country: opt_country("hqCountry", f[7])?,
        region: opt_string(f[8]),
        city: f[9].to_string(),
        postal: f[10].to_string(),
        line: f[11].to_string(),
    };
    let legal_form = opt_string(f[12]);
    if let Some(code) = &legal_form {
        if code.len() != 4 || !code.bytes().all(|b| b.is_ascii_alphanumeric()) {
            return Err(RowIssue::MalformedLegalForm(code.clone()));
        }
    }
    Ok(CompanyRecord {
        lei,
        legal_name: f[1].to_string(),
        legal,
        hq,
        legal_form,
    })
}

/// Parses the entity file. Duplicate LEIs keep the first row.
pub fn parse_entities<R: Read>(input: R) -> Result<Parsed<Vec<CompanyRecord>>, IngestError> {
    let rdr = open_reader(input, &ENTITY_HEADER)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut errors = Vec::new();
    let data_rows = for_each_row(
        rdr,
        ENTITY_HEADER.len(),
        |_, f| {
            let rec = entity_row(f)?;
            if !seen.insert(rec.lei) {
                return Err(RowIssue::DuplicateLei(rec.lei));
            }
            records.push(rec);
            Ok(())
        },
        &mut errors,
    )?;
    Ok(Parsed {
        records,
        errors,
        data_rows,
    })
}

fn relationship_kind(raw: &str) -> Result<EdgeKind, RowIssue> {
    match raw.trim() {
        "IS_DIRECTLY_CONSOLIDATED_BY" => Ok(EdgeKind::Direct),
        "IS_ULTIMATELY_CONSOLIDATED_BY" => Ok(EdgeKind::Ultimate),
        other => Err(RowIssue::UnknownRelationshipType(other.to_string())),
    }
}

/// Parses the relationship file. Self-loops are dropped and reported as
/// [`RowIssue::SelfLoop`]. Duplicates are left for [`build_graph`].
pub fn parse_relationships<R: Read>(
    input: R,
) -> Result<Parsed<Vec<RelationshipEdge>>, IngestError> {
    let rdr = open_reader(input, &RELATIONSHIP_HEADER)?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let data_rows = for_each_row(
        rdr,
        RELATIONSHIP_HEADER.len(),
        |_, f| {
            if f[0].trim().is_empty() {
                return Err(RowIssue::EmptyField("childLei"));
            }
            if f[1].trim().is_empty() {
                return Err(RowIssue::EmptyField("parentLei"));
            }
            let child = parse_lei(f[0])?;
            let parent = parse_lei(f[1])?;
            let kind = relationship_kind(f[2])?;
            if child == parent {
                return Err(RowIssue::SelfLoop(child));
            }
            records.push(RelationshipEdge {
                child,
                parent,
                kind,
            });
            Ok(())
        },
        &mut errors,
    )?;
    Ok(Parsed {
        records,
        errors,
        data_rows,
    })
}

fn opt_number<T: std::str::FromStr>(
    column: &'static str,
    raw: &str,
) -> Result<Option<T>, RowIssue> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| RowIssue::NotNumeric(column))
}

/// Parses country indicators. A country listed twice is fatal.
pub fn parse_indicators<R: Read>(
    input: R,
) -> Result<Parsed<BTreeMap<CountryCode, CountryIndicators>>, IngestError> {
    let rdr = open_reader(input, &INDICATOR_HEADER)?;
    let mut records: BTreeMap<CountryCode, CountryIndicators> = BTreeMap::new();
    let mut errors = Vec::new();
    let mut duplicate = None;
    let data_rows = for_each_row(
        rdr,
        INDICATOR_HEADER.len(),
        |line, f| {
            let country = opt_country("country", f[0])?.ok_or(RowIssue::EmptyField("country"))?;
            let population: Option<u64> = opt_number("population", f[1])?;
            let gdp: Option<f64> = opt_number("gdpMillionUsd", f[2])?;
            if gdp.is_some_and(|g| !g.is_finite() || g < 0.0) {
                return Err(RowIssue::OutOfRange("gdpMillionUsd"));
            }
            let rate: Option<f64> = opt_number("corporateTaxRatePct", f[3])?;
            if rate.is_some_and(|r| !(0.0..=100.0).contains(&r)) {
                return Err(RowIssue::OutOfRange("corporateTaxRatePct"));
            }
            if records.contains_key(&country) {
                duplicate.get_or_insert((country, line));
                return Ok(());
            }
            records.insert(
                country,
                CountryIndicators {
                    country: Some(country),
                    population,
                    gdp,
                    corporate_tax_rate: rate,
                },
            );
            Ok(())
        },
        &mut errors,
    )?;
    if let Some((country, line)) = duplicate {
        return Err(IngestError::DuplicateCountry { country, line });
    }
    Ok(Parsed {
        records,
        errors,
        data_rows,
    })
}

/// Parses the ELF code -> name table. Duplicate codes keep the first row.
pub fn parse_legal_forms<R: Read>(
    input: R,
) -> Result<Parsed<BTreeMap<String, String>>, IngestError> {
    let rdr = open_reader(input, &LEGAL_FORM_HEADER)?;
    let mut records = BTreeMap::new();
    let mut errors = Vec::new();
    let data_rows = for_each_row(
        rdr,
        LEGAL_FORM_HEADER.len(),
        |_, f| {
            let code = f[0].trim();
            if code.is_empty() {
                return Err(RowIssue::EmptyField("elfCode"));
            }
            if records.contains_key(code) {
                return Err(RowIssue::DuplicateLegalForm(code.to_string()));
            }
            records.insert(code.to_string(), f[1].to_string());
            Ok(())
        },
        &mut errors,
    )?;
    Ok(Parsed {
        records,
        errors,
        data_rows,
    })
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(out)
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn write_entities<W: Write>(out: W, records: &[CompanyRecord]) -> Result<(), IngestError> {
    let mut w = csv_writer(out);
    w.write_record(ENTITY_HEADER)?;
    for r in records {
        w.write_record([
            r.lei.as_str(),
            &r.legal_name,
            &opt_str(&r.legal.country),
            &opt_str(&r.legal.region),
            &r.legal.city,
            &r.legal.postal,
            &r.legal.line,
            &opt_str(&r.hq.country),
            &opt_str(&r.hq.region),
            &r.hq.city,
            &r.hq.postal,
            &r.hq.line,
            &opt_str(&r.legal_form),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_relationships<W: Write>(
    out: W,
    edges: &[RelationshipEdge],
) -> Result<(), IngestError> {
    let mut w = csv_writer(out);
    w.write_record(RELATIONSHIP_HEADER)?;
    for e in edges {
        w.write_record([
            e.child.as_str(),
            e.parent.as_str(),
            e.kind.relationship_type(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_indicators<W: Write>(
    out: W,
    indicators: &BTreeMap<CountryCode, CountryIndicators>,
) -> Result<(), IngestError> {
    let mut w = csv_writer(out);
    w.write_record(INDICATOR_HEADER)?;
    for (country, i) in indicators {
        w.write_record([
            country.as_str(),
            &opt_str(&i.population),
            &opt_str(&i.gdp),
            &opt_str(&i.corporate_tax_rate),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_legal_forms<W: Write>(
    out: W,
    forms: &BTreeMap<String, String>,
) -> Result<(), IngestError> {
    let mut w = csv_writer(out);
    w.write_record(LEGAL_FORM_HEADER)?;
    for (code, name) in forms {
        w.write_record([code, name])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Counts in the shape of the knowledge-graph contents table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub companies: usize,
    pub stubs: usize,
    pub direct: usize,
    pub ultimate: usize,
    pub countries: usize,
    pub cities: usize,
    pub legal_forms: usize,
    pub duplicate_companies: usize,
    pub duplicate_edges: usize,
    pub self_loops: usize,
    pub rejected_rows: usize,
}

impl BuildReport {
    /// `(label, count)` rows, classes first then relations then cleaning.
    pub fn rows(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("Company", self.companies),
            ("Stub company", self.stubs),
            ("Country", self.countries),
            ("City", self.cities),
            ("Legal Form", self.legal_forms),
            ("direct subsidiary", self.direct),
            ("ultimate subsidiary", self.ultimate),
            ("duplicate company rows", self.duplicate_companies),
            ("duplicate edges", self.duplicate_edges),
            ("self-loops dropped", self.self_loops),
            ("rejected rows", self.rejected_rows),
        ]
    }
}

#[derive(Debug, Clone, Default)]
pub struct GraphInputs {
    pub companies: Vec<CompanyRecord>,
    pub edges: Vec<RelationshipEdge>,
    pub indicators: BTreeMap<CountryCode, CountryIndicators>,
    pub legal_forms: BTreeMap<String, String>,
    pub city_links: CityLinks,
}

/// Builds the immutable store. Dangling edge endpoints become stub
/// companies, self-loops are dropped and duplicate edges collapsed; all of it
/// is counted in the report. The result does not depend on input order.
pub fn build_graph(inputs: GraphInputs) -> (GraphStore, BuildReport) {
    let GraphInputs {
        companies,
        mut edges,
        indicators,
        legal_forms,
        city_links,
    } = inputs;
    let mut report = BuildReport::default();

    let mut by_lei: BTreeMap<Lei, Company> = BTreeMap::new();
    for rec in companies {
        if let std::collections::btree_map::Entry::Vacant(e) = by_lei.entry(rec.lei) {
            e.insert(Company::from_record(rec));
        } else {
            report.duplicate_companies += 1;
        }
    }

    let before = edges.len();
    edges.retain(|e| e.child != e.parent);
    report.self_loops = before - edges.len();
    edges.sort_unstable();
    let before = edges.len();
    edges.dedup();
    report.duplicate_edges = before - edges.len();

    for e in &edges {
        for lei in [e.child, e.parent] {
            if let std::collections::btree_map::Entry::Vacant(e) = by_lei.entry(lei) {
                e.insert(Company::stub(lei));
                report.stubs += 1;
            }
        }
    }

    for (lei, link) in city_links.iter() {
        if let Some(c) = by_lei.get_mut(lei) {
            if !c.stub {
                c.hq_city_link = link.hq.clone();
                c.legal_city_link = link.legal.clone();
            }
        }
    }

    let companies: Vec<Company> = by_lei.into_values().collect();
    let index = |lei: &Lei| -> NodeId {
        NodeId(
            companies
                .binary_search_by(|c| c.lei.cmp(lei))
                .expect("endpoint resolved above") as u32,
        )
    };
    let resolved: Vec<(NodeId, NodeId, EdgeKind)> = edges
        .iter()
        .map(|e| (index(&e.child), index(&e.parent), e.kind))
        .collect();

    report.companies = companies.len();
    report.direct = edges.iter().filter(|e| e.kind == EdgeKind::Direct).count();
    report.ultimate = edges.len() - report.direct;

    let mut countries: BTreeSet<CountryCode> = indicators.keys().copied().collect();
    let mut cities = BTreeSet::new();
    let mut forms = BTreeSet::new();
    for c in &companies {
        countries.extend(c.legal.country);
        countries.extend(c.hq.country);
        cities.extend(c.hq_city_link.as_deref());
        cities.extend(c.legal_city_link.as_deref());
        forms.extend(c.legal_form.as_deref());
    }
    report.countries = countries.len();
    report.cities = cities.len();
    report.legal_forms = forms.len();

    let store = GraphStore::assemble(companies, &resolved, indicators, legal_forms);
    (store, report)
}

/// Paths of the four input files plus an optional city link table.
#[derive(Debug, Clone)]
pub struct InputPaths {
    pub entities: PathBuf,
    pub relationships: PathBuf,
    pub indicators: PathBuf,
    pub legal_forms: PathBuf,
    pub city_links: Option<PathBuf>,
}

/// Row errors of one input file.
#[derive(Debug, Clone)]
pub struct FileErrors {
    pub file: PathBuf,
    pub errors: Vec<RowError>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub inputs: GraphInputs,
    pub row_errors: Vec<FileErrors>,
}

impl Ingested {
    pub fn warning_count(&self) -> usize {
        self.row_errors.iter().map(|f| f.errors.len()).sum()
    }

    pub fn build(self) -> (GraphStore, BuildReport, Vec<FileErrors>) {
        let rejected = self.warning_count();
        let (store, mut report) = build_graph(self.inputs);
        report.rejected_rows = rejected;
        (store, report, self.row_errors)
    }
}

fn open(path: &Path) -> Result<std::io::BufReader<File>, IngestError> {
    File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Parses all input files. The four parsers run concurrently when built
/// with the `parallel` feature.
pub fn read_inputs(paths: &InputPaths) -> Result<Ingested, IngestError> {
    // open everything first so a missing file is reported before any work
    let entities = open(&paths.entities)?;
    let relationships = open(&paths.relationships)?;
    let indicators = open(&paths.indicators)?;
    let legal_forms = open(&paths.legal_forms)?;
    let links = paths.city_links.as_deref().map(open).transpose()?;

    let (ents, rels, inds, forms, links) = std::thread::scope(|s| {
        let ents = s.spawn(|| parse_entities(entities).map_err(|e| e.in_file(&paths.entities)));
        let rels = s.spawn(|| {
            parse_relationships(relationships).map_err(|e| e.in_file(&paths.relationships))
        });
        let inds = parse_indicators(indicators).map_err(|e| e.in_file(&paths.indicators));
        let forms = parse_legal_forms(legal_forms).map_err(|e| e.in_file(&paths.legal_forms));
        let links = links.map(|r| {
            crate::linking::parse_city_links(r)
                .map_err(|e| e.in_file(paths.city_links.as_deref().unwrap()))
        });
        (
            ents.join().expect("entity parser panicked"),
            rels.join().expect("relationship parser panicked"),
            inds,
            forms,
            links,
        )
    });
    let (ents, rels, inds, forms) = (ents?, rels?, inds?, forms?);
    let links = links.transpose()?;

    let mut row_errors = vec![
        FileErrors {
            file: paths.entities.clone(),
            errors: ents.errors,
        },
        FileErrors {
            file: paths.relationships.clone(),
            errors: rels.errors,
        },
        FileErrors {
            file: paths.indicators.clone(),
            errors: inds.errors,
        },
        FileErrors {
            file: paths.legal_forms.clone(),
            errors: forms.errors,
        },
    ];
    let city_links = match links {
        Some(parsed) => {
            row_errors.push(FileErrors {
                file: paths.city_links.clone().unwrap(),
                errors: parsed.errors,
            });
            parsed.records
        }
        None => CityLinks::default(),
    };
    Ok(Ingested {
        inputs: GraphInputs {
            companies: ents.records,
            edges: rels.records,
            indicators: inds.records,
            legal_forms: forms.records,
            city_links,
        },
        row_errors,
    })
}
