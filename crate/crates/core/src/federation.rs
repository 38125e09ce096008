//! City areas from a remote SPARQL endpoint.
//!
//! Ids are deduplicated, sorted and sent in chunks as `VALUES` queries over
//! the area property (P2046). Each chunk is retried a bounded number of
//! times; a failing chunk is reported and the others still count. Amounts
//! are normalized to square kilometres using the unit the endpoint returns.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::ingest::{IngestError, Parsed, RowError, RowIssue};

pub const DEFAULT_ENDPOINT: &str = "https://query.wikidata.org/sparql";
pub const AREA_HEADER: [&str; 2] = ["externalId", "areaSqKm"];

const ENTITY_PREFIX: &str = "http://www.wikidata.org/entity/";

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("no ids to query")]
    EmptyIds,
    #[error("invalid entity id {0:?}, expected Q followed by digits")]
    InvalidId(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("malformed SPARQL results at {path}: {message}")]
    Results { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub url: String,
    pub timeout: Duration,
    pub max_ids_per_request: usize,
    pub retries: u32,
    /// Chunks in flight at once.
    pub parallelism: usize,
    /// Wait before retry `n` is `n * retry_backoff`.
    pub retry_backoff: Duration,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: DEFAULT_ENDPOINT.into(),
            timeout: Duration::from_secs(60),
            max_ids_per_request: 200,
            retries: 2,
            parallelism: 2,
            retry_backoff: Duration::from_millis(500),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        if self.max_ids_per_request == 0 {
            return Err(FederationError::Config(
                "ids per request must be at least 1".into(),
            ));
        }
        if self.timeout.is_zero() {
            return Err(FederationError::Config("timeout must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(FederationError::Config(
                "parallelism must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparqlResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// The only point of contact with the network.
pub trait SparqlTransport: Sync {
    fn post_query(&self, url: &str, query: &str) -> Result<SparqlResponse, TransportError>;
}

/// SPARQL 1.1 protocol over HTTP POST with a direct query body.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .user_agent(concat!("taxgraph/", env!("CARGO_PKG_VERSION")))
            .build()
            .new_agent();
        HttpTransport { agent }
    }
}

impl SparqlTransport for HttpTransport {
    fn post_query(&self, url: &str, query: &str) -> Result<SparqlResponse, TransportError> {
        let mut resp = self
            .agent
            .post(url)
            .header("Content-Type", "application/sparql-query")
            .header("Accept", "application/sparql-results+json")
            .send(query)
            .map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(SparqlResponse { status, body })
    }
}

/// Answers every query with one stored results document. Bindings for ids
/// outside a chunk are ignored by [`fetch_areas`], so a single document can
/// cover all chunks.
pub struct CannedTransport {
    body: String,
}

impl CannedTransport {
    pub fn new(body: String) -> Self {
        CannedTransport { body }
    }
}

impl SparqlTransport for CannedTransport {
    fn post_query(&self, _url: &str, _query: &str) -> Result<SparqlResponse, TransportError> {
        Ok(SparqlResponse {
            status: 200,
            body: self.body.clone(),
        })
    }
}

fn valid_id(id: &str) -> bool {
    id.len() > 1 && id.starts_with('Q') && id[1..].bytes().all(|b| b.is_ascii_digit())
}

/// Area query for `ids`, in the given order.
pub fn build_area_query(ids: &[String]) -> Result<String, FederationError> {
    if ids.is_empty() {
        return Err(FederationError::EmptyIds);
    }
    if let Some(bad) = ids.iter().find(|id| !valid_id(id)) {
        return Err(FederationError::InvalidId(bad.clone()));
    }
    let values: Vec<String> = ids.iter().map(|id| format!("wd:{id}")).collect();
    Ok(format!(
        "PREFIX wd: <http://www.wikidata.org/entity/>
PREFIX p: <http://www.wikidata.org/prop/>
PREFIX psv: <http://www.wikidata.org/prop/statement/value/>
PREFIX wikibase: <http://wikiba.se/ontology#>
SELECT ?item ?amount ?unit WHERE {{
  VALUES ?item {{ {} }}
  ?item p:P2046 ?statement .
  ?statement psv:P2046 ?value .
  ?value wikibase:quantityAmount ?amount .
  OPTIONAL {{ ?value wikibase:quantityUnit ?unit . }}
}}
",
        values.join(" ")
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TermKind {
    Uri,
    Literal,
    Bnode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term {
    pub kind: TermKind,
    pub value: String,
    pub datatype: Option<String>,
    pub lang: Option<String>,
    /// Parsed value of a literal with a numeric XSD datatype.
    pub number: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparqlResults {
    pub vars: Vec<String>,
    pub rows: Vec<BTreeMap<String, Term>>,
}

const XSD: &str = "http://www.w3.org/2001/XMLSchema#";
const NUMERIC_TYPES: [&str; 16] = [
    "decimal",
    "integer",
    "double",
    "float",
    "int",
    "long",
    "short",
    "byte",
    "nonNegativeInteger",
    "positiveInteger",
    "negativeInteger",
    "nonPositiveInteger",
    "unsignedInt",
    "unsignedLong",
    "unsignedShort",
    "unsignedByte",
];

fn is_numeric_type(datatype: &str) -> bool {
    datatype
        .strip_prefix(XSD)
        .is_some_and(|local| NUMERIC_TYPES.contains(&local))
}

fn structural(path: impl Into<String>, message: impl Into<String>) -> FederationError {
    FederationError::Results {
        path: path.into(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value, FederationError> {
    obj.get(key)
        .ok_or_else(|| structural(format!("{path}.{key}"), "missing"))
}

fn string_field(obj: &Value, key: &str, path: &str) -> Result<String, FederationError> {
    field(obj, key, path)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| structural(format!("{path}.{key}"), "expected a string"))
}

fn parse_term(v: &Value, path: &str) -> Result<Term, FederationError> {
    if !v.is_object() {
        return Err(structural(path, "expected an object"));
    }
    let kind = match string_field(v, "type", path)?.as_str() {
        "uri" => TermKind::Uri,
        "literal" | "typed-literal" => TermKind::Literal,
        "bnode" => TermKind::Bnode,
        other => {
            return Err(structural(
                format!("{path}.type"),
                format!("unknown term type {other:?}"),
            ))
        }
    };
    let value = string_field(v, "value", path)?;
    let opt = |key| -> Result<Option<String>, FederationError> {
        match v.get(key) {
            None => Ok(None),
            Some(_) => string_field(v, key, path).map(Some),
        }
    };
    let datatype = opt("datatype")?;
    let lang = opt("xml:lang")?;
    let number = match (&kind, &datatype) {
        (TermKind::Literal, Some(dt)) if is_numeric_type(dt) => {
            Some(value.trim().parse::<f64>().map_err(|_| {
                structural(
                    format!("{path}.value"),
                    format!("{value:?} is not a number"),
                )
            })?)
        }
        _ => None,
    };
    Ok(Term {
        kind,
        value,
        datatype,
        lang,
        number,
    })
}

/// Reads a `application/sparql-results+json` SELECT document.
pub fn parse_sparql_results(text: &str) -> Result<SparqlResults, FederationError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| structural("$", format!("invalid JSON: {e}")))?;
    if !root.is_object() {
        return Err(structural("$", "expected an object"));
    }
    let head = field(&root, "head", "$")?;
    let vars = match head.get("vars") {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| structural(format!("$.head.vars[{i}]"), "expected a string"))
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(structural("$.head.vars", "expected an array")),
    };
    let results = field(&root, "results", "$")?;
    let bindings = field(results, "bindings", "$.results")?
        .as_array()
        .ok_or_else(|| structural("$.results.bindings", "expected an array"))?;
    let mut rows = Vec::with_capacity(bindings.len());
    for (i, b) in bindings.iter().enumerate() {
        let path = format!("$.results.bindings[{i}]");
        let obj = b
            .as_object()
            .ok_or_else(|| structural(&path, "expected an object"))?;
        let mut row = BTreeMap::new();
        for (var, term) in obj {
            row.insert(var.clone(), parse_term(term, &format!("{path}.{var}"))?);
        }
        rows.push(row);
    }
    Ok(SparqlResults { vars, rows })
}

/// Converts an amount in `unit` (an entity id) to square kilometres.
fn to_sq_km(amount: f64, unit: &str) -> Option<f64> {
    Some(match unit {
        "Q712226" => amount,                      // square kilometre
        "Q25343" => amount / 1e6,                 // square metre
        "Q35852" => amount / 100.0,               // hectare
        "Q232291" => amount * 2.589_988_110_336,  // square mile
        "Q81292" => amount * 0.004_046_856_422_4, // acre
        _ => return None,
    })
}

/// Id of the "dimensionless" unit item.
const NO_UNIT: &str = "Q1";
const NO_UNIT_WIKIDATA: &str = "Q199";

pub type AreaResult = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchError {
    pub ids: Vec<String>,
    pub attempts: u32,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FetchReport {
    /// Distinct ids asked for.
    pub requested: usize,
    pub batches: usize,
    /// HTTP requests issued, retries included.
    pub requests: usize,
    pub failed_batches: Vec<BatchError>,
    /// Ids that came back with more than one area; the largest was kept.
    pub duplicate_ids: BTreeSet<String>,
    /// Ids whose area had no unit and was taken as square kilometres.
    pub unitless_ids: BTreeSet<String>,
    /// Ids whose only areas were in units we cannot convert, or not positive.
    pub rejected_ids: BTreeSet<String>,
    /// Result rows naming an id outside their chunk.
    pub unrequested_rows: usize,
}

impl FetchReport {
    pub fn all_failed(&self) -> bool {
        self.batches > 0 && self.failed_batches.len() == self.batches
    }
}

struct ChunkOutcome {
    attempts: u32,
    result: Result<SparqlResults, String>,
}

fn run_chunk(
    config: &EndpointConfig,
    transport: &dyn SparqlTransport,
    query: &str,
) -> ChunkOutcome {
    let mut last = String::new();
    for attempt in 0..=config.retries {
        if attempt > 0 {
            std::thread::sleep(config.retry_backoff * attempt);
        }
        match transport.post_query(&config.url, query) {
            Ok(resp) if resp.status == 200 => {
                return ChunkOutcome {
                    attempts: attempt + 1,
                    result: parse_sparql_results(&resp.body).map_err(|e| e.to_string()),
                };
            }
            Ok(resp) => last = format!("HTTP status {}", resp.status),
            Err(e) => last = format!("transport error: {e}"),
        }
    }
    ChunkOutcome {
        attempts: config.retries + 1,
        result: Err(last),
    }
}

fn id_of(term: &Term) -> Option<&str> {
    term.value
        .strip_prefix(ENTITY_PREFIX)
        .or(Some(term.value.as_str()))
}

/// Fetches areas for `ids` (duplicates ignored). Only requested ids appear
/// in the result; ids without an area are simply absent.
pub fn fetch_areas(
    config: &EndpointConfig,
    transport: &dyn SparqlTransport,
    ids: &[String],
) -> Result<(AreaResult, FetchReport), FederationError> {
    config.validate()?;
    let unique: BTreeSet<&String> = ids.iter().collect();
    if let Some(bad) = unique.iter().find(|id| !valid_id(id)) {
        return Err(FederationError::InvalidId((*bad).clone()));
    }
    let unique: Vec<String> = unique.into_iter().cloned().collect();
    let chunks: Vec<&[String]> = unique.chunks(config.max_ids_per_request).collect();
    let queries: Vec<String> = chunks
        .iter()
        .map(|c| build_area_query(c))
        .collect::<Result<_, _>>()?;

    let outcomes: Mutex<Vec<Option<ChunkOutcome>>> =
        Mutex::new((0..chunks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..config.parallelism.min(chunks.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= chunks.len() {
                    break;
                }
                let outcome = run_chunk(config, transport, &queries[i]);
                outcomes.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let mut report = FetchReport {
        requested: unique.len(),
        batches: chunks.len(),
        ..Default::default()
    };
    let mut areas = AreaResult::new();
    let mut seen_ok: BTreeSet<String> = BTreeSet::new();
    for (chunk, outcome) in chunks.iter().zip(outcomes.into_inner().unwrap()) {
        let outcome = outcome.expect("every chunk ran");
        report.requests += outcome.attempts as usize;
        let results = match outcome.result {
            Ok(r) => r,
            Err(message) => {
                report.failed_batches.push(BatchError {
                    ids: chunk.to_vec(),
                    attempts: outcome.attempts,
                    message,
                });
                continue;
            }
        };
        let wanted: BTreeSet<&str> = chunk.iter().map(String::as_str).collect();
        let mut rows_per_id: BTreeMap<String, usize> = BTreeMap::new();
        for row in &results.rows {
            let Some(id) = row.get("item").and_then(id_of) else {
                continue;
            };
            if !wanted.contains(id) {
                report.unrequested_rows += 1;
                continue;
            }
            *rows_per_id.entry(id.to_string()).or_insert(0) += 1;
            let Some(amount) = row.get("amount").and_then(|t| t.number) else {
                report.rejected_ids.insert(id.to_string());
                continue;
            };
            let unit = row.get("unit").and_then(id_of).unwrap_or(NO_UNIT);
            let km2 = if unit == NO_UNIT || unit == NO_UNIT_WIKIDATA {
                report.unitless_ids.insert(id.to_string());
                amount
            } else if let Some(km2) = to_sq_km(amount, unit) {
                km2
            } else {
                report.rejected_ids.insert(id.to_string());
                continue;
            };
            if !(km2.is_finite() && km2 > 0.0) {
                report.rejected_ids.insert(id.to_string());
                continue;
            }
            seen_ok.insert(id.to_string());
            areas
                .entry(id.to_string())
                .and_modify(|a| *a = a.max(km2))
                .or_insert(km2);
        }
        report.duplicate_ids.extend(
            rows_per_id
                .into_iter()
                .filter(|(_, n)| *n > 1)
                .map(|(id, _)| id),
        );
    }
    report.rejected_ids.retain(|id| !seen_ok.contains(id));
    Ok((areas, report))
}

pub fn write_areas<W: Write>(out: W, areas: &AreaResult) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AREA_HEADER)?;
    for (id, area) in areas {
        w.write_record([id.as_str(), &area.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn parse_areas<R: Read>(input: R) -> Result<Parsed<AreaResult>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let found: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').trim().to_string())
        .collect();
    if found != AREA_HEADER {
        return Err(IngestError::Header {
            expected: AREA_HEADER.join(","),
            found: found.join(","),
        });
    }
    let mut records = AreaResult::new();
    let mut errors = Vec::new();
    let mut data_rows = 0;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        data_rows += 1;
        if row.len() != 2 {
            errors.push(RowError {
                line,
                issue: RowIssue::ColumnCount {
                    expected: 2,
                    found: row.len(),
                },
            });
            continue;
        }
        match row[1].trim().parse::<f64>() {
            Ok(a) if a.is_finite() && a > 0.0 => {
                records.insert(row[0].trim().to_string(), a);
            }
            _ => errors.push(RowError {
                line,
                issue: RowIssue::OutOfRange("areaSqKm"),
            }),
        }
    }
    Ok(Parsed {
        records,
        errors,
        data_rows,
    })
}
