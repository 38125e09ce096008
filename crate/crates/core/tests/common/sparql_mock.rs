//! Request-recording stand-in for a SPARQL endpoint.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde_json::json;
use taxgraph::federation::{SparqlResponse, SparqlTransport, TransportError};

const ENTITY: &str = "http://www.wikidata.org/entity/";

/// Area records known to the fake endpoint: id -> (amount, unit).
pub fn server_data() -> BTreeMap<&'static str, (&'static str, Option<&'static str>)> {
    [
        ("Q64", ("891.12", Some("Q712226"))),
        ("Q90", ("105400000", Some("Q25343"))),
        ("Q1844", ("1730", Some("Q35852"))),
        ("Q212420", ("3.19", Some("Q712226"))),
        ("Q727", ("219.32", None)),
    ]
    .into_iter()
    .collect()
}

pub fn ids_in(query: &str) -> Vec<String> {
    query
        .split_whitespace()
        .filter_map(|t| t.strip_prefix("wd:").filter(|id| !id.is_empty()))
        .map(str::to_string)
        .collect()
}

pub fn answer(ids: &[String]) -> String {
    let data = server_data();
    let bindings: Vec<_> = ids
        .iter()
        .filter_map(|id| data.get(id.as_str()).map(|r| (id, r)))
        .map(|(id, (amount, unit))| {
            let mut b = json!({
                "item": {"type": "uri", "value": format!("{ENTITY}{id}")},
                "amount": {"type": "literal", "datatype": "http://www.w3.org/2001/XMLSchema#decimal", "value": amount},
            });
            if let Some(u) = unit {
                b["unit"] = json!({"type": "uri", "value": format!("{ENTITY}{u}")});
            }
            b
        })
        .collect();
    json!({"head": {"vars": ["item", "amount", "unit"]}, "results": {"bindings": bindings}})
        .to_string()
}

/// Records each query and answers only for the ids it names. The first
/// `fail_first` calls return HTTP 503.
pub struct Recording {
    pub queries: Mutex<Vec<Vec<String>>>,
    pub fail_first: usize,
}

impl Recording {
    pub fn new(fail_first: usize) -> Self {
        Recording {
            queries: Mutex::new(Vec::new()),
            fail_first,
        }
    }

    pub fn calls(&self) -> usize {
        self.queries.lock().unwrap().len()
    }
}

impl SparqlTransport for Recording {
    fn post_query(&self, _url: &str, query: &str) -> Result<SparqlResponse, TransportError> {
        let ids = ids_in(query);
        let n = {
            let mut q = self.queries.lock().unwrap();
            q.push(ids.clone());
            q.len()
        };
        if n <= self.fail_first {
            return Ok(SparqlResponse {
                status: 503,
                body: "busy".into(),
            });
        }
        Ok(SparqlResponse {
            status: 200,
            body: answer(&ids),
        })
    }
}
