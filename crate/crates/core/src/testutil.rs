use crate::ingest::{build_graph, GraphInputs};
use crate::model::{
    lei_with_check_digits, Address, CompanyRecord, CountryCode, EdgeKind, GraphStore, Lei,
    RelationshipEdge,
};

pub fn lei(tag: &str) -> Lei {
    lei_with_check_digits(&format!("{tag:0>18}")).unwrap()
}

pub fn edge(child: &str, parent: &str, kind: EdgeKind) -> RelationshipEdge {
    RelationshipEdge {
        child: lei(child),
        parent: lei(parent),
        kind,
    }
}

pub fn cc(code: &str) -> CountryCode {
    CountryCode::parse(code).unwrap()
}

/// Company with the same country for headquarter and legal address.
pub fn co(tag: &str, country: &str) -> CompanyRecord {
    co2(tag, country, country)
}

pub fn co2(tag: &str, hq: &str, legal: &str) -> CompanyRecord {
    let addr = |c: &str| Address {
        country: (!c.is_empty()).then(|| cc(c)),
        ..Address::default()
    };
    CompanyRecord {
        lei: lei(tag),
        legal_name: format!("Company {tag}"),
        legal: addr(legal),
        hq: addr(hq),
        legal_form: None,
    }
}

pub fn with_form(mut rec: CompanyRecord, form: &str) -> CompanyRecord {
    rec.legal_form = Some(form.to_string());
    rec
}

pub fn store_from(companies: &[CompanyRecord], edges: &[RelationshipEdge]) -> GraphStore {
    build_graph(GraphInputs {
        companies: companies.to_vec(),
        edges: edges.to_vec(),
        ..Default::default()
    })
    .0
}
