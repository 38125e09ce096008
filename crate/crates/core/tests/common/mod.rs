//! Random fixtures and brute-force reference implementations shared by the
//! integration tests. The oracles work on plain record and edge lists and do
//! not touch the store's indexes.
#![allow(dead_code)]

pub mod analytics_checks;
pub mod cli_runner;
pub mod sparql_mock;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taxgraph::ingest::{build_graph, GraphInputs};
use taxgraph::linking::{CityLink, CityLinks};
use taxgraph::model::{
    lei_with_check_digits, Address, CompanyRecord, CountryCode, CountryIndicators, EdgeKind,
    GraphStore, Lei, RelationshipEdge,
};
use taxgraph::patterns::{Binding, Field, Pattern, Witness};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn lei(tag: &str) -> Lei {
    lei_with_check_digits(&format!("{tag:0>18}")).unwrap()
}

pub fn cc(s: &str) -> CountryCode {
    CountryCode::parse(s).unwrap()
}

pub fn company(tag: &str, hq: &str, legal: &str, form: Option<&str>) -> CompanyRecord {
    let addr = |c: &str| Address {
        country: (!c.is_empty()).then(|| cc(c)),
        ..Address::default()
    };
    CompanyRecord {
        lei: lei(tag),
        legal_name: format!("Company {tag}"),
        legal: addr(legal),
        hq: addr(hq),
        legal_form: form.map(str::to_string),
    }
}

pub fn edge(child: Lei, parent: Lei, kind: EdgeKind) -> RelationshipEdge {
    RelationshipEdge {
        child,
        parent,
        kind,
    }
}

#[derive(Debug, Clone, Default)]
pub struct Fixture {
    pub records: Vec<CompanyRecord>,
    pub edges: Vec<RelationshipEdge>,
    pub indicators: BTreeMap<CountryCode, CountryIndicators>,
    pub links: CityLinks,
}

impl Fixture {
    pub fn store(&self) -> GraphStore {
        build_graph(GraphInputs {
            companies: self.records.clone(),
            edges: self.edges.clone(),
            indicators: self.indicators.clone(),
            city_links: self.links.clone(),
            ..Default::default()
        })
        .0
    }

    /// Every company id: records plus edge endpoints.
    pub fn universe(&self) -> Vec<Lei> {
        let mut all: BTreeSet<Lei> = self.records.iter().map(|r| r.lei).collect();
        for e in &self.edges {
            all.insert(e.child);
            all.insert(e.parent);
        }
        all.into_iter().collect()
    }

    pub fn record(&self, l: &Lei) -> Option<&CompanyRecord> {
        self.records.iter().find(|r| r.lei == *l)
    }

    /// Distinct non-loop edges.
    pub fn edge_set(&self, kind: EdgeKind) -> BTreeSet<(Lei, Lei)> {
        self.edges
            .iter()
            .filter(|e| e.kind == kind && e.child != e.parent)
            .map(|e| (e.child, e.parent))
            .collect()
    }

    pub fn parents_map(&self, kind: EdgeKind) -> BTreeMap<Lei, Vec<Lei>> {
        let mut m: BTreeMap<Lei, Vec<Lei>> = BTreeMap::new();
        for (c, p) in self.edge_set(kind) {
            m.entry(c).or_default().push(p);
        }
        m
    }

    pub fn children_map(&self, kind: EdgeKind) -> BTreeMap<Lei, Vec<Lei>> {
        let mut m: BTreeMap<Lei, Vec<Lei>> = BTreeMap::new();
        for (c, p) in self.edge_set(kind) {
            m.entry(p).or_default().push(c);
        }
        m
    }
}

const PATTERN_COUNTRIES: [&str; 5] = ["IE", "NL", "BM", "US", "KY"];
const PATTERN_FORMS: [&str; 2] = ["54M6", "XTIQ"];
const PATTERN_REGIONS: [&str; 2] = ["US-DE", "NL-NH"];

/// Up to 30 companies and 60 edges with a few countries, forms and regions
/// so that constraints select meaningful subsets.
pub fn random_pattern_graph(seed: u64) -> Fixture {
    let mut r = rng(seed);
    let n = r.random_range(2..=30);
    let pick = |r: &mut ChaCha8Rng, xs: &[&'static str]| xs[r.random_range(0..xs.len())];
    let mut records = Vec::new();
    for i in 0..n {
        let legal = pick(&mut r, &PATTERN_COUNTRIES);
        let hq = if r.random_bool(0.7) {
            legal
        } else {
            pick(&mut r, &PATTERN_COUNTRIES)
        };
        let form = r.random_bool(0.7).then(|| pick(&mut r, &PATTERN_FORMS));
        let mut rec = company(&format!("R{:X}N{i}", seed & 0xffff_ffff), hq, legal, form);
        if r.random_bool(0.3) {
            rec.legal.region = Some(pick(&mut r, &PATTERN_REGIONS).to_string());
        }
        records.push(rec);
    }
    let m = r.random_range(0..=60);
    let mut edges = Vec::new();
    for _ in 0..m {
        let a = r.random_range(0..n);
        let b = r.random_range(0..n);
        if a == b {
            continue;
        }
        let kind = if r.random_bool(0.6) {
            EdgeKind::Direct
        } else {
            EdgeKind::Ultimate
        };
        edges.push(edge(records[a].lei, records[b].lei, kind));
    }
    // occasionally an edge to a company missing from the entity file
    if r.random_bool(0.2) {
        edges.push(edge(
            records[0].lei,
            lei(&format!("STUB{:X}", seed & 0xffff_ffff)),
            EdgeKind::Direct,
        ));
    }
    Fixture {
        records,
        edges,
        ..Default::default()
    }
}

/// Random pattern text over variables a..d with 1..=4 edge clauses.
pub fn random_pattern_text(r: &mut ChaCha8Rng) -> String {
    let vars = ["a", "b", "c", "d"];
    let nvars = r.random_range(2..=4);
    let mut lines = Vec::new();
    let mut constrained = BTreeSet::new();
    for _ in 0..r.random_range(0..=3) {
        let v = vars[r.random_range(0..nvars)];
        let (field, value) = match r.random_range(0..4) {
            0 => ("hq", PATTERN_COUNTRIES[r.random_range(0..5)].to_string()),
            1 => ("legal", PATTERN_COUNTRIES[r.random_range(0..5)].to_string()),
            2 => ("form", PATTERN_FORMS[r.random_range(0..2)].to_string()),
            _ => (
                "region",
                if r.random_bool(0.5) {
                    "DE".into()
                } else {
                    "US-DE".into()
                },
            ),
        };
        if constrained.insert((v, field)) {
            lines.push(format!("{v}.{field}={value};"));
        }
    }
    for _ in 0..r.random_range(1..=4) {
        let a = r.random_range(0..nvars);
        let mut b = r.random_range(0..nvars);
        if a == b {
            b = (b + 1) % nvars;
        }
        let kind = if r.random_bool(0.5) {
            "direct"
        } else {
            "ultimate"
        };
        let plus = if r.random_bool(0.5) { "+" } else { "" };
        lines.push(format!("{} -[{kind}{plus}]-> {};", vars[a], vars[b]));
    }
    lines.join("\n")
}

fn subdivision(code: &str) -> &str {
    match code.split_once('-') {
        Some((cc, rest)) if cc.len() == 2 => rest,
        _ => code,
    }
}

fn satisfies(rec: Option<&CompanyRecord>, field: Field, value: &str) -> bool {
    let Some(rec) = rec else { return false };
    match field {
        Field::Hq => rec.hq.country.map(|c| c.to_string()).as_deref() == Some(value),
        Field::Legal => rec.legal.country.map(|c| c.to_string()).as_deref() == Some(value),
        Field::Form => rec.legal_form.as_deref() == Some(value),
        Field::Region => rec.legal.region.as_deref().is_some_and(|r| {
            !r.is_empty() && subdivision(r).eq_ignore_ascii_case(subdivision(value))
        }),
    }
}

/// Every simple path from `from` to `to` over parent edges with 1..=max
/// hops; returns the shortest, smallest LEI sequence first.
fn best_simple_path(
    parents: &BTreeMap<Lei, Vec<Lei>>,
    from: Lei,
    to: Lei,
    max: usize,
) -> Option<Vec<Lei>> {
    fn dfs(
        parents: &BTreeMap<Lei, Vec<Lei>>,
        path: &mut Vec<Lei>,
        to: Lei,
        max: usize,
        best: &mut Option<Vec<Lei>>,
    ) {
        let last = *path.last().unwrap();
        if path.len() > 1 && last == to {
            let better = match best {
                None => true,
                Some(b) => (path.len(), &path[..]) < (b.len(), &b[..]),
            };
            if better {
                *best = Some(path.clone());
            }
            return;
        }
        if path.len() > max {
            return;
        }
        for &p in parents.get(&last).map(Vec::as_slice).unwrap_or(&[]) {
            if !path.contains(&p) {
                path.push(p);
                dfs(parents, path, to, max, best);
                path.pop();
            }
        }
    }
    let mut best = None;
    dfs(parents, &mut vec![from], to, max, &mut best);
    best
}

/// All bindings by enumerating every assignment of companies to variables.
/// Assignments are drawn from each variable's constraint-satisfying
/// companies; witness paths are cached per (kind, from, to).
pub fn brute_force_matches(fx: &Fixture, pattern: &Pattern, max_len: usize) -> Vec<Binding> {
    let universe = fx.universe();
    let records: HashMap<Lei, &CompanyRecord> = fx.records.iter().map(|r| (r.lei, r)).collect();
    let vars: Vec<String> = pattern.variables().map(str::to_string).collect();
    let index: HashMap<&str, usize> = vars
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    let candidates: Vec<Vec<Lei>> = vars
        .iter()
        .map(|v| {
            let cons = pattern.constraints(v).unwrap();
            universe
                .iter()
                .copied()
                .filter(|l| {
                    cons.iter()
                        .all(|(f, val)| satisfies(records.get(l).copied(), *f, val))
                })
                .collect()
        })
        .collect();
    if candidates.iter().any(Vec::is_empty) {
        return Vec::new();
    }
    let parents = [
        fx.parents_map(EdgeKind::Direct),
        fx.parents_map(EdgeKind::Ultimate),
    ];
    let edge_sets = [
        fx.edge_set(EdgeKind::Direct),
        fx.edge_set(EdgeKind::Ultimate),
    ];
    let slot = |k: EdgeKind| if k == EdgeKind::Direct { 0 } else { 1 };
    let mut paths: HashMap<(usize, Lei, Lei), Option<Vec<Lei>>> = HashMap::new();

    let mut out = Vec::new();
    let mut assignment = vec![0usize; vars.len()];
    loop {
        let bound: Vec<Lei> = assignment
            .iter()
            .enumerate()
            .map(|(v, &i)| candidates[v][i])
            .collect();
        let mut witnesses = Vec::new();
        let mut ok = true;
        for (ci, e) in pattern.edges().iter().enumerate() {
            let (a, b) = (bound[index[e.from.as_str()]], bound[index[e.to.as_str()]]);
            let k = slot(e.kind);
            if e.transitive {
                let best = paths
                    .entry((k, a, b))
                    .or_insert_with(|| best_simple_path(&parents[k], a, b, max_len));
                match best {
                    Some(path) => witnesses.push(Witness {
                        clause: ci,
                        path: path.clone(),
                    }),
                    None => {
                        ok = false;
                        break;
                    }
                }
            } else if !edge_sets[k].contains(&(a, b)) {
                ok = false;
                break;
            }
        }
        if ok {
            out.push(Binding {
                vars: vars.iter().cloned().zip(bound).collect(),
                witnesses,
            });
        }
        // next assignment, odometer style
        let mut pos = vars.len();
        loop {
            if pos == 0 {
                out.sort();
                return out;
            }
            pos -= 1;
            assignment[pos] += 1;
            if assignment[pos] < candidates[pos].len() {
                break;
            }
            assignment[pos] = 0;
        }
    }
}

/// Nodes reachable from `root` in 1..=`depth` steps (any number if `None`),
/// computed as a fixed point of repeated one-step unions. May contain `root`.
pub fn reach_steps(
    next: &BTreeMap<Lei, Vec<Lei>>,
    root: Lei,
    depth: Option<usize>,
) -> BTreeSet<Lei> {
    let step = |set: &BTreeSet<Lei>| -> BTreeSet<Lei> {
        let mut out = set.clone();
        for n in set {
            out.extend(next.get(n).into_iter().flatten().copied());
        }
        out
    };
    let mut reach: BTreeSet<Lei> = next.get(&root).into_iter().flatten().copied().collect();
    let mut rounds = 1;
    while depth.is_none_or(|d| rounds < d) {
        let grown = step(&reach);
        if grown == reach {
            break;
        }
        reach = grown;
        rounds += 1;
    }
    reach
}

pub fn iterated_union_closure(
    next: &BTreeMap<Lei, Vec<Lei>>,
    root: Lei,
    depth: Option<usize>,
) -> BTreeSet<Lei> {
    let mut reach = reach_steps(next, root, depth);
    reach.remove(&root);
    reach
}

/// Whether some node reachable from `root` (root included) lies on a cycle.
pub fn reaches_cycle(next: &BTreeMap<Lei, Vec<Lei>>, root: Lei) -> bool {
    let mut nodes = reach_steps(next, root, None);
    nodes.insert(root);
    nodes
        .iter()
        .any(|&n| reach_steps(next, n, None).contains(&n))
}

/// Random graph on `n` nodes; with `acyclic` all edges go from a higher to a
/// lower index.
pub fn random_graph(seed: u64, n: usize, edges: usize, acyclic: bool) -> Fixture {
    let mut r = rng(seed);
    let records: Vec<CompanyRecord> = (0..n)
        .map(|i| company(&format!("G{seed}X{i}"), "DE", "DE", None))
        .collect();
    let mut list = Vec::new();
    while list.len() < edges && n > 1 {
        let a = r.random_range(0..n);
        let b = r.random_range(0..n);
        if a == b || (acyclic && a <= b) {
            continue;
        }
        let kind = if r.random_bool(0.8) {
            EdgeKind::Direct
        } else {
            EdgeKind::Ultimate
        };
        list.push(edge(records[a].lei, records[b].lei, kind));
    }
    Fixture {
        records,
        edges: list,
        ..Default::default()
    }
}

/// The longest simple path, child first, smallest LEI sequence among
/// equals; by exhaustive search. Empty without edges.
pub fn longest_simple_path(fx: &Fixture, kind: EdgeKind) -> Vec<Lei> {
    let parents = fx.parents_map(kind);
    if parents.is_empty() {
        return Vec::new();
    }
    fn dfs(parents: &BTreeMap<Lei, Vec<Lei>>, path: &mut Vec<Lei>, best: &mut Vec<Lei>) {
        if path.len() > best.len() || (path.len() == best.len() && *path < *best) {
            *best = path.clone();
        }
        let last = *path.last().unwrap();
        for &p in parents.get(&last).map(Vec::as_slice).unwrap_or(&[]) {
            if !path.contains(&p) {
                path.push(p);
                dfs(parents, path, best);
                path.pop();
            }
        }
    }
    let mut best = Vec::new();
    for s in fx.universe() {
        dfs(&parents, &mut vec![s], &mut best);
    }
    best
}

/// Histogram of maximal simple paths by hop count, by exhaustive search.
pub fn maximal_path_histogram(fx: &Fixture, kind: EdgeKind) -> BTreeMap<usize, usize> {
    let parents = fx.parents_map(kind);
    let children = fx.children_map(kind);
    let mut hist = BTreeMap::new();
    fn dfs(
        parents: &BTreeMap<Lei, Vec<Lei>>,
        children: &BTreeMap<Lei, Vec<Lei>>,
        path: &mut Vec<Lei>,
        hist: &mut BTreeMap<usize, usize>,
    ) {
        let last = *path.last().unwrap();
        let ext: Vec<Lei> = parents
            .get(&last)
            .into_iter()
            .flatten()
            .copied()
            .filter(|p| !path.contains(p))
            .collect();
        if ext.is_empty() {
            let first = path[0];
            let front_open = children
                .get(&first)
                .into_iter()
                .flatten()
                .any(|c| !path.contains(c));
            if !front_open && path.len() > 1 {
                *hist.entry(path.len() - 1).or_insert(0) += 1;
            }
            return;
        }
        for p in ext {
            path.push(p);
            dfs(parents, children, path, hist);
            path.pop();
        }
    }
    for s in fx.universe() {
        dfs(&parents, &children, &mut vec![s], &mut hist);
    }
    hist
}

const ANALYTICS_COUNTRIES: [&str; 8] = ["US", "DE", "KY", "NL", "BM", "IE", "FR", "LI"];

/// 1,000 companies with gaps everywhere: unknown countries, missing
/// indicator values, regions, shared addresses and city links.
pub fn random_analytics_fixture(seed: u64, n: usize) -> Fixture {
    let mut r = rng(seed);
    let pick_country = |r: &mut ChaCha8Rng| -> &'static str {
        if r.random_bool(0.05) {
            ""
        } else {
            ANALYTICS_COUNTRIES[r.random_range(0..ANALYTICS_COUNTRIES.len())]
        }
    };
    let mut records = Vec::new();
    let mut links = CityLinks::default();
    for i in 0..n {
        let legal = pick_country(&mut r);
        let hq = if r.random_bool(0.75) {
            legal
        } else {
            pick_country(&mut r)
        };
        let mut rec = company(&format!("AN{seed}I{i}"), hq, legal, None);
        let regions = ["US-DE", "US-CA", "DE", ""];
        rec.legal.region =
            Some(regions[r.random_range(0..4)].to_string()).filter(|s| !s.is_empty());
        rec.hq.region = Some(regions[r.random_range(0..4)].to_string()).filter(|s| !s.is_empty());
        if r.random_bool(0.9) {
            rec.legal.line = format!("{} Orange  Street", r.random_range(1..40));
            if r.random_bool(0.5) {
                rec.legal.line = rec.legal.line.to_uppercase();
            }
            rec.legal.city = "Wilmington".into();
            rec.legal.postal = "19801".into();
        }
        let cities = ["Q1", "Q2", "Q3", "Q4", "Q5"];
        let link = CityLink {
            hq: r
                .random_bool(0.8)
                .then(|| cities[r.random_range(0..5)].to_string()),
            legal: r
                .random_bool(0.8)
                .then(|| cities[r.random_range(0..5)].to_string()),
        };
        rec.hq.city = format!("City {}", link.hq.as_deref().unwrap_or("none"));
        links.insert(rec.lei, link);
        records.push(rec);
    }
    let mut edges = Vec::new();
    for _ in 0..n / 2 {
        let a = r.random_range(0..n);
        let b = r.random_range(0..n);
        if a != b {
            let kind = if r.random_bool(0.7) {
                EdgeKind::Direct
            } else {
                EdgeKind::Ultimate
            };
            edges.push(edge(records[a].lei, records[b].lei, kind));
        }
    }
    let mut indicators = BTreeMap::new();
    for c in ANALYTICS_COUNTRIES {
        if c == "LI" {
            continue;
        }
        indicators.insert(
            cc(c),
            CountryIndicators {
                country: Some(cc(c)),
                population: r.random_bool(0.85).then(|| r.random_range(0..50_000_000)),
                gdp: r.random_bool(0.85).then(|| r.random_range(0.0..1e6)),
                corporate_tax_rate: r.random_bool(0.85).then(|| r.random_range(0.0..40.0)),
            },
        );
    }
    Fixture {
        records,
        edges,
        indicators,
        links,
    }
}

/// Relative-or-absolute closeness for means and ratios.
pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Nodes lying on some cycle of the relation.
pub fn cycle_nodes(next: &BTreeMap<Lei, Vec<Lei>>) -> BTreeSet<Lei> {
    next.keys()
        .copied()
        .filter(|&n| reach_steps(next, n, None).contains(&n))
        .collect()
}
