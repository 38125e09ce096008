//! Country- and city-level statistics over the company graph.
//!
//! Counting passes run in parallel and merge integer tables; every floating
//! point value is then derived sequentially from those tables in key order,
//! so results do not depend on thread scheduling.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    region_matches, AddressRole, Company, CountryCode, EdgeKind, GraphStore, NodeId,
};
use crate::par;
use crate::table::{fmt_f64, fmt_opt, Table};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("empty denominator: no companies with legal country {0}")]
    EmptyDenominator(CountryCode),
    #[error("no direct edges with known parent and child countries")]
    NoEdges,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Which address country a company is counted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Attribution {
    #[default]
    Legal,
    Hq,
}

impl Attribution {
    pub fn country(self, c: &Company) -> Option<CountryCode> {
        match self {
            Attribution::Legal => c.legal.country,
            Attribution::Hq => c.hq.country,
        }
    }
}

type Counts<K> = BTreeMap<K, u64>;

fn merge_counts<K: Ord>(mut a: Counts<K>, b: Counts<K>) -> Counts<K> {
    if a.len() < b.len() {
        return merge_counts(b, a);
    }
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

/// Count companies by a key; `None` keys are skipped.
fn count_by<K, F>(store: &GraphStore, key: F) -> Counts<K>
where
    K: Ord + Send,
    F: Fn(&Company) -> Option<K> + Sync + Send,
{
    par::fold_range(
        store.len(),
        BTreeMap::new,
        |mut acc: Counts<K>, i| {
            if let Some(k) = key(store.company(NodeId(i as u32))) {
                *acc.entry(k).or_insert(0) += 1;
            }
            acc
        },
        merge_counts,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCountryMetric {
    pub country: CountryCode,
    pub numerator: u64,
    pub denominator: f64,
    pub unit: &'static str,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    /// Descending by ratio, ties by country.
    pub rows: Vec<RankedCountryMetric>,
    pub warnings: Vec<String>,
}

impl Ranking {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["country", "companies", "denominator", "unit", "ratio"]);
        for r in &self.rows {
            t.push([
                r.country.to_string(),
                r.numerator.to_string(),
                fmt_f64(r.denominator),
                r.unit.to_string(),
                fmt_f64(r.ratio),
            ]);
        }
        t
    }
}

fn rank_countries(
    store: &GraphStore,
    attribution: Attribution,
    unit: &'static str,
    denominator: impl Fn(CountryCode) -> Option<f64>,
) -> Ranking {
    let counts = count_by(store, |c| attribution.country(c));
    let mut countries: Vec<CountryCode> = counts.keys().copied().collect();
    countries.extend(store.indicators().keys().copied());
    countries.sort_unstable();
    countries.dedup();

    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for country in countries {
        let n = counts.get(&country).copied().unwrap_or(0);
        match denominator(country) {
            Some(d) if d > 0.0 => rows.push(RankedCountryMetric {
                country,
                numerator: n,
                denominator: d,
                unit,
                ratio: n as f64 / d,
            }),
            Some(_) => warnings.push(format!("{country}: {unit} is zero, excluded")),
            None => warnings.push(format!("{country}: {unit} unknown, excluded")),
        }
    }
    rows.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then(a.country.cmp(&b.country)));
    Ranking { rows, warnings }
}

/// Companies per inhabitant.
pub fn companies_per_capita(store: &GraphStore, attribution: Attribution) -> Ranking {
    rank_countries(store, attribution, "inhabitants", |c| {
        store
            .indicator(c)
            .and_then(|i| i.population)
            .map(|p| p as f64)
    })
}

/// Companies per million USD of GDP.
pub fn companies_per_gdp(store: &GraphStore, attribution: Attribution) -> Ranking {
    rank_countries(store, attribution, "million USD GDP", |c| {
        store.indicator(c).and_then(|i| i.gdp)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AddressCount {
    pub address: String,
    pub count: usize,
}

/// Most shared normalized legal addresses, count descending then address.
pub fn address_concentration(store: &GraphStore, top_k: usize) -> Vec<AddressCount> {
    let mut all: Vec<AddressCount> = store
        .address_index()
        .iter()
        .map(|(a, nodes)| AddressCount {
            address: a.clone(),
            count: nodes.len(),
        })
        .collect();
    all.sort_unstable_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.address.cmp(&b.address))
    });
    all.truncate(top_k);
    all
}

pub fn address_table(rows: &[AddressCount]) -> Table {
    let mut t = Table::new(["address", "companies"]);
    for r in rows {
        t.push([r.address.clone(), r.count.to_string()]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Flow {
    pub from: CountryCode,
    pub to: CountryCode,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    /// Companies with both countries known.
    pub eligible: u64,
    pub count: u64,
    pub share: Option<f64>,
    /// hq country -> legal country, count descending.
    pub flows: Vec<Flow>,
    /// Legal countries of divergent companies, count descending.
    pub top_legal: Vec<(CountryCode, u64)>,
}

impl Divergence {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["hqCountry", "legalCountry", "companies"]);
        for f in &self.flows {
            t.push([f.from.to_string(), f.to.to_string(), f.count.to_string()]);
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(["eligible", "divergent", "share"]);
        t.push([
            self.eligible.to_string(),
            self.count.to_string(),
            fmt_opt(self.share),
        ]);
        t
    }
}

fn sorted_desc<K: Ord + Copy>(counts: &Counts<K>) -> Vec<(K, u64)> {
    let mut v: Vec<(K, u64)> = counts.iter().map(|(k, c)| (*k, *c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

pub fn hq_legal_divergence(store: &GraphStore) -> Divergence {
    let pairs = count_by(store, |c| Some((c.hq.country?, c.legal.country?)));
    let eligible = pairs.values().sum();
    let mut divergent: Counts<(CountryCode, CountryCode)> = BTreeMap::new();
    let mut by_legal: Counts<CountryCode> = BTreeMap::new();
    for (&(hq, legal), &n) in pairs.iter().filter(|((h, l), _)| h != l) {
        divergent.insert((hq, legal), n);
        *by_legal.entry(legal).or_insert(0) += n;
    }
    let count = divergent.values().sum();
    Divergence {
        eligible,
        count,
        share: (eligible > 0).then(|| count as f64 / eligible as f64),
        flows: sorted_desc(&divergent)
            .into_iter()
            .map(|((from, to), count)| Flow { from, to, count })
            .collect(),
        top_legal: sorted_desc(&by_legal),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaxDelta {
    /// Mean of (hq or parent rate) - (legal or child rate), in percentage
    /// points; `None` when nothing qualified.
    pub mean: Option<f64>,
    pub included: u64,
    /// Candidates dropped for a missing country or tax rate.
    pub excluded: u64,
}

impl TaxDelta {
    pub fn to_table(&self, metric: &str, filter: &str) -> Table {
        let mut t = Table::new(["metric", "filter", "meanDeltaPp", "included", "excluded"]);
        t.push([
            metric.to_string(),
            filter.to_string(),
            fmt_opt(self.mean),
            self.included.to_string(),
            self.excluded.to_string(),
        ]);
        t
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PairKey {
    Pair(CountryCode, CountryCode),
    Excluded,
}

fn delta_from_pairs(store: &GraphStore, pairs: &Counts<PairKey>) -> TaxDelta {
    let mut included = 0;
    let mut excluded = 0;
    let mut sum = 0.0;
    for (key, &n) in pairs {
        match *key {
            PairKey::Pair(a, b) => match (store.tax_rate(a), store.tax_rate(b)) {
                (Some(ra), Some(rb)) => {
                    included += n;
                    sum += n as f64 * (ra - rb);
                }
                _ => excluded += n,
            },
            PairKey::Excluded => excluded += n,
        }
    }
    TaxDelta {
        mean: (included > 0).then(|| sum / included as f64),
        included,
        excluded,
    }
}

fn pair_key(
    a: Option<CountryCode>,
    b: Option<CountryCode>,
    differing_only: bool,
) -> Option<PairKey> {
    match (a, b) {
        (Some(a), Some(b)) if differing_only && a == b => None,
        (Some(a), Some(b)) => Some(PairKey::Pair(a, b)),
        _ => Some(PairKey::Excluded),
    }
}

/// Headquarter rate minus legal-address rate, averaged over companies.
pub fn tax_delta_hq_legal(store: &GraphStore, divergent_only: bool) -> TaxDelta {
    let pairs = count_by(store, |c| {
        if c.stub {
            None
        } else {
            pair_key(c.hq.country, c.legal.country, divergent_only)
        }
    });
    delta_from_pairs(store, &pairs)
}

/// Parent legal-country rate minus child legal-country rate, averaged over
/// direct edges.
pub fn tax_delta_parent_child(store: &GraphStore, multinational_only: bool) -> TaxDelta {
    let pairs = direct_edge_pairs(store, |child, parent| {
        pair_key(
            parent.legal.country,
            child.legal.country,
            multinational_only,
        )
    });
    delta_from_pairs(store, &pairs)
}

fn direct_edge_pairs<K, F>(store: &GraphStore, key: F) -> Counts<K>
where
    K: Ord + Send,
    F: Fn(&Company, &Company) -> Option<K> + Sync + Send,
{
    par::fold_range(
        store.len(),
        BTreeMap::new,
        |mut acc: Counts<K>, i| {
            let child = NodeId(i as u32);
            for &p in store.parents(child, EdgeKind::Direct) {
                if let Some(k) = key(store.company(child), store.company(p)) {
                    *acc.entry(k).or_insert(0) += 1;
                }
            }
            acc
        },
        merge_counts,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionShare {
    pub country: CountryCode,
    pub region: String,
    /// Companies with legal address in `country`.
    pub country_total: u64,
    /// Of those, legal address in `region`.
    pub legal_in_region: u64,
    /// Of those, headquarter also in `region` of `country`.
    pub hq_also_in_region: u64,
    pub legal_share: f64,
    pub hq_share_among_legal: Option<f64>,
}

impl RegionShare {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new([
            "country",
            "region",
            "countryCompanies",
            "legalInRegion",
            "hqAlsoInRegion",
            "legalShare",
            "hqShareAmongLegal",
        ]);
        t.push([
            self.country.to_string(),
            self.region.clone(),
            self.country_total.to_string(),
            self.legal_in_region.to_string(),
            self.hq_also_in_region.to_string(),
            fmt_f64(self.legal_share),
            fmt_opt(self.hq_share_among_legal),
        ]);
        t
    }
}

pub fn region_share(
    store: &GraphStore,
    country: CountryCode,
    region: &str,
) -> Result<RegionShare, AnalyticsError> {
    let in_region = |r: &Option<String>| r.as_deref().is_some_and(|r| region_matches(r, region));
    // 0: country only, 1: legal in region, 2: hq too
    let tiers = count_by(store, |c| {
        if c.legal.country != Some(country) {
            return None;
        }
        if !in_region(&c.legal.region) {
            return Some(0u8);
        }
        Some(
            if c.hq.country == Some(country) && in_region(&c.hq.region) {
                2
            } else {
                1
            },
        )
    });
    let tier = |t: u8| tiers.get(&t).copied().unwrap_or(0);
    let country_total = tier(0) + tier(1) + tier(2);
    if country_total == 0 {
        return Err(AnalyticsError::EmptyDenominator(country));
    }
    let legal_in_region = tier(1) + tier(2);
    let hq_also_in_region = tier(2);
    Ok(RegionShare {
        country,
        region: region.to_string(),
        country_total,
        legal_in_region,
        hq_also_in_region,
        legal_share: legal_in_region as f64 / country_total as f64,
        hq_share_among_legal: (legal_in_region > 0)
            .then(|| hq_also_in_region as f64 / legal_in_region as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeShare {
    /// Direct edges with both legal countries known.
    pub edges: u64,
    pub multinational: u64,
    /// Direct edges skipped for an unknown country.
    pub excluded: u64,
    pub share: f64,
}

impl EdgeShare {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["directEdges", "multinational", "excluded", "share"]);
        t.push([
            self.edges.to_string(),
            self.multinational.to_string(),
            self.excluded.to_string(),
            fmt_f64(self.share),
        ]);
        t
    }
}

/// Fraction of direct edges whose parent and child legal countries differ.
pub fn multinational_edge_share(store: &GraphStore) -> Result<EdgeShare, AnalyticsError> {
    // None: unknown, Some(b): multinational?
    let counts = direct_edge_pairs(store, |child, parent| {
        Some(match (parent.legal.country, child.legal.country) {
            (Some(p), Some(c)) => Some(p != c),
            _ => None,
        })
    });
    let get = |k| counts.get(&k).copied().unwrap_or(0);
    let (multinational, domestic, excluded) = (get(Some(true)), get(Some(false)), get(None));
    let edges = multinational + domestic;
    if edges == 0 {
        return Err(AnalyticsError::NoEdges);
    }
    Ok(EdgeShare {
        edges,
        multinational,
        excluded,
        share: multinational as f64 / edges as f64,
    })
}

/// Companies per square kilometre.
pub fn density(count: u64, area_sq_km: f64) -> f64 {
    count as f64 / area_sq_km
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityDensity {
    pub city_link: String,
    /// Most common city spelling among the counted companies.
    pub name: String,
    pub count: u64,
    pub area_sq_km: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityReport {
    pub hq: Vec<CityDensity>,
    pub legal: Vec<CityDensity>,
    /// Cities above the company threshold but without a usable area.
    pub skipped_hq: usize,
    pub skipped_legal: usize,
}

impl DensityReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new([
            "role",
            "cityLink",
            "cityName",
            "companies",
            "areaSqKm",
            "density",
        ]);
        for (role, rows) in [("hq", &self.hq), ("legal", &self.legal)] {
            for r in rows {
                t.push([
                    role.to_string(),
                    r.city_link.clone(),
                    r.name.clone(),
                    r.count.to_string(),
                    fmt_f64(r.area_sq_km),
                    fmt_f64(r.density),
                ]);
            }
        }
        t
    }
}

fn densest(
    store: &GraphStore,
    role: AddressRole,
    areas: &BTreeMap<String, f64>,
    min_companies: u64,
) -> (Vec<CityDensity>, usize) {
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (link, nodes) in store.city_index(role) {
        let count = nodes.len() as u64;
        if count <= min_companies {
            continue;
        }
        let Some(&area) = areas.get(link).filter(|a| a.is_finite() && **a > 0.0) else {
            skipped += 1;
            continue;
        };
        let mut spellings: BTreeMap<&str, usize> = BTreeMap::new();
        for &n in &nodes {
            let c = store.company(n);
            let city = match role {
                AddressRole::Hq => c.hq.city.as_str(),
                AddressRole::Legal => c.legal.city.as_str(),
            };
            *spellings.entry(city).or_insert(0) += 1;
        }
        let name = spellings
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(s, _)| s.to_string())
            .unwrap_or_default();
        rows.push(CityDensity {
            city_link: link.to_string(),
            name,
            count,
            area_sq_km: area,
            density: density(count, area),
        });
    }
    rows.sort_by(|a, b| {
        b.density
            .partial_cmp(&a.density)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.city_link.cmp(&b.city_link))
    });
    (rows, skipped)
}

/// Linked cities with more than `min_companies` companies, ranked by
/// companies per square kilometre, once for headquarter and once for legal
/// addresses.
pub fn city_density(
    store: &GraphStore,
    areas: &BTreeMap<String, f64>,
    min_companies: u64,
) -> Result<DensityReport, AnalyticsError> {
    if areas.is_empty() {
        return Err(AnalyticsError::InvalidArgument(
            "no city areas given".into(),
        ));
    }
    if min_companies == 0 {
        return Err(AnalyticsError::InvalidArgument(
            "minimum company count must be at least 1".into(),
        ));
    }
    let (hq, skipped_hq) = densest(store, AddressRole::Hq, areas, min_companies);
    let (legal, skipped_legal) = densest(store, AddressRole::Legal, areas, min_companies);
    Ok(DensityReport {
        hq,
        legal,
        skipped_hq,
        skipped_legal,
    })
}
