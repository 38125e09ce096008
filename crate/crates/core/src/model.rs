//! Domain types and the immutable, indexed graph store.
//!
//! Companies are kept in a vector sorted by LEI so that a [`NodeId`] is a
//! stable dense index, independent of input row order. Consolidation edges
//! are stored twice per kind in CSR form: child -> parents (`up`) and
//! parent -> children (`down`), each neighbour list sorted by node id.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed lei {0:?}: expected 20 uppercase alphanumerics ending in two digits")]
    MalformedLei(String),
    #[error("malformed country code {0:?}: expected two uppercase letters")]
    MalformedCountry(String),
}

/// ISO 17442 legal entity identifier, stored inline.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lei([u8; 20]);

impl Lei {
    pub fn parse(raw: &str) -> Result<Self, ModelError> {
        if !validate_lei(raw).well_formed {
            return Err(ModelError::MalformedLei(raw.to_string()));
        }
        let mut bytes = [0u8; 20];
        bytes.copy_from_slice(raw.as_bytes());
        Ok(Lei(bytes))
    }

    pub fn as_str(&self) -> &str {
        // only ASCII alphanumerics are ever admitted
        std::str::from_utf8(&self.0).expect("lei is ascii")
    }

    pub fn checksum_ok(&self) -> bool {
        mod97(self.as_str()) == Some(1)
    }
}

impl fmt::Display for Lei {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for Lei {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Lei({})", self.as_str())
    }
}

impl FromStr for Lei {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Lei::parse(s)
    }
}

impl Serialize for Lei {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Lei {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Lei::parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LeiValidity {
    pub well_formed: bool,
    /// Mod-97 result; `None` when the string is not well formed.
    pub checksum_ok: Option<bool>,
}

/// Report-style LEI check. Never fails; a bad checksum is not a bad format.
pub fn validate_lei(raw: &str) -> LeiValidity {
    let bytes = raw.as_bytes();
    let well_formed = bytes.len() == 20
        && bytes
            .iter()
            .all(|b| b.is_ascii_digit() || b.is_ascii_uppercase())
        && bytes[18].is_ascii_digit()
        && bytes[19].is_ascii_digit();
    LeiValidity {
        well_formed,
        checksum_ok: well_formed.then(|| mod97(raw) == Some(1)),
    }
}

/// ISO 7064 MOD 97-10 over the letter-expanded string (A=10 .. Z=35).
fn mod97(raw: &str) -> Option<u32> {
    let mut rem: u32 = 0;
    for c in raw.chars() {
        let v = c.to_digit(36)?;
        rem = if v >= 10 {
            (rem * 100 + v) % 97
        } else {
            (rem * 10 + v) % 97
        };
    }
    Some(rem)
}

/// Appends ISO 7064 check digits to an 18-character prefix.
pub fn lei_with_check_digits(prefix: &str) -> Result<Lei, ModelError> {
    let base = format!("{prefix}00");
    let rem = mod97(&base).ok_or_else(|| ModelError::MalformedLei(base.clone()))?;
    Lei::parse(&format!("{prefix}{:02}", 98 - rem))
}

/// ISO 3166-1 alpha-2 code.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    pub fn parse(raw: &str) -> Result<Self, ModelError> {
        let b = raw.as_bytes();
        if b.len() == 2 && b.iter().all(u8::is_ascii_uppercase) {
            Ok(CountryCode([b[0], b[1]]))
        } else {
            Err(ModelError::MalformedCountry(raw.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("country code is ascii")
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CountryCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl FromStr for CountryCode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CountryCode::parse(s)
    }
}

/// Compares subdivision codes with or without their `CC-` country prefix,
/// so `DE` and `US-DE` name the same region.
pub fn region_matches(stored: &str, query: &str) -> bool {
    fn subdivision(code: &str) -> &str {
        match code.split_once('-') {
            Some((cc, rest)) if cc.len() == 2 => rest,
            _ => code,
        }
    }
    !stored.is_empty() && subdivision(stored).eq_ignore_ascii_case(subdivision(query))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Address {
    pub country: Option<CountryCode>,
    pub region: Option<String>,
    pub city: String,
    pub postal: String,
    pub line: String,
}

impl Address {
    pub fn is_empty(&self) -> bool {
        self.country.is_none()
            && self.region.is_none()
            && self.city.is_empty()
            && self.postal.is_empty()
            && self.line.is_empty()
    }
}

/// One level-1 record as read from the entity file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompanyRecord {
    pub lei: Lei,
    pub legal_name: String,
    pub legal: Address,
    pub hq: Address,
    /// 4-character ELF code, stored verbatim.
    pub legal_form: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Company {
    pub lei: Lei,
    pub legal_name: String,
    pub legal: Address,
    pub hq: Address,
    pub legal_form: Option<String>,
    pub hq_city_link: Option<String>,
    pub legal_city_link: Option<String>,
    pub lei_checksum_ok: bool,
    /// Created from a dangling relationship endpoint; carries no address data.
    pub stub: bool,
}

impl Company {
    pub fn from_record(rec: CompanyRecord) -> Self {
        Company {
            lei_checksum_ok: rec.lei.checksum_ok(),
            lei: rec.lei,
            legal_name: rec.legal_name,
            legal: rec.legal,
            hq: rec.hq,
            legal_form: rec.legal_form,
            hq_city_link: None,
            legal_city_link: None,
            stub: false,
        }
    }

    pub fn stub(lei: Lei) -> Self {
        Company {
            lei,
            legal_name: String::new(),
            legal: Address::default(),
            hq: Address::default(),
            legal_form: None,
            hq_city_link: None,
            legal_city_link: None,
            lei_checksum_ok: lei.checksum_ok(),
            stub: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Direct,
    Ultimate,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 2] = [EdgeKind::Direct, EdgeKind::Ultimate];

    pub fn relationship_type(self) -> &'static str {
        match self {
            EdgeKind::Direct => "IS_DIRECTLY_CONSOLIDATED_BY",
            EdgeKind::Ultimate => "IS_ULTIMATELY_CONSOLIDATED_BY",
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeKind::Direct => "direct",
            EdgeKind::Ultimate => "ultimate",
        })
    }
}

/// `child` is consolidated by `parent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationshipEdge {
    pub child: Lei,
    pub parent: Lei,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CountryIndicators {
    pub country: Option<CountryCode>,
    pub population: Option<u64>,
    /// Million USD.
    pub gdp: Option<f64>,
    /// Percent, 0..=100.
    pub corporate_tax_rate: Option<f64>,
}

/// Which way to walk consolidation edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// child -> parent, the consolidation direction.
    Up,
    /// parent -> child.
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Csr {
    offsets: Vec<u32>,
    targets: Vec<NodeId>,
}

impl Csr {
    fn from_pairs(nodes: usize, pairs: &[(NodeId, NodeId)]) -> Self {
        let mut offsets = vec![0u32; nodes + 1];
        for (from, _) in pairs {
            offsets[from.index() + 1] += 1;
        }
        for i in 0..nodes {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![NodeId(0); pairs.len()];
        for &(from, to) in pairs {
            let slot = &mut fill[from.index()];
            targets[*slot as usize] = to;
            *slot += 1;
        }
        for i in 0..nodes {
            targets[offsets[i] as usize..offsets[i + 1] as usize].sort_unstable();
        }
        Csr { offsets, targets }
    }

    #[inline]
    fn neighbors(&self, node: NodeId) -> &[NodeId] {
        let i = node.index();
        &self.targets[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }
}

#[derive(Debug, Clone, Default)]
struct Adjacency {
    up: Csr,
    down: Csr,
    len: usize,
}

/// Casefold, strip punctuation, collapse whitespace.
pub fn normalize_address(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Full legal address of a company, normalized; `None` without a street line.
pub fn full_legal_address(company: &Company) -> Option<String> {
    let a = &company.legal;
    if a.line.trim().is_empty() {
        return None;
    }
    let country = a.country.map(|c| c.to_string()).unwrap_or_default();
    let region = a.region.clone().unwrap_or_default();
    let joined = [a.line.as_str(), &a.postal, &a.city, &region, &country].join(" ");
    Some(normalize_address(&joined))
}

/// Immutable indexed graph over companies and their consolidation edges.
#[derive(Debug, Clone)]
pub struct GraphStore {
    companies: Vec<Company>,
    direct: Adjacency,
    ultimate: Adjacency,
    indicators: BTreeMap<CountryCode, CountryIndicators>,
    legal_forms: BTreeMap<String, String>,
    address_index: HashMap<String, Vec<NodeId>>,
}

impl GraphStore {
    /// `companies` must be sorted by LEI and unique; edges must resolve.
    pub(crate) fn assemble(
        companies: Vec<Company>,
        edges: &[(NodeId, NodeId, EdgeKind)],
        indicators: BTreeMap<CountryCode, CountryIndicators>,
        legal_forms: BTreeMap<String, String>,
    ) -> Self {
        debug_assert!(companies.windows(2).all(|w| w[0].lei < w[1].lei));
        let n = companies.len();
        let adjacency = |kind: EdgeKind| {
            let up: Vec<(NodeId, NodeId)> = edges
                .iter()
                .filter(|e| e.2 == kind)
                .map(|&(c, p, _)| (c, p))
                .collect();
            let down: Vec<(NodeId, NodeId)> = up.iter().map(|&(c, p)| (p, c)).collect();
            Adjacency {
                len: up.len(),
                up: Csr::from_pairs(n, &up),
                down: Csr::from_pairs(n, &down),
            }
        };
        let mut address_index: HashMap<String, Vec<NodeId>> = HashMap::new();
        for (i, c) in companies.iter().enumerate() {
            if let Some(addr) = full_legal_address(c) {
                address_index
                    .entry(addr)
                    .or_default()
                    .push(NodeId(i as u32));
            }
        }
        GraphStore {
            direct: adjacency(EdgeKind::Direct),
            ultimate: adjacency(EdgeKind::Ultimate),
            companies,
            indicators,
            legal_forms,
            address_index,
        }
    }

    pub fn len(&self) -> usize {
        self.companies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.companies.is_empty()
    }

    /// All companies, sorted by LEI; position equals [`NodeId`].
    pub fn companies(&self) -> &[Company] {
        &self.companies
    }

    pub fn company(&self, node: NodeId) -> &Company {
        &self.companies[node.index()]
    }

    pub fn node(&self, lei: &Lei) -> Option<NodeId> {
        self.companies
            .binary_search_by(|c| c.lei.cmp(lei))
            .ok()
            .map(|i| NodeId(i as u32))
    }

    pub fn get_company(&self, lei: &Lei) -> Option<&Company> {
        self.node(lei).map(|n| self.company(n))
    }

    pub fn lei(&self, node: NodeId) -> Lei {
        self.companies[node.index()].lei
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = NodeId> + Clone {
        (0..self.companies.len() as u32).map(NodeId)
    }

    fn adjacency(&self, kind: EdgeKind) -> &Adjacency {
        match kind {
            EdgeKind::Direct => &self.direct,
            EdgeKind::Ultimate => &self.ultimate,
        }
    }

    pub fn neighbors(&self, node: NodeId, kind: EdgeKind, dir: Direction) -> &[NodeId] {
        let adj = self.adjacency(kind);
        match dir {
            Direction::Up => adj.up.neighbors(node),
            Direction::Down => adj.down.neighbors(node),
        }
    }

    pub fn parents(&self, node: NodeId, kind: EdgeKind) -> &[NodeId] {
        self.neighbors(node, kind, Direction::Up)
    }

    pub fn children(&self, node: NodeId, kind: EdgeKind) -> &[NodeId] {
        self.neighbors(node, kind, Direction::Down)
    }

    pub fn has_edge(&self, child: NodeId, parent: NodeId, kind: EdgeKind) -> bool {
        self.parents(child, kind).binary_search(&parent).is_ok()
    }

    pub fn edge_count(&self, kind: EdgeKind) -> usize {
        self.adjacency(kind).len
    }

    /// `(child, parent)` pairs in child-major sorted order.
    pub fn edges(&self, kind: EdgeKind) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes()
            .flat_map(move |c| self.parents(c, kind).iter().map(move |&p| (c, p)))
    }

    pub fn indicators(&self) -> &BTreeMap<CountryCode, CountryIndicators> {
        &self.indicators
    }

    pub fn indicator(&self, country: CountryCode) -> Option<&CountryIndicators> {
        self.indicators.get(&country)
    }

    pub fn tax_rate(&self, country: CountryCode) -> Option<f64> {
        self.indicators
            .get(&country)
            .and_then(|i| i.corporate_tax_rate)
    }

    pub fn legal_forms(&self) -> &BTreeMap<String, String> {
        &self.legal_forms
    }

    pub fn legal_form_name(&self, code: &str) -> Option<&str> {
        self.legal_forms.get(code).map(String::as_str)
    }

    /// Normalized full legal address -> companies registered there.
    pub fn address_index(&self) -> &HashMap<String, Vec<NodeId>> {
        &self.address_index
    }

    /// City link -> companies, for the headquarter or legal role.
    pub fn city_index(&self, role: AddressRole) -> BTreeMap<&str, Vec<NodeId>> {
        let mut out: BTreeMap<&str, Vec<NodeId>> = BTreeMap::new();
        for (i, c) in self.companies.iter().enumerate() {
            let link = match role {
                AddressRole::Hq => c.hq_city_link.as_deref(),
                AddressRole::Legal => c.legal_city_link.as_deref(),
            };
            if let Some(link) = link {
                out.entry(link).or_default().push(NodeId(i as u32));
            }
        }
        out
    }

    pub fn stub_count(&self) -> usize {
        self.companies.iter().filter(|c| c.stub).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AddressRole {
    Hq,
    Legal,
}

impl fmt::Display for AddressRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AddressRole::Hq => "hq",
            AddressRole::Legal => "legal",
        })
    }
}
