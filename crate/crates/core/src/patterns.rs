//! Subgraph pattern language and matcher.
//!
//! ```text
//! pattern    := stmt+ ;
//! stmt       := constraint ";" | edge ";" ;
//! constraint := VAR "." field "=" VALUE ;
//! field      := "hq" | "legal" | "form" | "region" ;
//! edge       := VAR "-[" kind ("+")? "]->" VAR ;
//! kind       := "direct" | "ultimate" ;
//! VAR        := [a-z][a-z0-9]* ;   VALUE := [A-Z0-9]+ ;
//! ```
//!
//! `#` starts a comment running to the end of the line. An edge
//! `a -[direct]-> b` reads "a is directly consolidated by b"; the `+` form
//! accepts any simple path of 1..=max_path_len such edges. Variables are
//! declared implicitly on first use and may bind the same company unless an
//! edge clause connects them.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::model::{region_matches, Company, Direction, EdgeKind, GraphStore, Lei, NodeId};
use crate::par;
use crate::traversal::DEFAULT_MAX_DEPTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Field {
    /// Headquarter address country.
    Hq,
    /// Legal address country.
    Legal,
    /// ELF legal form code.
    Form,
    /// Legal address subdivision, with or without its country prefix.
    Region,
}

impl Field {
    fn keyword(self) -> &'static str {
        match self {
            Field::Hq => "hq",
            Field::Legal => "legal",
            Field::Form => "form",
            Field::Region => "region",
        }
    }

    pub fn matches(self, company: &Company, value: &str) -> bool {
        match self {
            Field::Hq => company.hq.country.is_some_and(|c| c.as_str() == value),
            Field::Legal => company.legal.country.is_some_and(|c| c.as_str() == value),
            Field::Form => company.legal_form.as_deref() == Some(value),
            Field::Region => company
                .legal
                .region
                .as_deref()
                .is_some_and(|r| region_matches(r, value)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct EdgeClause {
    /// Child side.
    pub from: String,
    /// Parent side.
    pub to: String,
    pub kind: EdgeKind,
    pub transitive: bool,
}

/// Parsed pattern: variables (sorted by name) with their constraints, and
/// edge clauses in source order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Pattern {
    vars: BTreeMap<String, BTreeMap<Field, String>>,
    edges: Vec<EdgeClause>,
}

impl Pattern {
    pub fn builder() -> PatternBuilder {
        PatternBuilder::default()
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn constraints(&self, var: &str) -> Option<&BTreeMap<Field, String>> {
        self.vars.get(var)
    }

    pub fn edges(&self) -> &[EdgeClause] {
        &self.edges
    }
}

/// Canonical text form; `parse_pattern(&p.to_string()) == Ok(p)`.
impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (var, constraints) in &self.vars {
            for (field, value) in constraints {
                writeln!(f, "{var}.{}={value};", field.keyword())?;
            }
        }
        for e in &self.edges {
            let plus = if e.transitive { "+" } else { "" };
            writeln!(f, "{} -[{}{plus}]-> {};", e.from, e.kind, e.to)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("syntax error at {line}:{column}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        line: usize,
        column: usize,
        found: String,
        expected: Vec<&'static str>,
    },
    #[error("semantic error at {line}:{column}: {message}")]
    Semantic {
        line: usize,
        column: usize,
        message: String,
    },
}

/// Programmatic construction with the same checks as the parser.
#[derive(Debug, Clone, Default)]
pub struct PatternBuilder {
    vars: BTreeMap<String, BTreeMap<Field, String>>,
    edges: Vec<EdgeClause>,
    error: Option<String>,
}

fn is_var(s: &str) -> bool {
    let mut b = s.bytes();
    b.next().is_some_and(|c| c.is_ascii_lowercase())
        && b.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
}

fn is_value(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('-')
        && !s.ends_with('-')
        && s.bytes()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == b'-')
}

impl PatternBuilder {
    pub fn constrain(mut self, var: &str, field: Field, value: &str) -> Self {
        if let Err(e) = self.add_constraint(var, field, value) {
            self.error.get_or_insert(e);
        }
        self
    }

    pub fn edge(mut self, from: &str, kind: EdgeKind, transitive: bool, to: &str) -> Self {
        if let Err(e) = self.add_edge(from, kind, transitive, to) {
            self.error.get_or_insert(e);
        }
        self
    }

    fn add_constraint(&mut self, var: &str, field: Field, value: &str) -> Result<(), String> {
        if !is_var(var) {
            return Err(format!("invalid variable name {var:?}"));
        }
        if !is_value(value) {
            return Err(format!("invalid value {value:?}"));
        }
        let slot = self.vars.entry(var.to_string()).or_default();
        if slot.contains_key(&field) {
            return Err(format!("duplicate constraint {var}.{}", field.keyword()));
        }
        slot.insert(field, value.to_string());
        Ok(())
    }

    fn add_edge(
        &mut self,
        from: &str,
        kind: EdgeKind,
        transitive: bool,
        to: &str,
    ) -> Result<(), String> {
        for v in [from, to] {
            if !is_var(v) {
                return Err(format!("invalid variable name {v:?}"));
            }
        }
        if from == to {
            return Err(format!("edge clause connects {from} to itself"));
        }
        self.vars.entry(from.to_string()).or_default();
        self.vars.entry(to.to_string()).or_default();
        self.edges.push(EdgeClause {
            from: from.to_string(),
            to: to.to_string(),
            kind,
            transitive,
        });
        Ok(())
    }

    pub fn build(self) -> Result<Pattern, PatternError> {
        let semantic = |message| PatternError::Semantic {
            line: 0,
            column: 0,
            message,
        };
        if let Some(e) = self.error {
            return Err(semantic(e));
        }
        if self.edges.is_empty() {
            return Err(semantic("pattern has no edge clause".into()));
        }
        Ok(Pattern {
            vars: self.vars,
            edges: self.edges,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Dot,
    Eq,
    Semi,
    Plus,
    EdgeOpen,
    EdgeClose,
    Invalid(char),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "`{w}`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::EdgeOpen => f.write_str("`-[`"),
            Tok::EdgeClose => f.write_str("`]->`"),
            Tok::Invalid(c) => write!(f, "`{c}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Vec<Spanned> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let advance = |i: &mut usize, col: &mut usize, n: usize| {
        *i += n;
        *col += n;
    };
    while i < chars.len() {
        let c = chars[i];
        let (l, cl) = (line, col);
        let push = |out: &mut Vec<Spanned>, tok| {
            out.push(Spanned {
                tok,
                line: l,
                column: cl,
            })
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(&mut i, &mut col, 1),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    advance(&mut i, &mut col, 1);
                }
            }
            '.' | '=' | ';' | '+' => {
                push(
                    &mut out,
                    match c {
                        '.' => Tok::Dot,
                        '=' => Tok::Eq,
                        ';' => Tok::Semi,
                        _ => Tok::Plus,
                    },
                );
                advance(&mut i, &mut col, 1);
            }
            '-' if chars.get(i + 1) == Some(&'[') => {
                push(&mut out, Tok::EdgeOpen);
                advance(&mut i, &mut col, 2);
            }
            ']' if chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'>') => {
                push(&mut out, Tok::EdgeClose);
                advance(&mut i, &mut col, 3);
            }
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let start = i;
                // values such as region codes may contain inner hyphens
                let inner_hyphen = |j: usize| {
                    chars[j] == '-' && chars.get(j + 1).is_some_and(|n| n.is_ascii_alphanumeric())
                };
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || inner_hyphen(i))
                {
                    advance(&mut i, &mut col, 1);
                }
                push(&mut out, Tok::Word(chars[start..i].iter().collect()));
            }
            other => {
                push(&mut out, Tok::Invalid(other));
                advance(&mut i, &mut col, 1);
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column: col,
    });
    out
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &[&'static str]) -> Result<T, PatternError> {
        let t = self.peek();
        Err(PatternError::Syntax {
            line: t.line,
            column: t.column,
            found: t.tok.to_string(),
            expected: expected.to_vec(),
        })
    }

    fn expect(&mut self, tok: Tok, name: &'static str) -> Result<Spanned, PatternError> {
        if self.peek().tok == tok {
            Ok(self.bump())
        } else {
            self.fail(&[name])
        }
    }

    fn word(
        &mut self,
        accept: impl Fn(&str) -> bool,
        expected: &[&'static str],
    ) -> Result<(String, Spanned), PatternError> {
        match &self.peek().tok {
            Tok::Word(w) if accept(w) => {
                let w = w.clone();
                Ok((w, self.bump()))
            }
            _ => self.fail(expected),
        }
    }
}

/// Parses pattern text, reporting 1-based line and column on error.
pub fn parse_pattern(text: &str) -> Result<Pattern, PatternError> {
    let mut p = Parser {
        toks: lex(text),
        pos: 0,
    };
    let mut b = PatternBuilder::default();
    loop {
        if p.peek().tok == Tok::Eof && !(b.vars.is_empty() && b.edges.is_empty()) {
            break;
        }
        let (var, start) = p.word(is_var, &["variable"])?;
        let result = match p.peek().tok {
            Tok::Dot => {
                p.bump();
                let (field, _) = p.word(
                    |w| matches!(w, "hq" | "legal" | "form" | "region"),
                    &["`hq`", "`legal`", "`form`", "`region`"],
                )?;
                let field = match field.as_str() {
                    "hq" => Field::Hq,
                    "legal" => Field::Legal,
                    "form" => Field::Form,
                    _ => Field::Region,
                };
                p.expect(Tok::Eq, "`=`")?;
                let (value, _) = p.word(is_value, &["value"])?;
                b.add_constraint(&var, field, &value)
            }
            Tok::EdgeOpen => {
                p.bump();
                let (kind, _) = p.word(
                    |w| matches!(w, "direct" | "ultimate"),
                    &["`direct`", "`ultimate`"],
                )?;
                let kind = if kind == "direct" {
                    EdgeKind::Direct
                } else {
                    EdgeKind::Ultimate
                };
                let transitive = p.peek().tok == Tok::Plus;
                if transitive {
                    p.bump();
                } else if p.peek().tok != Tok::EdgeClose {
                    return p.fail(&["`+`", "`]->`"]);
                }
                p.expect(Tok::EdgeClose, "`]->`")?;
                let (to, _) = p.word(is_var, &["variable"])?;
                b.add_edge(&var, kind, transitive, &to)
            }
            _ => return p.fail(&["`.`", "`-[`"]),
        };
        p.expect(Tok::Semi, "`;`")?;
        if let Err(message) = result {
            return Err(PatternError::Semantic {
                line: start.line,
                column: start.column,
                message,
            });
        }
    }
    if b.edges.is_empty() {
        let end = p.peek();
        return Err(PatternError::Semantic {
            line: end.line,
            column: end.column,
            message: "pattern has no edge clause".into(),
        });
    }
    b.build()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchLimits {
    pub max_path_len: usize,
    pub max_results: Option<usize>,
}

impl Default for MatchLimits {
    fn default() -> Self {
        MatchLimits {
            max_path_len: DEFAULT_MAX_DEPTH,
            max_results: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Witness {
    /// Index into [`Pattern::edges`].
    pub clause: usize,
    /// Companies from the clause's child side to its parent side.
    pub path: Vec<Lei>,
}

impl Witness {
    pub fn hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Binding {
    /// Variable -> company, in variable-name order.
    pub vars: Vec<(String, Lei)>,
    /// One per transitive clause: the shortest connecting path, smallest
    /// LEI sequence first among equals.
    pub witnesses: Vec<Witness>,
}

impl Binding {
    pub fn get(&self, var: &str) -> Option<Lei> {
        self.vars.iter().find(|(v, _)| v == var).map(|(_, l)| *l)
    }
}

struct Compiled<'a> {
    store: &'a GraphStore,
    /// Per variable: allowed companies as a membership mask and a sorted list.
    allowed: Vec<Vec<bool>>,
    candidates: Vec<Vec<NodeId>>,
    /// `(from, to, kind, transitive)` with variable indices.
    clauses: Vec<(usize, usize, EdgeKind, bool)>,
    order: Vec<usize>,
    /// For each position in `order` after the first of its component: the
    /// clause used to expand it from an already-bound variable.
    expand_via: Vec<Option<usize>>,
    max_len: usize,
}

type ReachCache = HashMap<(NodeId, EdgeKind, Direction), std::rc::Rc<HashMap<NodeId, usize>>>;

/// Nodes within `max` hops (excluding `from`) with their BFS distance.
fn bounded_bfs(
    store: &GraphStore,
    from: NodeId,
    kind: EdgeKind,
    dir: Direction,
    max: usize,
) -> HashMap<NodeId, usize> {
    let mut dist = HashMap::from([(from, 0usize)]);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        if d == max {
            continue;
        }
        for &v in store.neighbors(u, kind, dir) {
            dist.entry(v).or_insert_with(|| {
                queue.push_back(v);
                d + 1
            });
        }
    }
    dist.remove(&from);
    dist
}

impl<'a> Compiled<'a> {
    fn new(store: &'a GraphStore, pattern: &Pattern, max_len: usize) -> Self {
        let names: Vec<&String> = pattern.vars.keys().collect();
        let index = |v: &str| names.iter().position(|n| n.as_str() == v).unwrap();
        let mut allowed = Vec::new();
        let mut candidates = Vec::new();
        for constraints in pattern.vars.values() {
            let mask: Vec<bool> = store
                .companies()
                .iter()
                .map(|c| constraints.iter().all(|(f, v)| f.matches(c, v)))
                .collect();
            candidates.push(
                mask.iter()
                    .enumerate()
                    .filter(|(_, ok)| **ok)
                    .map(|(i, _)| NodeId(i as u32))
                    .collect::<Vec<_>>(),
            );
            allowed.push(mask);
        }
        let clauses: Vec<_> = pattern
            .edges
            .iter()
            .map(|e| (index(&e.from), index(&e.to), e.kind, e.transitive))
            .collect();

        // most selective variable first, then grow along clauses
        let n = names.len();
        let mut order = Vec::with_capacity(n);
        let mut expand_via = Vec::with_capacity(n);
        let mut placed = vec![false; n];
        while order.len() < n {
            let seed = (0..n)
                .filter(|&v| !placed[v])
                .min_by_key(|&v| (candidates[v].len(), v))
                .unwrap();
            placed[seed] = true;
            order.push(seed);
            expand_via.push(None);
            let mut frontier = order.len() - 1;
            while frontier < order.len() {
                let u = order[frontier];
                frontier += 1;
                for (ci, &(a, b, _, _)) in clauses.iter().enumerate() {
                    let other = if a == u {
                        b
                    } else if b == u {
                        a
                    } else {
                        continue;
                    };
                    if !placed[other] {
                        placed[other] = true;
                        order.push(other);
                        expand_via.push(Some(ci));
                    }
                }
            }
        }
        Compiled {
            store,
            allowed,
            candidates,
            clauses,
            order,
            expand_via,
            max_len,
        }
    }

    fn reach(
        &self,
        cache: &mut ReachCache,
        from: NodeId,
        kind: EdgeKind,
        dir: Direction,
        transitive: bool,
    ) -> std::rc::Rc<HashMap<NodeId, usize>> {
        let max = if transitive { self.max_len } else { 1 };
        if !transitive {
            return std::rc::Rc::new(
                self.store
                    .neighbors(from, kind, dir)
                    .iter()
                    .map(|&n| (n, 1))
                    .collect(),
            );
        }
        cache
            .entry((from, kind, dir))
            .or_insert_with(|| std::rc::Rc::new(bounded_bfs(self.store, from, kind, dir, max)))
            .clone()
    }

    fn clause_holds(
        &self,
        cache: &mut ReachCache,
        clause: usize,
        bound: &[Option<NodeId>],
    ) -> bool {
        let (a, b, kind, transitive) = self.clauses[clause];
        let (Some(x), Some(y)) = (bound[a], bound[b]) else {
            return true;
        };
        if !transitive {
            return self.store.has_edge(x, y, kind);
        }
        self.reach(cache, x, kind, Direction::Up, true)
            .contains_key(&y)
    }

    fn search(
        &self,
        depth: usize,
        bound: &mut Vec<Option<NodeId>>,
        cache: &mut ReachCache,
        out: &mut Vec<Vec<NodeId>>,
    ) {
        if depth == self.order.len() {
            out.push(bound.iter().map(|b| b.unwrap()).collect());
            return;
        }
        let var = self.order[depth];
        let options: Vec<NodeId> = match self.expand_via[depth] {
            None => self.candidates[var].clone(),
            Some(ci) => {
                let (a, b, kind, transitive) = self.clauses[ci];
                let (anchor, dir) = if a == var {
                    (bound[b].unwrap(), Direction::Down)
                } else {
                    (bound[a].unwrap(), Direction::Up)
                };
                let mut v: Vec<NodeId> = self
                    .reach(cache, anchor, kind, dir, transitive)
                    .keys()
                    .copied()
                    .filter(|n| self.allowed[var][n.index()])
                    .collect();
                v.sort_unstable();
                v
            }
        };
        for node in options {
            bound[var] = Some(node);
            let consistent = (0..self.clauses.len())
                .filter(|&ci| {
                    let (a, b, _, _) = self.clauses[ci];
                    (a == var || b == var) && Some(ci) != self.expand_via[depth]
                })
                .all(|ci| self.clause_holds(cache, ci, bound));
            if consistent {
                self.search(depth + 1, bound, cache, out);
            }
        }
        bound[var] = None;
    }

    fn seed_results(&self, seed: NodeId) -> Vec<Vec<NodeId>> {
        let mut bound = vec![None; self.order.len()];
        bound[self.order[0]] = Some(seed);
        let mut cache = ReachCache::new();
        let mut out = Vec::new();
        self.search(1, &mut bound, &mut cache, &mut out);
        out
    }
}

/// Shortest path from `from` up to `to` within `max` hops; the smallest LEI
/// sequence among shortest ones.
fn witness_path(
    store: &GraphStore,
    from: NodeId,
    to: NodeId,
    kind: EdgeKind,
    max: usize,
) -> Option<Vec<NodeId>> {
    // distances to `to`, walking parent -> child
    let mut to_target = bounded_bfs(store, to, kind, Direction::Down, max);
    to_target.insert(to, 0);
    let mut remaining = *to_target.get(&from)?;
    let mut path = vec![from];
    let mut cur = from;
    while remaining > 0 {
        cur = *store
            .parents(cur, kind)
            .iter()
            .find(|p| to_target.get(p) == Some(&(remaining - 1)))?;
        path.push(cur);
        remaining -= 1;
    }
    Some(path)
}

/// All bindings of `pattern` in `store`, sorted by bound LEIs in variable
/// order and truncated to `limits.max_results`.
pub fn match_pattern(store: &GraphStore, pattern: &Pattern, limits: MatchLimits) -> Vec<Binding> {
    if store.is_empty() || limits.max_results == Some(0) {
        return Vec::new();
    }
    let max_len = limits.max_path_len.max(1);
    let compiled = Compiled::new(store, pattern, max_len);
    let seed_var = compiled.order[0];
    let per_seed = par::map(&compiled.candidates[seed_var], |&s| {
        compiled.seed_results(s)
    });
    let mut rows: Vec<Vec<NodeId>> = per_seed.into_iter().flatten().collect();
    // NodeId order is LEI order
    rows.sort_unstable();
    if let Some(limit) = limits.max_results {
        rows.truncate(limit);
    }
    let names: Vec<&String> = pattern.vars.keys().collect();
    par::map(&rows, |row| {
        let witnesses = compiled
            .clauses
            .iter()
            .enumerate()
            .filter(|(_, c)| c.3)
            .map(|(ci, &(a, b, kind, _))| Witness {
                clause: ci,
                path: witness_path(store, row[a], row[b], kind, max_len)
                    .expect("clause verified during search")
                    .into_iter()
                    .map(|n| store.lei(n))
                    .collect(),
            })
            .collect();
        Binding {
            vars: names
                .iter()
                .zip(row)
                .map(|(n, &node)| ((*n).clone(), store.lei(node)))
                .collect(),
            witnesses,
        }
    })
}

pub const DOUBLE_IRISH_DSL: &str = "\
# Double Irish with a Dutch sandwich
a.hq=IE;
b.hq=NL;
c.hq=IE;
a -[direct+]-> b;
b -[direct+]-> c;
";

pub const DUCK_RABBIT_DSL: &str = "\
# hybrid entity: haven company between a foreign group and a Dutch BV
b.hq=BM;
c.legal=NL;
c.form=54M6;
b -[ultimate]-> a;
c -[direct]-> b;
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoubleIrishParams {
    pub country_a: String,
    pub country_b: String,
    /// `None` drops the constraint on the top company (relaxed variant).
    pub country_c: Option<String>,
    pub max_path_len: usize,
}

impl Default for DoubleIrishParams {
    fn default() -> Self {
        DoubleIrishParams {
            country_a: "IE".into(),
            country_b: "NL".into(),
            country_c: Some("IE".into()),
            max_path_len: DEFAULT_MAX_DEPTH,
        }
    }
}

impl DoubleIrishParams {
    pub fn relaxed() -> Self {
        DoubleIrishParams {
            country_c: None,
            ..Default::default()
        }
    }

    pub fn pattern(&self) -> Result<Pattern, PatternError> {
        let mut b = Pattern::builder()
            .constrain("a", Field::Hq, &self.country_a)
            .constrain("b", Field::Hq, &self.country_b);
        if let Some(c) = &self.country_c {
            b = b.constrain("c", Field::Hq, c);
        }
        b.edge("a", EdgeKind::Direct, true, "b")
            .edge("b", EdgeKind::Direct, true, "c")
            .build()
    }
}

/// `a` (hq A) reaches `b` (hq B) reaches `c` (hq C, if given) along chains
/// of direct consolidation.
pub fn detect_double_irish(
    store: &GraphStore,
    params: &DoubleIrishParams,
) -> Result<Vec<Binding>, PatternError> {
    let pattern = params.pattern()?;
    Ok(match_pattern(
        store,
        &pattern,
        MatchLimits {
            max_path_len: params.max_path_len,
            max_results: None,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuckRabbitParams {
    pub havens: BTreeSet<String>,
    pub child_country: String,
    pub child_legal_form: String,
    /// Which address of the child carries `child_country`.
    pub child_country_field: Field,
}

impl Default for DuckRabbitParams {
    fn default() -> Self {
        DuckRabbitParams {
            havens: ["BM", "KY"].into_iter().map(String::from).collect(),
            child_country: "NL".into(),
            child_legal_form: "54M6".into(),
            child_country_field: Field::Legal,
        }
    }
}

impl DuckRabbitParams {
    pub fn pattern_for(&self, haven: &str) -> Result<Pattern, PatternError> {
        Pattern::builder()
            .constrain("b", Field::Hq, haven)
            .constrain("c", self.child_country_field, &self.child_country)
            .constrain("c", Field::Form, &self.child_legal_form)
            .edge("b", EdgeKind::Ultimate, false, "a")
            .edge("c", EdgeKind::Direct, false, "b")
            .build()
    }
}

/// `c` (child country, legal form) directly consolidated by `b` (hq in a
/// haven), which is ultimately consolidated by `a`. Single recorded edges.
pub fn detect_duck_rabbit(
    store: &GraphStore,
    params: &DuckRabbitParams,
) -> Result<Vec<Binding>, PatternError> {
    let mut out = Vec::new();
    for haven in &params.havens {
        out.extend(match_pattern(
            store,
            &params.pattern_for(haven)?,
            MatchLimits::default(),
        ));
    }
    out.sort();
    out.dedup();
    Ok(out)
}
