//! Reachability and chain analytics over consolidation edges.
//!
//! Edges point from child to parent. Cycles can occur in dirty registry data;
//! nothing here aborts on them. Closures flag them, and chain enumeration is
//! restricted to simple paths.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::Serialize;
use thiserror::Error;

use crate::model::{Direction, EdgeKind, GraphStore, Lei, NodeId};
use crate::par;

/// Bound on BFS depth unless the caller asks otherwise.
pub const DEFAULT_MAX_DEPTH: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraversalError {
    #[error("unknown entity {0}")]
    UnknownEntity(Lei),
    #[error("max depth must be at least 1")]
    ZeroDepth,
}

fn resolve(store: &GraphStore, lei: &Lei) -> Result<NodeId, TraversalError> {
    store.node(lei).ok_or(TraversalError::UnknownEntity(*lei))
}

/// Children along recorded Direct edges, sorted by LEI.
pub fn direct_children(store: &GraphStore, lei: &Lei) -> Result<Vec<Lei>, TraversalError> {
    let node = resolve(store, lei)?;
    Ok(store
        .children(node, EdgeKind::Direct)
        .iter()
        .map(|&c| store.lei(c))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClosureResult {
    pub root: Lei,
    /// Reached companies, excluding the root.
    pub members: BTreeSet<Lei>,
    /// Expansion stopped at the depth bound while more nodes were reachable.
    pub truncated: bool,
    /// The explored subgraph contains a cycle.
    pub cyclic: bool,
}

pub(crate) struct RawClosure {
    pub members: Vec<NodeId>,
    pub truncated: bool,
    pub cyclic: bool,
}

pub(crate) fn closure_nodes(
    store: &GraphStore,
    root: NodeId,
    kind: EdgeKind,
    dir: Direction,
    max_depth: Option<usize>,
) -> RawClosure {
    let mut depth: HashMap<NodeId, usize> = HashMap::new();
    depth.insert(root, 0);
    let mut order = vec![root];
    let mut queue = VecDeque::from([root]);
    let mut explored_edges: Vec<(NodeId, NodeId)> = Vec::new();
    let mut truncated = false;
    while let Some(u) = queue.pop_front() {
        let d = depth[&u];
        let next = store.neighbors(u, kind, dir);
        if max_depth.is_some_and(|m| d >= m) {
            truncated |= next.iter().any(|v| !depth.contains_key(v));
            continue;
        }
        for &v in next {
            explored_edges.push((u, v));
            if let std::collections::hash_map::Entry::Vacant(e) = depth.entry(v) {
                e.insert(d + 1);
                order.push(v);
                queue.push_back(v);
            }
        }
    }
    let cyclic = has_cycle(&order, &explored_edges);
    order.swap_remove(0);
    RawClosure {
        members: order,
        truncated,
        cyclic,
    }
}

/// Kahn's algorithm over the explored subgraph.
fn has_cycle(nodes: &[NodeId], edges: &[(NodeId, NodeId)]) -> bool {
    if edges.is_empty() {
        return false;
    }
    let pos: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut indegree = vec![0usize; nodes.len()];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (u, v) in edges {
        let (u, v) = (pos[u], pos[v]);
        out[u].push(v);
        indegree[v] += 1;
    }
    let mut ready: Vec<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut seen = 0;
    while let Some(u) = ready.pop() {
        seen += 1;
        for &v in &out[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.push(v);
            }
        }
    }
    seen < nodes.len()
}

/// BFS closure from `lei` along edges of `kind` in direction `dir`.
/// `max_depth = None` explores without bound.
pub fn closure(
    store: &GraphStore,
    lei: &Lei,
    kind: EdgeKind,
    dir: Direction,
    max_depth: Option<usize>,
) -> Result<ClosureResult, TraversalError> {
    if max_depth == Some(0) {
        return Err(TraversalError::ZeroDepth);
    }
    let root = resolve(store, lei)?;
    let raw = closure_nodes(store, root, kind, dir, max_depth);
    Ok(ClosureResult {
        root: *lei,
        members: raw.members.iter().map(|&n| store.lei(n)).collect(),
        truncated: raw.truncated,
        cyclic: raw.cyclic,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChildStats {
    /// Mean direct children over companies with at least one; `None` if none.
    pub avg_direct: Option<f64>,
    /// Same over recorded Ultimate edges, without closure expansion.
    pub avg_ultimate: Option<f64>,
    /// child count -> number of companies with that many children.
    pub histogram_direct: BTreeMap<usize, usize>,
    pub histogram_ultimate: BTreeMap<usize, usize>,
}

fn child_histogram(store: &GraphStore, kind: EdgeKind) -> BTreeMap<usize, usize> {
    par::fold_range(
        store.len(),
        BTreeMap::new,
        |mut h: BTreeMap<usize, usize>, i| {
            let n = store.children(NodeId(i as u32), kind).len();
            if n > 0 {
                *h.entry(n).or_insert(0) += 1;
            }
            h
        },
        merge_histograms,
    )
}

pub(crate) fn merge_histograms(
    mut a: BTreeMap<usize, usize>,
    b: BTreeMap<usize, usize>,
) -> BTreeMap<usize, usize> {
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

fn histogram_mean(h: &BTreeMap<usize, usize>) -> Option<f64> {
    let parents: usize = h.values().sum();
    let children: usize = h.iter().map(|(k, v)| k * v).sum();
    (parents > 0).then(|| children as f64 / parents as f64)
}

pub fn child_stats(store: &GraphStore) -> ChildStats {
    let histogram_direct = child_histogram(store, EdgeKind::Direct);
    let histogram_ultimate = child_histogram(store, EdgeKind::Ultimate);
    ChildStats {
        avg_direct: histogram_mean(&histogram_direct),
        avg_ultimate: histogram_mean(&histogram_ultimate),
        histogram_direct,
        histogram_ultimate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosureChildStats {
    pub kind: EdgeKind,
    /// Mean closure size over companies with at least one child of `kind`.
    pub average: Option<f64>,
    pub histogram: BTreeMap<usize, usize>,
    pub truncated_roots: usize,
    pub cyclic_roots: usize,
}

/// Descendant counts per company via downward closure, the
/// transitive-closure reading of "children".
pub fn closure_child_stats(
    store: &GraphStore,
    kind: EdgeKind,
    max_depth: Option<usize>,
) -> ClosureChildStats {
    let roots: Vec<NodeId> = store
        .nodes()
        .filter(|&n| !store.children(n, kind).is_empty())
        .collect();
    let sizes = par::map(&roots, |&r| {
        let c = closure_nodes(store, r, kind, Direction::Down, max_depth);
        (c.members.len(), c.truncated, c.cyclic)
    });
    let mut histogram = BTreeMap::new();
    for (n, _, _) in &sizes {
        *histogram.entry(*n).or_insert(0) += 1;
    }
    ClosureChildStats {
        kind,
        average: histogram_mean(&histogram),
        histogram,
        truncated_roots: sizes.iter().filter(|s| s.1).count(),
        cyclic_roots: sizes.iter().filter(|s| s.2).count(),
    }
}

/// Strongly connected components of the `kind` edge relation.
struct Components {
    /// Component index per node.
    comp_of: Vec<u32>,
    /// Components in reverse topological order (parents first).
    members: Vec<Vec<NodeId>>,
}

impl Components {
    fn new(store: &GraphStore, kind: EdgeKind) -> Self {
        let mut g: DiGraph<(), ()> = DiGraph::with_capacity(store.len(), store.edge_count(kind));
        for _ in 0..store.len() {
            g.add_node(());
        }
        for (c, p) in store.edges(kind) {
            g.add_edge(NodeIndex::new(c.index()), NodeIndex::new(p.index()), ());
        }
        let sccs = tarjan_scc(&g);
        let mut comp_of = vec![0u32; store.len()];
        let members: Vec<Vec<NodeId>> = sccs
            .into_iter()
            .enumerate()
            .map(|(i, scc)| {
                let mut nodes: Vec<NodeId> =
                    scc.into_iter().map(|n| NodeId(n.index() as u32)).collect();
                nodes.sort_unstable();
                for n in &nodes {
                    comp_of[n.index()] = i as u32;
                }
                nodes
            })
            .collect();
        Components { comp_of, members }
    }

    fn same(&self, a: NodeId, b: NodeId) -> bool {
        self.comp_of[a.index()] == self.comp_of[b.index()]
    }

    fn cyclic(&self, n: NodeId) -> bool {
        self.members[self.comp_of[n.index()] as usize].len() > 1
    }
}

/// Longest simple upward path from `start`, in companies, avoiding `blocked`.
/// Only nodes inside `start`'s component are enumerated; leaving it uses the
/// precomputed `best` lengths.
fn longest_within(
    store: &GraphStore,
    kind: EdgeKind,
    comps: &Components,
    best: &[u32],
    start: NodeId,
    blocked: &mut HashSet<NodeId>,
) -> u32 {
    blocked.insert(start);
    let mut result = 1;
    for &p in store.parents(start, kind) {
        if blocked.contains(&p) {
            continue;
        }
        let tail = if comps.same(start, p) {
            longest_within(store, kind, comps, best, p, blocked)
        } else {
            best[p.index()]
        };
        result = result.max(1 + tail);
    }
    blocked.remove(&start);
    result
}

/// A maximum-length simple path along `kind` edges, child first. Ties go to
/// the lexicographically smallest LEI sequence. Empty when there are no
/// edges of that kind.
pub fn longest_chain(store: &GraphStore, kind: EdgeKind) -> Vec<Lei> {
    if store.edge_count(kind) == 0 {
        return Vec::new();
    }
    let comps = Components::new(store, kind);
    let mut best = vec![0u32; store.len()];
    let mut scratch = HashSet::new();
    // parents' components are finished before their children's
    for comp in &comps.members {
        for &v in comp {
            best[v.index()] = if comp.len() == 1 {
                1 + store
                    .parents(v, kind)
                    .iter()
                    .map(|p| best[p.index()])
                    .max()
                    .unwrap_or(0)
            } else {
                longest_within(store, kind, &comps, &best, v, &mut scratch)
            };
        }
    }
    let target = *best.iter().max().unwrap();
    let start = NodeId(best.iter().position(|&b| b == target).unwrap() as u32);

    let mut path = vec![start];
    let mut on_path: HashSet<NodeId> = HashSet::from([start]);
    let mut remaining = target - 1;
    while remaining > 0 {
        let current = *path.last().unwrap();
        let next = store
            .parents(current, kind)
            .iter()
            .copied()
            .filter(|p| !on_path.contains(p))
            .find(|&p| {
                let reach = if comps.same(current, p) {
                    longest_within(store, kind, &comps, &best, p, &mut on_path.clone())
                } else {
                    best[p.index()]
                };
                reach >= remaining
            })
            .expect("a continuation of the required length exists");
        path.push(next);
        on_path.insert(next);
        remaining -= 1;
    }
    path.into_iter().map(|n| store.lei(n)).collect()
}

/// Number of maximal simple paths by hop count. A path is maximal when no
/// edge extends it at either end without revisiting a node.
pub fn chain_histogram(store: &GraphStore, kind: EdgeKind) -> BTreeMap<usize, usize> {
    if store.edge_count(kind) == 0 {
        return BTreeMap::new();
    }
    let comps = Components::new(store, kind);
    // Acyclic starts must have no children; nodes on a cycle may start a
    // maximal path if all their children end up on it.
    let starts: Vec<NodeId> = store
        .nodes()
        .filter(|&n| {
            let has_children = !store.children(n, kind).is_empty();
            let has_parents = !store.parents(n, kind).is_empty();
            (has_parents && !has_children) || comps.cyclic(n)
        })
        .collect();
    let per_start = par::map(&starts, |&s| {
        let mut h = BTreeMap::new();
        let mut path = vec![s];
        let mut on_path = HashSet::from([s]);
        enumerate_maximal(store, kind, &mut path, &mut on_path, &mut h);
        h
    });
    per_start
        .into_iter()
        .fold(BTreeMap::new(), merge_histograms)
}

fn enumerate_maximal(
    store: &GraphStore,
    kind: EdgeKind,
    path: &mut Vec<NodeId>,
    on_path: &mut HashSet<NodeId>,
    hist: &mut BTreeMap<usize, usize>,
) {
    let end = *path.last().unwrap();
    let mut extended = false;
    for &p in store.parents(end, kind) {
        if on_path.contains(&p) {
            continue;
        }
        extended = true;
        path.push(p);
        on_path.insert(p);
        enumerate_maximal(store, kind, path, on_path, hist);
        on_path.remove(&p);
        path.pop();
    }
    if !extended && path.len() > 1 {
        let start = path[0];
        if store
            .children(start, kind)
            .iter()
            .all(|c| on_path.contains(c))
        {
            *hist.entry(path.len() - 1).or_insert(0) += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UltimateDiscrepancy {
    pub child: Lei,
    pub ultimate_parent: Lei,
    pub reachable_via_direct: bool,
}

/// For every recorded Ultimate edge, whether its parent is reachable from
/// the child through Direct edges. Sorted by (child, parent).
pub fn ultimate_discrepancies(store: &GraphStore) -> Vec<UltimateDiscrepancy> {
    let children: Vec<NodeId> = store
        .nodes()
        .filter(|&n| !store.parents(n, EdgeKind::Ultimate).is_empty())
        .collect();
    par::map(&children, |&child| {
        let reach: HashSet<NodeId> =
            closure_nodes(store, child, EdgeKind::Direct, Direction::Up, None)
                .members
                .into_iter()
                .collect();
        store
            .parents(child, EdgeKind::Ultimate)
            .iter()
            .map(|p| UltimateDiscrepancy {
                child: store.lei(child),
                ultimate_parent: store.lei(*p),
                reachable_via_direct: reach.contains(p),
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{edge, lei, store_from};

    fn chain4() -> GraphStore {
        store_from(
            &[],
            &[
                edge("A", "B", EdgeKind::Direct),
                edge("B", "C", EdgeKind::Direct),
                edge("C", "D", EdgeKind::Direct),
            ],
        )
    }

    fn set(tags: &[&str]) -> BTreeSet<Lei> {
        tags.iter().map(|t| lei(t)).collect()
    }

    #[test]
    fn direct_children_cases() {
        let s = store_from(
            &[],
            &[
                edge("A", "P", EdgeKind::Direct),
                edge("B", "P", EdgeKind::Direct),
                edge("C", "P", EdgeKind::Direct),
                edge("D", "P", EdgeKind::Ultimate),
            ],
        );
        assert_eq!(direct_children(&s, &lei("P")).unwrap().len(), 3);
        assert!(direct_children(&s, &lei("A")).unwrap().is_empty());
        assert_eq!(
            direct_children(&s, &lei("Z")),
            Err(TraversalError::UnknownEntity(lei("Z")))
        );
    }

    #[test]
    fn closure_on_chain() {
        let s = chain4();
        let c = closure(&s, &lei("A"), EdgeKind::Direct, Direction::Up, None).unwrap();
        assert_eq!(c.members, set(&["B", "C", "D"]));
        assert!(!c.truncated && !c.cyclic);
        let c = closure(&s, &lei("D"), EdgeKind::Direct, Direction::Down, None).unwrap();
        assert_eq!(c.members, set(&["A", "B", "C"]));
        let c = closure(&s, &lei("A"), EdgeKind::Direct, Direction::Up, Some(1)).unwrap();
        assert_eq!(c.members, set(&["B"]));
        assert!(c.truncated);
        let c = closure(&s, &lei("A"), EdgeKind::Direct, Direction::Up, Some(3)).unwrap();
        assert!(!c.truncated);
        assert!(closure(&s, &lei("A"), EdgeKind::Direct, Direction::Up, Some(0)).is_err());
    }

    #[test]
    fn closure_two_cycle() {
        let s = store_from(
            &[],
            &[
                edge("A", "B", EdgeKind::Direct),
                edge("B", "A", EdgeKind::Direct),
            ],
        );
        let c = closure(&s, &lei("A"), EdgeKind::Direct, Direction::Down, None).unwrap();
        assert_eq!(c.members, set(&["B"]));
        assert!(c.cyclic);
    }

    #[test]
    fn diamond_is_not_cyclic() {
        let s = store_from(
            &[],
            &[
                edge("A", "B", EdgeKind::Direct),
                edge("A", "C", EdgeKind::Direct),
                edge("B", "D", EdgeKind::Direct),
                edge("C", "D", EdgeKind::Direct),
            ],
        );
        let c = closure(&s, &lei("A"), EdgeKind::Direct, Direction::Up, None).unwrap();
        assert!(!c.cyclic);
        assert_eq!(c.members.len(), 3);
    }

    #[test]
    fn child_stats_average() {
        let s = store_from(
            &[],
            &[
                edge("A", "P", EdgeKind::Direct),
                edge("B", "P", EdgeKind::Direct),
                edge("C", "Q", EdgeKind::Direct),
                edge("D", "Q", EdgeKind::Direct),
                edge("E", "Q", EdgeKind::Direct),
            ],
        );
        let st = child_stats(&s);
        assert_eq!(st.avg_direct, Some(2.5));
        assert_eq!(st.avg_ultimate, None);
        assert_eq!(st.histogram_direct, BTreeMap::from([(2, 1), (3, 1)]));
        let empty = store_from(&[], &[]);
        assert_eq!(child_stats(&empty).avg_direct, None);
    }

    #[test]
    fn closure_stats_count_descendants() {
        let s = chain4();
        let st = closure_child_stats(&s, EdgeKind::Direct, None);
        // D has 3 descendants, C 2, B 1
        assert_eq!(st.histogram, BTreeMap::from([(1, 1), (2, 1), (3, 1)]));
        assert_eq!(st.average, Some(2.0));
    }

    #[test]
    fn longest_chain_planted_six() {
        let tags = ["F1", "F2", "F3", "F4", "F5", "F6"];
        let mut edges: Vec<_> = tags
            .windows(2)
            .map(|w| edge(w[0], w[1], EdgeKind::Direct))
            .collect();
        edges.push(edge("X", "F3", EdgeKind::Direct));
        edges.push(edge("Y", "Z", EdgeKind::Direct));
        let s = store_from(&[], &edges);
        let chain = longest_chain(&s, EdgeKind::Direct);
        assert_eq!(chain, tags.iter().map(|t| lei(t)).collect::<Vec<_>>());
    }

    #[test]
    fn longest_chain_star_picks_smallest() {
        let edges: Vec<_> = ["C5", "C2", "C4", "C1", "C3"]
            .iter()
            .map(|c| edge(c, "P", EdgeKind::Direct))
            .collect();
        let s = store_from(&[], &edges);
        assert_eq!(
            longest_chain(&s, EdgeKind::Direct),
            vec![lei("C1"), lei("P")]
        );
        assert!(longest_chain(&store_from(&[], &[]), EdgeKind::Direct).is_empty());
    }

    #[test]
    fn longest_chain_through_cycle() {
        // T1 -> T2 -> A -> B -> C -> A
        let s = store_from(
            &[],
            &[
                edge("T1", "T2", EdgeKind::Direct),
                edge("T2", "A", EdgeKind::Direct),
                edge("A", "B", EdgeKind::Direct),
                edge("B", "C", EdgeKind::Direct),
                edge("C", "A", EdgeKind::Direct),
            ],
        );
        let chain = longest_chain(&s, EdgeKind::Direct);
        assert_eq!(
            chain,
            ["T1", "T2", "A", "B", "C"]
                .iter()
                .map(|t| lei(t))
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn discrepancy_cases() {
        let s = store_from(
            &[],
            &[
                edge("A", "B", EdgeKind::Direct),
                edge("A", "B", EdgeKind::Ultimate),
                edge("X", "Y", EdgeKind::Direct),
                edge("Y", "Z", EdgeKind::Direct),
                edge("X", "Z", EdgeKind::Ultimate),
                edge("M", "N", EdgeKind::Ultimate),
            ],
        );
        let d = ultimate_discrepancies(&s);
        let flags: Vec<(Lei, bool)> = d
            .iter()
            .map(|d| (d.child, d.reachable_via_direct))
            .collect();
        let mut expected = vec![(lei("A"), true), (lei("M"), false), (lei("X"), true)];
        expected.sort();
        assert_eq!(flags, expected);
    }

    #[test]
    fn histogram_cases() {
        let single = store_from(
            &[],
            &[
                edge("A", "B", EdgeKind::Direct),
                edge("B", "C", EdgeKind::Direct),
            ],
        );
        assert_eq!(
            chain_histogram(&single, EdgeKind::Direct),
            BTreeMap::from([(2, 1)])
        );
        let disjoint = store_from(
            &[],
            &[
                edge("A", "B", EdgeKind::Direct),
                edge("C", "D", EdgeKind::Direct),
            ],
        );
        assert_eq!(
            chain_histogram(&disjoint, EdgeKind::Direct),
            BTreeMap::from([(1, 2)])
        );
        let diamond = store_from(
            &[],
            &[
                edge("A", "B", EdgeKind::Direct),
                edge("A", "C", EdgeKind::Direct),
                edge("B", "D", EdgeKind::Direct),
                edge("C", "D", EdgeKind::Direct),
            ],
        );
        assert_eq!(
            chain_histogram(&diamond, EdgeKind::Direct),
            BTreeMap::from([(2, 2)])
        );
    }

    #[test]
    fn histogram_with_cycle() {
        // 2-cycle: both orientations are maximal 1-hop paths
        let s = store_from(
            &[],
            &[
                edge("A", "B", EdgeKind::Direct),
                edge("B", "A", EdgeKind::Direct),
            ],
        );
        assert_eq!(
            chain_histogram(&s, EdgeKind::Direct),
            BTreeMap::from([(1, 2)])
        );
    }
}
