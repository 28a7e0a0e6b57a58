//! Typed heterogeneous information network of political actors.
//!
//! Nodes belong to one of eight kinds and edges to one of five relations.
//! Every relation constrains the kinds of its endpoints. Edges are stored
//! once, in actor-to-context direction, but all neighbourhood queries treat
//! them as undirected.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "N1")]
    OfficeTerm,
    #[serde(rename = "N2")]
    Legislator,
    #[serde(rename = "N3")]
    President,
    #[serde(rename = "N4")]
    Governor,
    #[serde(rename = "N5")]
    State,
    #[serde(rename = "N6")]
    Institution,
    #[serde(rename = "N7")]
    Justice,
    #[serde(rename = "N8")]
    Party,
}

impl NodeKind {
    pub const ALL: [NodeKind; 8] = [
        NodeKind::OfficeTerm,
        NodeKind::Legislator,
        NodeKind::President,
        NodeKind::Governor,
        NodeKind::State,
        NodeKind::Institution,
        NodeKind::Justice,
        NodeKind::Party,
    ];

    pub fn code(self) -> &'static str {
        match self {
            NodeKind::OfficeTerm => "N1",
            NodeKind::Legislator => "N2",
            NodeKind::President => "N3",
            NodeKind::Governor => "N4",
            NodeKind::State => "N5",
            NodeKind::Institution => "N6",
            NodeKind::Justice => "N7",
            NodeKind::Party => "N8",
        }
    }

    /// Political actors: the kinds that carry stances.
    pub fn is_actor(self) -> bool {
        matches!(
            self,
            NodeKind::Legislator | NodeKind::President | NodeKind::Governor | NodeKind::Justice
        )
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for NodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NodeKind::ALL
            .into_iter()
            .find(|k| k.code() == s)
            .ok_or_else(|| Error::Enumeration {
                kind: "node kind",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationKind {
    #[serde(rename = "R1")]
    PartyAffiliation,
    #[serde(rename = "R2")]
    HomeState,
    #[serde(rename = "R3")]
    HoldOffice,
    #[serde(rename = "R4")]
    TimeInOffice,
    #[serde(rename = "R5")]
    Appoint,
}

impl RelationKind {
    pub const ALL: [RelationKind; 5] = [
        RelationKind::PartyAffiliation,
        RelationKind::HomeState,
        RelationKind::HoldOffice,
        RelationKind::TimeInOffice,
        RelationKind::Appoint,
    ];

    pub const COUNT: usize = 5;

    pub fn code(self) -> &'static str {
        match self {
            RelationKind::PartyAffiliation => "R1",
            RelationKind::HomeState => "R2",
            RelationKind::HoldOffice => "R3",
            RelationKind::TimeInOffice => "R4",
            RelationKind::Appoint => "R5",
        }
    }

    /// Position in [`RelationKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for RelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationKind::ALL
            .into_iter()
            .find(|r| r.code() == s)
            .ok_or_else(|| Error::Enumeration {
                kind: "relation",
                value: s.to_string(),
            })
    }
}

/// Whether an edge of relation `rel` may run from a `src` node to a `dst` node.
pub fn validate_edge(src: NodeKind, dst: NodeKind, rel: RelationKind) -> bool {
    use NodeKind::*;
    let elected = matches!(src, Legislator | President | Governor);
    let actor = elected || src == Justice;
    match rel {
        RelationKind::PartyAffiliation => elected && dst == Party,
        RelationKind::HomeState => actor && dst == State,
        RelationKind::HoldOffice => actor && dst == Institution,
        RelationKind::TimeInOffice => actor && dst == OfficeTerm,
        RelationKind::Appoint => (src == President && dst == Justice) || (src == Governor && dst == Legislator),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub name: String,
}

/// Edge between internal node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub rel: RelationKind,
}

/// Edge as written in a dataset, addressed by node id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: String,
    pub dst: String,
    pub rel: RelationKind,
}

/// Per-relation neighbour lists of one entity.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub entity: usize,
    pub by_relation: [Vec<usize>; RelationKind::COUNT],
    pub positive: Vec<usize>,
}

impl Neighborhood {
    pub fn degree(&self, rel: RelationKind) -> usize {
        self.by_relation[rel.index()].len()
    }
}

/// Immutable heterogeneous graph.
///
/// Nodes are indexed contiguously in ascending id order. Features form an
/// `n × d_in` matrix row-aligned with those indices.
#[derive(Debug, Clone)]
pub struct Hin {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
    features: Array2<f64>,
    // adjacency[r][i]: sorted neighbours of i under relation r, both directions
    adjacency: Vec<Vec<Vec<usize>>>,
}

impl Hin {
    /// Builds and validates a graph. Nothing is returned unless every record
    /// is valid; errors name the first offending record by position.
    pub fn new(nodes: Vec<Node>, edges: &[EdgeRecord], features: &BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, n) in nodes.iter().enumerate() {
            if n.id.is_empty() {
                return Err(Error::Schema(format!("nodes[{i}]: empty id")));
            }
            if !seen.insert(n.id.as_str()) {
                return Err(Error::Schema(format!("nodes[{i}]: duplicate id '{}'", n.id)));
            }
        }
        let mut nodes = nodes;
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();

        let mut stored = Vec::with_capacity(edges.len());
        let mut triples = HashSet::new();
        for (i, e) in edges.iter().enumerate() {
            let src = *index
                .get(&e.src)
                .ok_or_else(|| Error::Schema(format!("edges[{i}]: unknown source node '{}'", e.src)))?;
            let dst = *index
                .get(&e.dst)
                .ok_or_else(|| Error::Schema(format!("edges[{i}]: unknown target node '{}'", e.dst)))?;
            if src == dst {
                return Err(Error::Schema(format!("edges[{i}]: self-loop on '{}'", e.src)));
            }
            let (sk, dk) = (nodes[src].kind, nodes[dst].kind);
            if !validate_edge(sk, dk, e.rel) {
                return Err(Error::Schema(format!(
                    "edges[{i}]: {} edge '{}' ({sk}) -> '{}' ({dk}) violates relation endpoint kinds",
                    e.rel, e.src, e.dst
                )));
            }
            if !triples.insert((src, dst, e.rel)) {
                return Err(Error::Schema(format!(
                    "edges[{i}]: duplicate {} edge '{}' -> '{}'",
                    e.rel, e.src, e.dst
                )));
            }
            stored.push(Edge { src, dst, rel: e.rel });
        }

        let dim = match features.values().next() {
            Some(v) => v.len(),
            None if nodes.is_empty() => 1,
            None => return Err(Error::Schema("features: no vectors".into())),
        };
        if dim == 0 {
            return Err(Error::Schema("features: dimension must be positive".into()));
        }
        let mut matrix = Array2::zeros((nodes.len(), dim));
        for (i, n) in nodes.iter().enumerate() {
            let v = features
                .get(&n.id)
                .ok_or_else(|| Error::Schema(format!("features: missing vector for node '{}'", n.id)))?;
            if v.len() != dim {
                return Err(Error::Schema(format!(
                    "features: vector for node '{}' has length {}, expected {dim}",
                    n.id,
                    v.len()
                )));
            }
            if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::Schema(format!(
                    "features: vector for node '{}' has non-finite entry at {bad}",
                    n.id
                )));
            }
            matrix.row_mut(i).assign(&ArrayView1::from(v.as_slice()));
        }
        if let Some(extra) = features.keys().find(|k| !index.contains_key(*k)) {
            return Err(Error::Schema(format!("features: vector for unknown node '{extra}'")));
        }

        Ok(Self::assemble(nodes, index, stored, matrix))
    }

    fn assemble(nodes: Vec<Node>, index: HashMap<String, usize>, edges: Vec<Edge>, features: Array2<f64>) -> Self {
        let n = nodes.len();
        let mut adjacency = vec![vec![Vec::new(); n]; RelationKind::COUNT];
        for e in &edges {
            let r = e.rel.index();
            adjacency[r][e.src].push(e.dst);
            adjacency[r][e.dst].push(e.src);
        }
        for per_rel in &mut adjacency {
            for list in per_rel.iter_mut() {
                list.sort_unstable();
                list.dedup();
            }
        }
        Hin {
            nodes,
            index,
            edges,
            features,
            adjacency,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::Lookup(id.to_string()))
    }

    pub fn edges_by_relation(&self) -> [usize; RelationKind::COUNT] {
        let mut counts = [0; RelationKind::COUNT];
        for e in &self.edges {
            counts[e.rel.index()] += 1;
        }
        counts
    }

    /// Indices of actor nodes, ascending.
    pub fn actor_indices(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].kind.is_actor())
            .collect()
    }

    /// Neighbour indices of node `idx` under `rel`, ascending.
    pub fn neighbor_indices(&self, idx: usize, rel: RelationKind) -> &[usize] {
        &self.adjacency[rel.index()][idx]
    }

    pub fn neighbors(&self, entity: &str, rel: RelationKind) -> Result<Vec<String>> {
        let i = self.index_of(entity)?;
        Ok(self
            .neighbor_indices(i, rel)
            .iter()
            .map(|&j| self.nodes[j].id.clone())
            .collect())
    }

    /// Union of neighbours over all relations, ascending, excluding `idx`.
    pub fn positive_indices(&self, idx: usize) -> Vec<usize> {
        let mut set: BTreeSet<usize> = BTreeSet::new();
        for per_rel in &self.adjacency {
            set.extend(per_rel[idx].iter().copied());
        }
        set.remove(&idx);
        set.into_iter().collect()
    }

    pub fn positive_set(&self, entity: &str) -> Result<BTreeSet<String>> {
        let i = self.index_of(entity)?;
        Ok(self
            .positive_indices(i)
            .into_iter()
            .map(|j| self.nodes[j].id.clone())
            .collect())
    }

    pub fn neighborhood(&self, idx: usize) -> Neighborhood {
        Neighborhood {
            entity: idx,
            by_relation: std::array::from_fn(|r| self.adjacency[r][idx].clone()),
            positive: self.positive_indices(idx),
        }
    }

    /// Draws up to `k` distinct non-neighbours of `idx` uniformly without
    /// replacement.
    pub fn sample_negative_indices<R: Rng + ?Sized>(&self, idx: usize, k: usize, rng: &mut R) -> Vec<usize> {
        if k == 0 {
            return Vec::new();
        }
        let positive = self.positive_indices(idx);
        let candidates: Vec<usize> = (0..self.nodes.len())
            .filter(|&j| j != idx && positive.binary_search(&j).is_err())
            .collect();
        if candidates.len() <= k {
            return candidates;
        }
        index::sample(rng, candidates.len(), k)
            .into_iter()
            .map(|p| candidates[p])
            .collect()
    }

    pub fn sample_negatives<R: Rng + ?Sized>(&self, entity: &str, k: usize, rng: &mut R) -> Result<Vec<String>> {
        let i = self.index_of(entity)?;
        Ok(self
            .sample_negative_indices(i, k, rng)
            .into_iter()
            .map(|j| self.nodes[j].id.clone())
            .collect())
    }

    fn with_edges(&self, edges: Vec<Edge>) -> Hin {
        Hin::assemble(self.nodes.clone(), self.index.clone(), edges, self.features.clone())
    }

    /// Copy of the graph without any edge of the given relations.
    pub fn drop_relation(&self, rels: &[RelationKind]) -> Hin {
        let kept = self.edges.iter().filter(|e| !rels.contains(&e.rel)).copied().collect();
        self.with_edges(kept)
    }

    /// Copy of the graph with `⌊fraction · |edges|⌋` edges removed uniformly.
    pub fn drop_edge_fraction<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> Result<Hin> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Argument(format!("edge drop fraction {fraction} outside [0, 1]")));
        }
        let m = self.edges.len();
        let remove = ((fraction * m as f64).floor() as usize).min(m);
        let mut dropped = vec![false; m];
        for p in index::sample(rng, m, remove) {
            dropped[p] = true;
        }
        let kept = self
            .edges
            .iter()
            .zip(&dropped)
            .filter(|(_, &d)| !d)
            .map(|(e, _)| *e)
            .collect();
        Ok(self.with_edges(kept))
    }

    /// Copy of the graph with a different feature matrix.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Hin> {
        if features.nrows() != self.nodes.len() || features.ncols() == 0 {
            return Err(Error::Dimension {
                op: "with_features",
                left: (self.nodes.len(), self.feature_dim()),
                right: features.dim(),
            });
        }
        let mut h = self.clone();
        h.features = features;
        Ok(h)
    }

    /// Edges as dataset records, in stored order.
    pub fn edge_records(&self) -> Vec<EdgeRecord> {
        self.edges
            .iter()
            .map(|e| EdgeRecord {
                src: self.nodes[e.src].id.clone(),
                dst: self.nodes[e.dst].id.clone(),
                rel: e.rel,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(id: &str, kind: NodeKind) -> Node {
        Node {
            id: id.into(),
            kind,
            name: id.to_uppercase(),
        }
    }

    fn edge(src: &str, dst: &str, rel: RelationKind) -> EdgeRecord {
        EdgeRecord {
            src: src.into(),
            dst: dst.into(),
            rel,
        }
    }

    fn feats(ids: &[&str]) -> BTreeMap<String, Vec<f64>> {
        ids.iter().map(|id| (id.to_string(), vec![1.0, 0.0])).collect()
    }

    fn graph(nodes: Vec<Node>, edges: Vec<EdgeRecord>) -> Hin {
        let ids: Vec<String> = nodes.iter().map(|n| n.id.clone()).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        Hin::new(nodes, &edges, &feats(&ids)).unwrap()
    }

    /// Legislator a, party p, legislator c: path a - p - c.
    fn path() -> Hin {
        graph(
            vec![
                node("a", NodeKind::Legislator),
                node("p", NodeKind::Party),
                node("c", NodeKind::Legislator),
            ],
            vec![
                edge("a", "p", RelationKind::PartyAffiliation),
                edge("c", "p", RelationKind::PartyAffiliation),
            ],
        )
    }

    #[test]
    fn edge_constraints() {
        use NodeKind::*;
        use RelationKind::*;
        assert!(validate_edge(Legislator, Party, PartyAffiliation));
        assert!(!validate_edge(Party, Legislator, PartyAffiliation));
        assert!(validate_edge(President, Justice, Appoint));
        assert!(validate_edge(Governor, Legislator, Appoint));
        assert!(!validate_edge(Justice, Party, PartyAffiliation));
        assert!(validate_edge(Justice, State, HomeState));
        assert!(!validate_edge(Legislator, Governor, HomeState));
        assert!(validate_edge(Governor, Institution, HoldOffice));
        assert!(validate_edge(Justice, OfficeTerm, TimeInOffice));
        assert!(!validate_edge(President, Legislator, Appoint));
    }

    #[test]
    fn every_kind_pair_is_checked_exhaustively() {
        // brute force over all 8 x 8 x 5 combinations against a literal table
        use NodeKind::*;
        let table: &[(RelationKind, &[NodeKind], &[NodeKind])] = &[
            (
                RelationKind::PartyAffiliation,
                &[Legislator, President, Governor],
                &[Party],
            ),
            (
                RelationKind::HomeState,
                &[Legislator, President, Governor, Justice],
                &[State],
            ),
            (
                RelationKind::HoldOffice,
                &[Legislator, President, Governor, Justice],
                &[Institution],
            ),
            (
                RelationKind::TimeInOffice,
                &[Legislator, President, Governor, Justice],
                &[OfficeTerm],
            ),
        ];
        for s in NodeKind::ALL {
            for d in NodeKind::ALL {
                for &(rel, srcs, dsts) in table {
                    assert_eq!(validate_edge(s, d, rel), srcs.contains(&s) && dsts.contains(&d));
                }
                let appoint = (s == President && d == Justice) || (s == Governor && d == Legislator);
                assert_eq!(validate_edge(s, d, RelationKind::Appoint), appoint);
            }
        }
    }

    #[test]
    fn neighbours_are_symmetric_and_filtered() {
        let h = path();
        assert_eq!(
            h.neighbors("p", RelationKind::PartyAffiliation).unwrap(),
            vec!["a", "c"]
        );
        assert_eq!(h.neighbors("a", RelationKind::PartyAffiliation).unwrap(), vec!["p"]);
        assert!(h.neighbors("a", RelationKind::HoldOffice).unwrap().is_empty());
        assert!(matches!(
            h.neighbors("zz", RelationKind::HoldOffice),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn isolated_node_has_no_neighbours() {
        let h = graph(vec![node("x", NodeKind::State)], vec![]);
        for r in RelationKind::ALL {
            assert!(h.neighbors("x", r).unwrap().is_empty());
        }
        assert!(h.positive_set("x").unwrap().is_empty());
    }

    #[test]
    fn positive_set_is_union_over_relations() {
        let h = graph(
            vec![
                node("g", NodeKind::Governor),
                node("a", NodeKind::Legislator),
                node("t", NodeKind::OfficeTerm),
                node("b", NodeKind::Legislator),
            ],
            vec![
                edge("g", "a", RelationKind::Appoint),
                edge("a", "t", RelationKind::TimeInOffice),
                edge("g", "t", RelationKind::TimeInOffice),
                edge("b", "t", RelationKind::TimeInOffice),
            ],
        );
        let p: Vec<String> = h.positive_set("g").unwrap().into_iter().collect();
        assert_eq!(p, vec!["a", "t"]);
        let p: Vec<String> = h.positive_set("t").unwrap().into_iter().collect();
        assert_eq!(p, vec!["a", "b", "g"]);
    }

    #[test]
    fn negatives_exclude_neighbours() {
        let h = path();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(h.sample_negatives("a", 0, &mut rng).unwrap().is_empty());
        assert_eq!(h.sample_negatives("a", 5, &mut rng).unwrap(), vec!["c"]);
    }

    #[test]
    fn drop_relation_and_fraction() {
        let h = path();
        assert_eq!(h.drop_relation(&RelationKind::ALL).edge_count(), 0);
        assert_eq!(h.drop_relation(&RelationKind::ALL).node_count(), 3);
        assert_eq!(h.drop_relation(&[]).edges(), h.edges());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(h.drop_edge_fraction(0.0, &mut rng).unwrap().edges(), h.edges());
        assert_eq!(h.drop_edge_fraction(1.0, &mut rng).unwrap().edge_count(), 0);
        assert!(h.drop_edge_fraction(1.5, &mut rng).is_err());
        assert!(h.drop_edge_fraction(-0.1, &mut rng).is_err());
    }

    #[test]
    fn loader_rejects_bad_records() {
        let nodes = vec![node("a", NodeKind::Legislator), node("p", NodeKind::Party)];
        let f = feats(&["a", "p"]);
        let bad_dir = [edge("p", "a", RelationKind::PartyAffiliation)];
        let err = Hin::new(nodes.clone(), &bad_dir, &f).unwrap_err();
        assert!(err.to_string().contains("edges[0]"), "{err}");

        let dup = [
            edge("a", "p", RelationKind::PartyAffiliation),
            edge("a", "p", RelationKind::PartyAffiliation),
        ];
        let err = Hin::new(nodes.clone(), &dup, &f).unwrap_err();
        assert!(err.to_string().contains("edges[1]"), "{err}");

        let mut twice = nodes.clone();
        twice.push(node("a", NodeKind::Governor));
        let err = Hin::new(twice, &[], &f).unwrap_err();
        assert!(err.to_string().contains("nodes[2]"), "{err}");

        let mut short = f.clone();
        short.insert("p".into(), vec![1.0]);
        let err = Hin::new(nodes.clone(), &[], &short).unwrap_err();
        assert!(err.to_string().contains("'p'"), "{err}");

        let dangling = [edge("a", "q", RelationKind::PartyAffiliation)];
        assert!(Hin::new(nodes, &dangling, &f).is_err());
    }

    #[test]
    fn unknown_codes_are_enumeration_errors() {
        assert!(matches!("R9".parse::<RelationKind>(), Err(Error::Enumeration { .. })));
        assert!(matches!("N0".parse::<NodeKind>(), Err(Error::Enumeration { .. })));
        assert_eq!("N5".parse::<NodeKind>().unwrap(), NodeKind::State);
    }
}
