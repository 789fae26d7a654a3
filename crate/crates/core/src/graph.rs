//! Metabolic networks as directed weighted graphs.
//!
//! Node `0` is the virtual intake, nodes `1..=n` are metabolites and node
//! `n + 1` is the virtual excretion. Every physical intake or excretion is an
//! edge from/to one of the two virtual nodes.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible edge weight.
pub const MIN_WEIGHT: u32 = 1;
/// Largest admissible edge weight.
pub const MAX_WEIGHT: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const INTAKE: NodeId = NodeId(0);

    pub fn excretion(n_internal: usize) -> NodeId {
        NodeId(n_internal as u32 + 1)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub weight: u32,
}

impl WeightedEdge {
    pub fn new(src: u32, dst: u32, weight: u32) -> Self {
        WeightedEdge {
            src: NodeId(src),
            dst: NodeId(dst),
            weight,
        }
    }

    fn key(&self) -> (NodeId, NodeId) {
        (self.src, self.dst)
    }
}

impl fmt::Display for WeightedEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{} (w={})", self.src.0, self.dst.0, self.weight)
    }
}

/// Edges order by `(src, dst)`; the weight never breaks ties because a network
/// holds at most one edge per ordered pair.
impl PartialOrd for WeightedEdge {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for WeightedEdge {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.key()
            .cmp(&other.key())
            .then(self.weight.cmp(&other.weight))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate edge {src}->{dst}")]
    DuplicateEdge { src: u32, dst: u32 },
    #[error("network needs at least one internal node")]
    NoInternalNodes,
    #[error("invalid network: {0}")]
    Invalid(ValidationReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    SelfLoop,
    EdgeOutOfExcretion,
    EdgeIntoIntake,
    WeightOutOfRange,
    EndpointOutOfRange,
    NoIntakeEdge,
    NoExcretionEdge,
    DirectIntakeToExcretion,
}

impl IssueKind {
    pub fn message(self) -> &'static str {
        match self {
            IssueKind::SelfLoop => "self-loop",
            IssueKind::EdgeOutOfExcretion => "edge out of excretion",
            IssueKind::EdgeIntoIntake => "edge into intake",
            IssueKind::WeightOutOfRange => "weight out of range",
            IssueKind::EndpointOutOfRange => "endpoint out of range",
            IssueKind::NoIntakeEdge => "no edge leaving intake",
            IssueKind::NoExcretionEdge => "no edge entering excretion",
            IssueKind::DirectIntakeToExcretion => "direct intake to excretion edge",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            IssueKind::DirectIntakeToExcretion => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub kind: IssueKind,
    pub edge: Option<WeightedEdge>,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind.severity() {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.edge {
            Some(e) => write!(f, "{tag}: {} at {e}", self.kind.message()),
            None => write!(f, "{tag}: {}", self.kind.message()),
        }
    }
}

/// Every violated invariant of a network. Warnings do not make a network
/// invalid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues
            .iter()
            .filter(|i| i.kind.severity() == Severity::Error)
    }

    /// Valid apart from possibly lacking intake or excretion edges. The
    /// equilibrium computations are well defined on such networks.
    pub fn is_structurally_valid(&self) -> bool {
        self.errors()
            .all(|i| matches!(i.kind, IssueKind::NoIntakeEdge | IssueKind::NoExcretionEdge))
    }

    pub fn contains(&self, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// A metabolic network. Edges are stored in canonical `(src, dst)` order and
/// never repeat an ordered pair; the remaining invariants are checked by
/// [`MetabolicNetwork::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetabolicNetwork {
    n_internal: usize,
    edges: Vec<WeightedEdge>,
}

impl MetabolicNetwork {
    pub fn new(n_internal: usize, mut edges: Vec<WeightedEdge>) -> Result<Self, GraphError> {
        if n_internal == 0 {
            return Err(GraphError::NoInternalNodes);
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(GraphError::DuplicateEdge {
                src: w[0].src.0,
                dst: w[0].dst.0,
            });
        }
        Ok(MetabolicNetwork { n_internal, edges })
    }

    /// Builds and validates in one step.
    pub fn new_valid(n_internal: usize, edges: Vec<WeightedEdge>) -> Result<Self, GraphError> {
        let net = Self::new(n_internal, edges)?;
        net.ensure_valid()?;
        Ok(net)
    }

    pub fn n_internal(&self) -> usize {
        self.n_internal
    }

    /// Total node count including the two virtual nodes.
    pub fn node_count(&self) -> usize {
        self.n_internal + 2
    }

    pub fn excretion(&self) -> NodeId {
        NodeId::excretion(self.n_internal)
    }

    pub fn edges(&self) -> &[WeightedEdge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges between internal nodes only.
    pub fn internal_edge_count(&self) -> usize {
        let exc = self.excretion();
        self.edges
            .iter()
            .filter(|e| e.src != NodeId::INTAKE && e.dst != exc)
            .count()
    }

    pub fn weight(&self, src: NodeId, dst: NodeId) -> Option<u32> {
        self.edges
            .binary_search_by(|e| e.key().cmp(&(src, dst)))
            .ok()
            .map(|k| self.edges[k].weight)
    }

    pub fn validate(&self) -> ValidationReport {
        let exc = self.excretion();
        let last = exc.0;
        let mut issues = Vec::new();
        let mut push = |kind, edge| issues.push(Issue { kind, edge });
        for e in &self.edges {
            if e.src.0 > last || e.dst.0 > last {
                push(IssueKind::EndpointOutOfRange, Some(*e));
            }
            if e.src == e.dst {
                push(IssueKind::SelfLoop, Some(*e));
            }
            if e.src == exc {
                push(IssueKind::EdgeOutOfExcretion, Some(*e));
            }
            if e.dst == NodeId::INTAKE {
                push(IssueKind::EdgeIntoIntake, Some(*e));
            }
            if !(MIN_WEIGHT..=MAX_WEIGHT).contains(&e.weight) {
                push(IssueKind::WeightOutOfRange, Some(*e));
            }
            if e.src == NodeId::INTAKE && e.dst == exc {
                push(IssueKind::DirectIntakeToExcretion, Some(*e));
            }
        }
        if !self.edges.iter().any(|e| e.src == NodeId::INTAKE) {
            push(IssueKind::NoIntakeEdge, None);
        }
        if !self.edges.iter().any(|e| e.dst == exc) {
            push(IssueKind::NoExcretionEdge, None);
        }
        ValidationReport { issues }
    }

    pub fn ensure_valid(&self) -> Result<(), GraphError> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(GraphError::Invalid(report))
        }
    }

    pub fn ensure_structurally_valid(&self) -> Result<(), GraphError> {
        let report = self.validate();
        if report.is_structurally_valid() {
            Ok(())
        } else {
            Err(GraphError::Invalid(report))
        }
    }

    /// Dense `(n+2) x (n+2)` weight matrix; row/column 0 is the intake and
    /// row/column `n+1` the excretion.
    pub fn adjacency_matrix(&self) -> Result<AdjacencyMatrix, GraphError> {
        self.ensure_valid()?;
        let size = self.node_count();
        let mut data = vec![0u32; size * size];
        for e in &self.edges {
            data[e.src.index() * size + e.dst.index()] = e.weight;
        }
        Ok(AdjacencyMatrix { size, data })
    }

    /// Edges sorted ascending by `(src, dst)`.
    pub fn canonical_edge_order(&self) -> Vec<WeightedEdge> {
        let mut edges = self.edges.clone();
        edges.sort_unstable();
        edges
    }

    /// Returns a copy with `extra` edges appended. Fails on duplicates.
    pub fn with_edges(&self, extra: &[WeightedEdge]) -> Result<Self, GraphError> {
        let mut edges = self.edges.clone();
        edges.extend_from_slice(extra);
        Self::new(self.n_internal, edges)
    }

    pub fn successors(&self) -> Adjacency {
        Adjacency::build(self.node_count(), self.edges.iter().map(|e| (e.src, e.dst)))
    }

    pub fn predecessors(&self) -> Adjacency {
        Adjacency::build(self.node_count(), self.edges.iter().map(|e| (e.dst, e.src)))
    }
}

/// Square weight matrix indexed by node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    size: usize,
    data: Vec<u32>,
}

impl AdjacencyMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, src: usize, dst: usize) -> u32 {
        self.data[src * self.size + dst]
    }

    pub fn row(&self, src: usize) -> &[u32] {
        &self.data[src * self.size..(src + 1) * self.size]
    }

    /// Nonzero entries read back as edges, in row-major order.
    pub fn to_edges(&self) -> Vec<WeightedEdge> {
        let mut out = Vec::new();
        for i in 0..self.size {
            for (j, &w) in self.row(i).iter().enumerate() {
                if w != 0 {
                    out.push(WeightedEdge::new(i as u32, j as u32, w));
                }
            }
        }
        out
    }
}

/// Compressed adjacency lists.
#[derive(Debug, Clone)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Adjacency {
    fn build(size: usize, pairs: impl Iterator<Item = (NodeId, NodeId)> + Clone) -> Self {
        let mut counts = vec![0usize; size + 1];
        for (a, _) in pairs.clone() {
            if a.index() < size {
                counts[a.index() + 1] += 1;
            }
        }
        for k in 1..=size {
            counts[k] += counts[k - 1];
        }
        let mut fill = counts.clone();
        let mut targets = vec![0u32; counts[size]];
        for (a, b) in pairs {
            if a.index() < size {
                targets[fill[a.index()]] = b.0;
                fill[a.index()] += 1;
            }
        }
        Adjacency {
            offsets: counts,
            targets,
        }
    }

    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Breadth-first reachability from `start`; out-of-range targets are
    /// ignored.
    pub fn reachable_from(&self, start: usize) -> Vec<bool> {
        let size = self.node_count();
        let mut seen = vec![false; size];
        let mut queue = VecDeque::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                let v = v as usize;
                if v < size && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn net(n: usize, edges: &[(u32, u32, u32)]) -> MetabolicNetwork {
        MetabolicNetwork::new(
            n,
            edges
                .iter()
                .map(|&(s, d, w)| WeightedEdge::new(s, d, w))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn minimal_chain_is_valid() {
        let report = net(1, &[(0, 1, 1), (1, 2, 1)]).validate();
        assert!(report.is_empty(), "{report}");
    }

    #[test]
    fn edge_into_intake_reported() {
        let report = net(1, &[(0, 1, 1), (1, 0, 1)]).validate();
        assert!(report.contains(IssueKind::EdgeIntoIntake));
        assert!(report.to_string().contains("edge into intake"));
        assert!(!report.is_valid());
    }

    #[test]
    fn weight_out_of_range_reported() {
        let report = net(1, &[(0, 1, 101)]).validate();
        assert!(report.to_string().contains("weight out of range"));
        let zero = net(1, &[(0, 1, 0), (1, 2, 1)]).validate();
        assert!(zero.contains(IssueKind::WeightOutOfRange));
    }

    #[test]
    fn structural_violations() {
        let report = net(2, &[(0, 1, 1), (1, 1, 1), (3, 2, 1), (2, 5, 1)]).validate();
        assert!(report.contains(IssueKind::SelfLoop));
        assert!(report.contains(IssueKind::EdgeOutOfExcretion));
        assert!(report.contains(IssueKind::EndpointOutOfRange));
        assert!(report.contains(IssueKind::NoExcretionEdge));
        let no_intake = net(1, &[(1, 2, 1)]).validate();
        assert!(no_intake.contains(IssueKind::NoIntakeEdge));
    }

    #[test]
    fn direct_intake_to_excretion_is_only_a_warning() {
        let report = net(1, &[(0, 1, 1), (1, 2, 1), (0, 2, 3)]).validate();
        assert!(report.contains(IssueKind::DirectIntakeToExcretion));
        assert!(report.is_valid());
    }

    #[test]
    fn duplicates_rejected_at_construction() {
        let err = MetabolicNetwork::new(
            1,
            vec![WeightedEdge::new(0, 1, 1), WeightedEdge::new(0, 1, 7)],
        )
        .unwrap_err();
        assert_eq!(err, GraphError::DuplicateEdge { src: 0, dst: 1 });
    }

    #[test]
    fn adjacency_matrix_chain() {
        let m = net(2, &[(0, 1, 5), (1, 2, 2), (2, 3, 3)])
            .adjacency_matrix()
            .unwrap();
        assert_eq!(m.size(), 4);
        for i in 0..4 {
            for j in 0..4 {
                let expected = match (i, j) {
                    (0, 1) => 5,
                    (1, 2) => 2,
                    (2, 3) => 3,
                    _ => 0,
                };
                assert_eq!(m.get(i, j), expected);
            }
        }
    }

    #[test]
    fn adjacency_matrix_single_node() {
        let m = net(1, &[(0, 1, 1), (1, 2, 1)]).adjacency_matrix().unwrap();
        assert_eq!(m.size(), 3);
        assert_eq!(m.get(0, 1), 1);
        assert_eq!(m.get(1, 2), 1);
        assert_eq!(m.to_edges().len(), 2);
        assert!((0..3).all(|i| m.get(i, i) == 0));
    }

    #[test]
    fn adjacency_matrix_rejects_invalid() {
        assert!(matches!(
            net(1, &[(0, 1, 101)]).adjacency_matrix(),
            Err(GraphError::Invalid(_))
        ));
    }

    #[test]
    fn canonical_order_sorts_and_is_idempotent() {
        let a = net(2, &[(1, 2, 1), (0, 1, 1)]);
        let once = a.canonical_edge_order();
        assert_eq!(
            once,
            vec![WeightedEdge::new(0, 1, 1), WeightedEdge::new(1, 2, 1)]
        );
        let b = net(2, &[(0, 2, 1), (0, 1, 1)]);
        assert_eq!(
            b.canonical_edge_order(),
            vec![WeightedEdge::new(0, 1, 1), WeightedEdge::new(0, 2, 1)]
        );
        let again = MetabolicNetwork::new(2, once.clone())
            .unwrap()
            .canonical_edge_order();
        assert_eq!(once, again);
    }

    #[test]
    fn reachability() {
        let n = net(3, &[(0, 1, 1), (1, 2, 1), (3, 4, 1)]);
        let fwd = n.successors().reachable_from(0);
        assert_eq!(fwd, vec![true, true, true, false, false]);
        let back = n.predecessors().reachable_from(4);
        assert_eq!(back, vec![false, false, false, true, true]);
    }
}
