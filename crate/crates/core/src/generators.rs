//! Random metabolic network generators.
//!
//! Three internal-graph models are available (Erdős-Rényi `G(n,p)`, a directed
//! Watts-Strogatz small world, and a directed preferential-attachment scale
//! free model). Each is completed with random intake/excretion edges by
//! [`attach_io`]. [`redeem`] repairs graphs without an equilibrium by wiring
//! dead-end nodes to the excretion node.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::has_equilibrium;
use crate::graph::{MetabolicNetwork, NodeId, WeightedEdge, MAX_WEIGHT, MIN_WEIGHT};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    ErdosRenyi,
    SmallWorld,
    ScaleFree,
}

impl GraphKind {
    pub const ALL: [GraphKind; 3] = [
        GraphKind::ErdosRenyi,
        GraphKind::SmallWorld,
        GraphKind::ScaleFree,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GraphKind::ErdosRenyi => "erdos-renyi",
            GraphKind::SmallWorld => "small-world",
            GraphKind::ScaleFree => "scale-free",
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GraphKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "erdos-renyi" | "er" => Ok(GraphKind::ErdosRenyi),
            "small-world" | "sw" => Ok(GraphKind::SmallWorld),
            "scale-free" | "sf" => Ok(GraphKind::ScaleFree),
            _ => Err(ConfigError::UnknownKind),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("node range must satisfy 1 <= n_min <= n_max")]
    NodeRange,
    #[error("edge ratio range must satisfy 0 < min <= max")]
    EdgeRatio,
    #[error("probability `{0}` must lie in [0, 1]")]
    Probability(&'static str),
    #[error("unknown generator kind")]
    UnknownKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub edge_ratio_min: f64,
    pub edge_ratio_max: f64,
    pub kind: GraphKind,
    pub weighted: bool,
    /// Per-node probability of an intake edge (and, independently, of an
    /// excretion edge). At least one of each is always forced.
    pub io_attach_prob: f64,
    /// Target degree exponent of the scale-free model. The growth process
    /// does not consume it; it records intent in dataset metadata.
    pub scale_free_gamma: f64,
    pub small_world_rewire_prob: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_min: 8,
            n_max: 32,
            edge_ratio_min: 2.0,
            edge_ratio_max: 4.0,
            kind: GraphKind::ErdosRenyi,
            weighted: true,
            io_attach_prob: 0.0,
            scale_free_gamma: 2.1,
            small_world_rewire_prob: 0.1,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_min < 1 || self.n_min > self.n_max {
            return Err(ConfigError::NodeRange);
        }
        if !(self.edge_ratio_min > 0.0 && self.edge_ratio_min <= self.edge_ratio_max) {
            return Err(ConfigError::EdgeRatio);
        }
        let probs = [
            ("io_attach_prob", self.io_attach_prob),
            ("small_world_rewire_prob", self.small_world_rewire_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Probability(name));
            }
        }
        Ok(())
    }

    pub fn with_nodes(mut self, n_min: usize, n_max: usize) -> Self {
        self.n_min = n_min;
        self.n_max = n_max;
        self
    }

    pub fn with_edge_ratio(mut self, lo: f64, hi: f64) -> Self {
        self.edge_ratio_min = lo;
        self.edge_ratio_max = hi;
        self
    }

    pub fn with_kind(mut self, kind: GraphKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_weighted(mut self, weighted: bool) -> Self {
        self.weighted = weighted;
        self
    }

    fn draw_weight(&self, rng: &mut RngStream) -> u32 {
        draw_weight(self.weighted, rng)
    }

    /// Draws `(n, e)`: `n` uniform on the node range, `e` uniform on
    /// `[ceil(ratio_min * n), floor(ratio_max * n)]`.
    pub fn draw_size(&self, rng: &mut RngStream) -> (usize, usize) {
        let n = rng.range_inclusive(self.n_min as u64, self.n_max as u64) as usize;
        let lo = libm::ceil(self.edge_ratio_min * n as f64).max(1.0) as u64;
        let hi = (libm::floor(self.edge_ratio_max * n as f64) as u64).max(lo);
        let e = rng.range_inclusive(lo, hi) as usize;
        (n, e)
    }
}

fn draw_weight(weighted: bool, rng: &mut RngStream) -> u32 {
    if weighted {
        rng.range_inclusive(MIN_WEIGHT as u64, MAX_WEIGHT as u64) as u32
    } else {
        1
    }
}

/// Internal edges on nodes `1..=n` before intake/excretion are attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InternalGraph {
    pub n: usize,
    pub edges: Vec<WeightedEdge>,
}

impl InternalGraph {
    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n + 1];
        for e in &self.edges {
            d[e.src.index()] += 1;
        }
        d
    }
}

/// Generates a complete network of the configured kind.
pub fn generate(config: &GeneratorConfig, rng: &mut RngStream) -> MetabolicNetwork {
    match config.kind {
        GraphKind::ErdosRenyi => gen_erdos_renyi(config, rng),
        GraphKind::SmallWorld => gen_small_world(config, rng),
        GraphKind::ScaleFree => gen_scale_free(config, rng),
    }
}

pub fn gen_erdos_renyi(config: &GeneratorConfig, rng: &mut RngStream) -> MetabolicNetwork {
    let internal = erdos_renyi_internal(config, rng);
    attach_io(&internal, config, rng)
}

/// `G(n, p)` on the internal nodes with `p = e / (n^2 - n)`, capped at one.
/// Draws with no internal edge are resampled when `n >= 2`.
pub fn erdos_renyi_internal(config: &GeneratorConfig, rng: &mut RngStream) -> InternalGraph {
    loop {
        let (n, e) = config.draw_size(rng);
        let pairs = n * n - n;
        let p = if pairs == 0 {
            0.0
        } else {
            (e as f64 / pairs as f64).min(1.0)
        };
        let mut edges = Vec::new();
        for i in 1..=n as u32 {
            for j in 1..=n as u32 {
                if i != j && rng.bernoulli(p) {
                    edges.push(WeightedEdge::new(i, j, 0));
                }
            }
        }
        if edges.is_empty() && n >= 2 {
            continue;
        }
        for edge in &mut edges {
            edge.weight = config.draw_weight(rng);
        }
        return InternalGraph { n, edges };
    }
}

pub fn gen_small_world(config: &GeneratorConfig, rng: &mut RngStream) -> MetabolicNetwork {
    let internal = small_world_internal(config, rng);
    attach_io(&internal, config, rng)
}

/// Directed ring lattice with `k = round(e/n)` clockwise successors per node;
/// each edge's destination is rewired with probability `beta` to a uniform
/// target that is neither the source nor an existing successor.
pub fn small_world_internal(config: &GeneratorConfig, rng: &mut RngStream) -> InternalGraph {
    let (n, e) = config.draw_size(rng);
    if n < 2 {
        return InternalGraph { n, edges: Vec::new() };
    }
    let k = libm::round(e as f64 / n as f64).clamp(1.0, (n - 1) as f64) as usize;
    let beta = config.small_world_rewire_prob;
    // successors[i] for ring position i (node id i + 1)
    let mut successors: Vec<Vec<usize>> = (0..n)
        .map(|i| (1..=k).map(|d| (i + d) % n).collect())
        .collect();
    for i in 0..n {
        for slot in 0..k {
            if !rng.bernoulli(beta) {
                continue;
            }
            let taken = &successors[i];
            let free: Vec<usize> = (0..n)
                .filter(|&t| t != i && !taken.contains(&t))
                .collect();
            if free.is_empty() {
                continue;
            }
            let target = free[rng.below(free.len())];
            successors[i][slot] = target;
        }
    }
    let mut edges = Vec::with_capacity(n * k);
    for (i, succ) in successors.iter().enumerate() {
        for &t in succ {
            edges.push(WeightedEdge::new(i as u32 + 1, t as u32 + 1, 0));
        }
    }
    edges.sort_unstable();
    for edge in &mut edges {
        edge.weight = config.draw_weight(rng);
    }
    InternalGraph { n, edges }
}

pub fn gen_scale_free(config: &GeneratorConfig, rng: &mut RngStream) -> MetabolicNetwork {
    let internal = scale_free_internal(config, rng);
    attach_io(&internal, config, rng)
}

/// Picks an index with probability proportional to `weights[i]`, skipping
/// indices for which `exclude` holds. Returns `None` if nothing is eligible.
fn weighted_pick(
    weights: &[usize],
    rng: &mut RngStream,
    exclude: impl Fn(usize) -> bool,
) -> Option<usize> {
    let total: usize = weights
        .iter()
        .enumerate()
        .filter(|(i, _)| !exclude(*i))
        .map(|(_, w)| *w)
        .sum();
    if total == 0 {
        return None;
    }
    let mut ticket = rng.below(total);
    for (i, &w) in weights.iter().enumerate() {
        if exclude(i) {
            continue;
        }
        if ticket < w {
            return Some(i);
        }
        ticket -= w;
    }
    None
}

/// Preferential-attachment growth. Starts from a directed cycle on
/// `min(n, 3)` nodes; each new node alternately emits an edge to a target
/// drawn with weight `in_degree + 1` and receives one from a source drawn with
/// weight `out_degree + 1`, `m = round((e - seed_edges) / (n - seed_nodes))`
/// times.
pub fn scale_free_internal(config: &GeneratorConfig, rng: &mut RngStream) -> InternalGraph {
    let (n, e) = config.draw_size(rng);
    let seed_nodes = n.min(3);
    let mut adjacency = vec![false; n * n];
    let mut in_deg = vec![0usize; n];
    let mut out_deg = vec![0usize; n];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut add = |s: usize, t: usize,
                   adjacency: &mut Vec<bool>,
                   in_deg: &mut Vec<usize>,
                   out_deg: &mut Vec<usize>| {
        if s != t && !adjacency[s * n + t] {
            adjacency[s * n + t] = true;
            out_deg[s] += 1;
            in_deg[t] += 1;
            pairs.push((s, t));
            true
        } else {
            false
        }
    };
    if seed_nodes == 2 {
        add(0, 1, &mut adjacency, &mut in_deg, &mut out_deg);
        add(1, 0, &mut adjacency, &mut in_deg, &mut out_deg);
    } else if seed_nodes == 3 {
        for i in 0..3 {
            add(i, (i + 1) % 3, &mut adjacency, &mut in_deg, &mut out_deg);
        }
    }
    let grown = n - seed_nodes;
    if grown > 0 {
        let seed_edges = if seed_nodes == 3 { 3 } else { 0 };
        let m = libm::round(e.saturating_sub(seed_edges) as f64 / grown as f64).max(1.0) as usize;
        for v in seed_nodes..n {
            let mut attractiveness = vec![0usize; v];
            for j in 0..m {
                // nodes 0..v exist; v itself is new
                let outgoing = j % 2 == 0;
                for _attempt in 0..4 {
                    let picked = if outgoing {
                        for (i, a) in attractiveness.iter_mut().enumerate() {
                            *a = in_deg[i] + 1;
                        }
                        weighted_pick(&attractiveness, rng, |t| adjacency[v * n + t])
                    } else {
                        for (i, a) in attractiveness.iter_mut().enumerate() {
                            *a = out_deg[i] + 1;
                        }
                        weighted_pick(&attractiveness, rng, |s| adjacency[s * n + v])
                    };
                    let Some(other) = picked else { break };
                    let (s, t) = if outgoing { (v, other) } else { (other, v) };
                    if add(s, t, &mut adjacency, &mut in_deg, &mut out_deg) {
                        break;
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    let edges = pairs
        .into_iter()
        .map(|(s, t)| WeightedEdge::new(s as u32 + 1, t as u32 + 1, config.draw_weight(rng)))
        .collect();
    InternalGraph { n, edges }
}

/// Adds intake edges `0 -> i` and excretion edges `i -> n+1`, each present
/// independently with probability `io_attach_prob`. If a side ends up empty,
/// one edge is forced on a uniformly chosen node.
pub fn attach_io(
    internal: &InternalGraph,
    config: &GeneratorConfig,
    rng: &mut RngStream,
) -> MetabolicNetwork {
    let n = internal.n;
    let q = config.io_attach_prob;
    let exc = NodeId::excretion(n).0;
    let mut intake: Vec<u32> = (1..=n as u32).filter(|_| rng.bernoulli(q)).collect();
    let mut excretion: Vec<u32> = (1..=n as u32).filter(|_| rng.bernoulli(q)).collect();
    if intake.is_empty() {
        intake.push(rng.below(n) as u32 + 1);
    }
    if excretion.is_empty() {
        excretion.push(rng.below(n) as u32 + 1);
    }
    let mut edges = internal.edges.clone();
    for i in intake {
        edges.push(WeightedEdge::new(0, i, config.draw_weight(rng)));
    }
    for i in excretion {
        edges.push(WeightedEdge::new(i, exc, config.draw_weight(rng)));
    }
    MetabolicNetwork::new(n, edges).expect("generated edges are unique")
}

/// Adds edges `i -> n+1` from uniformly chosen internal nodes with no path to
/// the excretion node until the network has an equilibrium. Networks that
/// already have one are returned unchanged.
pub fn redeem(network: &MetabolicNetwork, weighted: bool, rng: &mut RngStream) -> MetabolicNetwork {
    let mut current = network.clone();
    let exc = current.excretion();
    while !has_equilibrium(&current).unwrap_or(false) {
        let reaches = current.predecessors().reachable_from(exc.index());
        let stuck: Vec<u32> = (1..=current.n_internal() as u32)
            .filter(|&i| !reaches[i as usize])
            .collect();
        if stuck.is_empty() {
            // has_equilibrium can only fail on invalid input here
            break;
        }
        let node = stuck[rng.below(stuck.len())];
        let edge = WeightedEdge::new(node, exc.0, draw_weight(weighted, rng));
        current = current
            .with_edges(&[edge])
            .expect("stuck node has no excretion edge");
    }
    current
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub network: MetabolicNetwork,
    pub label: bool,
    pub redeemed: bool,
}

/// Generates a raw network and, if it has no equilibrium, redeems it with
/// probability `redeem_prob`. The label is the equilibrium criterion on the
/// final network.
pub fn sample_with_label(
    config: &GeneratorConfig,
    redeem_prob: f64,
    rng: &mut RngStream,
) -> LabeledSample {
    let raw = generate(config, rng);
    let raw_label = has_equilibrium(&raw).unwrap_or(false);
    let try_redeem = rng.bernoulli(redeem_prob);
    if !raw_label && try_redeem {
        let network = redeem(&raw, config.weighted, rng);
        LabeledSample {
            label: has_equilibrium(&network).unwrap_or(false),
            network,
            redeemed: true,
        }
    } else {
        LabeledSample {
            network: raw,
            label: raw_label,
            redeemed: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, lo: f64, hi: f64) -> GeneratorConfig {
        GeneratorConfig::default()
            .with_nodes(n, n)
            .with_edge_ratio(lo, hi)
    }

    #[test]
    fn config_validation() {
        assert!(GeneratorConfig::default().validate().is_ok());
        assert_eq!(
            cfg(0, 2.0, 4.0).validate(),
            Err(ConfigError::NodeRange)
        );
        assert_eq!(
            GeneratorConfig::default().with_nodes(5, 4).validate(),
            Err(ConfigError::NodeRange)
        );
        assert_eq!(cfg(5, 0.0, 4.0).validate(), Err(ConfigError::EdgeRatio));
        assert_eq!(cfg(5, 3.0, 2.0).validate(), Err(ConfigError::EdgeRatio));
        let mut bad = cfg(5, 2.0, 4.0);
        bad.io_attach_prob = 1.5;
        assert!(matches!(bad.validate(), Err(ConfigError::Probability(_))));
    }

    #[test]
    fn kind_parses_both_spellings() {
        assert_eq!("scale_free".parse::<GraphKind>(), Ok(GraphKind::ScaleFree));
        assert_eq!("erdos-renyi".parse::<GraphKind>(), Ok(GraphKind::ErdosRenyi));
        assert!("grid".parse::<GraphKind>().is_err());
    }

    #[test]
    fn erdos_renyi_p_one_keeps_all_pairs() {
        let config = cfg(2, 1.0, 1.0);
        let mut rng = RngStream::new(11);
        let net = gen_erdos_renyi(&config, &mut rng);
        assert!(net.weight(NodeId(1), NodeId(2)).is_some());
        assert!(net.weight(NodeId(2), NodeId(1)).is_some());
    }

    #[test]
    fn erdos_renyi_is_deterministic() {
        let config = GeneratorConfig::default();
        let a = gen_erdos_renyi(&config, &mut RngStream::new(5));
        let b = gen_erdos_renyi(&config, &mut RngStream::new(5));
        assert_eq!(a, b);
    }

    #[test]
    fn small_world_without_rewiring_is_a_ring_lattice() {
        let mut config = cfg(6, 2.0, 2.0).with_kind(GraphKind::SmallWorld);
        config.small_world_rewire_prob = 0.0;
        let internal = small_world_internal(&config, &mut RngStream::new(1));
        assert_eq!(internal.n, 6);
        for i in 1..=6u32 {
            let succ: Vec<u32> = internal
                .edges
                .iter()
                .filter(|e| e.src.0 == i)
                .map(|e| e.dst.0)
                .collect();
            let mut expected = vec![i % 6 + 1, (i + 1) % 6 + 1];
            expected.sort_unstable();
            assert_eq!(succ, expected, "node {i}");
        }
    }

    #[test]
    fn scale_free_minimum_seed_graph() {
        let config = cfg(3, 1.0, 1.0).with_kind(GraphKind::ScaleFree);
        let net = gen_scale_free(&config, &mut RngStream::new(2));
        assert!(net.validate().is_valid());
        let internal = scale_free_internal(&config, &mut RngStream::new(2));
        let mut degree = [0usize; 4];
        for e in &internal.edges {
            degree[e.src.index()] += 1;
            degree[e.dst.index()] += 1;
        }
        assert!(degree[1..].iter().all(|&d| d >= 1));
    }

    #[test]
    fn attach_io_probability_one() {
        let mut config = cfg(3, 1.0, 1.0);
        config.io_attach_prob = 1.0;
        let internal = InternalGraph {
            n: 3,
            edges: vec![WeightedEdge::new(1, 2, 1)],
        };
        let net = attach_io(&internal, &config, &mut RngStream::new(0));
        for i in 1..=3 {
            assert!(net.weight(NodeId(0), NodeId(i)).is_some());
            assert!(net.weight(NodeId(i), NodeId(4)).is_some());
        }
    }

    #[test]
    fn attach_io_probability_zero_forces_one_each() {
        let mut config = cfg(5, 1.0, 1.0);
        config.io_attach_prob = 0.0;
        for seed in 0..50 {
            let internal = erdos_renyi_internal(&config, &mut RngStream::new(seed));
            let net = attach_io(&internal, &config, &mut RngStream::new(seed));
            let intake = net.edges().iter().filter(|e| e.src == NodeId::INTAKE).count();
            let exc = net.edges().iter().filter(|e| e.dst == net.excretion()).count();
            assert_eq!((intake, exc), (1, 1));
            assert!(net.validate().is_valid());
        }
    }

    #[test]
    fn unweighted_forces_unit_weights() {
        let config = GeneratorConfig::default().with_weighted(false);
        let net = generate(&config, &mut RngStream::new(9));
        assert!(net.edges().iter().all(|e| e.weight == 1));
    }

    #[test]
    fn redeem_fixed_point() {
        let net = MetabolicNetwork::new(
            2,
            vec![
                WeightedEdge::new(0, 1, 1),
                WeightedEdge::new(1, 2, 1),
                WeightedEdge::new(2, 3, 1),
            ],
        )
        .unwrap();
        assert_eq!(redeem(&net, true, &mut RngStream::new(0)), net);
    }

    #[test]
    fn redeem_outlet_free_cycle() {
        // excretion has no edges at all, so validity is not required here
        let net = MetabolicNetwork::new(
            2,
            vec![
                WeightedEdge::new(0, 1, 1),
                WeightedEdge::new(1, 2, 1),
                WeightedEdge::new(2, 1, 1),
            ],
        )
        .unwrap();
        let fixed = redeem(&net, true, &mut RngStream::new(0));
        assert!(fixed.edges().iter().any(|e| e.dst == NodeId(3)));
        assert!(has_equilibrium(&fixed).unwrap());
        for e in net.edges() {
            assert!(fixed.edges().contains(e));
        }
    }

    #[test]
    fn sample_with_label_redeem_one_always_true() {
        let config = GeneratorConfig::default().with_nodes(20, 30);
        let mut rng = RngStream::new(4);
        for _ in 0..200 {
            let s = sample_with_label(&config, 1.0, &mut rng);
            assert!(s.label);
        }
    }
}
