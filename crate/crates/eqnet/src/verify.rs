//! Self-checks run by `eqnet verify`: the direct solver against the ODE
//! oracle, and analytic gradients against finite differences.

use std::collections::BTreeMap;

use eqnet_core::equilibrium::{max_stable_dt, ode_relaxation_oracle, SolveError};
use eqnet_core::eval::relative_l1;
use eqnet_core::generators::{generate, redeem};
use eqnet_core::transformer::{Example, ModelConfig, PackedBatch, TensorFamily, TransformerParams};
use eqnet_core::{solve_equilibrium, ConcentrationVector, GeneratorConfig, MetabolicNetwork, NodeId, RngStream};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

pub const ORACLE_TOL: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OracleSummary {
    /// Graphs drawn, including skipped singular ones.
    pub graphs: usize,
    pub compared: usize,
    /// Redeemed graphs whose Laplacian is still singular (stranded nodes).
    pub singular: usize,
    pub worst_rel_l1: f64,
    pub failures: Vec<String>,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.compared > 0
    }
}

/// The graph used for the `i`-th comparison: a redeemed Erdős–Rényi network
/// with up to `n_max` internal nodes.
pub fn oracle_graph(seed: u64, n_max: usize, i: u64) -> MetabolicNetwork {
    let cfg = GeneratorConfig::default().with_nodes(1, n_max).with_edge_ratio(1.0, 4.0);
    let mut rng = RngStream::new(seed).named("verify-oracle").child(i);
    let raw = generate(&cfg, &mut rng);
    redeem(&raw, true, &mut rng)
}

/// Relative l1 gap between the direct solve and the relaxed ODE. The
/// relaxation stops once the residual falls below `1e-10` of the total
/// intake flux.
pub fn oracle_gap(net: &MetabolicNetwork, x: &ConcentrationVector) -> std::result::Result<f64, String> {
    let intake: f64 = net
        .edges()
        .iter()
        .filter(|e| e.src == NodeId::INTAKE)
        .map(|e| e.weight as f64)
        .sum();
    let dt = max_stable_dt(net).map_err(|e| e.to_string())?;
    let y = ode_relaxation_oracle(net, dt, 20_000_000, 1e-10 * intake).map_err(|e| e.to_string())?;
    Ok(relative_l1(y.values(), x.values()))
}

/// Compares solver and oracle on the first `count` oracle graphs that have a
/// unique equilibrium.
pub fn oracle_agreement(count: usize, seed: u64, n_max: usize) -> OracleSummary {
    let mut s = OracleSummary::default();
    let mut solved = Vec::with_capacity(count);
    let mut i = 0u64;
    while solved.len() < count {
        let net = oracle_graph(seed, n_max, i);
        s.graphs += 1;
        match solve_equilibrium(&net) {
            Ok(x) => solved.push((i, net, x)),
            Err(SolveError::NoUniqueEquilibrium) => s.singular += 1,
            Err(e) => s.failures.push(format!("graph {i}: {e}")),
        }
        i += 1;
    }
    let gaps: Vec<(u64, std::result::Result<f64, String>)> = solved
        .par_iter()
        .map(|(i, net, x)| (*i, oracle_gap(net, x)))
        .collect();
    for (i, g) in gaps {
        match g {
            Ok(gap) => {
                s.compared += 1;
                s.worst_rel_l1 = s.worst_rel_l1.max(gap);
                if !(gap < ORACLE_TOL) {
                    s.failures.push(format!("graph {i}: relative l1 gap {gap:e}"));
                }
            }
            Err(e) => s.failures.push(format!("graph {i}: {e}")),
        }
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GradSummary {
    /// Coordinates checked per tensor family.
    pub per_family: BTreeMap<String, usize>,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

impl GradSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn random_batch(vocab: u32, rng: &mut RngStream) -> PackedBatch {
    let examples: Vec<Example> = (0..3)
        .map(|_| {
            let ls = 3 + rng.below(4);
            let lt = 2 + rng.below(3);
            let src = (0..ls).map(|_| 3 + rng.below(vocab as usize - 3) as u32).collect();
            let tgt: Vec<u32> = (0..lt).map(|_| 3 + rng.below(vocab as usize - 3) as u32).collect();
            Example::teacher_forced(src, &tgt)
        })
        .collect();
    PackedBatch::new(&examples)
}

/// Central differences with step `1e-5` on a 1/1/16/2 model in `f64`, at
/// least `per_family` coordinates per tensor family (all of them when the
/// family is smaller).
pub fn gradient_check(seed: u64, per_family: usize) -> Result<GradSummary> {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let cfg = ModelConfig::new(1, 1, 16, 2, 12, 16);
    let mut rng = RngStream::new(seed).named("verify-grad");
    let mut params = TransformerParams::<f64>::init(&cfg, &mut rng)?;
    for (name, t) in params.tensors_mut() {
        if name.ends_with("gain") || name.ends_with("shift") || name.ends_with("bias") {
            for v in t.data_mut() {
                *v += 0.3 * (2.0 * rng.unit_f64() - 1.0);
            }
        }
    }
    let batch = random_batch(12, &mut rng);
    let (_, grad) = params.loss_and_grad(&batch, None)?;

    let mut families: BTreeMap<TensorFamily, Vec<(usize, usize)>> = BTreeMap::new();
    for (t, (name, tensor)) in params.tensors().iter().enumerate() {
        families
            .entry(TensorFamily::of(name))
            .or_default()
            .extend((0..tensor.len()).map(|i| (t, i)));
    }
    let mut s = GradSummary::default();
    for (fam, all) in families {
        let picked: Vec<(usize, usize)> = if all.len() <= per_family {
            all
        } else {
            (0..per_family).map(|_| all[rng.below(all.len())]).collect()
        };
        s.per_family.insert(format!("{fam:?}"), picked.len());
        for (t, i) in picked {
            let x = params.tensors()[t].1.data()[i];
            let mut at = |v: f64| -> Result<f64> {
                params.tensors_mut()[t].1.data_mut()[i] = v;
                let l = params.batch_loss(&batch);
                params.tensors_mut()[t].1.data_mut()[i] = x;
                Ok(l?)
            };
            let numeric = (at(x + STEP)? - at(x - STEP)?) / (2.0 * STEP);
            let analytic = grad.tensors()[t].1.data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            s.worst_rel = s.worst_rel.max(rel);
            if !(rel < GRAD_TOL) {
                s.failures.push(format!(
                    "{}[{i}]: analytic {analytic:e} numeric {numeric:e}",
                    params.tensors()[t].0
                ));
            }
        }
    }
    Ok(s)
}
