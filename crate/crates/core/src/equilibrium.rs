//! Classical equilibrium computations for linear metabolite dynamics
//! `dx/dt = J1 x + phi v0`.
//!
//! Existence is decided topologically (every node reachable from the intake
//! must reach the excretion). The concentrations come from one dense solve of
//! the grounded Laplacian system. [`ode_relaxation_oracle`] integrates the
//! dynamics directly and exists to cross-check the solver.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use thiserror::Error;

use crate::graph::{GraphError, MetabolicNetwork, NodeId};

/// Pivots smaller than this in magnitude make a system singular.
pub const PIVOT_EPS: f64 = 1e-10;
/// Solved concentrations in `(-CLAMP_EPS, 0)` are clamped to zero.
pub const CLAMP_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("matrix is singular (pivot below {PIVOT_EPS:e})")]
    Singular,
    #[error("dimension mismatch: matrix is {rows}x{cols}, right-hand side has {rhs}")]
    Dimension { rows: usize, cols: usize, rhs: usize },
    #[error("no unique equilibrium: the grounded Laplacian is singular")]
    NoUniqueEquilibrium,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("time step {dt} exceeds the explicit Euler bound {bound}")]
    StepTooLarge { dt: f64, bound: f64 },
    #[error("relaxation did not settle after {steps} steps (residual {residual:e})")]
    Diverged { steps: usize, residual: f64 },
}

/// Row-major dense real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `J1` and the intake flux vector `phi` of the linear dynamics.
///
/// `J1[i][j]` (0-based over internal nodes) is the weight of edge
/// `j+1 -> i+1` off the diagonal and minus the total outflow of node `i+1`
/// (excretion edges included) on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedLaplacian {
    pub j1: DenseMatrix,
    pub phi: Vec<f64>,
    pub v0_level: f64,
}

impl GroundedLaplacian {
    /// `J1 x + phi v0`.
    pub fn rate(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.j1.mul_vec(x);
        for (ri, p) in r.iter_mut().zip(&self.phi) {
            *ri += p * self.v0_level;
        }
        r
    }
}

/// `x_e` at internal nodes `1..=n`, indexed from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationVector(pub Vec<f64>);

impl ConcentrationVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }
}

/// True iff every internal node reachable from the intake has a directed
/// path to the excretion node.
pub fn has_equilibrium(network: &MetabolicNetwork) -> Result<bool, GraphError> {
    network.ensure_structurally_valid()?;
    let from_intake = network.successors().reachable_from(NodeId::INTAKE.index());
    let to_excretion = network
        .predecessors()
        .reachable_from(network.excretion().index());
    Ok((1..=network.n_internal()).all(|i| !from_intake[i] || to_excretion[i]))
}

/// Builds `J1` from the intake-removed adjacency matrix: `A` over nodes
/// `1..=n+1`, `M = A - diag(row sums of A)`, drop the excretion row and
/// column, transpose.
pub fn grounded_laplacian(network: &MetabolicNetwork) -> Result<GroundedLaplacian, GraphError> {
    network.ensure_structurally_valid()?;
    let n = network.n_internal();
    let exc = network.excretion();
    let size = n + 1;
    let mut a = DenseMatrix::zeros(size, size);
    let mut phi = vec![0.0; n];
    for e in network.edges() {
        if e.src == NodeId::INTAKE {
            if e.dst != exc {
                phi[e.dst.index() - 1] = e.weight as f64;
            }
            continue;
        }
        a[(e.src.index() - 1, e.dst.index() - 1)] = e.weight as f64;
    }
    let mut m = a.clone();
    for i in 0..size {
        let row_sum: f64 = (0..size).map(|j| a[(i, j)]).sum();
        m[(i, i)] -= row_sum;
    }
    let mut j1 = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            j1[(i, j)] = m[(j, i)];
        }
    }
    Ok(GroundedLaplacian {
        j1,
        phi,
        v0_level: 1.0,
    })
}

/// Solves `m x = b` by Gaussian elimination with partial pivoting.
pub fn linear_solve(m: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, SolveError> {
    let n = m.rows();
    if m.cols() != n || b.len() != n {
        return Err(SolveError::Dimension {
            rows: m.rows(),
            cols: m.cols(),
            rhs: b.len(),
        });
    }
    let mut a = m.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[(r, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(pivot >= PIVOT_EPS) {
            return Err(SolveError::Singular);
        }
        if pivot_row != col {
            for j in 0..n {
                a.data.swap(col * n + j, pivot_row * n + j);
            }
            x.swap(col, pivot_row);
        }
        let diag = a[(col, col)];
        for r in col + 1..n {
            let factor = a[(r, col)] / diag;
            if factor == 0.0 {
                continue;
            }
            a[(r, col)] = 0.0;
            for j in col + 1..n {
                a[(r, j)] -= factor * a[(col, j)];
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        let tail: f64 = (col + 1..n).map(|j| a[(col, j)] * x[j]).sum();
        x[col] = (x[col] - tail) / a[(col, col)];
    }
    Ok(x)
}

/// `x_e = -J1^{-1} phi v0`, with tiny negative round-off clamped to zero.
pub fn solve_equilibrium(network: &MetabolicNetwork) -> Result<ConcentrationVector, SolveError> {
    let lap = grounded_laplacian(network)?;
    let rhs: Vec<f64> = lap.phi.iter().map(|p| -p * lap.v0_level).collect();
    let mut x = match linear_solve(&lap.j1, &rhs) {
        Ok(x) => x,
        Err(SolveError::Singular) => return Err(SolveError::NoUniqueEquilibrium),
        Err(e) => return Err(e),
    };
    for v in &mut x {
        if *v < 0.0 && *v > -CLAMP_EPS {
            *v = 0.0;
        }
    }
    Ok(ConcentrationVector(x))
}

/// Largest stable explicit Euler step for this network, `0.5 / max |J1_ii|`.
pub fn max_stable_dt(network: &MetabolicNetwork) -> Result<f64, GraphError> {
    let lap = grounded_laplacian(network)?;
    let worst = (0..lap.j1.rows())
        .map(|i| lap.j1[(i, i)].abs())
        .fold(0.0, f64::max);
    Ok(if worst == 0.0 { 0.5 } else { 0.5 / worst })
}

/// Forward-Euler relaxation of `dx/dt = J1 x + phi v0` from `x = 0` until
/// `||dx||_1 < tol * dt`. Never used on production paths.
pub fn ode_relaxation_oracle(
    network: &MetabolicNetwork,
    dt: f64,
    max_steps: usize,
    tol: f64,
) -> Result<ConcentrationVector, OracleError> {
    let bound = max_stable_dt(network)?;
    if dt > bound * (1.0 + 1e-12) {
        return Err(OracleError::StepTooLarge { dt, bound });
    }
    let n = network.n_internal();
    let exc = network.excretion();
    // sparse form of J1: diagonal outflow plus transfers src -> dst
    let mut outflow = vec![0.0; n];
    let mut transfers: Vec<(usize, usize, f64)> = Vec::new();
    let mut phi = vec![0.0; n];
    for e in network.edges() {
        let w = e.weight as f64;
        if e.src == NodeId::INTAKE {
            if e.dst != exc {
                phi[e.dst.index() - 1] += w;
            }
            continue;
        }
        let s = e.src.index() - 1;
        outflow[s] += w;
        if e.dst != exc {
            transfers.push((s, e.dst.index() - 1, w));
        }
    }
    let mut x = vec![0.0; n];
    let mut rate = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_steps {
        for i in 0..n {
            rate[i] = phi[i] - outflow[i] * x[i];
        }
        for &(s, d, w) in &transfers {
            rate[d] += w * x[s];
        }
        residual = rate.iter().map(|r| r.abs()).sum::<f64>();
        if !residual.is_finite() {
            break;
        }
        if residual * dt < tol * dt {
            return Ok(ConcentrationVector(x));
        }
        for i in 0..n {
            x[i] += dt * rate[i];
        }
    }
    Err(OracleError::Diverged {
        steps: max_steps,
        residual,
    })
}

/// Internal nodes unreachable from the intake that also have no path to the
/// excretion. These make `J1` singular without affecting the existence
/// criterion.
pub fn stranded_nodes(network: &MetabolicNetwork) -> Vec<usize> {
    let from_intake = network.successors().reachable_from(NodeId::INTAKE.index());
    let to_excretion = network
        .predecessors()
        .reachable_from(network.excretion().index());
    (1..=network.n_internal())
        .filter(|&i| !from_intake[i] && !to_excretion[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightedEdge;

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

    fn chain() -> MetabolicNetwork {
        net(2, &[(0, 1, 5), (1, 2, 2), (2, 3, 3)])
    }

    fn outlet_free_cycle() -> MetabolicNetwork {
        net(2, &[(0, 1, 1), (1, 2, 1), (2, 1, 1)])
    }

    #[test]
    fn existence_examples() {
        assert!(has_equilibrium(&net(2, &[(0, 1, 1), (1, 2, 1), (2, 3, 1)])).unwrap());
        assert!(!has_equilibrium(&outlet_free_cycle()).unwrap());
        // node 2 is not fed by the intake
        assert!(has_equilibrium(&net(2, &[(0, 1, 1), (1, 3, 1)])).unwrap());
    }

    #[test]
    fn existence_rejects_structurally_invalid() {
        assert!(has_equilibrium(&net(1, &[(0, 1, 1), (1, 0, 1), (1, 2, 1)])).is_err());
    }

    #[test]
    fn grounded_laplacian_chain() {
        let lap = grounded_laplacian(&chain()).unwrap();
        assert_eq!(lap.j1, DenseMatrix::from_rows(&[&[-2.0, 0.0], &[2.0, -3.0]]));
        assert_eq!(lap.phi, vec![5.0, 0.0]);
        assert_eq!(lap.v0_level, 1.0);
    }

    #[test]
    fn grounded_laplacian_single_node() {
        let lap = grounded_laplacian(&net(1, &[(0, 1, 1), (1, 2, 2)])).unwrap();
        assert_eq!(lap.j1, DenseMatrix::from_rows(&[&[-2.0]]));
        assert_eq!(lap.phi, vec![1.0]);
    }

    #[test]
    fn metzler_structure() {
        let n = net(
            3,
            &[(0, 1, 4), (1, 2, 7), (2, 1, 3), (2, 3, 9), (3, 4, 2), (1, 4, 5)],
        );
        let lap = grounded_laplacian(&n).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert!(lap.j1[(i, j)] <= 0.0);
                } else {
                    assert!(lap.j1[(i, j)] >= 0.0);
                }
            }
            let col: f64 = (0..3).map(|r| lap.j1[(r, i)]).sum();
            assert!(col <= 0.0);
        }
    }

    #[test]
    fn linear_solve_examples() {
        assert_eq!(
            linear_solve(&DenseMatrix::identity(2), &[3.0, 4.0]).unwrap(),
            vec![3.0, 4.0]
        );
        let m = DenseMatrix::from_rows(&[&[-2.0, 0.0], &[2.0, -3.0]]);
        let x = linear_solve(&m, &[-5.0, 0.0]).unwrap();
        assert!((x[0] - 2.5).abs() < 1e-14);
        assert!((x[1] - 5.0 / 3.0).abs() < 1e-14);
        assert_eq!(
            linear_solve(&DenseMatrix::zeros(2, 2), &[1.0, 1.0]),
            Err(SolveError::Singular)
        );
        assert!(matches!(
            linear_solve(&DenseMatrix::zeros(2, 3), &[1.0, 1.0]),
            Err(SolveError::Dimension { .. })
        ));
    }

    #[test]
    fn linear_solve_needs_pivoting() {
        let m = DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(linear_solve(&m, &[2.0, 3.0]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn solve_examples() {
        let x = solve_equilibrium(&net(1, &[(0, 1, 1), (1, 2, 2)])).unwrap();
        assert_eq!(x.0, vec![0.5]);
        let x = solve_equilibrium(&chain()).unwrap();
        assert!((x.0[0] - 2.5).abs() < 1e-12);
        assert!((x.0[1] - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            solve_equilibrium(&outlet_free_cycle()),
            Err(SolveError::NoUniqueEquilibrium)
        );
    }

    #[test]
    fn scaling_intake_scales_solution() {
        let base = net(3, &[(0, 1, 3), (0, 3, 2), (1, 2, 4), (2, 1, 1), (2, 4, 5), (3, 2, 6)]);
        let doubled = net(3, &[(0, 1, 6), (0, 3, 4), (1, 2, 4), (2, 1, 1), (2, 4, 5), (3, 2, 6)]);
        let a = solve_equilibrium(&base).unwrap();
        let b = solve_equilibrium(&doubled).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn oracle_single_node() {
        let n = net(1, &[(0, 1, 1), (1, 2, 2)]);
        let x = ode_relaxation_oracle(&n, 0.1, 100_000, 1e-10).unwrap();
        assert!((x.0[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn oracle_chain_matches_hand_solution() {
        let n = chain();
        let dt = max_stable_dt(&n).unwrap();
        let x = ode_relaxation_oracle(&n, dt, 1_000_000, 1e-12).unwrap();
        assert!((x.0[0] - 2.5).abs() < 1e-9);
        assert!((x.0[1] - 5.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn oracle_diverges_without_outlet() {
        let n = outlet_free_cycle();
        let dt = max_stable_dt(&n).unwrap();
        assert!(matches!(
            ode_relaxation_oracle(&n, dt, 50_000, 1e-10),
            Err(OracleError::Diverged { .. })
        ));
    }

    #[test]
    fn oracle_rejects_unstable_step() {
        assert!(matches!(
            ode_relaxation_oracle(&chain(), 1.0, 10, 1e-10),
            Err(OracleError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn stranded_nodes_detected() {
        // node 2 neither fed nor drained
        let n = net(2, &[(0, 1, 1), (1, 3, 1)]);
        assert_eq!(stranded_nodes(&n), vec![2]);
        assert!(has_equilibrium(&n).unwrap());
        assert_eq!(solve_equilibrium(&n), Err(SolveError::NoUniqueEquilibrium));
    }
}
