//! Learned two-scale graph construction.
//!
//! * Long-range (state) edges: `ReLU(θ_sᵀ [H_l ‖ H_k])` for every ordered
//!   pair of distinct states.
//! * Short-range (county) edges: `ReLU(θ_cᵀ [H_i ‖ H_j ‖ I_i ‖ I_j]) +
//!   1/√max(δ_ij, ε)` on candidate pairs (within a distance cutoff or in the
//!   same state), zero elsewhere.
//! * Normalisation: drop the diagonal, symmetrise, then `D^{-1/2} Â D^{-1/2}`.
//!
//! Scores are separable, `θᵀ[H_i ‖ H_j] = p_i + q_j`, so a score matrix is an
//! outer sum of two projections rather than a loop over pairs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::haversine_km;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_CUTOFF_KM: f64 = 500.0;
pub const DISTANCE_FLOOR_KM: f64 = 1.0;

/// Distance prior `1/√max(δ, ε)`.
pub fn distance_prior(km: f64, floor: f64) -> f64 {
    1.0 / km.max(floor).sqrt()
}

/// Symmetric set of admissible county pairs with their great-circle
/// distances. Self pairs are never candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGraph {
    n: usize,
    dist: HashMap<(usize, usize), f64>,
    neighbors: Vec<Vec<usize>>,
}

fn key(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

impl CandidateGraph {
    /// Pairs within `cutoff_km` of each other or sharing a group (state).
    pub fn build(coords: &[(f64, f64)], groups: &[usize], cutoff_km: f64) -> Self {
        let n = coords.len();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let d = haversine_km(coords[i], coords[j]);
                if d <= cutoff_km || groups[i] == groups[j] {
                    pairs.push((i, j, d));
                }
            }
        }
        Self::from_distances(n, pairs)
    }

    /// Every distinct pair is a candidate.
    pub fn complete(coords: &[(f64, f64)]) -> Self {
        Self::build(coords, &vec![0; coords.len()], f64::INFINITY)
    }

    fn from_distances(n: usize, pairs: Vec<(usize, usize, f64)>) -> Self {
        let mut dist = HashMap::with_capacity(pairs.len());
        let mut neighbors = vec![Vec::new(); n];
        for (i, j, d) in pairs {
            if i == j {
                continue;
            }
            if dist.insert(key(i, j), d).is_none() {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
        neighbors.iter_mut().for_each(|v| v.sort_unstable());
        Self { n, dist, neighbors }
    }

    /// Explicit candidate list; every pair must have a distance.
    pub fn from_pairs(
        n: usize,
        pairs: &[(usize, usize)],
        distances: &HashMap<(usize, usize), f64>,
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::Index(format!("pair ({i}, {j}) outside {n} counties")));
            }
            let d = distances
                .get(&(i, j))
                .or_else(|| distances.get(&(j, i)))
                .copied()
                .ok_or_else(|| Error::Index(format!("no distance for pair ({i}, {j})")))?;
            out.push((i, j, d));
        }
        Ok(Self::from_distances(n, out))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pair_count(&self) -> usize {
        self.dist.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> Option<f64> {
        self.dist.get(&key(i, j)).copied()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Dense `(mask, prior)` on the principal sub-graph `subset`.
    pub fn dense(&self, subset: &[usize], floor_km: f64) -> (Matrix, Matrix) {
        let k = subset.len();
        let mut mask = Matrix::zeros(k, k);
        let mut prior = Matrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                if let Some(d) = (a != b).then(|| self.distance(subset[a], subset[b])).flatten() {
                    mask[(a, b)] = 1.0;
                    prior[(a, b)] = distance_prior(d, floor_km);
                }
            }
        }
        (mask, prior)
    }
}

pub fn off_diagonal_mask(k: usize) -> Matrix {
    Matrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { 1.0 })
}

/// `θᵀ[x_i ‖ x_j]` as an outer sum; `theta` is `2F × 1` for `x` of width `F`.
fn pair_scores(tape: &mut Tape, x: Var, theta: Var) -> Result<Var> {
    let (_, f) = tape.shape(x);
    if tape.shape(theta) != (2 * f, 1) {
        return Err(Error::shape(
            "pair_scores",
            format!("theta {:?} for features of width {f}", tape.shape(theta)),
        ));
    }
    let head = tape.gather_rows(theta, (0..f).collect())?;
    let tail = tape.gather_rows(theta, (f..2 * f).collect())?;
    let p = tape.matmul(x, head)?;
    let q = tape.matmul(x, tail)?;
    tape.outer_sum(p, q)
}

/// State-level adjacency `A_s` (N × N), zero diagonal.
pub fn long_range_on(tape: &mut Tape, h_s: Var, theta_s: Var) -> Result<Var> {
    let (n, _) = tape.shape(h_s);
    let scores = pair_scores(tape, h_s, theta_s)?;
    let a = tape.relu(scores);
    let a = tape.mul_const(a, off_diagonal_mask(n))?;
    tape.check_finite(a, "long-range adjacency")?;
    Ok(a)
}

/// County-level adjacency `A_c` (M × M) for the sub-graph described by
/// `mask`/`prior` (see [`CandidateGraph::dense`]).
///
/// `theta_c` is ordered as `[H_i ‖ H_j ‖ I_i ‖ I_j]`.
pub fn short_range_on(
    tape: &mut Tape,
    h_c: Var,
    ids: Var,
    theta_c: Var,
    mask: Matrix,
    prior: Matrix,
) -> Result<Var> {
    let (m, c) = tape.shape(h_c);
    let (_, d) = tape.shape(ids);
    if tape.shape(theta_c) != (2 * c + 2 * d, 1) {
        return Err(Error::shape(
            "short_range_adjacency",
            format!("theta_c {:?}, expected {}x1", tape.shape(theta_c), 2 * c + 2 * d),
        ));
    }
    // Reorder θ to [H_i ‖ I_i ‖ H_j ‖ I_j] so the score splits over [H ‖ I].
    let order: Vec<usize> = (0..c)
        .chain(2 * c..2 * c + d)
        .chain(c..2 * c)
        .chain(2 * c + d..2 * c + 2 * d)
        .collect();
    let theta = tape.gather_rows(theta_c, order)?;
    let x = tape.concat_cols(h_c, ids)?;
    let scores = pair_scores(tape, x, theta)?;
    let learned = tape.relu(scores);
    let learned = tape.mul_const(learned, mask)?;
    let prior = tape.constant(prior);
    let a = tape.add(learned, prior)?;
    if tape.shape(a) != (m, m) {
        return Err(Error::shape("short_range_adjacency", "mask/prior size"));
    }
    tape.check_finite(a, "short-range adjacency")?;
    Ok(a)
}

/// Single-head graph attention coefficients over `mask`:
/// `softmax_j LeakyReLU(a_srcᵀ W h_i + a_dstᵀ W h_j)`.
pub fn attention_adjacency_on(
    tape: &mut Tape,
    h: Var,
    w: Var,
    a_src: Var,
    a_dst: Var,
    mask: &Matrix,
) -> Result<Var> {
    let z = tape.matmul(h, w)?;
    let p = tape.matmul(z, a_src)?;
    let q = tape.matmul(z, a_dst)?;
    let e = tape.outer_sum(p, q)?;
    let e = tape.leaky_relu(e, 0.2);
    let a = tape.softmax_rows(e, Some(mask))?;
    tape.check_finite(a, "attention adjacency")?;
    Ok(a)
}

/// `Ã = D̂^{-1/2} Â D̂^{-1/2}` with `Â` the symmetrised, diagonal-free input.
pub fn normalize_on(tape: &mut Tape, a: Var) -> Result<Var> {
    let (k, k2) = tape.shape(a);
    if k != k2 {
        return Err(Error::shape("normalize_adjacency", format!("{k}x{k2}")));
    }
    let hat = tape.mul_const(a, off_diagonal_mask(k))?;
    let hat_t = tape.transpose(hat);
    let sum = tape.add(hat, hat_t)?;
    let sym = tape.scale(sum, 0.5);
    let degree = tape.row_sum(sym);
    let inv = tape.inv_sqrt(degree);
    let left = tape.scale_rows(sym, inv)?;
    let out = tape.scale_cols(left, inv)?;
    tape.check_finite(out, "adjacency normalization")?;
    Ok(out)
}

/// Plain-matrix long-range adjacency.
pub fn long_range_adjacency(h_s: &Matrix, theta_s: &[f64]) -> Result<Matrix> {
    let mut tape = Tape::new();
    let h = tape.constant(h_s.clone());
    let t = tape.constant(Matrix::column(theta_s));
    let a = long_range_on(&mut tape, h, t)?;
    Ok(tape.value(a).clone())
}

/// Plain-matrix short-range adjacency over the full candidate graph.
pub fn short_range_adjacency(
    h_c: &Matrix,
    ids: &Matrix,
    theta_c: &[f64],
    candidates: &CandidateGraph,
) -> Result<Matrix> {
    if candidates.n() != h_c.rows() {
        return Err(Error::Index(format!(
            "candidate graph over {} counties, representations for {}",
            candidates.n(),
            h_c.rows()
        )));
    }
    let all: Vec<usize> = (0..h_c.rows()).collect();
    let (mask, prior) = candidates.dense(&all, DISTANCE_FLOOR_KM);
    let mut tape = Tape::new();
    let h = tape.constant(h_c.clone());
    let i = tape.constant(ids.clone());
    let t = tape.constant(Matrix::column(theta_c));
    let a = short_range_on(&mut tape, h, i, t, mask, prior)?;
    Ok(tape.value(a).clone())
}

pub fn normalize_adjacency(a: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let v = tape.constant(a.clone());
    let n = normalize_on(&mut tape, v)?;
    Ok(tape.value(n).clone())
}

/// Sparse `(row, col, weight)` triplets of a square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    /// Keeps the entries of `dense` where `mask` is nonzero.
    pub fn from_masked(dense: &Matrix, mask: &Matrix) -> Self {
        let mut entries = Vec::new();
        for i in 0..dense.rows() {
            for j in 0..dense.cols() {
                if mask[(i, j)] != 0.0 {
                    entries.push((i, j, dense[(i, j)]));
                }
            }
        }
        Self {
            n: dense.rows(),
            entries,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for &(i, j, w) in &self.entries {
            m[(i, j)] = w;
        }
        m
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.2)
    }
}

/// Learned graph for one forward pass, kept for interpretability export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiScaleGraph {
    /// Positions (in the location index) of the counties in this graph.
    pub counties: Vec<usize>,
    pub states: Vec<usize>,
    /// Dense state adjacency; empty (0×0) when the variant has no macro scale.
    pub a_s: Matrix,
    pub a_s_norm: Matrix,
    /// County adjacency restricted to candidate pairs.
    pub a_c: SparseMatrix,
    pub a_c_norm: SparseMatrix,
}

/// Summary of edge weights for one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub mean: f64,
    pub p95: f64,
    pub nnz: usize,
}

impl EdgeStats {
    /// Mean, nearest-rank 95th percentile, and count of positive weights.
    pub fn of(weights: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut w: Vec<f64> = weights.into_iter().collect();
        if w.is_empty() {
            return None;
        }
        w.sort_by(f64::total_cmp);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let rank = ((0.95 * w.len() as f64).ceil() as usize).clamp(1, w.len());
        Some(Self {
            mean,
            p95: w[rank - 1],
            nnz: w.iter().filter(|&&x| x > 0.0).count(),
        })
    }
}

impl MultiScaleGraph {
    /// Statistics over the off-diagonal state edges.
    pub fn macro_stats(&self) -> Option<EdgeStats> {
        let n = self.a_s.rows();
        EdgeStats::of((0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|e| self.a_s[e]))
    }

    /// Statistics over the candidate county edges.
    pub fn micro_stats(&self) -> Option<EdgeStats> {
        EdgeStats::of(self.a_c.weights())
    }
}
