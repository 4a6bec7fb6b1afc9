//! Named parameter tensors and model dimensions.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Layer sizes shared by every component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    /// Look-back days L_b.
    pub lookback: usize,
    /// Forecast horizon in weeks L_a.
    pub horizon: usize,
    pub raw_channels: usize,
    pub date_features: usize,
    /// Output width of the input projection before the identity embedding
    /// is appended; the encoder's channel count is `fc_out + id_dim`.
    pub fc_out: usize,
    pub id_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub layers_per_block: usize,
    /// Node representation width C'.
    pub repr: usize,
    /// Graph convolution width C''.
    pub gcn: usize,
    /// Cross-scale attention width.
    pub attn: usize,
    /// Projection width of the graph-attention ablation.
    pub gat: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            lookback: 14,
            horizon: 3,
            raw_channels: crate::dataset::RAW_CHANNELS,
            date_features: crate::dataset::calendar::DATE_FEATURES,
            fc_out: 4,
            id_dim: 4,
            hidden: 64,
            blocks: 2,
            layers_per_block: 2,
            repr: 32,
            gcn: 64,
            attn: 16,
            gat: 16,
        }
    }
}

impl ModelDims {
    /// Encoder channel count C.
    pub fn channels(&self) -> usize {
        self.fc_out + self.id_dim
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.lookback,
            self.horizon,
            self.raw_channels,
            self.fc_out,
            self.id_dim,
            self.hidden,
            self.layers_per_block,
            self.repr,
            self.gcn,
            self.attn,
            self.gat,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config(format!("zero-sized dimension in {self:?}")));
        }
        Ok(())
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        match self.names.iter().position(|n| *n == name) {
            Some(i) => self.tensors[i] = value,
            None => {
                self.names.push(name);
                self.tensors.push(value);
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
        Ok(&mut self.tensors[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    /// `self += other * s`; both sets must share names and shapes.
    pub fn axpy(&mut self, s: f64, other: &ModelParams) {
        debug_assert_eq!(self.names, other.names);
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += s * y;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale_in_place(s));
    }

    /// Registers every tensor as a parameter leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .iter()
            .map(|(n, t)| (n.to_string(), tape.param(t.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Registers every tensor as a constant on `tape` (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .iter()
            .map(|(n, t)| (n.to_string(), tape.constant(t.clone())))
            .collect();
        BoundParams { vars }
    }
}

/// Tape handles for a [`ModelParams`] set.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: HashMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    /// Collects gradients into a parameter-shaped set (zeros where a tensor
    /// did not influence the output).
    pub fn gradients(
        &self,
        params: &ModelParams,
        grads: &crate::autodiff::Gradients,
    ) -> ModelParams {
        let mut out = params.zeros_like();
        for (name, t) in out.iter_mut() {
            if let Some(g) = self.vars.get(name).and_then(|&v| grads.get(v)) {
                *t = g.clone();
            }
        }
        out
    }
}

/// Dense-layer initialisation: uniform in ±1/√fan_in.
pub fn fan_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

pub fn normal<R: Rng + ?Sized>(rows: usize, cols: usize, sigma: f64, rng: &mut R) -> Matrix {
    let dist = Normal::new(0.0, sigma).expect("positive sigma");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

/// Adds `prefix.w` (`fan_in × fan_out`) and `prefix.b` (`1 × fan_out`).
pub fn init_dense<R: Rng + ?Sized>(
    params: &mut ModelParams,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) {
    params.insert(format!("{prefix}.w"), fan_uniform(fan_in, fan_out, fan_in, rng));
    params.insert(format!("{prefix}.b"), fan_uniform(1, fan_out, fan_in, rng));
}

/// `x · w + b` using `prefix.w` / `prefix.b`.
pub fn dense(tape: &mut Tape, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{prefix}.w"))?;
    let b = p.var(&format!("{prefix}.b"))?;
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}
