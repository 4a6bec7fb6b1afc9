//! Per-location temporal encoding.
//!
//! Raw series and date features are projected by a dense layer, the
//! location's identity embedding is appended, and the result runs through a
//! stack of doubly-residual blocks (generic basis: each block subtracts a
//! backcast of its input). The remaining residual stream is lifted to C'
//! channels and max-pooled over time.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::dataset::ModelInput;
use crate::error::{Error, Result};
use crate::params::{dense, init_dense, normal, BoundParams, ModelDims, ModelParams};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scale {
    Micro,
    Macro,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Micro => "micro",
            Scale::Macro => "macro",
        }
    }

    pub fn identity_param(self) -> String {
        format!("{}.identity", self.name())
    }
}

/// Identity embeddings I_c (M × d_id) and I_s (N × d_id) as stored in a
/// parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityEmbeddings {
    pub micro: Matrix,
    pub macro_: Matrix,
}

impl IdentityEmbeddings {
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        Ok(Self {
            micro: params.get(&Scale::Micro.identity_param())?.clone(),
            macro_: params.get(&Scale::Macro.identity_param())?.clone(),
        })
    }
}

/// Adds the encoder parameters of one scale, including `locations` identity
/// embeddings.
pub fn init_encoder<R: Rng + ?Sized>(
    params: &mut ModelParams,
    scale: Scale,
    dims: &ModelDims,
    locations: usize,
    rng: &mut R,
) {
    let s = scale.name();
    let c = dims.channels();
    let flat = dims.lookback * c;
    init_dense(params, &format!("{s}.fc"), dims.raw_channels + dims.date_features, dims.fc_out, rng);
    params.insert(scale.identity_param(), normal(locations, dims.id_dim, 0.1, rng));
    for b in 0..dims.blocks {
        let mut width = flat;
        for l in 0..dims.layers_per_block {
            init_dense(params, &format!("{s}.block{b}.l{l}"), width, dims.hidden, rng);
            width = dims.hidden;
        }
        init_dense(params, &format!("{s}.block{b}.backcast"), width, flat, rng);
    }
    init_dense(params, &format!("{s}.proj"), c, dims.repr, rng);
}

/// Input fusion: `[x ‖ d] · W + b` per day, then the identity embedding is
/// appended. `x` is `(K·L) × raw`, `ids` is `K × d_id`; the result is
/// `(K·L) × C`.
pub fn fuse_inputs(
    tape: &mut Tape,
    p: &BoundParams,
    scale: Scale,
    x: Var,
    date_feats: &Matrix,
    ids: Var,
    lookback: usize,
) -> Result<Var> {
    let (rows, _) = tape.shape(x);
    let (k, _) = tape.shape(ids);
    if rows != k * lookback || date_feats.rows() != lookback {
        return Err(Error::shape(
            "encode_inputs",
            format!("{rows} input rows for {k} locations × {lookback} days"),
        ));
    }
    let mut tiled = Matrix::zeros(rows, date_feats.cols());
    for r in 0..rows {
        tiled.row_mut(r).copy_from_slice(date_feats.row(r % lookback));
    }
    let d = tape.constant(tiled);
    let xd = tape.concat_cols(x, d)?;
    let projected = dense(tape, p, &format!("{}.fc", scale.name()), xd)?;
    let rep: Vec<usize> = (0..rows).map(|r| r / lookback).collect();
    let id_rows = tape.gather_rows(ids, rep)?;
    tape.concat_cols(projected, id_rows)
}

/// Handles produced by [`temporal_convolve_on`].
#[derive(Debug, Clone, Copy)]
pub struct EncoderTrace {
    /// `(K·L) × C'` stream immediately before pooling.
    pub pre_pool: Var,
    /// `K × C'` pooled representation.
    pub output: Var,
}

/// Doubly-residual block stack plus channel lift and max-pool over time.
pub fn temporal_convolve_on(
    tape: &mut Tape,
    p: &BoundParams,
    scale: Scale,
    x: Var,
    dims: &ModelDims,
) -> Result<EncoderTrace> {
    let s = scale.name();
    let (rows, c) = tape.shape(x);
    if c != dims.channels() || rows % dims.lookback != 0 {
        return Err(Error::shape(
            "temporal_convolve",
            format!("{rows}x{c} input for L_b={} C={}", dims.lookback, dims.channels()),
        ));
    }
    let k = rows / dims.lookback;
    let mut residual = tape.reshape(x, k, dims.lookback * c)?;
    for b in 0..dims.blocks {
        let mut h = residual;
        for l in 0..dims.layers_per_block {
            let z = dense(tape, p, &format!("{s}.block{b}.l{l}"), h)?;
            h = tape.relu(z);
        }
        let backcast = dense(tape, p, &format!("{s}.block{b}.backcast"), h)?;
        residual = tape.sub(residual, backcast)?;
        if !tape.value(residual).is_finite() {
            return Err(Error::numeric(format!("temporal encoder ({s}) block {b}")));
        }
    }
    let stream = tape.reshape(residual, rows, c)?;
    let pre_pool = dense(tape, p, &format!("{s}.proj"), stream)?;
    let output = tape.group_max_rows(pre_pool, dims.lookback)?;
    tape.check_finite(output, &format!("temporal encoder ({s}) pooling"))?;
    Ok(EncoderTrace { pre_pool, output })
}

/// Plain-matrix input fusion for both scales: returns `(X_s, X_c)`, each
/// laid out `(K·L_b) × C`.
pub fn encode_inputs(input: &ModelInput, params: &ModelParams, dims: &ModelDims) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let mut run = |scale: Scale, x: &Matrix| -> Result<Matrix> {
        let xv = tape.constant(x.clone());
        let ids = p.var(&scale.identity_param())?;
        let v = fuse_inputs(&mut tape, &p, scale, xv, &input.date_feats, ids, dims.lookback)?;
        Ok(tape.value(v).clone())
    };
    let xs = run(Scale::Macro, &input.x_s)?;
    let xc = run(Scale::Micro, &input.x_c)?;
    Ok((xs, xc))
}

/// Plain-matrix temporal convolution: `(K·L_b) × C` → `K × C'`.
pub fn temporal_convolve(x: &Matrix, params: &ModelParams, scale: Scale, dims: &ModelDims) -> Result<Matrix> {
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let trace = temporal_convolve_on(&mut tape, &p, scale, xv, dims)?;
    Ok(tape.value(trace.output).clone())
}
