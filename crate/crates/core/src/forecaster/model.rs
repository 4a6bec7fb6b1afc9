//! End-to-end forward pass and its ablation wirings.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::{haversine_km, EpidemicWindow, LocationIndex, ModelInput};
use crate::error::{Error, Result};
use crate::graph_learning::{
    self, distance_prior, off_diagonal_mask, CandidateGraph, MultiScaleGraph, SparseMatrix,
    DEFAULT_CUTOFF_KM, DISTANCE_FLOOR_KM,
};
use crate::multiscale_gcn::{self, gcn_param_names, TransferMatrix};
use crate::params::{fan_uniform, BoundParams, ModelDims, ModelParams};
use crate::tensor::Matrix;
use crate::temporal_encoder::{self, Scale};

/// Model wiring: the full model and the four ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Learned two-scale graph with cross-scale attention fusion.
    Full,
    /// County scale only; the state level is removed.
    WoMs,
    /// Learned graphs replaced by static distance-kernel graphs.
    WGcn,
    /// Learned edge scores replaced by single-head graph attention.
    WGat,
    /// Cross-scale attention bypassed; state and county features are
    /// concatenated directly.
    WoFusion,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::WoMs,
        Variant::WGcn,
        Variant::WGat,
        Variant::WoFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoMs => "wo_ms",
            Variant::WGcn => "w_gcn",
            Variant::WGat => "w_gat",
            Variant::WoFusion => "wo_fusion",
        }
    }

    pub fn uses_macro(self) -> bool {
        self != Variant::WoMs
    }

    fn head_width(self, dims: &ModelDims) -> usize {
        if self.uses_macro() {
            2 * dims.gcn
        } else {
            dims.gcn
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Resolves a variant by name.
pub fn build_variant(name: &str) -> Result<Variant> {
    name.parse()
}

/// Static, index-derived inputs to the forward pass.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub affiliation: Vec<usize>,
    pub n_states: usize,
    pub candidates: CandidateGraph,
    /// State-to-state great-circle distances, km.
    pub state_distances: Matrix,
}

impl ModelContext {
    pub fn new(index: &LocationIndex, cutoff_km: f64) -> Result<Self> {
        index.validate()?;
        multiscale_gcn::build_transfer_matrix(index)?;
        let n = index.n_states();
        Ok(Self {
            affiliation: index.affiliation.clone(),
            n_states: n,
            candidates: CandidateGraph::build(&index.county_coords, &index.affiliation, cutoff_km),
            state_distances: Matrix::from_fn(n, n, |a, b| {
                haversine_km(index.state_coords[a], index.state_coords[b])
            }),
        })
    }

    pub fn with_default_cutoff(index: &LocationIndex) -> Result<Self> {
        Self::new(index, DEFAULT_CUTOFF_KM)
    }

    pub fn n_counties(&self) -> usize {
        self.affiliation.len()
    }
}

/// A set of counties plus every state any of them belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgraph {
    pub counties: Vec<usize>,
    pub states: Vec<usize>,
}

impl Subgraph {
    pub fn full(ctx: &ModelContext) -> Self {
        Self {
            counties: (0..ctx.n_counties()).collect(),
            states: (0..ctx.n_states).collect(),
        }
    }

    /// Induced sub-graph: sorted, deduplicated counties and their states.
    pub fn induced(ctx: &ModelContext, counties: impl IntoIterator<Item = usize>) -> Self {
        let mut counties: Vec<usize> = counties.into_iter().collect();
        counties.sort_unstable();
        counties.dedup();
        let mut states: Vec<usize> = counties.iter().map(|&c| ctx.affiliation[c]).collect();
        states.sort_unstable();
        states.dedup();
        Self { counties, states }
    }

    fn local_affiliation(&self, ctx: &ModelContext) -> Vec<usize> {
        self.counties
            .iter()
            .map(|&c| {
                self.states
                    .binary_search(&ctx.affiliation[c])
                    .expect("induced sub-graph holds every affiliated state")
            })
            .collect()
    }
}

/// Pair-score weights laid out as `[v₁, −v₁, v₂, −v₂, …]` with one block pair
/// per entry of `widths`. The initial score is then antisymmetric in (i, j),
/// so one direction of every pair of distinct locations passes the ReLU and
/// no graph starts out empty.
fn pair_scorer_init<R: Rng + ?Sized>(widths: &[usize], fan_in: usize, rng: &mut R) -> Matrix {
    let mut out = Vec::with_capacity(2 * widths.iter().sum::<usize>());
    for &w in widths {
        let v = fan_uniform(w, 1, fan_in, rng).into_vec();
        out.extend_from_slice(&v);
        out.extend(v.iter().map(|x| -x));
    }
    Matrix::column(&out)
}

/// Adds every parameter the variant uses.
pub fn init_params<R: Rng + ?Sized>(
    variant: Variant,
    dims: &ModelDims,
    n_counties: usize,
    n_states: usize,
    rng: &mut R,
) -> Result<ModelParams> {
    dims.validate()?;
    let mut p = ModelParams::new();
    temporal_encoder::init_encoder(&mut p, Scale::Micro, dims, n_counties, rng);
    if variant.uses_macro() {
        temporal_encoder::init_encoder(&mut p, Scale::Macro, dims, n_states, rng);
    }
    match variant {
        Variant::WGcn => {}
        Variant::WGat => {
            for s in [Scale::Micro, Scale::Macro] {
                let n = s.name();
                p.insert(format!("gat.{n}.w"), fan_uniform(dims.repr, dims.gat, dims.repr, rng));
                p.insert(format!("gat.{n}.a_src"), fan_uniform(dims.gat, 1, dims.gat, rng));
                p.insert(format!("gat.{n}.a_dst"), fan_uniform(dims.gat, 1, dims.gat, rng));
            }
        }
        _ => {
            let wc = 2 * dims.repr + 2 * dims.id_dim;
            p.insert("graph.theta_c", pair_scorer_init(&[dims.repr, dims.id_dim], wc, rng));
            if variant.uses_macro() {
                p.insert("graph.theta_s", pair_scorer_init(&[dims.repr], 2 * dims.repr, rng));
            }
        }
    }
    multiscale_gcn::init_gcn(&mut p, Scale::Micro, dims, rng);
    if variant.uses_macro() {
        multiscale_gcn::init_gcn(&mut p, Scale::Macro, dims, rng);
    }
    if matches!(variant, Variant::Full | Variant::WGcn | Variant::WGat) {
        multiscale_gcn::init_attention(&mut p, dims, rng);
    }
    let hw = variant.head_width(dims);
    p.insert("head.theta_f", fan_uniform(dims.horizon, hw, hw, rng));
    Ok(p)
}

/// Handles and bookkeeping from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `|counties| × L_a` forecasts.
    pub y_hat: Var,
    pub h_out: Var,
    pub e_prime: Option<Var>,
    pub a_s: Option<Var>,
    pub a_s_norm: Option<Var>,
    pub a_c: Var,
    pub a_c_norm: Var,
    pub a_c_mask: Matrix,
    /// Number of times the state-level encoder ran.
    pub macro_encoder_calls: usize,
}

/// Builds one forward pass on `tape`.
pub fn forward_on(
    tape: &mut Tape,
    p: &BoundParams,
    input: &ModelInput,
    sub: &Subgraph,
    ctx: &ModelContext,
    variant: Variant,
    dims: &ModelDims,
) -> Result<ForwardTrace> {
    let lb = dims.lookback;
    if input.lookback != lb || input.n_counties() != ctx.n_counties() || input.n_states() != ctx.n_states {
        return Err(Error::shape(
            "forward",
            format!(
                "input has {} counties / {} states / L_b={}, model expects {} / {} / {lb}",
                input.n_counties(),
                input.n_states(),
                input.lookback,
                ctx.n_counties(),
                ctx.n_states
            ),
        ));
    }
    let rows = |locs: &[usize]| -> Vec<usize> {
        locs.iter().flat_map(|&l| (l * lb)..(l * lb + lb)).collect()
    };

    // Micro encoder.
    let x_c = tape.constant(input.x_c.select_rows(&rows(&sub.counties)));
    let id_c_all = p.var(&Scale::Micro.identity_param())?;
    let ids_c = tape.gather_rows(id_c_all, sub.counties.clone())?;
    let xc = temporal_encoder::fuse_inputs(tape, p, Scale::Micro, x_c, &input.date_feats, ids_c, lb)?;
    let h_c = temporal_encoder::temporal_convolve_on(tape, p, Scale::Micro, xc, dims)?.output;

    // Macro encoder.
    let mut macro_encoder_calls = 0;
    let h_s = if variant.uses_macro() {
        macro_encoder_calls += 1;
        let x_s = tape.constant(input.x_s.select_rows(&rows(&sub.states)));
        let id_s_all = p.var(&Scale::Macro.identity_param())?;
        let ids_s = tape.gather_rows(id_s_all, sub.states.clone())?;
        let xs = temporal_encoder::fuse_inputs(tape, p, Scale::Macro, x_s, &input.date_feats, ids_s, lb)?;
        Some(temporal_encoder::temporal_convolve_on(tape, p, Scale::Macro, xs, dims)?.output)
    } else {
        None
    };

    // Graph construction.
    let (c_mask, c_prior) = ctx.candidates.dense(&sub.counties, DISTANCE_FLOOR_KM);
    let ns = sub.states.len();
    let a_c = match variant {
        Variant::WGcn => tape.constant(c_prior.clone()),
        Variant::WGat => {
            let (w, a1, a2) = gat_vars(p, Scale::Micro)?;
            graph_learning::attention_adjacency_on(tape, h_c, w, a1, a2, &c_mask)?
        }
        _ => {
            let theta_c = p.var("graph.theta_c")?;
            graph_learning::short_range_on(tape, h_c, ids_c, theta_c, c_mask.clone(), c_prior)?
        }
    };
    let a_s = match (variant, h_s) {
        (_, None) => None,
        (Variant::WGcn, Some(_)) => {
            let kernel = Matrix::from_fn(ns, ns, |a, b| {
                if a == b {
                    0.0
                } else {
                    distance_prior(ctx.state_distances[(sub.states[a], sub.states[b])], DISTANCE_FLOOR_KM)
                }
            });
            Some(tape.constant(kernel))
        }
        (Variant::WGat, Some(h)) => {
            let (w, a1, a2) = gat_vars(p, Scale::Macro)?;
            Some(graph_learning::attention_adjacency_on(tape, h, w, a1, a2, &off_diagonal_mask(ns))?)
        }
        (_, Some(h)) => {
            let theta_s = p.var("graph.theta_s")?;
            Some(graph_learning::long_range_on(tape, h, theta_s)?)
        }
    };
    let a_c_norm = graph_learning::normalize_on(tape, a_c)?;
    let a_s_norm = a_s.map(|a| graph_learning::normalize_on(tape, a)).transpose()?;

    // Scale-specific message passing.
    let (u1, u2) = gcn_param_names(Scale::Micro);
    let h_c_prime = multiscale_gcn::message_passing_on(tape, a_c_norm, h_c, p.var(u1)?, p.var(u2)?)?;
    let h_s_prime = match a_s_norm.zip(h_s) {
        Some((a, h)) => {
            let (u3, u4) = gcn_param_names(Scale::Macro);
            Some(multiscale_gcn::message_passing_on(tape, a, h, p.var(u3)?, p.var(u4)?)?)
        }
        None => None,
    };

    // Fusion.
    let local_aff = sub.local_affiliation(ctx);
    let mut e_prime = None;
    let h_out = match (variant, h_s, h_s_prime) {
        (Variant::WoMs, _, _) => h_c_prime,
        (Variant::WoFusion, _, Some(hsp)) => {
            let per_county = tape.gather_rows(hsp, local_aff)?;
            tape.concat_cols(per_county, h_c_prime)?
        }
        (_, Some(hs), Some(hsp)) => {
            let tran = TransferMatrix::from_affiliation(&local_aff, ns)?;
            let h_c_tran = multiscale_gcn::aggregate_micro_on(tape, &tran, h_c)?;
            let corr = multiscale_gcn::cross_scale_attention_on(
                tape,
                hs,
                h_c_tran,
                p.var("attn.u_a")?,
                p.var("attn.u_b")?,
                p.var("attn.beta")?,
            )?;
            let fused = multiscale_gcn::fuse_scales_on(tape, corr, hsp, h_c_prime, &local_aff)?;
            e_prime = Some(fused.e_prime);
            fused.h_out
        }
        _ => unreachable!("macro variants always produce state features"),
    };

    let theta_f = p.var("head.theta_f")?;
    let theta_t = tape.transpose(theta_f);
    let y_hat = tape.matmul(h_out, theta_t)?;
    tape.check_finite(y_hat, "forecast head")?;

    Ok(ForwardTrace {
        y_hat,
        h_out,
        e_prime,
        a_s,
        a_s_norm,
        a_c,
        a_c_norm,
        a_c_mask: c_mask,
        macro_encoder_calls,
    })
}

fn gat_vars(p: &BoundParams, scale: Scale) -> Result<(Var, Var, Var)> {
    let n = scale.name();
    Ok((
        p.var(&format!("gat.{n}.w"))?,
        p.var(&format!("gat.{n}.a_src"))?,
        p.var(&format!("gat.{n}.a_dst"))?,
    ))
}

/// Copies the learned graph out of a finished forward pass.
pub fn snapshot(tape: &Tape, trace: &ForwardTrace, sub: &Subgraph) -> MultiScaleGraph {
    let (a_s, a_s_norm) = match (trace.a_s, trace.a_s_norm) {
        (Some(a), Some(n)) => (tape.value(a).clone(), tape.value(n).clone()),
        _ => (Matrix::zeros(0, 0), Matrix::zeros(0, 0)),
    };
    MultiScaleGraph {
        counties: sub.counties.clone(),
        states: sub.states.clone(),
        a_s,
        a_s_norm,
        a_c: SparseMatrix::from_masked(tape.value(trace.a_c), &trace.a_c_mask),
        a_c_norm: SparseMatrix::from_masked(tape.value(trace.a_c_norm), &trace.a_c_mask),
    }
}

/// Inference on the full graph: `(ŷ (M × L_a), learned graph)`.
pub fn forward(
    input: &ModelInput,
    params: &ModelParams,
    ctx: &ModelContext,
    variant: Variant,
    dims: &ModelDims,
) -> Result<(Matrix, MultiScaleGraph)> {
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let sub = Subgraph::full(ctx);
    let trace = forward_on(&mut tape, &p, input, &sub, ctx, variant, dims)?;
    Ok((tape.value(trace.y_hat).clone(), snapshot(&tape, &trace, &sub)))
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

pub fn loss_on(tape: &mut Tape, y_hat: Var, y: &Matrix, kind: LossKind) -> Result<Var> {
    let target = tape.constant(y.clone());
    let diff = tape.sub(y_hat, target)?;
    Ok(match kind {
        LossKind::Mae => tape.mean_abs(diff),
        LossKind::Mse => tape.mean_square(diff),
    })
}

/// `Σ|ŷ − y| / (L_a · M)`.
pub fn loss_mae(y_hat: &Matrix, y: &Matrix) -> Result<f64> {
    if y_hat.shape() != y.shape() {
        return Err(Error::shape(
            "loss_mae",
            format!("{:?} vs {:?}", y_hat.shape(), y.shape()),
        ));
    }
    if y.is_empty() {
        return Err(Error::Domain("empty forecast".into()));
    }
    Ok(y_hat.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Loss and parameter gradients for one window on one sub-graph.
pub fn window_gradient(
    params: &ModelParams,
    window: &EpidemicWindow,
    sub: &Subgraph,
    ctx: &ModelContext,
    variant: Variant,
    dims: &ModelDims,
    loss: LossKind,
) -> Result<(f64, ModelParams)> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let trace = forward_on(&mut tape, &p, &window.input, sub, ctx, variant, dims)?;
    let y = window.y.select_rows(&sub.counties);
    let l = loss_on(&mut tape, trace.y_hat, &y, loss)?;
    let value = tape.scalar(l);
    if !value.is_finite() {
        return Err(Error::numeric("loss"));
    }
    let grads = tape.backward(l);
    Ok((value, p.gradients(params, &grads)))
}

/// Loss only (no gradient), used by finite-difference checks and validation.
pub fn window_loss(
    params: &ModelParams,
    window: &EpidemicWindow,
    sub: &Subgraph,
    ctx: &ModelContext,
    variant: Variant,
    dims: &ModelDims,
    loss: LossKind,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let trace = forward_on(&mut tape, &p, &window.input, sub, ctx, variant, dims)?;
    let y = window.y.select_rows(&sub.counties);
    let l = loss_on(&mut tape, trace.y_hat, &y, loss)?;
    Ok(tape.scalar(l))
}
