//! Optimisation loop, early stopping and seed averaging.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{
    forward, init_params, window_gradient, window_loss, LossKind, ModelContext, Subgraph, Variant,
};
use super::sampler::sample_subgraph;
use crate::dataset::{
    anchor_days, make_windows, windows_at, EpidemicPanel, EpidemicWindow, LocationIndex, ModelInput,
    WindowSpec,
};
use crate::error::{Error, Result};
use crate::graph_learning::{MultiScaleGraph, SparseMatrix, DEFAULT_CUTOFF_KM};
use crate::params::{ModelDims, ModelParams};
use crate::parallel;
use crate::tensor::Matrix;

/// Which parameters a seed run hands back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Parameters from the epoch with the lowest validation MAE.
    #[default]
    BestValidation,
    /// Parameters after the final epoch.
    Last,
}

/// Which days may anchor a training window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Every day with a complete look-back and target span.
    #[default]
    Daily,
    /// Only the forecast weekday (Sunday).
    Weekly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub lr: f64,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub walk_length: usize,
    pub roots_per_batch: usize,
    /// Graphs with at most this many counties are trained on in full;
    /// larger ones use random-walk sub-graphs.
    pub full_graph_max_counties: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Most recent weekly-anchored windows held out for early stopping.
    pub validation_windows: usize,
    pub training_anchors: AnchorMode,
    pub grad_clip: f64,
    pub loss: LossKind,
    pub transform: Transform,
    pub selection: Selection,
    pub cutoff_km: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            lr: 1e-3,
            batch_size: 4,
            seeds: vec![0, 1, 2],
            walk_length: 8,
            roots_per_batch: 4,
            full_graph_max_counties: 256,
            patience: 20,
            max_epochs: 200,
            validation_windows: 4,
            training_anchors: AnchorMode::Daily,
            grad_clip: 5.0,
            loss: LossKind::Mae,
            transform: Transform::Log1p,
            selection: Selection::BestValidation,
            cutoff_km: DEFAULT_CUTOFF_KM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.roots_per_batch == 0 || self.max_epochs == 0 {
            return bad("batch_size, roots_per_batch and max_epochs must be ≥ 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if !(self.grad_clip > 0.0) || !(self.cutoff_km > 0.0) {
            return bad("grad_clip and cutoff_km must be positive");
        }
        if self.validation_windows == 0 && self.selection == Selection::BestValidation {
            return bad("best-validation selection needs validation_windows ≥ 1");
        }
        Ok(())
    }
}

/// Value transform applied before the network sees inputs and targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Divide by the per-channel scale.
    Linear,
    /// `ln(1 + max(v, 0))` in panel units; the scales are unused.
    #[default]
    Log1p,
}

/// Per-channel scales plus a value transform, fitted on training windows,
/// so the network sees values of order one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub transform: Transform,
    pub confirmed: f64,
    pub deaths: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            transform: Transform::Linear,
            confirmed: 1.0,
            deaths: 1.0,
        }
    }
}

impl Normalizer {
    /// Scales are the mean absolute daily county value of each channel
    /// across the windows' look-back spans.
    pub fn fit(windows: &[EpidemicWindow], transform: Transform) -> Self {
        let mut sums = [0.0; 2];
        let mut n = 0usize;
        for w in windows {
            for r in 0..w.input.x_c.rows() {
                let row = w.input.x_c.row(r);
                sums[0] += row[0].abs();
                sums[1] += row[1].abs();
            }
            n += w.input.x_c.rows();
        }
        let pick = |s: f64| {
            let m = if n == 0 { 0.0 } else { s / n as f64 };
            if m.is_finite() && m > 0.0 {
                m
            } else {
                1.0
            }
        };
        Self {
            transform,
            confirmed: pick(sums[0]),
            deaths: pick(sums[1]),
        }
    }

    fn forward(&self, v: f64, scale: f64) -> f64 {
        match self.transform {
            Transform::Linear => v / scale,
            Transform::Log1p => v.max(0.0).ln_1p(),
        }
    }

    pub fn input(&self, input: &ModelInput) -> ModelInput {
        let apply = |m: &Matrix| {
            let mut out = m.clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                row[0] = self.forward(row[0], self.confirmed);
                row[1] = self.forward(row[1], self.deaths);
            }
            out
        };
        ModelInput {
            x_c: apply(&input.x_c),
            x_s: apply(&input.x_s),
            ..input.clone()
        }
    }

    /// Weekly targets are sums of seven days, so they share the daily
    /// scale multiplied by seven.
    pub fn targets(&self, y: &Matrix) -> Matrix {
        y.map(|v| self.forward(v, 7.0 * self.confirmed))
    }

    pub fn window(&self, w: &EpidemicWindow) -> EpidemicWindow {
        EpidemicWindow {
            input: self.input(&w.input),
            y: self.targets(&w.y),
        }
    }

    pub fn restore_targets(&self, y: &Matrix) -> Matrix {
        match self.transform {
            Transform::Linear => y.map(|v| v * 7.0 * self.confirmed),
            Transform::Log1p => y.map(f64::exp_m1),
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let tensors = params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
            let p = p.as_mut_slice();
            let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
            for (k, &gk) in g.as_slice().iter().enumerate() {
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub seed: u64,
    pub epoch: usize,
    /// Mean mini-batch loss in normalised units.
    pub train_loss: f64,
    /// Validation MAE in normalised units (NaN without validation windows).
    pub val_mae: f64,
    /// Pre-clip gradient norm of the epoch's last step.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    /// One JSON object per line.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub params: ModelParams,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub log: Vec<EpochRecord>,
}

/// Seed-averaged forecaster.
#[derive(Debug, Clone)]
pub struct EnsemblePredictor {
    pub variant: Variant,
    pub dims: ModelDims,
    pub normalizer: Normalizer,
    pub ctx: ModelContext,
    pub members: Vec<ModelParams>,
}

impl EnsemblePredictor {
    /// Per-member `M × L_a` forecasts in panel units.
    pub fn member_forecasts(&self, input: &ModelInput) -> Result<Vec<Matrix>> {
        let scaled = self.normalizer.input(input);
        self.members
            .iter()
            .map(|p| {
                let (y, _) = forward(&scaled, p, &self.ctx, self.variant, &self.dims)?;
                Ok(self.normalizer.restore_targets(&y))
            })
            .collect()
    }

    /// Mean of the member forecasts, panel units, unclamped.
    pub fn forecast(&self, input: &ModelInput) -> Result<Matrix> {
        let all = self.member_forecasts(input)?;
        Ok(mean_matrices(&all))
    }

    /// Learned graph averaged over members.
    pub fn graph(&self, input: &ModelInput) -> Result<MultiScaleGraph> {
        let scaled = self.normalizer.input(input);
        let graphs = self
            .members
            .iter()
            .map(|p| forward(&scaled, p, &self.ctx, self.variant, &self.dims).map(|(_, g)| g))
            .collect::<Result<Vec<_>>>()?;
        Ok(mean_graph(graphs))
    }

    /// Forecast MAE over `windows` in panel units.
    pub fn mae(&self, windows: &[EpidemicWindow]) -> Result<f64> {
        let per = parallel::map(windows, |w| {
            let y = self.forecast(&w.input)?;
            super::model::loss_mae(&y, &w.y)
        });
        let per = per.into_iter().collect::<Result<Vec<_>>>()?;
        if per.is_empty() {
            return Err(Error::Domain("no windows to score".into()));
        }
        Ok(per.iter().sum::<f64>() / per.len() as f64)
    }
}

fn mean_matrices(all: &[Matrix]) -> Matrix {
    let mut acc = Matrix::zeros(all[0].rows(), all[0].cols());
    for m in all {
        acc.add_assign(m);
    }
    acc.scale_in_place(1.0 / all.len() as f64);
    acc
}

fn mean_sparse(all: &[SparseMatrix]) -> SparseMatrix {
    let mut out = all[0].clone();
    for (k, e) in out.entries.iter_mut().enumerate() {
        e.2 = all.iter().map(|s| s.entries[k].2).sum::<f64>() / all.len() as f64;
    }
    out
}

fn mean_graph(graphs: Vec<MultiScaleGraph>) -> MultiScaleGraph {
    if graphs.len() == 1 {
        return graphs.into_iter().next().expect("one graph");
    }
    let pick = |f: fn(&MultiScaleGraph) -> &Matrix| {
        mean_matrices(&graphs.iter().map(|g| f(g).clone()).collect::<Vec<_>>())
    };
    let a_s = pick(|g| &g.a_s);
    let a_s_norm = pick(|g| &g.a_s_norm);
    let a_c = mean_sparse(&graphs.iter().map(|g| g.a_c.clone()).collect::<Vec<_>>());
    let a_c_norm = mean_sparse(&graphs.iter().map(|g| g.a_c_norm.clone()).collect::<Vec<_>>());
    MultiScaleGraph {
        counties: graphs[0].counties.clone(),
        states: graphs[0].states.clone(),
        a_s,
        a_s_norm,
        a_c,
        a_c_norm,
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub runs: Vec<SeedRun>,
    pub predictor: EnsemblePredictor,
    pub log: TrainingLog,
}

fn window_spec(dims: &ModelDims) -> WindowSpec {
    WindowSpec {
        lookback: dims.lookback,
        horizon_weeks: dims.horizon,
        ..WindowSpec::default()
    }
}

/// Splits `panel` into training and validation windows. Validation is the
/// last `validation_windows` weekly anchors; training windows are anchored
/// strictly before the first of them.
pub fn split_windows(
    panel: &EpidemicPanel,
    index: &LocationIndex,
    dims: &ModelDims,
    config: &TrainConfig,
) -> Result<(Vec<EpidemicWindow>, Vec<EpidemicWindow>)> {
    let spec = window_spec(dims);
    let weekly = make_windows(panel, index, spec)?;
    if weekly.len() <= config.validation_windows {
        return Err(Error::Config(format!(
            "panel of {} days yields {} weekly windows; {} are needed for validation plus at least one for training",
            panel.n_dates(),
            weekly.len(),
            config.validation_windows + 1
        )));
    }
    let val = weekly[weekly.len() - config.validation_windows..].to_vec();
    let cutoff = val.first().map_or(usize::MAX, |w| w.input.anchor_index);
    let train = match config.training_anchors {
        AnchorMode::Weekly => weekly[..weekly.len() - config.validation_windows].to_vec(),
        AnchorMode::Daily => {
            let days: Vec<usize> = anchor_days(panel, spec).into_iter().filter(|&d| d < cutoff).collect();
            windows_at(panel, &days, spec)?
        }
    };
    Ok((train, val))
}

/// [`split_windows`] then [`train_split`].
pub fn train(
    panel: &EpidemicPanel,
    index: &LocationIndex,
    dims: &ModelDims,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let (train_set, val_set) = split_windows(panel, index, dims, config)?;
    train_split(&train_set, &val_set, index, dims, config)
}

/// Trains one model per seed on `train_set`, early-stopping on `val_set`.
pub fn train_split(
    train_set: &[EpidemicWindow],
    val_set: &[EpidemicWindow],
    index: &LocationIndex,
    dims: &ModelDims,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    dims.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    if val_set.is_empty() && config.selection == Selection::BestValidation {
        return Err(Error::Config("best-validation selection needs validation windows".into()));
    }
    let ctx = ModelContext::new(index, config.cutoff_km)?;
    let normalizer = Normalizer::fit(train_set, config.transform);
    let train_set: Vec<EpidemicWindow> = train_set.iter().map(|w| normalizer.window(w)).collect();
    let val_set: Vec<EpidemicWindow> = val_set.iter().map(|w| normalizer.window(w)).collect();

    let runs = parallel::map(&config.seeds, |&seed| {
        train_seed(seed, &train_set, &val_set, &ctx, dims, config)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let log = TrainingLog {
        records: runs.iter().flat_map(|r| r.log.iter().copied()).collect(),
    };
    let predictor = EnsemblePredictor {
        variant: config.variant,
        dims: *dims,
        normalizer,
        ctx,
        members: runs.iter().map(|r| r.params.clone()).collect(),
    };
    Ok(TrainOutcome { runs, predictor, log })
}

fn diverged(err: Error, epoch: usize, step: usize) -> Error {
    match err {
        Error::Numeric { .. } => Error::Diverged {
            epoch,
            step,
            loss: f64::NAN,
        },
        other => other,
    }
}

fn train_seed(
    seed: u64,
    train_set: &[EpidemicWindow],
    val_set: &[EpidemicWindow],
    ctx: &ModelContext,
    dims: &ModelDims,
    config: &TrainConfig,
) -> Result<SeedRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(config.variant, dims, ctx.n_counties(), ctx.n_states, &mut rng)?;
    let mut adam = Adam::new(&params, config.lr);
    let full = Subgraph::full(ctx);
    let sample = ctx.n_counties() > config.full_graph_max_counties;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut since_best = 0usize;
    let mut log = Vec::new();
    let mut step = 0usize;
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut grad_norm = 0.0;
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let sub = if sample {
                sample_subgraph(ctx, config.roots_per_batch, config.walk_length, &mut rng)?
            } else {
                full.clone()
            };
            let results = parallel::map(batch, |&w| {
                window_gradient(&params, &train_set[w], &sub, ctx, config.variant, dims, config.loss)
            });
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r.map_err(|e| diverged(e, epoch, step))?;
                loss += l;
                grads.axpy(1.0, &g);
            }
            let inv = 1.0 / batch.len() as f64;
            loss *= inv;
            grads.scale(inv);
            grad_norm = grads.global_norm();
            if !loss.is_finite() || !grad_norm.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            if grad_norm > config.grad_clip {
                grads.scale(config.grad_clip / grad_norm);
            }
            adam.step(&mut params, &grads);
            if !params.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            loss_sum += loss;
            batches += 1;
        }
        epochs_run = epoch;

        let val_mae = if val_set.is_empty() {
            f64::NAN
        } else {
            let per = parallel::map(val_set, |w| {
                window_loss(&params, w, &full, ctx, config.variant, dims, LossKind::Mae)
            });
            let per = per
                .into_iter()
                .collect::<Result<Vec<_>>>()
                .map_err(|e| diverged(e, epoch, step))?;
            per.iter().sum::<f64>() / per.len() as f64
        };
        log.push(EpochRecord {
            seed,
            epoch,
            train_loss: loss_sum / batches as f64,
            val_mae,
            grad_norm,
        });
        if epoch % 50 == 0 {
            log::debug!(
                "seed {seed} epoch {epoch}: train {:.5} val {:.5}",
                loss_sum / batches as f64,
                val_mae
            );
        }

        if val_set.is_empty() {
            continue;
        }
        if val_mae < best.0 {
            best = (val_mae, params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }

    let (params, best_epoch) = match config.selection {
        Selection::BestValidation if best.2 > 0 => (best.1, best.2),
        _ => (params, epochs_run),
    };
    Ok(SeedRun {
        seed,
        params,
        best_epoch,
        epochs_run,
        log,
    })
}
