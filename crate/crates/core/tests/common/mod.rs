#![allow(dead_code)]

use msgnn::dataset::{make_windows, normalize_by_population, EpidemicPanel, EpidemicWindow, LocationIndex, WindowSpec};
use msgnn::forecaster::{EnsemblePredictor, Normalizer, Transform};
use msgnn::params::ModelDims;
use msgnn::synthetic::{generate_metapop_sir, DeskScenarioConfig, SirOutput, SirScenario};
use msgnn::Matrix;

/// Small layer sizes for fast tests (C' = C'' = 8).
pub fn toy_dims(lookback: usize) -> ModelDims {
    ModelDims {
        lookback,
        horizon: 2,
        hidden: 8,
        repr: 8,
        gcn: 8,
        attn: 4,
        gat: 4,
        ..ModelDims::default()
    }
}

/// Six counties in two states over 60 days.
pub fn toy_scenario(seed: u64) -> SirOutput {
    let cfg = DeskScenarioConfig {
        counties_per_state: 3,
        states: 2,
        days: 60,
        ..DeskScenarioConfig::default()
    };
    generate_metapop_sir(&SirScenario::desk_with(&cfg, seed)).unwrap()
}

pub fn per_capita(out: &SirOutput) -> EpidemicPanel {
    normalize_by_population(&out.panel, &out.index, 1e5).unwrap()
}

/// Weekly windows of `panel`, log1p-scaled so values are of order one.
pub fn scaled_windows(panel: &EpidemicPanel, index: &LocationIndex, dims: &ModelDims) -> Vec<EpidemicWindow> {
    let spec = WindowSpec {
        lookback: dims.lookback,
        horizon_weeks: dims.horizon,
        ..WindowSpec::default()
    };
    let w = make_windows(panel, index, spec).unwrap();
    let norm = Normalizer::fit(&w, Transform::Log1p);
    w.iter().map(|x| norm.window(x)).collect()
}

pub fn desk(seed: u64) -> (LocationIndex, EpidemicPanel) {
    let out = generate_metapop_sir(&SirScenario::desk(seed)).unwrap();
    let panel = per_capita(&out);
    (out.index, panel)
}

/// Independent MAPE: mean of |ŷ − y| / |y| over entries with y ≠ 0.
pub fn mape_oracle(y_hat: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (a, b) in y_hat.iter().zip(y) {
        if *b != 0.0 {
            s += (a - b).abs() / b.abs();
            n += 1;
        }
    }
    s / n as f64
}

/// Last 7 input days of confirmed cases carried over every horizon.
pub fn persistence(w: &EpidemicWindow) -> Matrix {
    let lb = w.input.lookback;
    Matrix::from_fn(w.y.rows(), w.y.cols(), |i, _| {
        (lb - 7..lb).map(|t| w.input.x_c[(i * lb + t, 0)]).sum()
    })
}

pub fn window_set_mape(pred: &EnsemblePredictor, windows: &[EpidemicWindow]) -> f64 {
    windows
        .iter()
        .map(|w| {
            let y = pred.forecast(&w.input).unwrap().map(|v| v.max(0.0));
            mape_oracle(y.as_slice(), w.y.as_slice())
        })
        .sum::<f64>()
        / windows.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Central-difference gradient of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        g.as_mut_slice()[k] = (up - down) / (2.0 * h);
    }
    g
}

pub const GRADIENT_FLOOR: f64 = 1e-4;

/// ‖a − b‖ / max(‖a‖, ‖b‖, GRADIENT_FLOOR). Central differences carry
/// roundoff of order ε·|loss|/h per entry, so groups whose gradient norm is
/// below the floor are effectively compared at an absolute tolerance.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    const FLOOR: f64 = GRADIENT_FLOOR;
    let diff: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / a.sum_squares().sqrt().max(b.sum_squares().sqrt()).max(FLOOR)
}
