//! Deterministic two-level metapopulation SIR generator.
//!
//! Every county runs discrete-day SIR dynamics; infection pressure on county
//! `i` mixes the prevalence of all counties through a row-stochastic mobility
//! matrix. Counts are integers and `S + I + R` is conserved exactly: each
//! flow carries its fractional remainder to the next day instead of rounding
//! it away.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::jhu::STATES;
use crate::dataset::{haversine_km, EpidemicPanel, LocationIndex, SeriesBlock};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Piecewise-constant transmission rate: `(first_day, beta)` steps, sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub steps: Vec<(usize, f64)>,
}

impl BetaSchedule {
    pub fn constant(beta: f64) -> Self {
        Self {
            steps: vec![(0, beta)],
        }
    }

    pub fn at(&self, day: usize) -> f64 {
        self.steps
            .iter()
            .take_while(|(d, _)| *d <= day)
            .last()
            .map_or(0.0, |s| s.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirScenario {
    pub n_states: usize,
    /// County → state, length M.
    pub affiliation: Vec<usize>,
    pub populations: Vec<u64>,
    pub coords: Vec<(f64, f64)>,
    /// One schedule per county.
    pub beta: Vec<BetaSchedule>,
    pub gamma: f64,
    /// Fraction of removals that are deaths.
    pub fatality: f64,
    /// Row-stochastic `M × M` contact mixing.
    pub mobility: Matrix,
    pub initial_infected: Vec<u64>,
    pub days: usize,
    pub start_date: NaiveDate,
    /// Round flows stochastically instead of carrying remainders.
    pub stochastic_rounding: bool,
    pub seed: u64,
}

/// Knobs for [`SirScenario::desk`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeskScenarioConfig {
    pub counties_per_state: usize,
    pub states: usize,
    pub days: usize,
    /// Share of a county's contacts made outside itself.
    pub travel: f64,
    /// Share of outside contacts that stay within the county's state.
    pub in_state: f64,
    pub beta_first: f64,
    pub beta_second: f64,
    pub change_day: usize,
    pub gamma: f64,
    pub fatality: f64,
    pub seed_infections: u64,
    pub start_date: NaiveDate,
}

impl Default for DeskScenarioConfig {
    fn default() -> Self {
        Self {
            counties_per_state: 5,
            states: 4,
            days: 180,
            travel: 0.2,
            in_state: 0.7,
            beta_first: 0.4,
            beta_second: 1.1,
            change_day: 100,
            gamma: 0.25,
            fatality: 0.01,
            seed_infections: 1000,
            start_date: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
        }
    }
}

impl SirScenario {
    /// Default desk-scale scenario: 4 states × 5 counties, 180 days, one
    /// increase in transmission at day 100 producing a second wave. The
    /// outbreak is seeded in a single county of the first state and reaches
    /// the other states through cross-state mobility.
    pub fn desk(seed: u64) -> Self {
        Self::desk_with(&DeskScenarioConfig::default(), seed)
    }

    pub fn desk_with(cfg: &DeskScenarioConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.states;
        let m = n * cfg.counties_per_state;
        let jitter = Normal::new(0.0, 0.35).expect("valid sigma");
        // States on a grid roughly 700-800 km apart, further than the
        // default county-edge cutoff.
        let cols = (n as f64).sqrt().ceil() as usize;
        let mut affiliation = Vec::with_capacity(m);
        let mut coords = Vec::with_capacity(m);
        let mut populations = Vec::with_capacity(m);
        let mut beta = Vec::with_capacity(m);
        for s in 0..n {
            let centre = (34.0 + 7.0 * (s / cols) as f64, -112.0 + 9.0 * (s % cols) as f64);
            let factor = 0.9 + 0.2 * rng.random::<f64>();
            for _ in 0..cfg.counties_per_state {
                affiliation.push(s);
                coords.push((
                    centre.0 + jitter.sample(&mut rng),
                    centre.1 + jitter.sample(&mut rng),
                ));
                populations.push((10f64.powf(4.5 + 1.5 * rng.random::<f64>())).round() as u64);
                let local = factor * (0.95 + 0.1 * rng.random::<f64>());
                beta.push(BetaSchedule {
                    steps: vec![
                        (0, cfg.beta_first * local),
                        (cfg.change_day, cfg.beta_second * local),
                    ],
                });
            }
        }
        let mobility = gravity_mobility(&affiliation, &populations, &coords, cfg.travel, cfg.in_state);
        let mut initial_infected = vec![0; m];
        initial_infected[0] = cfg.seed_infections.min(populations[0]);
        Self {
            n_states: n,
            affiliation,
            populations,
            coords,
            beta,
            gamma: cfg.gamma,
            fatality: cfg.fatality,
            mobility,
            initial_infected,
            days: cfg.days,
            start_date: cfg.start_date,
            stochastic_rounding: false,
            seed,
        }
    }

    pub fn n_counties(&self) -> usize {
        self.affiliation.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_counties();
        let bad = |msg: String| Err(Error::Scenario(msg));
        if m == 0 || self.n_states == 0 || self.days == 0 {
            return bad("empty scenario".into());
        }
        if self.populations.len() != m
            || self.coords.len() != m
            || self.beta.len() != m
            || self.initial_infected.len() != m
            || self.mobility.shape() != (m, m)
        {
            return bad("per-county fields disagree in length".into());
        }
        if let Some(&s) = self.affiliation.iter().find(|&&s| s >= self.n_states) {
            return bad(format!("affiliation {s} outside {} states", self.n_states));
        }
        for s in 0..self.n_states {
            if !self.affiliation.contains(&s) {
                return bad(format!("state {s} has no counties"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.fatality) {
            return bad(format!("fatality {} outside [0, 1]", self.fatality));
        }
        for i in 0..m {
            if self.populations[i] == 0 {
                return bad(format!("county {i} has zero population"));
            }
            if self.initial_infected[i] > self.populations[i] {
                return bad(format!(
                    "county {i}: {} seeded infections exceed population {}",
                    self.initial_infected[i], self.populations[i]
                ));
            }
            if self.beta[i].steps.iter().any(|&(_, b)| !(b >= 0.0 && b.is_finite())) {
                return bad(format!("county {i}: negative or non-finite beta"));
            }
            let row = self.mobility.row(i);
            if row.iter().any(|&v| v < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("mobility row {i} is not stochastic"));
            }
        }
        Ok(())
    }
}

/// Gravity-style mixing: a county keeps `1 − travel` of its contacts at
/// home and spreads the rest over other counties ∝ pop_j / d_ij, with
/// `in_state` of it going to counties of its own state.
pub fn gravity_mobility(
    affiliation: &[usize],
    populations: &[u64],
    coords: &[(f64, f64)],
    travel: f64,
    in_state: f64,
) -> Matrix {
    let m = affiliation.len();
    let mut out = Matrix::identity(m);
    for i in 0..m {
        let weights = |same: bool| -> Vec<(usize, f64)> {
            (0..m)
                .filter(|&j| j != i && (affiliation[j] == affiliation[i]) == same)
                .map(|j| (j, populations[j] as f64 / haversine_km(coords[i], coords[j]).max(1.0)))
                .collect()
        };
        let inside = weights(true);
        let outside = weights(false);
        let (share_in, share_out) = match (inside.is_empty(), outside.is_empty()) {
            (true, true) => continue,
            (true, false) => (0.0, travel),
            (false, true) => (travel, 0.0),
            (false, false) => (travel * in_state, travel * (1.0 - in_state)),
        };
        out[(i, i)] = 1.0 - travel;
        for (group, share) in [(inside, share_in), (outside, share_out)] {
            let total: f64 = group.iter().map(|g| g.1).sum();
            for (j, w) in group {
                out[(i, j)] = share * w / total;
            }
        }
    }
    out
}

/// Simulation output.
#[derive(Debug, Clone, PartialEq)]
pub struct SirOutput {
    pub index: LocationIndex,
    /// Raw daily incident counts.
    pub panel: EpidemicPanel,
    pub mobility: Matrix,
    /// `M × T` compartments after each day.
    pub susceptible: Matrix,
    pub infected: Matrix,
    pub removed: Matrix,
}

struct Flow {
    carry: Vec<f64>,
}

impl Flow {
    fn new(m: usize) -> Self {
        Self { carry: vec![0.0; m] }
    }

    /// Integer part of `expected + carry`, at most `cap`.
    fn take(&mut self, i: usize, expected: f64, cap: u64, rng: Option<&mut ChaCha8Rng>) -> u64 {
        let x = expected.max(0.0);
        let n = match rng {
            Some(rng) => {
                let base = x.floor();
                base as u64 + u64::from(rng.random::<f64>() < x - base)
            }
            None => {
                let total = x + self.carry[i];
                let n = total.floor();
                self.carry[i] = total - n;
                n as u64
            }
        };
        n.min(cap)
    }
}

pub fn generate_metapop_sir(scenario: &SirScenario) -> Result<SirOutput> {
    scenario.validate()?;
    let m = scenario.n_counties();
    let t_len = scenario.days;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let pop: Vec<u64> = scenario.populations.clone();
    let mut s: Vec<u64> = (0..m).map(|i| pop[i] - scenario.initial_infected[i]).collect();
    let mut inf: Vec<u64> = scenario.initial_infected.clone();
    let mut rem: Vec<u64> = vec![0; m];

    let mut confirmed = Matrix::zeros(m, t_len);
    let mut deaths = Matrix::zeros(m, t_len);
    let mut s_trace = Matrix::zeros(m, t_len);
    let mut i_trace = Matrix::zeros(m, t_len);
    let mut r_trace = Matrix::zeros(m, t_len);
    let (mut f_inf, mut f_rec, mut f_death) = (Flow::new(m), Flow::new(m), Flow::new(m));

    for t in 0..t_len {
        if t == 0 {
            for i in 0..m {
                confirmed[(i, 0)] = scenario.initial_infected[i] as f64;
            }
        } else {
            let prevalence: Vec<f64> = (0..m).map(|j| inf[j] as f64 / pop[j] as f64).collect();
            let mut new_inf = vec![0u64; m];
            let mut new_rem = vec![0u64; m];
            for i in 0..m {
                let pressure: f64 = scenario
                    .mobility
                    .row(i)
                    .iter()
                    .zip(&prevalence)
                    .map(|(w, p)| w * p)
                    .sum();
                let expected = scenario.beta[i].at(t) * s[i] as f64 * pressure;
                let stoch = scenario.stochastic_rounding.then_some(&mut rng);
                new_inf[i] = f_inf.take(i, expected, s[i], stoch);
                let stoch = scenario.stochastic_rounding.then_some(&mut rng);
                new_rem[i] = f_rec.take(i, scenario.gamma * inf[i] as f64, inf[i], stoch);
            }
            for i in 0..m {
                s[i] -= new_inf[i];
                inf[i] = inf[i] + new_inf[i] - new_rem[i];
                rem[i] += new_rem[i];
                confirmed[(i, t)] = new_inf[i] as f64;
                let stoch = scenario.stochastic_rounding.then_some(&mut rng);
                deaths[(i, t)] = f_death.take(i, scenario.fatality * new_rem[i] as f64, new_rem[i], stoch) as f64;
            }
        }
        for i in 0..m {
            debug_assert_eq!(s[i] + inf[i] + rem[i], pop[i]);
            s_trace[(i, t)] = s[i] as f64;
            i_trace[(i, t)] = inf[i] as f64;
            r_trace[(i, t)] = rem[i] as f64;
        }
    }

    let index = synthetic_index(scenario)?;
    let sum_states = |block: &Matrix| {
        let mut out = Matrix::zeros(scenario.n_states, t_len);
        for i in 0..m {
            let st = scenario.affiliation[i];
            for t in 0..t_len {
                out[(st, t)] += block[(i, t)];
            }
        }
        out
    };
    let state = SeriesBlock {
        confirmed: sum_states(&confirmed),
        deaths: sum_states(&deaths),
    };
    let panel = EpidemicPanel {
        dates: (0..t_len)
            .map(|d| scenario.start_date + chrono::Duration::days(d as i64))
            .collect(),
        county: SeriesBlock { confirmed, deaths },
        state,
        normalized: false,
        per_capita_scale: None,
    };
    Ok(SirOutput {
        index,
        panel,
        mobility: scenario.mobility.clone(),
        susceptible: s_trace,
        infected: i_trace,
        removed: r_trace,
    })
}

/// Location index with real state FIPS prefixes and made-up county codes.
fn synthetic_index(sc: &SirScenario) -> Result<LocationIndex> {
    let n = sc.n_states;
    if n > STATES.len() {
        return Err(Error::Scenario(format!("at most {} states", STATES.len())));
    }
    let mut order: Vec<usize> = (0..sc.n_counties()).collect();
    order.sort_by_key(|&i| sc.affiliation[i]);
    if order.iter().enumerate().any(|(k, &i)| k != i) {
        return Err(Error::Scenario("counties must be grouped by state in ascending order".into()));
    }
    let mut serial = vec![0usize; n];
    let mut county_ids = Vec::new();
    let mut county_names = Vec::new();
    for &s in &sc.affiliation {
        serial[s] += 1;
        county_ids.push(format!("{}{:03}", STATES[s].0, 2 * serial[s] - 1));
        county_names.push(format!("Synthetic {} {}", STATES[s].1, serial[s]));
    }
    let mut state_population = vec![0u64; n];
    let mut centroid = vec![(0.0, 0.0, 0usize); n];
    for (i, &s) in sc.affiliation.iter().enumerate() {
        state_population[s] += sc.populations[i];
        centroid[s].0 += sc.coords[i].0;
        centroid[s].1 += sc.coords[i].1;
        centroid[s].2 += 1;
    }
    let index = LocationIndex {
        county_ids,
        county_names,
        state_ids: STATES[..n].iter().map(|s| s.0.to_string()).collect(),
        state_names: STATES[..n].iter().map(|s| s.1.to_string()).collect(),
        affiliation: sc.affiliation.clone(),
        county_population: sc.populations.clone(),
        state_population,
        county_coords: sc.coords.clone(),
        state_coords: centroid
            .iter()
            .map(|&(a, b, k)| (a / k as f64, b / k as f64))
            .collect(),
    };
    index.validate()?;
    Ok(index)
}
