use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{NaiveDate, Weekday};
use clap::{Args, Parser, Subcommand};

use msgnn::config::RunConfig;
use msgnn::dataset::cache::{read_panel_cache, write_panel_cache};
use msgnn::dataset::calendar::weekdays_between;
use msgnn::dataset::jhu::{ingest, DateRange};
use msgnn::dataset::{model_input, normalize_by_population, EpidemicPanel, LocationIndex};
use msgnn::evaluation::{
    ablation_sweep, export_signals, per_week_evaluation, persistence_forecast, standard_subsets,
    write_ablation_csv, Provenance,
};
use msgnn::forecaster::{predict, train, Checkpoint, EnsemblePredictor, ForecastTable, Variant};
use msgnn::synthetic::{generate_metapop_sir, SirScenario};
use msgnn::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "msgnn", version, about = "Multi-scale graph epidemic forecasting pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base random seed (training seeds become seed, seed+1, ...).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for every artifact.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the panel cache from raw county files.
    Ingest(Common),
    /// Simulate the desk-scale synthetic scenario into the panel cache.
    Synth(Common),
    /// Train the configured variant and write a checkpoint.
    Train(Common),
    /// Forecast from a checkpoint.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Anchor dates to forecast from (repeatable).
        #[arg(long = "anchor")]
        anchors: Vec<NaiveDate>,
    },
    /// Score a forecast file against the panel.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Forecast CSV (default: <out>/forecasts.csv).
        #[arg(long)]
        forecasts: Option<PathBuf>,
    },
    /// Train every model variant and compare validation MAPE.
    Ablate(Common),
    /// Export learned edge-weight statistics per anchor week.
    ExportSignals(Common),
}

struct Run {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
}

impl Run {
    fn new(common: &Common) -> msgnn::Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg = cfg.with_seed(s);
        }
        let hash = cfg.hash()?;
        std::fs::create_dir_all(&common.out)?;
        log::info!("config hash {hash}");
        Ok(Self {
            cfg,
            hash,
            out: common.out.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn panel_dir(&self) -> PathBuf {
        self.out.join(&self.cfg.data.panel_dir)
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.path("checkpoint.json")
    }

    /// Cached panel in per-capita units.
    fn load_panel(&self) -> msgnn::Result<(LocationIndex, EpidemicPanel)> {
        let dir = self.panel_dir();
        if !dir.join(msgnn::dataset::cache::MANIFEST_FILE).exists() {
            return Err(Error::MissingInput(format!(
                "no panel cache at {}; run `ingest` or `synth` first",
                dir.display()
            )));
        }
        let (index, panel, _) = read_panel_cache(&dir)?;
        let panel = if panel.normalized {
            panel
        } else {
            normalize_by_population(&panel, &index, self.cfg.data.per_capita_scale)?
        };
        Ok((index, panel))
    }

    fn training_panel(&self, panel: &EpidemicPanel) -> msgnn::Result<EpidemicPanel> {
        match self.cfg.data.train_end {
            Some(end) => panel.slice_dates(panel.dates[0], end),
            None => Ok(panel.clone()),
        }
    }

    fn load_predictor(&self, index: &LocationIndex) -> msgnn::Result<EnsemblePredictor> {
        let path = self.checkpoint_path();
        if !path.exists() {
            return Err(Error::MissingInput(format!(
                "no checkpoint at {}; run `train` first",
                path.display()
            )));
        }
        let ck = Checkpoint::load(&path)?;
        if ck.config_hash != self.hash {
            log::warn!("checkpoint was trained under config {}", ck.config_hash);
        }
        ck.predictor(index)
    }
}

fn cmd_ingest(run: &Run) -> msgnn::Result<()> {
    let sources = run
        .cfg
        .data
        .sources
        .as_ref()
        .ok_or_else(|| Error::Config("[data.sources] is required for ingest".into()))?;
    let range = DateRange {
        start: run.cfg.data.start,
        end: run.cfg.data.end,
    };
    let (index, panel) = ingest(sources, range)?;
    write_panel_cache(&run.panel_dir(), &index, &panel, &run.hash)?;
    log::info!(
        "ingested {} counties, {} states, {} dates",
        index.n_counties(),
        index.n_states(),
        panel.n_dates()
    );
    Ok(())
}

fn cmd_synth(run: &Run, seed: u64) -> msgnn::Result<()> {
    let scenario = SirScenario::desk_with(&run.cfg.synth, seed);
    let out = generate_metapop_sir(&scenario)?;
    write_panel_cache(&run.panel_dir(), &out.index, &out.panel, &run.hash)?;
    log::info!(
        "synthetic panel: {} counties, {} states, {} days",
        out.index.n_counties(),
        out.index.n_states(),
        out.panel.n_dates()
    );
    Ok(())
}

fn cmd_train(run: &Run) -> msgnn::Result<()> {
    let (index, panel) = run.load_panel()?;
    let panel = run.training_panel(&panel)?;
    let outcome = train(&panel, &index, &run.cfg.model, &run.cfg.train)?;
    Checkpoint::from_predictor(&outcome.predictor, &run.cfg.train.seeds, run.cfg.train.cutoff_km, &run.hash)
        .save(&run.checkpoint_path())?;
    let mut log_text = serde_json::json!({ "config_hash": run.hash }).to_string();
    log_text.push('\n');
    log_text.push_str(&outcome.log.to_json_lines()?);
    std::fs::write(run.path("training_log.jsonl"), log_text)?;
    for r in &outcome.runs {
        log::info!("seed {}: best epoch {} of {}", r.seed, r.best_epoch, r.epochs_run);
    }
    Ok(())
}

/// Sundays in `panel` with a full look-back and, if `need_targets`, a full
/// target horizon.
fn feasible_anchors(panel: &EpidemicPanel, lookback: usize, horizon: usize, need_targets: bool) -> Vec<NaiveDate> {
    let first = lookback.max(7) - 1;
    if panel.n_dates() <= first {
        return Vec::new();
    }
    let tail = if need_targets { 7 * horizon } else { 0 };
    if panel.n_dates() <= first + tail {
        return Vec::new();
    }
    weekdays_between(panel.dates[first], panel.dates[panel.n_dates() - 1 - tail], Weekday::Sun)
}

fn cmd_predict(run: &Run, anchors: &[NaiveDate]) -> msgnn::Result<()> {
    let (index, panel) = run.load_panel()?;
    let predictor = run.load_predictor(&index)?;
    let dims = predictor.dims;
    let anchors: Vec<NaiveDate> = if !anchors.is_empty() {
        anchors.to_vec()
    } else if let (Some(a), Some(b)) = (run.cfg.evaluation.start, run.cfg.evaluation.end) {
        weekdays_between(a, b, Weekday::Sun)
    } else {
        let all = feasible_anchors(&panel, dims.lookback, dims.horizon, true);
        all[all.len().saturating_sub(run.cfg.evaluation.last_weeks)..].to_vec()
    };
    if anchors.is_empty() {
        return Err(Error::Range("no feasible anchor dates to forecast".into()));
    }
    let mut table = ForecastTable {
        config_hash: Some(run.hash.clone()),
        rows: Vec::new(),
    };
    for a in &anchors {
        table.extend(predict(&panel, &predictor, &index, *a)?);
    }
    table.write_csv(&run.path("forecasts.csv"))?;
    log::info!("wrote forecasts for {} anchors", anchors.len());
    Ok(())
}

fn file_stem(subset: &str) -> String {
    subset.replace('@', "top")
}

fn cmd_evaluate(run: &Run, forecasts: Option<&Path>) -> msgnn::Result<()> {
    let path = forecasts.map_or_else(|| run.path("forecasts.csv"), Path::to_path_buf);
    if !path.exists() {
        return Err(Error::MissingInput(format!(
            "no forecasts at {}; run `predict` first or pass --forecasts",
            path.display()
        )));
    }
    let table = ForecastTable::read_csv(&path)?;
    let anchors = table.anchors();
    let (Some(&first), Some(&last)) = (anchors.first(), anchors.last()) else {
        return Err(Error::MissingInput(format!("{} holds no forecasts", path.display())));
    };
    let from = run.cfg.evaluation.start.unwrap_or(first);
    let to = run.cfg.evaluation.end.unwrap_or(last);
    let (index, panel) = run.load_panel()?;
    let subsets = standard_subsets(&index, &run.cfg.evaluation.subsets)?;
    let provenance = Provenance {
        model: "msgnn".into(),
        variant: run.cfg.train.variant.to_string(),
        config_hash: run.hash.clone(),
    };
    let report = per_week_evaluation(&table, &panel, &index, &subsets, from, to, provenance)?;
    report.write_summary_csv(&run.path("eval_summary.csv"))?;
    report.write_long_csv(&run.path("eval_weeks.csv"))?;
    report.write_gaps_csv(&run.path("eval_gaps.csv"))?;
    for s in &subsets {
        std::fs::write(
            run.path(&format!("eval_boxplot_{}.svg", file_stem(&s.name))),
            report.boxplot_svg(&s.name),
        )?;
    }

    let mut baseline = ForecastTable::default();
    let horizon = table.rows.iter().map(|r| r.horizon_weeks).max().unwrap_or(1);
    for a in &anchors {
        baseline.extend(persistence_forecast(&panel, &index, *a, horizon)?);
    }
    let provenance = Provenance {
        model: "persistence".into(),
        variant: "-".into(),
        config_hash: run.hash.clone(),
    };
    per_week_evaluation(&baseline, &panel, &index, &subsets, from, to, provenance)?
        .write_summary_csv(&run.path("persistence_summary.csv"))?;

    for r in report.summary.iter().filter(|r| r.subset == "all") {
        log::info!(
            "{}-week horizon over {} weeks: MAE {:.3}, MAPE {:.4}, RMSE {:.3}",
            r.horizon_weeks,
            r.weeks,
            r.metrics.mae,
            r.metrics.mape,
            r.metrics.rmse
        );
    }
    Ok(())
}

fn cmd_ablate(run: &Run) -> msgnn::Result<()> {
    let (index, panel) = run.load_panel()?;
    let panel = run.training_panel(&panel)?;
    let rows = ablation_sweep(&panel, &index, &run.cfg.model, &run.cfg.train, &Variant::ALL)?;
    write_ablation_csv(&rows, &run.hash, &run.path("ablation.csv"))
}

fn cmd_export_signals(run: &Run) -> msgnn::Result<()> {
    let (index, panel) = run.load_panel()?;
    let predictor = run.load_predictor(&index)?;
    let anchors = feasible_anchors(&panel, predictor.dims.lookback, predictor.dims.horizon, false);
    let snapshots = msgnn::parallel::map(&anchors, |&a| -> msgnn::Result<_> {
        let t = panel.date_position(a).expect("anchor inside panel");
        let input = model_input(&panel, t, predictor.dims.lookback)?;
        Ok((a, predictor.graph(&input)?))
    })
    .into_iter()
    .collect::<msgnn::Result<Vec<_>>>()?;
    let mut table = export_signals(&snapshots, &panel, &index)?;
    table.config_hash = run.hash.clone();
    table.write_csv(&run.path("signals.csv"))?;
    std::fs::write(run.path("signals.svg"), table.plot_svg())?;
    if let Some((edge_peak, incident_peak)) = table.peak_alignment() {
        log::info!(
            "macro mean edge weight peaks {edge_peak}, national incidents peak {incident_peak} (edge peak {} incidents)",
            if edge_peak <= incident_peak { "at or before" } else { "after" }
        );
    }
    Ok(())
}

fn dispatch(command: &Command) -> msgnn::Result<()> {
    match command {
        Command::Ingest(c) => cmd_ingest(&Run::new(c)?),
        Command::Synth(c) => {
            let run = Run::new(c)?;
            cmd_synth(&run, c.seed.unwrap_or(run.cfg.train.seeds[0]))
        }
        Command::Train(c) => cmd_train(&Run::new(c)?),
        Command::Predict { common, anchors } => cmd_predict(&Run::new(common)?, anchors),
        Command::Evaluate { common, forecasts } => cmd_evaluate(&Run::new(common)?, forecasts.as_deref()),
        Command::Ablate(c) => cmd_ablate(&Run::new(c)?),
        Command::ExportSignals(c) => cmd_export_signals(&Run::new(c)?),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn error_record(kind: &str, code: u8, message: &str) {
    let rec = serde_json::json!({
        "level": "ERROR",
        "kind": kind,
        "exit_code": code,
        "message": message,
    });
    let _ = writeln!(std::io::stderr(), "{rec}");
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let rec = serde_json::json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{rec}")
        })
        .init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            error_record("config", 2, e.to_string().trim_end());
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let code = exit_code(kind);
            error_record(&format!("{kind:?}").to_lowercase(), code, &e.to_string());
            ExitCode::from(code)
        }
    }
}
