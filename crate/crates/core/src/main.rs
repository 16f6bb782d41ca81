//! `vegcast` command line: stage subcommands plus the full pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use vegcast::ar::GrangerConfig;
use vegcast::config::{load_config_file, PipelineConfig};
use vegcast::error::Error;
use vegcast::gapfill::{self, Interpolator};
use vegcast::ingest;
use vegcast::pipeline::{self, RunLog};
use vegcast::synth::{Coupling, DroughtEvent, SynthSpec};

#[derive(Parser)]
#[command(
    name = "vegcast",
    version,
    about = "Vegetation-condition forecasting pipeline: ingest, gap-fill, indices, forecasts, and skill reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus per-key overrides. Every flag mirrors a config key of
/// the same name.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observation CSV path.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Preprocessing style: modis-interp or landsat-gp.
    #[arg(long)]
    style: Option<String>,
    /// Root seed for all randomness.
    #[arg(long)]
    seed: Option<String>,
    /// Comma-separated lead times in weeks.
    #[arg(long)]
    leads: Option<String>,
    /// Weekly anchor weekday (default saturday).
    #[arg(long = "anchor-weekday")]
    anchor_weekday: Option<String>,
    /// Minimum pixels behind an aggregate value.
    #[arg(long = "min-pixels")]
    min_pixels: Option<String>,
    /// Longest interpolated gap run, in weeks.
    #[arg(long = "l-max")]
    l_max: Option<String>,
    /// Gap interpolator: quadratic, linear, cubic, last-value, mean-value, gp.
    #[arg(long)]
    interpolator: Option<String>,
    /// Savitzky-Golay window length (odd weeks).
    #[arg(long = "savgol-window")]
    savgol_window: Option<String>,
    /// Savitzky-Golay polynomial order.
    #[arg(long = "savgol-order")]
    savgol_order: Option<String>,
    /// AR model order p.
    #[arg(long)]
    order: Option<String>,
    /// AR training segment length T.
    #[arg(long = "train-length")]
    train_length: Option<String>,
    /// Remove the window mean before AR fitting.
    #[arg(long)]
    demean: Option<String>,
    /// Require fully gap-free AR training windows.
    #[arg(long = "strict-window")]
    strict_window: Option<String>,
    /// GP kernel structure, e.g. rbf or rbf+periodic.
    #[arg(long)]
    kernel: Option<String>,
    /// GP fit restarts.
    #[arg(long)]
    restarts: Option<String>,
    /// GP optimizer iteration cap.
    #[arg(long = "gp-max-iters")]
    gp_max_iters: Option<String>,
    /// Cap on GP training history per forecast fit (0 = unlimited).
    #[arg(long = "gp-max-train-weeks")]
    gp_max_train_weeks: Option<String>,
    /// Index to forecast: vci3m or ndvi-anomaly.
    #[arg(long)]
    index: Option<String>,
    /// Forecast methods, comma separated: ar, gp, persistence.
    #[arg(long)]
    methods: Option<String>,
    /// Weeks between assessed issue dates.
    #[arg(long = "issue-stride")]
    issue_stride: Option<String>,
    /// First assessable issue slot (default train-length + 52).
    #[arg(long = "burn-in")]
    burn_in: Option<String>,
    /// Climatology mode: pixel or regional.
    #[arg(long = "climatology-mode")]
    climatology_mode: Option<String>,
    /// Climatology reference window end, in weeks.
    #[arg(long = "climatology-reference-end")]
    climatology_reference_end: Option<String>,
    /// Degenerate climatology week policy: error or map50.
    #[arg(long = "degenerate-week")]
    degenerate_week: Option<String>,
    /// VCI3M drought alert threshold.
    #[arg(long = "drought-threshold")]
    drought_threshold: Option<String>,
    /// Granger display threshold in percent RMSE reduction.
    #[arg(long = "granger-threshold")]
    granger_threshold: Option<String>,
    /// Source-region lag count q in the extended model.
    #[arg(long = "granger-lags")]
    granger_lags: Option<String>,
    /// Lead time of the Granger regressions.
    #[arg(long = "granger-lead")]
    granger_lead: Option<String>,
    /// Stride between Granger windows.
    #[arg(long = "granger-stride")]
    granger_stride: Option<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_map(&load_config_file(path)?)?,
            None => PipelineConfig::default(),
        };
        let overrides: [(&str, Option<String>); 30] = [
            ("input", self.input.as_ref().map(|p| p.display().to_string())),
            ("output", self.output.as_ref().map(|p| p.display().to_string())),
            ("style", self.style.clone()),
            ("seed", self.seed.clone()),
            ("leads", self.leads.clone()),
            ("anchor-weekday", self.anchor_weekday.clone()),
            ("min-pixels", self.min_pixels.clone()),
            ("l-max", self.l_max.clone()),
            ("interpolator", self.interpolator.clone()),
            ("savgol-window", self.savgol_window.clone()),
            ("savgol-order", self.savgol_order.clone()),
            ("order", self.order.clone()),
            ("train-length", self.train_length.clone()),
            ("demean", self.demean.clone()),
            ("strict-window", self.strict_window.clone()),
            ("kernel", self.kernel.clone()),
            ("restarts", self.restarts.clone()),
            ("gp-max-iters", self.gp_max_iters.clone()),
            ("gp-max-train-weeks", self.gp_max_train_weeks.clone()),
            ("index", self.index.clone()),
            ("methods", self.methods.clone()),
            ("issue-stride", self.issue_stride.clone()),
            ("burn-in", self.burn_in.clone()),
            ("climatology-mode", self.climatology_mode.clone()),
            ("climatology-reference-end", self.climatology_reference_end.clone()),
            ("degenerate-week", self.degenerate_week.clone()),
            ("drought-threshold", self.drought_threshold.clone()),
            ("granger-threshold", self.granger_threshold.clone()),
            ("granger-lags", self.granger_lags.clone()),
            ("granger-lead", self.granger_lead.clone()),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.apply(key, &v)?;
            }
        }
        if let Some(v) = &self.granger_stride {
            cfg.apply("granger-stride", v)?;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct GapfillArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run the interpolator holdout comparison instead of filling.
    #[arg(long)]
    compare: bool,
    /// Held-out values per pixel series in comparison mode.
    #[arg(long = "drop-count", default_value_t = 10)]
    drop_count: usize,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Forecast records CSV (defaults to <output>/forecasts/records.csv).
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for observations.csv and sidecar.json.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 3)]
    regions: usize,
    #[arg(long, default_value_t = 10)]
    years: usize,
    #[arg(long = "pixels-per-region", default_value_t = 30)]
    pixels_per_region: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long = "gap-base-rate", default_value_t = 0.12)]
    gap_base_rate: f64,
    #[arg(long = "gap-seasonal-strength", default_value_t = 0.5)]
    gap_seasonal_strength: f64,
    #[arg(long = "pixel-noise", default_value_t = 0.025)]
    pixel_noise: f64,
    #[arg(long = "process-noise", default_value_t = 0.012)]
    process_noise: f64,
    #[arg(long = "ar-rho", default_value_t = 0.9)]
    ar_rho: f64,
    #[arg(long = "seasonal-amplitude", default_value_t = 0.12)]
    seasonal_amplitude: f64,
    /// Drought events as region:start_week:length:depth, semicolon separated.
    #[arg(long)]
    droughts: Option<String>,
    /// Couplings as source:target:coefficient:lag, semicolon separated.
    #[arg(long)]
    couplings: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load observations, composite to weekly, and write raw regional series.
    Ingest(ConfigArgs),
    /// Fill and smooth pixel series and write the processed regional series,
    /// or compare interpolation methods on held-out values.
    Gapfill(GapfillArgs),
    /// Build climatologies and truth-side index series.
    Indices(ConfigArgs),
    /// Run the forecast sweep and write forecast records.
    Forecast(ConfigArgs),
    /// Compute skill reports from forecast records.
    Evaluate(EvaluateArgs),
    /// Inter-region Granger analysis on truth VCI3M series.
    Granger(ConfigArgs),
    /// Generate synthetic observations with a ground-truth sidecar.
    Synth(SynthArgs),
    /// Full pipeline: ingest through reports.
    Run(ConfigArgs),
}

fn parse_droughts(text: &str) -> Result<Vec<DroughtEvent>, Error> {
    let mut out = Vec::new();
    for part in text.split(';').filter(|p| !p.trim().is_empty()) {
        let fields: Vec<&str> = part.trim().split(':').collect();
        if fields.len() != 4 {
            return Err(Error::Config(format!(
                "drought spec {part:?}: expected region:start:length:depth"
            )));
        }
        out.push(DroughtEvent {
            region: fields[0].parse().map_err(|e| Error::Config(format!("{e}")))?,
            start_week: fields[1].parse().map_err(|e| Error::Config(format!("{e}")))?,
            length_weeks: fields[2].parse().map_err(|e| Error::Config(format!("{e}")))?,
            depth: fields[3].parse().map_err(|e| Error::Config(format!("{e}")))?,
        });
    }
    Ok(out)
}

fn parse_couplings(text: &str) -> Result<Vec<Coupling>, Error> {
    let mut out = Vec::new();
    for part in text.split(';').filter(|p| !p.trim().is_empty()) {
        let fields: Vec<&str> = part.trim().split(':').collect();
        if fields.len() != 4 {
            return Err(Error::Config(format!(
                "coupling spec {part:?}: expected source:target:coefficient:lag"
            )));
        }
        out.push(Coupling {
            source: fields[0].parse().map_err(|e| Error::Config(format!("{e}")))?,
            target: fields[1].parse().map_err(|e| Error::Config(format!("{e}")))?,
            coefficient: fields[2].parse().map_err(|e| Error::Config(format!("{e}")))?,
            lag_weeks: fields[3].parse().map_err(|e| Error::Config(format!("{e}")))?,
        });
    }
    Ok(out)
}

fn cmd_ingest(args: &ConfigArgs) -> Result<(), Error> {
    let cfg = args.build()?;
    cfg.validate()?;
    let mut log = RunLog::default();
    let (_grid, workers) = pipeline::build_workers(&cfg, &mut log)?;
    let dir = cfg.output.join("series");
    std::fs::create_dir_all(&dir)?;
    for worker in &workers {
        // Raw aggregate before any gap-filling: mean of raw composites with
        // the minimum-pixel rule.
        let bundle = worker.truth.as_ref().expect("prepared");
        let file = std::fs::File::create(dir.join(format!("{}_ndvi.csv", worker.region_id)))?;
        ingest::write_regional_series(file, &worker.region_id, &bundle.ndvi)?;
    }
    for line in log.lines() {
        eprintln!("{line}");
    }
    println!("ingested {} regions into {}", workers.len(), dir.display());
    Ok(())
}

fn cmd_gapfill(args: &GapfillArgs) -> Result<(), Error> {
    let cfg = args.config.build()?;
    cfg.validate()?;
    let observations = ingest::load_observations(&cfg.input)?;
    if args.compare {
        let mut grid_min = None;
        let mut grid_max = None;
        for series in &observations {
            for s in series.samples() {
                grid_min = Some(grid_min.map_or(s.date, |d: chrono::NaiveDate| d.min(s.date)));
                grid_max = Some(grid_max.map_or(s.date, |d: chrono::NaiveDate| d.max(s.date)));
            }
        }
        let (Some(lo), Some(hi)) = (grid_min, grid_max) else {
            return Err(Error::InvalidInput("no samples to compare on".into()));
        };
        let grid = vegcast::time::TimeGrid::covering(lo, hi, cfg.anchor_weekday)?;
        let mut pixel_series = Vec::new();
        for obs in &observations {
            let composite = ingest::composite_weekly(obs, &grid)?;
            if composite.present_count() >= args.drop_count + 12 {
                pixel_series.push(composite);
            }
        }
        let methods = Interpolator::all();
        let results = gapfill::compare_interpolators(
            &pixel_series,
            &methods,
            args.drop_count,
            vegcast::config::derive_seed(cfg.seed, "holdout"),
            &cfg.gapfill,
        )?;
        std::fs::create_dir_all(&cfg.output)?;
        let path = cfg.output.join("interpolator_comparison.csv");
        let mut w = csv::Writer::from_writer(std::fs::File::create(&path)?);
        w.write_record(["method", "r2"])?;
        println!("method,r2");
        for (method, score) in results {
            let shown = match score {
                gapfill::HoldoutScore::R2(v) => format!("{v:.4}"),
                gapfill::HoldoutScore::Degenerate => "degenerate".to_string(),
            };
            w.write_record([method.to_string(), shown.clone()])?;
            println!("{method},{shown}");
        }
        w.flush()?;
        return Ok(());
    }

    let mut log = RunLog::default();
    let (_grid, workers) = pipeline::build_workers(&cfg, &mut log)?;
    pipeline::write_series_outputs(&cfg, &workers)?;
    for line in log.lines() {
        eprintln!("{line}");
    }
    println!(
        "wrote processed series for {} regions under {}",
        workers.len(),
        cfg.output.join("series").display()
    );
    Ok(())
}

fn cmd_indices(args: &ConfigArgs) -> Result<(), Error> {
    let cfg = args.build()?;
    cfg.validate()?;
    let mut log = RunLog::default();
    let (_grid, workers) = pipeline::build_workers(&cfg, &mut log)?;
    pipeline::write_series_outputs(&cfg, &workers)?;
    for line in log.lines() {
        eprintln!("{line}");
    }
    println!(
        "wrote index series for {} regions under {}",
        workers.len(),
        cfg.output.join("series").display()
    );
    Ok(())
}

fn cmd_forecast(args: &ConfigArgs) -> Result<(), Error> {
    let cfg = args.build()?;
    cfg.validate()?;
    let mut log = RunLog::default();
    let (_grid, workers) = pipeline::build_workers(&cfg, &mut log)?;
    let mut records = Vec::new();
    for worker in &workers {
        pipeline::region_forecasts(worker, &cfg, &mut log, &mut records)?;
    }
    records.sort_by(|a, b| {
        (a.region_id.as_str(), a.issue_date, a.lead, a.method).cmp(&(
            b.region_id.as_str(),
            b.issue_date,
            b.lead,
            b.method,
        ))
    });
    let dir = cfg.output.join("forecasts");
    std::fs::create_dir_all(&dir)?;
    pipeline::write_records(std::fs::File::create(dir.join("records.csv"))?, &records)?;
    std::fs::create_dir_all(cfg.output.join("logs"))?;
    log.write_to(&cfg.output.join("logs").join("run.log"))?;
    println!(
        "wrote {} forecast records to {}",
        records.len(),
        dir.join("records.csv").display()
    );
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), Error> {
    let cfg = args.config.build()?;
    cfg.validate()?;
    let records_path = args
        .records
        .clone()
        .unwrap_or_else(|| cfg.output.join("forecasts").join("records.csv"));
    let records = pipeline::read_records(std::fs::File::open(&records_path)?)?;
    let mut log = RunLog::default();
    let (_grid, workers) = pipeline::build_workers(&cfg, &mut log)?;
    pipeline::write_reports(&cfg, &records, &workers, &mut log)?;
    println!(
        "evaluated {} records into {}",
        records.len(),
        cfg.output.join("reports").display()
    );
    Ok(())
}

fn cmd_granger(args: &ConfigArgs) -> Result<(), Error> {
    let cfg = args.build()?;
    cfg.validate()?;
    let mut log = RunLog::default();
    let series = pipeline::truth_vci3m(&cfg, &mut log)?;
    let granger_cfg = GrangerConfig {
        order: cfg.ar.order,
        train_length: cfg.ar.train_length,
        demean: cfg.ar.demean,
        ..cfg.granger.clone()
    };
    let matrix = vegcast::ar::granger_matrix(&series, &granger_cfg, cfg.granger_threshold)?;
    std::fs::create_dir_all(cfg.output.join("reports"))?;
    let path = cfg.output.join("reports").join("granger.csv");
    let mut w = csv::Writer::from_writer(std::fs::File::create(&path)?);
    w.write_record(["from_region", "to_region", "mean_pct_reduction", "windows"])?;
    for e in &matrix.entries {
        w.write_record([
            e.from_region.clone(),
            e.to_region.clone(),
            format!("{}", e.mean_pct_reduction),
            e.windows.to_string(),
        ])?;
    }
    w.flush()?;
    std::fs::write(
        cfg.output.join("reports").join("granger.json"),
        serde_json::to_string_pretty(&matrix).expect("matrix serializes") + "\n",
    )?;
    println!(
        "granger matrix: {} significant pair(s) above {}% written to {}",
        matrix.entries.len(),
        cfg.granger_threshold,
        path.display()
    );
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Error> {
    let spec = SynthSpec {
        regions: args.regions,
        years: args.years,
        pixels_per_region: args.pixels_per_region,
        seed: args.seed,
        gap_base_rate: args.gap_base_rate,
        gap_seasonal_strength: args.gap_seasonal_strength,
        pixel_noise: args.pixel_noise,
        process_noise: args.process_noise,
        ar_rho: args.ar_rho,
        seasonal_amplitude: args.seasonal_amplitude,
        droughts: args.droughts.as_deref().map(parse_droughts).transpose()?.unwrap_or_default(),
        couplings: args
            .couplings
            .as_deref()
            .map(parse_couplings)
            .transpose()?
            .unwrap_or_default(),
        ..SynthSpec::default()
    };
    let sidecar = vegcast::synth::generate_into_dir(&spec, &args.output)?;
    println!(
        "generated {} regions x {} weeks ({} pixels each) into {}",
        sidecar.regions.len(),
        sidecar.weeks,
        sidecar.pixels_per_region,
        args.output.display()
    );
    Ok(())
}

fn cmd_run(args: &ConfigArgs) -> Result<(), Error> {
    let cfg = args.build()?;
    let report = pipeline::run_pipeline(&cfg)?;
    println!(
        "pipeline complete: {} regions, {} records, output {}{}",
        report.regions,
        report.records,
        report.output.display(),
        if report.cache_hits.is_empty() {
            String::new()
        } else {
            format!(" (cache hits: {})", report.cache_hits.join(", "))
        }
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; help/version are not errors.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Gapfill(args) => cmd_gapfill(args),
        Command::Indices(args) => cmd_indices(args),
        Command::Forecast(args) => cmd_forecast(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Granger(args) => cmd_granger(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Run(args) => cmd_run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
