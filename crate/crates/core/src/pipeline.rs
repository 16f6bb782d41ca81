//! End-to-end orchestration: ingest, per-style preprocessing, index
//! construction, forecast sweeps, and report emission, with per-stage
//! caching and byte-deterministic outputs.
//!
//! Forecast-mode series are rebuilt from observations dated at or before
//! each issue date, so no stage feeds future data into a forecast. The
//! climatology is fixed from a reference window that ends at or before the
//! first assessable issue date.

use crate::ar::{self, ARConfig, ForecastOutcome};
use crate::config::{derive_seed, ClimatologyMode, PipelineConfig, PipelineStyle};
use crate::error::{Error, Result, SkipReason};
use crate::evaluate::{self, ForecastRecord, Method};
use crate::gapfill;
use crate::gp::{self, GapfillMode, GapfillOutcome, GpForecastOutcome, Kernel};
use crate::indices::{self, Climatology};
use crate::ingest::{self, RegionSampleSet};
use crate::series::{IndexKind, IndexSeries, ObservationSeries, WeeklySeries};
use crate::time::TimeGrid;
use chrono::NaiveDate;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Structured, timestamp-free run log (deterministic across reruns).
#[derive(Debug, Default)]
pub struct RunLog {
    lines: Vec<String>,
}

impl RunLog {
    pub fn event(&mut self, region: &str, stage: &str, code: &str, detail: &str) {
        self.lines
            .push(format!("region={region} stage={stage} code={code} detail={detail}"));
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Regional truth-side series bundle.
#[derive(Debug, Clone)]
pub struct RegionBundle {
    pub ndvi: WeeklySeries,
    pub vci: IndexSeries,
    pub vci3m: IndexSeries,
    pub anomaly: IndexSeries,
    /// VCI values clipped back into [0, 100].
    pub clip_events: usize,
}

impl RegionBundle {
    pub fn index(&self, kind: IndexKind) -> &IndexSeries {
        match kind {
            IndexKind::Vci => &self.vci,
            IndexKind::Vci3m => &self.vci3m,
            IndexKind::NdviAnomaly => &self.anomaly,
            IndexKind::Ndvi => panic!("aggregate NDVI is not an index series"),
        }
    }
}

/// Per-region state: raw pixels, composites, fixed climatologies, and the
/// truth bundle. Forecast-mode bundles are derived per issue slot.
pub struct RegionWorker {
    pub region_id: String,
    grid: TimeGrid,
    style: PipelineStyle,
    cfg: PipelineConfig,
    pixels: Vec<ObservationSeries>,
    /// Raw weekly composites, one per pixel (interp style).
    composites: Vec<WeeklySeries>,
    /// Pixels with at least one good observation per week.
    pub clear_counts: Vec<usize>,
    /// Index into `pixels` of the pixels that survived preparation.
    active: Vec<usize>,
    /// Fixed per-pixel climatologies (pixel mode), parallel to `active`.
    pixel_clims: Vec<Climatology>,
    /// Fixed regional climatology (regional mode).
    regional_clim: Option<Climatology>,
    /// Full-history processed pixel series, parallel to `active`.
    processed_full: Vec<WeeklySeries>,
    pub truth: Option<RegionBundle>,
}

impl RegionWorker {
    pub fn new(
        region_id: String,
        pixels: Vec<ObservationSeries>,
        grid: TimeGrid,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        let mut composites = Vec::with_capacity(pixels.len());
        for obs in &pixels {
            composites.push(ingest::composite_weekly(obs, &grid)?);
        }
        let mut clear_counts = vec![0usize; grid.len()];
        for series in &composites {
            for (slot, _) in series.present() {
                clear_counts[slot] += 1;
            }
        }
        Ok(Self {
            region_id,
            grid,
            style: cfg.style,
            cfg: cfg.clone(),
            pixels,
            composites,
            clear_counts,
            active: Vec::new(),
            pixel_clims: Vec::new(),
            regional_clim: None,
            processed_full: Vec::new(),
            truth: None,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn pixel_total(&self) -> usize {
        self.pixels.len()
    }

    fn pixel_gapfill_seed(&self, pixel_id: &str) -> u64 {
        derive_seed(self.cfg.seed, &format!("gp-gapfill/{}/{pixel_id}", self.region_id))
    }

    /// Full-history processed series for one pixel, or a skip reason.
    fn process_pixel_full(&self, pixel_idx: usize) -> Result<std::result::Result<WeeklySeries, SkipReason>> {
        match self.style {
            PipelineStyle::ModisInterp => {
                let composite = &self.composites[pixel_idx];
                if composite.present_count() < self.cfg.gapfill.interpolator.min_support().max(3)
                {
                    return Ok(Err(SkipReason::InsufficientHistory));
                }
                let (filled, _warnings) = gapfill::fill_gaps(composite, &self.cfg.gapfill)?;
                Ok(Ok(gapfill::savitzky_golay(&filled, &self.cfg.gapfill)?))
            }
            PipelineStyle::LandsatGp => {
                let kernel = Kernel::sum(Kernel::rbf(), Kernel::periodic());
                let mut opts = gp::GpFitOptions::quick();
                opts.seed = self.pixel_gapfill_seed(&self.pixels[pixel_idx].pixel_id);
                match gp::gp_gapfill(
                    &self.pixels[pixel_idx],
                    &self.grid,
                    GapfillMode::NonForecast,
                    &kernel,
                    &opts,
                )? {
                    GapfillOutcome::Filled(s) => Ok(Ok(s)),
                    GapfillOutcome::Skipped(reason) => Ok(Err(reason)),
                }
            }
        }
    }

    /// Processed series for one active pixel using only data at or before
    /// the issue slot.
    fn process_pixel_at(
        &self,
        active_idx: usize,
        issue_slot: usize,
    ) -> Result<std::result::Result<WeeklySeries, SkipReason>> {
        let pixel_idx = self.active[active_idx];
        match self.style {
            PipelineStyle::ModisInterp => {
                let truncated = self.composites[pixel_idx].truncated(issue_slot)?;
                if truncated.present_count() < self.cfg.gapfill.interpolator.min_support().max(3)
                {
                    return Ok(Err(SkipReason::InsufficientHistory));
                }
                let (filled, _warnings) = gapfill::fill_gaps(&truncated, &self.cfg.gapfill)?;
                Ok(Ok(gapfill::savitzky_golay(&filled, &self.cfg.gapfill)?))
            }
            PipelineStyle::LandsatGp => {
                let kernel = Kernel::sum(Kernel::rbf(), Kernel::periodic());
                let mut opts = gp::GpFitOptions::quick();
                opts.seed = self.pixel_gapfill_seed(&self.pixels[pixel_idx].pixel_id);
                let cutoff = self.grid.slot_date(issue_slot);
                match gp::gp_gapfill(
                    &self.pixels[pixel_idx],
                    &self.grid,
                    GapfillMode::Forecast { cutoff },
                    &kernel,
                    &opts,
                )? {
                    GapfillOutcome::Filled(s) => Ok(Ok(s.truncated(issue_slot)?)),
                    GapfillOutcome::Skipped(reason) => Ok(Err(reason)),
                }
            }
        }
    }

    /// Climatology reference slice of a series: slots `[0, reference_end)`.
    fn reference_slice(&self, series: &WeeklySeries) -> Result<WeeklySeries> {
        let end = self
            .cfg
            .effective_reference_end()
            .min(series.len())
            .saturating_sub(1);
        series.truncated(end)
    }

    /// Fixes the active pixel set, climatologies, and the truth bundle.
    pub fn prepare(&mut self, log: &mut RunLog) -> Result<()> {
        let mut active = Vec::new();
        let mut processed = Vec::new();
        for pixel_idx in 0..self.pixels.len() {
            match self.process_pixel_full(pixel_idx)? {
                Ok(series) => {
                    active.push(pixel_idx);
                    processed.push(series);
                }
                Err(reason) => {
                    log.event(
                        &self.region_id,
                        "preprocess",
                        &reason.to_string(),
                        &format!("pixel {} skipped", self.pixels[pixel_idx].pixel_id),
                    );
                }
            }
        }

        match self.cfg.climatology_mode {
            ClimatologyMode::Pixel => {
                let mut kept = Vec::new();
                let mut clims = Vec::new();
                let mut kept_series = Vec::new();
                for (i, series) in processed.iter().enumerate() {
                    let reference = self.reference_slice(series)?;
                    match indices::build_climatology(&reference) {
                        Ok(clim) => {
                            kept.push(active[i]);
                            clims.push(clim);
                            kept_series.push(series.clone());
                        }
                        Err(e) => {
                            log.event(
                                &self.region_id,
                                "climatology",
                                "INSUFFICIENT_HISTORY",
                                &format!(
                                    "pixel {} dropped: {e}",
                                    self.pixels[active[i]].pixel_id
                                ),
                            );
                        }
                    }
                }
                self.active = kept;
                self.pixel_clims = clims;
                self.processed_full = kept_series;
            }
            ClimatologyMode::Regional => {
                self.active = active;
                self.processed_full = processed;
                let agg = self.aggregate(&self.processed_full.iter().collect::<Vec<_>>())?;
                let reference = self.reference_slice(&agg)?;
                self.regional_clim = Some(indices::build_climatology(&reference)?);
            }
        }

        if self.active.is_empty() {
            return Err(Error::InvalidInput(format!(
                "region {}: no usable pixels after preprocessing",
                self.region_id
            )));
        }
        self.truth = Some(self.bundle_from_processed(
            &self.processed_full.iter().collect::<Vec<_>>(),
        )?);
        Ok(())
    }

    fn aggregate(&self, pixel_series: &[&WeeklySeries]) -> Result<WeeklySeries> {
        let set = RegionSampleSet::new(
            self.region_id.clone(),
            pixel_series.iter().map(|s| (*s).clone()).collect(),
            self.cfg.min_pixels,
        )?;
        ingest::aggregate_region(&set)
    }

    /// Builds the aggregate NDVI / VCI / VCI3M / anomaly bundle from
    /// processed pixel series (all on one grid).
    fn bundle_from_processed(&self, pixel_series: &[&WeeklySeries]) -> Result<RegionBundle> {
        let ndvi = self.aggregate(pixel_series)?;
        let mut clip_events = 0usize;
        let (vci, anomaly) = match self.cfg.climatology_mode {
            ClimatologyMode::Pixel => {
                let mut vci_pixels = Vec::with_capacity(pixel_series.len());
                let mut anomaly_pixels = Vec::with_capacity(pixel_series.len());
                for (series, clim) in pixel_series.iter().zip(&self.pixel_clims) {
                    let out = indices::compute_vci(
                        series,
                        clim,
                        &self.region_id,
                        self.cfg.degenerate_week,
                    )?;
                    clip_events += out.clipped;
                    vci_pixels.push(out.index.series.clone());
                    anomaly_pixels
                        .push(indices::compute_ndvi_anomaly(series, clim, &self.region_id)?
                            .series
                            .clone());
                }
                let vci_agg = ingest::aggregate_region(&RegionSampleSet::new(
                    self.region_id.clone(),
                    vci_pixels,
                    self.cfg.min_pixels,
                )?)?;
                let anomaly_agg = ingest::aggregate_region(&RegionSampleSet::new(
                    self.region_id.clone(),
                    anomaly_pixels,
                    self.cfg.min_pixels,
                )?)?;
                (
                    IndexSeries::new(vci_agg, IndexKind::Vci, &self.region_id)?,
                    IndexSeries::new(anomaly_agg, IndexKind::NdviAnomaly, &self.region_id)?,
                )
            }
            ClimatologyMode::Regional => {
                let clim = self
                    .regional_clim
                    .as_ref()
                    .expect("regional climatology prepared");
                let out =
                    indices::compute_vci(&ndvi, clim, &self.region_id, self.cfg.degenerate_week)?;
                clip_events += out.clipped;
                (
                    out.index,
                    indices::compute_ndvi_anomaly(&ndvi, clim, &self.region_id)?,
                )
            }
        };
        let vci3m = indices::compute_vci3m(&vci, &ndvi)?;
        Ok(RegionBundle {
            ndvi,
            vci,
            vci3m,
            anomaly,
            clip_events,
        })
    }

    /// Forecast-mode bundle: every series rebuilt from data at or before
    /// the issue slot, on the truncated grid.
    pub fn forecast_bundle_at(&self, issue_slot: usize) -> Result<Option<RegionBundle>> {
        let mut pixel_series = Vec::with_capacity(self.active.len());
        let mut kept_clims = Vec::with_capacity(self.active.len());
        for active_idx in 0..self.active.len() {
            match self.process_pixel_at(active_idx, issue_slot)? {
                Ok(series) => {
                    pixel_series.push(series);
                    if self.cfg.climatology_mode == ClimatologyMode::Pixel {
                        kept_clims.push(self.pixel_clims[active_idx].clone());
                    }
                }
                Err(_) => {} // pixel silent at this cutoff
            }
        }
        if pixel_series.len() < self.cfg.min_pixels.min(self.active.len()).max(1) {
            return Ok(None);
        }
        let worker_view = RegionWorker {
            region_id: self.region_id.clone(),
            grid: self.grid.truncated(issue_slot + 1)?,
            style: self.style,
            cfg: self.cfg.clone(),
            pixels: Vec::new(),
            composites: Vec::new(),
            clear_counts: Vec::new(),
            active: (0..pixel_series.len()).collect(),
            pixel_clims: kept_clims,
            regional_clim: self.regional_clim.clone(),
            processed_full: Vec::new(),
            truth: None,
        };
        let refs: Vec<&WeeklySeries> = pixel_series.iter().collect();
        match worker_view.bundle_from_processed(&refs) {
            Ok(bundle) => Ok(Some(bundle)),
            Err(Error::DegenerateWeek { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(32);
    for byte in &digest[..8] {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Loads observations and groups them into prepared region workers.
/// Regions that fail soft preconditions are skipped and logged.
pub fn build_workers(
    cfg: &PipelineConfig,
    log: &mut RunLog,
) -> Result<(TimeGrid, Vec<RegionWorker>)> {
    let observations = ingest::load_observations(&cfg.input)?;
    if observations.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no regions found in {}",
            cfg.input.display()
        )));
    }
    let mut min_date: Option<NaiveDate> = None;
    let mut max_date: Option<NaiveDate> = None;
    for series in &observations {
        for s in series.samples() {
            min_date = Some(min_date.map_or(s.date, |d| d.min(s.date)));
            max_date = Some(max_date.map_or(s.date, |d| d.max(s.date)));
        }
    }
    let (Some(min_date), Some(max_date)) = (min_date, max_date) else {
        return Err(Error::InvalidInput("observation files contain no samples".into()));
    };
    let grid = TimeGrid::covering(min_date, max_date, cfg.anchor_weekday)?;

    let regions = ingest::group_by_region(observations);
    let mut workers = Vec::new();
    for (region_id, pixels) in regions {
        let mut worker = RegionWorker::new(region_id.clone(), pixels, grid.clone(), cfg)?;
        match worker.prepare(log) {
            Ok(()) => workers.push(worker),
            Err(e) => {
                log.event(&region_id, "prepare", "INSUFFICIENT_HISTORY", &e.to_string());
            }
        }
    }
    if workers.is_empty() {
        return Err(Error::InvalidInput(
            "no region survived preprocessing".into(),
        ));
    }
    Ok((grid, workers))
}

/// Runs the forecast sweep for one region, appending records.
pub fn region_forecasts(
    worker: &RegionWorker,
    cfg: &PipelineConfig,
    log: &mut RunLog,
    records: &mut Vec<ForecastRecord>,
) -> Result<()> {
    let truth_bundle = worker
        .truth
        .as_ref()
        .expect("worker prepared before forecasting");
    let truth_index = truth_bundle.index(cfg.forecast_index);
    let grid_len = worker.grid().len();
    let burn_in = cfg.effective_burn_in();
    let max_lead = *cfg.leads.iter().max().expect("leads non-empty");
    if burn_in + 1 >= grid_len {
        log.event(
            &worker.region_id,
            "forecast",
            "INSUFFICIENT_HISTORY",
            "series shorter than burn-in",
        );
        return Ok(());
    }

    let gp_seed = derive_seed(cfg.seed, &format!("gp-forecast/{}", worker.region_id));
    let mut warm_start: Option<Vec<f64>> = None;
    let mut gp_fits_since_full = 0usize;

    let mut issue = burn_in;
    while issue < grid_len.saturating_sub(1) {
        let issue_date = worker.grid().slot_date(issue);
        let Some(bundle_f) = worker.forecast_bundle_at(issue)? else {
            log.event(
                &worker.region_id,
                "forecast",
                "GAP",
                &format!("issue {issue_date}: forecast-mode aggregate unavailable"),
            );
            issue += cfg.issue_stride;
            continue;
        };
        let series_f = bundle_f.index(cfg.forecast_index);
        let truth_at_issue = truth_index.series.value(issue);
        let clear_percent = (worker.pixel_total() > 0).then(|| {
            100.0 * worker.clear_counts[issue] as f64 / worker.pixel_total() as f64
        });

        let mut push_record = |lead: usize, method: Method, predicted: f64| {
            if let Some(truth) = truth_index
                .series
                .value(issue + lead)
                .filter(|_| issue + lead < grid_len)
            {
                records.push(ForecastRecord {
                    region_id: worker.region_id.clone(),
                    issue_date,
                    lead,
                    predicted,
                    truth,
                    method,
                    index: cfg.forecast_index,
                    truth_at_issue,
                    clear_percent,
                });
            }
        };

        for &method in &cfg.methods {
            match method {
                Method::Persistence => {
                    match ar::persistence_forecast(&series_f.series, issue) {
                        ForecastOutcome::Value(v) => {
                            for &lead in &cfg.leads {
                                push_record(lead, Method::Persistence, v);
                            }
                        }
                        ForecastOutcome::Skipped(reason) => {
                            log.event(
                                &worker.region_id,
                                "forecast",
                                &reason.to_string(),
                                &format!("issue {issue_date}: persistence"),
                            );
                        }
                    }
                }
                Method::Ar => {
                    for &lead in &cfg.leads {
                        if issue + lead >= grid_len {
                            continue;
                        }
                        let ar_cfg = ARConfig {
                            lead,
                            ..cfg.ar.clone()
                        };
                        match ar::ar_forecast(&series_f.series, issue, &ar_cfg)? {
                            ForecastOutcome::Value(v) => push_record(lead, Method::Ar, v),
                            ForecastOutcome::Skipped(reason) => {
                                log.event(
                                    &worker.region_id,
                                    "forecast",
                                    &reason.to_string(),
                                    &format!("issue {issue_date}: ar lead {lead}"),
                                );
                            }
                        }
                    }
                }
                Method::Gp => {
                    let mut opts = cfg.gp_options("gp-forecast");
                    opts.seed = gp_seed;
                    opts.warm_start = warm_start.clone();
                    // Hyperparameters drift slowly between consecutive issue
                    // dates: refit from the warm start alone most weeks, with
                    // a full multi-start refresh at a fixed cadence.
                    if warm_start.is_some() && gp_fits_since_full < 13 {
                        opts.restarts = 0;
                    }
                    let cap = (cfg.gp_max_train_weeks > 0).then_some(cfg.gp_max_train_weeks);
                    let leads: Vec<usize> = cfg
                        .leads
                        .iter()
                        .copied()
                        .filter(|l| issue + l < grid_len)
                        .collect();
                    if leads.is_empty() {
                        continue;
                    }
                    match gp::gp_forecast_at(series_f, issue, &leads, &opts, cap) {
                        Ok((GpForecastOutcome::Forecast(per_lead), model)) => {
                            if let Some(model) = model {
                                warm_start = Some(model.param_vector());
                            }
                            gp_fits_since_full = if opts.restarts == 0 {
                                gp_fits_since_full + 1
                            } else {
                                0
                            };
                            for (lead, mean, _std) in per_lead {
                                push_record(lead, Method::Gp, mean);
                            }
                        }
                        Ok((GpForecastOutcome::Skipped(reason), _)) => {
                            log.event(
                                &worker.region_id,
                                "forecast",
                                &reason.to_string(),
                                &format!("issue {issue_date}: gp"),
                            );
                        }
                        Err(e @ Error::FitFailure { .. }) => {
                            log.event(
                                &worker.region_id,
                                "forecast",
                                "FIT_FAILURE",
                                &format!("issue {issue_date}: gp: {e}"),
                            );
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        let _ = max_lead;
        issue += cfg.issue_stride;
    }
    Ok(())
}

/// Writes forecast records as CSV.
pub fn write_records(writer: impl std::io::Write, records: &[ForecastRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "region_id",
        "issue_date",
        "lead",
        "method",
        "index",
        "predicted",
        "truth",
        "truth_at_issue",
        "clear_percent",
    ])?;
    for r in records {
        w.write_record([
            r.region_id.as_str(),
            &r.issue_date.to_string(),
            &r.lead.to_string(),
            &r.method.to_string(),
            &r.index.to_string(),
            &format!("{}", r.predicted),
            &format!("{}", r.truth),
            &r.truth_at_issue.map(|v| format!("{v}")).unwrap_or_default(),
            &r.clear_percent.map(|v| format!("{v}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(reader: impl std::io::Read) -> Result<Vec<ForecastRecord>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut records = Vec::new();
    for (idx, row) in csv_reader.records().enumerate() {
        let line = idx + 2;
        let row = row?;
        let parse_f64 = |field: &str| -> Result<f64> {
            field.trim().parse().map_err(|e| Error::Parse {
                line,
                message: format!("bad number {field:?}: {e}"),
            })
        };
        let opt_f64 = |field: &str| -> Result<Option<f64>> {
            let t = field.trim();
            if t.is_empty() {
                Ok(None)
            } else {
                parse_f64(t).map(Some)
            }
        };
        records.push(ForecastRecord {
            region_id: row[0].to_string(),
            issue_date: NaiveDate::parse_from_str(row[1].trim(), "%Y-%m-%d").map_err(|e| {
                Error::Parse {
                    line,
                    message: format!("bad date {:?}: {e}", &row[1]),
                }
            })?,
            lead: row[2].trim().parse().map_err(|e| Error::Parse {
                line,
                message: format!("bad lead {:?}: {e}", &row[2]),
            })?,
            method: row[3].trim().parse()?,
            index: row[4].trim().parse()?,
            predicted: parse_f64(&row[5])?,
            truth: parse_f64(&row[6])?,
            truth_at_issue: opt_f64(&row[7])?,
            clear_percent: opt_f64(&row[8])?,
        });
    }
    Ok(records)
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

/// Writes the truth-side series and climatologies under `out/series/`.
pub fn write_series_outputs(cfg: &PipelineConfig, workers: &[RegionWorker]) -> Result<()> {
    let dir = cfg.output.join("series");
    ensure_dir(&dir)?;
    for worker in workers {
        let bundle = worker.truth.as_ref().expect("prepared");
        let region = &worker.region_id;
        let write = |name: &str, series: &WeeklySeries| -> Result<()> {
            let file = std::fs::File::create(dir.join(format!("{region}_{name}.csv")))?;
            ingest::write_regional_series(file, region, series)
        };
        write("ndvi", &bundle.ndvi)?;
        write("vci", &bundle.vci.series)?;
        write("vci3m", &bundle.vci3m.series)?;
        write("ndvi-anomaly", &bundle.anomaly.series)?;
        if let Some(clim) = &worker.regional_clim {
            let file = std::fs::File::create(dir.join(format!("{region}_climatology.csv")))?;
            indices::write_climatology(file, clim)?;
        } else if let Some(clim) = worker.pixel_clims.first() {
            // Pixel mode: persist the first pixel's climatology as a sample.
            let file = std::fs::File::create(dir.join(format!("{region}_climatology.csv")))?;
            indices::write_climatology(file, clim)?;
        }
    }
    Ok(())
}

/// Skill reports: one summary JSON plus plot-ready CSV tables.
pub fn write_reports(
    cfg: &PipelineConfig,
    records: &[ForecastRecord],
    workers: &[RegionWorker],
    log: &mut RunLog,
) -> Result<()> {
    let dir = cfg.output.join("reports");
    ensure_dir(&dir)?;

    let mut by_method_lead: BTreeMap<(Method, usize), Vec<ForecastRecord>> = BTreeMap::new();
    for r in records {
        by_method_lead
            .entry((r.method, r.lead))
            .or_default()
            .push(r.clone());
    }

    // Headline skill per method and lead.
    {
        let mut summary = serde_json::Map::new();
        let mut skill_csv = csv::Writer::from_writer(std::fs::File::create(
            dir.join("skill_by_lead.csv"),
        )?);
        skill_csv.write_record([
            "method",
            "lead",
            "records",
            "r2",
            "s",
            "rmse",
            "slope",
            "slope_stderr",
            "intercept",
            "intercept_stderr",
        ])?;
        for ((method, lead), recs) in &by_method_lead {
            if recs.len() < 3 {
                continue;
            }
            let s = evaluate::summarize(recs)?;
            let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
            skill_csv.write_record([
                method.to_string(),
                lead.to_string(),
                s.records.to_string(),
                fmt_opt(s.r2),
                fmt_opt(s.s),
                format!("{}", s.rmse),
                fmt_opt(s.bias.map(|b| b.slope)),
                fmt_opt(s.bias.map(|b| b.slope_stderr)),
                fmt_opt(s.bias.map(|b| b.intercept)),
                fmt_opt(s.bias.map(|b| b.intercept_stderr)),
            ])?;
            summary.insert(
                format!("{method}/lead{lead:02}"),
                serde_json::to_value(&s).expect("summary serializes"),
            );
        }
        skill_csv.flush()?;
        let text = serde_json::to_string_pretty(&serde_json::Value::Object(summary))
            .expect("summary document serializes");
        std::fs::write(dir.join("summary.json"), text + "\n")?;
    }

    // ROC and transition sweeps per method/lead on the drought index.
    let grid = evaluate::default_binarization_grid(cfg.drought_threshold);
    for ((method, lead), recs) in &by_method_lead {
        if recs.iter().all(|r| r.index != IndexKind::Vci3m) {
            continue;
        }
        match evaluate::roc_curve(recs, cfg.drought_threshold, &grid) {
            Ok(points) => {
                let mut w = csv::Writer::from_writer(std::fs::File::create(
                    dir.join(format!("roc_{method}_lead{lead:02}.csv")),
                )?);
                w.write_record([
                    "threshold",
                    "hit_rate",
                    "false_alarm_rate",
                    "tp",
                    "fp",
                    "tn",
                    "fn",
                ])?;
                for p in &points {
                    w.write_record([
                        format!("{}", p.threshold),
                        format!("{}", p.hit_rate),
                        format!("{}", p.false_alarm_rate),
                        p.tp.to_string(),
                        p.fp.to_string(),
                        p.tn.to_string(),
                        p.fn_.to_string(),
                    ])?;
                }
                w.flush()?;
            }
            Err(e) => log.event("-", "roc", "DEGENERATE", &format!("{method} lead {lead}: {e}")),
        }
        match evaluate::transition_skill(recs, cfg.drought_threshold, &grid) {
            Ok(points) => {
                let mut w = csv::Writer::from_writer(std::fs::File::create(
                    dir.join(format!("transition_{method}_lead{lead:02}.csv")),
                )?);
                w.write_record([
                    "threshold",
                    "hit_rate",
                    "false_alarm_ratio",
                    "predicted_transitions",
                    "actual_transitions",
                ])?;
                for p in &points {
                    w.write_record([
                        format!("{}", p.threshold),
                        format!("{}", p.hit_rate),
                        p.false_alarm_ratio.map(|v| format!("{v}")).unwrap_or_default(),
                        p.predicted_transitions.to_string(),
                        p.actual_transitions.to_string(),
                    ])?;
                }
                w.flush()?;
            }
            Err(e) => log.event(
                "-",
                "transition",
                "DEGENERATE",
                &format!("{method} lead {lead}: {e}"),
            ),
        }
    }

    // RMSE breakdowns in long format.
    for (name, axis) in [
        ("rmse_by_category.csv", evaluate::Breakdown::Category),
        ("rmse_by_week.csv", evaluate::Breakdown::WeekOfYear),
        ("rmse_by_region.csv", evaluate::Breakdown::Region),
    ] {
        let mut w = csv::Writer::from_writer(std::fs::File::create(dir.join(name))?);
        w.write_record(["method", "lead", "bucket", "rmse", "records"])?;
        for ((method, lead), recs) in &by_method_lead {
            for (bucket, rmse, n) in evaluate::breakdown_rmse(recs, axis)? {
                w.write_record([
                    method.to_string(),
                    lead.to_string(),
                    bucket,
                    format!("{rmse}"),
                    n.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }

    // Method vs persistence on matched pairs.
    {
        let mut w =
            csv::Writer::from_writer(std::fs::File::create(dir.join("persistence_ratio.csv"))?);
        w.write_record(["method", "lead", "ratio_pct", "matched"])?;
        for ((method, lead), recs) in &by_method_lead {
            if *method == Method::Persistence {
                continue;
            }
            let Some(pers) = by_method_lead.get(&(Method::Persistence, *lead)) else {
                continue;
            };
            match evaluate::persistence_ratio(recs, pers) {
                Ok(ratio) => {
                    w.write_record([
                        method.to_string(),
                        lead.to_string(),
                        ratio
                            .ratio
                            .value()
                            .map(|v| format!("{v}"))
                            .unwrap_or_default(),
                        ratio.matched.to_string(),
                    ])?;
                }
                Err(e) => log.event(
                    "-",
                    "persistence-ratio",
                    "DEGENERATE",
                    &format!("{method} lead {lead}: {e}"),
                ),
            }
        }
        w.flush()?;
    }

    // Coverage bookkeeping per region at each lead.
    {
        let truth_series: Vec<IndexSeries> = workers
            .iter()
            .map(|w| w.truth.as_ref().expect("prepared").index(cfg.forecast_index).clone())
            .collect();
        let mut w = csv::Writer::from_writer(std::fs::File::create(dir.join("coverage.csv"))?);
        w.write_record(["lead", "region_id", "assessable", "possible", "pct"])?;
        for &lead in &cfg.leads {
            let ar_cfg = ARConfig {
                lead,
                ..cfg.ar.clone()
            };
            for row in evaluate::coverage_report(&truth_series, &ar_cfg, cfg.effective_burn_in())? {
                w.write_record([
                    lead.to_string(),
                    row.region_id,
                    row.assessable.to_string(),
                    row.possible.to_string(),
                    format!("{}", row.pct_weeks_forecastable),
                ])?;
            }
        }
        w.flush()?;
    }

    // Clear-pixel diagnostic for the AR records (when metadata is present).
    {
        let ar_records: Vec<ForecastRecord> = records
            .iter()
            .filter(|r| r.method == Method::Ar && r.clear_percent.is_some())
            .cloned()
            .collect();
        if !ar_records.is_empty() {
            let report = evaluate::clear_pixel_correlation(&ar_records)?;
            let mut w =
                csv::Writer::from_writer(std::fs::File::create(dir.join("clear_pixel.csv"))?);
            w.write_record(["clear_percent", "rmse", "records"])?;
            for (pct, rmse, n) in &report.buckets {
                w.write_record([pct.to_string(), format!("{rmse}"), n.to_string()])?;
            }
            w.flush()?;
            let doc = serde_json::json!({
                "pearson_r": report.pearson_r,
                "buckets": report.buckets.len(),
            });
            std::fs::write(
                dir.join("clear_pixel.json"),
                serde_json::to_string_pretty(&doc).expect("serializes") + "\n",
            )?;
        }
    }
    Ok(())
}

/// Outcome summary of a full pipeline run.
#[derive(Debug)]
pub struct RunReport {
    pub regions: usize,
    pub records: usize,
    pub cache_hits: Vec<String>,
    pub output: PathBuf,
}

fn stage_key_path(cfg: &PipelineConfig, stage: &str) -> PathBuf {
    cfg.output.join("cache").join(format!("{stage}.key"))
}

fn stage_cached(cfg: &PipelineConfig, stage: &str, key: &str) -> bool {
    stage_key_path(cfg, stage)
        .exists()
        .then(|| std::fs::read_to_string(stage_key_path(cfg, stage)).ok())
        .flatten()
        .map_or(false, |k| k.trim() == key)
}

fn mark_stage(cfg: &PipelineConfig, stage: &str, key: &str) -> Result<()> {
    ensure_dir(&cfg.output.join("cache"))?;
    std::fs::write(stage_key_path(cfg, stage), format!("{key}\n"))?;
    Ok(())
}

/// Executes the full pipeline: ingest, preprocessing, indices, forecast
/// sweep, and reports. Stages completed by an earlier run with the same
/// config+input hash are reused from disk.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    ensure_dir(&cfg.output)?;
    let input_bytes = std::fs::read(&cfg.input)?;
    let key = sha256_hex(&[cfg.canonical_string().as_bytes(), &input_bytes]);
    let mut log = RunLog::default();
    let mut cache_hits = Vec::new();

    let records_path = cfg.output.join("forecasts").join("records.csv");
    let records;
    let regions;

    if stage_cached(cfg, "records", &key) && records_path.exists() {
        cache_hits.push("records".into());
        records = read_records(std::fs::File::open(&records_path)?)?;
        let (_grid, workers) = build_workers(cfg, &mut log)?;
        regions = workers.len();
        write_reports(cfg, &records, &workers, &mut log)?;
    } else {
        let (_grid, workers) = build_workers(cfg, &mut log)?;
        regions = workers.len();
        write_series_outputs(cfg, &workers)?;
        mark_stage(cfg, "series", &key)?;

        let mut collected = Vec::new();
        for worker in &workers {
            region_forecasts(worker, cfg, &mut log, &mut collected)?;
        }
        collected.sort_by(|a, b| {
            (a.region_id.as_str(), a.issue_date, a.lead, a.method).cmp(&(
                b.region_id.as_str(),
                b.issue_date,
                b.lead,
                b.method,
            ))
        });
        ensure_dir(&cfg.output.join("forecasts"))?;
        write_records(std::fs::File::create(&records_path)?, &collected)?;
        mark_stage(cfg, "records", &key)?;
        records = collected;
        write_reports(cfg, &records, &workers, &mut log)?;
    }
    mark_stage(cfg, "reports", &key)?;

    ensure_dir(&cfg.output.join("logs"))?;
    log.write_to(&cfg.output.join("logs").join("run.log"))?;

    // Echo the effective config for provenance.
    std::fs::write(cfg.output.join("config.echo"), cfg.canonical_string())?;
    Ok(RunReport {
        regions,
        records: records.len(),
        cache_hits,
        output: cfg.output.clone(),
    })
}

/// Truth-side VCI3M series for every region (used by the granger stage).
pub fn truth_vci3m(cfg: &PipelineConfig, log: &mut RunLog) -> Result<Vec<IndexSeries>> {
    let (_grid, workers) = build_workers(cfg, log)?;
    Ok(workers
        .iter()
        .map(|w| w.truth.as_ref().expect("prepared").vci3m.clone())
        .collect())
}
