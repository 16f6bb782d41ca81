//! Deterministic synthetic observation generator: seasonal regional NDVI
//! with AR(1) weather, per-pixel noise, a seasonal cloud-gap process,
//! optional inter-region coupling, and injected drought events. Emits the
//! ingest CSV plus a sidecar ground-truth file.

use crate::error::{Error, Result};
use crate::time::TimeGrid;
use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DroughtEvent {
    pub region: usize,
    pub start_week: usize,
    pub length_weeks: usize,
    /// Multiplicative NDVI depression, e.g. 0.3 for a 30% drop.
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Coupling {
    pub source: usize,
    pub target: usize,
    pub coefficient: f64,
    pub lag_weeks: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    pub regions: usize,
    pub years: usize,
    pub pixels_per_region: usize,
    /// Grid start; keep this on the intended anchor weekday.
    pub start_date: NaiveDate,
    pub base_ndvi: f64,
    pub seasonal_amplitude: f64,
    /// AR(1) persistence of the regional weather component.
    pub ar_rho: f64,
    /// Innovation std of the regional weather component.
    pub process_noise: f64,
    /// Per-pixel, per-observation noise std.
    pub pixel_noise: f64,
    /// Baseline probability a pixel-week is lost to cloud.
    pub gap_base_rate: f64,
    /// Seasonal modulation of the cloud rate, in [0, 1).
    pub gap_seasonal_strength: f64,
    /// Portion of cloudy pixel-weeks that still emit a row flagged `bad`.
    pub bad_quality_rate: f64,
    pub droughts: Vec<DroughtEvent>,
    pub couplings: Vec<Coupling>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            regions: 3,
            years: 10,
            pixels_per_region: 30,
            start_date: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
            base_ndvi: 0.35,
            seasonal_amplitude: 0.12,
            ar_rho: 0.9,
            process_noise: 0.012,
            pixel_noise: 0.025,
            gap_base_rate: 0.12,
            gap_seasonal_strength: 0.5,
            bad_quality_rate: 0.3,
            droughts: Vec::new(),
            couplings: Vec::new(),
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.regions == 0 || self.years == 0 || self.pixels_per_region == 0 {
            return Err(Error::Config(
                "regions, years, and pixels_per_region must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gap_base_rate) {
            return Err(Error::Config("gap_base_rate must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.gap_seasonal_strength) {
            return Err(Error::Config("gap_seasonal_strength must be in [0, 1)".into()));
        }
        if self.ar_rho.abs() >= 1.0 {
            return Err(Error::Config("ar_rho must satisfy |rho| < 1".into()));
        }
        for d in &self.droughts {
            if d.region >= self.regions {
                return Err(Error::Config(format!(
                    "drought event references region {} of {}",
                    d.region, self.regions
                )));
            }
            if !(0.0..1.0).contains(&d.depth) {
                return Err(Error::Config("drought depth must be in [0, 1)".into()));
            }
        }
        for c in &self.couplings {
            if c.source >= self.regions || c.target >= self.regions || c.source == c.target {
                return Err(Error::Config(format!(
                    "coupling {} -> {} invalid for {} regions",
                    c.source, c.target, self.regions
                )));
            }
            if c.lag_weeks == 0 {
                return Err(Error::Config("coupling lag must be >= 1 week".into()));
            }
        }
        Ok(())
    }

    pub fn weeks(&self) -> usize {
        self.years * 52
    }

    pub fn region_id(&self, r: usize) -> String {
        format!("region{r:02}")
    }
}

/// Ground truth retained alongside the generated observations.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Sidecar {
    pub start_date: NaiveDate,
    pub weeks: usize,
    pub regions: Vec<String>,
    /// Gap-free latent regional NDVI, one vector per region.
    pub truth_ndvi: Vec<Vec<f64>>,
    /// Pixels with at least one good observation, per region and week.
    pub clear_counts: Vec<Vec<usize>>,
    pub pixels_per_region: usize,
    pub droughts: Vec<DroughtEvent>,
    pub couplings: Vec<Coupling>,
    pub seed: u64,
}

/// Latent regional NDVI paths (with a stationary burn-in for the AR part).
fn latent_regional(spec: &SynthSpec, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    let weeks = spec.weeks();
    let burn = 208usize;
    let normal = Normal::new(0.0, spec.process_noise).expect("positive std");
    let mut weather = vec![vec![0.0f64; burn + weeks]; spec.regions];
    let max_lag = spec
        .couplings
        .iter()
        .map(|c| c.lag_weeks)
        .max()
        .unwrap_or(0);
    for t in 1..burn + weeks {
        for r in 0..spec.regions {
            let mut next = spec.ar_rho * weather[r][t - 1] + normal.sample(rng);
            if t > max_lag {
                for c in spec.couplings.iter().filter(|c| c.target == r) {
                    next += c.coefficient * weather[c.source][t - c.lag_weeks];
                }
            }
            weather[r][t] = next;
        }
    }

    let mut latent = vec![vec![0.0f64; weeks]; spec.regions];
    for r in 0..spec.regions {
        // Region-specific phase so regions are not trivially identical.
        let phase = r as f64 * 0.37;
        for t in 0..weeks {
            let season = (2.0 * std::f64::consts::PI * (t as f64) / 52.0 + phase).sin();
            let mut v = spec.base_ndvi + spec.seasonal_amplitude * season + weather[r][burn + t];
            for d in spec.droughts.iter().filter(|d| d.region == r) {
                if t >= d.start_week && t < d.start_week + d.length_weeks {
                    v *= 1.0 - d.depth;
                }
            }
            latent[r][t] = v.clamp(0.02, 0.95);
        }
    }
    latent
}

/// Seasonal cloud probability for a week-of-cycle; two wet seasons a year.
fn cloud_probability(spec: &SynthSpec, week: usize) -> f64 {
    let phase = 2.0 * std::f64::consts::PI * 2.0 * (week % 52) as f64 / 52.0;
    (spec.gap_base_rate * (1.0 + spec.gap_seasonal_strength * phase.sin())).clamp(0.0, 0.95)
}

/// Generates the observation CSV and sidecar, writing both to the given
/// writers. Deterministic for a fixed spec.
pub fn generate(
    spec: &SynthSpec,
    obs_writer: impl Write,
    sidecar_writer: impl Write,
) -> Result<Sidecar> {
    spec.validate()?;
    let weeks = spec.weeks();
    let grid = TimeGrid::new(spec.start_date, weeks)?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let latent = latent_regional(spec, &mut rng);

    let pixel_noise = Normal::new(0.0, spec.pixel_noise).expect("positive std");
    let mut clear_counts = vec![vec![0usize; weeks]; spec.regions];

    let mut w = csv::Writer::from_writer(obs_writer);
    w.write_record(["pixel_id", "region_id", "date", "ndvi", "quality"])?;
    for r in 0..spec.regions {
        let region_id = spec.region_id(r);
        for p in 0..spec.pixels_per_region {
            let pixel_id = format!("{region_id}-p{p:03}");
            for t in 0..weeks {
                let cloudy = rng.gen::<f64>() < cloud_probability(spec, t);
                // Sample lands somewhere inside the slot's 7-day window.
                let day_offset = rng.gen_range(0..7i64);
                let date = grid.slot_date(t) - Duration::days(day_offset);
                let value = (latent[r][t] + pixel_noise.sample(&mut rng)).clamp(-1.0, 1.0);
                if cloudy {
                    if rng.gen::<f64>() < spec.bad_quality_rate {
                        w.write_record([
                            pixel_id.as_str(),
                            region_id.as_str(),
                            &date.to_string(),
                            &format!("{value}"),
                            "bad",
                        ])?;
                    }
                    continue;
                }
                clear_counts[r][t] += 1;
                w.write_record([
                    pixel_id.as_str(),
                    region_id.as_str(),
                    &date.to_string(),
                    &format!("{value}"),
                    "good",
                ])?;
            }
        }
    }
    w.flush()?;

    let sidecar = Sidecar {
        start_date: spec.start_date,
        weeks,
        regions: (0..spec.regions).map(|r| spec.region_id(r)).collect(),
        truth_ndvi: latent,
        clear_counts,
        pixels_per_region: spec.pixels_per_region,
        droughts: spec.droughts.clone(),
        couplings: spec.couplings.clone(),
        seed: spec.seed,
    };
    let mut sw = sidecar_writer;
    serde_json::to_writer_pretty(&mut sw, &sidecar)
        .map_err(|e| Error::InvalidInput(format!("sidecar serialization: {e}")))?;
    sw.write_all(b"\n")?;
    Ok(sidecar)
}

/// Writes `observations.csv` and `sidecar.json` into a directory.
pub fn generate_into_dir(spec: &SynthSpec, dir: &std::path::Path) -> Result<Sidecar> {
    std::fs::create_dir_all(dir)?;
    let obs = std::fs::File::create(dir.join("observations.csv"))?;
    let side = std::fs::File::create(dir.join("sidecar.json"))?;
    generate(spec, obs, side)
}
