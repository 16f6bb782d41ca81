//! Flat key-value configuration: file parsing, CLI overrides, the typed
//! pipeline configuration, and named sub-seed derivation.
//!
//! Config files hold one `key = value` pair per line; `#` starts a comment.
//! Every key can be overridden by a CLI flag of the same name.

use crate::ar::{ARConfig, GrangerConfig};
use crate::error::{Error, Result};
use crate::evaluate::Method;
use crate::gapfill::{GapFillConfig, Interpolator};
use crate::gp::optimize::AdamOptions;
use crate::gp::GpFitOptions;
use crate::indices::DegenerateWeekPolicy;
use crate::series::IndexKind;
use crate::time::parse_weekday;
use chrono::Weekday;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;

/// Ordered key-value map; later inserts (overrides) win.
pub type ConfigMap = BTreeMap<String, String>;

pub fn parse_config_text(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "config line {}: expected key = value, got {raw:?}",
                idx + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn load_config_file(path: &std::path::Path) -> Result<ConfigMap> {
    parse_config_text(&std::fs::read_to_string(path)?)
}

/// Stable sub-seed derived from the root seed and a stage name.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Which preprocessing branch feeds the indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineStyle {
    /// Weekly compositing, bounded quadratic interpolation, Savitzky-Golay.
    ModisInterp,
    /// Per-pixel GP gap-filling in forecast/non-forecast modes.
    LandsatGp,
}

impl std::fmt::Display for PipelineStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PipelineStyle::ModisInterp => write!(f, "modis-interp"),
            PipelineStyle::LandsatGp => write!(f, "landsat-gp"),
        }
    }
}

impl std::str::FromStr for PipelineStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "modis-interp" | "modis_interp" | "modis" => Ok(PipelineStyle::ModisInterp),
            "landsat-gp" | "landsat_gp" | "landsat" => Ok(PipelineStyle::LandsatGp),
            other => Err(Error::Config(format!("unrecognized style {other:?}"))),
        }
    }
}

/// Whether VCI climatology is built per pixel or on the regional aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClimatologyMode {
    Pixel,
    Regional,
}

impl std::str::FromStr for ClimatologyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pixel" => Ok(ClimatologyMode::Pixel),
            "regional" => Ok(ClimatologyMode::Regional),
            other => Err(Error::Config(format!(
                "unrecognized climatology mode {other:?}"
            ))),
        }
    }
}

/// Full pipeline configuration. Every field maps to a config key of the
/// same (kebab-case) name.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub style: PipelineStyle,
    pub seed: u64,
    pub leads: Vec<usize>,
    pub anchor_weekday: Weekday,
    pub min_pixels: usize,
    pub gapfill: GapFillConfig,
    /// Base AR settings; the lead is filled in per forecast.
    pub ar: ARConfig,
    pub gp_kernel: String,
    pub gp_restarts: usize,
    pub gp_max_iters: usize,
    /// Cap on GP training history per forecast fit; 0 means unlimited.
    pub gp_max_train_weeks: usize,
    pub forecast_index: IndexKind,
    pub methods: Vec<Method>,
    pub issue_stride: usize,
    /// First assessable issue slot; defaults to train-length + 52.
    pub burn_in: Option<usize>,
    pub climatology_mode: ClimatologyMode,
    /// Slots (weeks) of history reserved as the climatology reference;
    /// defaults to the burn-in.
    pub climatology_reference_end: Option<usize>,
    pub degenerate_week: DegenerateWeekPolicy,
    pub drought_threshold: f64,
    pub granger: GrangerConfig,
    pub granger_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output: PathBuf::new(),
            style: PipelineStyle::ModisInterp,
            seed: 42,
            leads: (1..=10).collect(),
            anchor_weekday: Weekday::Sat,
            min_pixels: 25,
            gapfill: GapFillConfig::default(),
            ar: ARConfig::default(),
            gp_kernel: "rbf".into(),
            gp_restarts: 5,
            gp_max_iters: 120,
            gp_max_train_weeks: 312,
            forecast_index: IndexKind::Vci3m,
            methods: vec![Method::Ar, Method::Gp, Method::Persistence],
            issue_stride: 1,
            burn_in: None,
            climatology_mode: ClimatologyMode::Pixel,
            climatology_reference_end: None,
            degenerate_week: DegenerateWeekPolicy::Error,
            drought_threshold: 35.0,
            granger: GrangerConfig::default(),
            granger_threshold: 5.0,
        }
    }
}

impl PipelineConfig {
    /// First assessable issue slot.
    pub fn effective_burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.ar.train_length + 52)
    }

    /// Last slot (exclusive) of the climatology reference window.
    pub fn effective_reference_end(&self) -> usize {
        self.climatology_reference_end
            .unwrap_or_else(|| self.effective_burn_in())
    }

    /// GP fit options for forecasting, seeded from the run seed.
    pub fn gp_options(&self, name: &str) -> GpFitOptions {
        GpFitOptions {
            restarts: self.gp_restarts,
            adam: AdamOptions {
                max_iters: self.gp_max_iters,
                ..AdamOptions::default()
            },
            seed: derive_seed(self.seed, name),
            warm_start: None,
        }
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (key, value) in map {
            cfg.apply(key, value)?;
        }
        Ok(cfg)
    }

    /// Applies one key-value pair; unknown keys are an error.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|e| Error::Config(format!("{key}: bad count {v:?}: {e}")))
        };
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|e| Error::Config(format!("{key}: bad number {v:?}: {e}")))
        };
        let parse_bool = |v: &str| -> Result<bool> {
            match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                other => Err(Error::Config(format!("{key}: bad flag {other:?}"))),
            }
        };
        match key {
            "input" => self.input = PathBuf::from(value),
            "output" => self.output = PathBuf::from(value),
            "style" => self.style = value.parse()?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|e| Error::Config(format!("seed: {e}")))?
            }
            "leads" => {
                let mut leads = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    leads.push(parse_usize(part)?);
                }
                if leads.is_empty() || leads.iter().any(|l| *l < 1) {
                    return Err(Error::Config("leads must be a non-empty list of >= 1".into()));
                }
                leads.sort_unstable();
                leads.dedup();
                self.leads = leads;
            }
            "anchor-weekday" => self.anchor_weekday = parse_weekday(value)?,
            "min-pixels" => {
                self.min_pixels = parse_usize(value)?;
                if self.min_pixels < 1 {
                    return Err(Error::Config("min-pixels must be >= 1".into()));
                }
            }
            "l-max" => self.gapfill.l_max = parse_usize(value)?,
            "interpolator" => self.gapfill.interpolator = value.parse::<Interpolator>()?,
            "savgol-window" => self.gapfill.savgol_window = parse_usize(value)?,
            "savgol-order" => self.gapfill.savgol_order = parse_usize(value)?,
            "order" => self.ar.order = parse_usize(value)?,
            "train-length" => self.ar.train_length = parse_usize(value)?,
            "demean" => self.ar.demean = parse_bool(value)?,
            "strict-window" => self.ar.strict_window = parse_bool(value)?,
            "kernel" => {
                crate::gp::Kernel::parse(value)?; // validate now
                self.gp_kernel = value.to_string();
            }
            "restarts" => self.gp_restarts = parse_usize(value)?.max(1),
            "gp-max-iters" => self.gp_max_iters = parse_usize(value)?.max(1),
            "gp-max-train-weeks" => self.gp_max_train_weeks = parse_usize(value)?,
            "index" => self.forecast_index = value.parse()?,
            "methods" => {
                let mut methods = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    if !part.is_empty() {
                        methods.push(part.parse::<Method>()?);
                    }
                }
                if methods.is_empty() {
                    return Err(Error::Config("methods must be non-empty".into()));
                }
                methods.sort_unstable();
                methods.dedup();
                self.methods = methods;
            }
            "issue-stride" => self.issue_stride = parse_usize(value)?.max(1),
            "burn-in" => self.burn_in = Some(parse_usize(value)?),
            "climatology-mode" => self.climatology_mode = value.parse()?,
            "climatology-reference-end" => {
                self.climatology_reference_end = Some(parse_usize(value)?)
            }
            "degenerate-week" => {
                self.degenerate_week = match value.to_ascii_lowercase().as_str() {
                    "error" => DegenerateWeekPolicy::Error,
                    "map50" | "midpoint" => DegenerateWeekPolicy::MapToMidpoint,
                    other => {
                        return Err(Error::Config(format!(
                            "degenerate-week must be error or map50, got {other:?}"
                        )))
                    }
                }
            }
            "drought-threshold" => self.drought_threshold = parse_f64(value)?,
            "granger-threshold" => self.granger_threshold = parse_f64(value)?,
            "granger-lags" => self.granger.source_lags = parse_usize(value)?.max(1),
            "granger-lead" => self.granger.lead = parse_usize(value)?.max(1),
            "granger-stride" => self.granger.stride = parse_usize(value)?.max(1),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.gapfill.validate()?;
        self.ar.validate()?;
        if self.input.as_os_str().is_empty() {
            return Err(Error::Config("input path is required".into()));
        }
        if self.output.as_os_str().is_empty() {
            return Err(Error::Config("output path is required".into()));
        }
        Ok(())
    }

    /// Canonical one-line-per-key rendering used for cache keys.
    pub fn canonical_string(&self) -> String {
        let leads: Vec<String> = self.leads.iter().map(|l| l.to_string()).collect();
        let methods: Vec<String> = self.methods.iter().map(|m| m.to_string()).collect();
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("style", self.style.to_string());
        push("seed", self.seed.to_string());
        push("leads", leads.join(","));
        push("anchor-weekday", format!("{:?}", self.anchor_weekday));
        push("min-pixels", self.min_pixels.to_string());
        push("l-max", self.gapfill.l_max.to_string());
        push("interpolator", self.gapfill.interpolator.to_string());
        push("savgol-window", self.gapfill.savgol_window.to_string());
        push("savgol-order", self.gapfill.savgol_order.to_string());
        push("order", self.ar.order.to_string());
        push("train-length", self.ar.train_length.to_string());
        push("demean", self.ar.demean.to_string());
        push("strict-window", self.ar.strict_window.to_string());
        push("kernel", self.gp_kernel.clone());
        push("restarts", self.gp_restarts.to_string());
        push("gp-max-iters", self.gp_max_iters.to_string());
        push("gp-max-train-weeks", self.gp_max_train_weeks.to_string());
        push("index", self.forecast_index.to_string());
        push("methods", methods.join(","));
        push("issue-stride", self.issue_stride.to_string());
        push("burn-in", self.effective_burn_in().to_string());
        push(
            "climatology-mode",
            format!("{:?}", self.climatology_mode).to_lowercase(),
        );
        push(
            "climatology-reference-end",
            self.effective_reference_end().to_string(),
        );
        push(
            "degenerate-week",
            format!("{:?}", self.degenerate_week).to_lowercase(),
        );
        push("drought-threshold", self.drought_threshold.to_string());
        push("granger-threshold", self.granger_threshold.to_string());
        push("granger-lags", self.granger.source_lags.to_string());
        push("granger-lead", self.granger.lead.to_string());
        push("granger-stride", self.granger.stride.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments_and_overrides() {
        let text = "\
# pipeline settings
style = modis-interp
seed = 7
leads = 2, 4, 6
l-max = 4   # shorter than default
";
        let map = parse_config_text(text).unwrap();
        let mut cfg = PipelineConfig::from_map(&map).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.leads, vec![2, 4, 6]);
        assert_eq!(cfg.gapfill.l_max, 4);
        // CLI-style override by the same key name.
        cfg.apply("l-max", "6").unwrap();
        assert_eq!(cfg.gapfill.l_max, 6);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(parse_config_text("just words").is_err());
        let map = parse_config_text("no-such-key = 1").unwrap();
        assert!(PipelineConfig::from_map(&map).is_err());
        let map = parse_config_text("leads = 0").unwrap();
        assert!(PipelineConfig::from_map(&map).is_err());
        let map = parse_config_text("kernel = gauss").unwrap();
        assert!(PipelineConfig::from_map(&map).is_err());
    }

    #[test]
    fn derive_seed_is_stable_and_name_sensitive() {
        let a = derive_seed(42, "gp-forecast");
        let b = derive_seed(42, "gp-forecast");
        let c = derive_seed(42, "holdout");
        let d = derive_seed(43, "gp-forecast");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn canonical_string_reflects_overrides() {
        let mut cfg = PipelineConfig::default();
        let before = cfg.canonical_string();
        cfg.apply("seed", "99").unwrap();
        let after = cfg.canonical_string();
        assert_ne!(before, after);
        assert!(after.contains("seed=99"));
    }
}
