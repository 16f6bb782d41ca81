//! Temporal gap-filling and smoothing for weekly series.
//!
//! Internal gap runs up to `l_max` weeks are filled by a configurable
//! interpolator; longer runs and leading/trailing gaps stay missing.
//! Smoothing is Savitzky-Golay with truncated windows at run edges, and
//! never crosses an unfilled gap.

use crate::error::{Error, Result};
use crate::gp::{self, GpFitOptions};
use crate::series::WeeklySeries;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Interpolator {
    Quadratic,
    Linear,
    Cubic,
    LastValue,
    MeanValue,
    Gp,
}

impl Interpolator {
    /// Minimum present values a series needs overall before filling.
    pub fn min_support(&self) -> usize {
        match self {
            Interpolator::Quadratic => 3,
            Interpolator::Linear => 2,
            Interpolator::Cubic => 4,
            Interpolator::LastValue | Interpolator::MeanValue => 1,
            Interpolator::Gp => 10,
        }
    }

    pub fn all() -> [Interpolator; 6] {
        [
            Interpolator::Gp,
            Interpolator::Linear,
            Interpolator::Quadratic,
            Interpolator::Cubic,
            Interpolator::LastValue,
            Interpolator::MeanValue,
        ]
    }
}

impl std::fmt::Display for Interpolator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Interpolator::Quadratic => "quadratic",
            Interpolator::Linear => "linear",
            Interpolator::Cubic => "cubic",
            Interpolator::LastValue => "last-value",
            Interpolator::MeanValue => "mean-value",
            Interpolator::Gp => "gp",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Interpolator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quadratic" => Ok(Interpolator::Quadratic),
            "linear" => Ok(Interpolator::Linear),
            "cubic" => Ok(Interpolator::Cubic),
            "last-value" | "last_value" => Ok(Interpolator::LastValue),
            "mean-value" | "mean_value" => Ok(Interpolator::MeanValue),
            "gp" => Ok(Interpolator::Gp),
            other => Err(Error::Config(format!(
                "unrecognized interpolator {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GapFillConfig {
    /// Longest gap run, in weeks, that will be interpolated.
    pub l_max: usize,
    pub interpolator: Interpolator,
    /// Savitzky-Golay window length in weeks; odd and > `savgol_order`.
    pub savgol_window: usize,
    pub savgol_order: usize,
    /// Fit budget for the GP interpolator (unused by the polynomial ones).
    pub gp_options: GpFitOptions,
}

impl Default for GapFillConfig {
    fn default() -> Self {
        Self {
            l_max: 6,
            interpolator: Interpolator::Quadratic,
            savgol_window: 7,
            savgol_order: 2,
            gp_options: GpFitOptions::quick(),
        }
    }
}

impl GapFillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_max < 1 {
            return Err(Error::Config("l_max must be >= 1".into()));
        }
        if self.savgol_window % 2 == 0 || self.savgol_window <= self.savgol_order {
            return Err(Error::Config(format!(
                "savgol window {} must be odd and greater than order {}",
                self.savgol_window, self.savgol_order
            )));
        }
        Ok(())
    }
}

/// A gap run the interpolator could not fill, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FillWarning {
    pub start_slot: usize,
    pub length: usize,
    pub reason: String,
}

/// Least squares polynomial coefficients (constant term first).
fn polyfit(ts: &[f64], ys: &[f64], order: usize) -> Vec<f64> {
    debug_assert!(ts.len() == ys.len() && ts.len() > order);
    let design = DMatrix::from_fn(ts.len(), order + 1, |i, j| ts[i].powi(j as i32));
    let rhs = DVector::from_column_slice(ys);
    design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .expect("svd solve on tiny polynomial system")
        .iter()
        .copied()
        .collect()
}

fn polyval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

/// Nearest `count` present slots strictly left of `slot`, nearest first.
fn present_left(series: &WeeklySeries, slot: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut i = slot;
    while i > 0 && out.len() < count {
        i -= 1;
        if series.value(i).is_some() {
            out.push(i);
        }
    }
    out
}

/// Nearest `count` present slots at or right of `slot`, nearest first.
fn present_right(series: &WeeklySeries, slot: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut i = slot;
    while i < series.len() && out.len() < count {
        if series.value(i).is_some() {
            out.push(i);
        }
        i += 1;
    }
    out
}

/// Fills internal gap runs of length <= `cfg.l_max` with the configured
/// interpolator. Present values are never modified. Runs the interpolator
/// cannot support are left unfilled and reported as warnings.
pub fn fill_gaps(
    series: &WeeklySeries,
    cfg: &GapFillConfig,
) -> Result<(WeeklySeries, Vec<FillWarning>)> {
    cfg.validate()?;
    let present = series.present_count();
    if present < cfg.interpolator.min_support() {
        return Err(Error::InvalidInput(format!(
            "series has {present} present value(s); {} needs at least {}",
            cfg.interpolator,
            cfg.interpolator.min_support()
        )));
    }

    let first = series.first_present().expect("present >= 1");
    let last = series.last_present().expect("present >= 1");
    let mut filled = series.clone();
    let mut warnings = Vec::new();

    // GP fills all eligible runs from one posterior over the present values.
    let gp_posterior = if cfg.interpolator == Interpolator::Gp {
        let (times, values): (Vec<f64>, Vec<f64>) =
            series.present().map(|(slot, v)| (slot as f64, v)).unzip();
        match gp::fit_interpolant(&times, &values, &cfg.gp_options) {
            Ok(model) => Some(model),
            Err(e) => {
                return Err(e);
            }
        }
    } else {
        None
    };

    let series_mean = series.mean().expect("present >= 1");

    for (start, len) in series.gap_runs() {
        if start < first || start + len - 1 > last {
            continue; // leading or trailing gap
        }
        if len > cfg.l_max {
            continue; // longer than the interpolation limit
        }
        let end = start + len; // first present slot after the run
        match cfg.interpolator {
            Interpolator::LastValue => {
                let v = filled.value(start - 1).expect("run is internal");
                for slot in start..end {
                    filled.set(slot, Some(v));
                }
            }
            Interpolator::MeanValue => {
                for slot in start..end {
                    filled.set(slot, Some(series_mean));
                }
            }
            Interpolator::Linear => {
                let (l, r) = (start - 1, end);
                let (vl, vr) = (
                    series.value(l).expect("internal run"),
                    series.value(r).expect("internal run"),
                );
                for slot in start..end {
                    let w = (slot - l) as f64 / (r - l) as f64;
                    filled.set(slot, Some(vl + w * (vr - vl)));
                }
            }
            Interpolator::Quadratic | Interpolator::Cubic => {
                let mut support = present_left(series, start, 2);
                support.extend(present_right(series, end, 2));
                support.sort_unstable();
                let order = match (cfg.interpolator, support.len()) {
                    (Interpolator::Cubic, 4) => 3,
                    (Interpolator::Cubic, 3) => 2,
                    (Interpolator::Quadratic, 4) => 2,
                    // Too few points for the nominal order: drop to linear.
                    (Interpolator::Quadratic, 3) | (_, 2) => 1,
                    _ => {
                        warnings.push(FillWarning {
                            start_slot: start,
                            length: len,
                            reason: format!(
                                "only {} support point(s) for {}",
                                support.len(),
                                cfg.interpolator
                            ),
                        });
                        continue;
                    }
                };
                let center = support.iter().sum::<usize>() as f64 / support.len() as f64;
                let ts: Vec<f64> = support.iter().map(|&s| s as f64 - center).collect();
                let ys: Vec<f64> = support
                    .iter()
                    .map(|&s| series.value(s).expect("support present"))
                    .collect();
                let coeffs = polyfit(&ts, &ys, order);
                for slot in start..end {
                    filled.set(slot, Some(polyval(&coeffs, slot as f64 - center)));
                }
            }
            Interpolator::Gp => {
                let model = gp_posterior.as_ref().expect("fitted above");
                for slot in start..end {
                    let (mean, _std) = model.predict_one(slot as f64);
                    filled.set(slot, Some(mean));
                }
            }
        }
    }
    Ok((filled, warnings))
}

/// Center-evaluation weights of a full Savitzky-Golay window.
fn savgol_center_weights(window: usize, order: usize) -> Vec<f64> {
    let h = (window / 2) as f64;
    let ts: Vec<f64> = (0..window).map(|i| i as f64 - h).collect();
    // Weight for sample j is the fitted value at t=0 when y = e_j.
    let design = DMatrix::from_fn(window, order + 1, |i, j| ts[i].powi(j as i32));
    let normal = design.transpose() * &design;
    let inv = normal.try_inverse().expect("savgol normal equations");
    let projector = design * inv;
    // Fitted value at t=0 is the constant coefficient: row of X(X'X)^-1 X'
    // evaluated at the center sample... we need c_j = [ (X'X)^-1 X' ]_{0,j}.
    (0..window).map(|j| projector[(j, 0)]).collect()
}

/// Savitzky-Golay smoothing within each contiguous present run. Runs shorter
/// than the window pass through unchanged; edge values use a truncated-window
/// fit so the series length is preserved. Gaps are hard boundaries.
pub fn savitzky_golay(series: &WeeklySeries, cfg: &GapFillConfig) -> Result<WeeklySeries> {
    cfg.validate()?;
    let window = cfg.savgol_window;
    let order = cfg.savgol_order;
    let h = window / 2;
    let center_weights = savgol_center_weights(window, order);

    let mut out = series.clone();
    for (run_start, run_len) in series.present_runs() {
        if run_len < window {
            continue;
        }
        let run_end = run_start + run_len; // exclusive
        for i in run_start..run_end {
            let lo = i.saturating_sub(h).max(run_start);
            let hi = (i + h + 1).min(run_end);
            let smoothed = if hi - lo == window {
                // Interior: fixed convolution weights.
                (lo..hi)
                    .zip(&center_weights)
                    .map(|(s, w)| w * series.value(s).expect("run present"))
                    .sum()
            } else {
                // Truncated window at a run edge.
                let eff_order = order.min(hi - lo - 1);
                let ts: Vec<f64> = (lo..hi).map(|s| s as f64 - i as f64).collect();
                let ys: Vec<f64> = (lo..hi)
                    .map(|s| series.value(s).expect("run present"))
                    .collect();
                let coeffs = polyfit(&ts, &ys, eff_order);
                coeffs[0]
            };
            out.set(i, Some(smoothed));
        }
    }
    Ok(out)
}

/// Score of one interpolation method over held-out values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HoldoutScore {
    R2(f64),
    /// Held-out truths had zero variance, so the score is undefined.
    Degenerate,
}

/// Removes `drop_count` isolated present values per series, fills them with
/// each candidate method, and reports the pooled R²-score per method.
/// The same seeded holdout is used for every method.
pub fn compare_interpolators(
    series_set: &[WeeklySeries],
    methods: &[Interpolator],
    drop_count: usize,
    seed: u64,
    cfg: &GapFillConfig,
) -> Result<Vec<(Interpolator, HoldoutScore)>> {
    cfg.validate()?;
    if series_set.is_empty() {
        return Err(Error::InvalidInput("empty series set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // (series index, slot, truth) for every held-out value.
    let mut holdouts: Vec<(usize, usize, f64)> = Vec::new();
    for (series_idx, series) in series_set.iter().enumerate() {
        let present = series.present_count();
        if present < drop_count + 3 {
            return Err(Error::InvalidInput(format!(
                "series {series_idx} has {present} present values; need at least {}",
                drop_count + 3
            )));
        }
        // Eligible: present, neighbors present, and enough support each side
        // that every method can produce a fill.
        let mut eligible: Vec<usize> = (0..series.len())
            .filter(|&slot| {
                series.value(slot).is_some()
                    && slot > 0
                    && slot + 1 < series.len()
                    && series.value(slot - 1).is_some()
                    && series.value(slot + 1).is_some()
                    && present_left(series, slot, 2).len() == 2
                    && present_right(series, slot + 1, 2).len() == 2
            })
            .collect();
        eligible.shuffle(&mut rng);

        let mut chosen: Vec<usize> = Vec::with_capacity(drop_count);
        for slot in eligible {
            if chosen
                .iter()
                .any(|&c| (c as i64 - slot as i64).abs() <= 1)
            {
                continue; // never drop two adjacent slots in one draw
            }
            chosen.push(slot);
            if chosen.len() == drop_count {
                break;
            }
        }
        if chosen.len() < drop_count {
            return Err(Error::InvalidInput(format!(
                "series {series_idx}: only {} eligible holdout slots for drop_count {drop_count}",
                chosen.len()
            )));
        }
        chosen.sort_unstable();
        for slot in chosen {
            holdouts.push((series_idx, slot, series.value(slot).expect("eligible")));
        }
    }

    // Masked copies, one per series.
    let mut masked: Vec<WeeklySeries> = series_set.to_vec();
    for &(series_idx, slot, _) in &holdouts {
        masked[series_idx].set(slot, None);
    }

    let mut results = Vec::with_capacity(methods.len());
    for &method in methods {
        let method_cfg = GapFillConfig {
            interpolator: method,
            ..cfg.clone()
        };
        let mut filled_by_series: Vec<WeeklySeries> = Vec::with_capacity(masked.len());
        for m in &masked {
            let (filled, _warnings) = fill_gaps(m, &method_cfg)?;
            filled_by_series.push(filled);
        }
        let mut truths = Vec::with_capacity(holdouts.len());
        let mut preds = Vec::with_capacity(holdouts.len());
        for &(series_idx, slot, truth) in &holdouts {
            if let Some(pred) = filled_by_series[series_idx].value(slot) {
                truths.push(truth);
                preds.push(pred);
            }
        }
        let mean = truths.iter().sum::<f64>() / truths.len() as f64;
        let ss_tot: f64 = truths.iter().map(|y| (y - mean).powi(2)).sum();
        let score = if ss_tot == 0.0 {
            HoldoutScore::Degenerate
        } else {
            let ss_res: f64 = truths
                .iter()
                .zip(&preds)
                .map(|(y, f)| (y - f).powi(2))
                .sum();
            HoldoutScore::R2(1.0 - ss_res / ss_tot)
        };
        results.push((method, score));
    }
    Ok(results)
}
