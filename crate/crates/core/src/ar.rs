//! Direct n-step linear autoregressive forecasting over sliding training
//! windows, the persistence baseline, and the bivariate Granger extension.
//!
//! The regression of `X[t+n]` on `(X[t], ..., X[t-p+1])` is solved by
//! normal equations with a ridge fallback when the Gram condition number
//! exceeds 1e12, which makes degenerate windows well-defined.

use crate::error::{Error, Result, SkipReason};
use crate::series::{IndexSeries, WeeklySeries};
use nalgebra::{DMatrix, DVector};

/// Condition-number limit before the ridge fallback engages.
const CONDITION_LIMIT: f64 = 1e12;
/// Ridge strength relative to the Gram trace.
const RIDGE_REL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ARConfig {
    /// Model order `p`: number of lags.
    pub order: usize,
    /// Training segment length `T`, in weeks.
    pub train_length: usize,
    /// Forecast lead `n`, in weeks.
    pub lead: usize,
    /// Remove the window mean before fitting (used for VCI3M).
    pub demean: bool,
    /// Require the whole training window gap-free instead of the row rule.
    pub strict_window: bool,
    /// Fraction of regression rows that must be intact in non-strict mode.
    pub min_valid_fraction: f64,
}

impl Default for ARConfig {
    fn default() -> Self {
        Self {
            order: 3,
            train_length: 200,
            lead: 1,
            demean: true,
            strict_window: false,
            min_valid_fraction: 0.8,
        }
    }
}

impl ARConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::Config("AR order must be >= 1".into()));
        }
        if self.lead < 1 {
            return Err(Error::Config("AR lead must be >= 1".into()));
        }
        if self.train_length < self.order + self.lead + 10 {
            return Err(Error::Config(format!(
                "train_length {} too short for order {} and lead {} (need >= p + n + 10)",
                self.train_length, self.order, self.lead
            )));
        }
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            return Err(Error::Config("min_valid_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ARModel {
    /// `a_0..a_{p-1}`, coefficient `a_i` multiplying `X[t-i]`.
    pub coefficients: Vec<f64>,
    /// Window mean removed before fitting (0 when demeaning is off).
    pub training_mean: f64,
    /// Standard deviation of the fit residuals.
    pub residual_std: f64,
    pub lead: usize,
    /// Set when the design was singular and the zero solution was used.
    pub degenerate: bool,
}

impl ARModel {
    /// Predicts `lead` steps past the end of `recent`, where `recent` holds
    /// the latest `p` observations ordered oldest to newest.
    pub fn predict(&self, recent: &[f64]) -> f64 {
        debug_assert_eq!(recent.len(), self.coefficients.len());
        let p = self.coefficients.len();
        let mut acc = self.training_mean;
        for (i, a) in self.coefficients.iter().enumerate() {
            acc += a * (recent[p - 1 - i] - self.training_mean);
        }
        acc
    }
}

struct LeastSquaresFit {
    coefficients: DVector<f64>,
    residual_std: f64,
    degenerate: bool,
    ridge_used: bool,
}

/// Normal-equation least squares with the ridge fallback.
fn normal_solve(design: &DMatrix<f64>, targets: &DVector<f64>) -> LeastSquaresFit {
    let rows = design.nrows();
    let cols = design.ncols();
    let gram = design.transpose() * design;
    let rhs = design.transpose() * targets;
    let trace = gram.trace();

    if trace <= 0.0 || !trace.is_finite() {
        return LeastSquaresFit {
            coefficients: DVector::zeros(cols),
            residual_std: residual_std(design, targets, &DVector::zeros(cols), cols),
            degenerate: true,
            ridge_used: false,
        };
    }

    let eigen = gram.clone().symmetric_eigen();
    let max_ev = eigen.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_ev = eigen.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    let ill_conditioned = min_ev <= 0.0 || max_ev / min_ev > CONDITION_LIMIT;

    let solved = if ill_conditioned {
        let mut ridge = gram;
        let lambda = RIDGE_REL * trace;
        for i in 0..cols {
            ridge[(i, i)] += lambda;
        }
        ridge.cholesky().map(|c| c.solve(&rhs))
    } else {
        gram.cholesky().map(|c| c.solve(&rhs))
    };

    match solved {
        Some(coefficients) => {
            let rs = residual_std(design, targets, &coefficients, cols.min(rows));
            LeastSquaresFit {
                coefficients,
                residual_std: rs,
                degenerate: false,
                ridge_used: ill_conditioned,
            }
        }
        None => LeastSquaresFit {
            coefficients: DVector::zeros(cols),
            residual_std: residual_std(design, targets, &DVector::zeros(cols), cols),
            degenerate: true,
            ridge_used: true,
        },
    }
}

fn residual_std(
    design: &DMatrix<f64>,
    targets: &DVector<f64>,
    coefficients: &DVector<f64>,
    dof_used: usize,
) -> f64 {
    let residuals = targets - design * coefficients;
    let rows = design.nrows();
    if rows > dof_used {
        (residuals.norm_squared() / (rows - dof_used) as f64).sqrt()
    } else {
        0.0
    }
}

/// Fits the direct n-step model on a gap-free window of exactly `T` values.
pub fn ar_fit(window: &[f64], cfg: &ARConfig) -> Result<ARModel> {
    cfg.validate()?;
    let (p, t_len, n) = (cfg.order, cfg.train_length, cfg.lead);
    if window.len() != t_len {
        return Err(Error::InvalidInput(format!(
            "window length {} does not match train_length {t_len}",
            window.len()
        )));
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("non-finite value in AR window".into()));
    }
    let mean = if cfg.demean {
        window.iter().sum::<f64>() / t_len as f64
    } else {
        0.0
    };
    let rows = t_len - n - p + 1;
    let design = DMatrix::from_fn(rows, p, |r, i| window[r + p - 1 - i] - mean);
    let targets = DVector::from_fn(rows, |r, _| window[r + p - 1 + n] - mean);
    let fit = normal_solve(&design, &targets);
    Ok(ARModel {
        coefficients: fit.coefficients.iter().copied().collect(),
        training_mean: mean,
        residual_std: fit.residual_std,
        lead: n,
        degenerate: fit.degenerate,
    })
}

/// Outcome of a forecast attempt: a value, or a recorded skip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForecastOutcome {
    Value(f64),
    Skipped(SkipReason),
}

impl ForecastOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            ForecastOutcome::Value(v) => Some(*v),
            ForecastOutcome::Skipped(_) => None,
        }
    }
}

/// Whether the AR gap rules admit a forecast at `issue_slot`: the `p` most
/// recent observations must be present, and either the whole window (strict)
/// or at least `min_valid_fraction` of the regression rows must be intact.
pub fn ar_forecast_possible(series: &WeeklySeries, issue_slot: usize, cfg: &ARConfig) -> bool {
    matches!(
        forecast_window(series, issue_slot, cfg),
        Ok(WindowCheck::Usable(_))
    )
}

enum WindowCheck {
    Usable(Vec<Option<f64>>),
    Skip(SkipReason),
}

fn forecast_window(
    series: &WeeklySeries,
    issue_slot: usize,
    cfg: &ARConfig,
) -> Result<WindowCheck> {
    cfg.validate()?;
    let t_len = cfg.train_length;
    if issue_slot + 1 < t_len || issue_slot >= series.len() {
        return Ok(WindowCheck::Skip(SkipReason::InsufficientHistory));
    }
    let start = issue_slot + 1 - t_len;
    let window: Vec<Option<f64>> = (start..=issue_slot).map(|s| series.value(s)).collect();

    // The p most recent observations are always required.
    if window[t_len - cfg.order..].iter().any(|v| v.is_none()) {
        return Ok(WindowCheck::Skip(SkipReason::Gap));
    }
    if cfg.strict_window {
        if window.iter().any(|v| v.is_none()) {
            return Ok(WindowCheck::Skip(SkipReason::Gap));
        }
        return Ok(WindowCheck::Usable(window));
    }
    let (p, n) = (cfg.order, cfg.lead);
    let valid_rows = (0..t_len - n - p + 1)
        .filter(|&r| {
            (0..p).all(|i| window[r + i].is_some()) && window[r + p - 1 + n].is_some()
        })
        .count();
    let required = (cfg.min_valid_fraction * (t_len - p - n) as f64).ceil() as usize;
    if valid_rows < required.max(1) {
        return Ok(WindowCheck::Skip(SkipReason::Gap));
    }
    Ok(WindowCheck::Usable(window))
}

/// Fits on the `T` slots ending at `issue_slot` and predicts `lead` weeks
/// ahead. Gaps violating the window rules yield a recorded skip, not an error.
pub fn ar_forecast(
    series: &WeeklySeries,
    issue_slot: usize,
    cfg: &ARConfig,
) -> Result<ForecastOutcome> {
    let window = match forecast_window(series, issue_slot, cfg)? {
        WindowCheck::Usable(w) => w,
        WindowCheck::Skip(reason) => return Ok(ForecastOutcome::Skipped(reason)),
    };
    let (p, t_len, n) = (cfg.order, cfg.train_length, cfg.lead);

    let present: Vec<f64> = window.iter().flatten().copied().collect();
    let mean = if cfg.demean {
        present.iter().sum::<f64>() / present.len() as f64
    } else {
        0.0
    };

    // Regression rows whose lags and target are all present.
    let mut feature_rows: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for r in 0..t_len - n - p + 1 {
        let target = window[r + p - 1 + n];
        let lags_present = (0..p).all(|i| window[r + i].is_some());
        if let (Some(y), true) = (target, lags_present) {
            // Column i is lag i: X[t - i] where t = r + p - 1.
            let row: Vec<f64> = (0..p)
                .map(|i| window[r + p - 1 - i].expect("checked") - mean)
                .collect();
            feature_rows.push(row);
            targets.push(y - mean);
        }
    }
    let rows = targets.len();
    let design = DMatrix::from_fn(rows, p, |r, c| feature_rows[r][c]);
    let target_vec = DVector::from_column_slice(&targets);
    let fit = normal_solve(&design, &target_vec);

    let model = ARModel {
        coefficients: fit.coefficients.iter().copied().collect(),
        training_mean: mean,
        residual_std: fit.residual_std,
        lead: n,
        degenerate: fit.degenerate,
    };
    let recent: Vec<f64> = (issue_slot + 1 - p..=issue_slot)
        .map(|s| series.value(s).expect("recent values checked"))
        .collect();
    Ok(ForecastOutcome::Value(model.predict(&recent)))
}

/// The most recent observation is the forecast, whatever the lead.
pub fn persistence_forecast(series: &WeeklySeries, issue_slot: usize) -> ForecastOutcome {
    match series.value(issue_slot) {
        Some(v) => ForecastOutcome::Value(v),
        None => ForecastOutcome::Skipped(SkipReason::Gap),
    }
}

/// In-window comparison of the reduced model against the model extended
/// with `q` lags of a second region's series.
#[derive(Debug, Clone, Copy)]
pub struct GrangerResult {
    pub extended_rmse: f64,
    pub reduced_rmse: f64,
    /// `100 * (1 - extended/reduced)`; 0 when degenerate.
    pub pct_reduction: f64,
    pub degenerate: bool,
}

/// Fits reduced and extended models on the same rows of one gap-free window
/// pair and reports the in-window RMSE reduction.
pub fn granger_fit(
    target: &[f64],
    source: &[f64],
    p: usize,
    q: usize,
    n: usize,
    demean: bool,
) -> Result<GrangerResult> {
    if target.len() != source.len() {
        return Err(Error::InvalidInput(
            "target and source windows differ in length".into(),
        ));
    }
    let t_len = target.len();
    if p < 1 || q < 1 || n < 1 {
        return Err(Error::Config("p, q, and n must all be >= 1".into()));
    }
    let lag_span = p.max(q);
    if t_len < lag_span + n + 10 {
        return Err(Error::InvalidInput(format!(
            "window length {t_len} too short for p={p}, q={q}, n={n}"
        )));
    }
    if target.iter().chain(source).any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("non-finite value in granger window".into()));
    }

    let (target_mean, source_mean) = if demean {
        (
            target.iter().sum::<f64>() / t_len as f64,
            source.iter().sum::<f64>() / t_len as f64,
        )
    } else {
        (0.0, 0.0)
    };

    let rows = t_len - n - lag_span + 1;
    // Row r corresponds to t = r + lag_span - 1.
    let reduced_design = DMatrix::from_fn(rows, p, |r, i| target[r + lag_span - 1 - i] - target_mean);
    let extended_design = DMatrix::from_fn(rows, p + q, |r, c| {
        if c < p {
            target[r + lag_span - 1 - c] - target_mean
        } else {
            source[r + lag_span - 1 - (c - p)] - source_mean
        }
    });
    let targets = DVector::from_fn(rows, |r, _| target[r + lag_span - 1 + n] - target_mean);

    let reduced = normal_solve(&reduced_design, &targets);
    let extended = normal_solve(&extended_design, &targets);

    let in_window_rmse = |design: &DMatrix<f64>, coeffs: &DVector<f64>| {
        let res = &targets - design * coeffs;
        (res.norm_squared() / rows as f64).sqrt()
    };
    let reduced_rmse = in_window_rmse(&reduced_design, &reduced.coefficients);

    if extended.degenerate || extended.ridge_used || reduced.degenerate {
        return Ok(GrangerResult {
            extended_rmse: reduced_rmse,
            reduced_rmse,
            pct_reduction: 0.0,
            degenerate: true,
        });
    }

    // Nesting guarantees extended <= reduced up to floating point noise.
    let extended_rmse = in_window_rmse(&extended_design, &extended.coefficients).min(reduced_rmse);
    let pct_reduction = if reduced_rmse > 0.0 {
        100.0 * (1.0 - extended_rmse / reduced_rmse)
    } else {
        0.0
    };
    Ok(GrangerResult {
        extended_rmse,
        reduced_rmse,
        pct_reduction,
        degenerate: false,
    })
}

#[derive(Debug, Clone)]
pub struct GrangerConfig {
    pub order: usize,
    pub source_lags: usize,
    pub lead: usize,
    pub train_length: usize,
    pub demean: bool,
    /// Step between consecutive window end slots.
    pub stride: usize,
}

impl Default for GrangerConfig {
    fn default() -> Self {
        Self {
            order: 3,
            source_lags: 3,
            lead: 4,
            train_length: 200,
            demean: true,
            stride: 1,
        }
    }
}

/// One directed edge of the Granger matrix.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GrangerEntry {
    pub from_region: String,
    pub to_region: String,
    pub mean_pct_reduction: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GrangerMatrix {
    pub regions: Vec<String>,
    /// Directed entries with mean reduction above the display threshold.
    pub entries: Vec<GrangerEntry>,
    /// Pairs without a single admissible (gap-free) window.
    pub no_window: Vec<(String, String)>,
    pub threshold_pct: f64,
}

/// Mean in-window RMSE reduction for every ordered pair of distinct regions,
/// over all windows where both series are gap-free. Entries at or below
/// `threshold_pct` are omitted, matching the display rule.
pub fn granger_matrix(
    regional_series: &[IndexSeries],
    cfg: &GrangerConfig,
    threshold_pct: f64,
) -> Result<GrangerMatrix> {
    if regional_series.len() < 2 {
        return Err(Error::InvalidInput(
            "granger matrix needs at least 2 regions".into(),
        ));
    }
    let stride = cfg.stride.max(1);
    let t_len = cfg.train_length;
    let mut entries = Vec::new();
    let mut no_window = Vec::new();
    for (ti, target) in regional_series.iter().enumerate() {
        for (si, source) in regional_series.iter().enumerate() {
            if si == ti {
                continue;
            }
            if target.series.grid() != source.series.grid() {
                return Err(Error::InvalidInput(format!(
                    "regions {} and {} are not on a shared grid",
                    target.region_id, source.region_id
                )));
            }
            let len = target.series.len();
            let mut reductions = Vec::new();
            if len >= t_len {
                let mut end = t_len - 1;
                while end < len {
                    let start = end + 1 - t_len;
                    let t_win: Vec<Option<f64>> =
                        (start..=end).map(|s| target.series.value(s)).collect();
                    let s_win: Vec<Option<f64>> =
                        (start..=end).map(|s| source.series.value(s)).collect();
                    if t_win.iter().all(Option::is_some) && s_win.iter().all(Option::is_some) {
                        let t_vals: Vec<f64> = t_win.into_iter().flatten().collect();
                        let s_vals: Vec<f64> = s_win.into_iter().flatten().collect();
                        let result = granger_fit(
                            &t_vals,
                            &s_vals,
                            cfg.order,
                            cfg.source_lags,
                            cfg.lead,
                            cfg.demean,
                        )?;
                        reductions.push(result.pct_reduction);
                    }
                    end += stride;
                }
            }
            if reductions.is_empty() {
                no_window.push((source.region_id.clone(), target.region_id.clone()));
            } else {
                let mean = reductions.iter().sum::<f64>() / reductions.len() as f64;
                if mean > threshold_pct {
                    entries.push(GrangerEntry {
                        from_region: source.region_id.clone(),
                        to_region: target.region_id.clone(),
                        mean_pct_reduction: mean,
                        windows: reductions.len(),
                    });
                }
            }
        }
    }
    Ok(GrangerMatrix {
        regions: regional_series
            .iter()
            .map(|s| s.region_id.clone())
            .collect(),
        entries,
        no_window,
        threshold_pct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::TimeGrid;
    use chrono::NaiveDate;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn weekly(values: Vec<Option<f64>>) -> WeeklySeries {
        let grid = TimeGrid::new(
            NaiveDate::parse_from_str("2000-01-01", "%Y-%m-%d").unwrap(),
            values.len(),
        )
        .unwrap();
        WeeklySeries::new(grid, values).unwrap()
    }

    fn cfg(order: usize, lead: usize, demean: bool) -> ARConfig {
        ARConfig {
            order,
            lead,
            demean,
            ..ARConfig::default()
        }
    }

    #[test]
    fn recovers_exact_ar1() {
        let c = cfg(1, 1, false);
        let mut window = vec![1.0f64];
        for t in 1..c.train_length {
            window.push(0.9 * window[t - 1]);
        }
        let model = ar_fit(&window, &c).unwrap();
        assert!((model.coefficients[0] - 0.9).abs() < 1e-9);
        assert!(model.residual_std < 1e-9);
    }

    #[test]
    fn constant_window_degenerates_to_mean() {
        let c = cfg(3, 2, true);
        let window = vec![7.5; c.train_length];
        let model = ar_fit(&window, &c).unwrap();
        assert!(model.degenerate);
        assert_eq!(model.coefficients, vec![0.0, 0.0, 0.0]);
        assert_eq!(model.predict(&[7.5, 7.5, 7.5]), 7.5);
    }

    #[test]
    fn recovers_ar3_coefficients_on_average() {
        let truth = [0.5, 0.25, 0.15];
        let mut sums = [0.0f64; 3];
        let seeds = 20;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.1).unwrap();
            let mut x = vec![0.0f64; 500];
            for t in 3..500 {
                x[t] = truth[0] * x[t - 1] + truth[1] * x[t - 2] + truth[2] * x[t - 3]
                    + noise.sample(&mut rng);
            }
            let window = &x[300..500];
            let model = ar_fit(window, &cfg(3, 1, true)).unwrap();
            for i in 0..3 {
                sums[i] += model.coefficients[i];
            }
        }
        for i in 0..3 {
            let avg = sums[i] / seeds as f64;
            assert!(
                (avg - truth[i]).abs() < 0.1,
                "coefficient {i}: {avg} vs {}",
                truth[i]
            );
        }
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let window: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = cfg(3, 2, true);
        let model = ar_fit(&window, &c).unwrap();
        let (p, n, t_len) = (3usize, 2usize, 200usize);
        let mean = model.training_mean;
        for i in 0..p {
            let mut dot = 0.0;
            for r in 0..t_len - n - p + 1 {
                let mut pred = 0.0;
                for k in 0..p {
                    pred += model.coefficients[k] * (window[r + p - 1 - k] - mean);
                }
                let resid = (window[r + p - 1 + n] - mean) - pred;
                dot += resid * (window[r + p - 1 - i] - mean);
            }
            assert!(dot.abs() < 1e-6, "lag {i} dot {dot}");
        }
    }

    #[test]
    fn sinusoid_forecast_under_one_percent_error() {
        let amplitude = 40.0;
        let values: Vec<Option<f64>> = (0..300)
            .map(|t| {
                Some(50.0 + amplitude * (2.0 * std::f64::consts::PI * t as f64 / 52.0).sin())
            })
            .collect();
        let series = weekly(values);
        let c = cfg(3, 2, true);
        let issue = 260;
        let truth = series.value(issue + 2).unwrap();
        match ar_forecast(&series, issue, &c).unwrap() {
            ForecastOutcome::Value(f) => {
                assert!(
                    (f - truth).abs() < 0.01 * amplitude,
                    "forecast {f} vs truth {truth}"
                );
            }
            other => panic!("expected forecast, got {other:?}"),
        }
    }

    #[test]
    fn geometric_series_reproduced() {
        let r: f64 = 0.97;
        let values: Vec<Option<f64>> = (0..250).map(|t| Some(r.powi(t))).collect();
        let series = weekly(values);
        let c = cfg(1, 1, false);
        let issue = 220;
        match ar_forecast(&series, issue, &c).unwrap() {
            ForecastOutcome::Value(f) => {
                let truth = r.powi(issue as i32 + 1);
                assert!((f - truth).abs() < 1e-9, "{f} vs {truth}");
            }
            other => panic!("expected forecast, got {other:?}"),
        }
    }

    #[test]
    fn shift_invariance_with_demean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base: Vec<f64> = (0..260)
            .map(|t| (t as f64 * 0.2).sin() + 0.1 * rng.gen_range(-1.0..1.0))
            .collect();
        let series_a = weekly(base.iter().map(|v| Some(*v)).collect());
        let series_b = weekly(base.iter().map(|v| Some(*v + 123.0)).collect());
        let c = cfg(3, 4, true);
        let fa = ar_forecast(&series_a, 250, &c).unwrap().value().unwrap();
        let fb = ar_forecast(&series_b, 250, &c).unwrap().value().unwrap();
        assert!((fb - (fa + 123.0)).abs() < 1e-9);
    }

    #[test]
    fn gap_rules() {
        let mut values: Vec<Option<f64>> = (0..260).map(|t| Some((t as f64 * 0.1).sin())).collect();
        values[255] = None; // 5 weeks before the issue slot at 260 - 1
        let series = weekly(values.clone());
        let strict = ARConfig {
            strict_window: true,
            lead: 2,
            ..ARConfig::default()
        };
        match ar_forecast(&series, 259, &strict).unwrap() {
            ForecastOutcome::Skipped(SkipReason::Gap) => {}
            other => panic!("expected GAP skip, got {other:?}"),
        }
        // Non-strict tolerates one missing row block.
        let loose = ARConfig {
            lead: 2,
            ..ARConfig::default()
        };
        assert!(matches!(
            ar_forecast(&series, 259, &loose).unwrap(),
            ForecastOutcome::Value(_)
        ));

        // A gap among the p most recent values blocks both modes.
        values[258] = None;
        let series = weekly(values);
        match ar_forecast(&series, 259, &loose).unwrap() {
            ForecastOutcome::Skipped(SkipReason::Gap) => {}
            other => panic!("expected GAP skip, got {other:?}"),
        }
    }

    #[test]
    fn insufficient_history_skips() {
        let series = weekly((0..100).map(|t| Some(t as f64)).collect());
        match ar_forecast(&series, 99, &ARConfig::default()).unwrap() {
            ForecastOutcome::Skipped(SkipReason::InsufficientHistory) => {}
            other => panic!("expected history skip, got {other:?}"),
        }
    }

    #[test]
    fn persistence_behaviour() {
        let mut values: Vec<Option<f64>> = (0..10).map(|t| Some(t as f64)).collect();
        values[6] = None;
        let series = weekly(values);
        assert_eq!(
            persistence_forecast(&series, 5),
            ForecastOutcome::Value(5.0)
        );
        assert_eq!(
            persistence_forecast(&series, 6),
            ForecastOutcome::Skipped(SkipReason::Gap)
        );
    }

    #[test]
    fn granger_nested_never_worse_and_copy_degenerates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Independent source: extended fits at least as well in window.
        let source: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = granger_fit(&target, &source, 3, 3, 1, true).unwrap();
        assert!(r.extended_rmse <= r.reduced_rmse);
        assert!(r.pct_reduction >= 0.0);

        // Source equal to target duplicates columns: flagged degenerate.
        let r = granger_fit(&target, &target, 3, 3, 1, true).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.pct_reduction, 0.0);
        assert!(r.extended_rmse <= r.reduced_rmse + 1e-12);
    }

    #[test]
    fn granger_independent_noise_small_reduction() {
        let mut medians = Vec::new();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let normal = Normal::new(0.0, 1.0).unwrap();
            let target: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
            let source: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
            let r = granger_fit(&target, &source, 3, 3, 1, true).unwrap();
            medians.push(r.pct_reduction);
        }
        medians.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = medians[10];
        assert!(median < 2.0, "median reduction {median}%");
    }

    #[test]
    fn granger_detects_lagged_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal = Normal::new(0.0, 0.3).unwrap();
        let mut source = vec![0.0f64; 220];
        let mut target = vec![0.0f64; 220];
        for t in 2..220 {
            source[t] = 0.9 * source[t - 1] + normal.sample(&mut rng);
            target[t] = 0.5 * target[t - 1] + 0.4 * source[t - 2] + normal.sample(&mut rng);
        }
        let r = granger_fit(&target[20..], &source[20..], 3, 3, 1, true).unwrap();
        assert!(r.pct_reduction > 5.0, "reduction {}%", r.pct_reduction);
    }

    #[test]
    fn granger_matrix_flags_only_coupled_pair() {
        use crate::series::{IndexKind, IndexSeries};
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let normal = Normal::new(0.0, 0.3).unwrap();
        let len = 320usize;
        let mut series_values: Vec<Vec<f64>> = Vec::new();
        for _ in 0..3 {
            let mut x = vec![0.0f64; len];
            for t in 1..len {
                x[t] = 0.8 * x[t - 1] + normal.sample(&mut rng);
            }
            series_values.push(x);
        }
        // Region 2 driven by region 0.
        let driver = series_values[0].clone();
        for t in 2..len {
            let own = 0.4 * series_values[2][t - 1];
            series_values[2][t] = own + 0.5 * driver[t - 2] + normal.sample(&mut rng);
        }
        let regional: Vec<IndexSeries> = series_values
            .iter()
            .enumerate()
            .map(|(i, vals)| {
                let shifted: Vec<Option<f64>> =
                    vals.iter().map(|v| Some(50.0 + 5.0 * v)).collect();
                IndexSeries::new(weekly(shifted), IndexKind::NdviAnomaly, format!("r{i}"))
                    .unwrap()
            })
            .collect();
        let cfg = GrangerConfig {
            lead: 1,
            stride: 8,
            ..GrangerConfig::default()
        };
        let matrix = granger_matrix(&regional, &cfg, 5.0).unwrap();
        assert!(
            matrix
                .entries
                .iter()
                .any(|e| e.from_region == "r0" && e.to_region == "r2"),
            "expected r0 -> r2 edge, got {:?}",
            matrix.entries
        );
        for e in &matrix.entries {
            assert!(
                e.from_region == "r0" && e.to_region == "r2",
                "unexpected edge {e:?}"
            );
        }
    }
}
