//! Forecast skill assessment: R²-score, percentage of standard deviation
//! remaining, bias regression, ROC curves for drought alerts, transition
//! hit/false-alarm analysis, RMSE breakdowns, persistence comparison,
//! coverage accounting, and clear-pixel diagnostics.
//!
//! Everything here depends only on [`ForecastRecord`] fields, never on
//! forecaster internals.

use crate::ar::{ar_forecast_possible, ARConfig};
use crate::error::{Error, Result};
use crate::series::{categorize, IndexKind, IndexSeries};
use crate::time::week_of_year;
use chrono::{Duration, NaiveDate};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum Method {
    Gp,
    Ar,
    Persistence,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Gp => write!(f, "gp"),
            Method::Ar => write!(f, "ar"),
            Method::Persistence => write!(f, "persistence"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gp" => Ok(Method::Gp),
            "ar" => Ok(Method::Ar),
            "persistence" => Ok(Method::Persistence),
            other => Err(Error::Config(format!("unrecognized method {other:?}"))),
        }
    }
}

/// One assessed forecast: the unit of evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub region_id: String,
    pub issue_date: NaiveDate,
    /// Lead time in weeks, >= 1.
    pub lead: usize,
    pub predicted: f64,
    pub truth: f64,
    pub method: Method,
    pub index: IndexKind,
    /// Truth at the issue date, where known (needed for transition skill).
    pub truth_at_issue: Option<f64>,
    /// Percentage of clear pixels at the issue date, where known.
    pub clear_percent: Option<f64>,
}

impl ForecastRecord {
    pub fn validate(&self) -> Result<()> {
        if !self.predicted.is_finite() || !self.truth.is_finite() {
            return Err(Error::InvalidValue(format!(
                "record {} {} lead {}: non-finite predicted/truth",
                self.region_id, self.issue_date, self.lead
            )));
        }
        if self.lead < 1 {
            return Err(Error::InvalidValue("record lead must be >= 1".into()));
        }
        Ok(())
    }

    /// Calendar date the forecast is for.
    pub fn target_date(&self) -> NaiveDate {
        self.issue_date + Duration::days(7 * self.lead as i64)
    }
}

/// A metric that can be undefined on degenerate inputs (zero variance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Skill {
    Value(f64),
    Degenerate,
}

impl Skill {
    pub fn value(&self) -> Option<f64> {
        match self {
            Skill::Value(v) => Some(*v),
            Skill::Degenerate => None,
        }
    }
}

fn truth_moments(records: &[ForecastRecord]) -> (f64, f64) {
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.truth).sum::<f64>() / n;
    let ss_tot = records.iter().map(|r| (r.truth - mean).powi(2)).sum::<f64>();
    (mean, ss_tot)
}

fn sum_squared_error(records: &[ForecastRecord]) -> f64 {
    records
        .iter()
        .map(|r| (r.truth - r.predicted).powi(2))
        .sum()
}

/// `1 - SSE / SStot` over the record set.
pub fn r2_score(records: &[ForecastRecord]) -> Result<Skill> {
    if records.len() < 2 {
        return Err(Error::InvalidInput(
            "r2_score needs at least 2 records".into(),
        ));
    }
    let (_, ss_tot) = truth_moments(records);
    if ss_tot == 0.0 {
        return Ok(Skill::Degenerate);
    }
    Ok(Skill::Value(1.0 - sum_squared_error(records) / ss_tot))
}

/// Percentage of standard deviation remaining: `100 sqrt(SSE / SStot)`,
/// identically `100 sqrt(1 - R2)`.
pub fn s_metric(records: &[ForecastRecord]) -> Result<Skill> {
    if records.len() < 2 {
        return Err(Error::InvalidInput(
            "s_metric needs at least 2 records".into(),
        ));
    }
    let (_, ss_tot) = truth_moments(records);
    if ss_tot == 0.0 {
        return Ok(Skill::Degenerate);
    }
    Ok(Skill::Value(
        100.0 * (sum_squared_error(records) / ss_tot).sqrt(),
    ))
}

pub fn rmse(records: &[ForecastRecord]) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    (sum_squared_error(records) / records.len() as f64).sqrt()
}

/// OLS slope/intercept (with standard errors) of truth on forecast.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BiasFit {
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub intercept_stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasRegression {
    Fit(BiasFit),
    /// Forecasts had zero variance.
    Degenerate,
}

/// Linear regression of the actual index on the forecast index.
pub fn bias_regression(records: &[ForecastRecord]) -> Result<BiasRegression> {
    let n = records.len();
    if n < 3 {
        return Err(Error::InvalidInput(
            "bias regression needs at least 3 records".into(),
        ));
    }
    let nf = n as f64;
    let fx = records.iter().map(|r| r.predicted);
    let mean_f = fx.clone().sum::<f64>() / nf;
    let mean_y = records.iter().map(|r| r.truth).sum::<f64>() / nf;
    let sxx: f64 = fx.clone().map(|f| (f - mean_f).powi(2)).sum();
    if sxx == 0.0 {
        return Ok(BiasRegression::Degenerate);
    }
    let sxy: f64 = records
        .iter()
        .map(|r| (r.predicted - mean_f) * (r.truth - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_f;
    let sse: f64 = records
        .iter()
        .map(|r| (r.truth - intercept - slope * r.predicted).powi(2))
        .sum();
    let sigma2 = if n > 2 { sse / (nf - 2.0) } else { 0.0 };
    let slope_stderr = (sigma2 / sxx).sqrt();
    let intercept_stderr = (sigma2 * (1.0 / nf + mean_f * mean_f / sxx)).sqrt();
    Ok(BiasRegression::Fit(BiasFit {
        slope,
        slope_stderr,
        intercept,
        intercept_stderr,
    }))
}

/// One point of a drought-alert ROC sweep.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ROCPoint {
    pub threshold: f64,
    pub hit_rate: f64,
    pub false_alarm_rate: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// 201 evenly spaced binarization thresholds over [0, 100] plus the exact
/// alert threshold, sorted ascending.
pub fn default_binarization_grid(alert_threshold: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.5).collect();
    if !grid.iter().any(|t| *t == alert_threshold) {
        grid.push(alert_threshold);
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid
}

/// Sweeps binarization thresholds: alert when `predicted < b`, event when
/// `truth < drought_threshold`. Requires both truth classes to be present.
pub fn roc_curve(
    records: &[ForecastRecord],
    drought_threshold: f64,
    binarization_grid: &[f64],
) -> Result<Vec<ROCPoint>> {
    let events = records.iter().filter(|r| r.truth < drought_threshold).count();
    let non_events = records.len() - events;
    if events == 0 {
        return Err(Error::UndefinedRoc {
            missing_class: format!("truth < {drought_threshold}"),
        });
    }
    if non_events == 0 {
        return Err(Error::UndefinedRoc {
            missing_class: format!("truth >= {drought_threshold}"),
        });
    }
    let mut points = Vec::with_capacity(binarization_grid.len());
    for &b in binarization_grid {
        let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
        for r in records {
            let alert = r.predicted < b;
            let event = r.truth < drought_threshold;
            match (alert, event) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        points.push(ROCPoint {
            threshold: b,
            hit_rate: tp as f64 / events as f64,
            false_alarm_rate: fp as f64 / non_events as f64,
            tp,
            fp,
            tn,
            fn_,
        });
    }
    Ok(points)
}

/// Trapezoidal area under the (false alarm, hit) curve, with (0,0) and
/// (1,1) anchors.
pub fn roc_auc(points: &[ROCPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.false_alarm_rate, p.hit_rate))
        .collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut auc = 0.0;
    for pair in pts.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        auc += (x1 - x0) * 0.5 * (y0 + y1);
    }
    auc
}

/// One point of the transition (onset) skill sweep.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TransitionPoint {
    pub threshold: f64,
    /// P(predicted transition | actual transition); conditioned on a normal
    /// state at issue.
    pub hit_rate: f64,
    /// P(no actual transition | predicted transition); `None` when nothing
    /// was predicted at this threshold.
    pub false_alarm_ratio: Option<f64>,
    pub predicted_transitions: usize,
    pub actual_transitions: usize,
}

/// Onset skill: restricted to records whose truth at issue was at or above
/// the drought threshold, how well does `predicted < b` anticipate
/// `truth < threshold`?
pub fn transition_skill(
    records: &[ForecastRecord],
    drought_threshold: f64,
    binarization_grid: &[f64],
) -> Result<Vec<TransitionPoint>> {
    let conditioned: Vec<&ForecastRecord> = records
        .iter()
        .map(|r| {
            r.truth_at_issue
                .map(|_| r)
                .ok_or_else(|| Error::InvalidInput(
                    "transition skill needs truth_at_issue on every record".into(),
                ))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|r| r.truth_at_issue.expect("checked") >= drought_threshold)
        .collect();
    let actual: usize = conditioned
        .iter()
        .filter(|r| r.truth < drought_threshold)
        .count();
    if actual == 0 {
        return Err(Error::DegenerateMetric(format!(
            "no normal-to-drought transitions among {} conditioned records",
            conditioned.len()
        )));
    }
    let mut points = Vec::with_capacity(binarization_grid.len());
    for &b in binarization_grid {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for r in &conditioned {
            let predicted = r.predicted < b;
            let happened = r.truth < drought_threshold;
            if predicted && happened {
                tp += 1;
            } else if predicted {
                fp += 1;
            }
        }
        let predicted_transitions = tp + fp;
        points.push(TransitionPoint {
            threshold: b,
            hit_rate: tp as f64 / actual as f64,
            false_alarm_ratio: (predicted_transitions > 0)
                .then(|| fp as f64 / predicted_transitions as f64),
            predicted_transitions,
            actual_transitions: actual,
        });
    }
    Ok(points)
}

/// Axis for RMSE breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Breakdown {
    /// Drought category of the truth value.
    Category,
    /// Calendar week of the forecast target date.
    WeekOfYear,
    Region,
}

/// RMSE and count per bucket, sorted by bucket label. Empty buckets are
/// simply absent.
pub fn breakdown_rmse(
    records: &[ForecastRecord],
    by: Breakdown,
) -> Result<Vec<(String, f64, usize)>> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to break down".into()));
    }
    let mut buckets: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        let key = match by {
            Breakdown::Category => format!("{}", categorize(r.truth)?),
            Breakdown::WeekOfYear => format!("{:02}", week_of_year(r.target_date())),
            Breakdown::Region => r.region_id.clone(),
        };
        let entry = buckets.entry(key).or_insert((0.0, 0));
        entry.0 += (r.truth - r.predicted).powi(2);
        entry.1 += 1;
    }
    Ok(buckets
        .into_iter()
        .map(|(k, (sse, n))| (k, (sse / n as f64).sqrt(), n))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistenceRatio {
    /// `100 * RMSE(method) / RMSE(persistence)` over the matched pairs.
    pub ratio: Skill,
    pub matched: usize,
    pub dropped_method: usize,
    pub dropped_persistence: usize,
}

/// Matches records on (region, issue date, lead) and compares RMSEs on the
/// intersection; unmatched records are dropped and counted.
pub fn persistence_ratio(
    method_records: &[ForecastRecord],
    persistence_records: &[ForecastRecord],
) -> Result<PersistenceRatio> {
    if method_records.is_empty() || persistence_records.is_empty() {
        return Err(Error::InvalidInput(
            "persistence comparison needs non-empty record sets".into(),
        ));
    }
    let key = |r: &ForecastRecord| (r.region_id.clone(), r.issue_date, r.lead);
    let persistence_by_key: BTreeMap<_, &ForecastRecord> = persistence_records
        .iter()
        .map(|r| (key(r), r))
        .collect();
    let mut sse_method = 0.0;
    let mut sse_persistence = 0.0;
    let mut matched = 0usize;
    for r in method_records {
        if let Some(p) = persistence_by_key.get(&key(r)) {
            sse_method += (r.truth - r.predicted).powi(2);
            sse_persistence += (p.truth - p.predicted).powi(2);
            matched += 1;
        }
    }
    if matched == 0 {
        return Err(Error::InvalidInput(
            "no matched (region, issue, lead) pairs".into(),
        ));
    }
    let ratio = if sse_persistence == 0.0 {
        Skill::Degenerate
    } else {
        Skill::Value(100.0 * (sse_method / sse_persistence).sqrt())
    };
    Ok(PersistenceRatio {
        ratio,
        matched,
        dropped_method: method_records.len() - matched,
        dropped_persistence: persistence_records.len() - matched,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CoverageRow {
    pub region_id: String,
    pub assessable: usize,
    pub possible: usize,
    pub pct_weeks_forecastable: f64,
}

/// Per region, the share of assessment weeks (from `burn_in` onward, with a
/// truth value at issue+lead) where the AR gap rules admit a forecast.
pub fn coverage_report(
    series_set: &[IndexSeries],
    cfg: &ARConfig,
    burn_in: usize,
) -> Result<Vec<CoverageRow>> {
    let mut rows = Vec::with_capacity(series_set.len());
    for index in series_set {
        let series = &index.series;
        let len = series.len();
        let mut assessable = 0usize;
        let mut possible = 0usize;
        if len > burn_in + cfg.lead {
            for issue in burn_in..len - cfg.lead {
                assessable += 1;
                if series.value(issue + cfg.lead).is_some()
                    && ar_forecast_possible(series, issue, cfg)
                {
                    possible += 1;
                }
            }
        }
        rows.push(CoverageRow {
            region_id: index.region_id.clone(),
            assessable,
            possible,
            pct_weeks_forecastable: if assessable > 0 {
                100.0 * possible as f64 / assessable as f64
            } else {
                0.0
            },
        });
    }
    rows.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ClearPixelReport {
    /// Pearson correlation between clear percentage and bucket RMSE;
    /// `None` with fewer than 3 buckets.
    pub pearson_r: Option<f64>,
    /// (integer clear percentage, RMSE, record count), ascending.
    pub buckets: Vec<(u32, f64, usize)>,
}

/// Buckets forecast RMSE by the integer percentage of clear pixels at issue.
pub fn clear_pixel_correlation(records: &[ForecastRecord]) -> Result<ClearPixelReport> {
    let mut buckets: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for r in records {
        let Some(pct) = r.clear_percent else {
            return Err(Error::InvalidInput(
                "clear-pixel analysis needs clear_percent on every record".into(),
            ));
        };
        let key = pct.round().clamp(0.0, 100.0) as u32;
        let entry = buckets.entry(key).or_insert((0.0, 0));
        entry.0 += (r.truth - r.predicted).powi(2);
        entry.1 += 1;
    }
    let buckets: Vec<(u32, f64, usize)> = buckets
        .into_iter()
        .map(|(k, (sse, n))| (k, (sse / n as f64).sqrt(), n))
        .collect();
    let pearson_r = if buckets.len() >= 3 {
        let n = buckets.len() as f64;
        let mx = buckets.iter().map(|(p, _, _)| *p as f64).sum::<f64>() / n;
        let my = buckets.iter().map(|(_, r, _)| *r).sum::<f64>() / n;
        let sxx: f64 = buckets.iter().map(|(p, _, _)| (*p as f64 - mx).powi(2)).sum();
        let syy: f64 = buckets.iter().map(|(_, r, _)| (*r - my).powi(2)).sum();
        let sxy: f64 = buckets
            .iter()
            .map(|(p, r, _)| (*p as f64 - mx) * (*r - my))
            .sum();
        if sxx > 0.0 && syy > 0.0 {
            Some(sxy / (sxx * syy).sqrt())
        } else {
            Some(0.0)
        }
    } else {
        None
    };
    Ok(ClearPixelReport { pearson_r, buckets })
}

/// Headline metrics for one (method, index, lead) slice.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SkillSummary {
    pub records: usize,
    pub r2: Option<f64>,
    pub s: Option<f64>,
    pub rmse: f64,
    pub bias: Option<BiasFit>,
}

pub fn summarize(records: &[ForecastRecord]) -> Result<SkillSummary> {
    Ok(SkillSummary {
        records: records.len(),
        r2: r2_score(records)?.value(),
        s: s_metric(records)?.value(),
        rmse: rmse(records),
        bias: match bias_regression(records)? {
            BiasRegression::Fit(fit) => Some(fit),
            BiasRegression::Degenerate => None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn rec(predicted: f64, truth: f64) -> ForecastRecord {
        ForecastRecord {
            region_id: "r".into(),
            issue_date: d("2010-01-02"),
            lead: 4,
            predicted,
            truth,
            method: Method::Ar,
            index: IndexKind::Vci3m,
            truth_at_issue: None,
            clear_percent: None,
        }
    }

    fn records(pairs: &[(f64, f64)]) -> Vec<ForecastRecord> {
        pairs.iter().map(|&(f, y)| rec(f, y)).collect()
    }

    #[test]
    fn r2_basics() {
        let perfect = records(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        assert_eq!(r2_score(&perfect).unwrap(), Skill::Value(1.0));

        // Forecast = truth mean gives exactly zero.
        let mean_forecast = records(&[(1.5, 0.0), (1.5, 1.0), (1.5, 2.0), (1.5, 3.0)]);
        let r2 = r2_score(&mean_forecast).unwrap().value().unwrap();
        assert!(r2.abs() < 1e-12);

        // Hand-computed: truths {0,1,2,3}, forecasts {0,1,2,5} -> 1 - 4/5.
        let hand = records(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (5.0, 3.0)]);
        let r2 = r2_score(&hand).unwrap().value().unwrap();
        assert!((r2 - 0.2).abs() < 1e-12);

        let degenerate = records(&[(0.0, 2.0), (1.0, 2.0)]);
        assert_eq!(r2_score(&degenerate).unwrap(), Skill::Degenerate);
    }

    #[test]
    fn s_is_100_sqrt_one_minus_r2() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.gen_range(2..40);
            let set: Vec<ForecastRecord> = (0..n)
                .map(|_| rec(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
                .collect();
            let r2 = r2_score(&set).unwrap().value().unwrap();
            let s = s_metric(&set).unwrap().value().unwrap();
            assert!((s - 100.0 * (1.0 - r2).sqrt()).abs() < 1e-9);
        }
        let perfect = records(&[(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(s_metric(&perfect).unwrap(), Skill::Value(0.0));
    }

    #[test]
    fn bias_closed_forms() {
        let identity = records(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        match bias_regression(&identity).unwrap() {
            BiasRegression::Fit(fit) => {
                assert!((fit.slope - 1.0).abs() < 1e-12);
                assert!(fit.intercept.abs() < 1e-12);
            }
            BiasRegression::Degenerate => panic!("unexpected degenerate"),
        }
        // f = y/2 -> slope 2; f = y + 3 -> slope 1, intercept -3.
        let halved = records(&[(0.0, 0.0), (0.5, 1.0), (1.0, 2.0), (1.5, 3.0)]);
        match bias_regression(&halved).unwrap() {
            BiasRegression::Fit(fit) => assert!((fit.slope - 2.0).abs() < 1e-12),
            _ => panic!(),
        }
        let shifted = records(&[(3.0, 0.0), (4.0, 1.0), (5.0, 2.0)]);
        match bias_regression(&shifted).unwrap() {
            BiasRegression::Fit(fit) => {
                assert!((fit.slope - 1.0).abs() < 1e-12);
                assert!((fit.intercept + 3.0).abs() < 1e-12);
            }
            _ => panic!(),
        }
        let flat = records(&[(2.0, 0.0), (2.0, 1.0), (2.0, 2.0)]);
        assert_eq!(bias_regression(&flat).unwrap(), BiasRegression::Degenerate);
    }

    #[test]
    fn roc_perfect_and_degenerate_thresholds() {
        let mut set = Vec::new();
        for v in [10.0, 20.0, 30.0, 40.0, 50.0, 60.0] {
            set.push(rec(v, v));
        }
        let grid = [f64::NEG_INFINITY, 35.0, f64::INFINITY];
        let points = roc_curve(&set, 35.0, &grid).unwrap();
        assert_eq!(points[0].hit_rate, 0.0);
        assert_eq!(points[0].false_alarm_rate, 0.0);
        let operating = points[1];
        assert_eq!(operating.hit_rate, 1.0);
        assert_eq!(operating.false_alarm_rate, 0.0);
        assert_eq!(points[2].hit_rate, 1.0);
        assert_eq!(points[2].false_alarm_rate, 1.0);

        let one_class = records(&[(50.0, 50.0), (60.0, 60.0)]);
        assert!(matches!(
            roc_curve(&one_class, 35.0, &grid),
            Err(Error::UndefinedRoc { .. })
        ));
    }

    #[test]
    fn roc_monotone_and_random_auc_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = default_binarization_grid(35.0);
        let mut aucs = Vec::new();
        for _ in 0..20 {
            let truths: Vec<f64> = (0..300).map(|_| rng.gen_range(0.0..100.0)).collect();
            let mut predicted = truths.clone();
            predicted.shuffle(&mut rng);
            let set: Vec<ForecastRecord> = predicted
                .iter()
                .zip(&truths)
                .map(|(&f, &y)| rec(f, y))
                .collect();
            let points = roc_curve(&set, 35.0, &grid).unwrap();
            for pair in points.windows(2) {
                assert!(pair[1].hit_rate >= pair[0].hit_rate - 1e-12);
                assert!(pair[1].false_alarm_rate >= pair[0].false_alarm_rate - 1e-12);
            }
            aucs.push(roc_auc(&points));
        }
        let mean_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((mean_auc - 0.5).abs() < 0.05, "mean AUC {mean_auc}");
    }

    #[test]
    fn transition_skill_cases() {
        let mk = |predicted: f64, truth: f64, at_issue: f64| ForecastRecord {
            truth_at_issue: Some(at_issue),
            ..rec(predicted, truth)
        };
        // Perfect forecaster: predicted == truth.
        let set: Vec<ForecastRecord> = vec![
            mk(30.0, 30.0, 40.0), // actual transition, predicted
            mk(45.0, 45.0, 50.0), // no transition, none predicted
            mk(20.0, 20.0, 20.0), // already drought at issue: excluded
            mk(35.0, 35.0, 36.0), // boundary: 35 is not < 35
        ];
        let points = transition_skill(&set, 35.0, &[35.0]).unwrap();
        assert_eq!(points[0].hit_rate, 1.0);
        assert_eq!(points[0].false_alarm_ratio, Some(0.0));

        // Persistence never predicts a transition: forecasts equal the issue
        // value, which is >= 35 in the conditioned set.
        let set: Vec<ForecastRecord> = vec![
            mk(40.0, 30.0, 40.0),
            mk(50.0, 20.0, 50.0),
            mk(45.0, 44.0, 45.0),
        ];
        let points = transition_skill(&set, 35.0, &[35.0]).unwrap();
        assert_eq!(points[0].hit_rate, 0.0);
        assert_eq!(points[0].false_alarm_ratio, None);

        // No transitions at all: reported as an error with counts.
        let set: Vec<ForecastRecord> = vec![mk(40.0, 40.0, 40.0), mk(42.0, 50.0, 41.0)];
        assert!(transition_skill(&set, 35.0, &[35.0]).is_err());
    }

    #[test]
    fn breakdown_by_category_and_order_invariance() {
        let mut set = records(&[(30.0, 30.0), (60.0, 62.0)]);
        set[0].truth = 30.0; // moderate
        set[1].truth = 62.0; // wet
        let table = breakdown_rmse(&set, Breakdown::Category).unwrap();
        assert_eq!(table.len(), 2);
        let moderate = table.iter().find(|(k, _, _)| k == "moderate").unwrap();
        assert!((moderate.1 - 0.0).abs() < 1e-12);
        let wet = table.iter().find(|(k, _, _)| k == "wet").unwrap();
        assert!((wet.1 - 2.0).abs() < 1e-12);

        let mut shuffled = set.clone();
        shuffled.reverse();
        assert_eq!(breakdown_rmse(&shuffled, Breakdown::Category).unwrap(), table);
    }

    #[test]
    fn breakdown_single_bucket_equals_global_rmse() {
        let set = records(&[(10.0, 12.0), (11.0, 14.0), (12.0, 13.0)]);
        let table = breakdown_rmse(&set, Breakdown::Region).unwrap();
        assert_eq!(table.len(), 1);
        assert!((table[0].1 - rmse(&set)).abs() < 1e-12);
    }

    #[test]
    fn persistence_ratio_extremes() {
        let truth: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, i as f64 + 1.0)).collect();
        let method = records(&truth);
        let ratio = persistence_ratio(&method, &method).unwrap();
        assert_eq!(ratio.ratio, Skill::Value(100.0));
        assert_eq!(ratio.matched, 10);

        let exact: Vec<ForecastRecord> = method
            .iter()
            .map(|r| ForecastRecord {
                predicted: r.truth,
                ..r.clone()
            })
            .collect();
        let ratio = persistence_ratio(&exact, &method).unwrap();
        assert_eq!(ratio.ratio, Skill::Value(0.0));
    }

    #[test]
    fn clear_pixel_buckets() {
        let mk = |pct: f64, err: f64| ForecastRecord {
            clear_percent: Some(pct),
            ..rec(50.0 + err, 50.0)
        };
        // Identical RMSE across buckets: r = 0.
        let set: Vec<ForecastRecord> =
            vec![mk(10.0, 1.0), mk(50.0, 1.0), mk(90.0, 1.0), mk(30.0, 1.0)];
        let report = clear_pixel_correlation(&set).unwrap();
        assert_eq!(report.pearson_r, Some(0.0));

        // RMSE decreasing with clear percentage: negative correlation with
        // clear fraction (errors grow with cloudiness).
        let set: Vec<ForecastRecord> = vec![mk(10.0, 9.0), mk(50.0, 5.0), mk(90.0, 1.0)];
        let report = clear_pixel_correlation(&set).unwrap();
        assert!(report.pearson_r.unwrap() < -0.9);

        let set = vec![mk(50.0, 1.0), mk(50.0, 2.0)];
        assert_eq!(clear_pixel_correlation(&set).unwrap().pearson_r, None);
    }
}
