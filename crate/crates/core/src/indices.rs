//! Drought-index construction: per-week-of-year climatology, VCI, VCI3M,
//! and the seasonal mean-subtracted NDVI anomaly.

use crate::error::{Error, Result};
use crate::series::{IndexKind, IndexSeries, WeeklySeries};
use std::io::{Read, Write};

/// Trailing window of the three-month VCI composite, in weeks.
pub const VCI3M_WINDOW: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClimWeek {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Per week-of-year (1..=52, week 53 folded into 52) min/max/mean of a
/// reference series.
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    weeks: Vec<ClimWeek>, // index 0 holds week 1
}

impl Climatology {
    pub fn week(&self, week_of_year: u32) -> Option<&ClimWeek> {
        let folded = if week_of_year == 53 { 52 } else { week_of_year };
        if (1..=52).contains(&folded) {
            self.weeks.get(folded as usize - 1)
        } else {
            None
        }
    }

    pub fn from_weeks(weeks: Vec<ClimWeek>) -> Result<Self> {
        if weeks.len() != 52 {
            return Err(Error::InvalidInput(format!(
                "climatology needs 52 weeks, got {}",
                weeks.len()
            )));
        }
        for (i, w) in weeks.iter().enumerate() {
            if !(w.min <= w.mean && w.mean <= w.max) {
                return Err(Error::InvalidValue(format!(
                    "climatology week {}: min {} mean {} max {} not ordered",
                    i + 1,
                    w.min,
                    w.mean,
                    w.max
                )));
            }
        }
        Ok(Self { weeks })
    }
}

/// Min/max/mean over all present values sharing each week-of-year. Every
/// week must be covered by at least 2 values.
pub fn build_climatology(series: &WeeklySeries) -> Result<Climatology> {
    let mut stats: Vec<(f64, f64, f64, usize)> = vec![(f64::INFINITY, f64::NEG_INFINITY, 0.0, 0); 52];
    for (slot, value) in series.present() {
        let week = series.grid().week_of_year(slot);
        let entry = &mut stats[week as usize - 1];
        entry.0 = entry.0.min(value);
        entry.1 = entry.1.max(value);
        entry.2 += value;
        entry.3 += 1;
    }
    let mut weeks = Vec::with_capacity(52);
    for (i, (min, max, sum, count)) in stats.iter().enumerate() {
        if *count < 2 {
            return Err(Error::InsufficientClimatology {
                week: i as u32 + 1,
                count: *count,
            });
        }
        weeks.push(ClimWeek {
            min: *min,
            max: *max,
            mean: sum / *count as f64,
        });
    }
    Climatology::from_weeks(weeks)
}

/// What to do on a climatology week with `max == min`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerateWeekPolicy {
    /// Fail the VCI computation (default).
    Error,
    /// Map every value in that week to the midpoint 50.
    MapToMidpoint,
}

#[derive(Debug, Clone)]
pub struct VciOutcome {
    pub index: IndexSeries,
    /// Values clipped back into [0, 100] because the input lay outside the
    /// climatology reference range.
    pub clipped: usize,
}

/// `VCI = 100 (NDVI - min_w) / (max_w - min_w)` per slot, gaps propagated,
/// out-of-range results clipped to [0, 100] and counted.
pub fn compute_vci(
    series: &WeeklySeries,
    clim: &Climatology,
    region_id: &str,
    policy: DegenerateWeekPolicy,
) -> Result<VciOutcome> {
    let mut values = Vec::with_capacity(series.len());
    let mut clipped = 0usize;
    for slot in 0..series.len() {
        let week = series.grid().week_of_year(slot);
        match series.value(slot) {
            None => values.push(None),
            Some(v) => {
                let w = clim
                    .week(week)
                    .ok_or_else(|| Error::InvalidInput(format!("no climatology for week {week}")))?;
                let range = w.max - w.min;
                if range <= 0.0 {
                    match policy {
                        DegenerateWeekPolicy::Error => {
                            return Err(Error::DegenerateWeek { week })
                        }
                        DegenerateWeekPolicy::MapToMidpoint => {
                            values.push(Some(50.0));
                            continue;
                        }
                    }
                }
                let raw = 100.0 * (v - w.min) / range;
                let vci = raw.clamp(0.0, 100.0);
                if raw != vci {
                    clipped += 1;
                }
                values.push(Some(vci));
            }
        }
    }
    let index = IndexSeries::new(
        WeeklySeries::new(series.grid().clone(), values)?,
        IndexKind::Vci,
        region_id,
    )?;
    Ok(VciOutcome { index, clipped })
}

/// Trailing 12-week mean of present VCI values. A slot is a gap exactly
/// when the current NDVI observation is absent; otherwise the mean is taken
/// over whatever observations are present in the window.
pub fn compute_vci3m(vci: &IndexSeries, ndvi: &WeeklySeries) -> Result<IndexSeries> {
    if vci.kind != IndexKind::Vci {
        return Err(Error::InvalidInput(format!(
            "expected a vci series, got {}",
            vci.kind
        )));
    }
    if vci.series.grid() != ndvi.grid() {
        return Err(Error::InvalidInput(
            "vci and ndvi series are not on a shared grid".into(),
        ));
    }
    if vci.series.len() < VCI3M_WINDOW {
        return Err(Error::InvalidInput(format!(
            "series length {} shorter than the {VCI3M_WINDOW}-week window",
            vci.series.len()
        )));
    }
    let mut values = Vec::with_capacity(vci.series.len());
    for slot in 0..vci.series.len() {
        if ndvi.value(slot).is_none() {
            values.push(None);
            continue;
        }
        let lo = slot.saturating_sub(VCI3M_WINDOW - 1);
        let mut sum = 0.0;
        let mut count = 0usize;
        for s in lo..=slot {
            if let Some(v) = vci.series.value(s) {
                sum += v;
                count += 1;
            }
        }
        values.push((count > 0).then(|| sum / count as f64));
    }
    IndexSeries::new(
        WeeklySeries::new(vci.series.grid().clone(), values)?,
        IndexKind::Vci3m,
        vci.region_id.clone(),
    )
}

/// Seasonal mean-subtracted NDVI ("absolute anomaly"); gaps propagate.
pub fn compute_ndvi_anomaly(
    series: &WeeklySeries,
    clim: &Climatology,
    region_id: &str,
) -> Result<IndexSeries> {
    let mut values = Vec::with_capacity(series.len());
    for slot in 0..series.len() {
        let week = series.grid().week_of_year(slot);
        match series.value(slot) {
            None => values.push(None),
            Some(v) => {
                let w = clim
                    .week(week)
                    .ok_or_else(|| Error::InvalidInput(format!("no climatology for week {week}")))?;
                values.push(Some(v - w.mean));
            }
        }
    }
    IndexSeries::new(
        WeeklySeries::new(series.grid().clone(), values)?,
        IndexKind::NdviAnomaly,
        region_id,
    )
}

/// Writes `week,min,max,mean` rows.
pub fn write_climatology(writer: impl Write, clim: &Climatology) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["week", "min", "max", "mean"])?;
    for week in 1..=52u32 {
        let c = clim.week(week).expect("weeks 1..=52 always present");
        w.write_record([
            week.to_string(),
            format!("{}", c.min),
            format!("{}", c.max),
            format!("{}", c.mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_climatology(reader: impl Read) -> Result<Climatology> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut weeks = vec![
        ClimWeek {
            min: 0.0,
            max: 0.0,
            mean: 0.0
        };
        52
    ];
    let mut seen = vec![false; 52];
    for (idx, row) in csv_reader.records().enumerate() {
        let line = idx + 2;
        let row = row?;
        let parse = |field: &str| -> Result<f64> {
            field.trim().parse().map_err(|e| Error::Parse {
                line,
                message: format!("bad number {field:?}: {e}"),
            })
        };
        let week: usize = row[0].trim().parse().map_err(|e| Error::Parse {
            line,
            message: format!("bad week {:?}: {e}", &row[0]),
        })?;
        if !(1..=52).contains(&week) {
            return Err(Error::Parse {
                line,
                message: format!("week {week} out of 1..=52"),
            });
        }
        weeks[week - 1] = ClimWeek {
            min: parse(&row[1])?,
            max: parse(&row[2])?,
            mean: parse(&row[3])?,
        };
        seen[week - 1] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidInput(format!(
            "climatology file missing week {}",
            missing + 1
        )));
    }
    Climatology::from_weeks(weeks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::TimeGrid;
    use chrono::NaiveDate;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    /// Weekly series starting 2000-01-01 (a Saturday) with the given values.
    fn weekly(values: Vec<Option<f64>>) -> WeeklySeries {
        let grid = TimeGrid::new(d("2000-01-01"), values.len()).unwrap();
        WeeklySeries::new(grid, values).unwrap()
    }

    /// Three identical years tracing a seasonal profile.
    fn three_identical_years() -> WeeklySeries {
        let profile =
            |slot: usize| 0.3 + 0.1 * ((slot % 52) as f64 * 2.0 * std::f64::consts::PI / 52.0).sin();
        weekly((0..208).map(|s| Some(profile(s))).collect())
    }

    #[test]
    fn identical_years_collapse_spread() {
        let series = three_identical_years();
        let clim = build_climatology(&series).unwrap();
        for week in 1..=52 {
            let w = clim.week(week).unwrap();
            // Weeks-of-year drift across calendar years, so values sharing a
            // week are close but the envelope stays tight around the profile.
            assert!(w.max - w.min < 0.03, "week {week}: spread {}", w.max - w.min);
            assert!(w.min <= w.mean && w.mean <= w.max);
        }
    }

    #[test]
    fn two_level_years_give_min_max_mean() {
        // Alternate 0.2 and 0.4 every other year: min 0.2, max 0.4, mean 0.3.
        let values: Vec<Option<f64>> = (0..208)
            .map(|s| Some(if (s / 52) % 2 == 0 { 0.2 } else { 0.4 }))
            .collect();
        let series = weekly(values);
        let clim = build_climatology(&series).unwrap();
        for week in 1..=52 {
            let w = clim.week(week).unwrap();
            assert!((w.min - 0.2).abs() < 1e-12);
            assert!((w.max - 0.4).abs() < 1e-12);
            assert!((w.mean - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn insufficient_week_is_named() {
        let series = weekly((0..60).map(|s| Some(s as f64 * 0.001)).collect());
        match build_climatology(&series) {
            Err(Error::InsufficientClimatology { week, count }) => {
                assert!(week >= 1);
                assert!(count < 2);
            }
            other => panic!("expected insufficiency error, got {other:?}"),
        }
    }

    fn flat_clim(min: f64, max: f64) -> Climatology {
        Climatology::from_weeks(
            (0..52)
                .map(|_| ClimWeek {
                    min,
                    max,
                    mean: 0.5 * (min + max),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn vci_bounds_and_midpoint() {
        let clim = flat_clim(0.2, 0.4);
        let series = weekly(vec![Some(0.2), Some(0.4), Some(0.3), None]);
        let out = compute_vci(&series, &clim, "r", DegenerateWeekPolicy::Error).unwrap();
        let vci = &out.index.series;
        assert!((vci.value(0).unwrap() - 0.0).abs() < 1e-12);
        assert!((vci.value(1).unwrap() - 100.0).abs() < 1e-12);
        assert!((vci.value(2).unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(vci.value(3), None);
        assert_eq!(out.clipped, 0);
    }

    #[test]
    fn vci_clips_and_counts_out_of_reference() {
        let clim = flat_clim(0.2, 0.4);
        let series = weekly(vec![Some(0.1), Some(0.5), Some(0.3)]);
        let out = compute_vci(&series, &clim, "r", DegenerateWeekPolicy::Error).unwrap();
        assert_eq!(out.clipped, 2);
        assert_eq!(out.index.series.value(0), Some(0.0));
        assert_eq!(out.index.series.value(1), Some(100.0));
    }

    #[test]
    fn vci_degenerate_week_policy() {
        let clim = flat_clim(0.3, 0.3);
        let series = weekly(vec![Some(0.3)]);
        assert!(matches!(
            compute_vci(&series, &clim, "r", DegenerateWeekPolicy::Error),
            Err(Error::DegenerateWeek { .. })
        ));
        let out = compute_vci(&series, &clim, "r", DegenerateWeekPolicy::MapToMidpoint).unwrap();
        assert_eq!(out.index.series.value(0), Some(50.0));
    }

    #[test]
    fn vci_affine_invariant() {
        // Per-year level shifts guarantee a healthy min-max spread per week.
        let profile = |slot: usize| {
            0.3 + 0.1 * ((slot % 52) as f64 * 2.0 * std::f64::consts::PI / 52.0).sin()
                + 0.03 * (slot / 52) as f64
        };
        let series = weekly((0..208).map(|s| Some(profile(s))).collect());
        let clim = build_climatology(&series).unwrap();
        let out = compute_vci(&series, &clim, "r", DegenerateWeekPolicy::Error).unwrap();

        let scaled = weekly(
            series
                .values()
                .iter()
                .map(|v| v.map(|x| 2.5 * x + 0.1))
                .collect(),
        );
        let scaled_clim = build_climatology(&scaled).unwrap();
        let scaled_out =
            compute_vci(&scaled, &scaled_clim, "r", DegenerateWeekPolicy::Error).unwrap();
        for slot in 0..series.len() {
            let a = out.index.series.value(slot).unwrap();
            let b = scaled_out.index.series.value(slot).unwrap();
            assert!((a - b).abs() < 1e-9, "slot {slot}: {a} vs {b}");
        }
    }

    fn vci_series(values: Vec<Option<f64>>) -> IndexSeries {
        IndexSeries::new(weekly(values), IndexKind::Vci, "r").unwrap()
    }

    #[test]
    fn vci3m_constant_and_gap_rules() {
        let vci = vci_series(vec![Some(40.0); 20]);
        let ndvi = weekly(vec![Some(0.3); 20]);
        let v3 = compute_vci3m(&vci, &ndvi).unwrap();
        for slot in 0..20 {
            assert!((v3.series.value(slot).unwrap() - 40.0).abs() < 1e-12);
        }

        // Current NDVI gap forces a VCI3M gap regardless of history.
        let mut ndvi_vals: Vec<Option<f64>> = vec![Some(0.3); 20];
        ndvi_vals[15] = None;
        let mut vci_vals: Vec<Option<f64>> = vec![Some(40.0); 20];
        vci_vals[15] = None;
        let v3 = compute_vci3m(&vci_series(vci_vals), &weekly(ndvi_vals)).unwrap();
        assert_eq!(v3.series.value(15), None);
        assert!(v3.series.value(16).is_some());
    }

    #[test]
    fn vci3m_partial_window_mean() {
        // 5 gaps inside the 12-week window, current present: mean of the 7.
        let mut vci_vals: Vec<Option<f64>> = (0..24).map(|i| Some(i as f64)).collect();
        let mut ndvi_vals: Vec<Option<f64>> = vec![Some(0.3); 24];
        for slot in 12..17 {
            vci_vals[slot] = None;
            ndvi_vals[slot] = None;
        }
        let v3 = compute_vci3m(&vci_series(vci_vals.clone()), &weekly(ndvi_vals)).unwrap();
        let expected: f64 = (12..24)
            .filter_map(|s| vci_vals[s].map(|v| v))
            .sum::<f64>()
            / 7.0;
        assert!((v3.series.value(23).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn vci3m_matches_brute_force_moving_average() {
        let values: Vec<Option<f64>> = (0..120)
            .map(|i| Some(50.0 + 30.0 * ((i as f64) * 0.23).sin()))
            .collect();
        let vci = vci_series(values.clone());
        let ndvi = weekly(vec![Some(0.3); 120]);
        let v3 = compute_vci3m(&vci, &ndvi).unwrap();
        for slot in 0..120usize {
            let lo = slot.saturating_sub(11);
            let window: Vec<f64> = (lo..=slot).map(|s| values[s].unwrap()).collect();
            let expected = window.iter().sum::<f64>() / window.len() as f64;
            assert!((v3.series.value(slot).unwrap() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn anomaly_subtracts_seasonal_mean() {
        let clim = flat_clim(0.2, 0.4); // mean 0.3
        let series = weekly(vec![Some(0.3), Some(0.35), None]);
        let anomaly = compute_ndvi_anomaly(&series, &clim, "r").unwrap();
        assert!((anomaly.series.value(0).unwrap() - 0.0).abs() < 1e-12);
        assert!((anomaly.series.value(1).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(anomaly.series.value(2), None);
    }

    #[test]
    fn climatology_csv_round_trip() {
        let series = three_identical_years();
        let clim = build_climatology(&series).unwrap();
        let mut buf = Vec::new();
        write_climatology(&mut buf, &clim).unwrap();
        let parsed = read_climatology(buf.as_slice()).unwrap();
        assert_eq!(parsed, clim);
    }
}
