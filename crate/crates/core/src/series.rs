//! Shared data model: observation streams, weekly series, index series, and
//! drought categories.

use crate::error::{Error, Result};
use crate::time::TimeGrid;
use chrono::NaiveDate;

/// Quality flag carried by raw observations; `Bad` samples are masked out
/// before any numeric use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quality {
    Good,
    Bad,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationSample {
    pub date: NaiveDate,
    pub value: f64,
    pub quality: Quality,
}

/// Irregular per-pixel (date, value, quality) stream; the raw input.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    pub pixel_id: String,
    pub region_id: String,
    samples: Vec<ObservationSample>,
}

impl ObservationSeries {
    /// Builds a validated series: dates strictly increasing, good values in [-1, 1].
    pub fn new(
        pixel_id: impl Into<String>,
        region_id: impl Into<String>,
        samples: Vec<ObservationSample>,
    ) -> Result<Self> {
        let pixel_id = pixel_id.into();
        for pair in samples.windows(2) {
            if pair[1].date <= pair[0].date {
                return Err(Error::InvalidInput(format!(
                    "pixel {pixel_id}: sample dates not strictly increasing at {}",
                    pair[1].date
                )));
            }
        }
        for s in &samples {
            if s.quality == Quality::Good && !(s.value.is_finite() && (-1.0..=1.0).contains(&s.value))
            {
                return Err(Error::InvalidValue(format!(
                    "pixel {pixel_id}: good-quality NDVI {} on {} outside [-1, 1]",
                    s.value, s.date
                )));
            }
        }
        Ok(Self {
            pixel_id,
            region_id: region_id.into(),
            samples,
        })
    }

    pub fn samples(&self) -> &[ObservationSample] {
        &self.samples
    }

    pub fn good_samples(&self) -> impl Iterator<Item = &ObservationSample> {
        self.samples.iter().filter(|s| s.quality == Quality::Good)
    }

    /// Copy containing only samples dated on or before `cutoff`.
    pub fn truncated_at(&self, cutoff: NaiveDate) -> Self {
        Self {
            pixel_id: self.pixel_id.clone(),
            region_id: self.region_id.clone(),
            samples: self
                .samples
                .iter()
                .copied()
                .filter(|s| s.date <= cutoff)
                .collect(),
        }
    }
}

/// Regular weekly series with optional gaps; the working representation
/// everywhere downstream of ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct WeeklySeries {
    grid: TimeGrid,
    values: Vec<Option<f64>>,
}

impl WeeklySeries {
    pub fn new(grid: TimeGrid, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "series length {} does not match grid length {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn empty(grid: TimeGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![None; n],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn value(&self, slot: usize) -> Option<f64> {
        self.values.get(slot).copied().flatten()
    }

    pub fn set(&mut self, slot: usize, value: Option<f64>) {
        self.values[slot] = value;
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// (slot, value) pairs for present slots.
    pub fn present(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|x| (i, x)))
    }

    pub fn first_present(&self) -> Option<usize> {
        self.values.iter().position(|v| v.is_some())
    }

    pub fn last_present(&self) -> Option<usize> {
        self.values.iter().rposition(|v| v.is_some())
    }

    /// Mean over present values, if any.
    pub fn mean(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (_, v) in self.present() {
            sum += v;
            n += 1;
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Maximal runs of consecutive gaps as (start, len) pairs.
    pub fn gap_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < self.values.len() {
            if self.values[i].is_none() {
                let start = i;
                while i < self.values.len() && self.values[i].is_none() {
                    i += 1;
                }
                runs.push((start, i - start));
            } else {
                i += 1;
            }
        }
        runs
    }

    /// Maximal runs of consecutive present slots as (start, len) pairs.
    pub fn present_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < self.values.len() {
            if self.values[i].is_some() {
                let start = i;
                while i < self.values.len() && self.values[i].is_some() {
                    i += 1;
                }
                runs.push((start, i - start));
            } else {
                i += 1;
            }
        }
        runs
    }

    /// Series restricted to slots `0..=last_slot` (values cloned).
    pub fn truncated(&self, last_slot: usize) -> Result<Self> {
        let grid = self.grid.truncated(last_slot + 1)?;
        Ok(Self {
            grid,
            values: self.values[..=last_slot].to_vec(),
        })
    }
}

/// Which index a weekly series carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum IndexKind {
    Ndvi,
    NdviAnomaly,
    Vci,
    Vci3m,
}

impl std::fmt::Display for IndexKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IndexKind::Ndvi => write!(f, "ndvi"),
            IndexKind::NdviAnomaly => write!(f, "ndvi-anomaly"),
            IndexKind::Vci => write!(f, "vci"),
            IndexKind::Vci3m => write!(f, "vci3m"),
        }
    }
}

impl std::str::FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndvi" => Ok(IndexKind::Ndvi),
            "ndvi-anomaly" | "ndvi_anomaly" | "anomaly" => Ok(IndexKind::NdviAnomaly),
            "vci" => Ok(IndexKind::Vci),
            "vci3m" => Ok(IndexKind::Vci3m),
            other => Err(Error::Config(format!("unrecognized index kind {other:?}"))),
        }
    }
}

/// Numerical slack allowed on the [0, 100] range of VCI-like indices.
pub const VCI_RANGE_TOL: f64 = 1e-9;

/// A weekly series tagged with its index kind and region identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSeries {
    pub series: WeeklySeries,
    pub kind: IndexKind,
    pub region_id: String,
}

impl IndexSeries {
    pub fn new(series: WeeklySeries, kind: IndexKind, region_id: impl Into<String>) -> Result<Self> {
        let region_id = region_id.into();
        for (slot, v) in series.present() {
            let ok = match kind {
                IndexKind::Vci | IndexKind::Vci3m => {
                    v.is_finite() && v >= -VCI_RANGE_TOL && v <= 100.0 + VCI_RANGE_TOL
                }
                IndexKind::Ndvi => v.is_finite() && (-1.0..=1.0).contains(&v),
                IndexKind::NdviAnomaly => v.is_finite(),
            };
            if !ok {
                return Err(Error::InvalidValue(format!(
                    "region {region_id}: {kind} value {v} at slot {slot} out of range"
                )));
            }
        }
        Ok(Self {
            series,
            kind,
            region_id,
        })
    }
}

/// NDMA drought scale on VCI3M with boundaries 50, 35, 20, 10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DroughtCategory {
    Wet,
    Normal,
    Moderate,
    Severe,
    Extreme,
}

impl std::fmt::Display for DroughtCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DroughtCategory::Wet => write!(f, "wet"),
            DroughtCategory::Normal => write!(f, "normal"),
            DroughtCategory::Moderate => write!(f, "moderate"),
            DroughtCategory::Severe => write!(f, "severe"),
            DroughtCategory::Extreme => write!(f, "extreme"),
        }
    }
}

/// VCI3M value below which the operational drought alert fires.
pub const DROUGHT_ALERT_THRESHOLD: f64 = 35.0;

/// Maps a VCI3M value onto the drought scale. Boundary values go to the
/// drier class, so the `< 35` alert rule and `categorize(v) >= Moderate`
/// agree everywhere except exactly at 35.
pub fn categorize(vci3m: f64) -> Result<DroughtCategory> {
    if !vci3m.is_finite() {
        return Err(Error::InvalidValue(format!(
            "cannot categorize non-finite VCI3M {vci3m}"
        )));
    }
    Ok(if vci3m > 50.0 {
        DroughtCategory::Wet
    } else if vci3m > 35.0 {
        DroughtCategory::Normal
    } else if vci3m > 20.0 {
        DroughtCategory::Moderate
    } else if vci3m > 10.0 {
        DroughtCategory::Severe
    } else {
        DroughtCategory::Extreme
    })
}

/// Maps each good-quality sample to the slot whose 7-day window contains it.
/// Bad-quality samples are dropped; samples outside the grid span are an error.
pub fn align_to_grid(obs: &ObservationSeries, grid: &TimeGrid) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    let mut out_of_range = Vec::new();
    for s in obs.good_samples() {
        match grid.slot_containing(s.date) {
            Some(slot) => out.push((slot, s.value)),
            None => out_of_range.push(s.date),
        }
    }
    if !out_of_range.is_empty() {
        return Err(Error::OutOfRange(out_of_range));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn sample(date: &str, value: f64, quality: Quality) -> ObservationSample {
        ObservationSample {
            date: d(date),
            value,
            quality,
        }
    }

    #[test]
    fn categorize_matches_scale() {
        assert_eq!(categorize(60.0).unwrap(), DroughtCategory::Wet);
        assert_eq!(categorize(50.0).unwrap(), DroughtCategory::Normal);
        assert_eq!(categorize(35.0).unwrap(), DroughtCategory::Moderate);
        assert_eq!(categorize(20.0).unwrap(), DroughtCategory::Severe);
        assert_eq!(categorize(10.0).unwrap(), DroughtCategory::Extreme);
        assert_eq!(categorize(0.0).unwrap(), DroughtCategory::Extreme);
        assert_eq!(categorize(-5.0).unwrap(), DroughtCategory::Extreme);
        assert!(categorize(f64::NAN).is_err());
        assert!(categorize(f64::INFINITY).is_err());
    }

    #[test]
    fn align_maps_window_and_masks_bad() {
        let grid = TimeGrid::new(d("2000-01-01"), 10).unwrap();
        let obs = ObservationSeries::new(
            "p0",
            "r0",
            vec![
                sample("2000-01-22", 0.31, Quality::Good), // slot 3 exactly
                sample("2000-01-27", 0.40, Quality::Bad),  // masked
                sample("2000-01-20", 0.29, Quality::Good), // 2 days before slot 3
            ],
        );
        // Dates must be increasing; rebuild in order.
        assert!(obs.is_err());
        let obs = ObservationSeries::new(
            "p0",
            "r0",
            vec![
                sample("2000-01-20", 0.29, Quality::Good),
                sample("2000-01-22", 0.31, Quality::Good),
                sample("2000-01-27", 0.40, Quality::Bad),
            ],
        )
        .unwrap();
        let aligned = align_to_grid(&obs, &grid).unwrap();
        assert_eq!(aligned, vec![(3, 0.29), (3, 0.31)]);
    }

    #[test]
    fn align_rejects_out_of_span() {
        let grid = TimeGrid::new(d("2000-01-01"), 2).unwrap();
        let obs = ObservationSeries::new(
            "p0",
            "r0",
            vec![sample("2000-03-01", 0.2, Quality::Good)],
        )
        .unwrap();
        match align_to_grid(&obs, &grid) {
            Err(Error::OutOfRange(dates)) => assert_eq!(dates, vec![d("2000-03-01")]),
            other => panic!("expected out-of-range error, got {other:?}"),
        }
    }

    #[test]
    fn align_same_window_samples_share_slot() {
        let grid = TimeGrid::new(d("2000-01-01"), 4).unwrap();
        let mut samples = Vec::new();
        for day in 0..7 {
            samples.push(ObservationSample {
                date: d("2000-01-02") + Duration::days(day),
                value: 0.1 + 0.01 * day as f64,
                quality: Quality::Good,
            });
        }
        let obs = ObservationSeries::new("p0", "r0", samples).unwrap();
        let aligned = align_to_grid(&obs, &grid).unwrap();
        assert_eq!(aligned.len(), 7);
        assert!(aligned.iter().all(|(slot, _)| *slot == 1));
    }

    #[test]
    fn weekly_series_validation_and_runs() {
        let grid = TimeGrid::new(d("2000-01-01"), 5).unwrap();
        assert!(WeeklySeries::new(grid.clone(), vec![None; 4]).is_err());
        let s = WeeklySeries::new(
            grid,
            vec![Some(1.0), None, None, Some(2.0), None],
        )
        .unwrap();
        assert_eq!(s.present_count(), 2);
        assert_eq!(s.gap_runs(), vec![(1, 2), (4, 1)]);
        assert_eq!(s.present_runs(), vec![(0, 1), (3, 1)]);
        assert_eq!(s.first_present(), Some(0));
        assert_eq!(s.last_present(), Some(3));
    }

    #[test]
    fn index_series_range_checks() {
        let grid = TimeGrid::new(d("2000-01-01"), 2).unwrap();
        let ok = WeeklySeries::new(grid.clone(), vec![Some(0.0), Some(100.0)]).unwrap();
        assert!(IndexSeries::new(ok, IndexKind::Vci, "r").is_ok());
        let bad = WeeklySeries::new(grid.clone(), vec![Some(101.0), None]).unwrap();
        assert!(IndexSeries::new(bad, IndexKind::Vci3m, "r").is_err());
        let ndvi_bad = WeeklySeries::new(grid, vec![Some(1.5), None]).unwrap();
        assert!(IndexSeries::new(ndvi_bad, IndexKind::Ndvi, "r").is_err());
    }
}
