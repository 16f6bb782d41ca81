//! Observation CSV ingestion, weekly compositing, and regional aggregation.
//!
//! Input CSV schema: `pixel_id,region_id,date,ndvi,quality` with ISO-8601
//! dates, NDVI in [-1, 1], quality `good` or `bad`. Regional series are
//! written as `region_id,date,value` with an empty value field for gaps.

use crate::error::{Error, Result};
use crate::series::{ObservationSample, ObservationSeries, Quality, WeeklySeries, align_to_grid};
use crate::time::TimeGrid;
use chrono::NaiveDate;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

/// Pixel series of one region on a shared grid, plus the minimum pixel
/// count required for an aggregate value to be emitted.
#[derive(Debug, Clone)]
pub struct RegionSampleSet {
    pub region_id: String,
    pub pixel_series: Vec<WeeklySeries>,
    pub min_pixels_for_aggregate: usize,
}

impl RegionSampleSet {
    pub fn new(
        region_id: impl Into<String>,
        pixel_series: Vec<WeeklySeries>,
        min_pixels_for_aggregate: usize,
    ) -> Result<Self> {
        let region_id = region_id.into();
        if min_pixels_for_aggregate < 1 {
            return Err(Error::InvalidInput(
                "min_pixels_for_aggregate must be >= 1".into(),
            ));
        }
        if let Some(first) = pixel_series.first() {
            if pixel_series.iter().any(|s| s.grid() != first.grid()) {
                return Err(Error::InvalidInput(format!(
                    "region {region_id}: pixel series do not share one grid"
                )));
            }
        }
        Ok(Self {
            region_id,
            pixel_series,
            min_pixels_for_aggregate,
        })
    }
}

/// Mean of the good samples in each slot window; empty windows are gaps.
pub fn composite_weekly(obs: &ObservationSeries, grid: &TimeGrid) -> Result<WeeklySeries> {
    let aligned = align_to_grid(obs, grid)?;
    let mut sums = vec![0.0f64; grid.len()];
    let mut counts = vec![0usize; grid.len()];
    for (slot, value) in aligned {
        sums[slot] += value;
        counts[slot] += 1;
    }
    let values = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    WeeklySeries::new(grid.clone(), values)
}

/// Per-slot mean over pixels with a present value; slots with fewer than
/// `min_pixels_for_aggregate` contributing pixels become gaps.
pub fn aggregate_region(set: &RegionSampleSet) -> Result<WeeklySeries> {
    let Some(first) = set.pixel_series.first() else {
        return Err(Error::InvalidInput(format!(
            "region {}: no pixel series to aggregate",
            set.region_id
        )));
    };
    let grid = first.grid().clone();
    let mut values = Vec::with_capacity(grid.len());
    for slot in 0..grid.len() {
        let mut sum = 0.0;
        let mut n = 0usize;
        for series in &set.pixel_series {
            if let Some(v) = series.value(slot) {
                sum += v;
                n += 1;
            }
        }
        values.push((n >= set.min_pixels_for_aggregate).then(|| sum / n as f64));
    }
    WeeklySeries::new(grid, values)
}

/// Count of pixels with a present value at each slot.
pub fn pixel_presence_counts(set: &RegionSampleSet) -> Vec<usize> {
    let Some(first) = set.pixel_series.first() else {
        return Vec::new();
    };
    (0..first.grid().len())
        .map(|slot| {
            set.pixel_series
                .iter()
                .filter(|s| s.value(slot).is_some())
                .count()
        })
        .collect()
}

fn parse_quality(token: &str, line: usize) -> Result<Quality> {
    match token.trim() {
        "good" => Ok(Quality::Good),
        "bad" => Ok(Quality::Bad),
        other => Err(Error::Parse {
            line,
            message: format!("quality must be \"good\" or \"bad\", got {other:?}"),
        }),
    }
}

/// Reads an observation CSV into one series per pixel, sorted by date.
/// Duplicate (pixel, date) rows are a hard error.
pub fn load_observations(path: impl AsRef<Path>) -> Result<Vec<ObservationSeries>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_observations(file)
}

/// Same as [`load_observations`] but from any reader.
pub fn read_observations(reader: impl Read) -> Result<Vec<ObservationSeries>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = csv_reader.headers()?;
        let expected = ["pixel_id", "region_id", "date", "ndvi", "quality"];
        if headers.iter().map(str::trim).ne(expected) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {expected:?}, got {headers:?}"),
            });
        }
    }

    // pixel -> (region, date -> sample), BTreeMap keeps output order stable.
    let mut pixels: BTreeMap<String, (String, BTreeMap<NaiveDate, ObservationSample>)> =
        BTreeMap::new();
    for (idx, row) in csv_reader.records().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let row = row?;
        if row.len() != 5 {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 fields, got {}", row.len()),
            });
        }
        let pixel_id = row[0].trim().to_string();
        let region_id = row[1].trim().to_string();
        if pixel_id.is_empty() || region_id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "pixel_id and region_id must be non-empty".into(),
            });
        }
        let date = NaiveDate::parse_from_str(row[2].trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("bad date {:?}: {e}", &row[2]),
        })?;
        let value: f64 = row[3].trim().parse().map_err(|e| Error::Parse {
            line,
            message: format!("bad ndvi {:?}: {e}", &row[3]),
        })?;
        let quality = parse_quality(&row[4], line)?;
        if quality == Quality::Good && !(value.is_finite() && (-1.0..=1.0).contains(&value)) {
            return Err(Error::Parse {
                line,
                message: format!("good-quality ndvi {value} outside [-1, 1]"),
            });
        }

        let entry = pixels
            .entry(pixel_id.clone())
            .or_insert_with(|| (region_id.clone(), BTreeMap::new()));
        if entry.0 != region_id {
            return Err(Error::Parse {
                line,
                message: format!(
                    "pixel {pixel_id} appears in regions {:?} and {region_id:?}",
                    entry.0
                ),
            });
        }
        let sample = ObservationSample {
            date,
            value,
            quality,
        };
        if entry.1.insert(date, sample).is_some() {
            return Err(Error::DuplicateRecord { pixel_id, date });
        }
    }

    pixels
        .into_iter()
        .map(|(pixel_id, (region_id, by_date))| {
            ObservationSeries::new(pixel_id, region_id, by_date.into_values().collect())
        })
        .collect()
}

/// Groups pixel series by region, preserving pixel order within each region.
pub fn group_by_region(series: Vec<ObservationSeries>) -> BTreeMap<String, Vec<ObservationSeries>> {
    let mut regions: BTreeMap<String, Vec<ObservationSeries>> = BTreeMap::new();
    for s in series {
        regions.entry(s.region_id.clone()).or_default().push(s);
    }
    regions
}

/// Writes a regional weekly series as `region_id,date,value` rows.
pub fn write_regional_series(
    writer: impl Write,
    region_id: &str,
    series: &WeeklySeries,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "date", "value"])?;
    for slot in 0..series.len() {
        let date = series.grid().slot_date(slot).to_string();
        match series.value(slot) {
            Some(v) => w.write_record([region_id, &date, &format!("{v}")])?,
            None => w.write_record([region_id, &date, ""])?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a `region_id,date,value` CSV back into (region_id, series).
/// Dates must form a regular weekly grid.
pub fn read_regional_series(reader: impl Read) -> Result<(String, WeeklySeries)> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = csv_reader.headers()?;
        let expected = ["region_id", "date", "value"];
        if headers.iter().map(str::trim).ne(expected) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {expected:?}, got {headers:?}"),
            });
        }
    }
    let mut region_id: Option<String> = None;
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut values: Vec<Option<f64>> = Vec::new();
    for (idx, row) in csv_reader.records().enumerate() {
        let line = idx + 2;
        let row = row?;
        let region = row[0].trim().to_string();
        match &region_id {
            None => region_id = Some(region),
            Some(r) if *r != region => {
                return Err(Error::Parse {
                    line,
                    message: format!("mixed regions {r:?} and {region:?} in one series file"),
                })
            }
            _ => {}
        }
        let date = NaiveDate::parse_from_str(row[1].trim(), "%Y-%m-%d").map_err(|e| {
            Error::Parse {
                line,
                message: format!("bad date {:?}: {e}", &row[1]),
            }
        })?;
        dates.push(date);
        let field = row[2].trim();
        if field.is_empty() {
            values.push(None);
        } else {
            values.push(Some(field.parse().map_err(|e| Error::Parse {
                line,
                message: format!("bad value {field:?}: {e}"),
            })?));
        }
    }
    let Some(region_id) = region_id else {
        return Err(Error::InvalidInput("empty regional series file".into()));
    };
    let Some(&start) = dates.first() else {
        return Err(Error::InvalidInput("regional series has no rows".into()));
    };
    for (i, d) in dates.iter().enumerate() {
        if (*d - start).num_days() != 7 * i as i64 {
            return Err(Error::InvalidInput(format!(
                "regional series dates not weekly at row {}: {d}",
                i + 2
            )));
        }
    }
    let grid = TimeGrid::new(start, dates.len())?;
    Ok((region_id, WeeklySeries::new(grid, values)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn grid10() -> TimeGrid {
        TimeGrid::new(d("2000-01-01"), 10).unwrap()
    }

    fn obs_csv(rows: &[&str]) -> String {
        let mut s = String::from("pixel_id,region_id,date,ndvi,quality\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn composite_means_per_window() {
        let obs = ObservationSeries::new(
            "p0",
            "r0",
            vec![
                ObservationSample {
                    date: d("2000-01-20"),
                    value: 0.30,
                    quality: Quality::Good,
                },
                ObservationSample {
                    date: d("2000-01-22"),
                    value: 0.34,
                    quality: Quality::Good,
                },
                ObservationSample {
                    date: d("2000-02-05"),
                    value: 0.5,
                    quality: Quality::Good,
                },
            ],
        )
        .unwrap();
        let series = composite_weekly(&obs, &grid10()).unwrap();
        assert!((series.value(3).unwrap() - 0.32).abs() < 1e-12);
        assert_eq!(series.value(4), None);
        assert_eq!(series.value(5), Some(0.5));
    }

    #[test]
    fn composite_permutation_invariant() {
        // Same window, orders differ only by date within the window.
        let grid = grid10();
        let mk = |vals: &[(&str, f64)]| {
            let samples = vals
                .iter()
                .map(|(date, v)| ObservationSample {
                    date: d(date),
                    value: *v,
                    quality: Quality::Good,
                })
                .collect();
            ObservationSeries::new("p", "r", samples).unwrap()
        };
        let a = mk(&[("2000-01-17", 0.1), ("2000-01-19", 0.2), ("2000-01-21", 0.4)]);
        let b = mk(&[("2000-01-17", 0.4), ("2000-01-19", 0.1), ("2000-01-21", 0.2)]);
        let ca = composite_weekly(&a, &grid).unwrap();
        let cb = composite_weekly(&b, &grid).unwrap();
        let (va, vb) = (ca.value(3).unwrap(), cb.value(3).unwrap());
        assert!((va - vb).abs() < 1e-12, "{va} vs {vb}");
    }

    #[test]
    fn aggregate_threshold_rule() {
        let grid = grid10();
        let mk_pixel = |present: bool| {
            let values = (0..10).map(|_| present.then_some(0.4)).collect();
            WeeklySeries::new(grid.clone(), values).unwrap()
        };
        // 30 pixels present -> mean emitted.
        let set = RegionSampleSet::new("r", (0..30).map(|_| mk_pixel(true)).collect(), 25).unwrap();
        let agg = aggregate_region(&set).unwrap();
        assert!((agg.value(0).unwrap() - 0.4).abs() < 1e-12);

        // 24 of 30 present at threshold 25 -> gap.
        let mut pixels: Vec<WeeklySeries> = (0..24).map(|_| mk_pixel(true)).collect();
        pixels.extend((0..6).map(|_| mk_pixel(false)));
        let set = RegionSampleSet::new("r", pixels, 25).unwrap();
        let agg = aggregate_region(&set).unwrap();
        assert_eq!(agg.value(0), None);

        // Threshold 1, single pixel 0.7 -> 0.7.
        let one = WeeklySeries::new(grid.clone(), vec![Some(0.7); 10]).unwrap();
        let set = RegionSampleSet::new("r", vec![one], 1).unwrap();
        assert_eq!(aggregate_region(&set).unwrap().value(0), Some(0.7));

        // Empty pixel set is an error.
        assert!(aggregate_region(&RegionSampleSet::new("r", vec![], 1).unwrap()).is_err());
    }

    #[test]
    fn aggregate_stays_within_pixel_range() {
        let grid = grid10();
        let mk = |v: f64| WeeklySeries::new(grid.clone(), vec![Some(v); 10]).unwrap();
        let set =
            RegionSampleSet::new("r", vec![mk(0.1), mk(0.5), mk(0.3)], 1).unwrap();
        let agg = aggregate_region(&set).unwrap();
        for slot in 0..10 {
            let v = agg.value(slot).unwrap();
            assert!((0.1..=0.5).contains(&v));
        }
    }

    #[test]
    fn gap_monotone_in_threshold() {
        let grid = grid10();
        let mk_pixel = |present: bool| {
            let values = (0..10).map(|_| present.then_some(0.4)).collect();
            WeeklySeries::new(grid.clone(), values).unwrap()
        };
        let pixels: Vec<WeeklySeries> = (0..10).map(|i| mk_pixel(i < 7)).collect();
        let mut previous_gaps = 0;
        for threshold in 1..=10 {
            let set = RegionSampleSet::new("r", pixels.clone(), threshold).unwrap();
            let gaps = aggregate_region(&set)
                .unwrap()
                .values()
                .iter()
                .filter(|v| v.is_none())
                .count();
            assert!(gaps >= previous_gaps);
            previous_gaps = gaps;
        }
    }

    #[test]
    fn load_parses_sorts_and_flags() {
        let csv = obs_csv(&[
            "p1,r1,2000-01-08,0.30,good",
            "p1,r1,2000-01-01,0.20,good",
            "p1,r1,2000-01-15,0.40,bad",
        ]);
        let series = read_observations(csv.as_bytes()).unwrap();
        assert_eq!(series.len(), 1);
        let s = &series[0];
        assert_eq!(s.pixel_id, "p1");
        assert_eq!(s.samples().len(), 3);
        assert_eq!(s.samples()[0].date, d("2000-01-01"));
        assert_eq!(s.samples()[2].quality, Quality::Bad);
    }

    #[test]
    fn load_rejects_malformed_and_duplicates() {
        let bad_quality = obs_csv(&["p1,r1,2000-01-01,0.2,fine"]);
        match read_observations(bad_quality.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        let dup = obs_csv(&["p1,r1,2000-01-01,0.2,good", "p1,r1,2000-01-01,0.3,good"]);
        match read_observations(dup.as_bytes()) {
            Err(Error::DuplicateRecord { pixel_id, date }) => {
                assert_eq!(pixel_id, "p1");
                assert_eq!(date, d("2000-01-01"));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }

        let bad_ndvi = obs_csv(&["p1,r1,2000-01-01,1.7,good"]);
        assert!(read_observations(bad_ndvi.as_bytes()).is_err());
    }

    #[test]
    fn regional_series_round_trip() {
        let grid = TimeGrid::new(d("2000-01-01"), 4).unwrap();
        let series = WeeklySeries::new(
            grid,
            vec![Some(0.123456789012345), None, Some(-0.5), Some(1.0 / 3.0)],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_regional_series(&mut buf, "region01", &series).unwrap();
        let (region, parsed) = read_regional_series(buf.as_slice()).unwrap();
        assert_eq!(region, "region01");
        assert_eq!(parsed, series);
    }
}
