//! Raster-derived city indicators and their time series.
//!
//! The urban green index is the fraction of valid pixels whose NDVI exceeds a
//! threshold; the land-development index is the same count over NDBI.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{normalized_difference, Raster};

pub const GREEN_INDEX: &str = "green_index";
pub const DEVELOPMENT_INDEX: &str = "development_index";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexConfig {
    /// (NIR, RED)
    pub green_band_pair: (String, String),
    /// (SWIR, NIR)
    pub builtup_band_pair: (String, String),
    pub ndvi_threshold: f64,
    pub ndbi_threshold: f64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            green_band_pair: ("nir".into(), "red".into()),
            builtup_band_pair: ("swir".into(), "nir".into()),
            ndvi_threshold: 0.3,
            ndbi_threshold: 0.0,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("ndvi_threshold", self.ndvi_threshold),
            ("ndbi_threshold", self.ndbi_threshold),
        ] {
            if !(t.is_finite() && t > -1.0 && t < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (-1, 1), got {t}")));
            }
        }
        Ok(())
    }
}

/// Pixel tally behind an index value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PixelCount {
    pub above: usize,
    pub valid: usize,
}

impl PixelCount {
    pub fn fraction(&self) -> Result<f64> {
        if self.valid == 0 {
            return Err(Error::EmptyDomain("every pixel is nodata".into()));
        }
        Ok(self.above as f64 / self.valid as f64)
    }
}

fn count_above(raster: &Raster, bands: &(String, String), threshold: f64) -> Result<PixelCount> {
    let nd = normalized_difference(raster, &bands.0, &bands.1)?;
    Ok(nd
        .values()
        .iter()
        .filter(|v| !v.is_nan())
        .fold(PixelCount::default(), |acc, &v| PixelCount {
            above: acc.above + usize::from(v > threshold),
            valid: acc.valid + 1,
        }))
}

pub fn green_pixel_count(raster: &Raster, config: &IndexConfig) -> Result<PixelCount> {
    config.validate()?;
    count_above(raster, &config.green_band_pair, config.ndvi_threshold)
}

pub fn builtup_pixel_count(raster: &Raster, config: &IndexConfig) -> Result<PixelCount> {
    config.validate()?;
    count_above(raster, &config.builtup_band_pair, config.ndbi_threshold)
}

pub fn urban_green_index(raster: &Raster, config: &IndexConfig) -> Result<f64> {
    green_pixel_count(raster, config)?.fraction()
}

pub fn land_development_index(raster: &Raster, config: &IndexConfig) -> Result<f64> {
    builtup_pixel_count(raster, config)?.fraction()
}

/// Timestamped indicator values for one region. Timestamps are days since
/// the Unix epoch and strictly increase.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSeries {
    region_id: String,
    names: Vec<String>,
    entries: Vec<(i64, Vec<f64>)>,
}

impl IndicatorSeries {
    pub fn new(region_id: impl Into<String>) -> Self {
        Self {
            region_id: region_id.into(),
            names: Vec::new(),
            entries: Vec::new(),
        }
    }

    pub fn region_id(&self) -> &str {
        &self.region_id
    }

    /// Column names, fixed by the first observation.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.entries.iter().map(|(t, _)| *t).collect()
    }

    pub fn last(&self) -> Option<(i64, BTreeMap<String, f64>)> {
        self.entries.last().map(|(t, v)| {
            (
                *t,
                self.names.iter().cloned().zip(v.iter().copied()).collect(),
            )
        })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema {
                expected: self.names.clone(),
                found: vec![name.to_string()],
            })?;
        Ok(self.entries.iter().map(|(_, v)| v[idx]).collect())
    }

    /// Returns a new series with one more entry; `self` is left untouched.
    pub fn append_observation(
        &self,
        timestamp: i64,
        values: &BTreeMap<String, f64>,
    ) -> Result<IndicatorSeries> {
        if let Some(&(last, _)) = self.entries.last() {
            if timestamp <= last {
                return Err(Error::Ordering { timestamp, last });
            }
        }
        let found: Vec<String> = values.keys().cloned().collect();
        if !self.entries.is_empty() && found != self.names {
            return Err(Error::Schema {
                expected: self.names.clone(),
                found,
            });
        }
        if found.is_empty() {
            return Err(Error::Validation("observation has no values".into()));
        }
        if let Some((k, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!("value `{k}` is not finite: {v}")));
        }
        let mut next = self.clone();
        next.names = found;
        next.entries
            .push((timestamp, values.values().copied().collect()));
        Ok(next)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (t, vals) in &self.entries {
            write!(out, "{t}").unwrap();
            for v in vals {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(region_id: impl Into<String>, text: &str) -> Result<IndicatorSeries> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("series csv", "missing header"))?;
        let mut cols = header.split(',').map(str::trim);
        if cols.next() != Some("timestamp") {
            return Err(Error::parse("series csv", "first column must be `timestamp`"));
        }
        let names: Vec<String> = cols.map(str::to_string).collect();
        let mut series = IndicatorSeries::new(region_id);
        for (lineno, line) in lines.enumerate() {
            let ctx = || format!("series csv line {}", lineno + 2);
            let mut fields = line.split(',').map(str::trim);
            let t: i64 = fields
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|e| Error::parse(ctx(), e))?;
            let vals = fields
                .map(|f| f.parse::<f64>().map_err(|e| Error::parse(ctx(), e)))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != names.len() {
                return Err(Error::parse(
                    ctx(),
                    format!("expected {} values, got {}", names.len(), vals.len()),
                ));
            }
            let map = names.iter().cloned().zip(vals).collect();
            series = series.append_observation(t, &map)?;
        }
        Ok(series)
    }
}
