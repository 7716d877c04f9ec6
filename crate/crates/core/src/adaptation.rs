//! Calibration of satellite indices against reference anchors and the
//! development-versus-ecological-stress diagram.
//!
//! The horizontal axis is the calibrated development index. The vertical
//! axis is ecological stress, `1 - calibrated greenness`. A city sits in the
//! green zone when `x >= x_threshold` and `y <= y_threshold`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric mean of three normalized development components.
pub fn composite_hdi(health: f64, education: f64, income: f64) -> Result<f64> {
    for (name, v) in [("health", health), ("education", education), ("income", income)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Range(format!("{name} index {v} outside [0, 1]")));
        }
    }
    // Sorted so the rounded product does not depend on argument order.
    let mut parts = [health, education, income];
    parts.sort_by(f64::total_cmp);
    Ok((parts[0] * parts[1] * parts[2]).cbrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineAxis {
    pub scale: f64,
    pub offset: f64,
}

impl AffineAxis {
    pub fn apply(&self, raw: f64) -> f64 {
        self.scale * raw + self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub region_id: String,
    pub raw_x: f64,
    pub raw_y: f64,
    pub ref_x: f64,
    pub ref_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisResidual {
    pub x: f64,
    pub y: f64,
}

/// Per-axis affine maps from raw satellite indices to the normalized
/// reference scale. `x` maps development, `y` maps greenness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub x_axis: AffineAxis,
    pub y_axis: AffineAxis,
    pub anchors: Vec<Anchor>,
    /// Root-mean-square residual of each axis fit.
    pub fit_residual: AxisResidual,
}

impl CalibrationMap {
    pub fn identity() -> Self {
        let unit = AffineAxis {
            scale: 1.0,
            offset: 0.0,
        };
        Self {
            x_axis: unit,
            y_axis: unit,
            anchors: Vec::new(),
            fit_residual: AxisResidual { x: 0.0, y: 0.0 },
        }
    }
}

/// Least-squares line through `(raw, reference)` pairs; returns the axis and
/// its RMS residual.
fn fit_axis(pairs: impl Iterator<Item = (f64, f64)> + Clone, axis: &str) -> Result<(AffineAxis, f64)> {
    let n = pairs.clone().count() as f64;
    let mean_raw = pairs.clone().map(|p| p.0).sum::<f64>() / n;
    let mean_ref = pairs.clone().map(|p| p.1).sum::<f64>() / n;
    let (sxx, sxy) = pairs.clone().fold((0.0, 0.0), |(sxx, sxy), (r, f)| {
        let dr = r - mean_raw;
        (sxx + dr * dr, sxy + dr * (f - mean_ref))
    });
    if sxx == 0.0 || !sxx.is_finite() {
        return Err(Error::Fit(format!(
            "raw {axis} values are constant across anchors"
        )));
    }
    let scale = sxy / sxx;
    if scale == 0.0 {
        return Err(Error::Fit(format!(
            "{axis} calibration has zero slope; reference values do not vary with raw values"
        )));
    }
    let axis_map = AffineAxis {
        scale,
        offset: mean_ref - scale * mean_raw,
    };
    let sse: f64 = pairs
        .map(|(r, f)| (axis_map.apply(r) - f).powi(2))
        .sum();
    Ok((axis_map, (sse / n).sqrt()))
}

pub fn fit_calibration(anchors: &[Anchor]) -> Result<CalibrationMap> {
    if anchors.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 anchors, got {}",
            anchors.len()
        )));
    }
    if let Some(a) = anchors
        .iter()
        .find(|a| ![a.raw_x, a.raw_y, a.ref_x, a.ref_y].iter().all(|v| v.is_finite()))
    {
        return Err(Error::Validation(format!(
            "anchor `{}` has non-finite values",
            a.region_id
        )));
    }
    let (x_axis, rx) = fit_axis(anchors.iter().map(|a| (a.raw_x, a.ref_x)), "x")?;
    let (y_axis, ry) = fit_axis(anchors.iter().map(|a| (a.raw_y, a.ref_y)), "y")?;
    Ok(CalibrationMap {
        x_axis,
        y_axis,
        anchors: anchors.to_vec(),
        fit_residual: AxisResidual { x: rx, y: ry },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoneThresholds {
    pub x_threshold: f64,
    pub y_threshold: f64,
}

impl Default for ZoneThresholds {
    fn default() -> Self {
        Self {
            x_threshold: 0.8,
            y_threshold: 0.2,
        }
    }
}

impl ZoneThresholds {
    pub fn new(x_threshold: f64, y_threshold: f64) -> Result<Self> {
        let t = Self {
            x_threshold,
            y_threshold,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.x_threshold) || !(0.0..=1.0).contains(&self.y_threshold) {
            return Err(Error::Config(format!(
                "zone thresholds must lie in [0, 1], got ({}, {})",
                self.x_threshold, self.y_threshold
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_threshold && y <= self.y_threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationPoint {
    pub region_id: String,
    pub x: f64,
    pub y: f64,
    pub in_green_zone: bool,
}

impl AdaptationPoint {
    /// Places already-normalized coordinates, clamping both into [0, 1].
    pub fn place(region_id: impl Into<String>, x: f64, y: f64, thresholds: &ZoneThresholds) -> Self {
        let x = x.clamp(0.0, 1.0);
        let y = y.clamp(0.0, 1.0);
        Self {
            region_id: region_id.into(),
            x,
            y,
            in_green_zone: thresholds.contains(x, y),
        }
    }
}

pub fn observe(
    region_id: impl Into<String>,
    green_raw: f64,
    dev_raw: f64,
    cal: &CalibrationMap,
    thresholds: &ZoneThresholds,
) -> Result<AdaptationPoint> {
    thresholds.validate()?;
    if !(green_raw.is_finite() && dev_raw.is_finite()) {
        return Err(Error::Validation(format!(
            "raw indices must be finite, got green={green_raw}, development={dev_raw}"
        )));
    }
    let x = cal.x_axis.apply(dev_raw);
    let y = 1.0 - cal.y_axis.apply(green_raw);
    Ok(AdaptationPoint::place(region_id, x, y, thresholds))
}

// Plot geometry inside the fixed 800x600 viewBox.
const VIEW_W: f64 = 800.0;
const VIEW_H: f64 = 600.0;
const PLOT_LEFT: f64 = 80.0;
const PLOT_TOP: f64 = 40.0;
const PLOT_W: f64 = 680.0;
const PLOT_H: f64 = 480.0;

fn plot_x(x: f64) -> f64 {
    PLOT_LEFT + x * PLOT_W
}

fn plot_y(y: f64) -> f64 {
    PLOT_TOP + (1.0 - y) * PLOT_H
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

pub fn diagram_csv(points: &[AdaptationPoint]) -> String {
    let mut out = String::from("region_id,x,y,in_green_zone\n");
    for p in points {
        writeln!(out, "{},{},{},{}", p.region_id, p.x, p.y, p.in_green_zone).unwrap();
    }
    out
}

pub fn diagram_svg(points: &[AdaptationPoint], thresholds: &ZoneThresholds) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {VIEW_W} {VIEW_H}" width="{VIEW_W}" height="{VIEW_H}">"#
    )
    .unwrap();
    writeln!(
        s,
        r##"<rect x="0" y="0" width="{VIEW_W}" height="{VIEW_H}" fill="#ffffff"/>"##
    )
    .unwrap();
    // Green zone: [x_threshold, 1] x [0, y_threshold].
    let zx = plot_x(thresholds.x_threshold);
    let zy = plot_y(thresholds.y_threshold);
    writeln!(
        s,
        r##"<rect id="green-zone" x="{zx}" y="{zy}" width="{}" height="{}" fill="#7fc97f" fill-opacity="0.5"/>"##,
        plot_x(1.0) - zx,
        plot_y(0.0) - zy
    )
    .unwrap();
    writeln!(
        s,
        r##"<rect x="{PLOT_LEFT}" y="{PLOT_TOP}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="#000000"/>"##
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="16">development index</text>"#,
        PLOT_LEFT + PLOT_W / 2.0,
        VIEW_H - 20.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="24" y="{}" text-anchor="middle" font-size="16" transform="rotate(-90 24 {})">ecological stress</text>"#,
        PLOT_TOP + PLOT_H / 2.0,
        PLOT_TOP + PLOT_H / 2.0
    )
    .unwrap();
    for p in points {
        let fill = if p.in_green_zone { "#1b7837" } else { "#b2182b" };
        writeln!(
            s,
            r#"<circle id="{}" cx="{}" cy="{}" r="5" fill="{fill}"/>"#,
            xml_escape(&p.region_id),
            plot_x(p.x),
            plot_y(p.y)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<path>.csv` and `<path>.svg`; returns both paths.
pub fn emit_diagram(
    points: &[AdaptationPoint],
    thresholds: &ZoneThresholds,
    path: impl AsRef<Path>,
) -> Result<(PathBuf, PathBuf)> {
    if points.is_empty() {
        return Err(Error::Validation("diagram needs at least one point".into()));
    }
    let path = path.as_ref();
    let csv_path = path.with_extension("csv");
    let svg_path = path.with_extension("svg");
    fs::write(&csv_path, diagram_csv(points)).map_err(|e| Error::io(&csv_path, e))?;
    fs::write(&svg_path, diagram_svg(points, thresholds)).map_err(|e| Error::io(&svg_path, e))?;
    Ok((csv_path, svg_path))
}

pub fn anchors_from_csv(text: &str) -> Result<Vec<Anchor>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::parse("anchors csv", "missing header"))?
        .split(',')
        .map(str::trim)
        .collect();
    if header != ["region_id", "raw_x", "raw_y", "ref_x", "ref_y"] {
        return Err(Error::parse(
            "anchors csv",
            "header must be region_id,raw_x,raw_y,ref_x,ref_y",
        ));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let ctx = format!("anchors csv line {}", i + 2);
            if f.len() != 5 {
                return Err(Error::parse(ctx, format!("expected 5 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(ctx.clone(), e));
            Ok(Anchor {
                region_id: f[0].to_string(),
                raw_x: num(f[1])?,
                raw_y: num(f[2])?,
                ref_x: num(f[3])?,
                ref_y: num(f[4])?,
            })
        })
        .collect()
}
