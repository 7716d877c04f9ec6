//! On-disk layout: one CARB1 raster per snapshot (bands `u`, `v`, `p`, top
//! row of the domain first) plus `manifest.json`; sensors as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::wake::{FlowField, Rect, SensorTrace, SnapshotMatrix};
use crate::error::{Error, Result};
use crate::raster::{load_raster, save_raster, Band, Grid, Raster};

pub const MANIFEST_FILE: &str = "manifest.json";
const FIELDS: [&str; 3] = ["u", "v", "p"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotEntry {
    pub id: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub obstacle: Rect,
    pub fields: Vec<String>,
    pub snapshots: Vec<SnapshotEntry>,
}

fn to_raster(m: &SnapshotMatrix, f: &FlowField) -> Result<Raster> {
    let (nx, ny) = (m.nx, m.ny);
    let band = |name: &str, data: &[f64]| Band {
        name: name.to_string(),
        grid: Grid::from_fn(nx, ny, |row, col| data[(ny - 1 - row) * nx + col]),
    };
    Raster::new(
        1.0,
        (0.0, ny as f64),
        vec![band("u", &f.u), band("v", &f.v), band("p", &f.p)],
    )
}

/// Writes `m` into `dir` (created if missing). Returns the written paths,
/// manifest last.
pub fn save_snapshots(m: &SnapshotMatrix, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(m.len() + 1);
    let mut entries = Vec::with_capacity(m.len());
    for (id, f) in m.ids.iter().zip(&m.snapshots) {
        let file = format!("snapshot_{id:05}.carb");
        let path = dir.join(&file);
        save_raster(&to_raster(m, f)?, &path)?;
        written.push(path);
        entries.push(SnapshotEntry { id: *id, file });
    }
    let manifest = SequenceManifest {
        nx: m.nx,
        ny: m.ny,
        dt: m.dt,
        obstacle: m.obstacle,
        fields: FIELDS.iter().map(|s| s.to_string()).collect(),
        snapshots: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

pub fn load_snapshots(dir: impl AsRef<Path>) -> Result<SnapshotMatrix> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SequenceManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    if manifest.fields != FIELDS {
        return Err(Error::Schema {
            expected: FIELDS.iter().map(|s| s.to_string()).collect(),
            found: manifest.fields,
        });
    }
    let (nx, ny) = (manifest.nx, manifest.ny);
    let mut snapshots = Vec::with_capacity(manifest.snapshots.len());
    for entry in &manifest.snapshots {
        let r = load_raster(dir.join(&entry.file))?;
        if r.width() != nx || r.height() != ny {
            return Err(Error::Shape(format!(
                "{} is {}x{}, manifest says {nx}x{ny}",
                entry.file,
                r.width(),
                r.height()
            )));
        }
        let unflip = |name: &str| -> Result<Vec<f64>> {
            let g = r.band(name)?;
            Ok((0..ny)
                .flat_map(|j| (0..nx).map(move |i| (i, j)))
                .map(|(i, j)| g.get(ny - 1 - j, i))
                .collect())
        };
        snapshots.push(FlowField {
            u: unflip("u")?,
            v: unflip("v")?,
            p: unflip("p")?,
        });
    }
    SnapshotMatrix::new(
        nx,
        ny,
        manifest.dt,
        manifest.obstacle,
        manifest.snapshots.iter().map(|e| e.id).collect(),
        snapshots,
    )
}

/// `snapshot,sensor_id,x,y,p`, one row per snapshot and sensor.
pub fn sensors_to_csv(s: &SensorTrace) -> String {
    let mut out = String::from("snapshot,sensor_id,x,y,p\n");
    for (id, row) in s.ids.iter().zip(&s.pressure) {
        for (sid, (&(x, y), p)) in s.locations.iter().zip(row).enumerate() {
            writeln!(out, "{id},{sid},{x},{y},{p}").unwrap();
        }
    }
    out
}

pub fn sensors_from_csv(text: &str) -> Result<SensorTrace> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .unwrap_or("")
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let expected = ["snapshot", "sensor_id", "x", "y", "p"];
    if header != expected {
        return Err(Error::Schema {
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: header,
        });
    }
    let mut locations: Vec<(usize, usize)> = Vec::new();
    let mut ids: Vec<usize> = Vec::new();
    let mut pressure: Vec<Vec<f64>> = Vec::new();
    for (n, line) in lines.enumerate() {
        let ctx = format!("sensor csv line {}", n + 2);
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(Error::parse(ctx, format!("expected 5 fields, got {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(ctx.clone(), e));
        let (snap, sid, x, y) = (int(f[0])?, int(f[1])?, int(f[2])?, int(f[3])?);
        let p: f64 = f[4].parse().map_err(|e| Error::parse(ctx.clone(), e))?;
        if !p.is_finite() {
            return Err(Error::Validation(format!("{ctx}: non-finite pressure")));
        }
        if ids.last() != Some(&snap) {
            if ids.contains(&snap) {
                return Err(Error::parse(ctx, format!("snapshot {snap} rows are not contiguous")));
            }
            ids.push(snap);
            pressure.push(Vec::new());
        }
        let row = pressure.last_mut().expect("pushed above");
        if sid != row.len() {
            return Err(Error::parse(ctx, format!("expected sensor_id {}, got {sid}", row.len())));
        }
        if ids.len() == 1 {
            locations.push((x, y));
        } else if locations.get(sid) != Some(&(x, y)) {
            return Err(Error::parse(ctx, format!("sensor {sid} moved or was not declared")));
        }
        row.push(p);
    }
    if pressure.iter().any(|r| r.len() != locations.len()) {
        return Err(Error::Validation("every snapshot must report every sensor".into()));
    }
    Ok(SensorTrace {
        locations,
        pressure,
        ids,
    })
}
