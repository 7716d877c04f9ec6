//! Synthetic two-dimensional wake behind a wall-mounted obstacle.
//!
//! Grid coordinates: column `i` runs downstream, row `j = 0` is the wall.
//! Cell centres sit at `(i + 0.5, j + 0.5)` in cell units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open cell rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.x0 && i < self.x1 && j >= self.y0 && j < self.y1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// One snapshot: `u`, `v`, `p` stored row-major with index `j * nx + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub obstacle: Rect,
    /// Original snapshot numbers, in order.
    pub ids: Vec<usize>,
    pub snapshots: Vec<FlowField>,
}

impl SnapshotMatrix {
    pub fn new(
        nx: usize,
        ny: usize,
        dt: f64,
        obstacle: Rect,
        ids: Vec<usize>,
        snapshots: Vec<FlowField>,
    ) -> Result<Self> {
        if snapshots.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 snapshots, got {}",
                snapshots.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Validation(format!("dt must be > 0, got {dt}")));
        }
        if obstacle.x1 > nx || obstacle.y1 > ny || obstacle.x0 > obstacle.x1 || obstacle.y0 > obstacle.y1 {
            return Err(Error::Config(format!("obstacle {obstacle:?} exceeds {nx}x{ny} grid")));
        }
        if ids.len() != snapshots.len() {
            return Err(Error::Shape("snapshot ids and fields differ in length".into()));
        }
        let cells = nx * ny;
        for (k, f) in snapshots.iter().enumerate() {
            if f.u.len() != cells || f.v.len() != cells || f.p.len() != cells {
                return Err(Error::Shape(format!("snapshot {k} does not match {nx}x{ny}")));
            }
            if f.u.iter().chain(&f.v).chain(&f.p).any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("snapshot {k} has non-finite values")));
            }
        }
        Ok(Self {
            nx,
            ny,
            dt,
            obstacle,
            ids,
            snapshots,
        })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// `true` for fluid cells, `false` inside the obstacle.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.ny)
            .flat_map(|j| (0..self.nx).map(move |i| (i, j)))
            .map(|(i, j)| !self.obstacle.contains(i, j))
            .collect()
    }

    /// Subset by position; ids follow the selected snapshots.
    pub fn select(&self, positions: &[usize]) -> Result<SnapshotMatrix> {
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.len()) {
            return Err(Error::Range(format!("snapshot position {bad} out of {}", self.len())));
        }
        SnapshotMatrix::new(
            self.nx,
            self.ny,
            self.dt,
            self.obstacle,
            positions.iter().map(|&p| self.ids[p]).collect(),
            positions.iter().map(|&p| self.snapshots[p].clone()).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrace {
    /// Cell `(i, j)` of each sensor.
    pub locations: Vec<(usize, usize)>,
    /// `pressure[k][s]`: snapshot `k`, sensor `s`.
    pub pressure: Vec<Vec<f64>>,
    pub ids: Vec<usize>,
}

impl SensorTrace {
    pub fn sensor_count(&self) -> usize {
        self.locations.len()
    }

    pub fn len(&self) -> usize {
        self.pressure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pressure.is_empty()
    }

    pub fn select(&self, positions: &[usize]) -> Result<SensorTrace> {
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.len()) {
            return Err(Error::Range(format!("snapshot position {bad} out of {}", self.len())));
        }
        Ok(SensorTrace {
            locations: self.locations.clone(),
            pressure: positions.iter().map(|&p| self.pressure[p].clone()).collect(),
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
        })
    }

    /// Samples pressure of `snapshots` at `locations`.
    pub fn sample(snapshots: &SnapshotMatrix, locations: Vec<(usize, usize)>) -> Result<SensorTrace> {
        for &(i, j) in &locations {
            if i >= snapshots.nx || j >= snapshots.ny {
                return Err(Error::Range(format!("sensor cell ({i}, {j}) outside grid")));
            }
            if snapshots.obstacle.contains(i, j) {
                return Err(Error::Validation(format!("sensor cell ({i}, {j}) is inside the obstacle")));
            }
        }
        let pressure = snapshots
            .snapshots
            .iter()
            .map(|f| locations.iter().map(|&(i, j)| f.p[j * snapshots.nx + i]).collect())
            .collect();
        Ok(SensorTrace {
            locations,
            pressure,
            ids: snapshots.ids.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WakeConfig {
    pub nx: usize,
    pub ny: usize,
    pub snapshots: usize,
    pub vortices: usize,
    /// Cells per second.
    pub advection_speed: f64,
    pub seed: u64,
    pub dt: f64,
    pub inflow: f64,
    pub circulation: f64,
    /// Gaussian core radius in cells; `None` picks `ny / 16`.
    pub core_radius: Option<f64>,
    /// Amplitude e-folding time in seconds; `None` picks one lee-length
    /// transit (or the record length for frozen vortices).
    pub decay_time: Option<f64>,
    /// Relative jitter of circulations and start positions.
    pub jitter: f64,
    /// `None` places an obstacle of height `ny / 4` at `nx / 8`.
    pub obstacle: Option<Rect>,
    pub wall_sensors: usize,
}

impl Default for WakeConfig {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 32,
            snapshots: 64,
            vortices: 4,
            advection_speed: 4.0,
            seed: 0,
            dt: 0.35,
            inflow: 1.0,
            circulation: 1.0,
            core_radius: None,
            decay_time: None,
            jitter: 0.05,
            obstacle: None,
            wall_sensors: 16,
        }
    }
}

impl WakeConfig {
    pub fn obstacle_rect(&self) -> Rect {
        self.obstacle.unwrap_or_else(|| {
            let x0 = self.nx / 8;
            Rect {
                x0,
                y0: 0,
                x1: x0 + (self.nx / 16).max(2),
                y1: (self.ny / 4).max(1),
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 16 || self.ny < 16 {
            return Err(Error::Config(format!("nx and ny must be >= 16, got {}x{}", self.nx, self.ny)));
        }
        if self.snapshots < 8 {
            return Err(Error::Config(format!("snapshots must be >= 8, got {}", self.snapshots)));
        }
        let ob = self.obstacle_rect();
        if ob.x0 >= ob.x1 || ob.y0 >= ob.y1 || ob.x1 > self.nx || ob.y1 > self.ny {
            return Err(Error::Config(format!(
                "obstacle {ob:?} exceeds the {}x{} grid",
                self.nx, self.ny
            )));
        }
        if ob.y0 != 0 {
            return Err(Error::Config("obstacle must be wall-mounted (y0 = 0)".into()));
        }
        if ob.x1 + 4 > self.nx || ob.y1 + 2 > self.ny {
            return Err(Error::Config(format!("obstacle {ob:?} leaves no lee region")));
        }
        for (name, v) in [
            ("dt", self.dt),
            ("inflow", self.inflow),
            ("circulation", self.circulation),
            ("advection_speed", self.advection_speed),
            ("jitter", self.jitter),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if self.dt <= 0.0 {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.advection_speed < 0.0 {
            return Err(Error::Config("advection_speed must be >= 0".into()));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::Config("jitter must lie in [0, 0.5)".into()));
        }
        if let Some(r) = self.core_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config("core_radius must be > 0".into()));
            }
        }
        if let Some(t) = self.decay_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config("decay_time must be > 0".into()));
            }
        }
        if self.wall_sensors < 1 {
            return Err(Error::Config("wall_sensors must be >= 1".into()));
        }
        Ok(())
    }
}

struct Vortex {
    strength: f64,
    start: f64,
    y: f64,
}

/// Builds the snapshot sequence and the wall-pressure sensor trace.
pub fn generate_synthetic_wake(config: &WakeConfig) -> Result<(SnapshotMatrix, SensorTrace)> {
    config.validate()?;
    let (nx, ny) = (config.nx, config.ny);
    let ob = config.obstacle_rect();
    let h = ob.height() as f64;
    let sigma = config.core_radius.unwrap_or(ny as f64 / 16.0);
    let x_lee = ob.x1 as f64;
    let lee_len = nx as f64 - x_lee;
    let speed = config.advection_speed;
    let record = config.dt * (config.snapshots - 1) as f64;
    let tau = config.decay_time.unwrap_or(if speed > 0.0 { lee_len / speed } else { record });

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rows = [(0.6 * h).max(sigma), 1.6 * h];
    let spacing = lee_len / config.vortices.max(1) as f64;
    let vortices: Vec<Vortex> = (0..config.vortices)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let jit_a = 1.0 + config.jitter * rng.random_range(-1.0..1.0);
            let jit_x = config.jitter * spacing * rng.random_range(-1.0..1.0);
            Vortex {
                strength: sign * config.circulation * jit_a,
                start: (k as f64 * spacing + 0.5 * spacing + jit_x).rem_euclid(lee_len),
                y: rows[k % 2].min(ny as f64 - sigma),
            }
        })
        .collect();

    let mut snapshots = Vec::with_capacity(config.snapshots);
    for k in 0..config.snapshots {
        let t = k as f64 * config.dt;
        // Position, amplitude for each vortex at time t.
        let state: Vec<(f64, f64, f64)> = vortices
            .iter()
            .map(|vx| {
                let d = (vx.start + speed * t).rem_euclid(lee_len);
                let age = if speed > 0.0 { d / speed } else { t };
                let envelope = (std::f64::consts::PI * d / lee_len).sin().powi(2);
                (x_lee + d, vx.y, vx.strength * (-age / tau).exp() * envelope)
            })
            .collect();
        let cells = nx * ny;
        let (mut u, mut v, mut p) = (vec![0.0; cells], vec![0.0; cells], vec![0.0; cells]);
        for j in 0..ny {
            let y = j as f64 + 0.5;
            for i in 0..nx {
                let idx = j * nx + i;
                if ob.contains(i, j) {
                    continue;
                }
                let x = i as f64 + 0.5;
                let deficit = if x >= ob.x0 as f64 {
                    0.5 * (-(y / (1.5 * h)).powi(2)).exp()
                } else {
                    0.0
                };
                let (mut uu, mut vv, mut pp) = (config.inflow * (1.0 - deficit), 0.0, 0.0);
                for &(xm, ym, a) in &state {
                    let (dx, dy) = (x - xm, y - ym);
                    let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                    uu -= a * dy / sigma * g;
                    vv += a * dx / sigma * g;
                    pp -= a.abs() * g;
                }
                u[idx] = uu;
                v[idx] = vv;
                p[idx] = pp;
            }
        }
        snapshots.push(FlowField { u, v, p });
    }
    let matrix = SnapshotMatrix::new(nx, ny, config.dt, ob, (0..config.snapshots).collect(), snapshots)?;
    let sensors = SensorTrace::sample(&matrix, default_sensor_cells(nx, ob, config.wall_sensors))?;
    Ok((matrix, sensors))
}

/// Evenly spaced bottom-wall fluid cells followed by the fluid cells just
/// downstream of the obstacle's lee face.
pub fn default_sensor_cells(nx: usize, obstacle: Rect, wall_sensors: usize) -> Vec<(usize, usize)> {
    let face = obstacle.x1 < nx;
    let wall: Vec<usize> = (0..nx)
        .filter(|&i| !obstacle.contains(i, 0) && !(face && i == obstacle.x1))
        .collect();
    let n = wall_sensors.min(wall.len());
    let mut cells: Vec<(usize, usize)> = (0..n)
        .map(|k| {
            let pos = if n == 1 { 0 } else { (k * (wall.len() - 1) + (n - 1) / 2) / (n - 1) };
            (wall[pos], 0)
        })
        .collect();
    if face {
        cells.extend((obstacle.y0..obstacle.y1).map(|j| (obstacle.x1, j)));
    }
    cells
}
