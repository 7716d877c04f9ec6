//! Proper orthogonal decomposition by the method of snapshots.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::wake::SnapshotMatrix;
use crate::error::{Error, Result};

/// Which fields of a snapshot form the POD vector. Components are stacked
/// one after another, each over the fluid cells in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSelection {
    Velocity,
    Pressure,
}

impl FieldSelection {
    pub fn components(&self) -> usize {
        match self {
            FieldSelection::Velocity => 2,
            FieldSelection::Pressure => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "selection")]
pub enum PodSource {
    Field(FieldSelection),
    WallPressure,
}

/// Field vector of snapshot `k`, obstacle cells excluded.
pub fn field_vector(m: &SnapshotMatrix, k: usize, selection: FieldSelection) -> Vec<f64> {
    let mask = m.mask();
    let f = &m.snapshots[k];
    let comps: Vec<&Vec<f64>> = match selection {
        FieldSelection::Velocity => vec![&f.u, &f.v],
        FieldSelection::Pressure => vec![&f.p],
    };
    comps
        .into_iter()
        .flat_map(|c| c.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v))
        .collect()
}

pub fn field_vectors(m: &SnapshotMatrix, selection: FieldSelection) -> Vec<Vec<f64>> {
    (0..m.len()).map(|k| field_vector(m, k, selection)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodBasis {
    pub source: PodSource,
    pub snapshot_ids: Vec<usize>,
    pub mean: Vec<f64>,
    /// Orthonormal modes, most energetic first.
    pub modes: Vec<Vec<f64>>,
    /// `N` values (snapshots minus one), nonincreasing; zero past `retained`.
    pub eigenvalues: Vec<f64>,
    /// `coefficients[i][k] = ⟨u'_k, φ_i⟩`.
    pub coefficients: Vec<Vec<f64>>,
    pub retained: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Method of snapshots on arbitrary equal-length vectors.
pub fn compute_pod_vectors(columns: &[Vec<f64>], snapshot_ids: Vec<usize>, source: PodSource) -> Result<PodBasis> {
    let n = columns.len();
    if n < 2 {
        return Err(Error::Validation(format!("POD needs at least 2 snapshots, got {n}")));
    }
    if snapshot_ids.len() != n {
        return Err(Error::Shape("snapshot ids do not match column count".into()));
    }
    let dim = columns[0].len();
    if dim == 0 || columns.iter().any(|c| c.len() != dim) {
        return Err(Error::Shape("snapshot vectors must share a nonzero length".into()));
    }
    if columns.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("snapshot vectors must be finite".into()));
    }

    let nf = n as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|r| columns.iter().map(|c| c[r]).sum::<f64>() / nf)
        .collect();
    let fluct: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| c.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|k| (k..n).map(move |l| (k, l))).collect();
    let entries: Vec<f64> = pairs
        .par_iter()
        .map(|&(k, l)| dot(&fluct[k], &fluct[l]) / nf)
        .collect();
    let mut corr = DMatrix::zeros(n, n);
    for (&(k, l), &c) in pairs.iter().zip(&entries) {
        corr[(k, l)] = c;
        corr[(l, k)] = c;
    }
    let total: f64 = (0..n).map(|k| corr[(k, k)]).sum();

    // Rounding in the mean leaves fluctuations of order n·eps·|u| even for
    // identical snapshots; anything at that level counts as no fluctuation.
    let scale = columns.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let noise = 16.0 * nf * f64::EPSILON * scale;
    let empty = total <= dim as f64 * noise * noise;

    let mut modes: Vec<Vec<f64>> = Vec::new();
    if !empty {
        let eig = SymmetricEigen::new(corr);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for &idx in &order {
            if eig.eigenvalues[idx] <= 0.0 {
                break;
            }
            let v = eig.eigenvectors.column(idx);
            let mut psi = vec![0.0; dim];
            for (k, f) in fluct.iter().enumerate() {
                let w = v[k];
                psi.iter_mut().zip(f).for_each(|(p, x)| *p += w * x);
            }
            let norm = dot(&psi, &psi).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                continue;
            }
            psi.iter_mut().for_each(|p| *p /= norm);
            // A candidate that is (numerically) in the span of the accepted
            // modes carries no new direction.
            let mut independent = true;
            for _ in 0..2 {
                for m in &modes {
                    let c = dot(&psi, m);
                    psi.iter_mut().zip(m).for_each(|(p, q)| *p -= c * q);
                }
                let norm = dot(&psi, &psi).sqrt();
                if norm < 1e-6 {
                    independent = false;
                    break;
                }
                psi.iter_mut().for_each(|p| *p /= norm);
            }
            if independent {
                modes.push(psi);
            }
        }
    }

    let coefficients = |modes: &[Vec<f64>]| -> Vec<Vec<f64>> {
        modes
            .par_iter()
            .map(|m| fluct.iter().map(|f| dot(f, m)).collect())
            .collect()
    };
    let coeffs = coefficients(&modes);
    let lambdas: Vec<f64> = coeffs
        .iter()
        .map(|a| a.iter().map(|x| x * x).sum::<f64>() / nf)
        .collect();
    let cutoff = 1e-24 * total;
    let mut keep: Vec<usize> = (0..modes.len()).filter(|&i| lambdas[i] > cutoff).collect();
    keep.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    keep.truncate((n - 1).min(dim));

    let mut kept_modes: Vec<Vec<f64>> = keep.iter().map(|&i| modes[i].clone()).collect();
    for m in &mut kept_modes {
        apply_sign_convention(m);
    }
    let coeffs = coefficients(&kept_modes);
    let retained = kept_modes.len();
    let mut eigenvalues = vec![0.0; n - 1];
    for (slot, &i) in eigenvalues.iter_mut().zip(&keep) {
        *slot = lambdas[i];
    }

    Ok(PodBasis {
        source,
        snapshot_ids,
        mean,
        modes: kept_modes,
        eigenvalues,
        coefficients: coeffs,
        retained,
    })
}

/// Flips `mode` so that its first non-negligible component is positive.
pub fn apply_sign_convention(mode: &mut [f64]) {
    let max = mode.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if let Some(first) = mode.iter().find(|v| v.abs() > 1e-9 * max) {
        if *first < 0.0 {
            mode.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

pub fn compute_pod(snapshots: &SnapshotMatrix, selection: FieldSelection) -> Result<PodBasis> {
    compute_pod_vectors(
        &field_vectors(snapshots, selection),
        snapshots.ids.clone(),
        PodSource::Field(selection),
    )
}

impl PodBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshot_ids.len()
    }

    /// Coefficients of `vector` on the first `k` modes.
    pub fn project(&self, vector: &[f64], k: usize) -> Result<Vec<f64>> {
        if vector.len() != self.dim() {
            return Err(Error::Shape(format!(
                "vector has {} entries, basis expects {}",
                vector.len(),
                self.dim()
            )));
        }
        if k > self.retained {
            return Err(Error::Range(format!("{k} modes requested, {} retained", self.retained)));
        }
        let fluct: Vec<f64> = vector.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self.modes[..k].iter().map(|m| dot(&fluct, m)).collect())
    }

    /// Keeps the first `k` modes and their coefficients; the eigenvalue
    /// spectrum is left whole.
    pub fn truncated(&self, k: usize) -> Result<PodBasis> {
        if k > self.retained {
            return Err(Error::Range(format!("{k} modes requested, {} retained", self.retained)));
        }
        let mut b = self.clone();
        b.modes.truncate(k);
        b.coefficients.truncate(k);
        b.retained = k;
        Ok(b)
    }
}

/// `ū + Σ_{i<k} a_i φ_i`.
pub fn reconstruct_field(basis: &PodBasis, coefficients: &[f64], k: usize) -> Result<Vec<f64>> {
    if k > basis.retained {
        return Err(Error::Range(format!(
            "k = {k} exceeds the {} retained modes",
            basis.retained
        )));
    }
    if coefficients.len() < k {
        return Err(Error::Shape(format!("{} coefficients for k = {k}", coefficients.len())));
    }
    let mut out = basis.mean.clone();
    for (a, m) in coefficients[..k].iter().zip(&basis.modes) {
        out.iter_mut().zip(m).for_each(|(o, p)| *o += a * p);
    }
    Ok(out)
}

/// Share of fluctuation energy in the first `k` modes; 1 when there is
/// no energy at all.
pub fn energy_fraction(basis: &PodBasis, k: usize) -> f64 {
    let total: f64 = basis.eigenvalues.iter().sum();
    if total == 0.0 {
        return 1.0;
    }
    let k = k.min(basis.eigenvalues.len());
    (basis.eigenvalues[..k].iter().sum::<f64>() / total).clamp(0.0, 1.0)
}

/// Relative RMS error left by keeping `k` modes: `sqrt(Σ_{i>k} λ_i / Σ λ_i)`.
pub fn truncation_floor(basis: &PodBasis, k: usize) -> f64 {
    let total: f64 = basis.eigenvalues.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let k = k.min(basis.eigenvalues.len());
    (basis.eigenvalues[k..].iter().sum::<f64>() / total).sqrt()
}
