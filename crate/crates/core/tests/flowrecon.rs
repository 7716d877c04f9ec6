use climadapt_core::flowrecon::*;
use climadapt_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cyclic Jacobi eigensolver for a small dense symmetric matrix. Returns
/// eigenvalues and column eigenvectors, unsorted.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-300 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| a[i][i]).collect();
    let vecs = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (vals, vecs)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fluctuations(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = cols.len() as f64;
    let dim = cols[0].len();
    let mean: Vec<f64> = (0..dim).map(|r| cols.iter().map(|c| c[r]).sum::<f64>() / n).collect();
    cols.iter()
        .map(|c| c.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect()
}

#[test]
fn matches_spatial_covariance_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cols: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let basis = compute_pod_vectors(&cols, (0..8).collect(), PodSource::WallPressure).unwrap();
    let fl = fluctuations(&cols);
    let cov: Vec<Vec<f64>> = (0..5)
        .map(|i| (0..5).map(|j| fl.iter().map(|f| f[i] * f[j]).sum::<f64>() / 8.0).collect())
        .collect();
    let (vals, vecs) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    assert_eq!(basis.retained, 5);
    assert_eq!(basis.eigenvalues.len(), 7);
    for (i, &o) in order.iter().enumerate() {
        assert!((basis.eigenvalues[i] - vals[o]).abs() < 1e-10);
        let mut oracle = vecs[o].clone();
        apply_sign_convention(&mut oracle);
        for (a, b) in basis.modes[i].iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
        }
    }
    assert!(basis.eigenvalues[5..].iter().all(|&l| l == 0.0));
}

struct Invariants {
    ortho: f64,
    diag: f64,
    parseval: f64,
}

fn invariants(basis: &PodBasis, cols: &[Vec<f64>]) -> Invariants {
    let r = basis.retained;
    let n = cols.len() as f64;
    let mut ortho = 0.0f64;
    let mut diag = 0.0f64;
    let lmax = basis.eigenvalues[0].max(f64::MIN_POSITIVE);
    for i in 0..r {
        for j in 0..r {
            let g = dot(&basis.modes[i], &basis.modes[j]) - f64::from(i == j);
            ortho = ortho.max(g.abs());
            let c = dot(&basis.coefficients[i], &basis.coefficients[j]) / n;
            let target = if i == j { basis.eigenvalues[i] } else { 0.0 };
            diag = diag.max((c - target).abs() / lmax);
        }
    }
    let fl = fluctuations(cols);
    let energy: f64 = fl.iter().map(|f| dot(f, f)).sum::<f64>() / n;
    let total: f64 = basis.eigenvalues.iter().sum();
    Invariants {
        ortho,
        diag,
        parseval: (energy - total).abs() / energy,
    }
}

fn truncation_identity_error(basis: &PodBasis, cols: &[Vec<f64>], k: usize) -> f64 {
    let n = cols.len();
    let mse: f64 = (0..n)
        .map(|s| {
            let a: Vec<f64> = basis.coefficients.iter().map(|row| row[s]).collect();
            let rec = reconstruct_field(basis, &a, k).unwrap();
            rec.iter().zip(&cols[s]).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        / n as f64;
    let tail: f64 = basis.eigenvalues[k..].iter().sum();
    (mse - tail).abs() / tail.max(f64::MIN_POSITIVE)
}

#[test]
fn wake_pod_invariants() {
    let (m, _) = generate_synthetic_wake(&WakeConfig::default()).unwrap();
    assert_eq!((m.nx, m.ny, m.len()), (64, 32, 64));
    let basis = compute_pod(&m, FieldSelection::Velocity).unwrap();
    let cols = field_vectors(&m, FieldSelection::Velocity);
    let inv = invariants(&basis, &cols);
    assert!(inv.ortho < 1e-10, "orthonormality {}", inv.ortho);
    assert!(inv.diag < 1e-8, "diagonality {}", inv.diag);
    assert!(inv.parseval < 1e-8, "parseval {}", inv.parseval);
    assert!(basis.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    for k in [1, 4, 16] {
        let e = truncation_identity_error(&basis, &cols, k);
        assert!(e < 1e-8, "k = {k}: {e}");
    }
}

#[test]
fn energy_fraction_matches_cumulative_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cols: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..30).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let b = compute_pod_vectors(&cols, (0..10).collect(), PodSource::WallPressure).unwrap();
    let total: f64 = b.eigenvalues.iter().sum();
    let mut acc = 0.0;
    for k in 0..=b.eigenvalues.len() {
        assert!((energy_fraction(&b, k) - acc / total).abs() < 1e-12);
        if k < b.eigenvalues.len() {
            acc += b.eigenvalues[k];
        }
    }
    assert!((energy_fraction(&b, b.eigenvalues.len()) - 1.0).abs() < 1e-12);
}

#[test]
fn zero_vortices_give_empty_spectrum() {
    let (m, _) = generate_synthetic_wake(&WakeConfig {
        vortices: 0,
        snapshots: 12,
        ..WakeConfig::default()
    })
    .unwrap();
    assert!(m.snapshots.windows(2).all(|w| w[0] == w[1]));
    let b = compute_pod(&m, FieldSelection::Velocity).unwrap();
    assert_eq!(b.retained, 0);
    assert!(b.eigenvalues.iter().all(|&l| l == 0.0));
    assert_eq!(energy_fraction(&b, 0), 1.0);
}

fn frozen_vortex() -> (SnapshotMatrix, SensorTrace) {
    generate_synthetic_wake(&WakeConfig {
        vortices: 1,
        advection_speed: 0.0,
        snapshots: 16,
        ..WakeConfig::default()
    })
    .unwrap()
}

#[test]
fn frozen_vortex_is_rank_one() {
    let (m, s) = frozen_vortex();
    let b = compute_pod(&m, FieldSelection::Velocity).unwrap();
    assert_eq!(b.retained, 1);
    assert!(b.eigenvalues[0] > 0.0);
    assert!(b.eigenvalues[1..].iter().all(|&l| l == 0.0));
    assert_eq!(energy_fraction(&b, 1), 1.0);
    let p = compute_pod_vectors(&s.pressure, s.ids.clone(), PodSource::WallPressure).unwrap();
    assert_eq!(p.retained, 1);
}

#[test]
fn generator_is_bitwise_deterministic() {
    let cfg = WakeConfig {
        seed: 42,
        snapshots: 12,
        ..WakeConfig::default()
    };
    let (a, sa) = generate_synthetic_wake(&cfg).unwrap();
    let (b, sb) = generate_synthetic_wake(&cfg).unwrap();
    let bits = |m: &SnapshotMatrix| -> Vec<u64> {
        m.snapshots
            .iter()
            .flat_map(|f| f.u.iter().chain(&f.v).chain(&f.p).map(|v| v.to_bits()))
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(sensors_to_csv(&sa), sensors_to_csv(&sb));
}

fn split_wake() -> (SnapshotMatrix, SensorTrace, SnapshotMatrix, SensorTrace) {
    let (m, s) = generate_synthetic_wake(&WakeConfig::default()).unwrap();
    let (tr, te) = interleaved_split(m.len());
    (
        m.select(&tr).unwrap(),
        s.select(&tr).unwrap(),
        m.select(&te).unwrap(),
        s.select(&te).unwrap(),
    )
}

#[test]
fn planted_linear_map_is_recovered() {
    let (m, s, _, _) = split_wake();
    let pb = compute_pod_vectors(&s.pressure, s.ids.clone(), PodSource::WallPressure).unwrap();
    let _ = m;
    let inputs = r1_inputs(&pb, 4, &s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let targets: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| (0..4).map(|o| (0..4).map(|i| x[i] * w[i][o]).sum()).collect())
        .collect();
    let fit = RidgeMap::fit(&inputs, &targets, 1e-12, false).unwrap();
    let num: f64 = (0..4)
        .flat_map(|i| (0..4).map(move |o| (i, o)))
        .map(|(i, o)| (fit.weights[i][o] - w[i][o]).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = w.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    assert!(num / den < 1e-6, "relative map error {}", num / den);
}

#[test]
fn held_out_r1_error_near_truncation_floor() {
    let (m, s, mt, st) = split_wake();
    let vb = compute_pod(&m, FieldSelection::Velocity).unwrap();
    let pb = compute_pod_vectors(&s.pressure, s.ids.clone(), PodSource::WallPressure).unwrap();
    let model = train_reconstruction1(&vb, &pb, &s, TruncationConfig { n_u: 4, n_p: 4 }, 1e-10).unwrap();
    let report = evaluate_reconstruction(&ReconstructionModel::R1(model), &mt, &st).unwrap();
    let floor = truncation_floor(&vb, 4);
    assert_eq!(report.truncation_floor, Some(floor));
    assert!(report.disjoint);
    assert!(report.mean_error <= 1.2 * floor, "{} vs floor {floor}", report.mean_error);
}

#[test]
fn infinite_regularization_predicts_mean() {
    let (m, s, mt, st) = split_wake();
    let vb = compute_pod(&m, FieldSelection::Velocity).unwrap();
    let pb = compute_pod_vectors(&s.pressure, s.ids.clone(), PodSource::WallPressure).unwrap();
    let model =
        train_reconstruction1(&vb, &pb, &s, TruncationConfig { n_u: 4, n_p: 4 }, f64::INFINITY).unwrap();
    assert!(model.map.weights.iter().flatten().all(|&w| w == 0.0));
    assert_eq!(model.predict_field(&st.pressure[0]).unwrap(), vb.mean);
    let report = evaluate_reconstruction(&ReconstructionModel::R1(model), &mt, &st).unwrap();
    assert!(report.per_snapshot_error.iter().all(|&e| (e - 1.0).abs() < 1e-15));
    assert!(!report.disjoint || report.test_ids.iter().all(|id| id % 2 == 1));
}

#[test]
fn training_set_overlap_is_flagged() {
    let (m, s, _, _) = split_wake();
    let model = train_reconstruction2(&m, PlaneSpec::Horizontal(10), &s, 1e-6).unwrap();
    let report = evaluate_reconstruction(&ReconstructionModel::R2(model.clone()), &m, &s).unwrap();
    assert!(!report.disjoint);
    let again = evaluate_reconstruction(&ReconstructionModel::R2(model), &m, &s).unwrap();
    assert_eq!(report, again);
}

#[test]
fn r1_exact_on_rank_one_training_data() {
    let (m, s) = frozen_vortex();
    let vb = compute_pod(&m, FieldSelection::Velocity).unwrap();
    let pb = compute_pod_vectors(&s.pressure, s.ids.clone(), PodSource::WallPressure).unwrap();
    let model = train_reconstruction1(&vb, &pb, &s, TruncationConfig { n_u: 1, n_p: 1 }, 1e-12).unwrap();
    let report = evaluate_reconstruction(&ReconstructionModel::R1(model), &m, &s).unwrap();
    let floor = report.truncation_floor.unwrap();
    assert_eq!(floor, 0.0);
    assert!(report.mean_error <= floor + 1e-9, "{}", report.mean_error);
}

#[test]
fn r2_exact_on_rank_one_flow() {
    let (m, s) = frozen_vortex();
    for plane in [PlaneSpec::Horizontal(6), PlaneSpec::Vertical(38)] {
        let model = train_reconstruction2(&m, plane, &s, 1e-12).unwrap();
        let report = evaluate_reconstruction(&ReconstructionModel::R2(model), &m, &s).unwrap();
        assert!(report.mean_error < 1e-8, "{plane:?}: {}", report.mean_error);
    }
}

#[test]
fn plane_inside_obstacle_is_empty() {
    let (m, s) = frozen_vortex();
    let wall = Rect { x0: 2, y0: 0, x1: 4, y1: m.ny };
    let blocked = SnapshotMatrix::new(m.nx, m.ny, m.dt, wall, m.ids.clone(), m.snapshots.clone()).unwrap();
    assert!(matches!(
        train_reconstruction2(&blocked, PlaneSpec::Vertical(3), &s, 1e-6),
        Err(Error::EmptyDomain(_))
    ));
    assert!(matches!(
        train_reconstruction2(&m, PlaneSpec::Horizontal(m.ny), &s, 1e-6),
        Err(Error::Range(_))
    ));
}

#[test]
fn r1_rejects_excess_modes_and_mismatched_sets() {
    let (m, s) = frozen_vortex();
    let vb = compute_pod(&m, FieldSelection::Velocity).unwrap();
    let pb = compute_pod_vectors(&s.pressure, s.ids.clone(), PodSource::WallPressure).unwrap();
    assert!(matches!(
        train_reconstruction1(&vb, &pb, &s, TruncationConfig { n_u: 2, n_p: 1 }, 1e-6),
        Err(Error::Range(_))
    ));
    let sub = s.select(&[0, 1, 2, 3, 4, 5, 6, 7]).unwrap();
    assert!(train_reconstruction1(&vb, &pb, &sub, TruncationConfig { n_u: 1, n_p: 1 }, 1e-6).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prop_pod_invariants_on_random_fields(seed in 0u64..10_000, n in 3usize..12, dim in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let b = compute_pod_vectors(&cols, (0..n).collect(), PodSource::WallPressure).unwrap();
        let inv = invariants(&b, &cols);
        prop_assert!(inv.ortho < 1e-10);
        prop_assert!(inv.diag < 1e-8);
        prop_assert!(inv.parseval < 1e-8);
        prop_assert!(b.eigenvalues.windows(2).all(|w| w[0] >= w[1] && w[1] >= 0.0));
        for k in 0..b.retained {
            prop_assert!(truncation_identity_error(&b, &cols, k) < 1e-8);
        }
    }

    #[test]
    fn prop_planted_r1_exact_with_all_modes(seed in 0u64..10_000) {
        let (m, _) = generate_synthetic_wake(&WakeConfig {
            nx: 24, ny: 16, snapshots: 8, seed, ..WakeConfig::default()
        }).unwrap();
        let vb = compute_pod(&m, FieldSelection::Velocity).unwrap();
        let nmodes = vb.retained;
        prop_assume!(nmodes == 7);
        // Sensors that are an exact linear image of the velocity coefficients.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let ns = 10;
        let mix: Vec<Vec<f64>> = (0..ns).map(|_| (0..nmodes).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let pressure: Vec<Vec<f64>> = (0..m.len())
            .map(|k| mix.iter().map(|row| (0..nmodes).map(|i| row[i] * vb.coefficients[i][k]).sum::<f64>() - 1.0).collect())
            .collect();
        let s = SensorTrace { locations: (0..ns).map(|i| (i, 0)).collect(), pressure, ids: m.ids.clone() };
        let pb = compute_pod_vectors(&s.pressure, s.ids.clone(), PodSource::WallPressure).unwrap();
        prop_assume!(pb.retained == 7);
        let model = train_reconstruction1(&vb, &pb, &s, TruncationConfig { n_u: 7, n_p: 7 }, 1e-14).unwrap();
        let report = evaluate_reconstruction(&ReconstructionModel::R1(model), &m, &s).unwrap();
        prop_assert!(report.mean_error < 1e-6, "{}", report.mean_error);
    }
}
