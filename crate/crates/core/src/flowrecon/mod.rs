//! Synthetic wake data, POD and sparse-sensor flow reconstruction.
//!
//! The field vector is two-dimensional (u, v on an nx × ny grid); the
//! decomposition itself never depends on that.

mod io;
mod pod;
mod recon;
mod wake;

pub use io::{
    load_snapshots, save_snapshots, sensors_from_csv, sensors_to_csv, SequenceManifest, SnapshotEntry,
    MANIFEST_FILE,
};
pub use pod::{
    apply_sign_convention, compute_pod, compute_pod_vectors, energy_fraction, field_vector, field_vectors,
    reconstruct_field, truncation_floor, FieldSelection, PodBasis, PodSource,
};
pub use recon::{
    evaluate_reconstruction, plane_cells, plane_values, r1_inputs, train_reconstruction1,
    train_reconstruction2, EvaluationReport, PlaneSpec, Reconstruction1, Reconstruction2,
    ReconstructionModel, Regressor, RidgeMap, TruncationConfig,
};
pub use wake::{
    default_sensor_cells, generate_synthetic_wake, FlowField, Rect, SensorTrace, SnapshotMatrix, WakeConfig,
};

/// Positions `0, 2, 4, …` for training and `1, 3, 5, …` for testing.
pub fn interleaved_split(len: usize) -> (Vec<usize>, Vec<usize>) {
    ((0..len).step_by(2).collect(), (1..len).step_by(2).collect())
}
