use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use climadapt_core::adaptation::{
    anchors_from_csv, diagram_csv, diagram_svg, fit_calibration, observe, CalibrationMap,
};
use climadapt_core::flowrecon::{
    compute_pod_vectors, evaluate_reconstruction, field_vectors, generate_synthetic_wake,
    interleaved_split, load_snapshots, save_snapshots, sensors_from_csv, sensors_to_csv,
    train_reconstruction1, train_reconstruction2, FieldSelection, PlaneSpec, PodBasis, PodSource,
    ReconstructionModel, SensorTrace, SnapshotMatrix, TruncationConfig,
};
use climadapt_core::forecast::{compare_families, fit_series, forecast_csv, ModelFile};
use climadapt_core::fusion::{self, init_model, train, Dataset};
use climadapt_core::indicators::{
    land_development_index, urban_green_index, IndicatorSeries, DEVELOPMENT_INDEX, GREEN_INDEX,
};
use climadapt_core::raster::Raster;
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::workspace::{read_dir_entries, sha256_hex, Workspace};

const DEFAULT_REGION: &str = "region";

/// Registers one file and logs whether it was new.
fn put(
    ws: &mut Workspace,
    kind: &str,
    ext: &str,
    bytes: &[u8],
    inputs: &[String],
    label: Option<String>,
) -> CliResult<String> {
    let (id, fresh) = ws.register_file(kind, ext, bytes, inputs, label)?;
    log_registered(&id, fresh);
    Ok(id)
}

fn log_registered(id: &str, fresh: bool) {
    if fresh {
        eprintln!("registered {id}");
    } else {
        eprintln!("{id} already registered; manifest unchanged");
    }
}

fn to_json_pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes") + "\n"
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Usage(format!("{what}: {e}")))
}

pub fn init(root: &Path) -> CliResult<Value> {
    let ws = Workspace::init(root)?;
    eprintln!("workspace ready at {}", root.display());
    Ok(json!({
        "command": "init",
        "workspace": root.display().to_string(),
        "artifacts": ws.manifest().artifacts.len(),
    }))
}

pub fn ingest(ws: &mut Workspace, path: &Path) -> CliResult<Value> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let raster = Raster::from_bytes(&bytes)?;
    let id = put(ws, "raster", "carb", &bytes, &[], None)?;
    Ok(json!({
        "command": "ingest",
        "raster": id,
        "width": raster.width(),
        "height": raster.height(),
        "bands": raster.bands().iter().map(|b| b.name.clone()).collect::<Vec<_>>(),
    }))
}

fn load_series(ws: &Workspace, id: &str) -> CliResult<IndicatorSeries> {
    let region = ws
        .expect(id, "series")?
        .label
        .clone()
        .unwrap_or_else(|| DEFAULT_REGION.into());
    Ok(IndicatorSeries::from_csv(region, &ws.read_text(id, "series")?)?)
}

pub fn indices(
    ws: &mut Workspace,
    cfg: &PipelineConfig,
    raster_id: &str,
    series_id: Option<&str>,
    timestamp: i64,
    region: Option<&str>,
) -> CliResult<Value> {
    let raster = Raster::from_bytes(&ws.read(raster_id, "raster")?)?;
    let green = urban_green_index(&raster, &cfg.index)?;
    let dev = land_development_index(&raster, &cfg.index)?;
    let base = match series_id {
        Some(id) => {
            let s = load_series(ws, id)?;
            if let Some(r) = region {
                if r != s.region_id() {
                    return Err(CliError::Usage(format!(
                        "region `{r}` does not match series region `{}`",
                        s.region_id()
                    )));
                }
            }
            s
        }
        None => IndicatorSeries::new(region.unwrap_or(DEFAULT_REGION)),
    };
    let values: BTreeMap<String, f64> = [(GREEN_INDEX.to_string(), green), (DEVELOPMENT_INDEX.to_string(), dev)]
        .into_iter()
        .collect();
    let next = base.append_observation(timestamp, &values)?;
    let mut inputs = vec![raster_id.to_string()];
    inputs.extend(series_id.map(str::to_string));
    let id = put(
        ws,
        "series",
        "csv",
        next.to_csv().as_bytes(),
        &inputs,
        Some(next.region_id().to_string()),
    )?;
    Ok(json!({
        "command": "indices",
        "series": id,
        "region": next.region_id(),
        "timestamp": timestamp,
        GREEN_INDEX: green,
        DEVELOPMENT_INDEX: dev,
        "entries": next.len(),
    }))
}

pub fn calibrate(ws: &mut Workspace, anchors_path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(anchors_path).map_err(|e| CliError::io(anchors_path, e))?;
    let map = fit_calibration(&anchors_from_csv(&text)?)?;
    let id = put(ws, "calibration", "json", to_json_pretty(&map).as_bytes(), &[], None)?;
    Ok(json!({
        "command": "calibrate",
        "calibration": id,
        "x_axis": map.x_axis,
        "y_axis": map.y_axis,
        "fit_residual": map.fit_residual,
    }))
}

pub fn observe_cmd(
    ws: &mut Workspace,
    cfg: &PipelineConfig,
    series_id: &str,
    calibration_id: Option<&str>,
) -> CliResult<Value> {
    let series = load_series(ws, series_id)?;
    let (timestamp, last) = series
        .last()
        .ok_or_else(|| CliError::Usage(format!("series `{series_id}` is empty")))?;
    let field = |name: &str| {
        last.get(name).copied().ok_or_else(|| {
            CliError::Usage(format!("series `{series_id}` has no `{name}` column"))
        })
    };
    let (green, dev) = (field(GREEN_INDEX)?, field(DEVELOPMENT_INDEX)?);
    let cal = match calibration_id {
        Some(id) => parse_json::<CalibrationMap>(&ws.read_text(id, "calibration")?, "calibration")?,
        None => CalibrationMap::identity(),
    };
    let point = observe(series.region_id(), green, dev, &cal, &cfg.calibration)?;
    let mut inputs = vec![series_id.to_string()];
    inputs.extend(calibration_id.map(str::to_string));
    let points = std::slice::from_ref(&point);
    let point_id = put(ws, "point", "json", to_json_pretty(&point).as_bytes(), &inputs, None)?;
    let csv_id = put(ws, "diagram", "csv", diagram_csv(points).as_bytes(), &inputs, None)?;
    let svg_id = put(
        ws,
        "diagram",
        "svg",
        diagram_svg(points, &cfg.calibration).as_bytes(),
        &inputs,
        None,
    )?;
    Ok(json!({
        "command": "observe",
        "timestamp": timestamp,
        "point": point,
        "artifacts": { "point": point_id, "diagram_csv": csv_id, "diagram_svg": svg_id },
    }))
}

pub struct ForecastArgs<'a> {
    pub series: &'a str,
    pub model: &'a str,
    pub horizon: usize,
    pub degree: Option<usize>,
    pub holdout: Option<usize>,
    pub noise: f64,
}

pub fn forecast_cmd(ws: &mut Workspace, cfg: &PipelineConfig, a: &ForecastArgs) -> CliResult<Value> {
    let series = load_series(ws, a.series)?;
    let degree = a.degree.unwrap_or(cfg.forecast.degree);
    let models = fit_series(&series, a.model, degree, &cfg.forecast.lstm)?;
    let csv = forecast_csv(&series, &models, a.horizon)?;
    let inputs = vec![a.series.to_string()];
    let model_id = put(
        ws,
        "forecast-model",
        "json",
        ModelFile::new(models).to_json().as_bytes(),
        &inputs,
        None,
    )?;
    let forecast_id = put(ws, "forecast", "csv", csv.as_bytes(), &inputs, None)?;
    let mut out = json!({
        "command": "forecast",
        "model_kind": a.model,
        "horizon": a.horizon,
        "artifacts": { "model": model_id, "forecast": forecast_id },
    });
    if let Some(test_len) = a.holdout {
        if !(a.noise.is_finite() && a.noise >= 0.0) {
            return Err(CliError::Usage(format!("noise must be a finite value >= 0, got {}", a.noise)));
        }
        let times = series.timestamps();
        let mut cmp = BTreeMap::new();
        for name in series.names() {
            let c = compare_families(
                &times,
                &series.column(name)?,
                test_len,
                degree,
                &cfg.forecast.lstm,
                a.noise,
                cfg.forecast.lstm.seed,
            )?;
            cmp.insert(name.clone(), c);
        }
        out["comparison"] = json!(cmp);
    }
    Ok(out)
}

pub fn synth_flow(ws: &mut Workspace, cfg: &PipelineConfig) -> CliResult<Value> {
    let (m, sensors) = generate_synthetic_wake(&cfg.flow)?;
    let scratch = ws.root().join(format!(".scratch-{}", std::process::id()));
    let _ = fs::remove_dir_all(&scratch);
    let saved = save_snapshots(&m, &scratch)
        .map_err(CliError::from)
        .and_then(|_| read_dir_entries(&scratch));
    let _ = fs::remove_dir_all(&scratch);
    let entries = saved?;
    let (flow_id, fresh) = ws.register_dir("flow", &entries, &[], None)?;
    log_registered(&flow_id, fresh);
    let inputs = vec![flow_id.clone()];
    let sensors_id = put(ws, "sensors", "csv", sensors_to_csv(&sensors).as_bytes(), &inputs, None)?;
    Ok(json!({
        "command": "synth-flow",
        "snapshots": m.len(),
        "nx": m.nx,
        "ny": m.ny,
        "sensors": sensors.sensor_count(),
        "seed": cfg.flow.seed,
        "artifacts": { "flow": flow_id, "sensors": sensors_id },
    }))
}

fn load_flow(ws: &Workspace, id: &str) -> CliResult<SnapshotMatrix> {
    ws.expect(id, "flow")?;
    Ok(load_snapshots(ws.path_of(id)?)?)
}

fn load_sensors(ws: &Workspace, id: &str) -> CliResult<SensorTrace> {
    Ok(sensors_from_csv(&ws.read_text(id, "sensors")?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PodSplit {
    /// Every snapshot.
    All,
    /// Even positions only, leaving odd positions for testing.
    Even,
}

fn spectrum_csv(b: &PodBasis) -> String {
    let total: f64 = b.eigenvalues.iter().sum();
    let mut out = String::from("mode,eigenvalue,energy_fraction\n");
    for (i, l) in b.eigenvalues.iter().enumerate() {
        let share = if total > 0.0 { l / total } else { 0.0 };
        writeln!(out, "{},{l},{share}", i + 1).unwrap();
    }
    out
}

pub fn pod(
    ws: &mut Workspace,
    flow_id: &str,
    modes: Option<usize>,
    field: FieldSelection,
    split: PodSplit,
) -> CliResult<Value> {
    let full = load_flow(ws, flow_id)?;
    let m = match split {
        PodSplit::All => full,
        PodSplit::Even => full.select(&interleaved_split(full.len()).0)?,
    };
    let mut basis = compute_pod_vectors(&field_vectors(&m, field), m.ids.clone(), PodSource::Field(field))?;
    if let Some(k) = modes {
        basis = basis.truncated(k)?;
    }
    if basis.retained == 0 {
        eprintln!("flow has no fluctuation energy; spectrum is all zeros");
    }
    let inputs = vec![flow_id.to_string()];
    let basis_id = put(ws, "pod-basis", "json", to_json_pretty(&basis).as_bytes(), &inputs, None)?;
    let spectrum_id = put(ws, "spectrum", "csv", spectrum_csv(&basis).as_bytes(), &inputs, None)?;
    Ok(json!({
        "command": "pod",
        "field": field,
        "snapshots": m.len(),
        "retained": basis.retained,
        "eigenvalues": basis.eigenvalues,
        "artifacts": { "basis": basis_id, "spectrum": spectrum_id },
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Variant {
    R1,
    R2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReconSplit {
    /// Train on even positions, test on odd positions.
    Interleaved,
    /// Train and test on every snapshot.
    All,
}

pub struct ReconArgs<'a> {
    pub variant: Variant,
    pub flow: &'a str,
    pub sensors: &'a str,
    pub pod: Option<&'a str>,
    pub n_u: usize,
    pub n_p: usize,
    pub lambda: f64,
    pub plane: PlaneSpec,
    pub split: ReconSplit,
}

/// Parses `h:<row>` or `v:<column>`.
pub fn parse_plane(s: &str) -> Result<PlaneSpec, String> {
    let (kind, idx) = s
        .split_once(':')
        .ok_or_else(|| format!("plane `{s}` must look like h:<row> or v:<column>"))?;
    let idx: usize = idx.parse().map_err(|e| format!("plane index `{idx}`: {e}"))?;
    match kind {
        "h" => Ok(PlaneSpec::Horizontal(idx)),
        "v" => Ok(PlaneSpec::Vertical(idx)),
        _ => Err(format!("plane orientation `{kind}` must be h or v")),
    }
}

pub fn recon(ws: &mut Workspace, a: &ReconArgs) -> CliResult<Value> {
    if !(a.lambda.is_finite() && a.lambda >= 0.0) {
        return Err(CliError::Usage(format!("lambda must be finite and >= 0, got {}", a.lambda)));
    }
    let m = load_flow(ws, a.flow)?;
    let sensors = load_sensors(ws, a.sensors)?;
    if sensors.ids != m.ids {
        return Err(CliError::Usage(format!(
            "sensors `{}` do not belong to flow `{}`",
            a.sensors, a.flow
        )));
    }
    let all: Vec<usize> = (0..m.len()).collect();
    let velocity = match a.pod {
        Some(id) => {
            let b: PodBasis = parse_json(&ws.read_text(id, "pod-basis")?, "pod basis")?;
            if !matches!(b.source, PodSource::Field(_)) {
                return Err(CliError::Usage(format!("pod basis `{id}` is not a field basis")));
            }
            Some(b)
        }
        None => None,
    };
    let (train_pos, test_pos) = match (&velocity, a.split) {
        (Some(b), _) => {
            let train: Vec<usize> = all.iter().copied().filter(|&k| b.snapshot_ids.contains(&m.ids[k])).collect();
            if train.len() != b.snapshot_ids.len() {
                return Err(CliError::Usage(format!(
                    "pod basis snapshots are not all in flow `{}`",
                    a.flow
                )));
            }
            let test: Vec<usize> = all.iter().copied().filter(|k| !train.contains(k)).collect();
            if test.is_empty() {
                eprintln!("pod basis covers every snapshot; evaluating on the training set");
                (train.clone(), train)
            } else {
                (train, test)
            }
        }
        (None, ReconSplit::Interleaved) => interleaved_split(m.len()),
        (None, ReconSplit::All) => (all.clone(), all),
    };
    let (m_train, s_train) = (m.select(&train_pos)?, sensors.select(&train_pos)?);
    let (m_test, s_test) = (m.select(&test_pos)?, sensors.select(&test_pos)?);

    let mut inputs = vec![a.flow.to_string(), a.sensors.to_string()];
    let model = match a.variant {
        Variant::R1 => {
            let velocity = match velocity {
                Some(b) => b,
                None => compute_pod_vectors(
                    &field_vectors(&m_train, FieldSelection::Velocity),
                    m_train.ids.clone(),
                    PodSource::Field(FieldSelection::Velocity),
                )?,
            };
            inputs.extend(a.pod.map(str::to_string));
            let pressure = compute_pod_vectors(&s_train.pressure, s_train.ids.clone(), PodSource::WallPressure)?;
            let trunc = TruncationConfig { n_u: a.n_u, n_p: a.n_p };
            ReconstructionModel::R1(train_reconstruction1(&velocity, &pressure, &s_train, trunc, a.lambda)?)
        }
        Variant::R2 => ReconstructionModel::R2(train_reconstruction2(&m_train, a.plane, &s_train, a.lambda)?),
    };
    let report = evaluate_reconstruction(&model, &m_test, &s_test)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let model_id = put(ws, "recon-model", "json", to_json_pretty(&model).as_bytes(), &inputs, None)?;
    let mut report_inputs = inputs.clone();
    report_inputs.push(model_id.clone());
    let report_id = put(ws, "recon-report", "json", to_json_pretty(&report).as_bytes(), &report_inputs, None)?;
    Ok(json!({
        "command": "recon",
        "variant": report.variant,
        "mean_error": report.mean_error,
        "truncation_floor": report.truncation_floor,
        "disjoint": report.disjoint,
        "train_snapshots": report.train_ids.len(),
        "test_snapshots": report.test_ids.len(),
        "artifacts": { "model": model_id, "report": report_id },
    }))
}

pub fn fusion_cmd(ws: &mut Workspace, cfg: &PipelineConfig, dataset_path: &Path) -> CliResult<Value> {
    let bytes = fs::read(dataset_path).map_err(|e| CliError::io(dataset_path, e))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Usage(format!("{} is not UTF-8", dataset_path.display())))?;
    let data = Dataset::from_csv(&text)?;
    let f = &cfg.fusion;
    let mut model = init_model(data.wide_names.len(), data.deep_names.len(), &f.hidden_layers, f.seed)?;
    model.fit_standardization(&data)?;
    let (trained, history) = train(&model, &data, &f.train_options())?;
    let dataset_id = put(ws, "dataset", "csv", &bytes, &[], None)?;
    let inputs = vec![dataset_id.clone()];
    let file = fusion::ModelFile {
        format_version: fusion::MODEL_FORMAT_VERSION,
        wide_names: data.wide_names.clone(),
        deep_names: data.deep_names.clone(),
        model: trained,
    };
    let model_id = put(ws, "fusion-model", "json", file.to_json().as_bytes(), &inputs, None)?;
    let mut loss = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        writeln!(loss, "{},{l}", e + 1).unwrap();
    }
    let loss_id = put(ws, "loss-history", "csv", loss.as_bytes(), &inputs, None)?;
    Ok(json!({
        "command": "fusion",
        "records": data.records.len(),
        "epochs": history.len(),
        "final_loss": history.last(),
        "artifacts": { "dataset": dataset_id, "model": model_id, "loss_history": loss_id },
    }))
}

/// Lists every artifact with its hash. The `digest` covers ids, kinds,
/// hashes and inputs but not creation times, so two identical pipelines
/// report the same digest.
pub fn report(ws: &Workspace, verify: bool) -> CliResult<Value> {
    let mut listing = Vec::new();
    for (id, r) in &ws.manifest().artifacts {
        listing.push(json!({
            "id": id,
            "kind": r.kind,
            "path": r.path,
            "sha256": r.sha256,
            "inputs": r.inputs,
            "label": r.label,
        }));
    }
    let digest = sha256_hex(serde_json::to_string(&listing).expect("serializes").as_bytes());
    let mut out = json!({
        "command": "report",
        "artifact_count": listing.len(),
        "digest": digest,
        "artifacts": listing,
    });
    if verify {
        let bad = ws.verify();
        if !bad.is_empty() {
            return Err(CliError::Workspace(format!(
                "{} artifact(s) missing or modified: {}",
                bad.len(),
                bad.join(", ")
            )));
        }
        out["verified"] = json!(true);
    }
    Ok(out)
}
