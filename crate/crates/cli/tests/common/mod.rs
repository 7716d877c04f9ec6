#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use climadapt_core::raster::{save_raster, Grid, Raster};
use serde_json::Value;
use tempfile::TempDir;

pub struct Run {
    pub code: i32,
    pub json: Value,
    pub stderr: String,
}

pub struct TestWorkspace {
    pub dir: TempDir,
}

impl TestWorkspace {
    pub fn new() -> Self {
        let ws = TestWorkspace {
            dir: tempfile::tempdir().unwrap(),
        };
        let r = ws.run(&["init"]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        ws
    }

    pub fn root(&self) -> PathBuf {
        self.dir.path().join("ws")
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn run(&self, args: &[&str]) -> Run {
        let out = Command::new(env!("CARGO_BIN_EXE_climadapt"))
            .arg("--workspace")
            .arg(self.root())
            .arg("--json")
            .args(args)
            .output()
            .expect("binary runs");
        let stdout = String::from_utf8(out.stdout).unwrap();
        Run {
            code: out.status.code().unwrap_or(-1),
            json: serde_json::from_str(stdout.trim()).unwrap_or(Value::Null),
            stderr: String::from_utf8(out.stderr).unwrap(),
        }
    }

    /// Runs and asserts success.
    pub fn ok(&self, args: &[&str]) -> Value {
        let r = self.run(args);
        assert_eq!(r.code, 0, "{args:?} failed: {}", r.stderr);
        r.json
    }

    pub fn manifest(&self) -> Value {
        serde_json::from_str(&fs::read_to_string(self.root().join("manifest.json")).unwrap()).unwrap()
    }

    /// Path -> bytes of every file under `artifacts/`.
    pub fn artifact_bytes(&self) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        collect(&self.root().join("artifacts"), &self.root(), &mut out);
        out
    }
}

fn collect(dir: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect(&p, base, out);
        } else {
            let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
            out.insert(rel, fs::read(&p).unwrap());
        }
    }
}

pub fn artifact(v: &Value, role: &str) -> String {
    v["artifacts"][role].as_str().unwrap_or_else(|| panic!("no {role} in {v}")).to_string()
}

/// 10x10 raster whose first `green` pixels are vegetated and the rest
/// built-up.
pub fn write_raster(path: &Path, green: usize) {
    let band = |g: f64, b: f64| Grid::from_fn(10, 10, |r, c| if r * 10 + c < green { g } else { b });
    let raster = Raster::from_bands([
        ("nir", band(0.8, 0.2)),
        ("red", band(0.1, 0.3)),
        ("swir", band(0.1, 0.6)),
    ])
    .unwrap();
    save_raster(&raster, path).unwrap();
}

pub const ANCHORS: &str = "region_id,raw_x,raw_y,ref_x,ref_y\n\
a,0.1,0.9,0.2,0.85\n\
b,0.5,0.5,0.6,0.45\n\
c,0.9,0.2,0.95,0.1\n";

pub const FUSION_DATA: &str = "wide:co2,wide:sst,deep:ugi,deep:ldi,target\n\
0.1,0.5,0.2,0.8,0.3\n\
0.4,0.1,0.6,0.3,0.7\n\
0.9,0.7,0.1,0.9,1.1\n\
0.3,0.3,0.5,0.5,0.4\n\
0.6,0.2,0.8,0.1,0.9\n";

/// Every pipeline end to end with a fixed seed. Returns the report.
pub fn full_pipeline(ws: &TestWorkspace) -> Value {
    let seed = ["--seed", "11"];
    let flow = ws.ok(&[&seed[..], &["synth-flow"]].concat());
    let (f, s) = (artifact(&flow, "flow"), artifact(&flow, "sensors"));
    let pod = ws.ok(&["pod", "--flow", &f, "--split", "even"]);
    let basis = artifact(&pod, "basis");
    ws.ok(&["recon", "--variant", "r1", "--flow", &f, "--sensors", &s, "--pod", &basis, "--n-u", "4", "--n-p", "4"]);
    ws.ok(&["recon", "--variant", "r2", "--flow", &f, "--sensors", &s, "--plane", "v:38"]);

    let mut series: Option<String> = None;
    for (k, green) in [20usize, 30, 45, 55, 70, 80].into_iter().enumerate() {
        let path = ws.file(&format!("tile{k}.carb"));
        write_raster(&path, green);
        let raster = ws.ok(&["ingest", path.to_str().unwrap()])["raster"].as_str().unwrap().to_string();
        let ts = (1_600_000_000 + 86_400 * k as i64).to_string();
        let mut args = vec!["indices", "--raster", &raster, "--timestamp", &ts, "--region", "riverside"];
        let prev;
        if let Some(sid) = &series {
            prev = sid.clone();
            args.extend(["--series", &prev]);
        }
        series = Some(ws.ok(&args)["series"].as_str().unwrap().to_string());
    }
    let series = series.unwrap();
    fs::write(ws.file("anchors.csv"), ANCHORS).unwrap();
    let cal = ws.ok(&["calibrate", ws.file("anchors.csv").to_str().unwrap()])["calibration"]
        .as_str()
        .unwrap()
        .to_string();
    ws.ok(&["observe", "--series", &series, "--calibration", &cal]);
    ws.ok(&["forecast", "--series", &series, "--model", "poly", "--horizon", "3", "--degree", "2"]);
    ws.ok(&[&seed[..], &["forecast", "--series", &series, "--model", "lstm", "--horizon", "3"]].concat());
    fs::write(ws.file("fusion.csv"), FUSION_DATA).unwrap();
    ws.ok(&[&seed[..], &["fusion", "--dataset", ws.file("fusion.csv").to_str().unwrap()]].concat());
    ws.ok(&["report", "--verify"])
}
