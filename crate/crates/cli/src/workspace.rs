//! Content-addressed artifact store with a JSON manifest.
//!
//! Artifact ids are `<kind>-<first 16 hex digits of sha256>`, so re-running a
//! command on identical inputs yields the same id and leaves the manifest
//! untouched. Files live under `artifacts/<kind>/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactRecord {
    pub kind: String,
    /// Relative to the workspace root.
    pub path: String,
    pub sha256: String,
    pub created_unix: u64,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            artifacts: BTreeMap::new(),
        }
    }
}

/// Removes the lock file on drop.
#[derive(Debug)]
struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    manifest: Manifest,
    _lock: Option<LockGuard>,
}

/// A file inside a multi-file artifact.
pub struct DirEntry {
    pub name: String,
    pub bytes: Vec<u8>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest over sorted `(name, length, content)` records.
fn dir_digest(entries: &[DirEntry]) -> String {
    let mut sorted: Vec<&DirEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut h = Sha256::new();
    for e in sorted {
        h.update(e.name.as_bytes());
        h.update([0u8]);
        h.update((e.bytes.len() as u64).to_le_bytes());
        h.update(&e.bytes);
    }
    hex::encode(h.finalize())
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

impl Workspace {
    /// Creates the workspace layout if missing. Idempotent.
    pub fn init(root: &Path) -> CliResult<Workspace> {
        fs::create_dir_all(root.join("artifacts")).map_err(|e| CliError::io(root, e))?;
        let manifest_path = root.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            let text = serde_json::to_string_pretty(&Manifest::default()).expect("serializes") + "\n";
            write_atomic(&manifest_path, text.as_bytes())?;
        }
        Workspace::open(root, false)
    }

    /// Opens an initialized workspace. Mutating commands pass `lock = true`
    /// and hold the lock file until the workspace is dropped.
    pub fn open(root: &Path, lock: bool) -> CliResult<Workspace> {
        let manifest_path = root.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(CliError::Workspace(format!(
                "{} is not an initialized workspace (run `init` first)",
                root.display()
            )));
        }
        let guard = if lock {
            let p = root.join(LOCK_FILE);
            match fs::OpenOptions::new().write(true).create_new(true).open(&p) {
                Ok(_) => Some(LockGuard(p)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    return Err(CliError::Workspace(format!(
                        "workspace is locked by another command ({})",
                        p.display()
                    )))
                }
                Err(e) => return Err(CliError::io(p, e)),
            }
        } else {
            None
        };
        let text = fs::read_to_string(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Workspace(format!("manifest is malformed: {e}")))?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(CliError::Workspace(format!(
                "unsupported manifest version {}",
                manifest.format_version
            )));
        }
        Ok(Workspace {
            root: root.to_path_buf(),
            manifest,
            _lock: guard,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn save_manifest(&self) -> CliResult<()> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("serializes") + "\n";
        write_atomic(&self.root.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn record(&self, id: &str) -> CliResult<&ArtifactRecord> {
        self.manifest
            .artifacts
            .get(id)
            .ok_or_else(|| CliError::Usage(format!("unknown artifact id `{id}`")))
    }

    /// Looks up `id` and checks that it is of the given kind.
    pub fn expect(&self, id: &str, kind: &str) -> CliResult<&ArtifactRecord> {
        let r = self.record(id)?;
        if r.kind != kind {
            return Err(CliError::Usage(format!(
                "artifact `{id}` is a {}, expected a {kind}",
                r.kind
            )));
        }
        Ok(r)
    }

    pub fn path_of(&self, id: &str) -> CliResult<PathBuf> {
        Ok(self.root.join(&self.record(id)?.path))
    }

    pub fn read(&self, id: &str, kind: &str) -> CliResult<Vec<u8>> {
        let p = self.root.join(&self.expect(id, kind)?.path);
        fs::read(&p).map_err(|e| CliError::io(p, e))
    }

    pub fn read_text(&self, id: &str, kind: &str) -> CliResult<String> {
        String::from_utf8(self.read(id, kind)?)
            .map_err(|_| CliError::Usage(format!("artifact `{id}` is not UTF-8 text")))
    }

    fn insert(&mut self, id: &str, record: ArtifactRecord) -> CliResult<bool> {
        if self.manifest.artifacts.contains_key(id) {
            return Ok(false);
        }
        self.manifest.artifacts.insert(id.to_string(), record);
        self.save_manifest()?;
        Ok(true)
    }

    /// Stores `bytes` as a new artifact. Returns the id and whether it was
    /// newly registered.
    pub fn register_file(
        &mut self,
        kind: &str,
        ext: &str,
        bytes: &[u8],
        inputs: &[String],
        label: Option<String>,
    ) -> CliResult<(String, bool)> {
        let digest = sha256_hex(bytes);
        let id = format!("{kind}-{}", &digest[..16]);
        let rel = format!("artifacts/{kind}/{id}.{ext}");
        let path = self.root.join(&rel);
        if !path.exists() {
            let dir = path.parent().expect("has parent");
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            write_atomic(&path, bytes)?;
        }
        let fresh = self.insert(
            &id,
            ArtifactRecord {
                kind: kind.to_string(),
                path: rel,
                sha256: digest,
                created_unix: now_unix(),
                inputs: inputs.to_vec(),
                label,
            },
        )?;
        Ok((id, fresh))
    }

    /// Stores a directory of files as one artifact.
    pub fn register_dir(
        &mut self,
        kind: &str,
        entries: &[DirEntry],
        inputs: &[String],
        label: Option<String>,
    ) -> CliResult<(String, bool)> {
        let digest = dir_digest(entries);
        let id = format!("{kind}-{}", &digest[..16]);
        let rel = format!("artifacts/{kind}/{id}");
        let dir = self.root.join(&rel);
        if !dir.exists() {
            let tmp = self.root.join(format!("artifacts/{kind}/.{id}.partial"));
            let _ = fs::remove_dir_all(&tmp);
            fs::create_dir_all(&tmp).map_err(|e| CliError::io(&tmp, e))?;
            for e in entries {
                let p = tmp.join(&e.name);
                fs::write(&p, &e.bytes).map_err(|err| CliError::io(p, err))?;
            }
            fs::rename(&tmp, &dir).map_err(|e| CliError::io(&dir, e))?;
        }
        let fresh = self.insert(
            &id,
            ArtifactRecord {
                kind: kind.to_string(),
                path: rel,
                sha256: digest,
                created_unix: now_unix(),
                inputs: inputs.to_vec(),
                label,
            },
        )?;
        Ok((id, fresh))
    }

    /// Recomputes every artifact's hash. Returns the ids that are missing
    /// or whose content changed.
    pub fn verify(&self) -> Vec<String> {
        self.manifest
            .artifacts
            .iter()
            .filter(|(_, r)| self.digest_on_disk(r).as_deref() != Some(r.sha256.as_str()))
            .map(|(id, _)| id.clone())
            .collect()
    }

    fn digest_on_disk(&self, r: &ArtifactRecord) -> Option<String> {
        let p = self.root.join(&r.path);
        if p.is_dir() {
            let mut entries = Vec::new();
            for e in fs::read_dir(&p).ok()? {
                let e = e.ok()?;
                entries.push(DirEntry {
                    name: e.file_name().into_string().ok()?,
                    bytes: fs::read(e.path()).ok()?,
                });
            }
            Some(dir_digest(&entries))
        } else {
            fs::read(&p).ok().map(|b| sha256_hex(&b))
        }
    }
}

/// Reads every regular file of `dir` as a [`DirEntry`].
pub fn read_dir_entries(dir: &Path) -> CliResult<Vec<DirEntry>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let e = e.map_err(|e| CliError::io(dir, e))?;
        let path = e.path();
        if path.is_file() {
            out.push(DirEntry {
                name: e.file_name().to_string_lossy().into_owned(),
                bytes: fs::read(&path).map_err(|err| CliError::io(&path, err))?,
            });
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_content_same_id() {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::init(dir.path()).unwrap();
        let (a, fresh_a) = ws.register_file("report", "json", b"{}", &[], None).unwrap();
        let before = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let (b, fresh_b) = ws.register_file("report", "json", b"{}", &[], None).unwrap();
        assert_eq!(a, b);
        assert!(fresh_a && !fresh_b);
        assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), before);
        assert!(a.starts_with("report-") && a.len() == "report-".len() + 16);
        assert!(ws.verify().is_empty());
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::init(dir.path()).unwrap();
        let (id, _) = ws.register_file("series", "csv", b"timestamp\n", &[], None).unwrap();
        fs::write(ws.path_of(&id).unwrap(), b"changed").unwrap();
        assert_eq!(ws.verify(), vec![id]);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        Workspace::init(dir.path()).unwrap();
        let held = Workspace::open(dir.path(), true).unwrap();
        assert!(matches!(Workspace::open(dir.path(), true), Err(CliError::Workspace(_))));
        assert!(Workspace::open(dir.path(), false).is_ok());
        drop(held);
        assert!(Workspace::open(dir.path(), true).is_ok());
    }

    #[test]
    fn directory_artifacts_hash_by_content() {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::init(dir.path()).unwrap();
        let entries = vec![
            DirEntry { name: "b".into(), bytes: vec![2] },
            DirEntry { name: "a".into(), bytes: vec![1] },
        ];
        let (id, _) = ws.register_dir("flow", &entries, &[], None).unwrap();
        let back = read_dir_entries(&ws.path_of(&id).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        assert!(ws.verify().is_empty());
    }
}
