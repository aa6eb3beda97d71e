//! Content hashes and the sidecar records that let a stage be skipped
//! when nothing it consumed has changed.
//!
//! Every artifact `x` gets a sidecar `x.prov`:
//!
//! ```text
//! stage = skills
//! key = <hex sha256 of the stage inputs>
//! output = <hex sha256 of x>
//! input.<name> = <hex sha256>
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hash of the library sources this binary was built from, so cached
/// artifacts are rebuilt after a code change.
pub const SOURCE_HASH: &str = env!("MPR_SOURCE_HASH");

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

/// Inputs of one stage job, folded into a single key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageKey {
    pub stage: String,
    pub inputs: BTreeMap<String, String>,
}

impl StageKey {
    pub fn new(stage: &str) -> Self {
        StageKey {
            stage: stage.to_string(),
            inputs: BTreeMap::new(),
        }
    }

    /// Record a named value (serialised config, seed, id).
    pub fn value(mut self, name: &str, v: impl AsRef<[u8]>) -> Self {
        self.inputs.insert(name.to_string(), hash_bytes(v.as_ref()));
        self
    }

    /// Record an input file by content.
    pub fn file(mut self, name: &str, path: &Path) -> Result<Self> {
        self.inputs.insert(name.to_string(), hash_file(path)?);
        Ok(self)
    }

    pub fn key(&self) -> String {
        let mut h = Sha256::new();
        h.update(SOURCE_HASH.as_bytes());
        h.update(self.stage.as_bytes());
        for (k, v) in &self.inputs {
            h.update([0u8]);
            h.update(k.as_bytes());
            h.update([0u8]);
            h.update(v.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".prov");
    PathBuf::from(s)
}

fn read_record(path: &Path) -> Option<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(sidecar(path)).ok()?;
    Some(
        text.lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    )
}

/// True when every output exists, its sidecar carries `key` and the
/// output still hashes to the recorded value.
pub fn is_fresh(outputs: &[PathBuf], key: &StageKey) -> bool {
    let k = key.key();
    outputs.iter().all(|p| match read_record(p) {
        Some(rec) => {
            rec.get("key") == Some(&k)
                && hash_file(p).ok().as_ref() == rec.get("output")
        }
        None => false,
    })
}

/// Write sidecars for freshly built outputs.
pub fn record(outputs: &[PathBuf], key: &StageKey) -> Result<()> {
    let k = key.key();
    for p in outputs {
        let mut text = format!("stage = {}\nkey = {k}\noutput = {}\n", key.stage, hash_file(p)?);
        for (name, h) in &key.inputs {
            text.push_str(&format!("input.{name} = {h}\n"));
        }
        let side = sidecar(p);
        std::fs::write(&side, text).map_err(|e| Error::io(side, e))?;
    }
    Ok(())
}

/// Result of re-hashing every artifact under a directory against its
/// sidecar.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProvenanceAudit {
    pub checked: usize,
    pub mismatched: Vec<PathBuf>,
}

/// Re-verify every `*.prov` under `root`: the recorded output hash must
/// match the file next to it.
pub fn audit(root: &Path) -> Result<ProvenanceAudit> {
    let mut out = ProvenanceAudit::default();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&dir, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "prov") {
                let artifact = p.with_extension("");
                let ok = read_record(&artifact)
                    .and_then(|r| r.get("output").cloned())
                    .is_some_and(|h| hash_file(&artifact).ok() == Some(h));
                out.checked += 1;
                if !ok {
                    out.mismatched.push(artifact);
                }
            }
        }
    }
    Ok(out)
}
