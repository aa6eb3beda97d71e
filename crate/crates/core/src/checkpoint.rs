//! Multi-network checkpoints: a UTF-8 metadata header followed by named
//! `MPRNET1` blobs.
//!
//! ```text
//! magic    8 bytes "MPRCKPT1"
//! header   u32 byte length + `key = value` lines
//! count    u32 number of networks
//! per net: u32 name length, name, u64 blob length, MPRNET1 blob
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Mlp;

pub const BUNDLE_MAGIC: &[u8; 8] = b"MPRCKPT1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Bundle {
    pub metadata: BTreeMap<String, String>,
    pub nets: Vec<(String, Mlp)>,
}

impl Bundle {
    pub fn new() -> Self {
        Bundle::default()
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn net(mut self, name: &str, mlp: &Mlp) -> Self {
        self.nets.push((name.to_string(), mlp.clone()));
        self
    }

    pub fn get_meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("checkpoint metadata is missing {key}")))
    }

    pub fn parse_meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get_meta(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("checkpoint metadata {key} = {v:?} is malformed")))
    }

    /// Comma-separated list of floats.
    pub fn parse_floats(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.get_meta(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Format(format!("checkpoint metadata {key} is malformed")))
            })
            .collect()
    }

    pub fn take_net(&self, name: &str) -> Result<Mlp> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| Error::Format(format!("checkpoint has no network {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(BUNDLE_MAGIC);
        let mut header = String::new();
        for (k, v) in &self.metadata {
            header.push_str(&format!("{k} = {v}\n"));
        }
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        buf.extend_from_slice(&(self.nets.len() as u32).to_le_bytes());
        for (name, mlp) in &self.nets {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            let blob = mlp.to_checkpoint_bytes();
            buf.extend_from_slice(&(blob.len() as u64).to_le_bytes());
            buf.extend_from_slice(&blob);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > bytes.len() {
                return Err(Error::Format("truncated checkpoint".into()));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(8)? != BUNDLE_MAGIC {
            return Err(Error::Format("bad MPRCKPT1 magic".into()));
        }
        let hlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let header = std::str::from_utf8(take(hlen)?)
            .map_err(|e| Error::Format(format!("checkpoint header is not UTF-8: {e}")))?;
        let mut metadata = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("bad checkpoint header line {line:?}")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut nets = Vec::with_capacity(count.min(16));
        for _ in 0..count {
            let nlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(nlen)?)
                .map_err(|e| Error::Format(format!("network name is not UTF-8: {e}")))?
                .to_string();
            let blen = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let mut blob = take(blen)?;
            let mlp = Mlp::read_checkpoint(&mut blob)?;
            nets.push((name, mlp));
        }
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(Bundle { metadata, nets })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Bundle::from_bytes(&bytes)
    }
}

pub(crate) fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundle_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
        let b = Mlp::new(&[2, 1], &mut rng).unwrap();
        let bundle = Bundle::new()
            .meta("kind", "test")
            .meta("stats", join_floats(&[0.1, -2.5, 1e-300]))
            .net("a", &a)
            .net("b", &b);
        let bytes = bundle.to_bytes();
        let back = Bundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.parse_floats("stats").unwrap(), vec![0.1, -2.5, 1e-300]);
        assert_eq!(back.take_net("b").unwrap(), b);
        assert!(back.take_net("c").is_err());
        assert!(Bundle::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
