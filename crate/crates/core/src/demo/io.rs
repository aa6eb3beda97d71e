//! `MPRDAT1` layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "MPRDAT1\0"
//! version    u32
//! manifest   u32 byte length + UTF-8 `key = value` lines
//! count      u32 number of trajectories
//! per trajectory:
//!   goal u32, success u8, steps u32,
//!   (steps + 1) × [px, py, vx, vy] f64, steps × [ax, ay] f64
//! crc32      u32 over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::maze::{DynamicsParams, Kinematics, MazeLayout, PhysicsConfig};

use super::{Dataset, Trajectory};

pub const DATASET_MAGIC: &[u8; 8] = b"MPRDAT1\0";
pub const DATASET_VERSION: u32 = 1;

fn manifest(ds: &Dataset) -> String {
    let mut m = BTreeMap::new();
    let p = &ds.physics;
    m.insert("mdp_id", ds.mdp_id.clone());
    m.insert("damping", format!("{:?}", ds.params.damping));
    m.insert("friction_x", format!("{:?}", ds.params.friction_x));
    m.insert("friction_y", format!("{:?}", ds.params.friction_y));
    m.insert("seed", ds.seed.to_string());
    m.insert("trajectories", ds.trajectories.len().to_string());
    m.insert(
        "goal_counts",
        ds.goal_counts()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    m.insert("dt", format!("{:?}", p.dt));
    m.insert("max_speed", format!("{:?}", p.max_speed));
    m.insert("max_action", format!("{:?}", p.max_action));
    m.insert("goal_radius", format!("{:?}", p.goal_radius));
    m.insert("horizon", p.horizon.to_string());
    m.insert("pixels_per_cell", p.pixels_per_cell.to_string());
    m.insert("start_jitter", format!("{:?}", p.start_jitter));
    m.insert("cell_size", format!("{:?}", ds.layout.cell_size()));
    m.insert("layout", ds.layout.to_text().trim_end().replace('\n', "|"));
    let mut text = String::new();
    for (k, v) in &m {
        text.push_str(&format!("{k} = {v}\n"));
    }
    for (k, v) in &ds.metadata {
        text.push_str(&format!("meta.{k} = {v}\n"));
    }
    text
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    let text = manifest(ds);
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    buf.extend_from_slice(&(ds.trajectories.len() as u32).to_le_bytes());
    for t in &ds.trajectories {
        buf.extend_from_slice(&(t.goal as u32).to_le_bytes());
        buf.push(u8::from(t.success));
        buf.extend_from_slice(&(t.actions.len() as u32).to_le_bytes());
        for k in &t.states {
            for v in k.position.iter().chain(&k.velocity) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for a in &t.actions {
            for v in a {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated dataset file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < DATASET_MAGIC.len() + 8 {
        return Err(Error::Format("truncated dataset file".into()));
    }
    if &bytes[..8] != DATASET_MAGIC {
        return Err(Error::Format("bad MPRDAT1 magic".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    let mut cur = Cursor { bytes: body, pos: 8 };
    let version = cur.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mlen = cur.u32()? as usize;
    let text = std::str::from_utf8(cur.take(mlen)?)
        .map_err(|e| Error::Format(format!("manifest is not UTF-8: {e}")))?;
    let mut fields = BTreeMap::new();
    let mut metadata = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::Format(format!("bad manifest line {line:?}")))?;
        match k.strip_prefix("meta.") {
            Some(meta) => {
                metadata.insert(meta.to_string(), v.to_string());
            }
            None => {
                fields.insert(k.to_string(), v.to_string());
            }
        }
    }
    let get = |k: &str| {
        fields
            .get(k)
            .ok_or_else(|| Error::Format(format!("manifest is missing {k}")))
    };
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Format(format!("manifest field {k} = {v:?} is malformed")))
    }
    let params = DynamicsParams::new(
        num("damping", get("damping")?)?,
        num("friction_x", get("friction_x")?)?,
        num("friction_y", get("friction_y")?)?,
    )?;
    let physics = PhysicsConfig {
        dt: num("dt", get("dt")?)?,
        max_speed: num("max_speed", get("max_speed")?)?,
        max_action: num("max_action", get("max_action")?)?,
        goal_radius: num("goal_radius", get("goal_radius")?)?,
        horizon: num("horizon", get("horizon")?)?,
        pixels_per_cell: num("pixels_per_cell", get("pixels_per_cell")?)?,
        start_jitter: num("start_jitter", get("start_jitter")?)?,
    };
    let layout = MazeLayout::parse(
        &get("layout")?.replace('|', "\n"),
        num("cell_size", get("cell_size")?)?,
    )?;
    let count = cur.u32()? as usize;
    let mut trajectories = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let goal = cur.u32()? as usize;
        let success = cur.take(1)?[0] != 0;
        let steps = cur.u32()? as usize;
        let mut states = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            states.push(Kinematics {
                position: [cur.f64()?, cur.f64()?],
                velocity: [cur.f64()?, cur.f64()?],
            });
        }
        let mut actions = Vec::with_capacity(steps);
        for _ in 0..steps {
            actions.push([cur.f64()?, cur.f64()?]);
        }
        trajectories.push(Trajectory {
            states,
            actions,
            goal,
            success,
        });
    }
    if cur.pos != body.len() {
        return Err(Error::Format("trailing bytes after trajectories".into()));
    }
    let ds = Dataset {
        mdp_id: get("mdp_id")?.clone(),
        params,
        physics,
        layout: Arc::new(layout),
        seed: num("seed", get("seed")?)?,
        metadata,
        trajectories,
    };
    ds.validate()?;
    ds.mdp()?;
    Ok(ds)
}
