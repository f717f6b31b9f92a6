//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 8                | magic `MOPTCKPT`                          |
//! | 4 (u32)          | format version (currently 1)              |
//! | 4 (u32)          | manifest length `L` in bytes              |
//! | L                | UTF-8 JSON [`Manifest`]                   |
//! | 4·Σ section.len  | f32 values, sections in manifest order    |

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::policy::{PolicyLayout, PolicyParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MOPTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub layout: PolicyLayout,
    pub seed: u64,
    pub adam_steps: u64,
    pub sections: Vec<Section>,
    /// Training-specific metadata (e.g. the meta-training manifest).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub optimizer: Option<AdamState>,
    pub seed: u64,
    pub extra: serde_json::Value,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(params: PolicyParams, seed: u64) -> Self {
        Self { params, optimizer: None, seed, extra: serde_json::Value::Null }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.params.values.len();
        let mut sections = vec![Section { name: "params".into(), len: n }];
        if let Some(opt) = &self.optimizer {
            sections.push(Section { name: "adam_m".into(), len: opt.m.len() });
            sections.push(Section { name: "adam_v".into(), len: opt.v.len() });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            layout: self.params.layout.clone(),
            seed: self.seed,
            adam_steps: self.optimizer.as_ref().map_or(0, |o| o.t),
            sections,
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u32).to_le_bytes())?;
        out.write_all(&json)?;
        let mut blob = Vec::with_capacity(4 * n * 3);
        let mut put = |xs: &[f64]| xs.iter().for_each(|x| blob.extend_from_slice(&(*x as f32).to_le_bytes()));
        put(&self.params.values);
        if let Some(opt) = &self.optimizer {
            put(&opt.m);
            put(&opt.v);
        }
        out.write_all(&blob)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|e| err(format!("truncated header: {e}")))?;
        if &magic != MAGIC {
            return Err(err("bad magic; not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word).map_err(|e| err(format!("truncated header: {e}")))?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(err(format!("unsupported format version {version}")));
        }
        input.read_exact(&mut word).map_err(|e| err(format!("truncated header: {e}")))?;
        let len = u32::from_le_bytes(word) as usize;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json).map_err(|e| err(format!("truncated manifest: {e}")))?;
        let manifest: Manifest = serde_json::from_slice(&json).map_err(|e| err(format!("bad manifest: {e}")))?;

        let mut read_section = |expect: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; 4 * expect];
            input.read_exact(&mut bytes).map_err(|e| err(format!("truncated parameter blob: {e}")))?;
            Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
        };
        let expected = manifest.layout.param_count();
        let mut params = None;
        let (mut m, mut v) = (None, None);
        for s in &manifest.sections {
            if s.len != expected {
                return Err(err(format!("section `{}` has {} values, layout needs {expected}", s.name, s.len)));
            }
            let data = read_section(s.len)?;
            match s.name.as_str() {
                "params" => params = Some(data),
                "adam_m" => m = Some(data),
                "adam_v" => v = Some(data),
                other => return Err(err(format!("unknown section `{other}`"))),
            }
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(err(format!("{} trailing bytes after parameter blob", rest.len())));
        }
        let values = params.ok_or_else(|| err("missing `params` section"))?;
        let optimizer = match (m, v) {
            (Some(m), Some(v)) => Some(AdamState { m, v, t: manifest.adam_steps }),
            (None, None) => None,
            _ => return Err(err("optimizer state must carry both moments")),
        };
        Ok(Self {
            params: PolicyParams { layout: manifest.layout, values },
            optimizer,
            seed: manifest.seed,
            extra: manifest.extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Self::read_from(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn round_trip_is_bitwise() {
        let layout = PolicyLayout::new(6, 3, &[5, 4]);
        let p = PolicyParams::init(layout, &mut seed::rng(4, &[]));
        let mut ck = Checkpoint::new(p.clone(), 77);
        ck.extra = serde_json::json!({"updates": 3});
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        let obs = [0.1, -0.2, 0.3, 0.0, 1.0, -1.0];
        let (a, b) = (p.forward(&obs, 1), back.params.forward(&obs, 1));
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.value, b.value);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupt_inputs_are_checkpoint_errors() {
        let layout = PolicyLayout::new(2, 1, &[3]);
        let ck = Checkpoint::new(PolicyParams::zeros(layout), 0);
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        assert!(matches!(Checkpoint::read_from(&bytes[..bytes.len() - 1]), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(bad.as_slice()), Err(Error::Checkpoint(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::read_from(long.as_slice()), Err(Error::Checkpoint(_))));
    }
}
