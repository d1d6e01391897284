//! Binary checkpoint: magic, version, JSON header, then named f32 tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Param, Real, TrainingMeta, UNet};
use crate::{Error, Result};

pub const MAGIC: &[u8; 6] = b"N2N4M\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    training: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub training: TrainingMeta,
    pub tensors: Vec<Param<f32>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {} (wanted {n} more)", self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8 string".to_string())
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

impl Checkpoint {
    /// Captures a model's weights as 32-bit floats.
    pub fn from_model<T: Real>(model: &UNet<T>, training: TrainingMeta) -> Self {
        let tensors = model
            .params()
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                dims: p.dims.clone(),
                data: p.data.iter().map(|v| v.to_f32().expect("finite weight")).collect(),
            })
            .collect();
        Self { model: model.config().clone(), training, tensors }
    }

    pub fn to_model<T: Real>(&self) -> Result<UNet<T>> {
        let params = self
            .tensors
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                dims: p.dims.clone(),
                data: p.data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
            })
            .collect();
        UNet::from_params(self.model.clone(), params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = Header { model: self.model.clone(), training: self.training.clone() };
        let json = serde_json::to_string(&header).expect("header serializes");
        push_u32(&mut out, json.len());
        out.extend_from_slice(json.as_bytes());
        push_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            push_u32(&mut out, t.name.len());
            out.extend_from_slice(t.name.as_bytes());
            push_u32(&mut out, t.dims.len());
            for &d in &t.dims {
                push_u32(&mut out, d);
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses and checks tensors against the embedded model config. The
    /// error string is a reason without the file name.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err("bad magic (not a checkpoint)".into());
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version} (expected {FORMAT_VERSION})"));
        }
        let header: Header = serde_json::from_str(&r.string()?).map_err(|e| format!("bad header: {e}"))?;
        header.model.validate().map_err(|e| e.to_string())?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or("tensor too large")?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(Param { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let ckpt = Checkpoint { model: header.model, training: header.training, tensors };
        ckpt.to_model::<f32>().map_err(|e| e.to_string())?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint { path: path.to_path_buf(), reason })
    }
}
