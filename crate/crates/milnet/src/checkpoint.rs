//! Binary checkpoints.
//!
//! Layout (all integers little-endian): `MILN`, u32 version, u64 length of
//! the UTF-8 config text, the text itself, then tensors until end of file.
//! Each tensor is a u32 name length, the name, u32 rank, `rank` u64 dims,
//! a u8 dtype tag (0 = f64) and the f64 payload. Adam moments are stored as
//! `adam.m.<param>` and `adam.v.<param>`; the optimizer step count is the
//! `step` entry of the config text.

use std::path::Path;

use milnet_core::model::ModelParams;
use milnet_core::optim::TrainState;
use milnet_core::Tensor;

use crate::config::{self, RunConfig};
use crate::error::{io, Error, Result};

pub const MAGIC: &[u8; 4] = b"MILN";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;
const MOMENT_M: &str = "adam.m.";
const MOMENT_V: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub state: TrainState,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(DTYPE_F64);
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = config::to_text(&self.run);
        text.push_str(&format!("step = {}\n", self.state.step));
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for (name, t) in self.state.params.iter() {
            put_tensor(&mut out, name, t);
        }
        for ((name, _), m) in self.state.params.iter().zip(&self.state.m) {
            put_tensor(&mut out, &format!("{MOMENT_M}{name}"), m);
        }
        for ((name, _), v) in self.state.params.iter().zip(&self.state.v) {
            put_tensor(&mut out, &format!("{MOMENT_V}{name}"), v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| "config text is not UTF-8")?;
        let mut pairs = config::parse_pairs(text).map_err(|e| e.to_string())?;
        let step_at = pairs.iter().position(|(_, k, _)| k == "step").ok_or("config text lacks `step`")?;
        let (_, _, step) = pairs.remove(step_at);
        let step: u64 = step.parse().map_err(|_| format!("bad step `{step}`"))?;
        let run = config::from_pairs(&pairs).map_err(|e| e.to_string())?;

        let mut params = Vec::new();
        let mut moments = Vec::new();
        while r.pos < bytes.len() {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?).map_err(|_| "tensor name is not UTF-8")?.to_owned();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            if r.take(1)?[0] != DTYPE_F64 {
                return Err(format!("tensor `{name}`: unsupported dtype"));
            }
            let count: usize = shape.iter().product();
            let data = r
                .take(count.checked_mul(8).ok_or("tensor too large")?)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| format!("tensor `{name}`: {e}"))?;
            if name.starts_with(MOMENT_M) || name.starts_with(MOMENT_V) {
                moments.push((name, t));
            } else {
                params.push((name, t));
            }
        }
        let mut moment = |prefix: &str, name: &str| {
            let key = format!("{prefix}{name}");
            let i = moments.iter().position(|(n, _)| *n == key).ok_or(format!("missing `{key}`"))?;
            Ok::<_, String>(moments.swap_remove(i).1)
        };
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (name, _) in &params {
            m.push(moment(MOMENT_M, name)?);
            v.push(moment(MOMENT_V, name)?);
        }
        if let Some((extra, _)) = moments.first() {
            return Err(format!("moment `{extra}` has no parameter"));
        }
        let params = ModelParams::from_named(params);
        params.check_against(&run.train.backbone).map_err(|e| e.to_string())?;
        Ok(Checkpoint {
            run,
            state: TrainState { params, m, v, step },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io(path))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::Format {
            path: path.into(),
            msg,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
