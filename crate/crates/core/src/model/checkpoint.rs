//! `XFCKPT1` checkpoint container.
//!
//! ```text
//! magic        7 bytes "XFCKPT1"
//! config_len   u32 LE
//! config       config_len bytes of UTF-8 JSON (ModelConfig)
//! then, until end of file, one record per parameter in registration order:
//!   name_len   u16 LE
//!   name       UTF-8
//!   rank       u8
//!   extents    rank * u32 LE
//!   payload    prod(extents) * f64 LE, row-major
//! ```

use std::path::Path;

use super::{CrossFusion, ModelConfig};
use crate::error::{Error, Result};

pub const CKPT_MAGIC: &[u8; 7] = b"XFCKPT1";

impl CrossFusion {
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        let cfg = serde_json::to_vec(self.config())?;
        buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        buf.extend_from_slice(&cfg);
        for (_, name, t) in self.params().iter() {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len())
                .map_err(|_| Error::Contract(format!("parameter name too long: {name}")))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(nb);
            buf.push(t.rank() as u8);
            for &e in t.shape() {
                buf.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    /// Rebuilds the model from its config and overwrites every parameter with
    /// the stored values. Names and shapes must match the layout exactly.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(7)? != CKPT_MAGIC {
            return Err(Error::format(0, "bad checkpoint magic"));
        }
        let cfg_len = r.u32()? as usize;
        let cfg_at = r.pos;
        let cfg: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
            .map_err(|e| Error::format(cfg_at as u64, format!("config JSON: {e}")))?;
        let mut model = CrossFusion::new(cfg, 0)
            .map_err(|e| Error::format(cfg_at as u64, format!("stored config rejected: {e}")))?;
        let ids: Vec<_> = model.params().ids().collect();
        let mut next = 0;
        while r.pos < bytes.len() {
            let at = r.pos as u64;
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(at, "parameter name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let id = *ids
                .get(next)
                .ok_or_else(|| Error::format(at, format!("unexpected extra parameter {name}")))?;
            let (want_name, want) = (model.params().name(id), model.params().get(id).shape());
            if want_name != name || want != shape.as_slice() {
                return Err(Error::format(
                    at,
                    format!("expected parameter {want_name} {want:?}, found {name} {shape:?}"),
                ));
            }
            let n: usize = shape.iter().product();
            let data: Vec<f64> = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(at, format!("parameter {name} holds non-finite values")));
            }
            model.params_mut().set_data(id, &data)?;
            next += 1;
        }
        if next != ids.len() {
            return Err(Error::format(
                r.pos as u64,
                format!("checkpoint ends after {next} of {} parameters", ids.len()),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(Error::format(self.pos as u64, format!("truncated: need {n} bytes, {left} left")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
