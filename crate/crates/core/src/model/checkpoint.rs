//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "BONCKPT\0"
//! version  u32
//! header   u64 vocab, d_model, hidden, max_len, max_len_diff, seed, step
//!          u8  schedule
//! blocks   u32 count, then per block:
//!          u32 name length, name bytes, u32 rows, u32 cols, rows*cols f64
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::nat::{LengthPredictor, ModelDims, NatModel};
use crate::model::train::Schedule;

pub const MAGIC: &[u8; 8] = b"BONCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dims: ModelDims,
    pub seed: u64,
    /// Optimizer steps taken over the model's whole history.
    pub step: u64,
    /// Schedule that produced the parameters.
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: NatModel,
    pub length: LengthPredictor,
}

impl Checkpoint {
    pub fn new(
        model: NatModel,
        length: LengthPredictor,
        seed: u64,
        step: u64,
        schedule: Schedule,
    ) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                version: FORMAT_VERSION,
                dims: *model.dims(),
                seed,
                step,
                schedule,
            },
            model,
            length,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [
            h.dims.vocab as u64,
            h.dims.d_model as u64,
            h.dims.hidden as u64,
            h.dims.max_len as u64,
            h.dims.max_len_diff as u64,
            h.seed,
            h.step,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(h.schedule.code());

        let blocks: Vec<(&str, &Matrix)> = self
            .model
            .params()
            .into_iter()
            .chain(self.length.params())
            .collect();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for (name, m) in blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mut fields = [0u64; 7];
        for f in &mut fields {
            *f = r.u64()?;
        }
        let dims = ModelDims {
            vocab: fields[0] as usize,
            d_model: fields[1] as usize,
            hidden: fields[2] as usize,
            max_len: fields[3] as usize,
            max_len_diff: fields[4] as usize,
        };
        dims.validate()?;
        let schedule = Schedule::from_code(r.take(1)?[0])
            .ok_or_else(|| Error::format("checkpoint", "unknown schedule code"))?;

        let mut model = NatModel::zeros(dims);
        let mut length = LengthPredictor::zeros(&dims);
        let count = r.u32()? as usize;
        let expected = NatModel::PARAM_NAMES.len() + LengthPredictor::PARAM_NAMES.len();
        if count != expected {
            return Err(Error::format(
                "checkpoint",
                format!("expected {expected} parameter blocks, found {count}"),
            ));
        }
        {
            let mut slots: Vec<(&str, &mut Matrix)> = model
                .params_mut()
                .into_iter()
                .chain(length.params_mut())
                .collect();
            for (want, slot) in slots.iter_mut() {
                let name_len = r.u32()? as usize;
                let name = std::str::from_utf8(r.take(name_len)?)
                    .map_err(|_| Error::format("checkpoint", "block name is not UTF-8"))?;
                if name != *want {
                    return Err(Error::format(
                        "checkpoint",
                        format!("expected block '{want}', found '{name}'"),
                    ));
                }
                let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
                if (rows, cols) != (slot.rows(), slot.cols()) {
                    return Err(Error::format(
                        "checkpoint",
                        format!("block '{name}' has shape {rows}x{cols}"),
                    ));
                }
                for x in slot.as_mut_slice() {
                    *x = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Checkpoint {
            header: CheckpointHeader {
                version,
                dims,
                seed: fields[5],
                step: fields[6],
                schedule,
            },
            model,
            length,
        })
    }

    /// Writes to a temporary sibling and renames it over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
        tmp_name.push(".tmp");
        let tmp = path.with_file_name(tmp_name);
        {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(&self.to_bytes())?;
            file.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checkpoint() -> Checkpoint {
        let dims = ModelDims {
            vocab: 7,
            d_model: 4,
            hidden: 5,
            max_len: 9,
            max_len_diff: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = NatModel::init(dims, &mut rng).unwrap();
        let length = LengthPredictor::init(&dims, &mut rng);
        Checkpoint::new(model, length, 4, 17, Schedule::BonJoint)
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = checkpoint();
        ckpt.save(&path).unwrap();
        assert!(!dir.path().join("model.ckpt.tmp").exists());
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn rejects_unknown_version() {
        let mut bytes = checkpoint().to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::UnsupportedVersion(7))
        ));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = checkpoint().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
