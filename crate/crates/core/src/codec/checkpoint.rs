//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! b"SJCC"  u32 version  u32 flags
//! u32 patch_size  u32 channels  u32 n_patches  u32 hidden  u32 latent
//! f64 × params    we1 be1 we2 be2 me ce md cd wd2 bd2 wd1 bd1 (row-major)
//! if flags & 1:   u64 adam_step, f64 × params (first moment), f64 × params (second moment)
//! if flags & 2:   u8 mode, u32 K, f64 × K gains by rank
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::model::{CodecDims, CodecModel, CodecParams};
use super::train::Adam;
use crate::error::{Error, Result};
use crate::power::{AllocationMode, PowerAllocator};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SJCC";
pub const CHECKPOINT_VERSION: u32 = 1;

const FLAG_ADAM: u32 = 1;
const FLAG_ALLOC: u32 = 2;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: CodecModel,
    pub adam: Option<Adam>,
    pub allocator: Option<PowerAllocator>,
}

fn put_params(out: &mut Vec<u8>, p: &CodecParams) {
    for t in p.tensors() {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = &self.model.dims;
        let mut flags = 0;
        if self.adam.is_some() {
            flags |= FLAG_ADAM;
        }
        if self.allocator.is_some() {
            flags |= FLAG_ALLOC;
        }
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&flags.to_le_bytes());
        for v in [d.patch_size, d.channels, d.n_patches, d.hidden, d.latent] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        put_params(&mut out, &self.model.params);
        if let Some(a) = &self.adam {
            out.extend_from_slice(&a.step.to_le_bytes());
            put_params(&mut out, &a.m);
            put_params(&mut out, &a.v);
        }
        if let Some(a) = &self.allocator {
            out.push(match a.mode {
                AllocationMode::Uniform => 0,
                AllocationMode::Matched => 1,
                AllocationMode::Learned => 2,
            });
            out.extend_from_slice(&(a.gains_by_rank.len() as u32).to_le_bytes());
            for g in &a.gains_by_rank {
                out.extend_from_slice(&g.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Malformed(
                "not a codec checkpoint (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Malformed(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let flags = r.u32()?;
        if flags & !(FLAG_ADAM | FLAG_ALLOC) != 0 {
            return Err(Error::Malformed(format!(
                "unknown checkpoint flags {flags:#x}"
            )));
        }
        let mut dv = [0usize; 5];
        for v in &mut dv {
            *v = r.u32()? as usize;
        }
        let dims = CodecDims {
            patch_size: dv[0],
            channels: dv[1],
            n_patches: dv[2],
            hidden: dv[3],
            latent: dv[4],
        };
        dims.validate()?;
        let params = r.params(&dims)?;
        let adam = if flags & FLAG_ADAM != 0 {
            let step = r.u64()?;
            let mut a = Adam::new(&dims);
            a.step = step;
            a.m = r.params(&dims)?;
            a.v = r.params(&dims)?;
            Some(a)
        } else {
            None
        };
        let allocator = if flags & FLAG_ALLOC != 0 {
            let mode = match r.take(1)?[0] {
                0 => AllocationMode::Uniform,
                1 => AllocationMode::Matched,
                2 => AllocationMode::Learned,
                m => return Err(Error::Malformed(format!("unknown allocation mode {m}"))),
            };
            let k = r.u32()? as usize;
            if k > 1 << 16 {
                return Err(Error::Malformed(format!(
                    "implausible subcarrier count {k}"
                )));
            }
            let mut gains = Vec::with_capacity(k);
            for _ in 0..k {
                gains.push(r.f64()?);
            }
            let a = PowerAllocator {
                gains_by_rank: gains,
                mode,
            };
            a.validate()?;
            Some(a)
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            model: CodecModel { dims, params },
            adam,
            allocator,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Malformed("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn params(&mut self, dims: &CodecDims) -> Result<CodecParams> {
        let mut p = CodecParams::zeros(dims);
        let need = p.len() * 8;
        if self.buf.len() - self.pos < need {
            return Err(Error::Malformed(
                "checkpoint truncated in parameters".into(),
            ));
        }
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = self.f64()?;
            }
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CodecModel {
        let dims = CodecDims {
            patch_size: 4,
            channels: 1,
            n_patches: 4,
            hidden: 6,
            latent: 4,
        };
        CodecModel::new(dims, 5).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let model = small();
        let mut adam = Adam::new(&model.dims);
        adam.step = 17;
        adam.m.we1.fill(0.25);
        let ck = Checkpoint {
            model,
            adam: Some(adam),
            allocator: Some(PowerAllocator::uniform(55)),
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model.params, ck.model.params);
        assert_eq!(back.adam.as_ref().unwrap().step, 17);
        assert_eq!(back.adam.as_ref().unwrap().m, ck.adam.as_ref().unwrap().m);
        assert_eq!(back.allocator, ck.allocator);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = Checkpoint {
            model: small(),
            adam: None,
            allocator: None,
        }
        .to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
