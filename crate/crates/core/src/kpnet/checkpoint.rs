//! `SKPN` checkpoint files.
//!
//! Layout, little-endian:
//!
//! ```text
//! "SKPN" | u32 version
//! config: u32 levels | u32 base_channels | u32 kernel_size | u32 image_channels | u64 seed
//! meta:   u32 epoch | u32 n | n x f32 loss history
//! names:  u32 count | count x (u32 len | utf-8 name | u32 ndim | ndim x u32 extent)
//! params: u32 total | total x f32
//! ```

use std::fs;
use std::path::Path;

use super::{KPNet, KPNetConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SKPN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training metadata stored alongside the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingMeta {
    pub epoch: u32,
    pub loss_history: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: KPNet,
    pub meta: TrainingMeta,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::corrupt("checkpoint", format!("truncated at byte {}", self.pos)));
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

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::corrupt("checkpoint", "length overflow"))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let net = &self.net;
        let cfg = net.config();
        let mut buf = Vec::with_capacity(64 + 4 * net.num_params());
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, CHECKPOINT_VERSION);
        for v in [cfg.levels, cfg.base_channels, cfg.kernel_size, cfg.image_channels] {
            put_u32(&mut buf, v as u32);
        }
        buf.extend_from_slice(&net.seed().to_le_bytes());
        put_u32(&mut buf, self.meta.epoch);
        put_u32(&mut buf, self.meta.loss_history.len() as u32);
        for v in &self.meta.loss_history {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut buf, net.param_specs().len() as u32);
        for spec in net.param_specs() {
            put_u32(&mut buf, spec.name.len() as u32);
            buf.extend_from_slice(spec.name.as_bytes());
            put_u32(&mut buf, spec.shape.len() as u32);
            for &e in &spec.shape {
                put_u32(&mut buf, e as u32);
            }
        }
        put_u32(&mut buf, net.num_params() as u32);
        for v in net.params() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::corrupt("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let config = KPNetConfig {
            levels: r.u32()? as usize,
            base_channels: r.u32()? as usize,
            kernel_size: r.u32()? as usize,
            image_channels: r.u32()? as usize,
        };
        config
            .validate()
            .map_err(|e| Error::corrupt("checkpoint", format!("stored config invalid: {e}")))?;
        let seed = r.u64()?;
        let epoch = r.u32()?;
        let n_loss = r.u32()? as usize;
        let loss_history = r.f32s(n_loss)?;

        let expected = KPNet::<f32>::init(config.clone(), 0)?;
        let count = r.u32()? as usize;
        if count != expected.param_specs().len() {
            return Err(Error::corrupt(
                "checkpoint",
                format!(
                    "manifest has {count} entries, config implies {}",
                    expected.param_specs().len()
                ),
            ));
        }
        for spec in expected.param_specs() {
            let len = r.u32()? as usize;
            let name = r.take(len)?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            if name != spec.name.as_bytes() || shape != spec.shape {
                return Err(Error::corrupt(
                    "checkpoint",
                    format!(
                        "manifest entry {:?} does not match layout",
                        String::from_utf8_lossy(name)
                    ),
                ));
            }
        }
        let total = r.u32()? as usize;
        if total != expected.num_params() {
            return Err(Error::corrupt("checkpoint", "parameter count mismatch"));
        }
        let params = r.f32s(total)?;
        if r.pos != bytes.len() {
            return Err(Error::corrupt("checkpoint", "trailing bytes"));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::corrupt("checkpoint", "non-finite parameter"));
        }
        Ok(Self {
            net: KPNet::from_params(config, seed, params)?,
            meta: TrainingMeta { epoch, loss_history },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    /// Loads a checkpoint and insists on the given architecture.
    pub fn load_expecting(path: impl AsRef<Path>, config: &KPNetConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.net.config() != config {
            return Err(Error::ConfigMismatch(format!(
                "file holds {:?}, expected {:?}",
                ck.net.config(),
                config
            )));
        }
        Ok(ck)
    }
}

impl KPNet<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint {
            net: self.clone(),
            meta: TrainingMeta::default(),
        }
        .save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Checkpoint::load(path)?.net)
    }
}
