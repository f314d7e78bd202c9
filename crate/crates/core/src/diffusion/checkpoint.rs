use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpConfig, TIME_FEATURES};
use super::schedule::NoiseSchedule;
use crate::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DGIDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Per-dimension affine map between designs and the model's coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Smallest scale kept for dimensions that never vary in the data.
    pub const MIN_SCALE: f64 = 1e-6;

    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Mean and standard deviation of the rows of `x`.
    pub fn fit(x: &[f64], dim: usize) -> Result<Self, Error> {
        if dim == 0 || x.is_empty() || x.len() % dim != 0 {
            return Err(Error::EmptyDataset);
        }
        let n = (x.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for row in x.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for row in x.chunks(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.into_iter().map(|v| v.sqrt().max(Self::MIN_SCALE)).collect();
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Design rows to model coordinates.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        x.iter().enumerate().map(|(i, v)| (v - self.mean[i % d]) / self.scale[i % d]).collect()
    }

    /// Model coordinates back to design rows.
    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim();
        z.iter().enumerate().map(|(i, v)| self.mean[i % d] + self.scale[i % d] * v).collect()
    }
}

/// Trained denoiser with everything needed to sample designs from it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: Mlp,
    pub schedule: NoiseSchedule,
    pub standardizer: Standardizer,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: MlpConfig,
    time_features: usize,
    schedule: NoiseSchedule,
    standardizer: Standardizer,
    conditional: bool,
    block_sizes: Vec<usize>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, Error> {
        let header = Header {
            architecture: self.net.config,
            time_features: TIME_FEATURES,
            schedule: self.schedule,
            standardizer: self.standardizer.clone(),
            conditional: self.net.config.conditional,
            block_sizes: self.net.config.block_sizes(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.net.parameter_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.net.parameter_count() as u64).to_le_bytes());
        for v in self.net.params.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a denoiser checkpoint"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let header_len = read_u32(&mut r)? as usize;
        if r.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&r[..header_len]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        r = &r[header_len..];
        if header.time_features != TIME_FEATURES || header.block_sizes != header.architecture.block_sizes() {
            return Err(bad("header does not describe this architecture"));
        }
        let mut count = [0u8; 8];
        r.read_exact(&mut count).map_err(|_| bad("truncated parameter count"))?;
        let count = u64::from_le_bytes(count) as usize;
        if count != header.block_sizes.iter().sum::<usize>() || r.len() != 8 * count {
            return Err(bad("parameter block has the wrong length"));
        }
        let flat: Vec<f64> = r.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut params = Vec::with_capacity(header.block_sizes.len());
        let mut off = 0;
        for n in &header.block_sizes {
            params.push(flat[off..off + n].to_vec());
            off += n;
        }
        if header.standardizer.dim() != header.architecture.dim {
            return Err(bad("standardizer width differs from the design dimension"));
        }
        Ok(Self {
            net: Mlp::from_params(header.architecture, params)?,
            schedule: header.schedule,
            standardizer: header.standardizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32, Error> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}
