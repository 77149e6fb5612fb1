//! Checkpoint file format: a JSON metadata header followed by named,
//! shape-tagged little-endian f64 parameter blobs. Loading restores the
//! model bit-for-bit, so a saved model reproduces its forward outputs
//! exactly.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::CsgModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UCSGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable ChaCha state: seed, stream and word position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed_hex: String,
    pub stream: u64,
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> RngState {
        let seed = rng.get_seed();
        let pos = rng.get_word_pos();
        RngState {
            seed_hex: seed.iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        if self.seed_hex.len() != 64 {
            return Err(Error::Checkpoint("rng seed must be 32 bytes of hex".into()));
        }
        let mut seed = [0u8; 32];
        for (i, chunk) in self.seed_hex.as_bytes().chunks(2).enumerate() {
            let text = std::str::from_utf8(chunk).map_err(|_| {
                Error::Checkpoint("rng seed is not valid hex".into())
            })?;
            seed[i] = u8::from_str_radix(text, 16)
                .map_err(|_| Error::Checkpoint("rng seed is not valid hex".into()))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: Config,
    pub stage: u8,
    pub epoch: usize,
    pub alpha: f64,
    pub taus: Vec<f64>,
    pub rng: RngState,
    /// Std of the key-matrix initializer used for this model.
    pub k_init_std: f64,
}

pub fn save_checkpoint(path: &Path, model: &CsgModel, meta: &CheckpointMeta) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let meta_bytes = serde_json::to_vec(meta)?;
    out.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&meta_bytes)?;
    out.write_all(&(model.store.len() as u64).to_le_bytes())?;
    for p in model.store.iter() {
        let name = p.name.as_bytes();
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&[p.shape.len() as u8])?;
        for &d in &p.shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &p.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Truncated {
                path: self.path.into(),
                detail: format!("needed {n} bytes at offset {}", self.pos),
            });
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(CsgModel, CheckpointMeta)> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let display = path.display().to_string();
    let mut r = Reader {
        data: &data,
        pos: 0,
        path: &display,
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: display.clone(),
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta_len = r.u64()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;

    // Rebuild the model skeleton, then overwrite every parameter from the
    // blobs (matched by name, shapes verified).
    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    let mut model = CsgModel::new(
        &meta.config.model,
        meta.config.train.alpha_init,
        meta.config.train.tau_init,
        &mut scratch,
    )?;

    let count = r.u64()? as usize;
    if count != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} parameters, model expects {}",
            model.store.len()
        )));
    }
    let mut seen = 0usize;
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        let idx = model
            .store
            .index_of(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        let param = model.store.get_mut(idx);
        if param.shape != shape {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {shape:?}, model expects {:?}",
                param.shape
            )));
        }
        param.data = values;
        seen += 1;
    }
    if seen != model.store.len() {
        return Err(Error::Checkpoint("missing parameters in checkpoint".into()));
    }
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, SamplingConfig, TrainConfig};
    use crate::model::Mode;

    fn tiny_config() -> Config {
        Config {
            model: ModelConfig {
                dim: 2,
                resolution: 16,
                latent: 16,
                encoder_channels: vec![8, 12, 16],
                decoder_hidden: vec![16, 16],
                prims_per_kind: 2,
                layer_nodes: vec![1],
                leaky_slope: 0.01,
                k_init_std: 0.1,
            },
            train: TrainConfig::default(),
            sampling: SamplingConfig::default(),
        }
    }

    #[test]
    fn round_trip_reproduces_forward_bitwise() {
        let config = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let model = CsgModel::new(&config.model, 0.7, 1.5, &mut rng).unwrap();
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            config: config.clone(),
            stage: 2,
            epoch: 17,
            alpha: model.alpha(),
            taus: model.taus(),
            rng: RngState::capture(&rng),
            k_init_std: config.model.k_init_std,
        };
        let dir = std::env::temp_dir().join(format!("ucsg-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &model, &meta).unwrap();
        let (loaded, meta2) = load_checkpoint(&path).unwrap();
        assert_eq!(meta2.epoch, 17);
        assert_eq!(meta2.stage, 2);
        assert_eq!(meta2.alpha, model.alpha());

        let grid: Vec<f64> = (0..256).map(|i| (i % 5 == 0) as u8 as f64).collect();
        let points = crate::train::sample::grid_points(16, 2);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let a = model.forward_full(&grid, &points, Mode::Train, &mut r1).unwrap();
        let b = loaded.forward_full(&grid, &points, Mode::Train, &mut r2).unwrap();
        assert_eq!(a.occupancy, b.occupancy);

        // The restored rng continues identically.
        let mut c1 = meta.rng.restore().unwrap();
        let mut c2 = RngState::capture(&rng).restore().unwrap();
        assert_eq!(rand::Rng::gen::<u64>(&mut c1), rand::Rng::gen::<u64>(&mut c2));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_checkpoints_are_rejected() {
        let dir = std::env::temp_dir().join(format!("ucsg-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"NOTMAGIC rest").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadMagic { .. })));
        std::fs::write(&path, &CHECKPOINT_MAGIC[..]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Truncated { .. })));
        std::fs::remove_dir_all(&dir).ok();
    }
}
