//! Binary network checkpoints.
//!
//! Layout (little-endian): magic `STXPNCK\0`, `u32` version, architecture
//! (`u32` input width, `u32` extractor count + widths, `u32` head count +
//! widths, `u32` tap), training echo (`u64` seed, `f64` learning rate,
//! `u32` batch size, `u32` epochs), `u64` ADAM step, `u64` epoch, `u64`
//! parameter count, then `f64` arrays: input shift, input scale, weights,
//! first moments, second moments. Weights follow the canonical order of
//! [`Network::tensors`](crate::pointnet::Network::tensors).

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array1;

use crate::error::{Error, Result};
use crate::pointnet::{AdamState, ArchitectureSpec, ModelState, Network};

pub const MAGIC: &[u8; 8] = b"STXPNCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainEcho {
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCheckpoint {
    pub version: u32,
    pub arch: ArchitectureSpec,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
    pub epoch: u64,
    pub echo: TrainEcho,
}

impl NetworkCheckpoint {
    pub fn from_model(model: &ModelState, moments: &AdamState, epoch: u64, echo: TrainEcho) -> Self {
        NetworkCheckpoint {
            version: CHECKPOINT_VERSION,
            arch: model.arch.clone(),
            input_shift: model.input_shift.to_vec(),
            input_scale: model.input_scale.to_vec(),
            weights: model.flat_params(),
            adam_m: moments.m.clone(),
            adam_v: moments.v.clone(),
            step: moments.step,
            epoch,
            echo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        self.arch.validate()?;
        let n = self.arch.param_count();
        let w = self.arch.input_width;
        if self.weights.len() != n || self.adam_m.len() != n || self.adam_v.len() != n {
            return Err(Error::Checkpoint(format!(
                "parameter arrays do not match architecture ({n} expected)"
            )));
        }
        if self.input_shift.len() != w || self.input_scale.len() != w {
            return Err(Error::Checkpoint("input standardization width mismatch".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelState> {
        self.validate()?;
        let mut net = Network::zeros(&self.arch);
        net.set_flat_params(&self.weights)?;
        net.input_shift = Array1::from(self.input_shift.clone());
        net.input_scale = Array1::from(self.input_scale.clone());
        Ok(net)
    }

    /// Load weights into an existing model of the same architecture.
    pub fn load_into(&self, model: &mut ModelState) -> Result<()> {
        if model.arch != self.arch {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint {:?}, model {:?}",
                self.arch, model.arch
            )));
        }
        *model = self.model()?;
        Ok(())
    }

    pub fn moments(&self) -> AdamState {
        AdamState {
            m: self.adam_m.clone(),
            v: self.adam_v.clone(),
            step: self.step,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 24 * self.weights.len());
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_u32::<LE>(self.version)?;
        out.write_u32::<LE>(self.arch.input_width as u32)?;
        for widths in [&self.arch.extractor, &self.arch.head] {
            out.write_u32::<LE>(widths.len() as u32)?;
            for &w in widths {
                out.write_u32::<LE>(w as u32)?;
            }
        }
        out.write_u32::<LE>(self.arch.tap as u32)?;
        out.write_u64::<LE>(self.echo.seed)?;
        out.write_f64::<LE>(self.echo.learning_rate)?;
        out.write_u32::<LE>(self.echo.batch_size)?;
        out.write_u32::<LE>(self.echo.epochs)?;
        out.write_u64::<LE>(self.step)?;
        out.write_u64::<LE>(self.epoch)?;
        out.write_u64::<LE>(self.weights.len() as u64)?;
        for arr in [&self.input_shift, &self.input_scale, &self.weights, &self.adam_m, &self.adam_v] {
            for &v in arr.iter() {
                out.write_f64::<LE>(v)?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let trunc = |_| Error::Checkpoint("truncated checkpoint".into());
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(trunc)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic header".into()));
        }
        let version = cur.read_u32::<LE>().map_err(trunc)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let input_width = cur.read_u32::<LE>().map_err(trunc)? as usize;
        let read_widths = |cur: &mut Cursor<&[u8]>| -> Result<Vec<usize>> {
            let n = cur.read_u32::<LE>().map_err(trunc)? as usize;
            if n > 1024 {
                return Err(Error::Checkpoint(format!("implausible layer count {n}")));
            }
            (0..n)
                .map(|_| cur.read_u32::<LE>().map(|w| w as usize).map_err(trunc))
                .collect()
        };
        let extractor = read_widths(&mut cur)?;
        let head = read_widths(&mut cur)?;
        let tap = cur.read_u32::<LE>().map_err(trunc)? as usize;
        let arch = ArchitectureSpec::new(input_width, extractor, head, tap)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let echo = TrainEcho {
            seed: cur.read_u64::<LE>().map_err(trunc)?,
            learning_rate: cur.read_f64::<LE>().map_err(trunc)?,
            batch_size: cur.read_u32::<LE>().map_err(trunc)?,
            epochs: cur.read_u32::<LE>().map_err(trunc)?,
        };
        let step = cur.read_u64::<LE>().map_err(trunc)?;
        let epoch = cur.read_u64::<LE>().map_err(trunc)?;
        let n = cur.read_u64::<LE>().map_err(trunc)? as usize;
        if n != arch.param_count() {
            return Err(Error::Checkpoint(format!(
                "length field {n} does not match architecture ({} parameters)",
                arch.param_count()
            )));
        }
        let expected_rest = 8 * (2 * input_width + 3 * n);
        let rest = bytes.len() - cur.position() as usize;
        if rest != expected_rest {
            return Err(Error::Checkpoint(format!(
                "payload has {rest} bytes, expected {expected_rest}"
            )));
        }
        let mut read_arr = |len: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; len];
            cur.read_f64_into::<LE>(&mut v).map_err(trunc)?;
            Ok(v)
        };
        let input_shift = read_arr(input_width)?;
        let input_scale = read_arr(input_width)?;
        let weights = read_arr(n)?;
        let adam_m = read_arr(n)?;
        let adam_v = read_arr(n)?;
        let ckpt = NetworkCheckpoint {
            version,
            arch,
            input_shift,
            input_scale,
            weights,
            adam_m,
            adam_v,
            step,
            epoch,
            echo,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &NetworkCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    NetworkCheckpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetworkCheckpoint {
        let arch = ArchitectureSpec::new(10, vec![4, 8], vec![8, 2], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Network::init(&arch, &mut rng).unwrap();
        let mut moments = AdamState::new(arch.param_count());
        moments.m[3] = 0.25;
        moments.v[7] = 1e-300;
        NetworkCheckpoint::from_model(
            &model,
            &moments,
            2,
            TrainEcho {
                seed: 4,
                learning_rate: 3e-3,
                batch_size: 32,
                epochs: 5,
            },
        )
    }

    #[test]
    fn bit_exact_round_trip() {
        let c = small();
        let back = NetworkCheckpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn corrupted_length_field() {
        let c = small();
        let mut bytes = c.to_bytes();
        // Parameter count sits right before the f64 payload.
        let pos = bytes.len() - 8 * (2 * 10 + 3 * c.weights.len()) - 8;
        bytes[pos] ^= 0x01;
        assert!(matches!(NetworkCheckpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncated_file() {
        let bytes = small().to_bytes();
        for cut in [4, 30, bytes.len() - 1] {
            assert!(NetworkCheckpoint::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn architecture_mismatch_on_load_into() {
        let c = small();
        let other = ArchitectureSpec::new(10, vec![4, 9], vec![8, 2], 0).unwrap();
        let mut model = Network::zeros(&other);
        assert!(matches!(c.load_into(&mut model), Err(Error::Checkpoint(_))));
    }
}
