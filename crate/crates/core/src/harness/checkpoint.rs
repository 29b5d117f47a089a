//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"REDCKPT1"
//! u64 len, config TOML bytes
//! u64 episode, u64 seed
//! groups: u32 count, then per group: u32 name len, name, u32 ndim,
//!         u64 dims..., f64 values...
//! u64 optimizer steps
//! u8 has_velocity [groups], u8 has_second_moment [groups]
//! ```
//!
//! Random streams are derived from `(seed, episode, rollout)`, so the pair
//! stored here is the whole generator state.

use std::fs;
use std::path::Path;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::policy::{ModelParams, Optimizer};

pub const MAGIC: &[u8; 8] = b"REDCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Episodes completed.
    pub episode: u64,
    pub seed: u64,
    pub params: ModelParams,
    pub optimizer_steps: u64,
    pub velocity: Option<ModelParams>,
    pub second_moment: Option<ModelParams>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(config: RunConfig, episode: u64, params: ModelParams, opt: &Optimizer) -> Self {
        Self {
            seed: config.seed,
            config,
            episode,
            params,
            optimizer_steps: opt.steps(),
            velocity: opt.velocity().cloned(),
            second_moment: opt.second_moment().cloned(),
        }
    }

    /// Rebuilds the optimizer with its saved state.
    pub fn optimizer(&self) -> Result<Optimizer> {
        let mut opt = Optimizer::new(self.config.optimizer())?;
        opt.restore(self.velocity.clone(), self.second_moment.clone(), self.optimizer_steps);
        Ok(opt)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let cfg = self.config.to_toml();
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&self.episode.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        write_groups(&mut out, &self.params);
        out.extend_from_slice(&self.optimizer_steps.to_le_bytes());
        for extra in [&self.velocity, &self.second_moment] {
            match extra {
                Some(p) => {
                    out.push(1);
                    write_groups(&mut out, p);
                }
                None => out.push(0),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| bad("config is not UTF-8"))?;
        let config = RunConfig::from_toml(text)?;
        let episode = r.u64()?;
        let seed = r.u64()?;
        let model = config.model()?;
        let params = read_groups(&mut r)?;
        params.check_shapes(&model)?;
        let optimizer_steps = r.u64()?;
        let mut extras = [None, None];
        for slot in &mut extras {
            match r.take(1)?[0] {
                0 => {}
                1 => {
                    let p = read_groups(&mut r)?;
                    p.check_shapes(&model)?;
                    *slot = Some(p);
                }
                f => return Err(bad(format!("bad optimizer flag {f}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let [velocity, second_moment] = extras;
        Ok(Self {
            config,
            episode,
            seed,
            params,
            optimizer_steps,
            velocity,
            second_moment,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => bad(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}

fn write_groups(out: &mut Vec<u8>, p: &ModelParams) {
    let groups = p.groups();
    out.extend_from_slice(&(groups.len() as u32).to_le_bytes());
    for (name, t) in groups {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_groups(r: &mut Reader) -> Result<ModelParams> {
    let n = r.u32()? as usize;
    let mut groups = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| bad("group name is not UTF-8"))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad("group size overflows"))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| bad("group size overflows"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        groups.push((name, Tensor::new(shape, data)?));
    }
    ModelParams::from_groups(groups)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
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
    use crate::policy::{OptimizerKind, OptimizerConfig};
    use crate::seeding::{stream, Domain};

    fn sample(kind: OptimizerKind) -> Checkpoint {
        let config = RunConfig {
            glimpse_sizes: vec![4, 8],
            state_channels: 2,
            horizon: 4,
            k: 2,
            t0: 1,
            optimizer: kind,
            momentum: 0.5,
            seed: 42,
            ..Default::default()
        };
        let model = config.model().unwrap();
        let params = ModelParams::init(&model, &mut stream(1, Domain::Init, 0, 0));
        let grads = ModelParams::init(&model, &mut stream(2, Domain::Init, 0, 0));
        let mut p2 = params.clone();
        let mut opt = Optimizer::new(OptimizerConfig { kind, ..config.optimizer() }).unwrap();
        opt.step(&mut p2, &grads).unwrap();
        Checkpoint::new(config, 17, p2, &opt)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let c = sample(kind);
            let a = dir.path().join("a.ckpt");
            let b = dir.path().join("b.ckpt");
            c.save(&a).unwrap();
            let loaded = Checkpoint::load(&a).unwrap();
            assert_eq!(loaded, c);
            loaded.save(&b).unwrap();
            assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
            assert_eq!(loaded.optimizer().unwrap().steps(), 1);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample(OptimizerKind::Sgd).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        let err = Checkpoint::from_bytes(&magic).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn parameters_must_fit_the_stored_config() {
        let mut c = sample(OptimizerKind::Sgd);
        c.config.state_channels = 3;
        assert!(Checkpoint::from_bytes(&c.to_bytes()).is_err());
    }
}
