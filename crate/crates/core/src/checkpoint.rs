//! Versioned flat binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "BXPSHCKP" | version u32 | actor layers u32 | critic layers u32 | flags u32
//! tensors: rank u32, dims u64 × rank, row-major f64 data
//! ```
//!
//! Tensor order: actor `(W, b)` per layer, log-std, critic `(W, b)` per
//! layer, then (flag bit 0) normalizer count, mean, m2, and finally the
//! metadata vector.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::policy::{ActorCritic, Dense, Mlp};
use crate::ppo::RunningNormalizer;

pub const MAGIC: &[u8; 8] = b"BXPSHCKP";
pub const VERSION: u32 = 1;
const FLAG_NORMALIZER: u32 = 1;
const META_LEN: usize = 5;

/// Training position and the evaluation measured when the file was written.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CheckpointMeta {
    pub iteration: u64,
    pub env_interactions: u64,
    pub eval_episodes: u64,
    pub eval_success: f64,
    pub eval_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub ac: ActorCritic,
    pub normalizer: Option<RunningNormalizer>,
    pub meta: CheckpointMeta,
}

fn put_tensor(out: &mut Vec<u8>, dims: &[usize], data: &[f64]) {
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_mlp(out: &mut Vec<u8>, m: &Mlp) {
    for l in &m.layers {
        let w = l.w.as_standard_layout();
        put_tensor(out, &[l.n_in(), l.n_out()], w.as_slice().unwrap());
        put_tensor(out, &[l.n_out()], l.b.as_slice().unwrap());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.ac.actor.layers.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.ac.critic.layers.len() as u32).to_le_bytes());
        let flags = if self.normalizer.is_some() { FLAG_NORMALIZER } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        put_mlp(&mut out, &self.ac.actor);
        put_tensor(&mut out, &[self.ac.log_std.len()], self.ac.log_std.as_slice().unwrap());
        put_mlp(&mut out, &self.ac.critic);
        if let Some(n) = &self.normalizer {
            put_tensor(&mut out, &[], &[n.count as f64]);
            put_tensor(&mut out, &[n.dim()], &n.mean);
            put_tensor(&mut out, &[n.dim()], &n.m2);
        }
        let m = &self.meta;
        put_tensor(
            &mut out,
            &[META_LEN],
            &[
                m.iteration as f64,
                m.env_interactions as f64,
                m.eval_episodes as f64,
                m.eval_success,
                m.eval_return,
            ],
        );
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_actor = r.u32()? as usize;
        let n_critic = r.u32()? as usize;
        let flags = r.u32()?;
        let actor = r.mlp(n_actor)?;
        let (dims, log_std) = r.tensor()?;
        if dims != [actor.out_dim()] {
            return Err(Error::Checkpoint("log_std shape".into()));
        }
        let critic = r.mlp(n_critic)?;
        if critic.in_dim() != actor.in_dim() || critic.out_dim() != 1 {
            return Err(Error::Checkpoint("critic shape".into()));
        }
        let normalizer = if flags & FLAG_NORMALIZER != 0 {
            let (_, count) = r.tensor()?;
            let (_, mean) = r.tensor()?;
            let (_, m2) = r.tensor()?;
            if count.len() != 1 || mean.len() != actor.in_dim() || m2.len() != mean.len() {
                return Err(Error::Checkpoint("normalizer shape".into()));
            }
            Some(RunningNormalizer {
                count: count[0] as u64,
                mean,
                m2,
            })
        } else {
            None
        };
        let (_, meta) = r.tensor()?;
        if meta.len() != META_LEN {
            return Err(Error::Checkpoint("metadata shape".into()));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            ac: ActorCritic {
                actor,
                log_std: Array1::from(log_std),
                critic,
            },
            normalizer,
            meta: CheckpointMeta {
                iteration: meta[0] as u64,
                env_interactions: meta[1] as u64,
                eval_episodes: meta[2] as u64,
                eval_success: meta[3],
                eval_return: meta[4],
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
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

    fn tensor(&mut self) -> Result<(Vec<usize>, Vec<f64>)> {
        let rank = self.u32()? as usize;
        if rank > 2 {
            return Err(Error::Checkpoint(format!("unexpected tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u64()? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((dims, data))
    }

    fn mlp(&mut self, layers: usize) -> Result<Mlp> {
        let mut out = Vec::with_capacity(layers);
        for _ in 0..layers {
            let (wd, w) = self.tensor()?;
            let (bd, b) = self.tensor()?;
            if wd.len() != 2 || bd != [wd[1]] {
                return Err(Error::Checkpoint("layer shape".into()));
            }
            out.push(Dense {
                w: Array2::from_shape_vec((wd[0], wd[1]), w).expect("checked shape"),
                b: Array1::from(b),
            });
        }
        Mlp::from_layers(out).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::RngStream;

    fn sample() -> Checkpoint {
        let mut rng = RngStream::new(3, 0);
        let ac = ActorCritic::new(5, 3, &[8, 4], &[6], 0.7, &mut rng);
        let mut n = RunningNormalizer::new(5);
        n.update(&(0..25).map(|i| i as f64 * 0.1).collect::<Vec<_>>()).unwrap();
        Checkpoint {
            ac,
            normalizer: Some(n),
            meta: CheckpointMeta {
                iteration: 12,
                env_interactions: 123_456,
                eval_episodes: 1000,
                eval_success: 0.25,
                eval_return: -81.5,
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
        let plain = Checkpoint { normalizer: None, ..c };
        assert_eq!(Checkpoint::from_bytes(&plain.to_bytes()).unwrap(), plain);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(Checkpoint::from_bytes(&v2).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("policy.ckpt");
        let c = sample();
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
    }
}
