//! Binary checkpoints of network parameters and, optionally, Adam state.
//!
//! All integers and floats are little-endian:
//!
//! | field            | type                 |
//! |------------------|----------------------|
//! | magic            | 8 bytes `BLPINNCK`   |
//! | version          | u32 (= 1)            |
//! | input_dim        | u32                  |
//! | hidden_layers    | u32                  |
//! | hidden_width     | u32                  |
//! | seed             | u64                  |
//! | encoding tag     | u8: 0 spatial, 1 log-k, 2 raw-k |
//! | k_min, k_max     | f64, f64 (0 unless log-k) |
//! | n                | u64 parameter count  |
//! | params           | n × f64, layout order |
//! | has_optimizer    | u8 (0 or 1)          |
//! | adam t           | u64 (if present)     |
//! | adam m, v        | n × f64 each (if present) |

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::network::{InputEncoding, NetworkError, NetworkParams, NetworkShape};
use crate::training::{AdamState, TrainState};

pub const MAGIC: &[u8; 8] = b"BLPINNCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub encoding: InputEncoding,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, encoding: InputEncoding) -> Self {
        Self {
            params: state.params.clone(),
            encoding,
            adam: Some(state.adam.clone()),
        }
    }

    /// Parameters and optimizer state to resume from; a missing optimizer
    /// section restarts Adam from zero moments.
    pub fn into_state(self) -> TrainState {
        let n = self.params.len();
        TrainState {
            adam: self.adam.unwrap_or_else(|| AdamState::new(n)),
            params: self.params,
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let shape = self.params.shape();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for dim in [shape.input_dim, shape.hidden_layers, shape.hidden_width] {
            let dim = u32::try_from(dim).map_err(|_| CheckpointError::Corrupt(format!("dimension {dim} too large")))?;
            w.write_all(&dim.to_le_bytes())?;
        }
        w.write_all(&self.params.seed.to_le_bytes())?;
        let (tag, lo, hi) = match self.encoding {
            InputEncoding::Spatial => (0u8, 0.0, 0.0),
            InputEncoding::LogK { k_min, k_max } => (1, k_min, k_max),
            InputEncoding::RawK => (2, 0.0, 0.0),
        };
        w.write_all(&[tag])?;
        w.write_all(&f64::to_le_bytes(lo))?;
        w.write_all(&f64::to_le_bytes(hi))?;
        w.write_all(&(self.params.values.len() as u64).to_le_bytes())?;
        write_f64s(&mut w, &self.params.values)?;
        match &self.adam {
            None => w.write_all(&[0])?,
            Some(adam) => {
                w.write_all(&[1])?;
                w.write_all(&adam.t.to_le_bytes())?;
                write_f64s(&mut w, &adam.m)?;
                write_f64s(&mut w, &adam.v)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let shape = NetworkShape {
            input_dim: read_u32(&mut r)? as usize,
            hidden_layers: read_u32(&mut r)? as usize,
            hidden_width: read_u32(&mut r)? as usize,
        };
        shape.validate()?;
        let seed = read_u64(&mut r)?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let (lo, hi) = (read_f64(&mut r)?, read_f64(&mut r)?);
        let encoding = match tag[0] {
            0 => InputEncoding::Spatial,
            1 => InputEncoding::LogK { k_min: lo, k_max: hi },
            2 => InputEncoding::RawK,
            t => return Err(CheckpointError::Corrupt(format!("unknown encoding tag {t}"))),
        };
        if encoding.input_dim() != shape.input_dim {
            return Err(CheckpointError::Corrupt(format!(
                "encoding needs {} inputs, shape has {}",
                encoding.input_dim(),
                shape.input_dim
            )));
        }
        let n = read_u64(&mut r)? as usize;
        if n != shape.param_count() {
            return Err(CheckpointError::Corrupt(format!(
                "{n} parameters stored, shape needs {}",
                shape.param_count()
            )));
        }
        let values = read_f64s(&mut r, n)?;
        let params = NetworkParams::from_values(shape, seed, values)?;
        r.read_exact(&mut tag)?;
        let adam = match tag[0] {
            0 => None,
            1 => {
                let t = read_u64(&mut r)?;
                let m = read_f64s(&mut r, n)?;
                let v = read_f64s(&mut r, n)?;
                Some(AdamState { m, v, t })
            }
            t => return Err(CheckpointError::Corrupt(format!("bad optimizer flag {t}"))),
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        Ok(Self {
            params,
            encoding,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read(std::fs::read(path)?.as_slice())
    }
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&bytes)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, CheckpointError> {
    let mut bytes = vec![0u8; n.checked_mul(8).ok_or_else(|| CheckpointError::Corrupt("length overflow".into()))?];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(with_adam: bool) -> Checkpoint {
        let params = NetworkParams::init(NetworkShape::standard(3), 7).unwrap();
        let n = params.len();
        Checkpoint {
            params,
            encoding: InputEncoding::LogK { k_min: 1e-4, k_max: 1.0 },
            adam: with_adam.then(|| AdamState {
                m: (0..n).map(|i| i as f64 * 1e-3).collect(),
                v: (0..n).map(|i| (i as f64).sqrt()).collect(),
                t: 42,
            }),
        }
    }

    #[test]
    fn round_trip_with_and_without_optimizer() {
        for with_adam in [false, true] {
            let c = sample(with_adam);
            let mut buf = Vec::new();
            c.write(&mut buf).unwrap();
            assert_eq!(Checkpoint::read(buf.as_slice()).unwrap(), c);
        }
    }

    #[test]
    fn byte_length_matches_layout() {
        let c = sample(true);
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        let n = c.params.len();
        assert_eq!(buf.len(), 8 + 4 + 12 + 8 + 1 + 16 + 8 + 8 * n + 1 + 8 + 16 * n);
        assert_eq!(&buf[..8], MAGIC);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let mut buf = Vec::new();
        sample(false).write(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read(bad.as_slice()), Err(CheckpointError::BadMagic)));

        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(Checkpoint::read(bad.as_slice()), Err(CheckpointError::Version(9))));

        let short = &buf[..buf.len() - 5];
        assert!(matches!(Checkpoint::read(short), Err(CheckpointError::Io(_))));

        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(Checkpoint::read(long.as_slice()), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn encoding_must_match_input_dim() {
        let mut c = sample(false);
        c.encoding = InputEncoding::Spatial;
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        assert!(matches!(Checkpoint::read(buf.as_slice()), Err(CheckpointError::Corrupt(_))));
    }
}
