//! Named-tensor checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"HTGCKPT1"
//! u32     scalar count, then per scalar: u32 name length, name bytes, f64 value
//! u32     tensor count, then per tensor: u32 name length, name bytes,
//!         u32 rank, rank x u64 dims, prod(dims) x f64 values
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load cycle is exact.

use std::fs;
use std::path::Path;

use crate::continual::FisherState;
use crate::model::{ModelParams, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"HTGCKPT1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub scalars: Vec<(String, f64)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(self.scalars.len() as u32).to_le_bytes());
        for (name, v) in &self.scalars {
            put_name(&mut out, name);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_name(&mut out, name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let n_scalars = r.u32()?;
        let mut scalars = Vec::new();
        for _ in 0..n_scalars {
            let name = r.name()?;
            scalars.push((name, r.f64()?));
        }
        let n_tensors = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let name = r.name()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| {
                    let d = r.u64()?;
                    usize::try_from(d).map_err(|_| Error::Checkpoint(format!("dimension {d} too large")))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, d| a.checked_mul(*d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` {shape:?} overruns the file")))?;
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor::from_data(shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { scalars, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice has length N"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))
    }
}

fn named(params: &ModelParams, prefix: &str) -> Vec<(String, Tensor)> {
    params
        .named()
        .into_iter()
        .map(|(n, t)| (format!("{prefix}{n}"), t.clone()))
        .collect()
}

pub fn params_checkpoint(params: &ModelParams) -> Checkpoint {
    Checkpoint {
        scalars: Vec::new(),
        tensors: named(params, ""),
    }
}

pub fn params_from_checkpoint(ck: &Checkpoint) -> Result<ModelParams> {
    ModelParams::from_named(ck.tensors.clone())
}

/// Importances under `fisher.*`, anchor parameters under `anchor.*`, and the
/// two penalty weights as scalars.
pub fn fisher_checkpoint(state: &FisherState) -> Checkpoint {
    let mut tensors = named(&state.fisher, "fisher.");
    tensors.extend(named(&state.anchor, "anchor."));
    Checkpoint {
        scalars: vec![("lambda".into(), state.lambda), ("gamma".into(), state.gamma)],
        tensors,
    }
}

pub fn fisher_from_checkpoint(ck: &Checkpoint) -> Result<FisherState> {
    let part = |prefix: &str| {
        let ts = ck
            .tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect();
        ModelParams::from_named(ts)
    };
    let scalar = |n: &str| {
        ck.scalar(n)
            .ok_or_else(|| Error::Checkpoint(format!("missing scalar `{n}`")))
    };
    FisherState::new(part("fisher.")?, part("anchor.")?, scalar("lambda")?, scalar("gamma")?)
}

pub fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    params_checkpoint(params).write(path)
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    params_from_checkpoint(&Checkpoint::read(path)?)
}

pub fn save_fisher(path: &Path, state: &FisherState) -> Result<()> {
    fisher_checkpoint(state).write(path)
}

pub fn load_fisher(path: &Path) -> Result<FisherState> {
    fisher_from_checkpoint(&Checkpoint::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::htg::MetaPathSpec;
    use crate::model::Hyperparams;
    use proptest::prelude::*;

    fn params(seed: u64) -> ModelParams {
        let hp = Hyperparams {
            hidden: 4,
            heads: 2,
            semantic_hidden: 3,
            ..Hyperparams::default()
        };
        ModelParams::init(5, &MetaPathSpec::standard(), &hp, seed).unwrap()
    }

    #[test]
    fn params_round_trip_bit_exactly() {
        let p = params(3);
        let bytes = params_checkpoint(&p).encode();
        let back = params_from_checkpoint(&Checkpoint::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(params_checkpoint(&back).encode(), bytes);
    }

    #[test]
    fn fisher_round_trip_keeps_scalars() {
        let mut f = params(1);
        for t in f.tensors_mut() {
            for v in &mut t.data {
                *v = v.abs();
            }
        }
        let s = FisherState::new(f, params(2), 1.5, 0.00025).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fisher_task1.ckpt");
        save_fisher(&path, &s).unwrap();
        assert_eq!(load_fisher(&path).unwrap(), s);
    }

    #[test]
    fn header_layout_is_fixed() {
        let ck = Checkpoint {
            scalars: vec![("a".into(), 1.0)],
            tensors: vec![("t".into(), Tensor::from_data(vec![2], vec![0.5, -2.0]).unwrap())],
        };
        let mut want = b"HTGCKPT1".to_vec();
        want.extend([1, 0, 0, 0, 1, 0, 0, 0, b'a']);
        want.extend(1.0f64.to_le_bytes());
        want.extend([1, 0, 0, 0, 1, 0, 0, 0, b't', 1, 0, 0, 0]);
        want.extend(2u64.to_le_bytes());
        want.extend(0.5f64.to_le_bytes());
        want.extend((-2.0f64).to_le_bytes());
        assert_eq!(ck.encode(), want);
    }

    #[test]
    fn rejects_corrupt_input() {
        let bytes = params_checkpoint(&params(0)).encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::decode(b"NOTACKPT").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
        let mut huge = b"HTGCKPT1".to_vec();
        huge.extend([0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, b't', 2, 0, 0, 0]);
        huge.extend(u64::MAX.to_le_bytes());
        huge.extend(u64::MAX.to_le_bytes());
        assert!(Checkpoint::decode(&huge).is_err());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_params(Path::new("/nonexistent/theta.ckpt")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }

    proptest! {
        #[test]
        fn arbitrary_values_survive(vals in proptest::collection::vec(any::<f64>(), 0..40)) {
            let ck = Checkpoint {
                scalars: vec![("x".into(), vals.first().copied().unwrap_or(0.0))],
                tensors: vec![("v".into(), Tensor::from_data(vec![vals.len()], vals.clone()).unwrap())],
            };
            let back = Checkpoint::decode(&ck.encode()).unwrap();
            let bits = |c: &Checkpoint| c.tensors[0].1.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&ck));
            prop_assert_eq!(back.scalars[0].1.to_bits(), ck.scalars[0].1.to_bits());
        }
    }
}
