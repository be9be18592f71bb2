//! Binary checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "RHAC" | version u32 | variant u8 | base_width u32 | epoch u32
//!        | has_optimizer u8 | tensor_count u32 | tensor*
//! tensor    = name_len u16 | name | ndim u8 | dims u32*ndim | f32*numel
//! optimizer = count u32 | tensor* (first moments, names of the parameters)
//!           | count u32 | tensor* (second moments) | step u64
//! ```
//!
//! Model tensors include the batch-norm running statistics. The optimizer
//! hyperparameters are not stored; they come from the run configuration.

use std::fs;
use std::path::Path;

use crate::blocks::Module;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::training::adam::{AdamConfig, AdamState};

pub const MAGIC: [u8; 4] = *b"RHAC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: u32,
    pub tensors: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerSnapshot>,
}

impl Checkpoint {
    pub fn capture(model: &Model<f32>, epoch: u32, optimizer: Option<&AdamState<f32>>) -> Self {
        let tensors = model
            .named_tensors("")
            .into_iter()
            .map(|(name, t, _)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            })
            .collect();
        let optimizer = optimizer.map(|adam| {
            let params = model.params();
            let block = |bufs: &[Vec<f32>]| {
                params
                    .iter()
                    .zip(bufs)
                    .map(|((name, p), b)| NamedTensor {
                        name: name.clone(),
                        shape: p.shape().to_vec(),
                        data: b.clone(),
                    })
                    .collect()
            };
            OptimizerSnapshot {
                step: adam.step,
                m: block(&adam.m),
                v: block(&adam.v),
            }
        });
        Self {
            config: *model.config(),
            epoch,
            tensors,
            optimizer,
        }
    }

    /// Rebuilds the model (and optimizer, with the given hyperparameters).
    pub fn restore(&self, adam: AdamConfig) -> Result<(Model<f32>, Option<AdamState<f32>>)> {
        let model = Model::<f32>::build(self.config, 0)?;
        let slots = model.named_tensors("");
        check_layout(
            "model",
            &self.tensors,
            slots.iter().map(|(n, t, _)| (n.as_str(), t.shape())),
        )?;
        for ((_, t, _), saved) in slots.iter().zip(&self.tensors) {
            t.set_data(saved.data.clone())?;
        }
        let optimizer = match &self.optimizer {
            None => None,
            Some(snap) => {
                let params = model.params();
                let expect = || params.iter().map(|(n, t)| (n.as_str(), t.shape()));
                check_layout("first moment", &snap.m, expect())?;
                check_layout("second moment", &snap.v, expect())?;
                let mut state = AdamState::new(adam, &params);
                state.step = snap.step;
                state.m = snap.m.iter().map(|t| t.data.clone()).collect();
                state.v = snap.v.iter().map(|t| t.data.clone()).collect();
                Some(state)
            }
        };
        Ok((model, optimizer))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.config.variant.code());
        out.extend_from_slice(&to_u32(self.config.base_width, "base width")?.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.push(u8::from(self.optimizer.is_some()));
        write_block(&mut out, &self.tensors)?;
        if let Some(opt) = &self.optimizer {
            write_block(&mut out, &opt.m)?;
            write_block(&mut out, &opt.v)?;
            out.extend_from_slice(&opt.step.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses and validates a checkpoint against the model its header
    /// describes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::NotACheckpoint(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let code = r.u8("variant")?;
        let variant = Variant::from_code(code)
            .ok_or_else(|| Error::CheckpointInconsistent(format!("unknown variant code {code}")))?;
        let base_width = r.u32("base width")? as usize;
        if base_width == 0 {
            return Err(Error::CheckpointInconsistent("base width 0".into()));
        }
        let epoch = r.u32("epoch")?;
        let has_optimizer = match r.u8("optimizer flag")? {
            0 => false,
            1 => true,
            other => return Err(Error::CheckpointInconsistent(format!("optimizer flag {other}"))),
        };
        let tensors = read_block(&mut r)?;
        let optimizer = if has_optimizer {
            let m = read_block(&mut r)?;
            let v = read_block(&mut r)?;
            let step = r.u64("optimizer step")?;
            Some(OptimizerSnapshot { step, m, v })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::CheckpointInconsistent(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let ckpt = Self {
            config: ModelConfig::new(variant, base_width),
            epoch,
            tensors,
            optimizer,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Checks names and shapes against a freshly built model of the same
    /// configuration.
    pub fn validate(&self) -> Result<()> {
        let model = Model::<f32>::build(self.config, 0)?;
        let slots = model.named_tensors("");
        check_layout(
            "model",
            &self.tensors,
            slots.iter().map(|(n, t, _)| (n.as_str(), t.shape())),
        )?;
        if let Some(opt) = &self.optimizer {
            let params = model.params();
            check_layout(
                "first moment",
                &opt.m,
                params.iter().map(|(n, t)| (n.as_str(), t.shape())),
            )?;
            check_layout(
                "second moment",
                &opt.v,
                params.iter().map(|(n, t)| (n.as_str(), t.shape())),
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::CheckpointInconsistent(format!("{what} {v} exceeds u32")))
}

fn write_block(out: &mut Vec<u8>, tensors: &[NamedTensor]) -> Result<()> {
    out.extend_from_slice(&to_u32(tensors.len(), "tensor count")?.to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::CheckpointInconsistent(format!("tensor name {} too long", t.name)))?;
        let ndim = u8::try_from(t.shape.len())
            .map_err(|_| Error::CheckpointInconsistent(format!("{} has too many dimensions", t.name)))?;
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::CheckpointInconsistent(format!(
                "{} payload does not match shape",
                t.name
            )));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(ndim);
        for &d in &t.shape {
            out.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

fn read_block(r: &mut Reader<'_>) -> Result<Vec<NamedTensor>> {
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2, "tensor name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::CheckpointInconsistent("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u8("tensor rank")? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32("tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(Error::Truncated("tensor payload"))?;
        let payload = r.take(
            numel.checked_mul(4).ok_or(Error::Truncated("tensor payload"))?,
            "tensor payload",
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    Ok(tensors)
}

fn check_layout<'a>(
    what: &str,
    saved: &[NamedTensor],
    expected: impl ExactSizeIterator<Item = (&'a str, &'a [usize])>,
) -> Result<()> {
    if saved.len() != expected.len() {
        return Err(Error::CheckpointInconsistent(format!(
            "{what} section has {} tensors, configuration expects {}",
            saved.len(),
            expected.len()
        )));
    }
    for (t, (name, shape)) in saved.iter().zip(expected) {
        if t.name != name || t.shape != shape {
            return Err(Error::CheckpointInconsistent(format!(
                "{what} tensor {} {:?} where {name} {shape:?} was expected",
                t.name, t.shape
            )));
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn sample(with_opt: bool) -> (Model<f32>, Checkpoint) {
        let model = Model::<f32>::build(ModelConfig::new(Variant::Rha, 2), 3).unwrap();
        let params = model.params();
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        adam.step = 7;
        for (i, m) in adam.m.iter_mut().enumerate() {
            m.iter_mut().for_each(|v| *v = i as f32 * 0.5);
        }
        let ckpt = Checkpoint::capture(&model, 12, with_opt.then_some(&adam));
        (model, ckpt)
    }

    #[test]
    fn header_layout() {
        let (_, ckpt) = sample(false);
        let b = ckpt.to_bytes().unwrap();
        assert_eq!(&b[..4], b"RHAC");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(b[8], Variant::Rha.code());
        assert_eq!(u32::from_le_bytes(b[9..13].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[13..17].try_into().unwrap()), 12);
        assert_eq!(b[17], 0);
        assert_eq!(
            u32::from_le_bytes(b[18..22].try_into().unwrap()) as usize,
            ckpt.tensors.len()
        );
        let name_len = u16::from_le_bytes(b[22..24].try_into().unwrap()) as usize;
        assert_eq!(&b[24..24 + name_len], ckpt.tensors[0].name.as_bytes());
    }

    #[test]
    fn round_trip_is_bitwise() {
        for with_opt in [false, true] {
            let (model, ckpt) = sample(with_opt);
            let bytes = ckpt.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ckpt);
            assert_eq!(back.to_bytes().unwrap(), bytes);
            let (restored, adam) = back.restore(AdamConfig::default()).unwrap();
            for ((_, a, _), (_, b, _)) in model.named_tensors("").iter().zip(restored.named_tensors("")) {
                let bits = |t: &crate::Tensor<f32>| t.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(&b));
            }
            assert_eq!(adam.map(|a| a.step), with_opt.then_some(7));
        }
    }

    #[test]
    fn distinct_errors() {
        let (_, ckpt) = sample(true);
        let bytes = ckpt.to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::NotACheckpoint(_))));
        assert!(Checkpoint::from_bytes(&bad)
            .unwrap_err()
            .to_string()
            .contains("not a checkpoint"));

        let mut bad = bytes.clone();
        bad[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::UnsupportedVersion(2))
        ));

        for cut in [2, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Truncated(_))),
                "cut {cut}"
            );
        }

        // claims width 4 while carrying width-2 tensors
        let mut bad = bytes.clone();
        bad[9..13].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::CheckpointInconsistent(_))
        ));

        let mut bad = bytes;
        bad.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::CheckpointInconsistent(_))
        ));
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.rhac");
        let (_, ckpt) = sample(true);
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
        assert!(matches!(
            Checkpoint::load(dir.path().join("none.rhac")),
            Err(Error::Io { .. })
        ));
    }
}
