//! `LXGD` binary checkpoints.
//!
//! All integers and floats are little-endian. Layout:
//!
//! ```text
//! magic            4 bytes  "LXGD"
//! version          u32      currently 1
//! num_classes      u32
//! input_rank       u32, then input_rank x u32 dims
//! layer_count      u32
//! layer table      layer_count x (u8 kind, 5 x u32 hyperparameters)
//! tensor block     u32 count, then per tensor: u32 rank, rank x u32 dims,
//!                  product(dims) x f64 values
//! optimizer        f64 momentum, f64 weight_decay, u64 steps,
//!                  u8 has_velocity, then a tensor block if has_velocity == 1
//! generation       u64 completed generations
//! lineage_seed     u64 random-stream seed of the stored parent
//! ```
//!
//! Layer kinds: 0 dense (inputs, outputs), 1 relu, 2 conv2d (in_channels,
//! out_channels, kernel, stride, padding), 3 maxpool2d (window, stride),
//! 4 flatten. Unused hyperparameter slots are zero.

use std::path::Path;

use crate::nn::{LayerSpec, ModelState};
use crate::optim::OptimizerState;
use crate::{Error, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"LXGD";
pub const VERSION: u32 = 1;

/// A stored parent: model, optimizer counters and lineage position.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState,
    pub momentum: f64,
    pub weight_decay: f64,
    pub steps: u64,
    /// Present when the velocity carries into the next generation.
    pub velocity: Option<Vec<Tensor>>,
    pub generation: u64,
    pub lineage_seed: u64,
}

impl Checkpoint {
    pub fn optimizer_state(&self) -> OptimizerState {
        let mut opt = OptimizerState::new(&self.model, self.momentum)
            .with_weight_decay(self.weight_decay);
        opt.steps = self.steps;
        if let Some(v) = &self.velocity {
            opt.velocity = v.clone();
        }
        opt
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.model.num_classes() as u32);
        let input = self.model.input_shape();
        put_u32(&mut out, input.len() as u32);
        for &d in input {
            put_u32(&mut out, d as u32);
        }
        put_u32(&mut out, self.model.layers().len() as u32);
        for layer in self.model.layers() {
            let (kind, hp) = encode_layer(layer);
            out.push(kind);
            for v in hp {
                put_u32(&mut out, v as u32);
            }
        }
        put_tensors(&mut out, self.model.params());
        out.extend_from_slice(&self.momentum.to_le_bytes());
        out.extend_from_slice(&self.weight_decay.to_le_bytes());
        out.extend_from_slice(&self.steps.to_le_bytes());
        match &self.velocity {
            Some(v) => {
                out.push(1);
                put_tensors(&mut out, v);
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.generation.to_le_bytes());
        out.extend_from_slice(&self.lineage_seed.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::parse(0, format!("bad magic {magic:?}, expected \"LXGD\"")));
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::parse(at as u64, format!("unsupported version {version}")));
        }
        let num_classes = r.u32()? as usize;
        let rank = r.u32()? as usize;
        let input_shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let layer_count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(layer_count.min(1024));
        for _ in 0..layer_count {
            let at = r.pos;
            let kind = r.take(1)?[0];
            let mut hp = [0usize; 5];
            for v in &mut hp {
                *v = r.u32()? as usize;
            }
            layers.push(decode_layer(kind, hp).ok_or_else(|| {
                Error::parse(at as u64, format!("unknown layer kind {kind}"))
            })?);
        }
        let at = r.pos;
        let params = r.tensors()?;
        let model = ModelState::new(input_shape, layers, params, num_classes)
            .map_err(|e| Error::parse(at as u64, e.to_string()))?;
        let momentum = r.f64()?;
        let weight_decay = r.f64()?;
        let steps = r.u64()?;
        let at = r.pos;
        let velocity = match r.take(1)?[0] {
            0 => None,
            1 => {
                let v = r.tensors()?;
                let congruent = v.len() == model.params().len()
                    && v.iter().zip(model.params()).all(|(a, b)| a.shape() == b.shape());
                if !congruent {
                    return Err(Error::parse(at as u64, "velocity not congruent with parameters"));
                }
                Some(v)
            }
            flag => return Err(Error::parse(at as u64, format!("bad velocity flag {flag}"))),
        };
        let generation = r.u64()?;
        let lineage_seed = r.u64()?;
        if r.pos != bytes.len() {
            return Err(Error::parse(
                r.pos as u64,
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(Self {
            model,
            momentum,
            weight_decay,
            steps,
            velocity,
            generation,
            lineage_seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::File {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes).map_err(|e| Error::File {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

fn encode_layer(layer: &LayerSpec) -> (u8, [usize; 5]) {
    match *layer {
        LayerSpec::Dense { inputs, outputs } => (0, [inputs, outputs, 0, 0, 0]),
        LayerSpec::Relu => (1, [0; 5]),
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => (2, [in_channels, out_channels, kernel, stride, padding]),
        LayerSpec::MaxPool2d { window, stride } => (3, [window, stride, 0, 0, 0]),
        LayerSpec::Flatten => (4, [0; 5]),
    }
}

fn decode_layer(kind: u8, hp: [usize; 5]) -> Option<LayerSpec> {
    Some(match kind {
        0 => LayerSpec::Dense {
            inputs: hp[0],
            outputs: hp[1],
        },
        1 => LayerSpec::Relu,
        2 => LayerSpec::Conv2d {
            in_channels: hp[0],
            out_channels: hp[1],
            kernel: hp[2],
            stride: hp[3],
            padding: hp[4],
        },
        3 => LayerSpec::MaxPool2d {
            window: hp[0],
            stride: hp[1],
        },
        4 => LayerSpec::Flatten,
        _ => return None,
    })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensors(out: &mut Vec<u8>, tensors: &[Tensor]) {
    put_u32(out, tensors.len() as u32);
    for t in tensors {
        put_u32(out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(out, d as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.pos as u64,
                format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensors(&mut self) -> Result<Vec<Tensor>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let at = self.pos;
            let rank = self.u32()? as usize;
            let shape = (0..rank)
                .map(|_| self.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.bytes.len()))
                .ok_or_else(|| Error::parse(at as u64, format!("implausible tensor shape {shape:?}")))?;
            let raw = self.take(len * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            out.push(Tensor::new(shape, data).map_err(|e| Error::parse(at as u64, e.to_string()))?);
        }
        Ok(out)
    }
}
