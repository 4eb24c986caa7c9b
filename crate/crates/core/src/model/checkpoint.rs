//! Binary checkpoint format.
//!
//! ```text
//! magic    b"FUSLCKPT"
//! version  u32 LE
//! records  until EOF, each:
//!   name_len u32 | name bytes (UTF-8) | rank u32 | dims u32 × rank | data f64 LE × Π dims
//! ```
//!
//! Layer `i` of section `s` (`backbone`, `projector`, `predictor`) stores
//! `s.i.config` = `[in_dim, out_dim, batchnorm, relu, trainable]` followed by
//! `weight`, `bias` and, with batchnorm, `gamma`, `beta`, `running_mean`,
//! `running_var`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::encoder::EncoderParams;
use super::layer::{Activation, BatchNorm, Layer, LayerSpec};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FUSLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn matrix(name: String, m: &Matrix) -> Self {
        Self {
            name,
            dims: vec![m.rows() as u32, m.cols() as u32],
            data: m.data().to_vec(),
        }
    }

    fn vector(name: String, v: &[f64]) -> Self {
        Self {
            name,
            dims: vec![v.len() as u32],
            data: v.to_vec(),
        }
    }

    fn to_matrix(&self) -> Result<Matrix> {
        match self.dims.as_slice() {
            [r, c] => Matrix::new(*r as usize, *c as usize, self.data.clone()),
            _ => Err(Error::Malformed(format!("{}: expected a rank-2 tensor", self.name))),
        }
    }
}

pub fn write_tensors(mut w: impl Write, tensors: &[Tensor]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
        for d in &t.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors(mut r: impl Read) -> Result<Vec<Tensor>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: "FUSLCKPT" });
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Malformed(format!("unsupported checkpoint version {version}")));
    }
    let mut tensors = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32("name length")? as usize;
        let name = String::from_utf8(cur.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?;
        let rank = cur.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("dims")?);
        }
        let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let count = count.ok_or_else(|| Error::Malformed(format!("{name}: dimensions overflow")))?;
        let raw = cur.take(count.checked_mul(8).unwrap_or(usize::MAX), &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensors.push(Tensor { name, dims, data });
    }
    Ok(tensors)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!("while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

fn section_tensors(section: &str, layers: &[Layer], out: &mut Vec<Tensor>) {
    for (i, l) in layers.iter().enumerate() {
        let p = format!("{section}.{i}");
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        out.push(Tensor::vector(
            format!("{p}.config"),
            &[
                l.spec.in_dim as f64,
                l.spec.out_dim as f64,
                flag(l.spec.batchnorm),
                flag(l.spec.activation == Activation::Relu),
                flag(l.trainable),
            ],
        ));
        out.push(Tensor::matrix(format!("{p}.weight"), &l.weight));
        out.push(Tensor::matrix(format!("{p}.bias"), &l.bias));
        if let Some(bn) = &l.bn {
            out.push(Tensor::matrix(format!("{p}.gamma"), &bn.gamma));
            out.push(Tensor::matrix(format!("{p}.beta"), &bn.beta));
            out.push(Tensor::vector(format!("{p}.running_mean"), &bn.running_mean));
            out.push(Tensor::vector(format!("{p}.running_var"), &bn.running_var));
        }
    }
}

pub fn encoder_tensors(params: &EncoderParams) -> Vec<Tensor> {
    let mut out = Vec::new();
    section_tensors("backbone", &params.backbone, &mut out);
    section_tensors("projector", &params.projector, &mut out);
    if let Some(p) = &params.predictor {
        section_tensors("predictor", p, &mut out);
    }
    out
}

pub fn encoder_from_tensors(tensors: Vec<Tensor>) -> Result<EncoderParams> {
    // section -> layer index -> field -> tensor
    let mut sections: BTreeMap<String, BTreeMap<usize, BTreeMap<String, Tensor>>> = BTreeMap::new();
    for t in tensors {
        let mut parts = t.name.splitn(3, '.');
        let (Some(section), Some(idx), Some(field)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Malformed(format!("unexpected tensor name {:?}", t.name)));
        };
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::Malformed(format!("bad layer index in {:?}", t.name)))?;
        let (section, field) = (section.to_string(), field.to_string());
        sections.entry(section).or_default().entry(idx).or_default().insert(field, t);
    }
    let mut build = |name: &str| -> Result<Option<Vec<Layer>>> {
        let Some(layers) = sections.remove(name) else {
            return Ok(None);
        };
        let mut out = Vec::with_capacity(layers.len());
        for (expected, (idx, mut fields)) in layers.into_iter().enumerate() {
            if idx != expected {
                return Err(Error::Malformed(format!("{name}: missing layer {expected}")));
            }
            let mut get = |f: &str| {
                fields
                    .remove(f)
                    .ok_or_else(|| Error::Malformed(format!("{name}.{idx}: missing {f}")))
            };
            let cfg = get("config")?;
            let [in_dim, out_dim, bn, relu, trainable] = cfg.data[..] else {
                return Err(Error::Malformed(format!("{name}.{idx}: bad config record")));
            };
            let spec = LayerSpec {
                in_dim: in_dim as usize,
                out_dim: out_dim as usize,
                batchnorm: bn != 0.0,
                activation: if relu != 0.0 { Activation::Relu } else { Activation::None },
            };
            let weight = get("weight")?.to_matrix()?;
            let bias = get("bias")?.to_matrix()?;
            if weight.shape() != (spec.out_dim, spec.in_dim) || bias.shape() != (1, spec.out_dim) {
                return Err(Error::Malformed(format!("{name}.{idx}: parameter shape disagrees with config")));
            }
            let bn = if spec.batchnorm {
                let bn = BatchNorm {
                    gamma: get("gamma")?.to_matrix()?,
                    beta: get("beta")?.to_matrix()?,
                    running_mean: get("running_mean")?.data,
                    running_var: get("running_var")?.data,
                };
                let d = spec.out_dim;
                if bn.gamma.shape() != (1, d)
                    || bn.beta.shape() != (1, d)
                    || bn.running_mean.len() != d
                    || bn.running_var.len() != d
                {
                    return Err(Error::Malformed(format!("{name}.{idx}: batchnorm shape disagrees with config")));
                }
                Some(bn)
            } else {
                None
            };
            out.push(Layer {
                spec,
                weight,
                bias,
                bn,
                trainable: trainable != 0.0,
            });
        }
        Ok(Some(out))
    };
    let backbone = build("backbone")?.unwrap_or_default();
    let projector = build("projector")?.unwrap_or_default();
    let predictor = build("predictor")?;
    if let Some(extra) = sections.keys().next() {
        return Err(Error::Malformed(format!("unknown section {extra:?}")));
    }
    EncoderParams::from_layers(backbone, projector, predictor)
        .map_err(|e| Error::Malformed(format!("checkpoint describes an invalid encoder: {e}")))
}

pub fn save_checkpoint(params: &EncoderParams, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_tensors(&mut buf, &encoder_tensors(params))?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderParams> {
    let bytes = fs::read(path)?;
    encoder_from_tensors(read_tensors(bytes.as_slice())?)
}
