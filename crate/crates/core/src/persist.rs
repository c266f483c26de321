//! Checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "S3DN"  version: u32 = 1  count: u32
//! count × { name_len: u32  name: UTF-8  rank: u32  dims: u64 × rank  payload: f32 × Π dims }
//! ```
//!
//! Payloads are row-major `f32`. Optimizer state lives under names starting
//! with `adam/`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::net::{ModelParams, Network};
use crate::optim::{AdamConfig, AdamState, Moments};
use crate::tensor5::{Element, Shape5, Tensor5};

pub const MAGIC: &[u8; 4] = b"S3DN";
pub const VERSION: u32 = 1;
pub const ADAM_PREFIX: &str = "adam/";
const ADAM_STEP: &str = "adam/step";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    fn vector<T: Element>(name: String, v: &[T]) -> Self {
        NamedTensor {
            name,
            dims: vec![v.len() as u64],
            data: v.iter().map(|&x| x.to_f64_lossless() as f32).collect(),
        }
    }
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::Checkpoint(format!(
                "duplicate tensor name {:?}",
                t.name
            )));
        }
        let count: u64 = t.dims.iter().product();
        if count != t.data.len() as u64 {
            return Err(Error::Checkpoint(format!(
                "{}: dims {:?} declare {count} elements, payload has {}",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut seen = HashSet::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("duplicate tensor name {name:?}")));
        }
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::new();
        for _ in 0..rank {
            dims.push(r.u64("dims")?);
        }
        let elems = dims
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: element count overflows")))?;
        let payload = r.take(elems, &name)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(tensors)
}

/// Flattens parameters (and optionally optimizer state) into named tensors
/// in network order.
pub fn to_tensors<T: Element>(
    params: &ModelParams<T>,
    adam: Option<&AdamState<T>>,
) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    for (name, layer) in &params.layers {
        let w = &layer.kernel.weights;
        out.push(NamedTensor {
            name: format!("{name}.weight"),
            dims: w.shape().dims().iter().map(|&d| d as u64).collect(),
            data: w
                .data()
                .iter()
                .map(|&x| x.to_f64_lossless() as f32)
                .collect(),
        });
        out.push(NamedTensor::vector(
            format!("{name}.bias"),
            &layer.kernel.bias,
        ));
        if let Some(bn) = &layer.bn {
            out.push(NamedTensor::vector(format!("{name}.bn.gamma"), &bn.gamma));
            out.push(NamedTensor::vector(format!("{name}.bn.beta"), &bn.beta));
            out.push(NamedTensor::vector(
                format!("{name}.bn.running_mean"),
                &bn.running_mean,
            ));
            out.push(NamedTensor::vector(
                format!("{name}.bn.running_var"),
                &bn.running_var,
            ));
        }
    }
    if let Some(st) = adam {
        out.push(NamedTensor {
            name: ADAM_STEP.into(),
            dims: vec![1],
            data: vec![st.step as f32],
        });
        for (name, mo) in &st.moments {
            out.push(NamedTensor::vector(format!("{ADAM_PREFIX}{name}.m"), &mo.m));
            out.push(NamedTensor::vector(format!("{ADAM_PREFIX}{name}.v"), &mo.v));
        }
    }
    out
}

pub fn save<T: Element>(
    params: &ModelParams<T>,
    adam: Option<&AdamState<T>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(&to_tensors(params, adam))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn take<T: Element>(
    by_name: &mut IndexMap<String, NamedTensor>,
    name: String,
    expected: &[u64],
) -> Result<Vec<T>> {
    let t = by_name
        .shift_remove(&name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
    if t.dims != expected {
        return Err(Error::Checkpoint(format!(
            "{name}: dims {:?}, expected {expected:?}",
            t.dims
        )));
    }
    Ok(t.data
        .iter()
        .map(|&v| T::from_f64_lossy(v as f64))
        .collect())
}

/// Rebuilds parameters for `net`, requiring every tensor it needs with the
/// right shape and no unknown parameter tensors.
pub fn from_tensors<T: Element>(
    net: &Network,
    tensors: Vec<NamedTensor>,
) -> Result<(ModelParams<T>, Option<AdamState<T>>)> {
    let mut by_name: IndexMap<String, NamedTensor> =
        tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut params = net.init_params::<T>(0)?;
    for (name, layer) in params.layers.iter_mut() {
        let shape: Shape5 = layer.kernel.weights.shape();
        let dims: Vec<u64> = shape.dims().iter().map(|&d| d as u64).collect();
        layer.kernel.weights =
            Tensor5::from_vec(shape, take(&mut by_name, format!("{name}.weight"), &dims)?)?;
        let c = [layer.kernel.c_out() as u64];
        layer.kernel.bias = take(&mut by_name, format!("{name}.bias"), &c)?;
        if let Some(bn) = layer.bn.as_mut() {
            bn.gamma = take(&mut by_name, format!("{name}.bn.gamma"), &c)?;
            bn.beta = take(&mut by_name, format!("{name}.bn.beta"), &c)?;
            bn.running_mean = take(&mut by_name, format!("{name}.bn.running_mean"), &c)?;
            bn.running_var = take(&mut by_name, format!("{name}.bn.running_var"), &c)?;
            if bn.running_var.iter().any(|&v| v < T::zero()) {
                return Err(Error::Checkpoint(format!(
                    "{name}: negative running variance"
                )));
            }
        }
    }

    let adam = match by_name.shift_remove(ADAM_STEP) {
        None => None,
        Some(step) => {
            if step.data.len() != 1 {
                return Err(Error::Checkpoint("adam/step must hold one value".into()));
            }
            let mut st = AdamState::new(AdamConfig::default());
            st.step = step.data[0] as u64;
            let mut scratch = params.clone();
            let sizes: Vec<(String, usize)> = scratch
                .learnables_mut()
                .into_iter()
                .map(|(n, b)| (n, b.len()))
                .collect();
            for (pname, len) in sizes {
                let n = [len as u64];
                let m = take(&mut by_name, format!("{ADAM_PREFIX}{pname}.m"), &n)?;
                let v = take(&mut by_name, format!("{ADAM_PREFIX}{pname}.v"), &n)?;
                st.moments.insert(pname, Moments { m, v });
            }
            Some(st)
        }
    };
    if let Some(name) = by_name.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
    }
    Ok((params, adam))
}

pub fn load<T: Element>(
    net: &Network,
    path: impl AsRef<Path>,
) -> Result<(ModelParams<T>, Option<AdamState<T>>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_tensors(net, decode(&bytes)?)
}
