//! Binary checkpoint: magic `TDMD1`, a version byte, the step count, then
//! named little-endian f32 tensors with shape headers.
//!
//! Section layout: u16 name length, UTF-8 name, u8 rank, u32 per dimension,
//! then the values in row-major order.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::optim::{AdamConfig, TrainState};
use super::{Model, ModelConfig, RenormStats};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"TDMD1";
pub const VERSION: u8 = 1;

struct Section {
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn put_section(out: &mut Vec<u8>, name: &str, dims: &[usize], data: impl Iterator<Item = f32>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(state: &TrainState<f32>) -> Vec<u8> {
    let model = &state.model;
    let mut body = Vec::new();
    let mut count = 0u32;
    let mut add = |name: &str, dims: &[usize], data: &mut dyn Iterator<Item = f32>| {
        put_section(&mut body, name, dims, data);
        count += 1;
    };
    let cfg = model.config.to_f32s();
    add("config", &[cfg.len()], &mut cfg.into_iter());
    let adam = state.adam.to_f32s();
    add("adam", &[adam.len()], &mut adam.into_iter());
    for (kind, tensors) in [
        ("param", &model.params),
        ("adam_m", &state.first_moment),
        ("adam_v", &state.second_moment),
    ] {
        for (name, t) in model.names().iter().zip(tensors) {
            add(&format!("{kind}/{name}"), &[t.nrows(), t.ncols()], &mut t.iter().copied());
        }
    }
    for (i, s) in model.stats.iter().enumerate() {
        add(&format!("renorm/{i}/mean"), &[s.mean.len()], &mut s.mean.iter().copied());
        add(&format!("renorm/{i}/std"), &[s.std.len()], &mut s.std.iter().copied());
    }
    let mut out = Vec::with_capacity(body.len() + 18);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&body);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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

pub fn from_bytes(buf: &[u8]) -> Result<TrainState<f32>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let step = r.u64()?;
    let count = r.u32()?;
    let mut sections = BTreeMap::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("section too large".into()))?)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if sections.insert(name.clone(), Section { dims, data }).is_some() {
            return Err(Error::Checkpoint(format!("duplicate section {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }

    let mut get = |name: &str| sections.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing section {name}")));
    let config = ModelConfig::from_f32s(&get("config")?.data)?;
    let adam = AdamConfig::from_f32s(&get("adam")?.data)?;
    let template = Model::<f32>::new(config, 0)?;
    let matrix = |s: Section, name: &str| -> Result<Array2<f32>> {
        let [rows, cols] = s.dims[..] else {
            return Err(Error::Checkpoint(format!("{name} is not a matrix")));
        };
        Array2::from_shape_vec((rows, cols), s.data).map_err(|e| Error::Checkpoint(e.to_string()))
    };
    let mut load_all = |kind: &str| -> Result<Vec<Array2<f32>>> {
        template
            .names()
            .iter()
            .map(|n| {
                let key = format!("{kind}/{n}");
                matrix(get(&key)?, &key)
            })
            .collect()
    };
    let params = load_all("param")?;
    let first_moment = load_all("adam_m")?;
    let second_moment = load_all("adam_v")?;
    let mut stats = Vec::with_capacity(template.stats.len());
    for i in 0..template.stats.len() {
        let mean = Array1::from(get(&format!("renorm/{i}/mean"))?.data);
        let std = Array1::from(get(&format!("renorm/{i}/std"))?.data);
        if mean.len() != template.stats[i].mean.len() || std.len() != mean.len() {
            return Err(Error::Checkpoint(format!("renorm/{i} has wrong width")));
        }
        stats.push(RenormStats { mean, std });
    }
    if let Some(extra) = sections.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected section {extra}")));
    }
    let model = Model::from_parts(config, params, stats)?;
    for (m, p) in first_moment.iter().chain(&second_moment).zip(model.params.iter().cycle()) {
        if m.dim() != p.dim() {
            return Err(Error::Checkpoint("moment shape mismatch".into()));
        }
    }
    Ok(TrainState {
        model,
        adam,
        first_moment,
        second_moment,
        step,
    })
}

pub fn save(state: &TrainState<f32>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_bytes(state))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainState<f32>> {
    let buf = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => e.into(),
    })?;
    from_bytes(&buf)
}
