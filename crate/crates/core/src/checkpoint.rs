//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!   magic `RIRCKPT\0`, version u32,
//!   config: u32 length + JSON bytes,
//!   params: u32 count, then per tensor: name (u32 len + bytes),
//!           rank u32, dims (u64 each), values (f64 each),
//!   optimizer: u8 flag; if 1: t u64, then per param (same order) the m and
//!           v buffers as f64 runs of the tensor's length,
//!   progress: epoch u64, step u64, best_val f64.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::CheckpointError;
use crate::model::Model;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"RIRCKPT\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub t: u64,
    pub m: HashMap<String, Vec<f64>>,
    pub v: HashMap<String, Vec<f64>>,
}

pub struct Checkpoint {
    pub cfg: ModelConfig,
    pub params: Vec<(String, Tensor)>,
    pub opt: Option<AdamState>,
    pub epoch: u64,
    pub step: u64,
    pub best_val: f64,
}

fn w_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_f64s(w: &mut impl Write, vs: &[f64]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn w_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn r_u32(r: &mut impl Read, what: &str) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| CheckpointError::Truncated(what.to_string()))?;
    Ok(u32::from_le_bytes(buf))
}

fn r_u64(r: &mut impl Read, what: &str) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| CheckpointError::Truncated(what.to_string()))?;
    Ok(u64::from_le_bytes(buf))
}

fn r_f64s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f64>, CheckpointError> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| CheckpointError::Truncated(what.to_string()))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn r_str(r: &mut impl Read, what: &str) -> Result<String, CheckpointError> {
    let len = r_u32(r, what)? as usize;
    if len > 1 << 20 {
        return Err(CheckpointError::Truncated(format!(
            "{what}: implausible string length {len}"
        )));
    }
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)
        .map_err(|_| CheckpointError::Truncated(what.to_string()))?;
    String::from_utf8(bytes).map_err(|_| CheckpointError::Truncated(format!("{what}: bad utf8")))
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w_u32(&mut w, VERSION)?;
    let cfg_json = serde_json::to_string(&ck.cfg)
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    w_str(&mut w, &cfg_json)?;

    w_u32(&mut w, ck.params.len() as u32)?;
    for (name, t) in &ck.params {
        w_str(&mut w, name)?;
        w_u32(&mut w, t.shape().len() as u32)?;
        for &d in t.shape() {
            w_u64(&mut w, d as u64)?;
        }
        w_f64s(&mut w, t.data())?;
    }

    match &ck.opt {
        Some(opt) => {
            w.write_all(&[1u8])?;
            w_u64(&mut w, opt.t)?;
            for (name, t) in &ck.params {
                let zeros = vec![0.0; t.numel()];
                w_f64s(&mut w, opt.m.get(name).unwrap_or(&zeros))?;
                w_f64s(&mut w, opt.v.get(name).unwrap_or(&zeros))?;
            }
        }
        None => w.write_all(&[0u8])?,
    }

    w_u64(&mut w, ck.epoch)?;
    w_u64(&mut w, ck.step)?;
    w.write_all(&ck.best_val.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| CheckpointError::Truncated("magic".into()))?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let cfg_json = r_str(&mut r, "config")?;
    let cfg: ModelConfig =
        serde_json::from_str(&cfg_json).map_err(|e| CheckpointError::Config(e.to_string()))?;

    let count = r_u32(&mut r, "param count")? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r_str(&mut r, "param name")?;
        let rank = r_u32(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r_u64(&mut r, "dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r_f64s(&mut r, numel, &format!("tensor {name}"))?;
        let t = Tensor::param(&shape, data)
            .map_err(|e| CheckpointError::Truncated(e.to_string()))?;
        params.push((name, t));
    }

    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)
        .map_err(|_| CheckpointError::Truncated("optimizer flag".into()))?;
    let opt = if flag[0] == 1 {
        let t = r_u64(&mut r, "optimizer step")?;
        let mut m = HashMap::new();
        let mut v = HashMap::new();
        for (name, tensor) in &params {
            m.insert(
                name.clone(),
                r_f64s(&mut r, tensor.numel(), &format!("m for {name}"))?,
            );
            v.insert(
                name.clone(),
                r_f64s(&mut r, tensor.numel(), &format!("v for {name}"))?,
            );
        }
        Some(AdamState { t, m, v })
    } else {
        None
    };

    let epoch = r_u64(&mut r, "epoch")?;
    let step = r_u64(&mut r, "step")?;
    let best_val = f64::from_le_bytes({
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|_| CheckpointError::Truncated("best_val".into()))?;
        b
    });

    Ok(Checkpoint {
        cfg,
        params,
        opt,
        epoch,
        step,
        best_val,
    })
}

/// Builds a model from a loaded checkpoint, validating names and shapes.
pub fn restore_model(ck: &Checkpoint) -> Result<Model, CheckpointError> {
    let mut model =
        Model::new(ck.cfg.clone()).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let expected: Vec<(String, Tensor)> = model.named_params();
    let have: HashMap<&str, &Tensor> =
        ck.params.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for (name, t) in &expected {
        match have.get(name.as_str()) {
            None => return Err(CheckpointError::MissingTensor(name.clone())),
            Some(loaded) if loaded.shape() != t.shape() => {
                return Err(CheckpointError::TensorShape {
                    name: name.clone(),
                    expected: t.shape().to_vec(),
                    found: loaded.shape().to_vec(),
                })
            }
            Some(_) => {}
        }
    }
    let expected_names: std::collections::HashSet<&str> =
        expected.iter().map(|(n, _)| n.as_str()).collect();
    for (name, _) in &ck.params {
        if !expected_names.contains(name.as_str()) {
            return Err(CheckpointError::UnexpectedTensor(name.clone()));
        }
    }
    model
        .load_params(&ck.params)
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    Ok(model)
}
