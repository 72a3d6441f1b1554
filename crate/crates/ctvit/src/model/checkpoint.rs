//! Checkpoint file: a text header (config and training counters as
//! key=value lines) followed by named parameter tensors in the container
//! style (a text line per tensor, then raw little-endian f64 bytes).
//! Round trips are bit-exact, so training resumes reproduce the
//! uninterrupted run.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Variant};
use crate::rng::RngState;
use crate::tensor::Tensor;

const MAGIC: &str = "ctvit-checkpoint-v1";

/// Optimizer moment buffers, parallel to [`ModelParams::named`] order.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerSnapshot {
    Adam {
        step: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
    Sgd {
        momentum: f64,
        step: u64,
        velocity: Vec<Vec<f64>>,
    },
}

impl OptimizerSnapshot {
    pub fn kind(&self) -> &'static str {
        match self {
            OptimizerSnapshot::Adam { .. } => "adam",
            OptimizerSnapshot::Sgd { .. } => "sgd",
        }
    }

    pub fn step(&self) -> u64 {
        match self {
            OptimizerSnapshot::Adam { step, .. } => *step,
            OptimizerSnapshot::Sgd { step, .. } => *step,
        }
    }
}

/// Everything needed to resume training bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ModelParams,
    pub optimizer: OptimizerSnapshot,
    /// Completed position: epoch index and sample cursor within it.
    pub epoch: usize,
    pub cursor: usize,
    pub step: u64,
    pub rng: RngState,
    pub loss_history: Vec<f64>,
}

fn write_kv(out: &mut Vec<u8>, key: &str, value: impl std::fmt::Display) {
    out.extend_from_slice(format!("{key}={value}\n").as_bytes());
}

fn write_tensor_block(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    out.extend_from_slice(format!("tensor {name} {} {}\n", dims.join("x"), data.len()).as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(b'\n');
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let named = ckpt.params.named();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    write_kv(&mut out, "variant", ckpt.model.variant.name());
    write_kv(&mut out, "patch_size", ckpt.model.patch_size);
    write_kv(&mut out, "image_size", ckpt.model.image_size);
    write_kv(&mut out, "volume_depth", ckpt.model.volume_depth);
    write_kv(&mut out, "embed_dim", ckpt.model.embed_dim);
    write_kv(&mut out, "depth", ckpt.model.depth);
    write_kv(&mut out, "num_heads", ckpt.model.num_heads);
    write_kv(&mut out, "mlp_dim", ckpt.model.mlp_dim);
    write_kv(&mut out, "num_classes", ckpt.model.num_classes);
    write_kv(&mut out, "dropout", ckpt.model.dropout);
    write_kv(&mut out, "epoch", ckpt.epoch);
    write_kv(&mut out, "cursor", ckpt.cursor);
    write_kv(&mut out, "step", ckpt.step);
    write_kv(&mut out, "rng.seed", ckpt.rng.seed);
    write_kv(&mut out, "rng.word_pos", ckpt.rng.word_pos);
    write_kv(&mut out, "optimizer", ckpt.optimizer.kind());
    write_kv(&mut out, "optimizer.step", ckpt.optimizer.step());
    if let OptimizerSnapshot::Sgd { momentum, .. } = &ckpt.optimizer {
        write_kv(&mut out, "optimizer.momentum", momentum);
    }
    write_kv(&mut out, "loss_history", ckpt.loss_history.len());
    let tensor_count = match &ckpt.optimizer {
        OptimizerSnapshot::Adam { .. } => named.len() * 3,
        OptimizerSnapshot::Sgd { .. } => named.len() * 2,
    };
    write_kv(&mut out, "tensors", tensor_count);
    out.push(b'\n');

    for (name, tensor) in &named {
        write_tensor_block(&mut out, name, tensor.shape(), tensor.data());
    }
    match &ckpt.optimizer {
        OptimizerSnapshot::Adam { m, v, .. } => {
            if m.len() != named.len() || v.len() != named.len() {
                return Err(Error::Shape(
                    "optimizer state does not match parameter count".into(),
                ));
            }
            for ((name, tensor), buf) in named.iter().zip(m) {
                check_state_len(name, tensor, buf)?;
                write_tensor_block(&mut out, &format!("opt.m.{name}"), tensor.shape(), buf);
            }
            for ((name, tensor), buf) in named.iter().zip(v) {
                check_state_len(name, tensor, buf)?;
                write_tensor_block(&mut out, &format!("opt.v.{name}"), tensor.shape(), buf);
            }
        }
        OptimizerSnapshot::Sgd { velocity, .. } => {
            if velocity.len() != named.len() {
                return Err(Error::Shape(
                    "optimizer state does not match parameter count".into(),
                ));
            }
            for ((name, tensor), buf) in named.iter().zip(velocity) {
                check_state_len(name, tensor, buf)?;
                write_tensor_block(&mut out, &format!("opt.vel.{name}"), tensor.shape(), buf);
            }
        }
    }
    // Blocks need at least one element; an empty history writes one pad
    // value that the recorded length ignores on load.
    let padded: &[f64] = if ckpt.loss_history.is_empty() {
        &[0.0]
    } else {
        &ckpt.loss_history
    };
    write_tensor_block(&mut out, "loss_history", &[padded.len()], padded);

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

fn check_state_len(name: &str, tensor: &Tensor, buf: &[f64]) -> Result<()> {
    if tensor.len() != buf.len() {
        return Err(Error::Shape(format!(
            "optimizer buffer for `{name}` has length {}, parameter has {}",
            buf.len(),
            tensor.len()
        )));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return Err(Error::format(self.path, "unexpected end of checkpoint"));
        }
        let line = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(self.path, "checkpoint header is not UTF-8"))?;
        self.pos += 1;
        Ok(line)
    }

    fn raw(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated tensor payload"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.line()? != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let mut header = BTreeMap::new();
    loop {
        let line = r.line()?;
        if line.is_empty() {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("bad header line `{line}`")))?;
        header.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<&String> {
        header
            .get(k)
            .ok_or_else(|| Error::format(path, format!("missing header key `{k}`")))
    };
    let parse_usize = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|e| Error::format(path, format!("bad `{k}`: {e}")))
    };
    let parse_u64 = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|e| Error::format(path, format!("bad `{k}`: {e}")))
    };
    let model = ModelConfig {
        variant: Variant::parse(get("variant")?)?,
        patch_size: parse_usize("patch_size")?,
        image_size: parse_usize("image_size")?,
        volume_depth: parse_usize("volume_depth")?,
        embed_dim: parse_usize("embed_dim")?,
        depth: parse_usize("depth")?,
        num_heads: parse_usize("num_heads")?,
        mlp_dim: parse_usize("mlp_dim")?,
        num_classes: parse_usize("num_classes")?,
        dropout: get("dropout")?
            .parse()
            .map_err(|e| Error::format(path, format!("bad `dropout`: {e}")))?,
    };
    model.validate()?;
    let epoch = parse_usize("epoch")?;
    let cursor = parse_usize("cursor")?;
    let step = parse_u64("step")?;
    let rng = RngState {
        seed: parse_u64("rng.seed")?,
        word_pos: get("rng.word_pos")?
            .parse()
            .map_err(|e| Error::format(path, format!("bad `rng.word_pos`: {e}")))?,
    };
    let optimizer_kind = get("optimizer")?.clone();
    let optimizer_step = parse_u64("optimizer.step")?;
    let history_len = parse_usize("loss_history")?;
    let tensor_count = parse_usize("tensors")?;

    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    let read_block = |r: &mut Reader| -> Result<(String, Tensor)> {
        let line = r.line()?;
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(Error::format(path, format!("bad tensor line `{line}`")));
        }
        let name = parts[1].to_string();
        let shape: Vec<usize> = parts[2]
            .split('x')
            .map(|d| {
                d.parse()
                    .map_err(|e| Error::format(path, format!("bad tensor dims: {e}")))
            })
            .collect::<Result<_>>()?;
        let len: usize = parts[3]
            .parse()
            .map_err(|e| Error::format(path, format!("bad tensor length: {e}")))?;
        let raw = r.raw(len * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        if r.raw(1)? != b"\n" {
            return Err(Error::format(path, "missing tensor terminator"));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| {
            Error::format(path, format!("tensor `{name}` is invalid: {e}"))
        })?;
        Ok((name, tensor))
    };
    for _ in 0..tensor_count {
        let (name, tensor) = read_block(&mut r)?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(Error::format(path, format!("duplicate tensor `{name}`")));
        }
    }
    let (hname, history_tensor) = read_block(&mut r)?;
    if hname != "loss_history" {
        return Err(Error::format(path, "missing loss history block"));
    }
    if history_len > history_tensor.len() {
        return Err(Error::format(
            path,
            format!(
                "loss history claims {history_len} entries but block has {}",
                history_tensor.len()
            ),
        ));
    }
    let loss_history: Vec<f64> = history_tensor.data()[..history_len].to_vec();

    let params = ModelParams::from_named(&model, &tensors)?;
    let named = params.named();
    let collect_state = |prefix: &str| -> Result<Vec<Vec<f64>>> {
        named
            .iter()
            .map(|(name, tensor)| {
                let key = format!("{prefix}.{name}");
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::format(path, format!("missing tensor `{key}`")))?;
                if t.len() != tensor.len() {
                    return Err(Error::format(path, format!("tensor `{key}` length mismatch")));
                }
                Ok(t.data().to_vec())
            })
            .collect()
    };
    let optimizer = match optimizer_kind.as_str() {
        "adam" => OptimizerSnapshot::Adam {
            step: optimizer_step,
            m: collect_state("opt.m")?,
            v: collect_state("opt.v")?,
        },
        "sgd" => OptimizerSnapshot::Sgd {
            momentum: get("optimizer.momentum")?
                .parse()
                .map_err(|e| Error::format(path, format!("bad momentum: {e}")))?,
            step: optimizer_step,
            velocity: collect_state("opt.vel")?,
        },
        other => {
            return Err(Error::format(path, format!("unknown optimizer `{other}`")));
        }
    };
    Ok(Checkpoint {
        model,
        params,
        optimizer,
        epoch,
        cursor,
        step,
        rng,
        loss_history,
    })
}
