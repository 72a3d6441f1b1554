//! Vision transformer classifier: patch embedding, class token, learned
//! positional embeddings, pre-LN encoder blocks with multi-head
//! self-attention and GELU MLPs, and a 2-class head read from the class
//! token. A 2D variant consumes 224x224 grayscale slices replicated to
//! three channels (7x7 patches); a 3D variant consumes 32-slice volumes
//! (8x8x8 patches).

pub mod checkpoint;
pub mod patchify;

use crate::error::{Error, Result};
use crate::eval::ClassLabel;
use crate::rng::DetRng;
use crate::tensor::{Tape, Tensor, Var};
use patchify::{patchify2d, patchify3d, replicate_channels};

const LN_EPS: f64 = 1e-5;
const EMBED_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Vit2d,
    Vit3d,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "vit2d" => Ok(Variant::Vit2d),
            "vit3d" => Ok(Variant::Vit3d),
            other => Err(Error::Config(format!(
                "unknown model variant `{other}` (expected vit2d or vit3d)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vit2d => "vit2d",
            Variant::Vit3d => "vit3d",
        }
    }
}

/// Architecture hyperparameters. Every parameter tensor shape is a pure
/// function of this struct.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub patch_size: usize,
    /// Side length of the square input plane.
    pub image_size: usize,
    /// Number of slices consumed by the 3D variant.
    pub volume_depth: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn vit2d() -> Self {
        ModelConfig {
            variant: Variant::Vit2d,
            patch_size: 7,
            image_size: 224,
            volume_depth: 1,
            embed_dim: 128,
            depth: 6,
            num_heads: 8,
            mlp_dim: 256,
            num_classes: 2,
            dropout: 0.1,
        }
    }

    pub fn vit3d() -> Self {
        ModelConfig {
            variant: Variant::Vit3d,
            patch_size: 8,
            image_size: 224,
            volume_depth: 32,
            embed_dim: 128,
            depth: 6,
            num_heads: 8,
            mlp_dim: 256,
            num_classes: 2,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.variant == Variant::Vit3d && !self.volume_depth.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "volume depth {} not divisible by patch size {}",
                self.volume_depth, self.patch_size
            )));
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if self.num_classes != 2 {
            return Err(Error::Config("classifier is binary: num_classes must be 2".into()));
        }
        if self.depth == 0 || self.embed_dim == 0 || self.mlp_dim == 0 {
            return Err(Error::Config("depth, embed_dim and mlp_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        let per_side = self.image_size / self.patch_size;
        match self.variant {
            Variant::Vit2d => per_side * per_side,
            Variant::Vit3d => (self.volume_depth / self.patch_size) * per_side * per_side,
        }
    }

    /// Flattened patch length before projection.
    pub fn token_len(&self) -> usize {
        let p = self.patch_size;
        match self.variant {
            Variant::Vit2d => 3 * p * p,
            Variant::Vit3d => p * p * p,
        }
    }

    /// Patches plus the class token.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Total learned parameter count.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let per_block = 2 * d                      // ln1
            + d * 3 * d + 3 * d                    // qkv
            + d * d + d                            // attention output proj
            + 2 * d                                // ln2
            + d * self.mlp_dim + self.mlp_dim      // mlp fc1
            + self.mlp_dim * d + d; // mlp fc2
        self.token_len() * d + d                   // patch projection
            + d                                    // class token
            + self.seq_len() * d                   // positional embeddings
            + self.depth * per_block
            + 2 * d                                // final ln
            + d * self.num_classes + self.num_classes // head
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub qkv_w: Tensor,
    pub qkv_b: Tensor,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub patch_w: Tensor,
    pub patch_b: Tensor,
    pub cls_token: Tensor,
    pub pos_embed: Tensor,
    pub blocks: Vec<BlockParams>,
    pub final_gamma: Tensor,
    pub final_beta: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

fn trunc_normal_tensor(shape: Vec<usize>, std: f64, rng: &mut DetRng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.trunc_normal(std)).collect();
    Tensor::new(shape, data).expect("init values are finite")
}

/// Glorot-scaled truncated normal for a [fan_in, fan_out] projection.
fn xavier_tensor(fan_in: usize, fan_out: usize, rng: &mut DetRng) -> Tensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    trunc_normal_tensor(vec![fan_in, fan_out], std, rng)
}

impl ModelParams {
    /// Glorot-scaled truncated-normal projections (the reference ViT
    /// implementations scale attention/MLP kernels by fan-in; a flat small
    /// std stalls optimization at desk-scale widths), truncated-normal
    /// (std 0.02) positional embeddings, zero biases and class token, unit
    /// layer-norm gains.
    pub fn init(config: &ModelConfig, rng: &mut DetRng) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let patch_w = xavier_tensor(config.token_len(), d, rng);
        let pos_embed = trunc_normal_tensor(vec![config.seq_len(), d], EMBED_INIT_STD, rng);
        let mut blocks = Vec::with_capacity(config.depth);
        for _ in 0..config.depth {
            blocks.push(BlockParams {
                ln1_gamma: Tensor::full(vec![d], 1.0),
                ln1_beta: Tensor::zeros(vec![d]),
                qkv_w: xavier_tensor(d, 3 * d, rng),
                qkv_b: Tensor::zeros(vec![3 * d]),
                proj_w: xavier_tensor(d, d, rng),
                proj_b: Tensor::zeros(vec![d]),
                ln2_gamma: Tensor::full(vec![d], 1.0),
                ln2_beta: Tensor::zeros(vec![d]),
                fc1_w: xavier_tensor(d, config.mlp_dim, rng),
                fc1_b: Tensor::zeros(vec![config.mlp_dim]),
                fc2_w: xavier_tensor(config.mlp_dim, d, rng),
                fc2_b: Tensor::zeros(vec![d]),
            });
        }
        Ok(ModelParams {
            patch_w,
            patch_b: Tensor::zeros(vec![d]),
            cls_token: Tensor::zeros(vec![1, d]),
            pos_embed,
            blocks,
            final_gamma: Tensor::full(vec![d], 1.0),
            final_beta: Tensor::zeros(vec![d]),
            head_w: xavier_tensor(d, config.num_classes, rng),
            head_b: Tensor::zeros(vec![config.num_classes]),
        })
    }

    /// All-zero parameters (useful as a neutral network in tests).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let blocks = (0..config.depth)
            .map(|_| BlockParams {
                ln1_gamma: Tensor::zeros(vec![d]),
                ln1_beta: Tensor::zeros(vec![d]),
                qkv_w: Tensor::zeros(vec![d, 3 * d]),
                qkv_b: Tensor::zeros(vec![3 * d]),
                proj_w: Tensor::zeros(vec![d, d]),
                proj_b: Tensor::zeros(vec![d]),
                ln2_gamma: Tensor::zeros(vec![d]),
                ln2_beta: Tensor::zeros(vec![d]),
                fc1_w: Tensor::zeros(vec![d, config.mlp_dim]),
                fc1_b: Tensor::zeros(vec![config.mlp_dim]),
                fc2_w: Tensor::zeros(vec![config.mlp_dim, d]),
                fc2_b: Tensor::zeros(vec![d]),
            })
            .collect();
        Ok(ModelParams {
            patch_w: Tensor::zeros(vec![config.token_len(), d]),
            patch_b: Tensor::zeros(vec![d]),
            cls_token: Tensor::zeros(vec![1, d]),
            pos_embed: Tensor::zeros(vec![config.seq_len(), d]),
            blocks,
            final_gamma: Tensor::zeros(vec![d]),
            final_beta: Tensor::zeros(vec![d]),
            head_w: Tensor::zeros(vec![d, config.num_classes]),
            head_b: Tensor::zeros(vec![config.num_classes]),
        })
    }

    /// Stable (name, tensor) traversal used by the optimizer and checkpoints.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("patch_proj.w".into(), &self.patch_w),
            ("patch_proj.b".into(), &self.patch_b),
            ("cls_token".into(), &self.cls_token),
            ("pos_embed".into(), &self.pos_embed),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.ln1.gamma"), &b.ln1_gamma));
            out.push((format!("block{i}.ln1.beta"), &b.ln1_beta));
            out.push((format!("block{i}.qkv.w"), &b.qkv_w));
            out.push((format!("block{i}.qkv.b"), &b.qkv_b));
            out.push((format!("block{i}.proj.w"), &b.proj_w));
            out.push((format!("block{i}.proj.b"), &b.proj_b));
            out.push((format!("block{i}.ln2.gamma"), &b.ln2_gamma));
            out.push((format!("block{i}.ln2.beta"), &b.ln2_beta));
            out.push((format!("block{i}.mlp.fc1.w"), &b.fc1_w));
            out.push((format!("block{i}.mlp.fc1.b"), &b.fc1_b));
            out.push((format!("block{i}.mlp.fc2.w"), &b.fc2_w));
            out.push((format!("block{i}.mlp.fc2.b"), &b.fc2_b));
        }
        out.push(("final_ln.gamma".into(), &self.final_gamma));
        out.push(("final_ln.beta".into(), &self.final_beta));
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("patch_proj.w".into(), &mut self.patch_w),
            ("patch_proj.b".into(), &mut self.patch_b),
            ("cls_token".into(), &mut self.cls_token),
            ("pos_embed".into(), &mut self.pos_embed),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.ln1.gamma"), &mut b.ln1_gamma));
            out.push((format!("block{i}.ln1.beta"), &mut b.ln1_beta));
            out.push((format!("block{i}.qkv.w"), &mut b.qkv_w));
            out.push((format!("block{i}.qkv.b"), &mut b.qkv_b));
            out.push((format!("block{i}.proj.w"), &mut b.proj_w));
            out.push((format!("block{i}.proj.b"), &mut b.proj_b));
            out.push((format!("block{i}.ln2.gamma"), &mut b.ln2_gamma));
            out.push((format!("block{i}.ln2.beta"), &mut b.ln2_beta));
            out.push((format!("block{i}.mlp.fc1.w"), &mut b.fc1_w));
            out.push((format!("block{i}.mlp.fc1.b"), &mut b.fc1_b));
            out.push((format!("block{i}.mlp.fc2.w"), &mut b.fc2_w));
            out.push((format!("block{i}.mlp.fc2.b"), &mut b.fc2_b));
        }
        out.push(("final_ln.gamma".into(), &mut self.final_gamma));
        out.push(("final_ln.beta".into(), &mut self.final_beta));
        out.push(("head.w".into(), &mut self.head_w));
        out.push(("head.b".into(), &mut self.head_b));
        out
    }

    /// Rebuilds parameters from named tensors, checking shapes.
    pub fn from_named(
        config: &ModelConfig,
        tensors: &std::collections::BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let mut params = ModelParams::zeros(config)?;
        for (name, slot) in params.named_mut() {
            let t = tensors
                .get(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(params)
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

struct BoundBlock {
    ln1_gamma: Var,
    ln1_beta: Var,
    qkv_w: Var,
    qkv_b: Var,
    proj_w: Var,
    proj_b: Var,
    ln2_gamma: Var,
    ln2_beta: Var,
    fc1_w: Var,
    fc1_b: Var,
    fc2_w: Var,
    fc2_b: Var,
}

/// Parameters registered as leaves on one tape. Binding once and running
/// several samples accumulates their gradients across the whole batch.
pub struct BoundParams {
    patch_w: Var,
    patch_b: Var,
    cls_token: Var,
    pos_embed: Var,
    blocks: Vec<BoundBlock>,
    final_gamma: Var,
    final_beta: Var,
    head_w: Var,
    head_b: Var,
}

impl BoundParams {
    /// Vars in [`ModelParams::named`] order.
    pub fn ordered_vars(&self) -> Vec<Var> {
        let mut out = vec![self.patch_w, self.patch_b, self.cls_token, self.pos_embed];
        for b in &self.blocks {
            out.extend([
                b.ln1_gamma, b.ln1_beta, b.qkv_w, b.qkv_b, b.proj_w, b.proj_b, b.ln2_gamma,
                b.ln2_beta, b.fc1_w, b.fc1_b, b.fc2_w, b.fc2_b,
            ]);
        }
        out.extend([self.final_gamma, self.final_beta, self.head_w, self.head_b]);
        out
    }
}

pub fn bind_params(tape: &mut Tape, params: &ModelParams) -> Result<BoundParams> {
    let mut blocks = Vec::with_capacity(params.blocks.len());
    let patch_w = tape.leaf(&params.patch_w)?;
    let patch_b = tape.leaf(&params.patch_b)?;
    let cls_token = tape.leaf(&params.cls_token)?;
    let pos_embed = tape.leaf(&params.pos_embed)?;
    for b in &params.blocks {
        blocks.push(BoundBlock {
            ln1_gamma: tape.leaf(&b.ln1_gamma)?,
            ln1_beta: tape.leaf(&b.ln1_beta)?,
            qkv_w: tape.leaf(&b.qkv_w)?,
            qkv_b: tape.leaf(&b.qkv_b)?,
            proj_w: tape.leaf(&b.proj_w)?,
            proj_b: tape.leaf(&b.proj_b)?,
            ln2_gamma: tape.leaf(&b.ln2_gamma)?,
            ln2_beta: tape.leaf(&b.ln2_beta)?,
            fc1_w: tape.leaf(&b.fc1_w)?,
            fc1_b: tape.leaf(&b.fc1_b)?,
            fc2_w: tape.leaf(&b.fc2_w)?,
            fc2_b: tape.leaf(&b.fc2_b)?,
        });
    }
    Ok(BoundParams {
        patch_w,
        patch_b,
        cls_token,
        pos_embed,
        blocks,
        final_gamma: tape.leaf(&params.final_gamma)?,
        final_beta: tape.leaf(&params.final_beta)?,
        head_w: tape.leaf(&params.head_w)?,
        head_b: tape.leaf(&params.head_b)?,
    })
}

/// After backward, copies every parameter gradient off the tape.
pub fn copy_grads(tape: &Tape, bound: &BoundParams, params: &mut ModelParams) -> Result<()> {
    let vars = bound.ordered_vars();
    let named = params.named_mut();
    debug_assert_eq!(vars.len(), named.len());
    for (var, (_, tensor)) in vars.into_iter().zip(named) {
        tensor.set_grad(tape.grad(var).to_vec())?;
    }
    Ok(())
}

/// Dropout is active only while training; inference is deterministic.
pub enum ForwardMode<'a> {
    Train(&'a mut DetRng),
    Infer,
}

/// Logits plus the attention maps of every (block, head), for inspection.
pub struct ForwardOutput {
    pub logits: Var,
    pub attention: Vec<Var>,
}

/// Tokenizes a raw input plane or volume for the configured variant.
pub fn tokens_for_input(config: &ModelConfig, input: &Tensor) -> Result<Tensor> {
    match config.variant {
        Variant::Vit2d => {
            if input.shape() != [config.image_size, config.image_size] {
                return Err(Error::Shape(format!(
                    "2D input must be [{0}, {0}], got {1:?}",
                    config.image_size,
                    input.shape()
                )));
            }
            let channels = replicate_channels(input, 3)?;
            patchify2d(&channels, config.patch_size)
        }
        Variant::Vit3d => {
            if input.shape() != [config.volume_depth, config.image_size, config.image_size] {
                return Err(Error::Shape(format!(
                    "3D input must be [{}, {1}, {1}], got {2:?}",
                    config.volume_depth,
                    config.image_size,
                    input.shape()
                )));
            }
            patchify3d(input, config.patch_size)
        }
    }
}

/// Runs the encoder over pre-tokenized input; returns `[1, 2]` logits.
pub fn forward_tokens(
    tape: &mut Tape,
    config: &ModelConfig,
    bound: &BoundParams,
    tokens: &Tensor,
    mode: &mut ForwardMode<'_>,
) -> Result<ForwardOutput> {
    if tokens.shape() != [config.num_patches(), config.token_len()] {
        return Err(Error::Shape(format!(
            "tokens {:?} do not match config ({} patches of length {})",
            tokens.shape(),
            config.num_patches(),
            config.token_len()
        )));
    }
    let d = config.embed_dim;
    let hd = config.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut attention = Vec::with_capacity(config.depth * config.num_heads);

    let t = tape.leaf(tokens)?;
    let mut x = tape.matmul(t, bound.patch_w)?;
    x = tape.add_row(x, bound.patch_b)?;
    x = tape.concat_rows(&[bound.cls_token, x])?;
    x = tape.add(x, bound.pos_embed)?;
    x = apply_dropout(tape, x, config, mode)?;

    for block in &bound.blocks {
        let h = tape.layer_norm(x, block.ln1_gamma, block.ln1_beta, LN_EPS)?;
        let qkv = tape.matmul(h, block.qkv_w)?;
        let qkv = tape.add_row(qkv, block.qkv_b)?;
        let q = tape.slice_cols(qkv, 0, d)?;
        let k = tape.slice_cols(qkv, d, d)?;
        let v = tape.slice_cols(qkv, 2 * d, d)?;
        let mut heads = Vec::with_capacity(config.num_heads);
        for head in 0..config.num_heads {
            let qh = tape.slice_cols(q, head * hd, hd)?;
            let kh = tape.slice_cols(k, head * hd, hd)?;
            let vh = tape.slice_cols(v, head * hd, hd)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let att = tape.softmax(scores)?;
            attention.push(att);
            heads.push(tape.matmul(att, vh)?);
        }
        let merged = tape.concat_cols(&heads)?;
        let mut o = tape.matmul(merged, block.proj_w)?;
        o = tape.add_row(o, block.proj_b)?;
        o = apply_dropout(tape, o, config, mode)?;
        x = tape.add(x, o)?;

        let h2 = tape.layer_norm(x, block.ln2_gamma, block.ln2_beta, LN_EPS)?;
        let mut m = tape.matmul(h2, block.fc1_w)?;
        m = tape.add_row(m, block.fc1_b)?;
        m = tape.gelu(m)?;
        m = tape.matmul(m, block.fc2_w)?;
        m = tape.add_row(m, block.fc2_b)?;
        m = apply_dropout(tape, m, config, mode)?;
        x = tape.add(x, m)?;
    }

    let x = tape.layer_norm(x, bound.final_gamma, bound.final_beta, LN_EPS)?;
    let cls = tape.slice_rows(x, 0, 1)?;
    let mut logits = tape.matmul(cls, bound.head_w)?;
    logits = tape.add_row(logits, bound.head_b)?;
    Ok(ForwardOutput { logits, attention })
}

fn apply_dropout(
    tape: &mut Tape,
    x: Var,
    config: &ModelConfig,
    mode: &mut ForwardMode<'_>,
) -> Result<Var> {
    match mode {
        ForwardMode::Train(rng) if config.dropout > 0.0 => tape.dropout(x, config.dropout, rng),
        _ => Ok(x),
    }
}

/// Tokenize, bind and run one input on a fresh section of the tape.
pub fn forward(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &ModelParams,
    input: &Tensor,
    mode: &mut ForwardMode<'_>,
) -> Result<ForwardOutput> {
    let tokens = tokens_for_input(config, input)?;
    let bound = bind_params(tape, params)?;
    forward_tokens(tape, config, &bound, &tokens, mode)
}

/// COVID probability for one preprocessed input; dropout disabled.
pub fn predict(config: &ModelConfig, params: &ModelParams, input: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, config, params, input, &mut ForwardMode::Infer)?;
    let probs = tape.softmax(out.logits)?;
    Ok(tape.value(probs)[ClassLabel::Covid.index()])
}
