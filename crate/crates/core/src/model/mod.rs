//! Backbone abstraction: a feature extractor whose last hidden layer is the
//! embedding, followed by a linear classifier head.
//!
//! The toy backbone is `avg-pool stem -> 3x3 conv blocks (ReLU) -> global
//! average pool -> linear embedding -> linear classifier`. All parameters
//! live in one flat `f64` vector so hashing, optimizer updates and
//! checkpointing operate on a single buffer.

mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::imaging::Image;
use ops::ConvGeom;

pub const DEFAULT_INPUT_SIZE: usize = 224;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_size: usize,
    pub channels: usize,
    /// Side of the fixed average-pooling stem.
    pub stem_pool: usize,
    pub conv_widths: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
    pub architecture_id: String,
}

impl ModelSpec {
    /// The desk-scale backbone: four conv blocks, 128-d embedding.
    pub fn toy(channels: usize, num_classes: usize) -> Self {
        Self {
            input_size: DEFAULT_INPUT_SIZE,
            channels,
            stem_pool: 4,
            conv_widths: vec![8, 16, 32, 64],
            conv_strides: vec![2, 2, 2, 1],
            embedding_dim: 128,
            num_classes,
            architecture_id: "toy-cnn-v1".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(invalid(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.stem_pool == 0 || self.input_size % self.stem_pool != 0 {
            return Err(invalid("input_size must be a multiple of stem_pool"));
        }
        if self.conv_widths.is_empty() || self.conv_widths.len() != self.conv_strides.len() {
            return Err(invalid("conv_widths and conv_strides must be non-empty and equal length"));
        }
        if self.conv_widths.contains(&0) || self.conv_strides.contains(&0) {
            return Err(invalid("conv widths and strides must be positive"));
        }
        if self.embedding_dim < 2 {
            return Err(invalid("embedding_dim must be at least 2"));
        }
        if self.num_classes < 2 {
            return Err(invalid("num_classes must be at least 2"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    geom: ConvGeom,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    convs: Vec<ConvLayer>,
    feat_dim: usize,
    embed_w: usize,
    embed_b: usize,
    cls_w: usize,
    cls_b: usize,
    total: usize,
}

impl Layout {
    fn new(spec: &ModelSpec) -> Self {
        let pooled_hw = spec.input_size / spec.stem_pool;
        let mut convs = Vec::with_capacity(spec.conv_widths.len());
        let (mut in_c, mut hw, mut off) = (spec.channels, pooled_hw, 0);
        for (&out_c, &stride) in spec.conv_widths.iter().zip(&spec.conv_strides) {
            let geom = ConvGeom::new(in_c, out_c, hw, stride);
            let w = off;
            let b = w + geom.weight_len();
            off = b + out_c;
            convs.push(ConvLayer { geom, w, b });
            in_c = out_c;
            hw = geom.out_hw;
        }
        let feat_dim = in_c;
        let embed_w = off;
        let embed_b = embed_w + spec.embedding_dim * feat_dim;
        let cls_w = embed_b + spec.embedding_dim;
        let cls_b = cls_w + spec.num_classes * spec.embedding_dim;
        let total = cls_b + spec.num_classes;
        Self {
            convs,
            feat_dim,
            embed_w,
            embed_b,
            cls_w,
            cls_b,
            total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

/// Penultimate-layer output of a model for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub source_role: Role,
    pub source_resolution: Option<u32>,
}

impl Embedding {
    pub fn new(vector: Vec<f64>, source_role: Role) -> Self {
        Self {
            vector,
            source_role,
            source_resolution: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Embedding and logits for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Loss gradients w.r.t. the model outputs for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub logits: Vec<f64>,
    pub embedding: Vec<f64>,
}

struct Tape {
    cols: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    out: Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    #[default]
    Random,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelHandle {
    spec: ModelSpec,
    layout_total: usize,
    params: Vec<f64>,
    frozen: bool,
}

impl ModelHandle {
    /// He-uniform initialization for conv and embedding weights, zero biases.
    pub fn init(spec: ModelSpec, seed: u64, head: HeadInit) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        let mut fill = |range: std::ops::Range<usize>, bound: f64, rng: &mut ChaCha8Rng| {
            for p in &mut params[range] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        for conv in &layout.convs {
            let fan_in = conv.geom.patch_len() as f64;
            fill(conv.w..conv.b, (6.0 / fan_in).sqrt(), &mut rng);
        }
        fill(
            layout.embed_w..layout.embed_b,
            (6.0 / layout.feat_dim as f64).sqrt(),
            &mut rng,
        );
        if head == HeadInit::Random {
            let bound = (6.0 / (spec.embedding_dim + spec.num_classes) as f64).sqrt();
            fill(layout.cls_w..layout.cls_b, bound, &mut rng);
        }
        Ok(Self {
            spec,
            layout_total: layout.total,
            params,
            frozen: false,
        })
    }

    /// Rebuilds a handle from a spec and a parameter vector. The result is
    /// never frozen.
    pub fn from_parts(spec: ModelSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let total = spec.param_count();
        if params.len() != total {
            return Err(invalid(format!(
                "parameter vector has {} entries, spec needs {total}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(Self {
            spec,
            layout_total: total,
            params,
            frozen: false,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout_total
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the model as frozen. Frozen models refuse gradient computation
    /// and parameter updates.
    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// A trainable copy with identical parameters.
    pub fn trainable_clone(&self) -> Self {
        Self {
            frozen: false,
            ..self.clone()
        }
    }

    /// Applies an in-place update to the parameters.
    pub fn update_params<F: FnOnce(&mut [f64])>(&mut self, f: F) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        f(&mut self.params);
        Ok(())
    }

    /// SHA-256 over the little-endian bit patterns of every parameter.
    pub fn param_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.params {
            hasher.update(p.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    fn role(&self) -> Role {
        if self.frozen {
            Role::Teacher
        } else {
            Role::Student
        }
    }

    fn check_input(&self, img: &Image) -> Result<()> {
        let s = self.spec.input_size;
        if img.dims() != (s, s) || img.channels() != self.spec.channels {
            return Err(invalid(format!(
                "expected {s}x{s}x{} input, got {}x{}x{}",
                self.spec.channels,
                img.height(),
                img.width(),
                img.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, img: &Image) -> Result<Forward> {
        self.check_input(img)?;
        Ok(self.run(img, false).out)
    }

    /// Embeddings for a batch. The role tag is `Teacher` for frozen models
    /// and `Student` otherwise. Vectors are not normalized.
    pub fn extract_features(&self, batch: &[Image]) -> Result<Vec<Embedding>> {
        batch.iter().try_for_each(|img| self.check_input(img))?;
        let role = self.role();
        Ok(batch
            .par_iter()
            .map(|img| Embedding::new(self.run(img, false).out.embedding, role))
            .collect())
    }

    /// Classifier logits for a batch, one row per input.
    pub fn classify(&self, batch: &[Image]) -> Result<Vec<Vec<f64>>> {
        batch.iter().try_for_each(|img| self.check_input(img))?;
        Ok(batch
            .par_iter()
            .map(|img| self.run(img, false).out.logits)
            .collect())
    }

    /// Forward pass plus the gradient of a scalar loss w.r.t. every
    /// parameter. `loss_grad` maps the forward outputs to the loss gradient
    /// w.r.t. logits and embedding.
    pub fn gradient<F>(&self, img: &Image, loss_grad: F) -> Result<(Forward, Vec<f64>)>
    where
        F: FnOnce(&Forward) -> OutputGrad,
    {
        if self.frozen {
            return Err(Error::Frozen);
        }
        self.check_input(img)?;
        let tape = self.run(img, true);
        let seed = loss_grad(&tape.out);
        if seed.logits.len() != self.spec.num_classes
            || seed.embedding.len() != self.spec.embedding_dim
        {
            return Err(invalid("output gradient has wrong shape"));
        }
        let grads = self.backward(&tape, &seed);
        Ok((tape.out, grads))
    }

    fn stem(&self, img: &Image) -> Vec<f64> {
        let k = self.spec.stem_pool;
        let out_hw = self.spec.input_size / k;
        let c = self.spec.channels;
        let w = img.width();
        let data = img.data();
        let norm = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; c * out_hw * out_hw];
        for oy in 0..out_hw {
            for dy in 0..k {
                let row = &data[(oy * k + dy) * w * c..(oy * k + dy + 1) * w * c];
                for ox in 0..out_hw {
                    for dx in 0..k {
                        let base = (ox * k + dx) * c;
                        for ch in 0..c {
                            out[(ch * out_hw + oy) * out_hw + ox] += row[base + ch];
                        }
                    }
                }
            }
        }
        for v in &mut out {
            *v = *v * norm - 0.5;
        }
        out
    }

    fn run(&self, img: &Image, keep: bool) -> Tape {
        let layout = Layout::new(&self.spec);
        let p = &self.params;
        let mut x = self.stem(img);
        let mut cols = Vec::new();
        let mut acts = Vec::new();
        for conv in &layout.convs {
            let g = &conv.geom;
            let col = ops::im2col(g, &x);
            let mut z = ops::conv_matmul(g, &p[conv.w..conv.b], &p[conv.b..conv.b + g.out_c], &col);
            for v in &mut z {
                *v = v.max(0.0);
            }
            if keep {
                cols.push(col);
                acts.push(z.clone());
            }
            x = z;
        }
        let n = layout.convs.last().expect("validated").geom.out_pixels();
        let pooled: Vec<f64> = x
            .chunks_exact(n)
            .map(|plane| plane.iter().sum::<f64>() / n as f64)
            .collect();
        let embedding = ops::linear(
            &p[layout.embed_w..layout.embed_b],
            &p[layout.embed_b..layout.cls_w],
            &pooled,
        );
        let logits = ops::linear(
            &p[layout.cls_w..layout.cls_b],
            &p[layout.cls_b..layout.total],
            &embedding,
        );
        Tape {
            cols,
            acts,
            pooled,
            out: Forward { embedding, logits },
        }
    }

    fn backward(&self, tape: &Tape, seed: &OutputGrad) -> Vec<f64> {
        let layout = Layout::new(&self.spec);
        let p = &self.params;
        let mut grads = vec![0.0; layout.total];

        let (head, rest) = grads.split_at_mut(layout.cls_w);
        let (d_cls_w, d_cls_b) = rest.split_at_mut(layout.cls_b - layout.cls_w);
        let mut d_emb = ops::linear_backward(
            &p[layout.cls_w..layout.cls_b],
            &tape.out.embedding,
            &seed.logits,
            d_cls_w,
            d_cls_b,
        );
        for (d, s) in d_emb.iter_mut().zip(&seed.embedding) {
            *d += s;
        }

        let (convs_grad, embed_grad) = head.split_at_mut(layout.embed_w);
        let (d_emb_w, d_emb_b) = embed_grad.split_at_mut(layout.embed_b - layout.embed_w);
        let d_pooled = ops::linear_backward(
            &p[layout.embed_w..layout.embed_b],
            &tape.pooled,
            &d_emb,
            d_emb_w,
            d_emb_b,
        );

        let last = layout.convs.last().expect("validated").geom;
        let n = last.out_pixels();
        let mut d_act: Vec<f64> = d_pooled
            .iter()
            .flat_map(|&g| std::iter::repeat(g / n as f64).take(n))
            .collect();

        for (i, conv) in layout.convs.iter().enumerate().rev() {
            let g = &conv.geom;
            for (d, a) in d_act.iter_mut().zip(&tape.acts[i]) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let (dw_part, db_part) = convs_grad[conv.w..conv.b + g.out_c].split_at_mut(g.weight_len());
            let d_col = ops::conv_backward(
                g,
                &p[conv.w..conv.b],
                &tape.cols[i],
                &d_act,
                dw_part,
                db_part,
                i > 0,
            );
            if let Some(d_col) = d_col {
                d_act = ops::col2im(g, &d_col);
            }
        }
        grads
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
