//! Context-gated sequential-parallel hybrid transformer with an attentive
//! clinical encoder and a fused regression head.
//!
//! Per CT slice:
//!
//! ```text
//! image ─conv─┐
//!             ⊙── gated ─┬─ CNN (parallel) ──────── GAP ─────────┐
//! mask ──conv─┘          └─ CNN (sequential) → tokens → ViT → mean ┼─ concat → MLP → slope
//! clinical (4) ── attentive tabular encoder ───────────────────────┘
//! ```

pub mod config;
pub mod input;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use config::{Branches, ClinicalEncoderConfig, ModelConfig, VitConfig};
pub use input::{prepare_slice, SliceInput};

use crate::error::{Error, Result};
use crate::nn::{Graph, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Block {
    ln1: Norm,
    qkv: Linear,
    proj: Linear,
    ln2: Norm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Step {
    attentive: Linear,
    transformer: Linear,
    decision: Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Ids {
    gate_image: Conv,
    gate_mask: Conv,
    local: Vec<Conv>,
    sequential: Vec<Conv>,
    token_proj: Linear,
    pos_embed: ParamId,
    blocks: Vec<Block>,
    final_norm: Norm,
    clin_initial: Linear,
    clin_steps: Vec<Step>,
    head_fc1: Linear,
    head_fc2: Linear,
}

/// Mean and standard deviation used to standardize slope targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub sd: f64,
}

impl TargetStats {
    pub const IDENTITY: TargetStats = TargetStats { mean: 0.0, sd: 1.0 };

    /// Population statistics; a zero spread falls back to unit scale.
    pub fn from_targets(targets: &[f64]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Invalid("no targets".into()));
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let sd = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(TargetStats {
            mean,
            sd: if sd > 1e-8 { sd } else { 1.0 },
        })
    }

    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    pub fn destandardize(&self, v: f64) -> f64 {
        v * self.sd + self.mean
    }
}

/// Predicted decline rate, mL/week.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopePrediction {
    pub value: f64,
}

/// Handles to intermediate values of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    /// `[1, 1]` standardized slope.
    pub output: Option<Var>,
    pub gated: Option<Var>,
    pub local: Option<Var>,
    pub global: Option<Var>,
    pub clinical: Option<Var>,
    /// Softmax weights, `[tokens, tokens]`, block-major then head.
    pub attention: Vec<Var>,
    /// Sparsemax feature masks of the clinical encoder, `[1, 4]` per step.
    pub feature_masks: Vec<Var>,
}

impl ForwardTrace {
    pub fn output(&self) -> Var {
        self.output.expect("forward pass produced an output")
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, shape: &[usize], sd: f64) -> Vec<f64> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, sd).expect("valid sd");
        (0..n).map(|_| dist.sample(&mut self.rng)).collect()
    }
}

struct Registrar<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    init: Init,
}

impl<T: Real> Registrar<'_, T> {
    fn tensor(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<ParamId> {
        self.store.register(name, Tensor::from_f64(shape, &data)?, true)
    }

    fn constant(&mut self, name: &str, shape: &[usize], v: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        self.tensor(name, shape, vec![v; n])
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        let w = self.init.normal(&[fan_in, fan_out], (1.0 / fan_in as f64).sqrt());
        Ok(Linear {
            w: self.tensor(&format!("{name}.w"), &[fan_in, fan_out], w)?,
            b: self.constant(&format!("{name}.b"), &[fan_out], 0.0)?,
        })
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Conv> {
        let shape = [c_out, c_in, k, k];
        let w = self.init.normal(&shape, (2.0 / (c_in * k * k) as f64).sqrt());
        Ok(Conv {
            w: self.tensor(&format!("{name}.w"), &shape, w)?,
            b: self.constant(&format!("{name}.b"), &[c_out], 0.0)?,
        })
    }

    fn norm(&mut self, name: &str, dim: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.constant(&format!("{name}.gain"), &[dim], 1.0)?,
            bias: self.constant(&format!("{name}.bias"), &[dim], 0.0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    config: ModelConfig,
    ids: Ids,
}

impl HybridModel {
    /// Registers freshly initialized parameters in `store`.
    pub fn register<T: Real>(config: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = Registrar {
            store,
            init: Init {
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
        };
        let c = config;
        let g = c.gate_channels;
        let gate_image = r.conv("gate.image", 1, g, c.gate_kernel)?;
        let gate_mask = r.conv("gate.mask", 1, g, c.gate_kernel)?;

        let stages = |prefix: &str, r: &mut Registrar<'_, T>| -> Result<Vec<Conv>> {
            let mut c_in = g;
            let mut out = Vec::new();
            for (i, &c_out) in c.cnn_channels.iter().enumerate() {
                out.push(r.conv(&format!("{prefix}.conv{i}"), c_in, c_out, 3)?);
                c_in = c_out;
            }
            Ok(out)
        };
        let local = stages("local", &mut r)?;
        let sequential = stages("sequential", &mut r)?;

        let e = c.vit.embed_dim;
        let tokens = c.tokens_grid() * c.tokens_grid();
        let token_proj = r.linear("vit.proj", c.local_dim(), e)?;
        let pos = r.init.normal(&[tokens, e], 0.02);
        let pos_embed = r.tensor("vit.pos", &[tokens, e], pos)?;
        let mut blocks = Vec::new();
        for i in 0..c.vit.depth {
            let p = format!("vit.block{i}");
            blocks.push(Block {
                ln1: r.norm(&format!("{p}.ln1"), e)?,
                qkv: r.linear(&format!("{p}.attn.qkv"), e, 3 * e)?,
                proj: r.linear(&format!("{p}.attn.proj"), e, e)?,
                ln2: r.norm(&format!("{p}.ln2"), e)?,
                fc1: r.linear(&format!("{p}.mlp.fc1"), e, c.vit.mlp_ratio * e)?,
                fc2: r.linear(&format!("{p}.mlp.fc2"), c.vit.mlp_ratio * e, e)?,
            });
        }
        let final_norm = r.norm("vit.norm", e)?;

        let h = c.clinical.hidden_dim;
        let clin_initial = r.linear("clinical.initial", 4, 2 * h)?;
        let mut clin_steps = Vec::new();
        for i in 0..c.clinical.steps {
            let p = format!("clinical.step{i}");
            clin_steps.push(Step {
                attentive: r.linear(&format!("{p}.attentive"), h, 4)?,
                transformer: r.linear(&format!("{p}.transformer"), 4, 2 * h)?,
                decision: r.linear(&format!("{p}.decision"), h, c.clinical.out_dim)?,
            });
        }

        let head_fc1 = r.linear("head.fc1", c.fusion_input_dim(), c.fusion_hidden_dim)?;
        let head_fc2 = r.linear("head.fc2", c.fusion_hidden_dim, 1)?;

        Ok(HybridModel {
            config: config.clone(),
            ids: Ids {
                gate_image,
                gate_mask,
                local,
                sequential,
                token_proj,
                pos_embed,
                blocks,
                final_norm,
                clin_initial,
                clin_steps,
                head_fc1,
                head_fc2,
            },
        })
    }

    /// New model with its own parameter store.
    pub fn init<T: Real>(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let model = HybridModel::register(config, &mut store, seed)?;
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Sets both gate convolutions to a centred unit tap with zero bias, so
    /// the gate computes `image ⊙ mask` on every channel.
    pub fn set_gate_identity<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let k = self.config.gate_kernel;
        let g = self.config.gate_channels;
        for conv in [self.ids.gate_image, self.ids.gate_mask] {
            let mut w = vec![T::zero(); g * k * k];
            for ch in 0..g {
                w[ch * k * k + (k / 2) * k + k / 2] = T::one();
            }
            store.set_value(conv.w, Tensor::new(&[g, 1, k, k], w)?)?;
            store.set_value(conv.b, Tensor::zeros(&[g]))?;
        }
        Ok(())
    }

    /// Zeroes the learned positional embeddings.
    pub fn zero_positions<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let shape = store.value(self.ids.pos_embed).shape().to_vec();
        store.set_value(self.ids.pos_embed, Tensor::zeros(&shape))
    }

    fn conv<T: Real>(g: &mut Graph<'_, T>, x: Var, conv: Conv, stride: usize, pad: usize) -> Result<Var> {
        let w = g.param(conv.w);
        let b = g.param(conv.b);
        g.conv2d(x, w, Some(b), stride, pad)
    }

    /// `conv(image) ⊙ conv(mask)`, `[gate_channels, S, S]`.
    pub fn context_gate<T: Real>(&self, g: &mut Graph<'_, T>, image: Var, mask: Var) -> Result<Var> {
        if g.value(image).shape() != g.value(mask).shape() {
            return Err(Error::Shape(format!(
                "image {:?} vs mask {:?}",
                g.value(image).shape(),
                g.value(mask).shape()
            )));
        }
        let pad = self.config.gate_kernel / 2;
        let a = Self::conv(g, image, self.ids.gate_image, 1, pad)?;
        let b = Self::conv(g, mask, self.ids.gate_mask, 1, pad)?;
        g.mul(a, b)
    }

    fn cnn_stages<T: Real>(g: &mut Graph<'_, T>, mut x: Var, stages: &[Conv]) -> Result<Var> {
        for &conv in stages {
            let y = Self::conv(g, x, conv, 2, 1)?;
            x = g.gelu(y);
        }
        Ok(x)
    }

    /// Parallel CNN branch: stride-2 stages then global average pooling.
    pub fn local_branch<T: Real>(&self, g: &mut Graph<'_, T>, gated: Var) -> Result<Var> {
        let x = Self::cnn_stages(g, gated, &self.ids.local)?;
        g.global_avg_pool(x)
    }

    /// Token sequence `[tokens, channels]` from the sequential CNN.
    pub fn tokens<T: Real>(&self, g: &mut Graph<'_, T>, gated: Var) -> Result<Var> {
        let x = Self::cnn_stages(g, gated, &self.ids.sequential)?;
        let shape = g.value(x).shape().to_vec();
        let flat = g.reshape(x, &[shape[0], shape[1] * shape[2]])?;
        g.transpose(flat)
    }

    /// Transformer over `[tokens, channels]`, mean-pooled to `[1, embed]`.
    pub fn transformer<T: Real>(&self, g: &mut Graph<'_, T>, tokens: Var, trace: &mut ForwardTrace) -> Result<Var> {
        let e = self.config.vit.embed_dim;
        let heads = self.config.vit.heads;
        let d = e / heads;
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();

        let proj = g.linear(tokens, self.ids.token_proj.w, self.ids.token_proj.b)?;
        let pos = g.param(self.ids.pos_embed);
        let mut x = g.add(proj, pos)?;
        for block in &self.ids.blocks {
            let h = g.layer_norm(x, block.ln1.gain, block.ln1.bias)?;
            let qkv = g.linear(h, block.qkv.w, block.qkv.b)?;
            let mut outs = Vec::with_capacity(heads);
            for head in 0..heads {
                let q = g.slice_cols(qkv, head * d, d)?;
                let k = g.slice_cols(qkv, e + head * d, d)?;
                let v = g.slice_cols(qkv, 2 * e + head * d, d)?;
                let kt = g.transpose(k)?;
                let scores = g.matmul(q, kt)?;
                let scores = g.scale(scores, inv_sqrt_d);
                let attn = g.softmax_rows(scores)?;
                trace.attention.push(attn);
                outs.push(g.matmul(attn, v)?);
            }
            let merged = g.concat_cols(&outs)?;
            let attn_out = g.linear(merged, block.proj.w, block.proj.b)?;
            x = g.add(x, attn_out)?;

            let h = g.layer_norm(x, block.ln2.gain, block.ln2.bias)?;
            let h = g.linear(h, block.fc1.w, block.fc1.b)?;
            let h = g.gelu(h);
            let h = g.linear(h, block.fc2.w, block.fc2.b)?;
            x = g.add(x, h)?;
        }
        let x = g.layer_norm(x, self.ids.final_norm.gain, self.ids.final_norm.bias)?;
        g.mean_rows(x)
    }

    /// Both image branches: `(local [1, C], global [1, E])`.
    pub fn forward_image_branches<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        gated: Var,
        trace: &mut ForwardTrace,
    ) -> Result<(Var, Var)> {
        let local = self.local_branch(g, gated)?;
        let tokens = self.tokens(g, gated)?;
        let global = self.transformer(g, tokens, trace)?;
        Ok((local, global))
    }

    fn glu<T: Real>(g: &mut Graph<'_, T>, x: Var, half: usize) -> Result<Var> {
        let a = g.slice_cols(x, 0, half)?;
        let b = g.slice_cols(x, half, half)?;
        let gate = g.sigmoid(b);
        g.mul(a, gate)
    }

    /// Attentive tabular encoder over the 4 clinical values, `[1, out_dim]`.
    pub fn enrich_clinical<T: Real>(&self, g: &mut Graph<'_, T>, clin: Var, trace: &mut ForwardTrace) -> Result<Var> {
        if g.value(clin).shape() != [1, 4] {
            return Err(Error::Shape(format!(
                "clinical vector must be [1, 4], got {:?}",
                g.value(clin).shape()
            )));
        }
        let h = self.config.clinical.hidden_dim;
        let gamma = g.input(Tensor::full(&[1, 4], T::of(self.config.clinical.relaxation)));
        let mut prior = g.input(Tensor::full(&[1, 4], T::one()));
        let init = g.linear(clin, self.ids.clin_initial.w, self.ids.clin_initial.b)?;
        let mut attended = Self::glu(g, init, h)?;
        let mut out: Option<Var> = None;
        for step in &self.ids.clin_steps {
            let logits = g.linear(attended, step.attentive.w, step.attentive.b)?;
            let scaled = g.mul(logits, prior)?;
            let mask = g.sparsemax_rows(scaled)?;
            trace.feature_masks.push(mask);
            let remaining = g.sub(gamma, mask)?;
            prior = g.mul(prior, remaining)?;

            let selected = g.mul(mask, clin)?;
            let z = g.linear(selected, step.transformer.w, step.transformer.b)?;
            let hidden = Self::glu(g, z, h)?;
            let d = g.linear(hidden, step.decision.w, step.decision.b)?;
            let d = g.relu(d);
            out = Some(match out {
                Some(acc) => g.add(acc, d)?,
                None => d,
            });
            attended = hidden;
        }
        Ok(out.expect("at least one step"))
    }

    /// Full forward pass for one slice; the output is the standardized slope.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, input: &SliceInput) -> Result<ForwardTrace> {
        let s = self.config.image_size;
        input.check(s)?;
        let image = g.input(Tensor::new(&[1, s, s], input.image.iter().map(|&v| T::of(f64::from(v))).collect())?);
        let mask = g.input(Tensor::new(&[1, s, s], input.mask.iter().map(|&v| T::of(f64::from(v))).collect())?);
        let clin = g.input(Tensor::row(input.clinical.0.iter().map(|&v| T::of(v)).collect()));

        let mut trace = ForwardTrace::default();
        let gated = self.context_gate(g, image, mask)?;
        trace.gated = Some(gated);

        let b = self.config.branches;
        let mut parts = Vec::with_capacity(3);
        if b.local {
            let local = self.local_branch(g, gated)?;
            trace.local = Some(local);
            parts.push(local);
        }
        if b.global {
            let tokens = self.tokens(g, gated)?;
            let global = self.transformer(g, tokens, &mut trace)?;
            trace.global = Some(global);
            parts.push(global);
        }
        if b.clinical {
            let enriched = self.enrich_clinical(g, clin, &mut trace)?;
            trace.clinical = Some(enriched);
            parts.push(enriched);
        }
        let fused = g.concat_cols(&parts)?;
        let h = g.linear(fused, self.ids.head_fc1.w, self.ids.head_fc1.b)?;
        let h = g.gelu(h);
        let y = g.linear(h, self.ids.head_fc2.w, self.ids.head_fc2.b)?;
        trace.output = Some(y);
        Ok(trace)
    }

    /// Standardized prediction for one slice.
    pub fn predict_standardized<T: Real>(&self, params: &ParamStore<T>, input: &SliceInput) -> Result<f64> {
        let mut g = Graph::new(params);
        let trace = self.forward(&mut g, input)?;
        let v = g.value(trace.output()).item().as_f64();
        if !v.is_finite() {
            return Err(Error::Numerical("non-finite model output".into()));
        }
        Ok(v)
    }

    pub fn predict_slope<T: Real>(
        &self,
        params: &ParamStore<T>,
        input: &SliceInput,
        target: &TargetStats,
    ) -> Result<SlopePrediction> {
        Ok(SlopePrediction {
            value: target.destandardize(self.predict_standardized(params, input)?),
        })
    }

    /// Mean of per-slice predictions.
    pub fn predict_patient<T: Real>(
        &self,
        params: &ParamStore<T>,
        slices: &[SliceInput],
        target: &TargetStats,
    ) -> Result<SlopePrediction> {
        if slices.is_empty() {
            return Err(Error::Invalid("patient has no slices".into()));
        }
        let mut sum = 0.0;
        for s in slices {
            sum += self.predict_slope(params, s, target)?.value;
        }
        Ok(SlopePrediction {
            value: sum / slices.len() as f64,
        })
    }
}
