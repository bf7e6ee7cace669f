//! The dual-path forecaster: a channel-independent linear autoregressive
//! path plus a cross-relation path that attends across variable tokens
//! with the self-link masked out. Both outputs are summed in RevIN space
//! and denormalized with the lookback statistics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{revin_normalize, RevinStats};
use crate::error::{Error, Result};

// ── configuration ────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
}

impl ModelConfig {
    pub fn new(channels: usize, lookback: usize, horizon: usize) -> Self {
        ModelConfig {
            channels,
            lookback,
            horizon,
            d_model: 128,
            heads: 8,
            layers: 2,
            d_ff: 256,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// The cross-relation path needs another channel to attend to.
    pub fn cr_enabled(&self) -> bool {
        self.channels >= 2
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("channels", self.channels),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
            ("d_ff", self.d_ff),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

// ── parameters ───────────────────────────────────────────────────────

/// Which half of the model a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Ar,
    Cr,
}

impl Branch {
    pub fn prefix(self) -> &'static str {
        match self {
            Branch::Ar => "ar.",
            Branch::Cr => "cr.",
        }
    }

    pub fn of(name: &str) -> Option<Branch> {
        if name.starts_with("ar.") {
            Some(Branch::Ar)
        } else if name.starts_with("cr.") {
            Some(Branch::Cr)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Ar => "AR",
            Branch::Cr => "CR",
        }
    }
}

/// `D` independent affine maps `L → H`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArParams<T> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T> {
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub wo: T,
    pub ff1_w: T,
    pub ff1_b: T,
    pub ff2_w: T,
    pub ff2_b: T,
    pub norm1_gain: T,
    pub norm1_shift: T,
    pub norm2_gain: T,
    pub norm2_shift: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrParams<T> {
    pub embed: T,
    pub layers: Vec<EncoderLayer<T>>,
    pub head_w: T,
    pub head_b: T,
}

/// Parameters of both paths. `T` is [`Tensor`] for stored values and
/// [`Var`] once bound to a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPathParams<T> {
    pub ar: ArParams<T>,
    pub cr: Option<CrParams<T>>,
}

pub type Params = DualPathParams<Tensor>;

impl<T> EncoderLayer<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        for (h, ((q, k), v)) in self.wq.iter().zip(&self.wk).zip(&self.wv).enumerate() {
            f(format!("{prefix}.head{h}.wq"), q);
            f(format!("{prefix}.head{h}.wk"), k);
            f(format!("{prefix}.head{h}.wv"), v);
        }
        f(format!("{prefix}.wo"), &self.wo);
        f(format!("{prefix}.ff1.w"), &self.ff1_w);
        f(format!("{prefix}.ff1.b"), &self.ff1_b);
        f(format!("{prefix}.ff2.w"), &self.ff2_w);
        f(format!("{prefix}.ff2.b"), &self.ff2_b);
        f(format!("{prefix}.norm1.gain"), &self.norm1_gain);
        f(format!("{prefix}.norm1.shift"), &self.norm1_shift);
        f(format!("{prefix}.norm2.gain"), &self.norm2_gain);
        f(format!("{prefix}.norm2.shift"), &self.norm2_shift);
    }

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> EncoderLayer<U> {
        let heads = |ws: &[T], tag: &str, f: &mut dyn FnMut(&str, &T) -> U| -> Vec<U> {
            ws.iter()
                .enumerate()
                .map(|(h, w)| f(&format!("{prefix}.head{h}.{tag}"), w))
                .collect()
        };
        let wq = heads(&self.wq, "wq", f);
        let wk = heads(&self.wk, "wk", f);
        let wv = heads(&self.wv, "wv", f);
        EncoderLayer {
            wq,
            wk,
            wv,
            wo: f(&format!("{prefix}.wo"), &self.wo),
            ff1_w: f(&format!("{prefix}.ff1.w"), &self.ff1_w),
            ff1_b: f(&format!("{prefix}.ff1.b"), &self.ff1_b),
            ff2_w: f(&format!("{prefix}.ff2.w"), &self.ff2_w),
            ff2_b: f(&format!("{prefix}.ff2.b"), &self.ff2_b),
            norm1_gain: f(&format!("{prefix}.norm1.gain"), &self.norm1_gain),
            norm1_shift: f(&format!("{prefix}.norm1.shift"), &self.norm1_shift),
            norm2_gain: f(&format!("{prefix}.norm2.gain"), &self.norm2_gain),
            norm2_shift: f(&format!("{prefix}.norm2.shift"), &self.norm2_shift),
        }
    }
}

impl<T> DualPathParams<T> {
    /// Visits every parameter with its canonical name, AR first.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a T)) {
        for (i, (w, b)) in self.ar.weights.iter().zip(&self.ar.biases).enumerate() {
            f(format!("ar.w.{i}"), w);
            f(format!("ar.b.{i}"), b);
        }
        if let Some(cr) = &self.cr {
            f("cr.embed.w".into(), &cr.embed);
            for (l, layer) in cr.layers.iter().enumerate() {
                layer.visit(&format!("cr.layer{l}"), f);
            }
            f("cr.head.w".into(), &cr.head_w);
            f("cr.head.b".into(), &cr.head_b);
        }
    }

    /// Rebuilds the structure, mapping each parameter by name.
    pub fn map<U>(&self, f: &mut dyn FnMut(&str, &T) -> U) -> DualPathParams<U> {
        let mut weights = Vec::with_capacity(self.ar.weights.len());
        let mut biases = Vec::with_capacity(self.ar.biases.len());
        for (i, (w, b)) in self.ar.weights.iter().zip(&self.ar.biases).enumerate() {
            weights.push(f(&format!("ar.w.{i}"), w));
            biases.push(f(&format!("ar.b.{i}"), b));
        }
        let cr = self.cr.as_ref().map(|cr| CrParams {
            embed: f("cr.embed.w", &cr.embed),
            layers: cr
                .layers
                .iter()
                .enumerate()
                .map(|(l, layer)| layer.map(&format!("cr.layer{l}"), f))
                .collect(),
            head_w: f("cr.head.w", &cr.head_w),
            head_b: f("cr.head.b", &cr.head_b),
        });
        DualPathParams {
            ar: ArParams { weights, biases },
            cr,
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _| out.push(n));
        out
    }

    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n, t)));
        out
    }
}

impl Params {
    /// Initial parameters. AR weights start near the lookback-mean map
    /// (`1/L` plus uniform noise in ±0.01); CR weights are uniform in
    /// `±1/sqrt(fan_in)`; biases and norm shifts are zero, gains one.
    pub fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let (l, h, dm, dh, ff) = (
            config.lookback,
            config.horizon,
            config.d_model,
            config.head_dim(),
            config.d_ff,
        );
        let mut uniform = |shape: [usize; 2], bound: f64, offset: f64| {
            let data = (0..shape[0] * shape[1])
                .map(|_| offset + rng.random_range(-bound..=bound))
                .collect();
            Tensor::new(shape.to_vec(), data).expect("shape")
        };
        let mut weights = Vec::with_capacity(config.channels);
        let mut biases = Vec::with_capacity(config.channels);
        for _ in 0..config.channels {
            weights.push(uniform([l, h], 0.01, 1.0 / l as f64));
            biases.push(Tensor::zeros([h]));
        }
        let cr = if config.cr_enabled() {
            let inv = |fan: usize| 1.0 / (fan as f64).sqrt();
            let embed = uniform([l, dm], inv(l), 0.0);
            let mut layers = Vec::with_capacity(config.layers);
            for _ in 0..config.layers {
                let mut qkv = || -> Vec<Tensor> {
                    (0..config.heads).map(|_| uniform([dm, dh], inv(dm), 0.0)).collect()
                };
                let (wq, wk, wv) = (qkv(), qkv(), qkv());
                layers.push(EncoderLayer {
                    wq,
                    wk,
                    wv,
                    wo: uniform([dm, dm], inv(dm), 0.0),
                    ff1_w: uniform([dm, ff], inv(dm), 0.0),
                    ff1_b: Tensor::zeros([ff]),
                    ff2_w: uniform([ff, dm], inv(ff), 0.0),
                    ff2_b: Tensor::zeros([dm]),
                    norm1_gain: Tensor::ones([dm]),
                    norm1_shift: Tensor::zeros([dm]),
                    norm2_gain: Tensor::ones([dm]),
                    norm2_shift: Tensor::zeros([dm]),
                });
            }
            Some(CrParams {
                embed,
                layers,
                head_w: uniform([dm, h], inv(dm), 0.0),
                head_b: Tensor::zeros([h]),
            })
        } else {
            None
        };
        Ok(DualPathParams {
            ar: ArParams { weights, biases },
            cr,
        })
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names = self.names();
        let mut refs: Vec<&mut Tensor> = Vec::with_capacity(names.len());
        for (w, b) in self.ar.weights.iter_mut().zip(self.ar.biases.iter_mut()) {
            refs.push(w);
            refs.push(b);
        }
        if let Some(cr) = &mut self.cr {
            refs.push(&mut cr.embed);
            for layer in &mut cr.layers {
                for ((q, k), v) in layer.wq.iter_mut().zip(layer.wk.iter_mut()).zip(layer.wv.iter_mut()) {
                    refs.push(q);
                    refs.push(k);
                    refs.push(v);
                }
                refs.extend([
                    &mut layer.wo,
                    &mut layer.ff1_w,
                    &mut layer.ff1_b,
                    &mut layer.ff2_w,
                    &mut layer.ff2_b,
                    &mut layer.norm1_gain,
                    &mut layer.norm1_shift,
                    &mut layer.norm2_gain,
                    &mut layer.norm2_shift,
                ]);
            }
            refs.push(&mut cr.head_w);
            refs.push(&mut cr.head_b);
        }
        names.into_iter().zip(refs).collect()
    }

    /// Total scalar count in one branch.
    pub fn branch_len(&self, branch: Branch) -> usize {
        self.named()
            .into_iter()
            .filter(|(n, _)| Branch::of(n) == Some(branch))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Binds every parameter to `tape`, as a trainable leaf when
    /// `trainable(branch)` holds and as a constant otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(Branch) -> bool) -> DualPathParams<Var> {
        self.map(&mut |name, t| {
            if Branch::of(name).is_some_and(&trainable) {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }
}

/// Rank-2 tensors of a branch: the ones the ℓ1 penalty acts on.
fn is_penalized(name: &str, shape: &[usize]) -> bool {
    shape.len() == 2 && !name.ends_with(".b")
}

/// `(λ / H) · Σ|w|` over the weight matrices of `branch`. Biases and
/// normalization parameters are not penalized.
pub fn l1_penalty(params: &Params, branch: Branch, lambda: f64, horizon: usize) -> f64 {
    let total: f64 = params
        .named()
        .into_iter()
        .filter(|(n, t)| Branch::of(n) == Some(branch) && is_penalized(n, t.shape()))
        .map(|(_, t)| t.data().iter().map(|v| v.abs()).sum::<f64>())
        .sum();
    lambda / horizon as f64 * total
}

/// Tape version of [`l1_penalty`]; `None` when `lambda` is zero or the
/// branch has no weights.
pub fn l1_penalty_var(
    tape: &mut Tape,
    bound: &DualPathParams<Var>,
    branch: Branch,
    lambda: f64,
    horizon: usize,
) -> Result<Option<Var>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    let mut acc: Option<Var> = None;
    for (name, &v) in bound.named() {
        if Branch::of(&name) != Some(branch) || !is_penalized(&name, tape.shape(v)) {
            continue;
        }
        let s = tape.abs_sum(v)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    acc.map(|a| tape.scale(a, lambda / horizon as f64)).transpose()
}

// ── forward pieces ───────────────────────────────────────────────────

/// RevIN-normalized batch, laid out for both paths.
#[derive(Clone, Debug)]
pub struct NormalizedBatch {
    pub batch: usize,
    pub channels: usize,
    /// `D` tensors of `[B, L]`, one per channel, for the AR maps.
    pub per_channel: Vec<Tensor>,
    /// `[B·D, L]` variable tokens, window-major.
    pub tokens: Tensor,
    pub stats: Vec<RevinStats>,
}

impl NormalizedBatch {
    /// Normalizes each window (`D × L`) of `windows` independently.
    pub fn new(windows: &[&Tensor]) -> Result<Self> {
        let first = windows.first().ok_or(Error::EmptyTestSet)?;
        let (d, l) = (first.shape()[0], first.shape()[1]);
        let b = windows.len();
        let mut tokens = Vec::with_capacity(b * d * l);
        let mut per_channel = vec![Vec::with_capacity(b * l); d];
        let mut stats = Vec::with_capacity(b);
        for w in windows {
            if w.shape() != [d, l] {
                return Err(Error::shape("batch", format!("{:?} vs [{d}, {l}]", w.shape())));
            }
            let (n, s) = revin_normalize(w);
            tokens.extend_from_slice(n.data());
            for (i, pc) in per_channel.iter_mut().enumerate() {
                pc.extend_from_slice(n.row(i));
            }
            stats.push(s);
        }
        Ok(NormalizedBatch {
            batch: b,
            channels: d,
            per_channel: per_channel
                .into_iter()
                .map(|v| Tensor::new([b, l], v).expect("shape"))
                .collect(),
            tokens: Tensor::new([b * d, l], tokens)?,
            stats,
        })
    }

    /// `[B, D, H]` tensors of RevIN scales and means for denormalization.
    fn denorm_tensors(&self, horizon: usize) -> (Tensor, Tensor) {
        let n = self.batch * self.channels * horizon;
        let mut scale = Vec::with_capacity(n);
        let mut shift = Vec::with_capacity(n);
        for s in &self.stats {
            for i in 0..self.channels {
                scale.extend(std::iter::repeat_n(s.std[i], horizon));
                shift.extend(std::iter::repeat_n(s.mean[i], horizon));
            }
        }
        let shape = [self.batch, self.channels, horizon];
        (
            Tensor::new(shape, scale).expect("shape"),
            Tensor::new(shape, shift).expect("shape"),
        )
    }
}

/// AR path: row `i` of every window is mapped by its own `(W_i, b_i)`.
/// Returns `[B, D, H]`.
pub fn ar_forward(tape: &mut Tape, per_channel: &[Var], ar: &ArParams<Var>) -> Result<Var> {
    if per_channel.len() != ar.weights.len() {
        return Err(Error::shape(
            "ar_forward",
            format!("{} channels, {} maps", per_channel.len(), ar.weights.len()),
        ));
    }
    let mut outs = Vec::with_capacity(per_channel.len());
    for ((&x, &w), &b) in per_channel.iter().zip(&ar.weights).zip(&ar.biases) {
        let y = tape.matmul(x, w)?;
        let y = tape.add_bias(y, b)?;
        let (bsz, h) = (tape.shape(y)[0], tape.shape(y)[1]);
        outs.push(tape.reshape(y, &[bsz, 1, h])?);
    }
    tape.concat(&outs, 1)
}

/// Linear token embedding `Z0 = X · E`.
pub fn cr_embed(tape: &mut Tape, tokens: Var, embed: Var) -> Result<Var> {
    tape.matmul(tokens, embed)
}

/// Multi-head attention across the `channels` tokens of each window with
/// the diagonal excluded from every softmax. `z` is `[B·D, L0]`.
///
/// Returns the projected output and the per-head attention weights
/// (`[B, D, D]` each).
pub fn crsa_attention(
    tape: &mut Tape,
    z: Var,
    channels: usize,
    layer: &EncoderLayer<Var>,
) -> Result<(Var, Vec<Var>)> {
    if channels < 2 {
        return Err(Error::SingleChannel);
    }
    let rows = tape.shape(z)[0];
    if rows % channels != 0 {
        return Err(Error::shape("crsa_attention", format!("{rows} tokens for {channels} channels")));
    }
    let batch = rows / channels;
    let mut heads = Vec::with_capacity(layer.wq.len());
    let mut maps = Vec::with_capacity(layer.wq.len());
    for ((&wq, &wk), &wv) in layer.wq.iter().zip(&layer.wk).zip(&layer.wv) {
        let dh = tape.shape(wq)[1];
        let mut project = |w: Var| -> Result<Var> {
            let p = tape.matmul(z, w)?;
            tape.reshape(p, &[batch, channels, dh])
        };
        let (q, k, v) = (project(wq)?, project(wk)?, project(wv)?);
        let logits = tape.batch_matmul(q, k, true)?;
        let logits = tape.scale(logits, 1.0 / (dh as f64).sqrt())?;
        let attn = tape.softmax(logits, true)?;
        let out = tape.batch_matmul(attn, v, false)?;
        heads.push(tape.reshape(out, &[rows, dh])?);
        maps.push(attn);
    }
    let joined = tape.concat(&heads, 1)?;
    Ok((tape.matmul(joined, layer.wo)?, maps))
}

/// `Z1 = LN(Z0 + MHSA(Z0))`, `Z2 = LN(Z1 + MLP(Z1))`.
pub fn encoder_block(
    tape: &mut Tape,
    z0: Var,
    channels: usize,
    layer: &EncoderLayer<Var>,
) -> Result<(Var, Vec<Var>)> {
    let (attn, maps) = crsa_attention(tape, z0, channels, layer)?;
    let r1 = tape.add(z0, attn)?;
    let z1 = tape.layer_norm(r1, layer.norm1_gain, layer.norm1_shift)?;
    let hidden = tape.matmul(z1, layer.ff1_w)?;
    let hidden = tape.add_bias(hidden, layer.ff1_b)?;
    let hidden = tape.gelu(hidden)?;
    let mlp = tape.matmul(hidden, layer.ff2_w)?;
    let mlp = tape.add_bias(mlp, layer.ff2_b)?;
    let r2 = tape.add(z1, mlp)?;
    let z2 = tape.layer_norm(r2, layer.norm2_gain, layer.norm2_shift)?;
    Ok((z2, maps))
}

/// Shared linear head applied to every token: `[B·D, L0] → [B·D, H]`.
pub fn cr_head(tape: &mut Tape, z: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(z, w)?;
    tape.add_bias(y, b)
}

/// Tape handles produced by [`forward_batch`].
#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Denormalized forecast, `[B, D, H]`.
    pub y_hat: Var,
    /// AR component in normalized space.
    pub y_ar: Var,
    /// CR component in normalized space; `None` when the path is disabled.
    pub y_cr: Option<Var>,
    /// Attention weights per layer, per head.
    pub attention: Vec<Vec<Var>>,
}

/// Full forward pass over a normalized batch.
pub fn forward_batch(
    tape: &mut Tape,
    batch: &NormalizedBatch,
    params: &DualPathParams<Var>,
    config: &ModelConfig,
) -> Result<BatchOutput> {
    let (b, d, h) = (batch.batch, batch.channels, config.horizon);
    if d != config.channels || batch.tokens.shape()[1] != config.lookback {
        return Err(Error::shape(
            "model_forward",
            format!(
                "batch has {d} channels x {} steps, model expects {} x {}",
                batch.tokens.shape()[1],
                config.channels,
                config.lookback
            ),
        ));
    }
    let per_channel: Vec<Var> = batch.per_channel.iter().map(|t| tape.constant(t.clone())).collect();
    let y_ar = ar_forward(tape, &per_channel, &params.ar)?;

    let mut attention = Vec::new();
    let y_cr = match &params.cr {
        Some(cr) => {
            let tokens = tape.constant(batch.tokens.clone());
            let mut z = cr_embed(tape, tokens, cr.embed)?;
            for layer in &cr.layers {
                let (next, maps) = encoder_block(tape, z, d, layer)?;
                z = next;
                attention.push(maps);
            }
            let y = cr_head(tape, z, cr.head_w, cr.head_b)?;
            Some(tape.reshape(y, &[b, d, h])?)
        }
        None => None,
    };

    let sum = match y_cr {
        Some(cr) => tape.add(y_ar, cr)?,
        None => y_ar,
    };
    let (scale, shift) = batch.denorm_tensors(h);
    let scale = tape.constant(scale);
    let shift = tape.constant(shift);
    let y = tape.mul(sum, scale)?;
    let y_hat = tape.add(y, shift)?;
    Ok(BatchOutput {
        y_hat,
        y_ar,
        y_cr,
        attention,
    })
}

/// One window's forecast with its components.
#[derive(Clone, Debug)]
pub struct Forecast {
    /// `D × H`, original scale of the input.
    pub y_hat: Tensor,
    /// `D × H`, normalized space.
    pub y_ar: Tensor,
    /// `D × H`, normalized space; zeros when the CR path is disabled.
    pub y_cr: Tensor,
    /// `[layer][head]`, each `D × D`.
    pub attention: Vec<Vec<Tensor>>,
}

/// Forecast for a single `D × L` window.
pub fn model_forward(x: &Tensor, params: &Params, config: &ModelConfig) -> Result<Forecast> {
    let batch = NormalizedBatch::new(&[x])?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, |_| false);
    let out = forward_batch(&mut tape, &batch, &bound, config)?;
    let (d, h) = (config.channels, config.horizon);
    let squeeze = |t: &Tensor, shape: [usize; 2]| t.clone().reshape(shape.to_vec()).expect("shape");
    Ok(Forecast {
        y_hat: squeeze(tape.value(out.y_hat), [d, h]),
        y_ar: squeeze(tape.value(out.y_ar), [d, h]),
        y_cr: out
            .y_cr
            .map(|v| squeeze(tape.value(v), [d, h]))
            .unwrap_or_else(|| Tensor::zeros([d, h])),
        attention: out
            .attention
            .iter()
            .map(|layer| layer.iter().map(|&a| squeeze(tape.value(a), [d, d])).collect())
            .collect(),
    })
}

/// Denormalized forecasts for many windows, `[B, D, H]`, without
/// recording gradients.
pub fn predict(windows: &[&Tensor], params: &Params, config: &ModelConfig) -> Result<Tensor> {
    let batch = NormalizedBatch::new(windows)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, |_| false);
    let out = forward_batch(&mut tape, &batch, &bound, config)?;
    Ok(tape.value(out.y_hat).clone())
}
