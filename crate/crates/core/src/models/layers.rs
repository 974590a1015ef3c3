use alloc::string::String;
use alloc::vec::Vec;

use super::{Activation, Params};
use crate::autodiff::{Tape, Tensor, Var};
use crate::rng::Rng;
use crate::Result;

pub(crate) const NORM_EPS: f64 = 1e-5;
pub(crate) const LATENT_INIT_STD: f64 = 0.02;

/// Allocates named parameters in registration order.
pub(crate) struct ParamBuilder<'r> {
    pub params: Params,
    rng: &'r mut Rng,
}

impl<'r> ParamBuilder<'r> {
    pub fn new(rng: &'r mut Rng) -> Self {
        Self {
            params: Params::default(),
            rng,
        }
    }

    fn push(&mut self, name: String, tensor: Tensor) -> usize {
        self.params.push(name, tensor)
    }

    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> usize {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.range(-bound, bound)).collect();
        self.push(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> usize {
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * self.rng.normal()).collect();
        self.push(name.into(), Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    /// Weights and bias uniform in `±sqrt(1/fan_in)`.
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let bound = libm::sqrt(1.0 / fan_in as f64);
        let w = self.uniform(alloc::format!("{name}.weight"), &[fan_in, fan_out], bound);
        let b = self.uniform(alloc::format!("{name}.bias"), &[fan_out], bound);
        Linear { w, b }
    }

    pub fn affine(&mut self, name: &str, width: usize) -> Affine {
        let scale = self.push(alloc::format!("{name}.scale"), Tensor::filled(&[width], 1.0));
        let shift = self.push(alloc::format!("{name}.shift"), Tensor::zeros(&[width]));
        Affine { scale, shift }
    }

    pub fn layer_norm(&mut self, name: &str, width: usize) -> LayerNorm {
        LayerNorm(self.affine(name, width))
    }

    pub fn feed_forward(&mut self, name: &str, width: usize, hidden: usize, act: Activation) -> FeedForward {
        FeedForward {
            up: self.linear(&alloc::format!("{name}.up"), width, hidden),
            down: self.linear(&alloc::format!("{name}.down"), hidden, width),
            act,
        }
    }

    pub fn attention(&mut self, name: &str, width: usize, heads: usize) -> Attention {
        Attention {
            q: self.linear(&alloc::format!("{name}.q"), width, width),
            k: self.linear(&alloc::format!("{name}.k"), width, width),
            v: self.linear(&alloc::format!("{name}.v"), width, width),
            o: self.linear(&alloc::format!("{name}.o"), width, width),
            heads,
        }
    }

    pub fn encoder_block(&mut self, name: &str, width: usize, heads: usize, act: Activation) -> EncoderBlock {
        EncoderBlock {
            norm_attn: self.layer_norm(&alloc::format!("{name}.norm_attn"), width),
            attn: self.attention(&alloc::format!("{name}.attn"), width, heads),
            norm_ff: self.layer_norm(&alloc::format!("{name}.norm_ff"), width),
            ff: self.feed_forward(&alloc::format!("{name}.ff"), width, 4 * width, act),
        }
    }

    pub fn cross_block(&mut self, name: &str, width: usize, heads: usize, act: Activation) -> CrossBlock {
        CrossBlock {
            norm_q: self.layer_norm(&alloc::format!("{name}.norm_q"), width),
            norm_kv: self.layer_norm(&alloc::format!("{name}.norm_kv"), width),
            attn: self.attention(&alloc::format!("{name}.attn"), width, heads),
            norm_ff: self.layer_norm(&alloc::format!("{name}.norm_ff"), width),
            ff: self.feed_forward(&alloc::format!("{name}.ff"), width, 4 * width, act),
        }
    }
}

/// Parameter vars bound on a tape, plus the attention maps recorded on the
/// way through.
pub(crate) struct Bound<'a> {
    pub vars: &'a [Var],
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    pub fn apply(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = t.matmul(x, p.vars[self.w])?;
        t.add(y, p.vars[self.b])
    }
}

/// Learnable per-feature scale and shift, no statistics.
#[derive(Clone, Debug)]
pub(crate) struct Affine {
    scale: usize,
    shift: usize,
}

impl Affine {
    pub fn apply(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = t.mul(x, p.vars[self.scale])?;
        t.add(y, p.vars[self.shift])
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm(Affine);

impl LayerNorm {
    pub fn apply(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let n = t.layer_norm(x, NORM_EPS);
        self.0.apply(t, p, n)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
    act: Activation,
}

impl FeedForward {
    pub fn apply(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.up.apply(t, p, x)?;
        let h = match self.act {
            Activation::Gelu => t.gelu(h),
            Activation::Tanh => t.tanh(h),
        };
        self.down.apply(t, p, h)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    /// `[lead.., T, M]` → `[lead.., h, T, M/h]`.
    fn split_heads(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let shape = t.shape(x).to_vec();
        let rank = shape.len();
        let (tokens, width) = (shape[rank - 2], shape[rank - 1]);
        let mut split = shape[..rank - 2].to_vec();
        split.extend_from_slice(&[tokens, self.heads, width / self.heads]);
        let x = t.reshape(x, &split)?;
        t.transpose(x, rank - 2, rank - 1)
    }

    /// Multi-head scaled dot-product attention. `queries` may lack the batch
    /// axis (learned latents); `context` is `[B, Tk, M]`.
    pub fn apply(&self, t: &mut Tape, p: &mut Bound, queries: Var, context: Var) -> Result<Var> {
        let q = self.q.apply(t, p, queries)?;
        let k = self.k.apply(t, p, context)?;
        let v = self.v.apply(t, p, context)?;
        let q = self.split_heads(t, q)?;
        let k = self.split_heads(t, k)?;
        let v = self.split_heads(t, v)?;
        let kt = t.transpose(k, 2, 3)?;
        let scores = t.matmul(q, kt)?;
        let dk = *t.shape(q).last().expect("rank 3+");
        let scores = t.scale(scores, 1.0 / libm::sqrt(dk as f64));
        let weights = t.softmax(scores, 3)?;
        p.attention.push(weights);
        let mixed = t.matmul(weights, v)?;
        // [B, h, Tq, dk] → [B, Tq, h, dk] → [B, Tq, M]
        let mixed = t.transpose(mixed, 1, 2)?;
        let s = t.shape(mixed).to_vec();
        let mixed = t.reshape(mixed, &[s[0], s[1], s[2] * s[3]])?;
        self.o.apply(t, p, mixed)
    }
}

/// Pre-norm self-attention block.
#[derive(Clone, Debug)]
pub(crate) struct EncoderBlock {
    norm_attn: LayerNorm,
    attn: Attention,
    norm_ff: LayerNorm,
    ff: FeedForward,
}

impl EncoderBlock {
    pub fn apply(&self, t: &mut Tape, p: &mut Bound, x: Var) -> Result<Var> {
        let n = self.norm_attn.apply(t, p, x)?;
        let a = self.attn.apply(t, p, n, n)?;
        let x = t.add(x, a)?;
        let n = self.norm_ff.apply(t, p, x)?;
        let f = self.ff.apply(t, p, n)?;
        t.add(x, f)
    }
}

/// Pre-norm cross-attention block: `queries` attend to `context`.
#[derive(Clone, Debug)]
pub(crate) struct CrossBlock {
    norm_q: LayerNorm,
    norm_kv: LayerNorm,
    attn: Attention,
    norm_ff: LayerNorm,
    ff: FeedForward,
}

impl CrossBlock {
    pub fn apply(&self, t: &mut Tape, p: &mut Bound, queries: Var, context: Var) -> Result<Var> {
        let q = self.norm_q.apply(t, p, queries)?;
        let kv = self.norm_kv.apply(t, p, context)?;
        let a = self.attn.apply(t, p, q, kv)?;
        // `a` carries the batch axis; `queries` may not.
        let x = t.add(a, queries)?;
        let n = self.norm_ff.apply(t, p, x)?;
        let f = self.ff.apply(t, p, n)?;
        t.add(x, f)
    }
}
