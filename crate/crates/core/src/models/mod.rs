//! The four non-convolutional architectures. Every model sees a batch as
//! `[B, D, in_features]`: the `D` sagittal slices are the tokens and each
//! slice is flattened into its feature vector. The output is
//! `[B, D, out_features]`.
//!
//! Parameter counts (`F = in_features + 2K` with positional encoding,
//! `T = D`, `O = out_features`, `lin(a, b) = a·b + b`):
//!
//! | arch        | parameters |
//! |-------------|------------|
//! | MLP         | `lin(F, M) + N·lin(M, M) + lin(M, O)` |
//! | ResMLP      | `N·(4F + lin(T, T) + lin(F, M) + lin(M, F)) + lin(F, O)` |
//! | Transformer | `lin(F, M) + N·block + lin(M, O)`, `block = 4M + 4·lin(M, M) + lin(M, 4M) + lin(4M, M)` |
//! | PerceiverIO | `lin(F, M) + L·M + cross + N·block + T·M + cross + lin(M, O)`, `cross = block + 2M` |

mod layers;
mod pe;

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

pub use pe::{fourier_pe, FourierPe};

use crate::autodiff::{Tape, Tensor, Var};
use crate::rng::Rng;
use crate::{Error, Result};
use layers::{Bound, CrossBlock, EncoderBlock, Linear, ParamBuilder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "MLP")]
    Mlp,
    #[serde(rename = "ResMLP")]
    ResMlp,
    TransformerEncoder,
    #[serde(rename = "PerceiverIO")]
    PerceiverIo,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Mlp,
        Architecture::ResMlp,
        Architecture::TransformerEncoder,
        Architecture::PerceiverIo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Mlp => "MLP",
            Architecture::ResMlp => "ResMLP",
            Architecture::TransformerEncoder => "TransformerEncoder",
            Architecture::PerceiverIo => "PerceiverIO",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(name))
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Architecture::TransformerEncoder | Architecture::PerceiverIo)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PositionalEncoding {
    #[default]
    None,
    Fourier { bands: usize },
}

impl PositionalEncoding {
    pub fn extra_features(self) -> usize {
        match self {
            PositionalEncoding::None => 0,
            PositionalEncoding::Fourier { bands } => 2 * bands,
        }
    }
}

/// Feed-forward nonlinearity of the attention and ResMLP blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    /// Hidden layers (MLP) or blocks (others), `N`.
    pub layers: usize,
    /// Latent width `M`.
    pub width: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// PerceiverIO latent array length `L`.
    #[serde(default = "default_latents")]
    pub latents: usize,
    #[serde(default)]
    pub pe: PositionalEncoding,
    #[serde(default)]
    pub activation: Activation,
    /// Token count `D` (sagittal slices).
    pub tokens: usize,
    pub in_features: usize,
    pub out_features: usize,
}

fn default_heads() -> usize {
    4
}

fn default_latents() -> usize {
    8
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("tokens", self.tokens),
            ("in_features", self.in_features),
            ("out_features", self.out_features),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if let PositionalEncoding::Fourier { bands: 0 } = self.pe {
            return Err(Error::Config("fourier encoding needs at least one band".into()));
        }
        if self.arch.uses_attention() && (self.heads == 0 || self.width % self.heads != 0) {
            return Err(Error::Config(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.arch == Architecture::PerceiverIo && self.latents == 0 {
            return Err(Error::Config("PerceiverIO needs at least one latent".into()));
        }
        Ok(())
    }

    /// Features per token after positional encoding is appended.
    pub fn token_features(&self) -> usize {
        self.in_features + self.pe.extra_features()
    }
}

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn push(&mut self, name: String, tensor: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar weights.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor with one of the same name and shape.
    pub fn load(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, model has {}",
                named.len(),
                self.len()
            )));
        }
        for ((name, t), (own_name, own)) in named.iter().zip(self.names.iter().zip(&mut self.tensors)) {
            if name != own_name || t.shape() != own.shape() {
                return Err(Error::Data(format!(
                    "checkpoint tensor {name} {:?} does not match {own_name} {:?}",
                    t.shape(),
                    own.shape()
                )));
            }
            *own = t.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Body {
    Mlp {
        input: Linear,
        hidden: Vec<Linear>,
        head: Linear,
    },
    ResMlp {
        blocks: Vec<ResBlock>,
        head: Linear,
    },
    Transformer {
        embed: Linear,
        blocks: Vec<EncoderBlock>,
        head: Linear,
    },
    Perceiver {
        embed: Linear,
        latents: usize,
        encode: CrossBlock,
        blocks: Vec<EncoderBlock>,
        queries: usize,
        decode: CrossBlock,
        head: Linear,
    },
}

#[derive(Clone, Debug)]
struct ResBlock {
    pre_mix: layers::Affine,
    token_mix: Linear,
    pre_mlp: layers::Affine,
    up: Linear,
    down: Linear,
}

/// Recorded forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub output: Var,
    /// Parameter vars in [`Params`] order.
    pub params: Vec<Var>,
    /// Attention weight tensors `[B, heads, Tq, Tk]`, in layer order.
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    params: Params,
    body: Body,
    pe: Option<FourierPe>,
}

impl Model {
    /// Builds and initialises the architecture named by `spec.arch`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::seed(seed);
        let mut b = ParamBuilder::new(&mut rng);
        let f = spec.token_features();
        let (m, n) = (spec.width, spec.layers);
        let body = match spec.arch {
            Architecture::Mlp => Body::Mlp {
                input: b.linear("input", f, m),
                hidden: (0..n).map(|i| b.linear(&format!("hidden{i}"), m, m)).collect(),
                head: b.linear("head", m, spec.out_features),
            },
            Architecture::ResMlp => Body::ResMlp {
                blocks: (0..n)
                    .map(|i| ResBlock {
                        pre_mix: b.affine(&format!("block{i}.pre_mix"), f),
                        token_mix: b.linear(&format!("block{i}.token_mix"), spec.tokens, spec.tokens),
                        pre_mlp: b.affine(&format!("block{i}.pre_mlp"), f),
                        up: b.linear(&format!("block{i}.up"), f, m),
                        down: b.linear(&format!("block{i}.down"), m, f),
                    })
                    .collect(),
                head: b.linear("head", f, spec.out_features),
            },
            Architecture::TransformerEncoder => Body::Transformer {
                embed: b.linear("embed", f, m),
                blocks: (0..n)
                    .map(|i| b.encoder_block(&format!("block{i}"), m, spec.heads, spec.activation))
                    .collect(),
                head: b.linear("head", m, spec.out_features),
            },
            Architecture::PerceiverIo => {
                let embed = b.linear("embed", f, m);
                let latents = b.normal("latents", &[spec.latents, m], layers::LATENT_INIT_STD);
                let encode = b.cross_block("encode", m, spec.heads, spec.activation);
                let blocks = (0..n)
                    .map(|i| b.encoder_block(&format!("block{i}"), m, spec.heads, spec.activation))
                    .collect();
                let queries = b.normal("output_queries", &[spec.tokens, m], layers::LATENT_INIT_STD);
                let decode = b.cross_block("decode", m, spec.heads, spec.activation);
                let head = b.linear("head", m, spec.out_features);
                Body::Perceiver {
                    embed,
                    latents,
                    encode,
                    blocks,
                    queries,
                    decode,
                    head,
                }
            }
        };
        let params = b.params;
        let pe = match spec.pe {
            PositionalEncoding::None => None,
            PositionalEncoding::Fourier { bands } => Some(fourier_pe(spec.tokens, bands)?),
        };
        Ok(Self {
            spec: spec.clone(),
            params,
            body,
            pe,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Records the forward pass on `tape`. With `trainable`, parameters are
    /// gradient leaves; otherwise constants.
    pub fn forward(&self, tape: &mut Tape, input: Var, trainable: bool) -> Result<Forward> {
        let shape = tape.shape(input).to_vec();
        if shape.len() != 3 || shape[1] != self.spec.tokens || shape[2] != self.spec.in_features {
            return Err(Error::Dimension(format!(
                "model expects [B, {}, {}], got {shape:?}",
                self.spec.tokens, self.spec.in_features
            )));
        }
        let batch = shape[0];
        let vars: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let mut p = Bound {
            vars: &vars,
            attention: Vec::new(),
        };
        let x = match &self.pe {
            None => input,
            Some(pe) => {
                let mut data = Vec::with_capacity(batch * pe.table().len());
                for _ in 0..batch {
                    data.extend_from_slice(pe.table());
                }
                let table = tape.constant(Tensor::new(vec![batch, pe.tokens(), pe.width()], data)?);
                tape.concat(&[input, table], 2)?
            }
        };
        let t = tape;
        let output = match &self.body {
            Body::Mlp { input, hidden, head } => {
                let mut h = input.apply(t, &p, x)?;
                for layer in hidden {
                    let z = layer.apply(t, &p, h)?;
                    h = t.tanh(z);
                }
                head.apply(t, &p, h)?
            }
            Body::ResMlp { blocks, head } => {
                let mut h = x;
                for blk in blocks {
                    let a = blk.pre_mix.apply(t, &p, h)?;
                    let a = t.transpose(a, 1, 2)?;
                    let mixed = blk.token_mix.apply(t, &p, a)?;
                    let mixed = t.transpose(mixed, 1, 2)?;
                    h = t.add(h, mixed)?;
                    let a = blk.pre_mlp.apply(t, &p, h)?;
                    let u = blk.up.apply(t, &p, a)?;
                    let u = t.gelu(u);
                    let d = blk.down.apply(t, &p, u)?;
                    h = t.add(h, d)?;
                }
                head.apply(t, &p, h)?
            }
            Body::Transformer { embed, blocks, head } => {
                let mut h = embed.apply(t, &p, x)?;
                for blk in blocks {
                    h = blk.apply(t, &mut p, h)?;
                }
                head.apply(t, &p, h)?
            }
            Body::Perceiver {
                embed,
                latents,
                encode,
                blocks,
                queries,
                decode,
                head,
            } => {
                let e = embed.apply(t, &p, x)?;
                let mut z = encode.apply(t, &mut p, vars[*latents], e)?;
                for blk in blocks {
                    z = blk.apply(t, &mut p, z)?;
                }
                let o = decode.apply(t, &mut p, vars[*queries], z)?;
                head.apply(t, &p, o)?
            }
        };
        let attention = p.attention;
        Ok(Forward {
            output,
            params: vars,
            attention,
        })
    }

    /// Inference on a `[B, D, in_features]` tensor.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let fwd = self.forward(&mut tape, x, false)?;
        Ok(tape.value(fwd.output).clone())
    }
}
