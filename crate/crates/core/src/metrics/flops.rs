//! Closed-form FLOP and parameter counts.
//!
//! A linear map `a → b` applied to `t` tokens costs `2·a·b·t` (multiply and
//! add counted separately, bias ignored). Attention adds `2·Tq·Tk·M` for the
//! scores and the same again for the weighted sum. Elementwise work
//! (activations, norms, softmax, residuals) and any FFT are not counted.
//! Backward is fixed at twice the forward count.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::models::{Architecture, ModelSpec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub forward: u64,
    pub parameters: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub forward: u64,
    pub backward: u64,
    pub parameters: u64,
    pub layers: Vec<LayerCost>,
}

/// Reference per-architecture figures (FLOPs in units of 1e9, parameters in
/// millions) shown next to estimates for context.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceRow {
    pub arch: Architecture,
    pub forward_g: f64,
    pub backward_g: f64,
    pub parameters_m: f64,
}

pub const REFERENCE_TABLE: [ReferenceRow; 4] = [
    ReferenceRow {
        arch: Architecture::Mlp,
        forward_g: 128.85,
        backward_g: 231.93,
        parameters_m: 83.91,
    },
    ReferenceRow {
        arch: Architecture::ResMlp,
        forward_g: 208.57,
        backward_g: 391.38,
        parameters_m: 134.43,
    },
    ReferenceRow {
        arch: Architecture::TransformerEncoder,
        forward_g: 361.38,
        backward_g: 696.99,
        parameters_m: 234.97,
    },
    ReferenceRow {
        arch: Architecture::PerceiverIo,
        forward_g: 943.30,
        backward_g: 1886.60,
        parameters_m: 47.54,
    },
];

struct Counter {
    batch: u64,
    layers: Vec<LayerCost>,
}

impl Counter {
    fn add(&mut self, name: String, forward_per_sample: u64, parameters: u64) {
        self.layers.push(LayerCost {
            name,
            forward: forward_per_sample * self.batch,
            parameters,
        });
    }

    fn linear(&mut self, name: &str, fan_in: u64, fan_out: u64, tokens: u64) {
        self.add(name.into(), 2 * fan_in * fan_out * tokens, fan_in * fan_out + fan_out);
    }

    fn params(&mut self, name: &str, parameters: u64) {
        self.add(name.into(), 0, parameters);
    }

    /// Projections, scores and weighted sum of multi-head attention.
    fn attention(&mut self, name: &str, m: u64, tq: u64, tk: u64) {
        self.linear(&format!("{name}.q"), m, m, tq);
        self.linear(&format!("{name}.k"), m, m, tk);
        self.linear(&format!("{name}.v"), m, m, tk);
        self.add(format!("{name}.scores"), 2 * tq * tk * m, 0);
        self.add(format!("{name}.mix"), 2 * tq * tk * m, 0);
        self.linear(&format!("{name}.o"), m, m, tq);
    }

    fn feed_forward(&mut self, name: &str, m: u64, tokens: u64) {
        self.linear(&format!("{name}.up"), m, 4 * m, tokens);
        self.linear(&format!("{name}.down"), 4 * m, m, tokens);
    }

    fn encoder_block(&mut self, name: &str, m: u64, tokens: u64) {
        self.params(&format!("{name}.norm_attn"), 2 * m);
        self.attention(&format!("{name}.attn"), m, tokens, tokens);
        self.params(&format!("{name}.norm_ff"), 2 * m);
        self.feed_forward(&format!("{name}.ff"), m, tokens);
    }

    fn cross_block(&mut self, name: &str, m: u64, tq: u64, tk: u64) {
        self.params(&format!("{name}.norm_q"), 2 * m);
        self.params(&format!("{name}.norm_kv"), 2 * m);
        self.attention(&format!("{name}.attn"), m, tq, tk);
        self.params(&format!("{name}.norm_ff"), 2 * m);
        self.feed_forward(&format!("{name}.ff"), m, tq);
    }
}

/// Analytic cost of one forward/backward pass over `batch` samples.
pub fn flops_estimate(spec: &ModelSpec, batch: usize) -> FlopsReport {
    let mut c = Counter {
        batch: batch as u64,
        layers: vec![],
    };
    let f = spec.token_features() as u64;
    let (m, n) = (spec.width as u64, spec.layers);
    let (t, o) = (spec.tokens as u64, spec.out_features as u64);
    match spec.arch {
        Architecture::Mlp => {
            c.linear("input", f, m, t);
            for i in 0..n {
                c.linear(&format!("hidden{i}"), m, m, t);
            }
            c.linear("head", m, o, t);
        }
        Architecture::ResMlp => {
            for i in 0..n {
                c.params(&format!("block{i}.pre_mix"), 2 * f);
                // token mixing: a T→T map applied to each of the F feature columns
                c.linear(&format!("block{i}.token_mix"), t, t, f);
                c.params(&format!("block{i}.pre_mlp"), 2 * f);
                c.linear(&format!("block{i}.up"), f, m, t);
                c.linear(&format!("block{i}.down"), m, f, t);
            }
            c.linear("head", f, o, t);
        }
        Architecture::TransformerEncoder => {
            c.linear("embed", f, m, t);
            for i in 0..n {
                c.encoder_block(&format!("block{i}"), m, t);
            }
            c.linear("head", m, o, t);
        }
        Architecture::PerceiverIo => {
            let l = spec.latents as u64;
            c.linear("embed", f, m, t);
            c.params("latents", l * m);
            c.cross_block("encode", m, l, t);
            for i in 0..n {
                c.encoder_block(&format!("block{i}"), m, l);
            }
            c.params("output_queries", t * m);
            c.cross_block("decode", m, t, l);
            c.linear("head", m, o, t);
        }
    }
    let forward = c.layers.iter().map(|l| l.forward).sum();
    let parameters = c.layers.iter().map(|l| l.parameters).sum();
    FlopsReport {
        forward,
        backward: 2 * forward,
        parameters,
        layers: c.layers,
    }
}

/// Closed-form parameter count of `spec`.
pub fn parameter_count(spec: &ModelSpec) -> u64 {
    flops_estimate(spec, 1).parameters
}
