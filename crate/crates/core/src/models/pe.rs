use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::autodiff::Tensor;
use crate::{Error, Result};

/// Sin/cos features of the token index, one row per token:
/// `[sin(π f_1 d/(D−1)) .. sin(π f_K d/(D−1)), cos(..) ..]` with the `f_k`
/// spaced linearly over `[1, D/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierPe {
    tokens: usize,
    bands: usize,
    table: Vec<f64>,
}

impl FourierPe {
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Features per token, `2K`.
    pub fn width(&self) -> usize {
        2 * self.bands
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.table[d * self.width()..(d + 1) * self.width()]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn frequencies(&self) -> Vec<f64> {
        band_frequencies(self.tokens, self.bands)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(alloc::vec![self.tokens, self.width()], self.table.clone()).expect("table shape")
    }
}

fn band_frequencies(tokens: usize, bands: usize) -> Vec<f64> {
    let top = (tokens as f64 / 2.0).max(1.0);
    (0..bands)
        .map(|k| {
            if bands == 1 {
                1.0
            } else {
                1.0 + (top - 1.0) * k as f64 / (bands - 1) as f64
            }
        })
        .collect()
}

pub fn fourier_pe(tokens: usize, bands: usize) -> Result<FourierPe> {
    if tokens == 0 || bands == 0 {
        return Err(Error::Config("fourier encoding needs D >= 1 and K >= 1".into()));
    }
    let freqs = band_frequencies(tokens, bands);
    let span = if tokens > 1 { (tokens - 1) as f64 } else { 1.0 };
    let mut table = Vec::with_capacity(tokens * 2 * bands);
    for d in 0..tokens {
        let pos = d as f64 / span;
        table.extend(freqs.iter().map(|f| libm::sin(PI * f * pos)));
        table.extend(freqs.iter().map(|f| libm::cos(PI * f * pos)));
    }
    Ok(FourierPe {
        tokens,
        bands,
        table,
    })
}
