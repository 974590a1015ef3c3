//! Real 2-D FFT of sagittal slices with the half spectrum stored as separate
//! real and imaginary planes.
//!
//! For a real `H×W` slice only columns `0..=W/2` of the spectrum are kept
//! (`Wp = W/2 + 1`); the rest follow from Hermitian symmetry. Forward and
//! inverse transforms both carry the orthonormal factor `1/sqrt(H·W)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::data::{LabelVolume, Volume};
use crate::{Error, Result};

/// Scaling applied by the transform pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// `1/sqrt(H·W)` on forward and inverse.
    Ortho,
}

/// Packed half spectrum of one or more `H×W` slices.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpacePlanes {
    depth: usize,
    height: usize,
    width: usize,
    real: Vec<f64>,
    imag: Vec<f64>,
    norm: Normalization,
}

pub fn packed_width(width: usize) -> usize {
    width / 2 + 1
}

/// Reals stored per slice: one real and one imaginary plane of `H×(W/2+1)`.
pub fn packed_len(height: usize, width: usize) -> usize {
    2 * height * packed_width(width)
}

impl KSpacePlanes {
    pub fn new(
        depth: usize,
        height: usize,
        width: usize,
        real: Vec<f64>,
        imag: Vec<f64>,
    ) -> Result<Self> {
        let n = depth * height * packed_width(width);
        if depth == 0 || height < 2 || width < 2 || width % 2 != 0 || real.len() != n || imag.len() != n {
            return Err(Error::Dimension(format!(
                "planes of {}/{} values do not fit {depth}×{height}×{} (W = {width})",
                real.len(),
                imag.len(),
                packed_width(width)
            )));
        }
        Ok(Self {
            depth,
            height,
            width,
            real,
            imag,
            norm: Normalization::Ortho,
        })
    }

    /// Splits a `[depth][real plane, imag plane]` feature layout back into
    /// planes; the inverse of [`KSpacePlanes::to_features`].
    pub fn from_features(depth: usize, height: usize, width: usize, features: &[f64]) -> Result<Self> {
        let per = packed_len(height, width);
        if features.len() != depth * per {
            return Err(Error::Dimension(format!(
                "{} features for {depth} slices of {per}",
                features.len()
            )));
        }
        let half = per / 2;
        let mut real = Vec::with_capacity(depth * half);
        let mut imag = Vec::with_capacity(depth * half);
        for slice in features.chunks(per) {
            real.extend_from_slice(&slice[..half]);
            imag.extend_from_slice(&slice[half..]);
        }
        Self::new(depth, height, width, real, imag)
    }

    /// Per slice: the real plane followed by the imaginary plane.
    pub fn to_features(&self) -> Vec<f64> {
        let half = self.height * self.packed_width();
        let mut out = Vec::with_capacity(2 * self.real.len());
        for d in 0..self.depth {
            out.extend_from_slice(&self.real[d * half..(d + 1) * half]);
            out.extend_from_slice(&self.imag[d * half..(d + 1) * half]);
        }
        out
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Width of the spatial slice this spectrum came from.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn packed_width(&self) -> usize {
        packed_width(self.width)
    }

    pub fn norm(&self) -> Normalization {
        self.norm
    }

    pub fn real(&self) -> &[f64] {
        &self.real
    }

    pub fn imag(&self) -> &[f64] {
        &self.imag
    }

    pub fn stored_reals_per_slice(&self) -> usize {
        packed_len(self.height, self.width)
    }

    fn slice_range(&self, d: usize) -> core::ops::Range<usize> {
        let n = self.height * self.packed_width();
        d * n..(d + 1) * n
    }

    pub fn slice_real(&self, d: usize) -> &[f64] {
        &self.real[self.slice_range(d)]
    }

    pub fn slice_imag(&self, d: usize) -> &[f64] {
        &self.imag[self.slice_range(d)]
    }

    /// Spatial energy recovered from the half spectrum: interior columns
    /// stand for themselves and their mirror, the self-conjugate columns
    /// (0 and W/2) only for themselves.
    pub fn energy(&self) -> f64 {
        let wp = self.packed_width();
        let mut total = 0.0;
        for (i, (re, im)) in self.real.iter().zip(&self.imag).enumerate() {
            let col = i % wp;
            let weight = if col == 0 || col == wp - 1 { 1.0 } else { 2.0 };
            total += weight * (re * re + im * im);
        }
        total
    }
}

/// In-place complex DFT. Radix-2 for power-of-two lengths, direct sum
/// otherwise. `inverse` flips the exponent sign; no scaling is applied.
pub(crate) fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    if !n.is_power_of_two() {
        let src = buf.to_vec();
        for (k, out) in buf.iter_mut().enumerate() {
            *out = src
                .iter()
                .enumerate()
                .map(|(j, x)| x * Complex64::from_polar(1.0, sign * 2.0 * PI * ((j * k) % n) as f64 / n as f64))
                .sum();
        }
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let step = Complex64::from_polar(1.0, sign * 2.0 * PI / len as f64);
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let u = buf[start + k];
                let v = buf[start + k + len / 2] * w;
                buf[start + k] = u + v;
                buf[start + k + len / 2] = u - v;
                w *= step;
            }
        }
        len <<= 1;
    }
}

fn check_plane(height: usize, width: usize, len: usize) -> Result<()> {
    if width % 2 != 0 {
        return Err(Error::UnsupportedExtent(format!(
            "real FFT packing needs an even width, got {width}"
        )));
    }
    if height < 2 || width < 2 {
        return Err(Error::UnsupportedExtent(format!(
            "slice {height}×{width} is below the 2×2 minimum"
        )));
    }
    if len != height * width {
        return Err(Error::Dimension(format!(
            "{len} values for a {height}×{width} slice"
        )));
    }
    Ok(())
}

/// Half spectrum of an `H×W` slice as `(real, imag)`, each `H×(W/2+1)`.
fn rfft2(plane: &[f64], height: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let wp = packed_width(width);
    let mut spec = vec![Complex64::new(0.0, 0.0); height * wp];
    let mut row = vec![Complex64::new(0.0, 0.0); width];
    for h in 0..height {
        for (c, &x) in row.iter_mut().zip(&plane[h * width..(h + 1) * width]) {
            *c = Complex64::new(x, 0.0);
        }
        fft_in_place(&mut row, false);
        spec[h * wp..(h + 1) * wp].copy_from_slice(&row[..wp]);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    let scale = 1.0 / libm::sqrt((height * width) as f64);
    let (mut real, mut imag) = (vec![0.0; height * wp], vec![0.0; height * wp]);
    for k in 0..wp {
        for h in 0..height {
            col[h] = spec[h * wp + k];
        }
        fft_in_place(&mut col, false);
        for h in 0..height {
            real[h * wp + k] = col[h].re * scale;
            imag[h * wp + k] = col[h].im * scale;
        }
    }
    (real, imag)
}

fn irfft2(real: &[f64], imag: &[f64], height: usize, width: usize) -> Vec<f64> {
    let wp = packed_width(width);
    let mut spec = vec![Complex64::new(0.0, 0.0); height * wp];
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for k in 0..wp {
        for h in 0..height {
            col[h] = Complex64::new(real[h * wp + k], imag[h * wp + k]);
        }
        fft_in_place(&mut col, true);
        for h in 0..height {
            spec[h * wp + k] = col[h];
        }
    }
    let scale = 1.0 / libm::sqrt((height * width) as f64);
    let mut out = vec![0.0; height * width];
    let mut row = vec![Complex64::new(0.0, 0.0); width];
    for h in 0..height {
        let half = &spec[h * wp..(h + 1) * wp];
        row[..wp].copy_from_slice(half);
        for k in wp..width {
            row[k] = half[width - k].conj();
        }
        fft_in_place(&mut row, true);
        for (o, c) in out[h * width..(h + 1) * width].iter_mut().zip(&row) {
            *o = c.re * scale;
        }
    }
    out
}

/// Forward transform of one `H×W` slice.
pub fn rfft2_pack(plane: &[f64], height: usize, width: usize) -> Result<KSpacePlanes> {
    check_plane(height, width, plane.len())?;
    let (real, imag) = rfft2(plane, height, width);
    KSpacePlanes::new(1, height, width, real, imag)
}

/// Inverse of [`rfft2_pack`] for a single-slice spectrum.
pub fn irfft2_unpack(k: &KSpacePlanes) -> Result<Vec<f64>> {
    if k.depth != 1 {
        return Err(Error::Dimension(format!(
            "expected one slice, got {}",
            k.depth
        )));
    }
    Ok(irfft2(&k.real, &k.imag, k.height, k.width))
}

/// Transforms every sagittal slice independently.
pub fn volume_to_kspace(v: &Volume) -> Result<KSpacePlanes> {
    let [depth, height, width] = v.extents();
    check_plane(height, width, height * width)?;
    let n = height * packed_width(width);
    let (mut real, mut imag) = (Vec::with_capacity(depth * n), Vec::with_capacity(depth * n));
    for d in 0..depth {
        let (re, im) = rfft2(v.slice(d), height, width);
        real.extend_from_slice(&re);
        imag.extend_from_slice(&im);
    }
    KSpacePlanes::new(depth, height, width, real, imag)
}

/// Inverse of [`volume_to_kspace`].
pub fn kspace_to_volume(k: &KSpacePlanes, spacing_mm: f64) -> Result<Volume> {
    let mut data = Vec::with_capacity(k.depth * k.height * k.width);
    for d in 0..k.depth {
        data.extend(irfft2(k.slice_real(d), k.slice_imag(d), k.height, k.width));
    }
    Volume::new([k.depth, k.height, k.width], spacing_mm, data)
}

/// One spectrum per class of the one-hot encoding of `labels`.
pub fn labels_to_kspace(labels: &LabelVolume, classes: usize) -> Result<Vec<KSpacePlanes>> {
    labels.check_classes(classes)?;
    (0..classes)
        .map(|c| volume_to_kspace(&labels.one_hot(c as u16)))
        .collect()
}
