use alloc::vec::Vec;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{LabelVolume, Volume};
use crate::kspace::{packed_width, volume_to_kspace, KSpacePlanes, kspace_to_volume};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineAugment {
    pub enabled: bool,
    /// Rotation about each axis drawn from `[-max, max]` degrees.
    pub max_rotation_deg: f64,
    /// Isotropic scale drawn from `[min_scale, max_scale]`.
    pub min_scale: f64,
    pub max_scale: f64,
    /// Shift per axis drawn from `[-max, max]` voxels.
    pub max_translation_vox: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastAugment {
    pub enabled: bool,
    /// `log(gamma)` drawn from `[-max, max]`.
    pub max_log_gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseAugment {
    pub enabled: bool,
    pub min_std: f64,
    pub max_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionAugment {
    pub enabled: bool,
    /// Number of corrupted k-space rows.
    pub lines: usize,
    /// Displacement of the corrupted rows drawn from `[-max, max]` voxels.
    pub max_shift_vox: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasFieldAugment {
    pub enabled: bool,
    /// Maximum total degree of the log-field polynomial.
    pub order: usize,
    /// Coefficients drawn from `[-max, max]`.
    pub max_coefficient: f64,
}

/// Training-time augmentation. Magnitudes are arbitrary desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub affine: AffineAugment,
    pub contrast: ContrastAugment,
    pub noise: NoiseAugment,
    pub motion: MotionAugment,
    pub bias_field: BiasFieldAugment,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            affine: AffineAugment {
                enabled: true,
                max_rotation_deg: 10.0,
                min_scale: 0.9,
                max_scale: 1.1,
                max_translation_vox: 2.0,
            },
            contrast: ContrastAugment {
                enabled: true,
                max_log_gamma: 0.3,
            },
            noise: NoiseAugment {
                enabled: true,
                min_std: 0.0,
                max_std: 0.1,
            },
            motion: MotionAugment {
                enabled: true,
                lines: 2,
                max_shift_vox: 2.0,
            },
            bias_field: BiasFieldAugment {
                enabled: true,
                order: 2,
                max_coefficient: 0.3,
            },
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        let mut c = Self::default();
        c.affine.enabled = false;
        c.contrast.enabled = false;
        c.noise.enabled = false;
        c.motion.enabled = false;
        c.bias_field.enabled = false;
        c
    }

    pub fn any_enabled(&self) -> bool {
        self.affine.enabled
            || self.contrast.enabled
            || self.noise.enabled
            || self.motion.enabled
            || self.bias_field.enabled
    }
}

/// Applies the enabled transforms in the order affine, contrast, noise,
/// motion, bias field. Labels only follow the geometric (affine) step.
pub fn augment(
    volume: &Volume,
    labels: &LabelVolume,
    cfg: &AugmentConfig,
    sample_seed: u64,
) -> (Volume, LabelVolume) {
    assert_eq!(volume.extents(), labels.extents(), "volume/label extents differ");
    let mut rng = Rng::seed(sample_seed);
    let (mut v, mut l) = (volume.clone(), labels.clone());
    if cfg.affine.enabled {
        let (nv, nl) = random_affine(&v, &l, &cfg.affine, &mut rng);
        v = nv;
        l = nl;
    }
    if cfg.contrast.enabled {
        let gamma = libm::exp(rng.range(-cfg.contrast.max_log_gamma, cfg.contrast.max_log_gamma));
        apply_gamma(&mut v, gamma);
    }
    if cfg.noise.enabled {
        let std = rng.range(cfg.noise.min_std, cfg.noise.max_std);
        for x in v.data_mut() {
            *x += std * rng.normal();
        }
    }
    if cfg.motion.enabled {
        v = motion_artifact(&v, &cfg.motion, &mut rng);
    }
    if cfg.bias_field.enabled {
        bias_field(&mut v, &cfg.bias_field, &mut rng);
    }
    (v, l)
}

type Mat3 = [[f64; 3]; 3];

fn rotation(angles: [f64; 3]) -> Mat3 {
    let (sx, cx) = (libm::sin(angles[0]), libm::cos(angles[0]));
    let (sy, cy) = (libm::sin(angles[1]), libm::cos(angles[1]));
    let (sz, cz) = (libm::sin(angles[2]), libm::cos(angles[2]));
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&mat_mul(&rz, &ry), &rx)
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn random_affine(v: &Volume, l: &LabelVolume, cfg: &AffineAugment, rng: &mut Rng) -> (Volume, LabelVolume) {
    let max_rad = cfg.max_rotation_deg.to_radians();
    let angles = [
        rng.range(-max_rad, max_rad),
        rng.range(-max_rad, max_rad),
        rng.range(-max_rad, max_rad),
    ];
    let scale = rng.range(cfg.min_scale, cfg.max_scale);
    let t = cfg.max_translation_vox;
    let shift = [rng.range(-t, t), rng.range(-t, t), rng.range(-t, t)];
    resample(v, l, &rotation(angles), scale, shift)
}

/// Output voxel `p` samples the source at `Rᵀ (p - c - shift) / scale + c`.
fn resample(v: &Volume, l: &LabelVolume, rot: &Mat3, scale: f64, shift: [f64; 3]) -> (Volume, LabelVolume) {
    let ext = v.extents();
    let center = [
        (ext[0] as f64 - 1.0) / 2.0,
        (ext[1] as f64 - 1.0) / 2.0,
        (ext[2] as f64 - 1.0) / 2.0,
    ];
    let fill = v.data().iter().copied().fold(f64::INFINITY, f64::min);
    let mut out_v = Vec::with_capacity(v.len());
    let mut out_l = Vec::with_capacity(l.len());
    for d in 0..ext[0] {
        for h in 0..ext[1] {
            for w in 0..ext[2] {
                let p = [d as f64, h as f64, w as f64];
                let q: [f64; 3] = core::array::from_fn(|a| (p[a] - center[a] - shift[a]) / scale);
                let src: [f64; 3] = core::array::from_fn(|a| {
                    // Rᵀ q
                    (0..3).map(|k| rot[k][a] * q[k]).sum::<f64>() + center[a]
                });
                out_v.push(trilinear(v, src).unwrap_or(fill));
                out_l.push(nearest(l, src).unwrap_or(0));
            }
        }
    }
    (
        Volume::new(ext, v.spacing_mm(), out_v).expect("extents preserved"),
        LabelVolume::new(ext, l.spacing_mm(), out_l).expect("extents preserved"),
    )
}

const GRID_EPS: f64 = 1e-9;

fn trilinear(v: &Volume, p: [f64; 3]) -> Option<f64> {
    let ext = v.extents();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let max = (ext[a] - 1) as f64;
        if p[a] < -GRID_EPS || p[a] > max + GRID_EPS {
            return None;
        }
        let x = p[a].clamp(0.0, max);
        let f = libm::floor(x);
        base[a] = (f as usize).min(ext[a].saturating_sub(2));
        frac[a] = x - base[a] as f64;
        if ext[a] == 1 {
            frac[a] = 0.0;
        }
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut weight = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let upper = (corner >> a) & 1 == 1;
            weight *= if upper { frac[a] } else { 1.0 - frac[a] };
            idx[a] = (base[a] + upper as usize).min(ext[a] - 1);
        }
        if weight != 0.0 {
            acc += weight * v.get(idx[0], idx[1], idx[2]);
        }
    }
    Some(acc)
}

fn nearest(l: &LabelVolume, p: [f64; 3]) -> Option<u16> {
    let ext = l.extents();
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = libm::round(p[a]);
        if r < 0.0 || r > (ext[a] - 1) as f64 {
            return None;
        }
        idx[a] = r as usize;
    }
    Some(l.data()[(idx[0] * ext[1] + idx[1]) * ext[2] + idx[2]])
}

/// Gamma on the min-max rescaled intensities, mapped back to the original
/// range.
fn apply_gamma(v: &mut Volume, gamma: f64) {
    let lo = v.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range <= 0.0 {
        return;
    }
    for x in v.data_mut() {
        let t = ((*x - lo) / range).clamp(0.0, 1.0);
        *x = lo + range * libm::pow(t, gamma);
    }
}

/// Replaces a few k-space rows of every slice with copies carrying a
/// phase ramp, i.e. rows acquired after a rigid shift along the width axis.
fn motion_artifact(v: &Volume, cfg: &MotionAugment, rng: &mut Rng) -> Volume {
    let [_, height, width] = v.extents();
    if width % 2 != 0 || height < 2 || cfg.lines == 0 {
        return v.clone();
    }
    let Ok(k) = volume_to_kspace(v) else {
        return v.clone();
    };
    let wp = packed_width(width);
    let lines: Vec<(usize, f64)> = (0..cfg.lines)
        .map(|_| (rng.below(height), rng.range(-cfg.max_shift_vox, cfg.max_shift_vox)))
        .collect();
    let (mut real, mut imag) = (k.real().to_vec(), k.imag().to_vec());
    for d in 0..k.depth() {
        for &(row, shift) in &lines {
            for col in 0..wp {
                let i = (d * height + row) * wp + col;
                let ramp = Complex64::from_polar(1.0, -2.0 * core::f64::consts::PI * col as f64 * shift / width as f64);
                let c = Complex64::new(real[i], imag[i]) * ramp;
                real[i] = c.re;
                imag[i] = c.im;
            }
        }
    }
    let moved = KSpacePlanes::new(k.depth(), height, width, real, imag).expect("same extents");
    kspace_to_volume(&moved, v.spacing_mm()).expect("same extents")
}

/// Multiplies by `exp(poly(x, y, z))` with all monomials of degree
/// `1..=order` on `[-1, 1]³` coordinates.
fn bias_field(v: &mut Volume, cfg: &BiasFieldAugment, rng: &mut Rng) {
    let mut terms = Vec::new();
    for i in 0..=cfg.order {
        for j in 0..=cfg.order - i {
            for k in 0..=cfg.order - i - j {
                if i + j + k > 0 {
                    terms.push(([i as i32, j as i32, k as i32], rng.range(-cfg.max_coefficient, cfg.max_coefficient)));
                }
            }
        }
    }
    let ext = v.extents();
    let coord = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 * 2.0 - 1.0 } else { 0.0 };
    for d in 0..ext[0] {
        for h in 0..ext[1] {
            for w in 0..ext[2] {
                let u = [coord(d, ext[0]), coord(h, ext[1]), coord(w, ext[2])];
                let log_field: f64 = terms
                    .iter()
                    .map(|(pw, c)| c * libm::pow(u[0], pw[0] as f64) * libm::pow(u[1], pw[1] as f64) * libm::pow(u[2], pw[2] as f64))
                    .sum();
                let idx = v.index(d, h, w);
                v.data_mut()[idx] *= libm::exp(log_field);
            }
        }
    }
}
