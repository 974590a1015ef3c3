use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Extents, LabelVolume, Volume};
use crate::rng::Rng;
use crate::{Error, Result};

/// Segmentation problem posed on a phantom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Brain vs everything else, on a head with skull and scalp.
    SkullStrip,
    /// Background plus six tissues, on a skull-stripped brain.
    Tissue,
}

impl Task {
    pub fn classes(self) -> usize {
        match self {
            Task::SkullStrip => 2,
            Task::Tissue => 7,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::SkullStrip => &["background", "brain"],
            Task::Tissue => &TISSUE_CLASS_NAMES,
        }
    }
}

pub const TISSUE_CLASS_NAMES: [&str; 7] = [
    "background",
    "cortical_gray_matter",
    "white_matter",
    "csf",
    "deep_gray_matter",
    "brain_stem",
    "cerebellum",
];

/// Tissue kinds that receive their own intensity distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(usize)]
pub enum Tissue {
    Background = 0,
    CorticalGrayMatter = 1,
    WhiteMatter = 2,
    Csf = 3,
    DeepGrayMatter = 4,
    BrainStem = 5,
    Cerebellum = 6,
    Skull = 7,
    Scalp = 8,
}

pub const TISSUE_KINDS: usize = 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomParams {
    pub seed: u64,
    pub extents: Extents,
    pub spacing_mm: f64,
    pub task: Task,
    /// Mean intensity per [`Tissue`].
    pub intensity_means: [f64; TISSUE_KINDS],
    /// Voxel noise standard deviation per [`Tissue`].
    pub intensity_stds: [f64; TISSUE_KINDS],
    /// Relative jitter of every ellipsoid radius.
    pub radius_jitter: f64,
    /// Jitter of ellipsoid centres, in normalised `[-1, 1]` coordinates.
    pub center_jitter: f64,
    /// Thickness of the CSF and cortical shells as a fraction of the
    /// brain radius.
    pub csf_shell: f64,
    pub cortex_shell: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            seed: 0,
            extents: [32, 32, 32],
            spacing_mm: 3.0,
            task: Task::Tissue,
            intensity_means: [0.0, 0.5, 0.85, 0.22, 0.65, 0.75, 0.38, 0.12, 0.7],
            intensity_stds: [0.01, 0.03, 0.03, 0.03, 0.03, 0.03, 0.03, 0.03, 0.05],
            radius_jitter: 0.08,
            center_jitter: 0.04,
            csf_shell: 0.14,
            cortex_shell: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn jittered(center: [f64; 3], radii: [f64; 3], p: &PhantomParams, rng: &mut Rng) -> Self {
        let mut e = Self { center, radii };
        for a in 0..3 {
            e.center[a] += rng.range(-p.center_jitter, p.center_jitter);
            e.radii[a] *= 1.0 + rng.range(-p.radius_jitter, p.radius_jitter);
        }
        e
    }

    /// Normalised radius; `<= 1` inside.
    fn rho(&self, u: [f64; 3]) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            let t = (u[a] - self.center[a]) / self.radii[a];
            s += t * t;
        }
        libm::sqrt(s)
    }
}

struct Anatomy {
    brain: Ellipsoid,
    ventricles: Ellipsoid,
    deep_gm: [Ellipsoid; 2],
    brain_stem: Ellipsoid,
    cerebellum: Ellipsoid,
}

impl Anatomy {
    // Axes: 0 lateral (sagittal slice index), 1 superior→inferior,
    // 2 anterior→posterior.
    fn sample(p: &PhantomParams, rng: &mut Rng) -> Self {
        let brain = Ellipsoid::jittered([0.0, 0.0, 0.0], [0.68, 0.72, 0.78], p, rng);
        let ventricles = Ellipsoid::jittered([0.0, -0.12, 0.0], [0.07, 0.12, 0.3], p, rng);
        let left = Ellipsoid::jittered([-0.24, 0.02, -0.05], [0.12, 0.15, 0.2], p, rng);
        let right = Ellipsoid::jittered([0.24, 0.02, -0.05], [0.12, 0.15, 0.2], p, rng);
        let brain_stem = Ellipsoid::jittered([0.0, 0.5, 0.05], [0.14, 0.4, 0.15], p, rng);
        let cerebellum = Ellipsoid::jittered([0.0, 0.5, 0.45], [0.48, 0.26, 0.3], p, rng);
        Self {
            brain,
            ventricles,
            deep_gm: [left, right],
            brain_stem,
            cerebellum,
        }
    }

    fn tissue_at(&self, u: [f64; 3], p: &PhantomParams) -> Tissue {
        let rho = self.brain.rho(u);
        if rho > 1.0 {
            return match rho {
                r if r <= 1.04 => Tissue::Background,
                r if r <= 1.14 => Tissue::Skull,
                r if r <= 1.24 => Tissue::Scalp,
                _ => Tissue::Background,
            };
        }
        if self.cerebellum.rho(u) <= 1.0 {
            Tissue::Cerebellum
        } else if self.brain_stem.rho(u) <= 1.0 {
            Tissue::BrainStem
        } else if rho > 1.0 - p.csf_shell {
            Tissue::Csf
        } else if rho > 1.0 - p.csf_shell - p.cortex_shell {
            Tissue::CorticalGrayMatter
        } else if self.ventricles.rho(u) <= 1.0 {
            Tissue::Csf
        } else if self.deep_gm.iter().any(|e| e.rho(u) <= 1.0) {
            Tissue::DeepGrayMatter
        } else {
            Tissue::WhiteMatter
        }
    }
}

/// Draws one subject. Identical parameters give a bitwise-identical result.
pub fn generate_phantom(p: &PhantomParams) -> Result<(Volume, LabelVolume)> {
    if p.extents.iter().any(|&e| e < 8) {
        return Err(Error::Generation(format!(
            "extents {:?} are too small for the shell geometry (need >= 8 per axis)",
            p.extents
        )));
    }
    let mut rng = Rng::seed(p.seed);
    let anatomy = Anatomy::sample(p, &mut rng);
    let brightness = 1.0 + rng.range(-0.05, 0.05);
    let [nd, nh, nw] = p.extents;
    let n = nd * nh * nw;
    let mut intensities = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let coord = |i: usize, len: usize| (i as f64 + 0.5) / len as f64 * 2.0 - 1.0;
    for d in 0..nd {
        for h in 0..nh {
            for w in 0..nw {
                let u = [coord(d, nd), coord(h, nh), coord(w, nw)];
                let mut tissue = anatomy.tissue_at(u, p);
                let in_brain = !matches!(tissue, Tissue::Background | Tissue::Skull | Tissue::Scalp);
                let label = match p.task {
                    Task::SkullStrip => in_brain as u16,
                    Task::Tissue => {
                        if !in_brain {
                            // skull-stripped input
                            tissue = Tissue::Background;
                        }
                        tissue as u16
                    }
                };
                let k = tissue as usize;
                let value = p.intensity_means[k] * brightness + p.intensity_stds[k] * rng.normal();
                intensities.push(value);
                labels.push(label);
            }
        }
    }
    Ok((
        Volume::new(p.extents, p.spacing_mm, intensities)?,
        LabelVolume::new(p.extents, p.spacing_mm, labels)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64, task: Task, ext: usize) -> PhantomParams {
        PhantomParams {
            seed,
            task,
            extents: [ext; 3],
            ..PhantomParams::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let p = params(42, Task::Tissue, 16);
        let (v1, l1) = generate_phantom(&p).unwrap();
        let (v2, l2) = generate_phantom(&p).unwrap();
        assert!(v1.data().iter().zip(v2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(l1, l2);
        let (v3, _) = generate_phantom(&params(43, Task::Tissue, 16)).unwrap();
        assert_ne!(v1, v3);
    }

    #[test]
    fn tissue_classes_and_background_corners() {
        let (_, l) = generate_phantom(&params(3, Task::Tissue, 32)).unwrap();
        assert!(l.max_class() <= 6);
        let mut present = [false; 7];
        for &c in l.data() {
            present[c as usize] = true;
        }
        assert!(present.iter().all(|&p| p), "{present:?}");
        let n = 31;
        for &(d, h, w) in &[(0, 0, 0), (n, 0, 0), (0, n, 0), (0, 0, n), (n, n, 0), (n, 0, n), (0, n, n), (n, n, n)] {
            assert_eq!(l.data()[(d * 32 + h) * 32 + w], 0);
        }
    }

    #[test]
    fn skull_strip_has_skull_intensity_outside_brain() {
        let p = params(5, Task::SkullStrip, 32);
        let (v, l) = generate_phantom(&p).unwrap();
        assert!(l.max_class() == 1);
        let outside_bright = v
            .data()
            .iter()
            .zip(l.data())
            .filter(|&(&x, &c)| c == 0 && x > 0.3)
            .count();
        assert!(outside_bright > 100, "{outside_bright}");
    }

    #[test]
    fn brain_fraction_over_many_seeds() {
        for seed in 0..100 {
            let (_, l) = generate_phantom(&params(seed, Task::SkullStrip, 16)).unwrap();
            let frac = l.data().iter().filter(|&&c| c == 1).count() as f64 / l.len() as f64;
            assert!((0.15..=0.6).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn too_small_extents_fail() {
        let p = PhantomParams {
            extents: [8, 7, 8],
            ..PhantomParams::default()
        };
        assert!(matches!(generate_phantom(&p), Err(Error::Generation(_))));
    }
}
