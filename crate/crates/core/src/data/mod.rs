//! Synthetic brain phantoms, intensity preprocessing, augmentation and
//! dataset splits.

mod augment;
mod phantom;
mod volume;

use alloc::format;
use alloc::vec::Vec;

pub use augment::{
    augment, AffineAugment, AugmentConfig, BiasFieldAugment, ContrastAugment, MotionAugment,
    NoiseAugment,
};
pub use phantom::{generate_phantom, PhantomParams, Task, Tissue, TISSUE_CLASS_NAMES, TISSUE_KINDS};
pub use volume::{Extents, LabelVolume, Volume};

use crate::rng::Rng;
use crate::{Error, Result};

/// Standard deviation below which a volume counts as constant.
pub const CONSTANT_STD: f64 = 1e-8;

/// `(v - mean) / std` with the population standard deviation; constant
/// volumes map to zeros.
pub fn z_normalize(v: &Volume) -> Volume {
    let n = v.len() as f64;
    let mean = v.data().iter().sum::<f64>() / n;
    let var = v.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    let data = if std < CONSTANT_STD {
        alloc::vec![0.0; v.len()]
    } else {
        v.data().iter().map(|x| (x - mean) / std).collect()
    };
    Volume::new(v.extents(), v.spacing_mm(), data).expect("extents preserved")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffled 80/10/10 partition of `0..n`: `floor(0.8n)` training,
/// `floor(0.1n)` validation, the remainder for testing.
pub fn split_dataset(n: usize, seed: u64) -> Result<Split> {
    if n < 10 {
        return Err(Error::Config(format!("need at least 10 subjects to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::seed(seed).shuffle(&mut idx);
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(Split {
        train: idx,
        val,
        test,
    })
}
