use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Extents, LabelVolume, Volume};
use crate::kspace::{self, packed_len, KSpacePlanes};
use crate::{Error, Result};

/// Where model inputs and training labels live.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainConfig {
    SpatialToSpatial,
    KToK,
    KToSpatial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Per-voxel softmax cross-entropy over the class axis.
    CrossEntropy,
    /// Mean squared error over every packed spectral coefficient.
    Mse,
}

impl DomainConfig {
    pub const ALL: [DomainConfig; 3] = [Self::SpatialToSpatial, Self::KToK, Self::KToSpatial];

    pub fn name(self) -> &'static str {
        match self {
            Self::SpatialToSpatial => "SpatialToSpatial",
            Self::KToK => "KToK",
            Self::KToSpatial => "KToSpatial",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == name)
    }

    pub fn kspace_input(self) -> bool {
        matches!(self, Self::KToK | Self::KToSpatial)
    }

    pub fn kspace_labels(self) -> bool {
        matches!(self, Self::KToK)
    }

    pub fn loss(self) -> LossKind {
        if self.kspace_labels() {
            LossKind::Mse
        } else {
            LossKind::CrossEntropy
        }
    }

    /// Per-slice input width for `H×W` slices.
    pub fn in_features(self, extents: Extents) -> usize {
        let [_, h, w] = extents;
        if self.kspace_input() {
            packed_len(h, w)
        } else {
            h * w
        }
    }

    /// Per-slice output width for `classes` classes.
    pub fn out_features(self, extents: Extents, classes: usize) -> usize {
        let [_, h, w] = extents;
        if self.kspace_labels() {
            classes * packed_len(h, w)
        } else {
            classes * h * w
        }
    }
}

/// Training targets for a batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// One class index per voxel, `(b, d, h, w)` order.
    Classes(Vec<usize>),
    /// Per sample and slice, `C` blocks of packed real then imaginary planes.
    Spectra(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Self::Classes(c) => c.len(),
            Self::Spectra(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn extend(&mut self, other: Targets) {
        match (self, other) {
            (Self::Classes(a), Self::Classes(b)) => a.extend(b),
            (Self::Spectra(a), Self::Spectra(b)) => a.extend(b),
            _ => unreachable!("mixed target kinds in one batch"),
        }
    }
}

/// Loss for one domain configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Loss {
    pub kind: LossKind,
    pub classes: usize,
}

pub fn make_loss(domain: DomainConfig, classes: usize) -> Loss {
    Loss {
        kind: domain.loss(),
        classes,
    }
}

impl Loss {
    /// Records the scalar loss of `output` (`[B, D, out_features]`) against
    /// `targets`.
    pub fn apply(&self, tape: &mut Tape, output: Var, targets: &Targets) -> Result<Var> {
        match (self.kind, targets) {
            (LossKind::CrossEntropy, Targets::Classes(t)) => {
                let s = tape.shape(output).to_vec();
                let n = s.iter().product::<usize>();
                if n != t.len() * self.classes {
                    return Err(Error::Dimension(format!(
                        "{n} logits for {} voxels of {} classes",
                        t.len(),
                        self.classes
                    )));
                }
                let logits = tape.reshape(output, &[t.len(), self.classes])?;
                tape.cross_entropy(logits, t)
            }
            (LossKind::Mse, Targets::Spectra(t)) => tape.mse(output, t),
            _ => Err(Error::Contract("targets do not match the loss kind".into())),
        }
    }

    /// Loss value without gradients.
    pub fn value(&self, output: &Tensor, targets: &Targets) -> Result<f64> {
        let mut tape = Tape::new();
        let out = tape.constant(output.clone());
        let l = self.apply(&mut tape, out, targets)?;
        Ok(tape.value(l).data()[0])
    }
}

/// Model input rows for one volume: `D × in_features`.
pub fn input_features(volume: &Volume, domain: DomainConfig) -> Result<Vec<f64>> {
    if domain.kspace_input() {
        Ok(kspace::volume_to_kspace(volume)?.to_features())
    } else {
        Ok(volume.data().to_vec())
    }
}

/// Training targets for one label volume.
pub fn label_targets(labels: &LabelVolume, domain: DomainConfig, classes: usize) -> Result<Targets> {
    labels.check_classes(classes)?;
    if !domain.kspace_labels() {
        return Ok(Targets::Classes(labels.data().iter().map(|&c| c as usize).collect()));
    }
    let [depth, h, _] = labels.extents();
    let per_class: Vec<Vec<f64>> = kspace::labels_to_kspace(labels, classes)?
        .iter()
        .map(KSpacePlanes::to_features)
        .collect();
    let per = packed_len(h, labels.extents()[2]);
    let mut out = Vec::with_capacity(depth * classes * per);
    for d in 0..depth {
        for spec in &per_class {
            out.extend_from_slice(&spec[d * per..(d + 1) * per]);
        }
    }
    Ok(Targets::Spectra(out))
}

/// A preprocessed subject: intensities already normalised.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub volume: Volume,
    pub labels: LabelVolume,
}

impl Sample {
    /// Z-normalises `volume`.
    pub fn new(volume: Volume, labels: LabelVolume) -> Result<Self> {
        if volume.extents() != labels.extents() {
            return Err(Error::Dimension(format!(
                "volume {:?} vs labels {:?}",
                volume.extents(),
                labels.extents()
            )));
        }
        Ok(Self {
            volume: crate::data::z_normalize(&volume),
            labels,
        })
    }
}

/// Stacks `samples` into `[B, D, in_features]` inputs and matching targets.
pub fn prepare_batch(samples: &[Sample], domain: DomainConfig, classes: usize) -> Result<(Tensor, Targets)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("empty batch".into()))?;
    let extents = first.volume.extents();
    let mut inputs = Vec::new();
    let mut targets = if domain.kspace_labels() {
        Targets::Spectra(Vec::new())
    } else {
        Targets::Classes(Vec::new())
    };
    for s in samples {
        if s.volume.extents() != extents {
            return Err(Error::Dimension("batch mixes volume extents".into()));
        }
        inputs.extend(input_features(&s.volume, domain)?);
        targets.extend(label_targets(&s.labels, domain, classes)?);
    }
    let x = Tensor::new(
        alloc::vec![samples.len(), extents[0], domain.in_features(extents)],
        inputs,
    )?;
    Ok((x, targets))
}

/// Index of the largest value; ties go to the lower index.
fn argmax(values: impl Iterator<Item = f64>) -> u16 {
    let mut best = (0u16, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 || i == 0 {
            best = (i as u16, v);
        }
    }
    best.0
}

/// Turns the raw output of one sample (`D × out_features`) into a mask.
pub fn decode_output(
    output: &[f64],
    domain: DomainConfig,
    extents: Extents,
    spacing_mm: f64,
    classes: usize,
) -> Result<LabelVolume> {
    let [depth, h, w] = extents;
    let expect = depth * domain.out_features(extents, classes);
    if output.len() != expect {
        return Err(Error::Dimension(format!(
            "output has {} values, expected {expect}",
            output.len()
        )));
    }
    let voxels = depth * h * w;
    let mut mask = Vec::with_capacity(voxels);
    if !domain.kspace_labels() {
        for v in output.chunks(classes) {
            mask.push(argmax(v.iter().copied()));
        }
    } else {
        let per = packed_len(h, w);
        // decoded[c][voxel]
        let mut decoded = alloc::vec![Vec::with_capacity(voxels); classes];
        for slice in output.chunks(classes * per) {
            for (c, block) in slice.chunks(per).enumerate() {
                let k = KSpacePlanes::from_features(1, h, w, block)?;
                decoded[c].extend(kspace::irfft2_unpack(&k)?);
            }
        }
        for i in 0..voxels {
            mask.push(argmax(decoded.iter().map(|d| d[i])));
        }
    }
    LabelVolume::new(extents, spacing_mm, mask)
}
