//! Domain plumbing, training loop, mask decoding and evaluation.
//!
//! A run is a pure function of its [`TrainConfig`] and the samples handed in:
//! the model seed, the epoch shuffles and every augmentation draw are derived
//! from `TrainConfig::seed`.

mod adam;
mod domain;

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamParams};
pub use domain::{
    decode_output, input_features, label_targets, make_loss, prepare_batch, DomainConfig, Loss,
    LossKind, Sample, Targets,
};

use crate::autodiff::{Tape, Tensor};
use crate::data::{augment, AugmentConfig, Extents, LabelVolume, Task, Volume};
use crate::metrics::{aggregate, subject_metrics, MetricsReport};
use crate::models::{Architecture, Model, ModelSpec, PositionalEncoding};
use crate::rng::{derive_seed, Rng};
use crate::{Error, Result};

fn default_patience() -> usize {
    10
}

fn default_lr() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub domain: DomainConfig,
    pub task: Task,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub adam: AdamParams,
    pub seed: u64,
    /// Epochs without a validation Dice improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Optional cap on optimisation steps across all epochs.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "AugmentConfig::disabled")]
    pub augment: AugmentConfig,
}

/// Model spec whose input and output widths fit `domain` on volumes of
/// `extents`.
pub fn spec_for(
    arch: Architecture,
    domain: DomainConfig,
    extents: Extents,
    classes: usize,
    layers: usize,
    width: usize,
) -> ModelSpec {
    ModelSpec {
        arch,
        layers,
        width,
        heads: 4,
        latents: 8,
        pe: PositionalEncoding::None,
        activation: Default::default(),
        tokens: extents[0],
        in_features: domain.in_features(extents),
        out_features: domain.out_features(extents, classes),
    }
}

impl TrainConfig {
    /// Defaults around a model spec: 20 epochs, batch 4, Adam at 1e-3,
    /// patience 10, no augmentation.
    pub fn new(model: ModelSpec, domain: DomainConfig, task: Task, seed: u64) -> Self {
        Self {
            model,
            domain,
            task,
            epochs: 20,
            batch_size: 4,
            lr: default_lr(),
            adam: AdamParams::default(),
            seed,
            patience: default_patience(),
            max_steps: None,
            augment: AugmentConfig::disabled(),
        }
    }

    /// Checks hyperparameters and that the model fits volumes of `extents`.
    pub fn validate(&self, extents: Extents) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, batch_size and patience must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        let classes = self.task.classes();
        let m = &self.model;
        if m.tokens != extents[0]
            || m.in_features != self.domain.in_features(extents)
            || m.out_features != self.domain.out_features(extents, classes)
        {
            return Err(Error::Config(format!(
                "model [{}, {} -> {}] does not fit {} volumes of {extents:?} with {classes} classes",
                m.tokens,
                m.in_features,
                m.out_features,
                self.domain.name()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice_macro: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation macro Dice.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub steps: usize,
}

/// Input rows and targets of one sample.
struct Encoded {
    inputs: Vec<f64>,
    targets: Targets,
}

fn encode(s: &Sample, domain: DomainConfig, classes: usize) -> Result<Encoded> {
    Ok(Encoded {
        inputs: input_features(&s.volume, domain)?,
        targets: label_targets(&s.labels, domain, classes)?,
    })
}

fn stack<'a>(items: impl Iterator<Item = &'a Encoded>, extents: Extents, domain: DomainConfig) -> Result<(Tensor, Targets)> {
    let mut inputs = Vec::new();
    let mut targets: Option<Targets> = None;
    let mut b = 0;
    for e in items {
        b += 1;
        inputs.extend_from_slice(&e.inputs);
        match (&mut targets, &e.targets) {
            (None, t) => targets = Some(t.clone()),
            (Some(Targets::Classes(a)), Targets::Classes(t)) => a.extend_from_slice(t),
            (Some(Targets::Spectra(a)), Targets::Spectra(t)) => a.extend_from_slice(t),
            _ => return Err(Error::Contract("mixed target kinds".into())),
        }
    }
    let x = Tensor::new(alloc::vec![b, extents[0], domain.in_features(extents)], inputs)?;
    Ok((x, targets.ok_or_else(|| Error::Config("empty batch".into()))?))
}

fn common_extents(samples: &[Sample]) -> Result<Extents> {
    let e = samples
        .first()
        .ok_or_else(|| Error::Config("empty sample set".into()))?
        .volume
        .extents();
    if samples.iter().any(|s| s.volume.extents() != e) {
        return Err(Error::Dimension("samples differ in extents".into()));
    }
    Ok(e)
}

/// Loss and mask of each validation sample, one forward pass per sample.
fn score(model: &Model, loss: &Loss, encoded: &[Encoded], samples: &[Sample], domain: DomainConfig) -> Result<(f64, MetricsReport)> {
    let extents = common_extents(samples)?;
    let mut total = 0.0;
    let mut per_subject = Vec::with_capacity(samples.len());
    for (e, s) in encoded.iter().zip(samples) {
        let (x, t) = stack(core::iter::once(e), extents, domain)?;
        let y = model.predict(&x)?;
        total += loss.value(&y, &t)?;
        let mask = decode_output(y.data(), domain, extents, s.volume.spacing_mm(), loss.classes)?;
        per_subject.push(subject_metrics(&mask, &s.labels, loss.classes)?);
    }
    Ok((total / samples.len() as f64, aggregate(&per_subject)?))
}

/// Trains from scratch and returns the best-validation weights.
pub fn train(cfg: &TrainConfig, train_set: &[Sample], val_set: &[Sample]) -> Result<TrainOutcome> {
    let extents = common_extents(train_set)?;
    if common_extents(val_set)? != extents {
        return Err(Error::Dimension("train and validation extents differ".into()));
    }
    cfg.validate(extents)?;
    let classes = cfg.task.classes();
    let domain = cfg.domain;
    let loss = make_loss(domain, classes);

    let mut model = Model::build(&cfg.model, derive_seed(cfg.seed, &[0]))?;
    let mut opt = Adam::new(cfg.lr, cfg.adam, model.params().tensors());
    let augmenting = cfg.augment.any_enabled();
    let cached: Vec<Encoded> = if augmenting {
        Vec::new()
    } else {
        train_set.iter().map(|s| encode(s, domain, classes)).collect::<Result<_>>()?
    };
    let val_encoded: Vec<Encoded> = val_set.iter().map(|s| encode(s, domain, classes)).collect::<Result<_>>()?;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Model, usize)> = None;
    let mut since_best = 0;
    let mut steps = 0usize;
    let budget = cfg.max_steps.unwrap_or(usize::MAX);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        Rng::seed(derive_seed(cfg.seed, &[1, epoch as u64])).shuffle(&mut order);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if steps >= budget {
                break;
            }
            let fresh: Vec<Encoded>;
            let (x, targets) = if augmenting {
                fresh = batch
                    .iter()
                    .map(|&i| {
                        let s = &train_set[i];
                        let seed = derive_seed(cfg.seed, &[2, epoch as u64, i as u64]);
                        let (v, l) = augment(&s.volume, &s.labels, &cfg.augment, seed);
                        encode(&Sample { volume: v, labels: l }, domain, classes)
                    })
                    .collect::<Result<_>>()?;
                stack(fresh.iter(), extents, domain)?
            } else {
                stack(batch.iter().map(|&i| &cached[i]), extents, domain)?
            };
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let fwd = model.forward(&mut tape, xv, true)?;
            let l = loss.apply(&mut tape, fwd.output, &targets)?;
            let value = tape.value(l).data()[0];
            if !value.is_finite() {
                return Err(Error::Training {
                    step: steps,
                    message: format!("loss became {value}"),
                });
            }
            tape.backward(l)?;
            let grads: Vec<Option<Vec<f64>>> = fwd.params.iter().map(|&p| tape.grad(p).map(<[f64]>::to_vec)).collect();
            opt.step(model.params_mut().tensors_mut(), &grads);
            loss_sum += value;
            batches += 1;
            steps += 1;
        }
        if batches == 0 {
            break;
        }
        let (val_loss, report) = score(&model, &loss, &val_encoded, val_set, domain)?;
        let dice = report.macro_dice();
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_dice_macro: dice,
        });
        if best.as_ref().is_none_or(|(b, _, _)| dice > *b) {
            best = Some((dice, model.clone(), epoch + 1));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
        if steps >= budget {
            break;
        }
    }
    let (_, model, best_epoch) = best.ok_or_else(|| Error::Training {
        step: steps,
        message: "no epoch completed".to_string(),
    })?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        steps,
    })
}

/// Number of classes implied by the model head for `domain`.
fn classes_of(model: &Model, domain: DomainConfig, extents: Extents) -> Result<usize> {
    let per = domain.out_features(extents, 1);
    let out = model.spec().out_features;
    if model.spec().tokens != extents[0] || model.spec().in_features != domain.in_features(extents) || out % per != 0 || out == 0 {
        return Err(Error::Dimension(format!(
            "model does not fit {} volumes of {extents:?}",
            domain.name()
        )));
    }
    Ok(out / per)
}

/// Segments one preprocessed volume.
pub fn predict_mask(model: &Model, volume: &Volume, domain: DomainConfig) -> Result<LabelVolume> {
    let extents = volume.extents();
    let classes = classes_of(model, domain, extents)?;
    let inputs = input_features(volume, domain)?;
    let x = Tensor::new(alloc::vec![1, extents[0], domain.in_features(extents)], inputs)?;
    let y = model.predict(&x)?;
    decode_output(y.data(), domain, extents, volume.spacing_mm(), classes)
}

/// Per-class and macro metrics over `samples`.
pub fn evaluate(model: &Model, samples: &[Sample], domain: DomainConfig) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let classes = classes_of(model, domain, common_extents(samples)?)?;
    let per_subject = samples
        .iter()
        .map(|s| subject_metrics(&predict_mask(model, &s.volume, domain)?, &s.labels, classes))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&per_subject)
}
