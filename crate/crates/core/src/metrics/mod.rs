//! Overlap metrics for label volumes and their aggregation over subjects.
//!
//! Empty denominators: when a class is absent from both prediction and
//! reference, Dice and sensitivity are 1; when it is absent from exactly one,
//! they are 0. Specificity follows the same rule for the negatives.
//! Macro ("All") values average the foreground classes only.

mod flops;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use flops::{flops_estimate, parameter_count, FlopsReport, LayerCost, ReferenceRow, REFERENCE_TABLE};

use crate::data::LabelVolume;
use crate::{Error, Result};

/// One-vs-rest voxel counts for a single class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn dice(&self) -> f64 {
        dice(self.tp, self.fp, self.fn_)
    }

    pub fn sensitivity(&self) -> f64 {
        ratio_or_empty(self.tp, self.tp + self.fn_, self.fp)
    }

    pub fn specificity(&self) -> f64 {
        ratio_or_empty(self.tn, self.tn + self.fp, self.fn_)
    }

    pub fn precision(&self) -> f64 {
        ratio_or_empty(self.tp, self.tp + self.fp, self.fn_)
    }
}

/// `num/den`, or for an empty reference set: 1 when the prediction is empty
/// too (`other == 0`), else 0.
fn ratio_or_empty(num: u64, den: u64, other: u64) -> f64 {
    if den == 0 {
        if other == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// `2TP / (2TP + FP + FN)`; 1 when both masks are empty.
pub fn dice(tp: u64, fp: u64, fn_: u64) -> f64 {
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        1.0
    } else {
        (2 * tp) as f64 / den as f64
    }
}

pub fn confusion(pred: &LabelVolume, gt: &LabelVolume, class: u16) -> Result<Confusion> {
    if pred.extents() != gt.extents() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs reference {:?}",
            pred.extents(),
            gt.extents()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == class, g == class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub dice: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl From<Confusion> for ClassMetrics {
    fn from(c: Confusion) -> Self {
        Self {
            dice: c.dice(),
            sensitivity: c.sensitivity(),
            specificity: c.specificity(),
        }
    }
}

/// Per-class metrics of one subject, index = class.
pub fn subject_metrics(pred: &LabelVolume, gt: &LabelVolume, classes: usize) -> Result<Vec<ClassMetrics>> {
    (0..classes)
        .map(|c| confusion(pred, gt, c as u16).map(ClassMetrics::from))
        .collect()
}

/// Mean over foreground classes (1..) of one subject's metrics. A
/// single-class problem has no foreground and uses class 0.
pub fn macro_average(per_class: &[ClassMetrics]) -> ClassMetrics {
    let fg = if per_class.len() > 1 { &per_class[1..] } else { per_class };
    let n = fg.len() as f64;
    ClassMetrics {
        dice: fg.iter().map(|m| m.dice).sum::<f64>() / n,
        sensitivity: fg.iter().map(|m| m.sensitivity).sum::<f64>() / n,
        specificity: fg.iter().map(|m| m.specificity).sum::<f64>() / n,
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: libm::sqrt(var),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Class index, or `None` for the macro row.
    pub class: Option<usize>,
    pub dice: Stat,
    pub sensitivity: Stat,
    pub specificity: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Identifies the run the report belongs to; empty when unassigned.
    pub config_id: String,
    pub n_subjects: usize,
    pub classes: Vec<MetricsRow>,
    /// Foreground-only macro row ("All").
    pub all: MetricsRow,
}

impl MetricsReport {
    pub fn macro_dice(&self) -> f64 {
        self.all.dice.mean
    }
}

fn row(class: Option<usize>, metrics: &[ClassMetrics]) -> MetricsRow {
    MetricsRow {
        class,
        dice: Stat::of(metrics.iter().map(|m| m.dice)),
        sensitivity: Stat::of(metrics.iter().map(|m| m.sensitivity)),
        specificity: Stat::of(metrics.iter().map(|m| m.specificity)),
    }
}

/// Per-class and macro mean ± std over subjects.
pub fn aggregate(subjects: &[Vec<ClassMetrics>]) -> Result<MetricsReport> {
    let first = subjects
        .first()
        .ok_or_else(|| Error::Config("cannot aggregate zero subjects".into()))?;
    let classes = first.len();
    if classes == 0 || subjects.iter().any(|s| s.len() != classes) {
        return Err(Error::Dimension("subjects disagree on class count".into()));
    }
    let rows = (0..classes)
        .map(|c| {
            let col: Vec<ClassMetrics> = subjects.iter().map(|s| s[c]).collect();
            row(Some(c), &col)
        })
        .collect();
    let macros: Vec<ClassMetrics> = subjects.iter().map(|s| macro_average(s)).collect();
    Ok(MetricsReport {
        config_id: String::new(),
        n_subjects: subjects.len(),
        classes: rows,
        all: row(None, &macros),
    })
}
