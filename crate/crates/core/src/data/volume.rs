use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Grid extents `[depth, height, width]`; depth indexes sagittal slices.
pub type Extents = [usize; 3];

fn check_extents(extents: Extents, len: usize) -> Result<()> {
    if extents.iter().any(|&e| e == 0) || extents.iter().product::<usize>() != len {
        return Err(Error::Dimension(format!(
            "extents {extents:?} do not match {len} voxels"
        )));
    }
    Ok(())
}

/// Scalar intensity volume, row-major over `[d, h, w]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    extents: Extents,
    spacing_mm: f64,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(extents: Extents, spacing_mm: f64, data: Vec<f64>) -> Result<Self> {
        check_extents(extents, data.len())?;
        Ok(Self {
            extents,
            spacing_mm,
            data,
        })
    }

    pub fn zeros(extents: Extents) -> Self {
        Self {
            extents,
            spacing_mm: 1.0,
            data: vec![0.0; extents.iter().product()],
        }
    }

    pub fn extents(&self) -> Extents {
        self.extents
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.extents[1] + h) * self.extents[2] + w
    }

    pub fn get(&self, d: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(d, h, w)]
    }

    /// Slice `d` as an `H×W` row-major plane.
    pub fn slice(&self, d: usize) -> &[f64] {
        let n = self.extents[1] * self.extents[2];
        &self.data[d * n..(d + 1) * n]
    }

    pub fn slice_mut(&mut self, d: usize) -> &mut [f64] {
        let n = self.extents[1] * self.extents[2];
        &mut self.data[d * n..(d + 1) * n]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Class index per voxel, same layout as [`Volume`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelVolume {
    extents: Extents,
    spacing_mm: f64,
    data: Vec<u16>,
}

impl LabelVolume {
    pub fn new(extents: Extents, spacing_mm: f64, data: Vec<u16>) -> Result<Self> {
        check_extents(extents, data.len())?;
        Ok(Self {
            extents,
            spacing_mm,
            data,
        })
    }

    pub fn extents(&self) -> Extents {
        self.extents
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u16] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max_class(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Errors if any label is `>= classes`.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&c| c as usize >= classes) {
            Some(c) => Err(Error::Data(format!("label {c} outside [0, {classes})"))),
            None => Ok(()),
        }
    }

    /// 0/1 indicator volume of `class`.
    pub fn one_hot(&self, class: u16) -> Volume {
        let data = self
            .data
            .iter()
            .map(|&c| if c == class { 1.0 } else { 0.0 })
            .collect();
        Volume {
            extents: self.extents,
            spacing_mm: self.spacing_mm,
            data,
        }
    }
}
