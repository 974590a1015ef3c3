//! Non-convolutional segmentation of volumes whose inputs and labels can each
//! live in the spatial or the frequency (k-space) domain.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the experiment
//! grid and the command line live in the `kseg` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
mod error;
pub mod kspace;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
