// SPDX-License-Identifier: Apache-2.0

//! Dynamic per-group precision reduction for DNN accelerators.
//!
//! The crate is organised around the value stream of a layer:
//!
//! * [`tensors`] ingests quantized tensors and cuts them into 16-value bricks.
//! * [`precision`] detects the per-group precision a hardware OR-tree plus
//!   leading-one detector would report, and aggregates it into histograms.
//! * [`codec`] packs groups into the 64-bit aligned off-chip container and the
//!   uncompressed / static-precision baselines.
//! * [`simcore`] holds the cycle models (BASE, Stripes, DStripes, TRT, Loom)
//!   and a bit-serial inner-product emulator used as a numerical oracle.
//! * [`memmodel`] folds compute cycles and off-chip traffic into
//!   bandwidth-limited layer time.
//! * [`fixtures`] ships layer geometries and per-layer precision profiles.

pub mod codec;
pub mod error;
pub mod fixtures;
pub mod memmodel;
pub mod precision;
pub mod simcore;
pub mod synth;
pub mod tensors;

pub use error::{Error, ErrorKind, Result};

/// Values per brick and per codec group.
pub const BRICK: usize = 16;
