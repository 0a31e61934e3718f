//! Multispectral crop-field segmentation toolkit.
//!
//! The crate covers the full desk-scale pipeline for segmenting a target
//! crop (lavender) in Sentinel-2-style surface-reflectance scenes:
//!
//! - [`raster`] — 12-band scene representation, a compact on-disk raster
//!   format, resampling/alignment, NDVI/NDMI, and band-combination
//!   channel selection.
//! - [`patchwork`] — resizing scenes to a 96×96 patch grid, patch
//!   extraction, empty-patch filtering, dataset splits, and stitching
//!   patch predictions back into full-scene masks.
//! - [`autodiff`] — a small reverse-mode engine with exactly the layer
//!   set the segmentation networks need, plus a finite-difference
//!   gradient-check harness.
//! - [`nets`] — U-Net and SegNet encoder-decoders, weight init, the
//!   training loop (Adam, early stopping, optional gradient clipping),
//!   prediction, and checkpoint serialization.
//! - [`pixelml`] — per-pixel classifiers (logistic regression, CART
//!   decision tree, random forest) that ignore spatial context.
//! - [`metrics`] — confusion-count accumulation and derived
//!   precision/recall/F1/Dice/IoU with micro-aggregation.
//! - [`synthgen`] — a seeded procedural scene generator with ground-truth
//!   masks, used as the test and benchmark substrate.
//!
//! Everything is deterministic given a seed: RNG streams are derived by
//! labeled hashing (see [`rng`]), all hot loops run in a fixed serial
//! order, and file formats are specified byte-exactly in
//! `docs/formats.md`.

pub mod autodiff;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod patchwork;
pub mod pixelml;
pub mod raster;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
pub use rng::RngStream;
