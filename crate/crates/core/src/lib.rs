//! Algorithms for curating and auditing an SEM fractography dataset.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. File formats,
//! PNG decoding, parallel drivers and the command-line front end live in the
//! `fracaudit` crate.
//!
//! Modules follow the pipeline order:
//!
//! * [`manifest`]: data model, filename parsing, manifest validation.
//! * [`image`]: 8-bit grayscale carrier, bilinear resampling, overlay crop.
//! * [`matcher`]: exact-then-fuzzy linkage of filenames to report rows.
//! * [`imghash`]: DCT perceptual hash, top-K Hamming retrieval, k-NN baseline.
//! * [`ssim`] and [`audit`]: SSIM verification and the leakage table.
//! * [`split`]: stratified folds and inverse-frequency sampler weights.
//! * [`metrics`], [`stats`], [`focal`]: evaluation battery and loss kernel.
//! * [`syndata`]: procedural micrographs with planted duplicates.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod audit;
pub mod focal;
pub mod image;
pub mod imghash;
pub mod manifest;
pub mod matcher;
pub mod metrics;
pub mod rng;
pub mod split;
pub mod ssim;
pub mod stats;
pub mod syndata;

pub use image::GrayImage;
pub use imghash::PHash64;
pub use manifest::{FractureClass, ImageRecord, Magnification, ReportEntry};
