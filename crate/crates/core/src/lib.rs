//! Similarity-matched LR/HR patch pairs for quasi-supervised super-resolution.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below fix the common `f64` instantiation.

// NaN-rejecting checks are written as `!(x > 0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod image;
pub mod loss;
pub mod manifest;
pub mod matching;
pub mod numfmt;
pub mod phantom;
pub mod quality;
pub mod resample;
pub mod scalar;
pub mod similarity;
pub mod volio;

pub use error::{Error, Result};
pub use image::{extract_patch, normalize_volume, Dataset, DomainLabel, Image, PatchRef, Volume};
pub use loss::{AdvKind, LossBatch, LossItem, LossWeights};
pub use manifest::{Manifest, MatchConfig, MatchLevels, MatchRecord};
pub use matching::{match_exhaustive, match_hierarchical, patch_grid};
pub use phantom::{generate_dataset, generate_similar_pair, PhantomSpec};
pub use quality::{Psnr, QualityReport, SsimParams};
pub use resample::DegradeParams;
pub use scalar::Scalar;
pub use similarity::{SimilarityKind, SimilarityParams};

pub type Image2D = Image<f64>;
pub type Image2Df32 = Image<f32>;
pub type Volume2D = Volume<f64>;
pub type DatasetF64 = Dataset<f64>;
pub type LossBatch2D = LossBatch<f64>;
pub type QualityReport2D = QualityReport<f64>;
