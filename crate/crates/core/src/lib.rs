//! Face recognition with masked log-Gabor magnitude features and whitened
//! PCA.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`normalize`]: landmarks to a 128x128 masked, equalized face
//! - [`filterbank`]: frequency-domain log-Gabor filters
//! - [`features`]: magnitude images and sliding-window feature selection
//! - [`expressmask`]: per-orientation masks of expression-sensitive regions
//! - [`pca`]: whitening PCA
//! - [`matcher`]: cosine-distance gallery search and verification
//! - [`metrics`]: CMC, First-1, Cum, CMCA, ROCA and EER
//! - [`store`]: the per-dataset feature store

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binio;
pub mod error;
pub mod expressmask;
pub mod features;
pub mod fft;
pub mod filterbank;
pub mod matcher;
pub mod metrics;
pub mod normalize;
pub mod pca;
pub mod raster;
pub mod store;

pub use binio::Digest;
pub use error::{Error, Result};
pub use expressmask::{build_expression_masks, variance_image, ExpressionMaskSet};
pub use features::{
    extract_features, filter_magnitudes, select_locations, FeatureLocationSet, FeatureVector,
    MagnitudeStack, WindowGeometry,
};
pub use filterbank::{build_filter_bank, sigma_f, FilterBank, FilterParams};
pub use matcher::{distance, identify, verify, Gallery};
pub use metrics::{evaluate, EvalReport, Rankings, TrialSet};
pub use normalize::{elliptical_mask, normalize_face, Landmarks, NormalizedFace, Point};
pub use pca::{train, PcaModel};
pub use raster::{Mask, Raster};
