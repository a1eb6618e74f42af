// SPDX-License-Identifier: MIT OR Apache-2.0

//! Brute-force references for small problems: exhaustive enumeration of
//! segmentations and numerical integration of scalar segment models.

pub mod enumerate;
pub mod quadrature;

pub use enumerate::{
    enumerate_posterior, log_segmentation_prior, ExactPosterior, WeightedSegmentation,
    MAX_EXACT_LENGTH,
};
pub use quadrature::{integrate, integrate_log, quadrature_marginal, quadrature_risk, Quadrature};
