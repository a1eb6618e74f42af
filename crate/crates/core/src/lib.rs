// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

pub mod emission;
pub mod error;
pub mod filter;
pub mod length_prior;
pub mod masked_linalg;
pub mod numerics;
pub mod oracle;
pub mod posterior;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
