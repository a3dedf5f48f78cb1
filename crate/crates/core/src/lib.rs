//! Point-of-interest recommendation from implicit check-in feedback.
//!
//! The model is a stacked autoencoder over the user-POI visit matrix with
//! two optional extensions: a multi-dimensional self-attentive encoder that
//! aggregates checked-in POI embeddings by learned importance (SAE), and a
//! neighbor-aware decoder that pushes reconstruction scores toward POIs that
//! are geographically close and similar to visited ones through a
//! thresholded RBF kernel (NAD). Training minimizes a confidence-weighted
//! squared reconstruction error with L2 regularization under Adam.
//!
//! Pipeline: [`data`] parses/filters/splits check-in logs and builds the
//! sparse matrices, [`geo`] precomputes the kernel, [`model`] holds
//! parameters and the forward pass, [`train`] provides exact gradients and
//! the mini-batch loop (plus a finite-difference checker), and [`eval`]
//! computes top-k Precision/Recall/MAP.

pub mod binio;
pub mod data;
pub mod error;
pub mod eval;
pub mod geo;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};
