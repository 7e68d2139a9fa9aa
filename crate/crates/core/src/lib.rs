//! Streaming identification of finite-dimensional Koopman operators.
//!
//! The crate learns a linear operator `K` acting on lifted states
//! `Ψ(x) ∈ ℝᴷ` so that `K·Ψ(x) ≈ Ψ(y)` for snapshot pairs `y = T(x)`.
//! [`koopman::KoopmanStream`] refreshes `K` in `O(K²)` per sample through a
//! rank-one inverse update, and the batch solvers in [`koopman`] serve as
//! oracles and baselines.
//!
//! Module map:
//!
//! * [`dictionary`] – observable dictionaries (linear, Gaussian RBF, composite).
//! * [`koopman`] – batch EDMD solvers and the recursive streaming state.
//! * [`spectral`] – eigendecomposition and dominant-mode tracking.
//! * [`predictor`] – lift/propagate/project trajectory forecasting.
//! * [`datagen`] – synthetic linear systems and swing-equation networks.
//! * [`bench`] – streaming-versus-recompute timing harness.
//! * [`io`] – snapshot CSV and JSON helpers shared with the CLI.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod datagen;
pub mod dictionary;
mod error;
pub mod io;
pub mod koopman;
pub mod predictor;
pub mod seed;
pub mod spectral;

pub use dictionary::{Dictionary, DictionaryKind};
pub use error::{Error, Result};
pub use koopman::{KoopmanModel, KoopmanStream, SnapshotPair, UpdateOutcome};
pub use predictor::Predictor;
pub use spectral::Spectrum;

pub use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;
