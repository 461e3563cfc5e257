//! Robust Hadamard autoencoders: blind denoising and inpainting of partially
//! observed data matrices.
//!
//! The data matrix `X` is split into a reconstruction `L_D = D(E(X))` and a
//! sparse corruption matrix `S`. Training alternates Adam epochs on the
//! mask-weighted loss `‖((X − S) − D(E(X))) ⊙ Ω‖²` with a proximal shrinkage
//! step that moves large residuals into `S`.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod cli;
pub mod corruption;
pub mod data;
pub mod error;
pub mod eval;
pub mod mask;
pub mod nn;
pub mod numerics;
pub mod robust;

pub use error::{Result, RhaError};
pub use mask::Mask;
pub use nn::{Autoencoder, TrainConfig, Trainer};
pub use numerics::{Matrix, Rng};
