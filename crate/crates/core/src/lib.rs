//! Gradient-descent laboratory for linear regression under data augmentation
//! with noisy input copies.
//!
//! The crate trains linear models (and a small ReLU MLP) with gradient descent
//! under several criteria — full-batch sum of squared errors, full-batch mean
//! squared error, and mini-batch MSE — with and without augmentation by noisy
//! copies of the inputs, and verifies quantitatively that augmented training
//! matches l2-regularized training with the predicted regularization strength
//! and effective learning rate.
//!
//! Module map:
//! - [`numkit`]: dense row-major matrices/vectors and a counter-addressable
//!   Gaussian source (reproducible across runs and parallel schedules).
//! - [`data`]: synthetic and CSV datasets, noisy-copy banks (on-line and
//!   off-line), contiguous mini-batch partitions.
//! - [`trainers`]: every update rule and the full training loops, recording
//!   per-epoch MSE on the original data.
//! - [`oracle`]: Monte-Carlo certificates, curve distances, log-log rate
//!   fits, and the mini-batch telescoping check.
//! - [`mlp`]: minimal fully-connected ReLU network with manual
//!   backpropagation and SGD over augmented data.

pub mod data;
pub mod mlp;
pub mod numkit;
pub mod oracle;
pub mod trainers;
