//! Population-based training of small neural networks with gradient
//! lexicase selection.
//!
//! Each generation clones the current parent `p` times, trains every clone
//! for one pass over its own disjoint random slice of the training data
//! (subset gradient descent), and then picks the next parent with a
//! selection operator. Lexicase selection filters the clones through a
//! shuffled sequence of individual training cases; random and tournament
//! selection, plus a plain momentum-SGD baseline, are provided for
//! controlled comparison.
//!
//! Module map:
//!
//! - [`tensor`] and [`nn`]: a small double-precision network engine with
//!   dense, convolution, pooling, ReLU and flatten layers.
//! - [`checkpoint`]: the `LXGD` binary checkpoint format.
//! - [`optim`]: momentum SGD, momentum lifecycle policies, cosine annealing.
//! - [`data`]: loaders, augmentation, normalization, subset partitioning.
//! - [`selection`]: lexicase, tournament and random parent selection.
//! - [`evolution`]: the generational training loop.
//! - [`analysis`]: accuracy reports and activation-diversity profiles.

pub mod analysis;
pub mod checkpoint;
pub mod data;
mod error;
pub mod evolution;
pub mod nn;
pub mod optim;
pub mod seed;
pub mod selection;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
