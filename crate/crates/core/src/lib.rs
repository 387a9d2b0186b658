//! A nested-recursion sequence encoder and its task suite.
//!
//! The encoder composes a token sequence bottom-up with a gated recursive
//! cell. Merge decisions come from a learned scorer explored by beam search;
//! for scalability, the beam-search encoder runs as the cell function of an
//! outer balanced k-ary recursion over fixed-size chunks, so the non-linear
//! depth grows with `k·log_k(n)` instead of `n`. The crate also ships the
//! plain-recurrence and balanced-binary-tree baselines, a ListOps generator
//! with an exact evaluator, a training harness, and a scaling benchmark.

pub mod beam;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod listops;
pub mod model;
pub mod nn;
pub mod rir;
pub mod tensor;
pub mod train;
pub mod tree;

pub use error::{CheckpointError, ConfigError, EncodeError, ListOpsError, TensorError, TrainError};
pub use tensor::tape::{GradMap, Tape};
pub use tensor::Tensor;
