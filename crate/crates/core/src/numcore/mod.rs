//! Differentiable numeric kernel.
//!
//! Parameters live in a [`ParamStore`]; loss graphs are recorded on a
//! [`Tape`] of row-major matrices and differentiated in reverse mode.
//! Everything is generic over [`Real`] so the same graph can be built in
//! `f32` for training and in `f64` for finite-difference verification.

mod checkpoint;
mod gradcheck;
mod optim;
mod store;
mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{cap_row_norms, clip_weights, RmsProp};
pub use store::{init_embeddings, Group, Param, ParamId, ParamStore, ENTITY_TABLE, RELATION_TABLE};
pub use tape::{Gradients, Mat, Tape, Var};

use std::fmt::Debug;

use num_traits::Float;
use thiserror::Error;

/// Floating-point element type used by the kernel.
pub trait Real: Float + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward requires a scalar root, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` wrapper so [`NumError`] stays `Clone + PartialEq`.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct IoError(pub String);

impl From<std::io::Error> for NumError {
    fn from(e: std::io::Error) -> Self {
        NumError::Io(IoError(e.to_string()))
    }
}

pub type Result<T> = std::result::Result<T, NumError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NumError {
    NumError::Shape {
        op,
        detail: detail.into(),
    }
}
