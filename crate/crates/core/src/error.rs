// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node {0} is degenerate: zero feature row or no positive similarity to its neighbours")]
    DegenerateNode(usize),
    #[error("invalid k = {k} for {n} samples (need 1 <= k < n)")]
    InvalidK { k: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class {0} has an all-zero score vector, ratio undefined")]
    ZeroClassVector(usize),
    #[error("non-finite value encountered in {0}")]
    NonFiniteValue(&'static str),
    #[error("scores are identically zero after the median shift")]
    AllZero,
    #[error("class {0} has zero samples")]
    EmptyClass(usize),
    #[error("class {0} has no labelled sample")]
    MissingClass(usize),
    #[error("training loss became non-finite")]
    NonFiniteLoss,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("cannot compute metrics over an empty set")]
    EmptySet,
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("linear system is singular or has non-finite entries")]
    SingularSystem,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },
    #[error("{path}: non-finite entry at {location}")]
    NonFiniteEntry { path: PathBuf, location: String },
    #[error("duplicate index {0} in label file")]
    DuplicateIndex(usize),
    #[error("index {index} out of range for {n} samples")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("unknown role {0:?} (expected labelled, unlabelled or test)")]
    UnknownRole(String),
    #[error("sample {0} has no ground-truth label")]
    MissingTruth(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse grouping used to map errors onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFiniteValue(_)
            | Error::NonFiniteLoss
            | Error::SingularSystem
            | Error::AllZero
            | Error::ZeroClassVector(_) => ErrorClass::Numerical,
            Error::InvalidConfig(_) | Error::InvalidK { .. } => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}
