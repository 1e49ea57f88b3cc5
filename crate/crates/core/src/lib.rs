// SPDX-License-Identifier: Apache-2.0

//! Graph p=1 Dirichlet diffusion for pseudo-labelling, a small classifier
//! trained on the pseudo-labels, and the loop that alternates the two.

pub mod baseline;
pub mod diffusion;
pub mod error;
pub mod features;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod pseudolabel;
pub mod trainer;

pub use diffusion::{ConstraintSet, DiffusionConfig, NodeKind, Scores};
pub use error::{Error, ErrorClass, Result};
pub use features::FeatureMatrix;
pub use graph::{Edge, Graph};
pub use pipeline::{LoopConfig, PipelineData, PseudoSource, RunReport};
pub use pseudolabel::PseudoLabelSet;
pub use trainer::{ModelParams, TrainConfig};
