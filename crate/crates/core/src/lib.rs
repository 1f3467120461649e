//! Staged tree models for discrete data: learning, consensus, asymmetric-DAG
//! summaries and exact inference.

pub mod aldag;
pub mod bn;
pub mod consensus;
pub mod context;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod inference;
pub mod learning;
pub mod staged_tree;

pub use aldag::{compress, Aldag, AldagEdge, EdgeLabel};
pub use bn::{encode_bn, BayesianNetwork};
pub use dataset::{Dataset, Schema, Variable};
pub use error::{Error, Result};
pub use learning::{Algorithm, LearnConfig};
pub use staged_tree::{FitConfig, StageAssignment, StagedTree, VariableOrder};
