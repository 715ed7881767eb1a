//! Learning generalized reactive policies (GRPs) for planning.
//!
//! The crate bundles a small reverse-mode tensor engine, two planning domains
//! (Sokoban and the traveling salesperson problem) with exact solvers, generic
//! best-first search, imitation-data assembly with goal bootstrapping, the two
//! policy networks, and the leapfrogging curriculum.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod experiment;
pub mod gradcheck;
pub mod grp;
pub mod leapfrog;
pub mod optim;
pub mod params;
pub mod search;
pub mod seed;
pub mod sokoban;
pub mod tensor;
pub mod tsp;

pub use autodiff::{Padding, Tape, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::{Tensor, TensorError};
