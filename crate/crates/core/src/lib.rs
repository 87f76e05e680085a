//! Predict-and-search for binary mixed-integer linear programs.
//!
//! The pipeline: generate or read an instance ([`milp`], [`instgen`]),
//! collect a solution pool with the built-in branch-and-bound ([`solver`]),
//! turn the pool into energy-weighted marginal labels ([`labels`]), encode
//! the instance as a bipartite graph ([`featurize`]), train a graph network
//! to predict the marginals ([`gnn`]), and finally solve a trust-region
//! restricted MILP around the rounded prediction ([`search`]). The
//! [`harness`] module holds metrics and the experiment drivers.

pub mod error;
pub mod featurize;
pub mod gnn;
pub mod harness;
pub mod instgen;
pub mod labels;
pub mod milp;
pub mod search;
pub mod solver;

pub use error::{Error, Result};
pub use milp::{check_feasible, parse_mps, write_mps, MilpInstance, ObjSense, Row, RowSense, Solution, VarKind};
