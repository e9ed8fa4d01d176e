//! Operator renormalization group on a truncated Fock space of a
//! geometric frequency ladder.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod feshbach;
pub mod fock_space;
pub mod interp;
pub mod kernels;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod rg_flow;
pub mod uniqueness;
pub mod verify;

pub use error::{Error, Result};
pub use fock_space::{CutoffPair, FockBasis, FrequencyLadder, OperatorMatrix};
pub use models::{FormFactor, OracleResult, SpinBosonModel, SpinBosonParams};
pub use pipeline::{run_spin_boson, RunReport};
pub use rg_flow::{FlowConfig, SignConvention, TowerResult};
pub use uniqueness::{UniquenessCertificate, Verdict};
pub use verify::{run_suite, Suite, SuiteReport, VerifyConfig};
