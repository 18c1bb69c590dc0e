//! Asymmetric and symmetric m-step TD learning and natural actor-critic for
//! tabular POMDPs under agent-state policies, together with exact oracles
//! and calculators for every term of their finite-time bounds.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are the double-precision instantiations used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent_state;
pub mod bounds;
pub mod error;
pub mod features;
pub mod linalg;
pub mod npg;
pub mod oracles;
pub mod policy;
pub mod pomdp;
pub mod scalar;
pub mod td;

pub use agent_state::{AgentStateKind, AgentStateProcess, AgentStateSpec};
pub use bounds::{BoundReport, NacBoundReport};
pub use error::{Error, Result};
pub use npg::{LogLinearPolicy, NacConfig, NacTrace};
pub use oracles::{JointChain, QKind, QTable, SymmetricBellman, VisitationKind, VisitationMeasure};
pub use policy::AgentPolicy;
pub use pomdp::{Labels, Pomdp, TransitionSample};
pub use scalar::Scalar;
pub use td::{CriticMode, LinearCritic, StepSize, TdConfig, TdTrace};

pub type Pomdp64 = Pomdp<f64>;
pub type Pomdp32 = Pomdp<f32>;
pub type AgentStateProcess64 = AgentStateProcess<f64>;
pub type AgentPolicy64 = AgentPolicy<f64>;
pub type QTable64 = QTable<f64>;
pub type VisitationMeasure64 = VisitationMeasure<f64>;
pub type LinearCritic64 = LinearCritic<f64>;
pub type TdConfig64 = TdConfig<f64>;
pub type LogLinearPolicy64 = LogLinearPolicy<f64>;
pub type NacConfig64 = NacConfig<f64>;
pub type BoundReport64 = BoundReport<f64>;
