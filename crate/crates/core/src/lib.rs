//! Heterogeneous multi-agent PPO with graph-network communication.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod envs;
pub mod evaluation;
pub mod nn;
pub mod physics;
pub mod training;
