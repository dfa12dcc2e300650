//! Framework-free neural network pieces: a reverse-mode tape, Gaussian
//! policy heads, the message-passing actor-critic and an optimizer.

pub mod autodiff;
pub mod dist;
pub mod model;
pub mod optim;

pub use autodiff::{GradError, Graph, Mat, ParamGrads, Var};
pub use dist::ActionDistribution;
pub use model::{
    edge_features, forward, loss_gradient, policy_value_forward, AgentInput, AgentNet, Aggregation, Edge,
    ForwardVars, GraphBatch, Linear, Mlp, ModelError, ModelParams, ModelShape, NetVars, PolicyOutput, SharingMode,
    EDGE_DIM,
};
pub use optim::{clip_global_norm, global_norm, Adam};
