//! Deterministic simulator for multi-task federated reinforcement learning
//! under model-poisoning adversaries.
//!
//! Agents learn tabular softmax policies on GridWorld mazes and share their
//! parameters with a smoothing-average server. One agent may instead be an
//! adversary that shares random, goal-opposing or cancelling parameters.
//! The adaptive-communication defense spaces out the rounds in which
//! low-reward agents may share.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod comafedrl;
pub mod config;
pub mod error;
pub mod federation;
pub mod gridworld;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod record;
pub mod rng;

pub use error::{FedRlError, Result};
