//! Age-of-information scheduling for wireless-powered sensor networks:
//! channel and energy model, exact average-cost solvers, tabular and deep
//! Q-learning agents, and checks of the structural properties of optimal
//! policies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod dqn;
pub mod env;
mod error;
pub mod experiment;
pub mod export;
pub mod mdp;
pub mod tabular;
pub mod verify;

pub use error::{Error, Result};
