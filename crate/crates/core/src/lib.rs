//! Solving and learning two-player zero-sum Markov games.

pub mod env;
pub mod error;
pub mod flow;
pub mod game;
pub mod harness;
pub mod linapprox;
pub mod lp;
pub mod lspi;
pub mod optout;
pub mod soccer;
pub mod store;

pub use error::{Error, Result};
