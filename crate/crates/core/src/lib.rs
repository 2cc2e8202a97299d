//! Learned proximal networks.
//!
//! A learned proximal network is the input-gradient of a strongly convex
//! scalar network, which makes it a proximal operator of an implicitly
//! defined (generally nonconvex) regularizer. This crate provides:
//!
//! - [`icnn`]: the input-convex potential, its gradient map, and exact
//!   first- and second-order differentiation kernels;
//! - [`training`]: denoising objectives (squared l2, l1, annealed matching
//!   loss), Adam, and the staged training loop;
//! - [`prior`]: inversion of the network and evaluation of the recovered
//!   regularizer at arbitrary points;
//! - [`operators`]: linear measurement operators with adjoints, operator-norm
//!   estimation, and a conjugate-gradient solver;
//! - [`pnp`]: plug-and-play ADMM and proximal gradient descent with
//!   fixed-point and stationarity diagnostics;
//! - [`checkpoint`]: a binary save/load format for trained networks.

pub mod checkpoint;
pub mod error;
pub mod icnn;
pub mod loss;
pub mod operators;
pub mod pnp;
pub mod prior;
pub mod training;

pub use error::{LpnError, Result};
