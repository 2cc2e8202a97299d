//! Experiment harnesses for learned proximal networks: the 1-D Laplace
//! study, prior-perturbation sweeps on a toy multi-modal source, and linear
//! inverse problems (deblurring, compressed sensing) solved with
//! plug-and-play ADMM or proximal gradient descent.

pub mod analytic;
pub mod csvio;
pub mod inverse;
pub mod laplacian;
pub mod metrics;
pub mod sources;
pub mod sweep;
