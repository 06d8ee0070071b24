//! Cyclic-conditional generative modeling toolkit.
//!
//! - [`finite`]: exact compatibility and determinacy analysis for pairs of
//!   conditional tables on finite spaces.
//! - [`autodiff`]: lane-vectorised reverse-mode differentiation with
//!   gradients as graph nodes.
//! - [`models`]: Gaussian decoder and Householder-Sylvester flow encoder.
//! - [`losses`]: compatibility, likelihood, DAE and ELBO objectives.
//! - [`samplers`]: Langevin, Gibbs and ancestral samplers.

pub mod autodiff;
pub mod finite;
pub mod losses;
pub mod models;
pub mod samplers;
