//! Physics-informed neural networks for the steady reaction-advection-diffusion
//! equation in boundary-layer regimes.
//!
//! The crate trains a tanh multilayer perceptron whose loss penalises the PDE
//! residual at interior collocation points and the homogeneous Dirichlet and
//! Neumann conditions at boundary points. A fixed-k model takes `(x, y)`; a
//! parametric model also takes the diffusion coefficient `k` as an input and
//! is trained over many coefficients at once.

pub mod autodiff;
pub mod checkpoint;
pub mod evaluation;
pub mod kernel;
pub mod loss;
pub mod network;
pub mod par;
pub mod physics;
pub mod rng;
pub mod sampling;
pub mod training;

pub use autodiff::{Dual2, Gradient, Tape};
pub use loss::{LossBreakdown, LossWeights};
pub use network::{InputEncoding, NetworkParams, NetworkShape};
pub use par::Execution;
pub use physics::ProblemSpec;
pub use sampling::SampleSet;
