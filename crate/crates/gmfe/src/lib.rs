//! Graphon mean-field particle systems: simulation and non-parametric estimation.
//!
//! The library simulates finite populations of diffusive particles whose
//! pairwise interaction strength is modulated by a difference-form graphon
//! `g(u - v)`, and estimates the particle densities, drifts, and the graphon
//! itself from observed trajectories. The estimation stack is
//!
//! * kernel plug-in estimators for the density `mu(t, u, x)`, the
//!   drift-density product `pi(t, u, x)`, and the drift `beta(t, u, x)`;
//! * a Fourier deconvolution step that divides transformed fields and
//!   inverts over the index frequency to read off `g(u0 - v0)` up to the
//!   known normalisation `g(0) = g0`.
//!
//! The `experiments` module packages reproducible convergence and rate
//! studies around the estimators, and `cli` exposes everything as a batch
//! command-line tool.

pub mod cli;
pub mod config;
pub mod csvio;
pub mod estimators;
pub mod experiments;
pub mod fourier;
pub mod graphon;
pub mod kernels;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod simulator;

pub use estimators::{beta_hat, fields_on_grid, mu_hat, pi_hat, Cutoffs, EvalGrid, Fields};
pub use fourier::{
    complex_field_csv, inverse_f_i_at, l_phi, make_phi, t_transform, ComplexField, FrequencyGrid, PhiShape,
    TestFunctionPhi,
};
pub use graphon::{a_hat, default_theta, g_hat, ratio_field, GraphonTheta, RatioField};
pub use kernels::{validate_kernels, Bandwidths, Kernel1, KernelTriple};
pub use model::{
    eval_b, validate_spec, DiffusionSpec, DriftSpec, GraphonSpec, InitialLawSpec, SystemSpec, ValidationReport,
};
pub use simulator::{drift_field, load_trajectories, save_trajectories, simulate, TimeGrid, TrajectorySet};
