//! Tamed-adaptive Euler–Maruyama simulation for scalar SDEs whose drift is
//! piecewise continuous and superlinearly growing and whose diffusion is
//! superlinearly growing and locally Hölder continuous.
//!
//! * [`problems`]: problem model and the built-in benchmarks `ex1`..`ex4`.
//! * [`scheme`]: tamed diffusion, adaptive step size, path integrator.
//! * [`coupling`]: fine/coarse paths driven by one Brownian motion.
//! * [`stats`]: OLS fits, convergence-rate and cost-exponent experiments.
//! * [`analysis`]: numeric checks of the Yamada–Watanabe functions and the
//!   drift-control transform.
//! * [`cli`]: the `taem` command line.

// `!(a > b)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod coupling;
pub mod error;
pub mod mc;
pub mod noise;
pub mod problems;
pub mod quad;
pub mod scheme;
pub mod stats;

pub use error::{Error, Result};
pub use noise::{BrownianIncrements, GaussianStream, SeededNormals};
pub use problems::{get_problem, SdeProblem};
pub use scheme::{simulate_path, LogBase, PathOutcome, SchemeConfig};
