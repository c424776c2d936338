//! Numeric checks of two constructions used in the convergence analysis:
//! the Yamada–Watanabe smoothing of `|x|` and the drift-control transform.
//! Neither is used by the integrator.

pub mod transform;
pub mod yw;

pub use transform::{build_transform, TransformArtifacts, TransformOptions, TransformReport};
pub use yw::{
    verify_yw, yw_phi, yw_phi_prime, yw_phi_second, yw_psi, PropertyCheck, YwFunctions, YwParams,
    YwReport,
};
