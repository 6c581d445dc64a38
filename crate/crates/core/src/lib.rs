//! Numerical companion for the divergence structure of the Gauss-map
//! Jacobian `Φ = n·(∂₁n × ∂₂n)` of sphere-valued fields on the unit disc.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: concentric-ring triangulations of the closed unit disc and
//!   piecewise-linear calculus on them.
//! - [`sphere`]: icosahedral quadrature on S², caps and regions, singular
//!   kernels of the form `1/|s - x|`.
//! - [`fields`]: sampled unit-vector fields, their Jacobian density, Dirichlet
//!   energy and image area.
//! - [`pde`]: P1 finite elements for the Dirichlet Poisson problem, the
//!   zero-mean Neumann gauge problem, dual norms and the Wente diagnostic.
//! - [`divform`]: the rotation family `U(n')`, the potentials `ω_i`, their
//!   averages `Ω_i` over admissible regions, and the weak identity
//!   `∫Φζ = ∫(Ω₂∂₁ζ − Ω₁∂₂ζ)`.
//! - [`frames`]: Coulomb moving frames built by continuation, with
//!   conformal-factor recovery.
//! - [`preimage`]: preimage census, regular values, the coarea identity and
//!   the region-averaged identity for arbitrary target sets.
//! - [`surfaces`]: Enneper and stereographic families with closed forms.

pub mod bumps;
pub mod divform;
mod error;
pub mod fields;
pub mod frames;
pub mod mesh;
pub mod pde;
pub mod preimage;
pub mod sphere;
pub mod surfaces;

pub use error::{Error, Result};

pub use nalgebra::{Matrix3, Vector3};
