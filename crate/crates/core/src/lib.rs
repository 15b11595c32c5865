//! Viscous surface waves on a horizontally periodic slab, in Lagrangian coordinates.
//!
//! The solver works on the fixed equilibrium domain Ω = [-b, 0] × torus. Fields are
//! spectral in the two horizontal directions (FFT per vertical grid line) and
//! second-order finite differences in the vertical. Every per-mode problem reduces
//! to a small banded solve.
//!
//! Modules:
//! - [`grid`]: discretization, field storage, transforms, Fourier multipliers
//! - [`flowmap`]: displacement → flow-map kinematics (Dη, 𝒜, J, cofactors, normal)
//! - [`btensors`]: the B¹/B² nonlinearity tensors and right-hand-side assembly
//! - [`elliptic`]: vertical two-point BVPs, Poisson layouts, harmonic extension
//! - [`corrector`]: divergence removal and boundary homogenization (U, V, P₁)
//! - [`stokes`]: the homogeneous free-boundary Stokes evolution and diagnostics
//! - [`norms`]: anisotropic Sobolev norms, the X_T ledger, energy functionals
//! - [`picard`]: the frozen-coefficient linear solve and the nonlinear iteration
//! - [`cli`]: config parsing, scenarios, output emission

pub mod btensors;
pub mod cli;
pub mod corrector;
pub mod elliptic;
pub mod flowmap;
pub mod grid;
pub mod linalg;
pub mod norms;
pub mod picard;
pub mod stokes;
pub mod synth;

pub use grid::{Config, Grid};
