//! Numerical toolkit for metric regularity of set-valued mappings in finite
//! dimensions.
//!
//! The crate estimates the regularity modulus `rg F(x̄,ȳ)` and the
//! coderivative constant `rg⁺F(x̄,ȳ)` from seeded graph samples, builds the
//! explicit Lipschitz rank-one bump perturbation that destroys regularity,
//! and checks the radius relations `rg ≤ rad ≤ rg⁺` against independent
//! oracles (Jacobi SVD, brute-force ratio and membership checks).
//!
//! Data-parallel inner loops run on rayon when the `parallel` feature is on
//! (the default) and fall back to plain iterators otherwise. Every reduction
//! happens in a fixed order, so results are bitwise identical either way.

pub mod error;
pub mod exec;
pub mod experiment;
pub mod linalg;
pub mod mappings;
pub mod moduli;
pub mod oracles;
pub mod perturbation;
pub mod radius;
pub mod spaces;

mod solver;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use mappings::{GraphPoint, MappingModel, SampledGraph, VectorField};
pub use moduli::{ModulusEstimate, ScaleSchedule};
pub use perturbation::{BumpPerturbation, BumpSpec, WitnessSequence};
pub use radius::RadiusReport;
pub use spaces::{NormKind, NormSpec, ProductNormSpec};
