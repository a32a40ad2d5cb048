//! Generating families of Lagrangian submanifolds: symplectic linear algebra,
//! second-order forward-mode differentiation, a small expression language,
//! critical-set solving and per-sample verification of the generated
//! Lagrangian.

pub mod autodiff;
pub mod catalog;
pub mod error;
pub mod expr;
pub mod family;
pub mod hessian;
pub mod linalg;
pub mod solver;
pub mod symplin;
pub mod verify;

pub use error::{Error, Result};
pub use family::{BundleCovector, Covector, Energy, Fibration, FamilySpec};
