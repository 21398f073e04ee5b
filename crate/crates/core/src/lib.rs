//! Ellipsoid invariants, Hoare-style annotation and S-procedure
//! certificates for linear controller code.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: small dense matrices, Jacobi eigensolver, PSD tests.
//! - [`ellipsoid`]: shape-form and quadratic-form ellipsoids and their calculus.
//! - [`lang`]: the controller language (parser, printer, interpreter, facts).
//! - [`analyzer`]: forward and backward propagation of ellipsoid facts.
//! - [`certifier`]: S-procedure checks, multiplier search, annotation checking.
//! - [`sim`]: discretization, simulation and frequency response.
//! - [`config`]: the line-oriented run configuration format.
//!
//! ```
//! use ctrlcert::linalg::{is_psd, SymMatrix};
//!
//! let p = SymMatrix::from_rows(&[&[0.03, 0.2], &[0.2, 10.0]]);
//! assert!(is_psd(&p, 1e-9).unwrap().psd);
//! ```

pub mod analyzer;
pub mod certifier;
pub mod config;
pub mod ellipsoid;
pub mod fmt;
pub mod lang;
pub mod linalg;
pub mod rng;
pub mod sim;
