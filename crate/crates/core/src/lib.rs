//! Solver and analysis toolkit for constraint satisfaction problems over
//! orbit-labeled homogeneous templates.
//!
//! The crate decides satisfiability by local consistency: instances are
//! saturated to `(k, max(k+1, b))`-minimality, made injective, and then
//! refined by restricting projections at sinks of an implication graph until
//! every k-tuple projection holds a single orbit, at which point a solution
//! certificate is extracted from the quotient structure. A brute-force oracle
//! provides reference semantics for everything at desk scale.

pub mod error;
pub mod identities;
pub mod json;
pub mod implications;
pub mod minimality;
pub mod oracle;
pub mod relations;
pub mod solver;
pub mod structures;

pub use error::{Error, Result};
