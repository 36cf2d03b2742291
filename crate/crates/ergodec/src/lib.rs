//! Ergodic decomposition of Dirichlet forms on finite weighted state
//! spaces, and the transport of such decompositions along order
//! isomorphisms.
//!
//! The library works with symmetric forms `E(f, g) = fᵀ A g` on a finite
//! space with a strictly positive weight measure `μ`. It provides:
//!
//! * construction and validation of forms from edge conductances and
//!   killing rates ([`form`]);
//! * generators `L = −D_μ⁻¹ A` and heat semigroups `exp(t L)` with
//!   sub-Markovianity checks ([`semigroup`]);
//! * invariant sets, irreducibility, and the ergodic decomposition of a
//!   form into irreducible components with a probability weighting `ν`
//!   ([`decomposition`]);
//! * order isomorphisms `U f = h · (f ∘ τ)` between function spaces, their
//!   factorization, adjoints, and unitarity ([`orderiso`]);
//! * intertwining checks `U T¹_t = T²_t U` and the component-by-component
//!   decomposition of a unitary intertwining order isomorphism
//!   ([`intertwine`]);
//! * independent oracles (exhaustive invariant-set search, a series
//!   exponential, planted instances) used to cross-check the fast paths
//!   ([`oracle`]);
//! * JSON input and output with canonical formatting ([`json`]).
//!
//! The `parallel` feature (on by default) runs the larger search and
//! verification loops on a thread pool; every parallel routine has a
//! sequential twin that produces bit-identical results.

pub mod decomposition;
pub mod error;
pub mod form;
pub mod intertwine;
pub mod json;
mod linalg;
pub mod oracle;
pub mod orderiso;
pub mod semigroup;
pub mod space;

pub use error::{Error, Result};
pub use form::{
    apply_form, build_form, validate_dirichlet, validate_dirichlet_seq, DirichletForm,
    EdgeFormSpec, FormDiagnostics,
};
pub use space::{weighted_inner, weighted_norm, FunctionVec, StateSpace};

/// Default numerical tolerance for validity and intertwining checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Default times at which semigroup-level checks are sampled.
pub const DEFAULT_TIMES: [f64; 3] = [0.1, 1.0, 10.0];

/// Entries of a form matrix at or below this magnitude are treated as
/// absent edges when reading off the support graph.
pub const EDGE_TOL: f64 = 1e-12;
