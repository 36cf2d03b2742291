use thiserror::Error;

/// Errors reported by the library.
///
/// The variants split into input problems (`Shape`, `Input`, `Domain`,
/// `Parse`, `Size`), which mean the caller handed us something structurally
/// unusable, and mathematical failures (`Validation`, `NotOrderIso`,
/// `Hypothesis`, `NoMatch`, `Consistency`, `Precision`), which mean the
/// operands are well formed but the requested property does not hold.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or index mismatch between objects that must share a shape.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Structurally invalid input: bad identifiers, duplicate edges, missing
    /// fields, and the like.
    #[error("invalid input: {0}")]
    Input(String),

    /// Argument outside its mathematical domain (non-positive time,
    /// non-positive tolerance, empty state space, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed JSON or a value of the wrong JSON type.
    #[error("parse error: {0}")]
    Parse(String),

    /// Input too large for an exhaustive oracle.
    #[error("input too large: {0}")]
    Size(String),

    /// A matrix failed the Dirichlet-form validity checks.
    #[error("not a valid Dirichlet form: {0}")]
    Validation(String),

    /// A map or matrix is not an order isomorphism of the given spaces.
    #[error("not an order isomorphism: {0}")]
    NotOrderIso(String),

    /// A hypothesis of the requested operation does not hold for the
    /// supplied operands.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    /// Two decompositions cannot be matched fiber by fiber.
    #[error("decompositions do not match: {0}")]
    NoMatch(String),

    /// A property the theory guarantees failed numerically; indicates a
    /// defective input pair or a genuine bug, never routine round-off.
    #[error("internal consistency failure: {0}")]
    Consistency(String),

    /// An iterative approximation could not reach the requested accuracy
    /// within its budget.
    #[error("precision budget exceeded: {0}")]
    Precision(String),
}

/// `Result` specialized to this crate's error type.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True when the error describes malformed input rather than a
    /// mathematical failure. The CLI maps this distinction onto exit codes.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Shape(_) | Error::Input(_) | Error::Domain(_) | Error::Parse(_) | Error::Size(_)
        )
    }
}
