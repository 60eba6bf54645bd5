use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors surfaced by the toolkit.
///
/// Numerical preconditions are reported, never patched: a singular weighting
/// matrix, an unreachable equilibrium or an empty barrier set all mean the
/// theory behind the controller does not apply to the supplied instance.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Shape mismatch between operands.
    Dim { context: &'static str, detail: String },
    /// A matrix that must be invertible is singular or nearly so.
    IllConditioned { context: &'static str, det: f64, record: Option<usize> },
    /// A matrix that must be symmetric positive definite is not.
    NotPositiveDefinite { context: &'static str },
    /// The Riccati solver found no stabilizing solution.
    RiccatiFailure { residual: f64 },
    /// The QP constraints admit no feasible point.
    QpInfeasible { row: usize },
    /// An iterative solver hit its iteration cap.
    NonConvergence { context: &'static str, iterations: usize, residual: f64 },
    /// The discretized input matrix is singular, so the convex OCP theory
    /// does not apply to this model.
    ModelUnsuitableForOcp { det: f64 },
    /// No admissible equilibrium input exists for the requested target.
    NotStationarilyRealizable { detail: String },
    /// The barrier-filter QP is empty at the current state.
    BarrierSetEmpty { violated_rows: alloc::vec::Vec<usize> },
    /// Training diverged or tripped the Jacobian-determinant guard.
    TrainingFailure { epoch: usize, detail: String },
    /// The requested excitation destabilized the synthetic plant.
    ExcitationRejected { time: f64, state_norm: f64 },
    /// A runtime precondition (documented on the operation) was violated.
    Precondition { context: &'static str, detail: String },
}

impl Error {
    pub(crate) fn dim(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Dim { context, detail: detail.into() }
    }

    pub(crate) fn precondition(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Precondition { context, detail: detail.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim { context, detail } => {
                write!(f, "dimension error in {context}: {detail}")
            }
            Error::IllConditioned { context, det, record } => match record {
                Some(i) => write!(
                    f,
                    "ill-conditioned matrix in {context} at record {i} (|det| = {det:e})"
                ),
                None => write!(f, "ill-conditioned matrix in {context} (|det| = {det:e})"),
            },
            Error::NotPositiveDefinite { context } => {
                write!(f, "matrix in {context} is not positive definite")
            }
            Error::RiccatiFailure { residual } => {
                write!(f, "Riccati solver failed to converge (residual {residual:e})")
            }
            Error::QpInfeasible { row } => {
                write!(f, "QP infeasible: constraint row {row} cannot be satisfied")
            }
            Error::NonConvergence { context, iterations, residual } => write!(
                f,
                "{context} did not converge within {iterations} iterations (residual {residual:e})"
            ),
            Error::ModelUnsuitableForOcp { det } => write!(
                f,
                "discretized input matrix is singular (|det| = {det:e}); the convex OCP requires it nonsingular"
            ),
            Error::NotStationarilyRealizable { detail } => {
                write!(f, "target is not stationarily realizable: {detail}")
            }
            Error::BarrierSetEmpty { violated_rows } => {
                write!(f, "barrier filter QP is infeasible (violated rows {violated_rows:?})")
            }
            Error::TrainingFailure { epoch, detail } => {
                write!(f, "training failed at epoch {epoch}: {detail}")
            }
            Error::ExcitationRejected { time, state_norm } => write!(
                f,
                "excitation rejected: state norm {state_norm:e} at t = {time} exceeds stability bound"
            ),
            Error::Precondition { context, detail } => {
                write!(f, "precondition violated in {context}: {detail}")
            }
        }
    }
}
