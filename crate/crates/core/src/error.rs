use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReebError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("point is off the hypersurface: |H - 1| = {residual:e}")]
    NotOnSurface { residual: f64 },
    #[error("gradient of the Hamiltonian is degenerate (|grad H| = {norm:e})")]
    DegenerateGradient { norm: f64 },
    #[error("Reeb field fails its defining equations (defect {defect:e}); is the Hamiltonian 2-homogeneous?")]
    ReebCheckFailed { defect: f64 },
    #[error("contact frame is degenerate: d(lambda)(e1, e2) = {pairing:e} before rescaling")]
    FrameDegenerate { pairing: f64 },
    #[error("vector is not tangent to the hypersurface: dH(v) = {dh:e}")]
    NotTangent { dh: f64 },
    #[error("adaptive step underflow at t = {t} (h = {h:e})")]
    StepFailure { t: f64, h: f64 },
    #[error("angle grid too coarse: increment {jump} at sample {index} exceeds pi/2")]
    GridTooCoarse { index: usize, jump: f64 },
    #[error("Newton iteration diverged: {0}")]
    NewtonDivergence(String),
    #[error("coefficient matrix S(t) is not symmetric (defect {defect:e})")]
    NonSymmetricCoefficient { defect: f64 },
    #[error("eigensection winding {value} is not within 0.01 of an integer")]
    WindingNotInteger { value: f64 },
    #[error("spectral window unresolved: {0}")]
    WindowUnresolved(String),
    #[error("winding gap across delta is {gap}, expected 0 or 1")]
    GapStraddle { gap: i64 },
    #[error("spectral window does not contain eigenvalues on both sides of delta = {delta}")]
    WindowTooNarrow { delta: f64 },
    #[error("slow convergence: successive estimates {first} and {second} differ by more than {tol:e}")]
    SlowConvergence { first: f64, second: f64, tol: f64 },
    #[error("degenerate system: {0}")]
    DegenerateSystem(String),
    #[error("curves too close: minimal distance {distance:e} < required {required:e}")]
    CurvesTooClose { distance: f64, required: f64 },
    #[error("no generic projection found after {attempts} attempts")]
    DegenerateProjection { attempts: usize },
    #[error("self-linking depends on the pushoff size: {at_eps} vs {at_half_eps}")]
    EpsilonInstability { at_eps: i64, at_half_eps: i64 },
    #[error("link components {first} and {second} intersect")]
    ComponentsIntersect { first: usize, second: usize },
    #[error("non-transverse page crossing at t = {t} (rate {rate:e})")]
    NonTransverseCrossing { t: f64, rate: f64 },
    #[error("no usable recurrence for sample {sample}")]
    NoRecurrence { sample: usize },
    #[error("closing chord passes within the excluded tube around the link")]
    ChordCrossesLink,
    #[error("operation requires a split system")]
    NotSplitSystem,
    #[error("page area mismatch: quadrature {quadrature} vs Stokes {stokes}")]
    StokesMismatch { quadrature: f64, stokes: f64 },
}

pub type Result<T> = std::result::Result<T, ReebError>;
