use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid [{x_min}, {x_max}] cannot hold the 6σ support [{lo}, {hi}] of the packet")]
    GridTooSmall { x_min: f64, x_max: f64, lo: f64, hi: f64 },

    #[error("wavefunction reached the grid boundary (edge mass {edge_mass:e} > {threshold:e})")]
    BoundaryContamination { edge_mass: f64, threshold: f64 },

    #[error("binning does not match the grid: {0}")]
    BinningMismatch(String),

    #[error("invalid measurement window: {0}")]
    InvalidWindow(String),

    #[error("quantum-clock normalization {integral:e} is below {threshold:e}; outcome never observed in the window")]
    ZeroDenominator { integral: f64, threshold: f64 },

    #[error("probability flow vanishes over the whole window")]
    AllZeroFlow,

    #[error("pointer variance must be positive, got {0}")]
    DegenerateSigma(f64),

    #[error("RK4 step-doubling error {estimate:e} exceeds {tolerance:e}")]
    StepTooLarge { estimate: f64, tolerance: f64 },

    #[error("density-matrix trace drifted to {trace} (|tr - 1| > {tolerance:e})")]
    TraceDrift { trace: f64, tolerance: f64 },

    #[error("no clicks recorded in any stream")]
    NoClicks,
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
