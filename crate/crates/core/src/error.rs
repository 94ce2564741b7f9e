use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("axis {axis} out of range for dimension {dim}")]
    Axis { axis: usize, dim: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid potential: {0}")]
    Potential(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("time step {dt:e} exceeds the RK4 stability bound {bound:e}")]
    Stability { dt: f64, bound: f64 },
    #[error("boundary mass fraction {fraction:e} exceeds {limit:e} at t = {t}")]
    BoundaryMass { t: f64, fraction: f64, limit: f64 },
    #[error("weight overflow: {0}")]
    Overflow(String),
    #[error("coverage: {0}")]
    Coverage(String),
    #[error("support: {0}")]
    Support(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
