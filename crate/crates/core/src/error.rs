use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not Hermitian (max |H - H^dagger| = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not unitary (max |U^dagger U - I| = {deviation:e})")]
    NotUnitary { deviation: f64 },

    #[error("spin index {index} out of range for {n_spins} spins")]
    SpinOutOfRange { index: usize, n_spins: usize },

    #[error("level index {index} out of range for {levels} levels")]
    LevelOutOfRange { index: usize, levels: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("state cannot be normalised (norm = {norm:e})")]
    ZeroNorm { norm: f64 },

    #[error("timing unsolvable: {0}")]
    Timing(String),

    #[error("program contains a gradient event; use execute_program instead")]
    GradientInUnitary,

    #[error("relaxation requested but T1/T2 are not configured")]
    RelaxationUnset,

    #[error("analysis failed: {0}")]
    Analysis(String),

    #[error("program text line {line}: {msg}")]
    ProgramSyntax { line: usize, msg: String },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("config field `{field}`: {msg}")]
    ConfigField { field: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
