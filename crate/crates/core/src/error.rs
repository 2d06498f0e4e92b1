use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("not a lattice point (reconstruction residual {residual:e})")]
    NotALatticePoint { residual: f64 },

    #[error("digit {digit} out of range for modulus {modulus}")]
    DigitOutOfRange { digit: u32, modulus: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("enumeration of {size} elements exceeds the limit of {limit}")]
    EnumerationTooLarge { size: u128, limit: u128 },

    #[error("input could not be encoded without overload after {retries} retries")]
    Unencodable { retries: u32 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parameter mismatch: {0}")]
    Mismatch(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
