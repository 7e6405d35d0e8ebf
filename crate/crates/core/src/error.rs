use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{0} is not an odd prime")]
    NotOddPrime(u64),
    #[error("strict mode requires p >= 11, got {0}")]
    StrictModeViolation(u64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("residue {value} out of range for p = {p}")]
    ResidueOutOfRange { value: u64, p: u64 },
    #[error("index {index} out of range for a space of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("resource limit: {what} needs {needed}, cap is {cap}")]
    ResourceLimit {
        what: &'static str,
        needed: u128,
        cap: u128,
    },
    #[error("empty affine set")]
    EmptyCoset,
    #[error("table size mismatch: {0}")]
    TableMismatch(String),
    #[error("negative radicand {0} (below clamping tolerance)")]
    NegativeRadicand(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("zero character")]
    ZeroCharacter,
    #[error("character is constant on the cell's subspace")]
    CharacterNotInDual,
    #[error("partition is not a refinement of the coarse partition")]
    NotARefinement,
    #[error("partition audit failed: {0}")]
    PartitionAudit(String),
    #[error("zero normal vector for x = {0}")]
    ZeroNormal(usize),
    #[error("dependent normals for x = {0}")]
    DependentNormals(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("set is not free of nontrivial L-shaped configurations ({0} found)")]
    NotLFree(u64),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
