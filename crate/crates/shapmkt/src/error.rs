//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} out of fixed-point range for k={k}, f={f}")]
    FixedPointRange { value: f64, k: u32, f: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("incomplete share set: expected {expected} pieces, got {got}")]
    IncompleteShares { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dealer supply exhausted: {kind}")]
    DealerExhausted { kind: &'static str },

    #[error("circuit parse error at line {line}: {msg}")]
    CircuitParse { line: usize, msg: String },

    #[error("unsupported gate kind {kind:?} at line {line}")]
    UnsupportedGate { kind: String, line: usize },

    #[error("invalid circuit: {0}")]
    CircuitInvalid(String),

    #[error("nonce {0:#034x} already used in this run")]
    NonceReuse(u128),

    #[error("account `{0}` has insufficient funds")]
    InsufficientFunds(String),

    #[error("unknown transaction id {0}")]
    UnknownTx(u64),

    #[error("transaction {0} already settled")]
    TxSettled(u64),

    #[error("deadline passed for transaction {0}")]
    DeadlinePassed(u64),

    #[error("malformed payload: {0}")]
    BadPayload(String),

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("rank correlation undefined: {0}")]
    DegenerateRanks(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("protocol aborted during {phase}: {reason}")]
    ProtocolAbort { phase: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: bad inputs and configuration map to 2,
    /// mid-protocol failures to 3.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::ProtocolAbort { .. } => 3,
            _ => 2,
        }
    }
}
