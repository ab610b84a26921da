use thiserror::Error;

use crate::cipher::KeyClass;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value {0} outside the open interval (0, 1)")]
    Domain(f64),

    #[error("inconsistent observation{}: {reason}", block.map(|b| format!(" at block {b}")).unwrap_or_default())]
    Inconsistent {
        block: Option<usize>,
        reason: String,
    },

    #[error("brute force over n = {0} bits is intractable (limit is 16)")]
    Intractable(u32),

    #[error("seed merge failed: {0}")]
    MergeFailure(String),

    #[error("internal consistency violated: {0}")]
    InternalConsistency(String),

    #[error("key class {class:?} cannot be fully determined: {reason}")]
    Coverage { class: KeyClass, reason: String },

    #[error("joint queries leave bits {mask:#x} undetermined")]
    Underdetermined { mask: u64 },

    #[error("malformed PGM: {0}")]
    Pgm(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn inconsistent(reason: impl Into<String>) -> Self {
        Error::Inconsistent {
            block: None,
            reason: reason.into(),
        }
    }

    /// Attach a block index to an inconsistency raised by the per-block solver.
    pub(crate) fn at_block(self, index: usize) -> Self {
        match self {
            Error::Inconsistent { reason, .. } => Error::Inconsistent {
                block: Some(index),
                reason,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
