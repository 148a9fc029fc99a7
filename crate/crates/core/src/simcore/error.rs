//! Runtime error types.

use std::fmt;

use thiserror::Error;

/// A violation of the communication protocol the runtime enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    /// Remote access outside an open epoch on the target.
    EpochViolation,
    /// Lock on a target already locked by the caller, or mixing lock kinds.
    NestedLock,
    /// Unlock without a matching lock.
    UnlockWithoutLock,
    /// Window free while the caller still holds an epoch.
    FreeWithOpenEpoch,
    /// A rank created the same logical window twice.
    DoubleCreate,
    /// Operation on a window after every rank freed it.
    UseAfterFree,
    /// Offsets or counts outside the window or local buffer.
    OutOfBounds,
    /// A rank called the same barrier instance twice.
    DuplicateBarrierCall,
    /// Test or wait on an id that names no live request of the caller.
    InvalidRequest,
    /// All-to-all send/receive plans do not transpose to each other.
    InconsistentPlans,
    /// A rank touched a collective object it is not a participant of.
    NotParticipant,
    /// Duplicate or otherwise malformed collective call.
    MalformedCall,
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ProtocolKind::EpochViolation => "epoch violation",
            ProtocolKind::NestedLock => "nested lock",
            ProtocolKind::UnlockWithoutLock => "unlock without lock",
            ProtocolKind::FreeWithOpenEpoch => "free with open epoch",
            ProtocolKind::DoubleCreate => "double create",
            ProtocolKind::UseAfterFree => "use after free",
            ProtocolKind::OutOfBounds => "out of bounds",
            ProtocolKind::DuplicateBarrierCall => "duplicate barrier call",
            ProtocolKind::InvalidRequest => "invalid request",
            ProtocolKind::InconsistentPlans => "inconsistent plans",
            ProtocolKind::NotParticipant => "not a participant",
            ProtocolKind::MalformedCall => "malformed call",
        };
        f.write_str(name)
    }
}

/// Fatal simulation failures; any of these aborts the run.
#[derive(Debug, Clone, Error)]
pub enum SimError {
    #[error("protocol error at rank {rank}: {kind}: {detail}")]
    Protocol {
        rank: usize,
        kind: ProtocolKind,
        detail: String,
    },
    /// The event queue drained while streams were still blocked.
    #[error("deadlock: {}", blocked.join("; "))]
    Deadlock { blocked: Vec<String> },
    #[error("event limit of {limit} exceeded; the simulation is likely spinning")]
    EventLimit { limit: u64 },
    #[error("configuration error: {0}")]
    Config(String),
}

impl SimError {
    pub fn protocol(rank: usize, kind: ProtocolKind, detail: impl Into<String>) -> Self {
        SimError::Protocol {
            rank,
            kind,
            detail: detail.into(),
        }
    }

    /// The protocol violation kind, when this is a protocol error.
    pub fn protocol_kind(&self) -> Option<ProtocolKind> {
        match self {
            SimError::Protocol { kind, .. } => Some(*kind),
            _ => None,
        }
    }
}
