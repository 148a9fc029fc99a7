//! Event trace: what happened, when, on which rank and stream.
//!
//! The trace is the runtime's only observable side channel. Metrics and the
//! verification suites read it instead of poking at runtime internals, and
//! its exported text is hashed to compare runs.

use std::fmt;

use sha2::{Digest, Sha256};

use super::runtime::StreamKind;
use super::time::VTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Spawn,
    WinCreate,
    WinFree,
    Lock,
    LockAll,
    Unlock,
    UnlockAll,
    Get,
    Rget,
    Ibarrier,
    Test,
    Testall,
    Wait,
    Alltoallv,
    Ialltoallv,
    Compute,
    AppSync,
    FlagPoll,
    Phase,
    RedistStart,
    RedistInitDone,
    RedistDone,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Spawn => "spawn",
            EventKind::WinCreate => "win_create",
            EventKind::WinFree => "win_free",
            EventKind::Lock => "lock",
            EventKind::LockAll => "lock_all",
            EventKind::Unlock => "unlock",
            EventKind::UnlockAll => "unlock_all",
            EventKind::Get => "get",
            EventKind::Rget => "rget",
            EventKind::Ibarrier => "ibarrier",
            EventKind::Test => "test",
            EventKind::Testall => "testall",
            EventKind::Wait => "wait",
            EventKind::Alltoallv => "alltoallv",
            EventKind::Ialltoallv => "ialltoallv",
            EventKind::Compute => "compute",
            EventKind::AppSync => "app_sync",
            EventKind::FlagPoll => "flag_poll",
            EventKind::Phase => "phase",
            EventKind::RedistStart => "redist_start",
            EventKind::RedistInitDone => "redist_init_done",
            EventKind::RedistDone => "redist_done",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One trace record. `detail` holds space-separated `key=value` fields.
#[derive(Debug, Clone)]
pub struct TraceEvent {
    pub time: VTime,
    pub rank: usize,
    pub stream: StreamKind,
    pub kind: EventKind,
    pub detail: String,
}

impl TraceEvent {
    /// Looks up a `key=value` field in the detail string.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.detail.split(' ').find_map(|kv| {
            let (k, v) = kv.split_once('=')?;
            (k == key).then_some(v)
        })
    }

    /// A `key=value` field parsed as an integer.
    pub fn field_u64(&self, key: &str) -> Option<u64> {
        self.field(key)?.parse().ok()
    }

    fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.time, self.rank, self.stream, self.kind, self.detail
        )
    }
}

/// Append-only event log.
#[derive(Debug, Default, Clone)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events of one rank in export order.
    pub fn rank_events(&self, rank: usize) -> impl Iterator<Item = &TraceEvent> {
        self.sorted().into_iter().filter(move |e| e.rank == rank)
    }

    fn sorted(&self) -> Vec<&TraceEvent> {
        let mut refs: Vec<&TraceEvent> = self.events.iter().collect();
        // Stable: simultaneous events keep execution order.
        refs.sort_by_key(|e| e.time);
        refs
    }

    /// Line-delimited export, ordered by virtual time (ties keep execution
    /// order). Format per line: `vtime_ns<TAB>rank<TAB>stream<TAB>kind<TAB>detail`.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        for event in self.sorted() {
            out.push_str(&event.line());
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of the exported text.
    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.export_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
