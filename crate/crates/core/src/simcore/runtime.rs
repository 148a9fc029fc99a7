//! Deterministic virtual-time runtime for one-sided communication.
//!
//! Every rank runs one or two logical execution streams (a main stream and,
//! for background redistribution via threads, an auxiliary one). A stream's
//! behaviour is a [`Program`]: a state machine the kernel steps whenever the
//! stream is runnable. Primitives are poll-style — a call either completes
//! immediately (advancing the caller's clock by its modeled cost) or parks
//! the stream; when the blocking condition resolves the stream is woken and
//! the program re-issues the call, which then reports completion.
//!
//! Scheduling pops the runnable stream with the smallest `(virtual time,
//! sequence)` key, so execution order is a pure function of the configuration
//! and seed. Epoch discipline, window lifecycles, bounds and collective
//! participation are all checked; violations abort the run with a
//! [`SimError::Protocol`].

use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeMap, BTreeSet};
use std::fmt;
use std::task::Poll;

use super::cost::{CostModel, ResolvedCost};
use super::error::{ProtocolKind, SimError};
use super::time::VTime;
use super::trace::{EventKind, Trace, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WinId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BarrierId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CollId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReqId(pub(crate) usize);

/// Which of a rank's execution streams an event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StreamKind {
    Main,
    Aux,
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StreamKind::Main => "main",
            StreamKind::Aux => "aux",
        })
    }
}

/// What a stream executes. `step` is called whenever the stream is runnable
/// and must eventually either finish or advance virtual time; a primitive
/// returning [`Poll::Pending`] parked the stream, and the step should yield.
pub trait Program {
    fn step(&mut self, ctx: &mut Ctx<'_>) -> Result<StepStatus, SimError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    /// More work left; reschedule (or stay parked).
    Yield,
    /// The program ran to completion.
    Finished,
}

/// What a rank exposes in a window it participates in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expose {
    /// The rank's pre-resize data array.
    Data,
    /// An empty window; ranks that only receive expose nothing.
    Empty,
}

/// Per-rank halves of one all-to-all exchange. Vectors are indexed by
/// position in the collective's participant list; `send_offsets` are offsets
/// into the sender's pre-resize array and `recv_displs` into the receiver's
/// post-resize array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XferPlan {
    pub send_counts: Vec<usize>,
    pub send_offsets: Vec<usize>,
    pub recv_counts: Vec<usize>,
    pub recv_displs: Vec<usize>,
}

impl XferPlan {
    pub fn total_recv(&self) -> usize {
        self.recv_counts.iter().sum()
    }
}

/// Runtime-wide knobs.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub cost: CostModel,
    /// Reproduces the MPI library behaviour where an application collective
    /// blocks until the auxiliary stream's operations finish.
    pub collective_blocks_background: bool,
    /// Abort threshold for runaway simulations.
    pub event_limit: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cost: CostModel::default(),
            collective_blocks_background: false,
            event_limit: 10_000_000,
            seed: 0,
        }
    }
}

/// Where a newly added stream starts.
#[derive(Debug, Clone, Copy)]
pub enum StreamStart {
    /// Runnable from the given virtual time (spawned ranks start late).
    At(VTime),
    /// Parked until the rank's main stream calls [`Ctx::signal_aux`].
    OnSignal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum WaitKey {
    WinCreate(usize),
    WinFree(usize),
    Request(usize),
    Coll(usize),
    AuxStart(usize),
    AuxDone(usize),
}

impl WaitKey {
    fn describe(self) -> String {
        match self {
            WaitKey::WinCreate(w) => format!("win_create(win={w})"),
            WaitKey::WinFree(w) => format!("win_free(win={w})"),
            WaitKey::Request(r) => format!("wait(req={r})"),
            WaitKey::Coll(c) => format!("alltoallv(coll={c})"),
            WaitKey::AuxStart(r) => format!("aux start signal (rank {r})"),
            WaitKey::AuxDone(r) => format!("aux completion (rank {r})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Runnable,
    Parked(WaitKey),
    Finished,
}

#[derive(Debug)]
struct StreamMeta {
    rank: usize,
    kind: StreamKind,
    clock: VTime,
    status: Status,
}

/// Arrival bookkeeping shared by the collective-shaped primitives.
#[derive(Debug, Default)]
struct Rendezvous {
    arrivals: BTreeMap<usize, VTime>,
    done_at: Option<VTime>,
    /// Ranks that already observed completion; a second call is an error.
    completed: BTreeSet<usize>,
}

impl Rendezvous {
    fn last_arrival(&self) -> VTime {
        self.arrivals.values().copied().max().unwrap_or(VTime::ZERO)
    }
}

#[derive(Debug, Default)]
struct LockState {
    targets: BTreeSet<usize>,
    all: bool,
}

impl LockState {
    fn holds_any(&self) -> bool {
        self.all || !self.targets.is_empty()
    }
}

#[derive(Debug)]
struct WindowState {
    participants: Vec<usize>,
    exposed: BTreeMap<usize, Vec<u64>>,
    create: Rendezvous,
    free: Rendezvous,
    locks: BTreeMap<usize, LockState>,
    /// Outstanding-op completion per (origin, target), cleared on unlock.
    pending: BTreeMap<(usize, usize), VTime>,
    /// Completion of the latest operation ever issued on the window.
    ops_max: VTime,
}

#[derive(Debug)]
struct BarrierState {
    participants: Vec<usize>,
    arrivals: BTreeMap<usize, VTime>,
    requests: BTreeMap<usize, usize>,
    done_at: Option<VTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CollMode {
    Blocking,
    Nonblocking,
}

#[derive(Debug)]
struct CollState {
    participants: Vec<usize>,
    mode: Option<CollMode>,
    arrivals: BTreeMap<usize, VTime>,
    plans: BTreeMap<usize, XferPlan>,
    requests: BTreeMap<usize, usize>,
    done_at: Option<VTime>,
    completed: BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy)]
enum ReqKind {
    Rget,
    Barrier,
    Coll,
}

#[derive(Debug)]
struct RequestState {
    owner: usize,
    #[allow(dead_code)]
    kind: ReqKind,
    completion: Option<VTime>,
}

#[derive(Debug, Default, Clone, Copy)]
struct RankStreams {
    main: Option<usize>,
    aux: Option<usize>,
}

struct Inner {
    cost: ResolvedCost,
    collective_blocks_background: bool,
    event_limit: u64,
    seed: u64,
    streams: Vec<StreamMeta>,
    by_rank: BTreeMap<usize, RankStreams>,
    queue: BinaryHeap<Reverse<(VTime, u64, usize)>>,
    seq: u64,
    windows: Vec<WindowState>,
    barriers: Vec<BarrierState>,
    colls: Vec<CollState>,
    requests: Vec<RequestState>,
    old_data: BTreeMap<usize, Vec<u64>>,
    new_data: BTreeMap<usize, Vec<u64>>,
    /// Next time each rank's transfer port is free; serializes its reads.
    net_free: BTreeMap<usize, VTime>,
    waiters: BTreeMap<WaitKey, Vec<usize>>,
    /// Ranks whose auxiliary stream has been signalled; compute on an
    /// oversubscribed rank runs slower until the aux stream's finish time.
    aux_signalled: BTreeSet<usize>,
    trace: Trace,
    executed: u64,
}

/// The deterministic event kernel. Build it, register ranks, streams and
/// communication objects, then [`Runtime::run`] it to completion.
pub struct Runtime {
    inner: Inner,
    programs: Vec<Option<Box<dyn Program>>>,
}

impl Runtime {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.cost.validate().map_err(SimError::Config)?;
        Ok(Runtime {
            inner: Inner {
                cost: ResolvedCost::new(&config.cost),
                collective_blocks_background: config.collective_blocks_background,
                event_limit: config.event_limit,
                seed: config.seed,
                streams: Vec::new(),
                by_rank: BTreeMap::new(),
                queue: BinaryHeap::new(),
                seq: 0,
                windows: Vec::new(),
                barriers: Vec::new(),
                colls: Vec::new(),
                requests: Vec::new(),
                old_data: BTreeMap::new(),
                new_data: BTreeMap::new(),
                net_free: BTreeMap::new(),
                waiters: BTreeMap::new(),
                aux_signalled: BTreeSet::new(),
                trace: Trace::default(),
                executed: 0,
            },
            programs: Vec::new(),
        })
    }

    /// Registers a rank with its pre-resize data and post-resize buffer size.
    pub fn add_rank(&mut self, rank: usize, old_data: Vec<u64>, new_len: usize) {
        self.inner.old_data.insert(rank, old_data);
        self.inner.new_data.insert(rank, vec![0; new_len]);
        self.inner.net_free.insert(rank, VTime::ZERO);
        self.inner.by_rank.entry(rank).or_default();
    }

    /// Adds an execution stream for a registered rank.
    pub fn add_stream(
        &mut self,
        rank: usize,
        kind: StreamKind,
        program: Box<dyn Program>,
        start: StreamStart,
    ) {
        assert!(
            self.inner.old_data.contains_key(&rank),
            "rank {rank} not registered"
        );
        let sid = self.inner.streams.len();
        let (clock, status) = match start {
            StreamStart::At(t) => (t, Status::Runnable),
            StreamStart::OnSignal => (VTime::ZERO, Status::Parked(WaitKey::AuxStart(rank))),
        };
        self.inner.streams.push(StreamMeta {
            rank,
            kind,
            clock,
            status,
        });
        self.programs.push(Some(program));
        let entry = self.inner.by_rank.entry(rank).or_default();
        match kind {
            StreamKind::Main => entry.main = Some(sid),
            StreamKind::Aux => entry.aux = Some(sid),
        }
        match start {
            StreamStart::At(_) => self.inner.enqueue(sid),
            StreamStart::OnSignal => self
                .inner
                .waiters
                .entry(WaitKey::AuxStart(rank))
                .or_default()
                .push(sid),
        }
    }

    /// Declares a window shared by `participants` (every one must create it).
    pub fn alloc_window(&mut self, mut participants: Vec<usize>) -> WinId {
        participants.sort_unstable();
        participants.dedup();
        self.inner.windows.push(WindowState {
            participants,
            exposed: BTreeMap::new(),
            create: Rendezvous::default(),
            free: Rendezvous::default(),
            locks: BTreeMap::new(),
            pending: BTreeMap::new(),
            ops_max: VTime::ZERO,
        });
        WinId(self.inner.windows.len() - 1)
    }

    pub fn alloc_barrier(&mut self, mut participants: Vec<usize>) -> BarrierId {
        participants.sort_unstable();
        participants.dedup();
        self.inner.barriers.push(BarrierState {
            participants,
            arrivals: BTreeMap::new(),
            requests: BTreeMap::new(),
            done_at: None,
        });
        BarrierId(self.inner.barriers.len() - 1)
    }

    pub fn alloc_collective(&mut self, mut participants: Vec<usize>) -> CollId {
        participants.sort_unstable();
        participants.dedup();
        self.inner.colls.push(CollState {
            participants,
            mode: None,
            arrivals: BTreeMap::new(),
            plans: BTreeMap::new(),
            requests: BTreeMap::new(),
            done_at: None,
            completed: BTreeSet::new(),
        });
        CollId(self.inner.colls.len() - 1)
    }

    /// Runs until every stream finishes. Fails on protocol violations, on
    /// deadlock (the queue drains while streams are parked), or when the
    /// event limit trips.
    pub fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse((time, _, sid))) = self.inner.queue.pop() {
            let meta = &self.inner.streams[sid];
            debug_assert_eq!(meta.status, Status::Runnable);
            debug_assert_eq!(meta.clock, time);
            self.inner.executed += 1;
            if self.inner.executed > self.inner.event_limit {
                return Err(SimError::EventLimit {
                    limit: self.inner.event_limit,
                });
            }
            let mut program = self.programs[sid].take().expect("program present");
            let outcome = program.step(&mut Ctx {
                inner: &mut self.inner,
                sid,
            });
            self.programs[sid] = Some(program);
            match outcome? {
                StepStatus::Finished => self.inner.finish_stream(sid),
                StepStatus::Yield => {
                    if matches!(self.inner.streams[sid].status, Status::Runnable) {
                        self.inner.enqueue(sid);
                    }
                }
            }
        }
        let blocked: Vec<String> = self
            .inner
            .streams
            .iter()
            .filter_map(|s| match s.status {
                Status::Parked(key) => Some(format!(
                    "rank {} {} blocked in {}",
                    s.rank,
                    s.kind,
                    key.describe()
                )),
                Status::Runnable => Some(format!("rank {} {} runnable but unscheduled", s.rank, s.kind)),
                Status::Finished => None,
            })
            .collect();
        if blocked.is_empty() {
            Ok(())
        } else {
            Err(SimError::Deadlock { blocked })
        }
    }

    pub fn trace(&self) -> &Trace {
        &self.inner.trace
    }

    /// A rank's post-resize buffer (what gets/collectives wrote).
    pub fn rank_new_data(&self, rank: usize) -> &[u64] {
        &self.inner.new_data[&rank]
    }

    /// A rank's pre-resize data.
    pub fn rank_old_data(&self, rank: usize) -> &[u64] {
        &self.inner.old_data[&rank]
    }

    /// Final virtual clock of a rank's stream, if it ran to completion.
    pub fn finish_time(&self, rank: usize, kind: StreamKind) -> Option<VTime> {
        let streams = self.inner.by_rank.get(&rank)?;
        let sid = match kind {
            StreamKind::Main => streams.main?,
            StreamKind::Aux => streams.aux?,
        };
        let meta = &self.inner.streams[sid];
        matches!(meta.status, Status::Finished).then_some(meta.clock)
    }
}

impl Inner {
    fn enqueue(&mut self, sid: usize) {
        self.seq += 1;
        self.queue
            .push(Reverse((self.streams[sid].clock, self.seq, sid)));
    }

    fn park(&mut self, sid: usize, key: WaitKey) {
        self.streams[sid].status = Status::Parked(key);
        self.waiters.entry(key).or_default().push(sid);
    }

    fn wake_all(&mut self, key: WaitKey, at: VTime) {
        if let Some(sids) = self.waiters.remove(&key) {
            for sid in sids {
                let meta = &mut self.streams[sid];
                meta.clock = meta.clock.max(at);
                meta.status = Status::Runnable;
                self.enqueue(sid);
            }
        }
    }

    fn finish_stream(&mut self, sid: usize) {
        self.streams[sid].status = Status::Finished;
        let rank = self.streams[sid].rank;
        if self.streams[sid].kind == StreamKind::Aux {
            let at = self.streams[sid].clock;
            self.wake_all(WaitKey::AuxDone(rank), at);
        }
    }

    fn record(&mut self, sid: usize, time: VTime, kind: EventKind, detail: String) {
        let meta = &self.streams[sid];
        self.trace.push(TraceEvent {
            time,
            rank: meta.rank,
            stream: meta.kind,
            kind,
            detail,
        });
    }

    fn protocol(&self, sid: usize, kind: ProtocolKind, detail: impl Into<String>) -> SimError {
        SimError::protocol(self.streams[sid].rank, kind, detail)
    }

    /// Compute slowdown of `rank` at virtual time `at`: the
    /// oversubscription factor from the moment its aux stream is signalled
    /// until the virtual time that stream finishes.
    fn oversub_factor(&self, rank: usize, at: VTime) -> f64 {
        if !self.aux_signalled.contains(&rank) {
            return 1.0;
        }
        let finished_by = self
            .by_rank
            .get(&rank)
            .and_then(|s| s.aux)
            .and_then(|sid| {
                let meta = &self.streams[sid];
                matches!(meta.status, Status::Finished).then_some(meta.clock)
            });
        match finished_by {
            Some(f) if f <= at => 1.0,
            _ => self.cost.oversubscription,
        }
    }

    fn alloc_request(&mut self, owner: usize, kind: ReqKind, completion: Option<VTime>) -> usize {
        self.requests.push(RequestState {
            owner,
            kind,
            completion,
        });
        self.requests.len() - 1
    }

    fn check_request(&self, sid: usize, req: ReqId) -> Result<(), SimError> {
        let rank = self.streams[sid].rank;
        match self.requests.get(req.0) {
            Some(r) if r.owner == rank => Ok(()),
            Some(_) => Err(self.protocol(
                sid,
                ProtocolKind::InvalidRequest,
                format!("request {} belongs to another rank", req.0),
            )),
            None => Err(self.protocol(
                sid,
                ProtocolKind::InvalidRequest,
                format!("request {} does not exist", req.0),
            )),
        }
    }

    fn window_checked(
        &self,
        sid: usize,
        win: WinId,
        need_created: bool,
    ) -> Result<&WindowState, SimError> {
        let rank = self.streams[sid].rank;
        let w = self
            .windows
            .get(win.0)
            .ok_or_else(|| self.protocol(sid, ProtocolKind::MalformedCall, "unknown window"))?;
        if !w.participants.contains(&rank) {
            return Err(self.protocol(
                sid,
                ProtocolKind::NotParticipant,
                format!("rank {rank} is not in window {}'s communicator", win.0),
            ));
        }
        if w.free.done_at.is_some() {
            return Err(self.protocol(
                sid,
                ProtocolKind::UseAfterFree,
                format!("window {} is already freed", win.0),
            ));
        }
        if need_created && !w.create.completed.contains(&rank) {
            return Err(self.protocol(
                sid,
                ProtocolKind::MalformedCall,
                format!("window {} used before its creation completed", win.0),
            ));
        }
        Ok(w)
    }
}

/// Primitive surface handed to programs while they execute one step.
pub struct Ctx<'a> {
    inner: &'a mut Inner,
    sid: usize,
}

impl Ctx<'_> {
    pub fn now(&self) -> VTime {
        self.inner.streams[self.sid].clock
    }

    pub fn rank(&self) -> usize {
        self.inner.streams[self.sid].rank
    }

    pub fn stream_kind(&self) -> StreamKind {
        self.inner.streams[self.sid].kind
    }

    pub fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Compute slowdown of this rank at the current time (1 unless its aux
    /// stream is live).
    pub fn slowdown(&self) -> f64 {
        self.inner.oversub_factor(self.rank(), self.now())
    }

    /// Appends a marker event at the current clock.
    pub fn emit(&mut self, kind: EventKind, detail: String) {
        let now = self.now();
        self.inner.record(self.sid, now, kind, detail);
    }

    /// Burns `base` of compute, scaled by the rank's current slowdown.
    /// Returns the scaled duration.
    pub fn compute(&mut self, base: VTime, iteration: u64, phase: &str) -> VTime {
        let factor = self.slowdown();
        let duration = base.scaled(factor);
        let meta = &mut self.inner.streams[self.sid];
        meta.clock += duration;
        let now = meta.clock;
        self.inner.record(
            self.sid,
            now,
            EventKind::Compute,
            format!("iter={iteration} phase={phase} dur_ns={duration} factor={factor}"),
        );
        duration
    }

    /// The application's periodic global collective, modeled as a fixed
    /// barrier-latency charge. With `collective_blocks_background` set it
    /// additionally waits for the rank's auxiliary stream to finish, which is
    /// how a library that only progresses background operations inside
    /// blocking calls behaves.
    pub fn app_sync(&mut self) -> Result<Poll<()>, SimError> {
        let rank = self.rank();
        if self.inner.collective_blocks_background
            && self.stream_kind() == StreamKind::Main
            && self.inner.aux_signalled.contains(&rank)
        {
            match self.aux_finished(rank) {
                // Still running: block until it completes.
                None => {
                    self.inner.park(self.sid, WaitKey::AuxDone(rank));
                    return Ok(Poll::Pending);
                }
                // Finished, but later than our clock: absorb the delay.
                Some(finish) => {
                    let meta = &mut self.inner.streams[self.sid];
                    meta.clock = meta.clock.max(finish);
                }
            }
        }
        let dur = self.inner.cost.barrier;
        let meta = &mut self.inner.streams[self.sid];
        meta.clock += dur;
        let now = meta.clock;
        self.inner
            .record(self.sid, now, EventKind::AppSync, format!("dur_ns={dur}"));
        Ok(Poll::Ready(()))
    }

    /// Wakes the rank's auxiliary stream at the current time and turns
    /// oversubscription on for the rank.
    pub fn signal_aux(&mut self) {
        let rank = self.rank();
        let now = self.now();
        self.inner.aux_signalled.insert(rank);
        self.inner.wake_all(WaitKey::AuxStart(rank), now);
    }

    /// Completion time of the rank's auxiliary stream, once it finished.
    pub fn aux_finished(&self, rank: usize) -> Option<VTime> {
        let sid = self.inner.by_rank.get(&rank)?.aux?;
        let meta = &self.inner.streams[sid];
        matches!(meta.status, Status::Finished).then_some(meta.clock)
    }

    // ------------------------------------------------------------------
    // Windows
    // ------------------------------------------------------------------

    /// Collective, blocking window creation. Every participant blocks until
    /// the last one arrives plus the window-create latency.
    pub fn win_create(&mut self, win: WinId, expose: Expose) -> Result<Poll<()>, SimError> {
        let rank = self.rank();
        let now = self.now();
        let w = self
            .inner
            .windows
            .get(win.0)
            .ok_or_else(|| self.inner.protocol(self.sid, ProtocolKind::MalformedCall, "unknown window"))?;
        if !w.participants.contains(&rank) {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::NotParticipant,
                format!("rank {rank} is not in window {}'s communicator", win.0),
            ));
        }
        if w.create.completed.contains(&rank) {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::DoubleCreate,
                format!("window {} created twice by rank {rank}", win.0),
            ));
        }
        let w = &mut self.inner.windows[win.0];
        if !w.arrived_create(rank) {
            w.create.arrivals.insert(rank, now);
            let buffer = match expose {
                Expose::Data => self.inner.old_data[&rank].clone(),
                Expose::Empty => Vec::new(),
            };
            self.inner.windows[win.0].exposed.insert(rank, buffer);
            let w = &mut self.inner.windows[win.0];
            if w.create.arrivals.len() == w.participants.len() {
                let done = w.create.last_arrival() + self.inner.cost.create;
                w.create.done_at = Some(done);
                self.inner.wake_all(WaitKey::WinCreate(win.0), done);
            } else {
                self.inner.park(self.sid, WaitKey::WinCreate(win.0));
                return Ok(Poll::Pending);
            }
        }
        let w = &mut self.inner.windows[win.0];
        match w.create.done_at {
            Some(done) => {
                w.create.completed.insert(rank);
                let meta = &mut self.inner.streams[self.sid];
                let called_at = w_called_at(&self.inner.windows[win.0].create, rank);
                meta.clock = meta.clock.max(done);
                self.inner.record(
                    self.sid,
                    done,
                    EventKind::WinCreate,
                    format!("win={} called_at={called_at}", win.0),
                );
                Ok(Poll::Ready(()))
            }
            None => {
                self.inner.park(self.sid, WaitKey::WinCreate(win.0));
                Ok(Poll::Pending)
            }
        }
    }

    /// Collective, blocking window destruction; completes after every rank
    /// has called it and every operation on the window has finished.
    pub fn win_free(&mut self, win: WinId) -> Result<Poll<()>, SimError> {
        let rank = self.rank();
        let now = self.now();
        {
            let w = self
                .inner
                .windows
                .get(win.0)
                .ok_or_else(|| self.inner.protocol(self.sid, ProtocolKind::MalformedCall, "unknown window"))?;
            if !w.participants.contains(&rank) {
                return Err(self.inner.protocol(
                    self.sid,
                    ProtocolKind::NotParticipant,
                    format!("rank {rank} is not in window {}'s communicator", win.0),
                ));
            }
            if w.free.completed.contains(&rank) {
                return Err(self.inner.protocol(
                    self.sid,
                    ProtocolKind::MalformedCall,
                    format!("window {} freed twice by rank {rank}", win.0),
                ));
            }
            if !w.create.completed.contains(&rank) {
                return Err(self.inner.protocol(
                    self.sid,
                    ProtocolKind::MalformedCall,
                    format!("window {} freed before creation completed", win.0),
                ));
            }
            if w.locks.get(&rank).is_some_and(LockState::holds_any) {
                return Err(self.inner.protocol(
                    self.sid,
                    ProtocolKind::FreeWithOpenEpoch,
                    format!("rank {rank} frees window {} with an open epoch", win.0),
                ));
            }
        }
        let w = &mut self.inner.windows[win.0];
        if !w.free.arrivals.contains_key(&rank) {
            w.free.arrivals.insert(rank, now);
            if w.free.arrivals.len() == w.participants.len() {
                let done = w.free.last_arrival().max(w.ops_max);
                w.free.done_at = Some(done);
                self.inner.wake_all(WaitKey::WinFree(win.0), done);
            } else {
                self.inner.park(self.sid, WaitKey::WinFree(win.0));
                return Ok(Poll::Pending);
            }
        }
        let w = &mut self.inner.windows[win.0];
        match w.free.done_at {
            Some(done) => {
                w.free.completed.insert(rank);
                let called_at = w_called_at(&self.inner.windows[win.0].free, rank);
                let meta = &mut self.inner.streams[self.sid];
                meta.clock = meta.clock.max(done);
                self.inner.record(
                    self.sid,
                    done,
                    EventKind::WinFree,
                    format!("win={} called_at={called_at}", win.0),
                );
                Ok(Poll::Ready(()))
            }
            None => {
                self.inner.park(self.sid, WaitKey::WinFree(win.0));
                Ok(Poll::Pending)
            }
        }
    }

    /// Opens a shared passive-target epoch on `target`.
    pub fn win_lock(&mut self, win: WinId, target: usize) -> Result<(), SimError> {
        let rank = self.rank();
        let w = self.inner.window_checked(self.sid, win, true)?;
        if !w.participants.contains(&target) {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::NotParticipant,
                format!("lock target {target} is not in window {}'s communicator", win.0),
            ));
        }
        let state = self.inner.windows[win.0].locks.entry(rank).or_default();
        if state.all {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::NestedLock,
                "lock while holding a lock_all epoch",
            ));
        }
        if !state.targets.insert(target) {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::NestedLock,
                format!("target {target} is already locked"),
            ));
        }
        let dur = self.inner.cost.lock;
        let meta = &mut self.inner.streams[self.sid];
        meta.clock += dur;
        let now = meta.clock;
        self.inner.record(
            self.sid,
            now,
            EventKind::Lock,
            format!("win={} target={target}", win.0),
        );
        Ok(())
    }

    /// Closes the epoch on `target`, blocking until every operation this
    /// rank issued on it in the epoch is remotely complete.
    pub fn win_unlock(&mut self, win: WinId, target: usize) -> Result<(), SimError> {
        let rank = self.rank();
        self.inner.window_checked(self.sid, win, true)?;
        let state = self.inner.windows[win.0].locks.entry(rank).or_default();
        if !state.targets.remove(&target) {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::UnlockWithoutLock,
                format!("unlock of {target} without a matching lock"),
            ));
        }
        let completion = self.inner.windows[win.0]
            .pending
            .remove(&(rank, target))
            .unwrap_or(VTime::ZERO);
        let meta = &mut self.inner.streams[self.sid];
        meta.clock = meta.clock.max(completion);
        let now = meta.clock;
        self.inner.record(
            self.sid,
            now,
            EventKind::Unlock,
            format!("win={} target={target}", win.0),
        );
        Ok(())
    }

    /// Opens one epoch covering every rank of the window; charged a single
    /// lock latency however many targets there are.
    pub fn win_lock_all(&mut self, win: WinId) -> Result<(), SimError> {
        let rank = self.rank();
        self.inner.window_checked(self.sid, win, true)?;
        let state = self.inner.windows[win.0].locks.entry(rank).or_default();
        if state.all {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::NestedLock,
                "lock_all while already holding lock_all",
            ));
        }
        if !state.targets.is_empty() {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::NestedLock,
                "lock_all while holding per-target locks",
            ));
        }
        state.all = true;
        let dur = self.inner.cost.lock;
        let meta = &mut self.inner.streams[self.sid];
        meta.clock += dur;
        let now = meta.clock;
        self.inner
            .record(self.sid, now, EventKind::LockAll, format!("win={}", win.0));
        Ok(())
    }

    /// Closes the all-target epoch; blocks until all of this rank's
    /// operations on the window are remotely complete.
    pub fn win_unlock_all(&mut self, win: WinId) -> Result<(), SimError> {
        let rank = self.rank();
        self.inner.window_checked(self.sid, win, true)?;
        let state = self.inner.windows[win.0].locks.entry(rank).or_default();
        if !state.all {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::UnlockWithoutLock,
                "unlock_all without lock_all",
            ));
        }
        state.all = false;
        let w = &mut self.inner.windows[win.0];
        let keys: Vec<(usize, usize)> = w
            .pending
            .range((rank, 0)..=(rank, usize::MAX))
            .map(|(k, _)| *k)
            .collect();
        let mut completion = VTime::ZERO;
        for key in keys {
            if let Some(c) = w.pending.remove(&key) {
                completion = completion.max(c);
            }
        }
        let meta = &mut self.inner.streams[self.sid];
        meta.clock = meta.clock.max(completion);
        let now = meta.clock;
        self.inner
            .record(self.sid, now, EventKind::UnlockAll, format!("win={}", win.0));
        Ok(())
    }

    /// One-sided read; completion is deferred to the closing unlock.
    pub fn get(
        &mut self,
        win: WinId,
        target: usize,
        remote_offset: usize,
        local_offset: usize,
        count: usize,
    ) -> Result<(), SimError> {
        let completion = self.issue_read(win, target, remote_offset, local_offset, count)?;
        let now = self.now();
        self.inner.record(
            self.sid,
            now,
            EventKind::Get,
            format!(
                "win={} target={target} remote={remote_offset} local={local_offset} count={count} completion={completion}",
                win.0
            ),
        );
        Ok(())
    }

    /// One-sided read returning a testable request.
    pub fn rget(
        &mut self,
        win: WinId,
        target: usize,
        remote_offset: usize,
        local_offset: usize,
        count: usize,
    ) -> Result<ReqId, SimError> {
        let completion = self.issue_read(win, target, remote_offset, local_offset, count)?;
        let rank = self.rank();
        let req = self
            .inner
            .alloc_request(rank, ReqKind::Rget, Some(completion));
        let now = self.now();
        self.inner.record(
            self.sid,
            now,
            EventKind::Rget,
            format!(
                "win={} target={target} remote={remote_offset} local={local_offset} count={count} req={req} completion={completion}",
                win.0
            ),
        );
        Ok(ReqId(req))
    }

    fn issue_read(
        &mut self,
        win: WinId,
        target: usize,
        remote_offset: usize,
        local_offset: usize,
        count: usize,
    ) -> Result<VTime, SimError> {
        let rank = self.rank();
        let w = self.inner.window_checked(self.sid, win, true)?;
        if !w.participants.contains(&target) {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::NotParticipant,
                format!("read target {target} is not in window {}'s communicator", win.0),
            ));
        }
        let holds_epoch = w
            .locks
            .get(&rank)
            .map(|l| l.all || l.targets.contains(&target))
            .unwrap_or(false);
        if !holds_epoch {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::EpochViolation,
                format!("read from {target} outside an open epoch"),
            ));
        }
        let remote_len = w.exposed.get(&target).map_or(0, Vec::len);
        if remote_offset + count > remote_len {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::OutOfBounds,
                format!(
                    "remote [{remote_offset}, {}) exceeds window of {remote_len} elements",
                    remote_offset + count
                ),
            ));
        }
        let local_len = self.inner.new_data[&rank].len();
        if local_offset + count > local_len {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::OutOfBounds,
                format!(
                    "local [{local_offset}, {}) exceeds buffer of {local_len} elements",
                    local_offset + count
                ),
            ));
        }
        let now = self.now();
        if count == 0 {
            return Ok(now);
        }
        let port_free = self.inner.net_free[&rank];
        let completion = now.max(port_free) + self.inner.cost.transfer(count);
        self.inner.net_free.insert(rank, completion);
        // Windows hold constant data during redistribution, so the copy can
        // happen at issue time; only its completion instant is modeled.
        let src =
            self.inner.windows[win.0].exposed[&target][remote_offset..remote_offset + count].to_vec();
        self.inner.new_data.get_mut(&rank).unwrap()[local_offset..local_offset + count]
            .copy_from_slice(&src);
        let w = &mut self.inner.windows[win.0];
        let slot = w.pending.entry((rank, target)).or_insert(VTime::ZERO);
        *slot = (*slot).max(completion);
        w.ops_max = w.ops_max.max(completion);
        Ok(completion)
    }

    // ------------------------------------------------------------------
    // Requests and barriers
    // ------------------------------------------------------------------

    /// Non-blocking completion check; never blocks.
    pub fn test(&mut self, req: ReqId) -> Result<bool, SimError> {
        self.inner.check_request(self.sid, req)?;
        let poll = self.inner.cost.poll;
        let meta = &mut self.inner.streams[self.sid];
        meta.clock += poll;
        let now = meta.clock;
        let result = self.inner.requests[req.0]
            .completion
            .is_some_and(|c| c <= now);
        self.inner.record(
            self.sid,
            now,
            EventKind::Test,
            format!("req={} result={result}", req.0),
        );
        Ok(result)
    }

    /// Tests a whole set of requests at once.
    pub fn testall(&mut self, reqs: &[ReqId]) -> Result<bool, SimError> {
        for req in reqs {
            self.inner.check_request(self.sid, *req)?;
        }
        let poll = self.inner.cost.poll;
        let meta = &mut self.inner.streams[self.sid];
        meta.clock += poll;
        let now = meta.clock;
        let result = reqs.iter().all(|r| {
            self.inner.requests[r.0]
                .completion
                .is_some_and(|c| c <= now)
        });
        self.inner.record(
            self.sid,
            now,
            EventKind::Testall,
            format!("count={} result={result}", reqs.len()),
        );
        Ok(result)
    }

    /// Blocks until the request completes, advancing the clock to its
    /// completion time.
    pub fn wait(&mut self, req: ReqId) -> Result<Poll<()>, SimError> {
        self.inner.check_request(self.sid, req)?;
        match self.inner.requests[req.0].completion {
            Some(c) => {
                let meta = &mut self.inner.streams[self.sid];
                meta.clock = meta.clock.max(c);
                let now = meta.clock;
                self.inner
                    .record(self.sid, now, EventKind::Wait, format!("req={}", req.0));
                Ok(Poll::Ready(()))
            }
            None => {
                self.inner.park(self.sid, WaitKey::Request(req.0));
                Ok(Poll::Pending)
            }
        }
    }

    /// Non-blocking barrier: returns a request that completes, for every
    /// participant, barrier-latency after the last one calls in.
    pub fn ibarrier(&mut self, bar: BarrierId) -> Result<ReqId, SimError> {
        let rank = self.rank();
        let now = self.now();
        let b = self
            .inner
            .barriers
            .get(bar.0)
            .ok_or_else(|| self.inner.protocol(self.sid, ProtocolKind::MalformedCall, "unknown barrier"))?;
        if !b.participants.contains(&rank) {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::NotParticipant,
                format!("rank {rank} is not in barrier {}'s communicator", bar.0),
            ));
        }
        if b.arrivals.contains_key(&rank) {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::DuplicateBarrierCall,
                format!("rank {rank} called barrier {} twice", bar.0),
            ));
        }
        let req = self.inner.alloc_request(rank, ReqKind::Barrier, None);
        let b = &mut self.inner.barriers[bar.0];
        b.arrivals.insert(rank, now);
        b.requests.insert(rank, req);
        if b.arrivals.len() == b.participants.len() {
            let done = b.arrivals.values().copied().max().unwrap() + self.inner.cost.barrier;
            b.done_at = Some(done);
            let reqs: Vec<usize> = b.requests.values().copied().collect();
            for r in reqs {
                self.inner.requests[r].completion = Some(done);
                self.inner.wake_all(WaitKey::Request(r), done);
            }
        }
        self.inner.record(
            self.sid,
            now,
            EventKind::Ibarrier,
            format!("bar={} req={req}", bar.0),
        );
        Ok(ReqId(req))
    }

    // ------------------------------------------------------------------
    // All-to-all exchanges
    // ------------------------------------------------------------------

    /// Blocking all-to-all; all participants resume together once the
    /// slowest rank's receives are served.
    pub fn alltoallv(&mut self, coll: CollId, plan: &XferPlan) -> Result<Poll<()>, SimError> {
        let rank = self.rank();
        if let Some(done) = self.coll_arrive(coll, plan, CollMode::Blocking, None)? {
            let c = &mut self.inner.colls[coll.0];
            c.completed.insert(rank);
            let called_at = c.arrivals[&rank];
            let recv = c.plans[&rank].total_recv();
            let meta = &mut self.inner.streams[self.sid];
            meta.clock = meta.clock.max(done);
            self.inner.record(
                self.sid,
                done,
                EventKind::Alltoallv,
                format!("coll={} recv={recv} called_at={called_at}", coll.0),
            );
            Ok(Poll::Ready(()))
        } else {
            self.inner.park(self.sid, WaitKey::Coll(coll.0));
            Ok(Poll::Pending)
        }
    }

    /// Non-blocking all-to-all; the returned request completes at the
    /// collective's completion time.
    pub fn ialltoallv(&mut self, coll: CollId, plan: &XferPlan) -> Result<ReqId, SimError> {
        let rank = self.rank();
        let req = self.inner.alloc_request(rank, ReqKind::Coll, None);
        self.coll_arrive(coll, plan, CollMode::Nonblocking, Some(req))?;
        let now = self.now();
        self.inner.record(
            self.sid,
            now,
            EventKind::Ialltoallv,
            format!("coll={} req={req}", coll.0),
        );
        Ok(ReqId(req))
    }

    /// Shared arrival path; returns the completion time once determined.
    fn coll_arrive(
        &mut self,
        coll: CollId,
        plan: &XferPlan,
        mode: CollMode,
        req: Option<usize>,
    ) -> Result<Option<VTime>, SimError> {
        let rank = self.rank();
        let now = self.now();
        let c = self
            .inner
            .colls
            .get(coll.0)
            .ok_or_else(|| self.inner.protocol(self.sid, ProtocolKind::MalformedCall, "unknown collective"))?;
        if !c.participants.contains(&rank) {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::NotParticipant,
                format!("rank {rank} is not in collective {}'s communicator", coll.0),
            ));
        }
        match (c.mode, mode) {
            (None, _) => {}
            (Some(m), n) if m == n => {}
            _ => {
                return Err(self.inner.protocol(
                    self.sid,
                    ProtocolKind::MalformedCall,
                    "blocking and non-blocking calls mixed on one collective",
                ))
            }
        }
        let n = c.participants.len();
        if plan.send_counts.len() != n
            || plan.send_offsets.len() != n
            || plan.recv_counts.len() != n
            || plan.recv_displs.len() != n
        {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::InconsistentPlans,
                format!("plan sized for {} ranks, collective has {n}", plan.send_counts.len()),
            ));
        }
        let already_arrived = c.arrivals.contains_key(&rank);
        if already_arrived && mode == CollMode::Nonblocking {
            return Err(self.inner.protocol(
                self.sid,
                ProtocolKind::MalformedCall,
                format!("rank {rank} called collective {} twice", coll.0),
            ));
        }
        if !already_arrived {
            let c = &mut self.inner.colls[coll.0];
            c.mode = Some(mode);
            c.arrivals.insert(rank, now);
            c.plans.insert(rank, plan.clone());
            if let Some(r) = req {
                c.requests.insert(rank, r);
            }
            if c.arrivals.len() == c.participants.len() {
                let done = self.coll_complete(coll)?;
                return Ok(Some(done));
            }
            return Ok(None);
        }
        Ok(self.inner.colls[coll.0].done_at)
    }

    /// Validates the paired plans, moves the data, fixes the completion time
    /// and wakes everyone concerned.
    fn coll_complete(&mut self, coll: CollId) -> Result<VTime, SimError> {
        let participants = self.inner.colls[coll.0].participants.clone();
        let n = participants.len();
        // Transpose consistency: what i sends j must be what j expects of i.
        for (i, pi) in participants.iter().enumerate() {
            for (j, pj) in participants.iter().enumerate() {
                let sent = self.inner.colls[coll.0].plans[pi].send_counts[j];
                let expected = self.inner.colls[coll.0].plans[pj].recv_counts[i];
                if sent != expected {
                    return Err(self.inner.protocol(
                        self.sid,
                        ProtocolKind::InconsistentPlans,
                        format!("rank {pi} sends {sent} to rank {pj}, which expects {expected}"),
                    ));
                }
            }
        }
        // Bounds, then the actual copies.
        for (i, pi) in participants.iter().enumerate() {
            for j in 0..n {
                let pj = participants[j];
                let count = self.inner.colls[coll.0].plans[pi].recv_counts[j];
                if count == 0 {
                    continue;
                }
                let src_off = self.inner.colls[coll.0].plans[&pj].send_offsets[i];
                let dst_off = self.inner.colls[coll.0].plans[pi].recv_displs[j];
                let src_len = self.inner.old_data[&pj].len();
                let dst_len = self.inner.new_data[pi].len();
                if src_off + count > src_len || dst_off + count > dst_len {
                    return Err(self.inner.protocol(
                        self.sid,
                        ProtocolKind::OutOfBounds,
                        format!("exchange {pj}->{pi} of {count} elements exceeds a buffer"),
                    ));
                }
                let chunk = self.inner.old_data[&pj][src_off..src_off + count].to_vec();
                self.inner.new_data.get_mut(pi).unwrap()[dst_off..dst_off + count]
                    .copy_from_slice(&chunk);
            }
        }
        // Cost: everyone leaves together once the slowest receiver is served.
        let start = self.inner.colls[coll.0]
            .arrivals
            .values()
            .copied()
            .max()
            .unwrap();
        let mut done = start;
        for pi in &participants {
            let recv_cost: VTime = self.inner.colls[coll.0].plans[pi]
                .recv_counts
                .iter()
                .map(|c| self.inner.cost.transfer(*c))
                .sum();
            done = done.max(start + recv_cost);
        }
        let c = &mut self.inner.colls[coll.0];
        c.done_at = Some(done);
        let reqs: Vec<usize> = c.requests.values().copied().collect();
        for r in reqs {
            self.inner.requests[r].completion = Some(done);
            self.inner.wake_all(WaitKey::Request(r), done);
        }
        self.inner.wake_all(WaitKey::Coll(coll.0), done);
        Ok(done)
    }
}

impl WindowState {
    fn arrived_create(&self, rank: usize) -> bool {
        self.create.arrivals.contains_key(&rank)
    }
}

fn w_called_at(r: &Rendezvous, rank: usize) -> VTime {
    r.arrivals.get(&rank).copied().unwrap_or(VTime::ZERO)
}
