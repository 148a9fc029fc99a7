//! Per-role state machine for background one-sided redistribution.
//!
//! The redistribution splits into an initialization half that sets up the
//! window and issues work, and a completion half stepped repeatedly until
//! the rank is done. Each role walks a different path:
//!
//! - drain-only ranks have no application to run: they read with blocking
//!   get under per-target (or all-target) epochs, signal a non-blocking
//!   barrier, block on it, and free the window;
//! - source-only ranks have nothing to read: they signal the barrier right
//!   away, then alternate one application iteration with one barrier test
//!   until it trips, and free the window;
//! - ranks that are both read with request-returning gets, alternate
//!   iterations with testing their own reads, signal the barrier once the
//!   reads landed, poll it between further iterations, close their epochs,
//!   and free the window.

use std::task::Poll;

use crate::app::IterationEngine;
use crate::blockdist::ReadSegment;
use crate::simcore::{
    BarrierId, Ctx, EventKind, Expose, ProtocolKind, ReqId, SimError, VTime, WinId,
};
use crate::topology::Role;

use super::Method;

/// Where a rank currently is on its path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Window not created yet (or creation still blocking).
    Init,
    /// Drain-only: about to perform its blocking reads.
    Reading,
    /// Both: reads issued, testing them between iterations.
    AwaitOwnReads,
    /// Barrier signalled, poll (or wait) loop not entered yet.
    BarrierSignaled,
    /// Testing or waiting on the barrier.
    AwaitBarrier,
    /// Both: barrier done, epochs still to close.
    Unlocking,
    /// Freeing the window (possibly blocking on the other ranks).
    Freeing,
    Done,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Reading => "reading",
            Phase::AwaitOwnReads => "await_own_reads",
            Phase::BarrierSignaled => "barrier_signaled",
            Phase::AwaitBarrier => "await_barrier",
            Phase::Unlocking => "unlocking",
            Phase::Freeing => "freeing",
            Phase::Done => "done",
        }
    }
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::SourceOnly => "source_only",
        Role::DrainOnly => "drain_only",
        Role::Both => "both",
    }
}

/// One rank's wait-drains redistribution.
#[derive(Debug)]
pub struct WaitDrainsRma {
    method: Method,
    role: Role,
    win: WinId,
    bar: BarrierId,
    expose: Expose,
    reads: Vec<ReadSegment>,
    phase: Phase,
    rgets: Vec<ReqId>,
    barrier_req: Option<ReqId>,
}

impl WaitDrainsRma {
    pub fn new(
        method: Method,
        role: Role,
        win: WinId,
        bar: BarrierId,
        expose: Expose,
        reads: Vec<ReadSegment>,
    ) -> Self {
        debug_assert!(method.is_rma());
        WaitDrainsRma {
            method,
            role,
            win,
            bar,
            expose,
            reads,
            phase: Phase::Init,
            rgets: Vec::new(),
            barrier_req: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    fn set_phase(&mut self, ctx: &mut Ctx<'_>, phase: Phase) {
        self.phase = phase;
        ctx.emit(
            EventKind::Phase,
            format!("phase={} role={}", phase.name(), role_name(self.role)),
        );
    }

    fn signal_barrier(&mut self, ctx: &mut Ctx<'_>) -> Result<(), SimError> {
        let req = ctx.ibarrier(self.bar)?;
        self.barrier_req = Some(req);
        Ok(())
    }

    /// Creates the window and issues this rank's share of the work: ranks
    /// with reads get them in flight (request-returning for ranks that keep
    /// computing), ranks without reads signal the barrier immediately.
    /// Pending while the collective window creation blocks.
    pub fn init_rma(&mut self, ctx: &mut Ctx<'_>) -> Result<Poll<()>, SimError> {
        if self.phase != Phase::Init {
            return Err(SimError::protocol(
                ctx.rank(),
                ProtocolKind::MalformedCall,
                "init on an already initialized redistribution",
            ));
        }
        if ctx.win_create(self.win, self.expose)?.is_pending() {
            return Ok(Poll::Pending);
        }
        match self.role {
            Role::SourceOnly => {
                self.signal_barrier(ctx)?;
                self.set_phase(ctx, Phase::BarrierSignaled);
            }
            Role::Both => {
                match self.method {
                    Method::RmaLock => {
                        for seg in &self.reads.clone() {
                            ctx.win_lock(self.win, seg.source)?;
                            self.rgets.push(ctx.rget(
                                self.win,
                                seg.source,
                                seg.remote_offset,
                                seg.local_offset,
                                seg.count,
                            )?);
                        }
                    }
                    Method::RmaLockall => {
                        ctx.win_lock_all(self.win)?;
                        for seg in &self.reads.clone() {
                            self.rgets.push(ctx.rget(
                                self.win,
                                seg.source,
                                seg.remote_offset,
                                seg.local_offset,
                                seg.count,
                            )?);
                        }
                    }
                    Method::Col => unreachable!("collective method has no window path"),
                }
                self.set_phase(ctx, Phase::AwaitOwnReads);
            }
            Role::DrainOnly => {
                self.set_phase(ctx, Phase::Reading);
            }
        }
        Ok(Poll::Ready(()))
    }

    /// One step of the completion half; `Ready` once the rank reached
    /// `Done`. Stepping past `Done` is a protocol error.
    pub fn complete_rma_step(
        &mut self,
        ctx: &mut Ctx<'_>,
        iterations: &mut IterationEngine,
        iteration_time: VTime,
    ) -> Result<Poll<()>, SimError> {
        match self.phase {
            Phase::Init => Err(SimError::protocol(
                ctx.rank(),
                ProtocolKind::MalformedCall,
                "completion stepped before initialization",
            )),
            Phase::Reading => {
                // Blocking reads; this rank runs no application meanwhile.
                match self.method {
                    Method::RmaLock => {
                        for seg in &self.reads {
                            ctx.win_lock(self.win, seg.source)?;
                            ctx.get(
                                self.win,
                                seg.source,
                                seg.remote_offset,
                                seg.local_offset,
                                seg.count,
                            )?;
                        }
                        for seg in &self.reads {
                            ctx.win_unlock(self.win, seg.source)?;
                        }
                    }
                    Method::RmaLockall => {
                        ctx.win_lock_all(self.win)?;
                        for seg in &self.reads {
                            ctx.get(
                                self.win,
                                seg.source,
                                seg.remote_offset,
                                seg.local_offset,
                                seg.count,
                            )?;
                        }
                        ctx.win_unlock_all(self.win)?;
                    }
                    Method::Col => unreachable!(),
                }
                self.signal_barrier(ctx)?;
                self.set_phase(ctx, Phase::AwaitBarrier);
                Ok(Poll::Pending)
            }
            Phase::AwaitOwnReads => {
                if iterations
                    .run_one(ctx, iteration_time, "during")?
                    .is_pending()
                {
                    return Ok(Poll::Pending);
                }
                if ctx.testall(&self.rgets)? {
                    self.signal_barrier(ctx)?;
                    self.set_phase(ctx, Phase::BarrierSignaled);
                }
                Ok(Poll::Pending)
            }
            Phase::BarrierSignaled | Phase::AwaitBarrier => {
                let req = self.barrier_req.expect("barrier signalled on this path");
                if self.role == Role::DrainOnly {
                    if ctx.wait(req)?.is_pending() {
                        return Ok(Poll::Pending);
                    }
                    self.set_phase(ctx, Phase::Freeing);
                    return self.free(ctx);
                }
                if iterations
                    .run_one(ctx, iteration_time, "during")?
                    .is_pending()
                {
                    return Ok(Poll::Pending);
                }
                if !ctx.test(req)? {
                    if self.phase == Phase::BarrierSignaled {
                        self.set_phase(ctx, Phase::AwaitBarrier);
                    }
                    return Ok(Poll::Pending);
                }
                if self.role == Role::Both {
                    self.set_phase(ctx, Phase::Unlocking);
                    self.unlock_all_epochs(ctx)?;
                }
                self.set_phase(ctx, Phase::Freeing);
                self.free(ctx)
            }
            Phase::Unlocking => {
                // Unlocks are immediate once the reads completed; the phase
                // only persists if freeing blocked before, so fall through.
                self.set_phase(ctx, Phase::Freeing);
                self.free(ctx)
            }
            Phase::Freeing => self.free(ctx),
            Phase::Done => Err(SimError::protocol(
                ctx.rank(),
                ProtocolKind::MalformedCall,
                "stepping a completed redistribution",
            )),
        }
    }

    fn unlock_all_epochs(&mut self, ctx: &mut Ctx<'_>) -> Result<(), SimError> {
        match self.method {
            Method::RmaLock => {
                for seg in &self.reads {
                    ctx.win_unlock(self.win, seg.source)?;
                }
            }
            Method::RmaLockall => ctx.win_unlock_all(self.win)?,
            Method::Col => unreachable!(),
        }
        Ok(())
    }

    fn free(&mut self, ctx: &mut Ctx<'_>) -> Result<Poll<()>, SimError> {
        if ctx.win_free(self.win)?.is_pending() {
            return Ok(Poll::Pending);
        }
        self.set_phase(ctx, Phase::Done);
        Ok(Poll::Ready(()))
    }
}
