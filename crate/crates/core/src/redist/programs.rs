//! Rank programs: application phases wrapped around a redistribution part.
//!
//! Every rank's main stream runs a [`RankProgram`]: iterations before the
//! reconfiguration (sources only), the strategy-specific redistribution part,
//! then iterations on the resized group (drains only). Threading moves the
//! blocking protocol onto an auxiliary stream ([`AuxProgram`]) while the main
//! stream keeps iterating at the oversubscription slowdown.

use std::task::Poll;

use crate::app::IterationEngine;
use crate::blockdist::ReadSegment;
use crate::simcore::{
    BarrierId, CollId, Ctx, EventKind, Expose, Program, ReqId, SimError, StepStatus, VTime, WinId,
    XferPlan,
};

use super::state::WaitDrainsRma;
use super::Method;

/// The blocking transfer protocols, also what threading runs in background.
#[derive(Debug)]
pub(super) enum RedistKernel {
    Rma(BlockingRma),
    Col(BlockingCol),
}

impl RedistKernel {
    fn step(&mut self, ctx: &mut Ctx<'_>) -> Result<Poll<()>, SimError> {
        match self {
            RedistKernel::Rma(p) => p.step(ctx),
            RedistKernel::Col(p) => p.step(ctx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RmaStage {
    Create,
    Free,
}

/// Blocking one-sided redistribution: create the window, read (drains),
/// free. All locks and gets are issued before the first unlock.
#[derive(Debug)]
pub(super) struct BlockingRma {
    method: Method,
    win: WinId,
    expose: Expose,
    reads: Vec<ReadSegment>,
    stage: RmaStage,
}

impl BlockingRma {
    pub(super) fn new(method: Method, win: WinId, expose: Expose, reads: Vec<ReadSegment>) -> Self {
        debug_assert!(method.is_rma());
        BlockingRma {
            method,
            win,
            expose,
            reads,
            stage: RmaStage::Create,
        }
    }

    fn step(&mut self, ctx: &mut Ctx<'_>) -> Result<Poll<()>, SimError> {
        loop {
            match self.stage {
                RmaStage::Create => {
                    if ctx.win_create(self.win, self.expose)?.is_pending() {
                        return Ok(Poll::Pending);
                    }
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
                            if !self.reads.is_empty() {
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
                        }
                        Method::Col => unreachable!("collective method has no window path"),
                    }
                    self.stage = RmaStage::Free;
                }
                RmaStage::Free => {
                    if ctx.win_free(self.win)?.is_pending() {
                        return Ok(Poll::Pending);
                    }
                    return Ok(Poll::Ready(()));
                }
            }
        }
    }
}

/// Blocking collective redistribution: one all-to-all exchange.
#[derive(Debug)]
pub(super) struct BlockingCol {
    coll: CollId,
    plan: XferPlan,
}

impl BlockingCol {
    pub(super) fn new(coll: CollId, plan: XferPlan) -> Self {
        BlockingCol { coll, plan }
    }

    fn step(&mut self, ctx: &mut Ctx<'_>) -> Result<Poll<()>, SimError> {
        ctx.alltoallv(self.coll, &self.plan)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColBgStage {
    Issue,
    PollExchange,
    WaitExchange,
    PollBarrier,
    WaitBarrier,
}

/// Background collective redistribution: issue the non-blocking exchange,
/// then poll it between iterations (ranks with an application) or block on
/// it (ranks without). The wait-drains variant adds a barrier round after
/// the local exchange completes.
#[derive(Debug)]
pub(super) struct ColBackground {
    coll: CollId,
    plan: XferPlan,
    bar: Option<BarrierId>,
    runs_app: bool,
    stage: ColBgStage,
    exchange_req: Option<ReqId>,
    barrier_req: Option<ReqId>,
}

impl ColBackground {
    pub(super) fn new(coll: CollId, plan: XferPlan, bar: Option<BarrierId>, runs_app: bool) -> Self {
        ColBackground {
            coll,
            plan,
            bar,
            runs_app,
            stage: ColBgStage::Issue,
            exchange_req: None,
            barrier_req: None,
        }
    }

    fn step(
        &mut self,
        ctx: &mut Ctx<'_>,
        iterations: &mut IterationEngine,
        iteration_time: VTime,
    ) -> Result<Poll<()>, SimError> {
        loop {
            match self.stage {
                ColBgStage::Issue => {
                    let req = ctx.ialltoallv(self.coll, &self.plan)?;
                    self.exchange_req = Some(req);
                    ctx.emit(EventKind::RedistInitDone, String::new());
                    self.stage = if self.runs_app {
                        ColBgStage::PollExchange
                    } else {
                        ColBgStage::WaitExchange
                    };
                }
                ColBgStage::PollExchange => {
                    if iterations
                        .run_one(ctx, iteration_time, "during")?
                        .is_pending()
                    {
                        return Ok(Poll::Pending);
                    }
                    if !ctx.test(self.exchange_req.unwrap())? {
                        return Ok(Poll::Pending);
                    }
                    match self.bar {
                        Some(bar) => {
                            self.barrier_req = Some(ctx.ibarrier(bar)?);
                            self.stage = ColBgStage::PollBarrier;
                        }
                        None => return Ok(Poll::Ready(())),
                    }
                }
                ColBgStage::WaitExchange => {
                    if ctx.wait(self.exchange_req.unwrap())?.is_pending() {
                        return Ok(Poll::Pending);
                    }
                    match self.bar {
                        Some(bar) => {
                            self.barrier_req = Some(ctx.ibarrier(bar)?);
                            self.stage = ColBgStage::WaitBarrier;
                        }
                        None => return Ok(Poll::Ready(())),
                    }
                }
                ColBgStage::PollBarrier => {
                    if iterations
                        .run_one(ctx, iteration_time, "during")?
                        .is_pending()
                    {
                        return Ok(Poll::Pending);
                    }
                    if ctx.test(self.barrier_req.unwrap())? {
                        return Ok(Poll::Ready(()));
                    }
                    return Ok(Poll::Pending);
                }
                ColBgStage::WaitBarrier => {
                    if ctx.wait(self.barrier_req.unwrap())?.is_pending() {
                        return Ok(Poll::Pending);
                    }
                    return Ok(Poll::Ready(()));
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ThreadingStage {
    Signal,
    Iterate,
    CheckFlag,
}

/// Main-stream side of the threading strategy: hand the protocol to the
/// auxiliary stream, keep iterating at the oversubscription slowdown, and
/// check the completion flag once per iteration. The check runs as its own
/// kernel step so every auxiliary event earlier in virtual time has settled
/// by the time the flag is read.
#[derive(Debug)]
pub(super) struct ThreadingMain {
    stage: ThreadingStage,
}

impl ThreadingMain {
    pub(super) fn new() -> Self {
        ThreadingMain {
            stage: ThreadingStage::Signal,
        }
    }

    fn step(
        &mut self,
        ctx: &mut Ctx<'_>,
        iterations: &mut IterationEngine,
        iteration_time: VTime,
    ) -> Result<Poll<()>, SimError> {
        loop {
            match self.stage {
                ThreadingStage::Signal => {
                    ctx.signal_aux();
                    ctx.emit(EventKind::RedistInitDone, String::new());
                    self.stage = ThreadingStage::Iterate;
                }
                ThreadingStage::Iterate => {
                    if iterations
                        .run_one(ctx, iteration_time, "during")?
                        .is_pending()
                    {
                        return Ok(Poll::Pending);
                    }
                    self.stage = ThreadingStage::CheckFlag;
                    return Ok(Poll::Pending);
                }
                ThreadingStage::CheckFlag => {
                    let now = ctx.now();
                    let done = ctx
                        .aux_finished(ctx.rank())
                        .is_some_and(|finished| finished <= now);
                    ctx.emit(EventKind::FlagPoll, format!("result={done}"));
                    if done {
                        return Ok(Poll::Ready(()));
                    }
                    self.stage = ThreadingStage::Iterate;
                }
            }
        }
    }
}

/// Auxiliary-stream program: the full blocking protocol, in background.
pub(super) struct AuxProgram {
    kernel: RedistKernel,
}

impl AuxProgram {
    pub(super) fn new(kernel: RedistKernel) -> Self {
        AuxProgram { kernel }
    }
}

impl Program for AuxProgram {
    fn step(&mut self, ctx: &mut Ctx<'_>) -> Result<StepStatus, SimError> {
        match self.kernel.step(ctx)? {
            Poll::Pending => Ok(StepStatus::Yield),
            Poll::Ready(()) => Ok(StepStatus::Finished),
        }
    }
}

/// The strategy-specific middle of a rank's run.
pub(super) enum RedistPart {
    Blocking(RedistKernel),
    WaitDrains(Box<WaitDrainsRma>),
    ColBackground(ColBackground),
    ThreadingMain(ThreadingMain),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Before,
    Redist,
    After,
}

/// One rank's whole run: pre-resize iterations, redistribution, post-resize
/// iterations.
pub(super) struct RankProgram {
    part: RedistPart,
    engine: IterationEngine,
    stage: Stage,
    iterations_before: u64,
    iterations_after: u64,
    base_before: VTime,
    base_after: VTime,
    spawn_marker: bool,
}

impl RankProgram {
    #[allow(clippy::too_many_arguments)]
    pub(super) fn new(
        part: RedistPart,
        engine: IterationEngine,
        iterations_before: u64,
        iterations_after: u64,
        base_before: VTime,
        base_after: VTime,
        spawned: bool,
    ) -> Self {
        RankProgram {
            part,
            engine,
            stage: Stage::Before,
            iterations_before,
            iterations_after,
            base_before,
            base_after,
            spawn_marker: spawned,
        }
    }
}

impl Program for RankProgram {
    fn step(&mut self, ctx: &mut Ctx<'_>) -> Result<StepStatus, SimError> {
        if self.spawn_marker {
            ctx.emit(EventKind::Spawn, format!("at_ns={}", ctx.now()));
            self.spawn_marker = false;
        }
        loop {
            match self.stage {
                Stage::Before => {
                    if self.iterations_before == 0 {
                        ctx.emit(EventKind::RedistStart, String::new());
                        self.stage = Stage::Redist;
                        continue;
                    }
                    if self
                        .engine
                        .run_one(ctx, self.base_before, "before")?
                        .is_ready()
                    {
                        self.iterations_before -= 1;
                    }
                    return Ok(StepStatus::Yield);
                }
                Stage::Redist => {
                    let done = match &mut self.part {
                        RedistPart::Blocking(kernel) => kernel.step(ctx)?,
                        RedistPart::WaitDrains(wd) => {
                            if wd.phase() == super::Phase::Init {
                                if wd.init_rma(ctx)?.is_ready() {
                                    ctx.emit(EventKind::RedistInitDone, String::new());
                                }
                                Poll::Pending
                            } else {
                                wd.complete_rma_step(ctx, &mut self.engine, self.base_before)?
                            }
                        }
                        RedistPart::ColBackground(col) => {
                            col.step(ctx, &mut self.engine, self.base_before)?
                        }
                        RedistPart::ThreadingMain(main) => {
                            main.step(ctx, &mut self.engine, self.base_before)?
                        }
                    };
                    match done {
                        Poll::Pending => return Ok(StepStatus::Yield),
                        Poll::Ready(()) => {
                            ctx.emit(EventKind::RedistDone, String::new());
                            self.stage = Stage::After;
                        }
                    }
                }
                Stage::After => {
                    if self.iterations_after == 0 {
                        return Ok(StepStatus::Finished);
                    }
                    if self
                        .engine
                        .run_one(ctx, self.base_after, "after")?
                        .is_ready()
                    {
                        self.iterations_after -= 1;
                    }
                    return Ok(StepStatus::Yield);
                }
            }
        }
    }
}
