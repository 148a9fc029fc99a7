//! End-to-end redistribution runs: data integrity, trace shape, timing.

use std::task::Poll;

use malleasim_core::app::{AppConfig, IterationEngine};
use malleasim_core::blockdist::{block_partition, compute_read_plan};
use malleasim_core::redist::{
    payload, run_reconfiguration, DataCategory, DataDescriptor, Method, Phase, RunError, Strategy,
    WaitDrainsRma,
};
use malleasim_core::simcore::{
    CostModel, Ctx, EventKind, Expose, Program, Runtime, SimConfig, SimError, StepStatus,
    StreamKind, StreamStart, TraceEvent, VTime,
};
use malleasim_core::topology::Role;

fn run(
    ns: usize,
    nd: usize,
    method: Method,
    strategy: Strategy,
    n: usize,
    app: &AppConfig,
    sim: &SimConfig,
) -> malleasim_core::redist::RunOutput {
    run_reconfiguration(
        ns,
        nd,
        method,
        strategy,
        &DataDescriptor::constant(n),
        app,
        sim,
    )
    .unwrap_or_else(|e| panic!("{ns}->{nd} {method} {strategy}: {e}"))
}

fn rank_events(out: &malleasim_core::redist::RunOutput, rank: usize) -> Vec<TraceEvent> {
    out.trace.rank_events(rank).cloned().collect()
}

fn events_of_kind(events: &[TraceEvent], kind: EventKind) -> Vec<TraceEvent> {
    events.iter().filter(|e| e.kind == kind).cloned().collect()
}

#[test]
fn data_survives_every_method_strategy_and_role_mix() {
    let app = AppConfig::default();
    let sim = SimConfig {
        seed: 7,
        ..SimConfig::default()
    };
    for (ns, nd) in [(2usize, 4usize), (4, 2), (3, 3), (1, 5), (5, 1), (3, 7)] {
        for method in Method::ALL {
            for strategy in Strategy::ALL {
                if !malleasim_core::redist::strategy_eligible(method, strategy) {
                    continue;
                }
                for n in [17usize, 64] {
                    let out = run(ns, nd, method, strategy, n, &app, &sim);
                    assert!(
                        out.data_intact(),
                        "{ns}->{nd} {method} {strategy} n={n}: drains do not reassemble the array"
                    );
                    if strategy == Strategy::Blocking {
                        assert_eq!(out.record.n_it_overlapped, 0);
                    }
                }
            }
        }
    }
}

#[test]
fn rma_lock_issues_the_planned_reads() {
    // 2 -> 4 over 8 elements: drain 1 owns [2, 4), entirely inside source
    // 0's block [0, 4), so it opens one epoch on source 0 and reads two
    // elements starting at remote offset 2.
    let out = run(
        2,
        4,
        Method::RmaLock,
        Strategy::Blocking,
        8,
        &AppConfig::default(),
        &SimConfig::default(),
    );
    let events = rank_events(&out, 1);
    let locks = events_of_kind(&events, EventKind::Lock);
    let gets = events_of_kind(&events, EventKind::Get);
    let unlocks = events_of_kind(&events, EventKind::Unlock);
    assert_eq!(locks.len(), 1);
    assert_eq!(locks[0].field("target"), Some("0"));
    assert_eq!(gets.len(), 1);
    assert_eq!(gets[0].field("target"), Some("0"));
    assert_eq!(gets[0].field_u64("remote"), Some(2));
    assert_eq!(gets[0].field_u64("local"), Some(0));
    assert_eq!(gets[0].field_u64("count"), Some(2));
    assert_eq!(unlocks.len(), 1);

    // Drain 2 owns [4, 6) inside source 1's block [4, 8): offset 0 there.
    let events = rank_events(&out, 2);
    let gets = events_of_kind(&events, EventKind::Get);
    assert_eq!(gets.len(), 1);
    assert_eq!(gets[0].field("target"), Some("1"));
    assert_eq!(gets[0].field_u64("remote"), Some(0));
    assert_eq!(gets[0].field_u64("count"), Some(2));
}

#[test]
fn identity_resize_reads_own_block_from_offset_zero() {
    let out = run(
        4,
        4,
        Method::RmaLock,
        Strategy::Blocking,
        100,
        &AppConfig::default(),
        &SimConfig::default(),
    );
    for rank in 0..4 {
        let events = rank_events(&out, rank);
        let gets = events_of_kind(&events, EventKind::Get);
        assert_eq!(gets.len(), 1, "rank {rank}");
        assert_eq!(gets[0].field("target"), Some(rank.to_string().as_str()));
        assert_eq!(gets[0].field_u64("remote"), Some(0));
        assert_eq!(gets[0].field_u64("count"), Some(25));
    }
    assert!(out.data_intact());
}

#[test]
fn lockall_reads_all_sources_under_one_epoch() {
    // 4 -> 2 over 8 elements: drain 0 owns [0, 4) which spans sources 0 and
    // 1 (two elements each); sources 2 and 3 are not read.
    let out = run(
        4,
        2,
        Method::RmaLockall,
        Strategy::Blocking,
        8,
        &AppConfig::default(),
        &SimConfig::default(),
    );
    let events = rank_events(&out, 0);
    assert_eq!(events_of_kind(&events, EventKind::LockAll).len(), 1);
    assert_eq!(events_of_kind(&events, EventKind::UnlockAll).len(), 1);
    let gets = events_of_kind(&events, EventKind::Get);
    assert_eq!(gets.len(), 2);
    assert_eq!(gets[0].field("target"), Some("0"));
    assert_eq!(gets[0].field_u64("count"), Some(2));
    assert_eq!(gets[1].field("target"), Some("1"));
    assert_eq!(gets[1].field_u64("count"), Some(2));
    assert_eq!(gets[1].field_u64("remote"), Some(0));
    assert!(out.data_intact());
}

#[test]
fn epoch_counts_match_the_read_plans() {
    let app = AppConfig::default();
    let sim = SimConfig::default();
    for (ns, nd) in [(4usize, 2usize), (2, 4), (3, 7)] {
        let sources = block_partition(ns, 64).unwrap();
        let out = run(ns, nd, Method::RmaLock, Strategy::Blocking, 64, &app, &sim);
        for rank in 0..nd {
            let plan =
                compute_read_plan(block_partition(nd, 64).unwrap()[rank], &sources).unwrap();
            let expected = plan.last_source - plan.first_source;
            let events = rank_events(&out, rank);
            assert_eq!(
                events_of_kind(&events, EventKind::Lock).len(),
                expected,
                "{ns}->{nd} rank {rank}"
            );
            assert_eq!(events_of_kind(&events, EventKind::Unlock).len(), expected);
        }
        let out = run(ns, nd, Method::RmaLockall, Strategy::Blocking, 64, &app, &sim);
        for rank in 0..nd {
            let events = rank_events(&out, rank);
            assert_eq!(events_of_kind(&events, EventKind::LockAll).len(), 1);
        }
    }
}

fn first_phase(events: &[TraceEvent]) -> Option<String> {
    events_of_kind(events, EventKind::Phase)
        .first()
        .and_then(|e| e.field("phase").map(str::to_string))
}

fn phase_names(events: &[TraceEvent]) -> Vec<String> {
    events_of_kind(events, EventKind::Phase)
        .iter()
        .filter_map(|e| e.field("phase").map(str::to_string))
        .collect()
}

#[test]
fn wait_drains_roles_walk_their_paths() {
    // Shrink: ranks 2..3 are source-only, they signal the barrier at init.
    let out = run(
        4,
        2,
        Method::RmaLockall,
        Strategy::WaitDrains,
        64,
        &AppConfig::default(),
        &SimConfig::default(),
    );
    let source_only = rank_events(&out, 3);
    assert_eq!(first_phase(&source_only).as_deref(), Some("barrier_signaled"));
    let phases = phase_names(&source_only);
    assert_eq!(phases.last().map(String::as_str), Some("done"));
    assert!(phases.contains(&"freeing".to_string()));
    // A source-only rank signals the barrier exactly once, at init.
    assert_eq!(events_of_kind(&source_only, EventKind::Ibarrier).len(), 1);

    let both = rank_events(&out, 0);
    assert_eq!(first_phase(&both).as_deref(), Some("await_own_reads"));
    let phases = phase_names(&both);
    let pos = |name: &str| phases.iter().position(|p| p == name);
    assert!(pos("await_own_reads") < pos("barrier_signaled"));
    assert!(pos("barrier_signaled") < pos("unlocking"));
    assert!(pos("unlocking") < pos("freeing"));
    assert!(pos("freeing") < pos("done"));
    // Reads go through request-returning gets on ranks that keep computing.
    assert!(!events_of_kind(&both, EventKind::Rget).is_empty());

    // Growth: spawned ranks are drain-only and read with blocking gets.
    let out = run(
        2,
        4,
        Method::RmaLock,
        Strategy::WaitDrains,
        64,
        &AppConfig::default(),
        &SimConfig::default(),
    );
    let drain_only = rank_events(&out, 2);
    assert_eq!(first_phase(&drain_only).as_deref(), Some("reading"));
    assert!(!events_of_kind(&drain_only, EventKind::Get).is_empty());
    assert!(events_of_kind(&drain_only, EventKind::Rget).is_empty());
    // Drain-only ranks block on the barrier rather than polling it.
    assert_eq!(events_of_kind(&drain_only, EventKind::Wait).len(), 1);
    assert!(out.data_intact());
}

#[test]
fn wait_drains_overlaps_at_least_one_iteration_per_source() {
    let out = run(
        2,
        4,
        Method::RmaLockall,
        Strategy::WaitDrains,
        1000,
        &AppConfig::default(),
        &SimConfig::default(),
    );
    for rank in 0..2 {
        let events = rank_events(&out, rank);
        let during = events
            .iter()
            .filter(|e| e.kind == EventKind::Compute && e.field("phase") == Some("during"))
            .count();
        assert!(during >= 1, "rank {rank} overlapped no iterations");
    }
    assert!(out.record.n_it_overlapped >= 1);
}

#[test]
fn source_only_ranks_never_block_while_polling() {
    let out = run(
        4,
        2,
        Method::RmaLock,
        Strategy::WaitDrains,
        64,
        &AppConfig::default(),
        &SimConfig::default(),
    );
    for rank in 2..4 {
        let events = rank_events(&out, rank);
        let init_done = events
            .iter()
            .find(|e| e.kind == EventKind::RedistInitDone)
            .map(|e| e.time)
            .unwrap();
        let done = events
            .iter()
            .find(|e| e.kind == EventKind::RedistDone)
            .map(|e| e.time)
            .unwrap();
        for event in events
            .iter()
            .filter(|e| e.time > init_done && e.time < done)
        {
            assert!(
                matches!(
                    event.kind,
                    EventKind::Compute
                        | EventKind::Test
                        | EventKind::AppSync
                        | EventKind::Phase
                        | EventKind::WinFree
                ),
                "rank {rank} ran a blocking primitive mid-poll: {:?} at {}",
                event.kind,
                event.time
            );
        }
    }
}

#[test]
fn blocking_collective_identity_costs_exactly_one_exchange() {
    // 4 -> 4 over 1000 elements: every rank receives its own 250-element
    // block; the collective costs one message latency plus 250 elements at
    // the configured bandwidth, and nothing else.
    let sim = SimConfig::default();
    let out = run(
        4,
        4,
        Method::Col,
        Strategy::Blocking,
        1000,
        &AppConfig::default(),
        &sim,
    );
    let expected_ns = 100_000 + 2_500; // 1e-4 s + 250 / 1e8 s
    assert_eq!(out.record.t_redis, expected_ns as f64 / 1e9);
    assert_eq!(out.record.n_it_overlapped, 0);
}

#[test]
fn threading_slows_iterations_by_the_oversubscription_factor() {
    let out = run(
        4,
        2,
        Method::Col,
        Strategy::Threading,
        1000,
        &AppConfig::default(),
        &SimConfig::default(),
    );
    let base = AppConfig::default().base_iteration_time(4);
    for rank in 0..4 {
        let events = rank_events(&out, rank);
        let during: Vec<TraceEvent> = events
            .iter()
            .filter(|e| e.kind == EventKind::Compute && e.field("phase") == Some("during"))
            .cloned()
            .collect();
        assert!(!during.is_empty(), "rank {rank}");
        for event in during {
            assert_eq!(event.field("factor"), Some("20"));
            assert_eq!(event.field_u64("dur_ns"), Some(base.as_nanos() * 20));
        }
    }
    assert_eq!(out.record.omega(), 20.0);
}

#[test]
fn nonblocking_collective_overlaps_and_preserves_data() {
    let out = run(
        2,
        4,
        Method::Col,
        Strategy::Nonblocking,
        1000,
        &AppConfig::default(),
        &SimConfig::default(),
    );
    assert!(out.data_intact());
    assert!(out.record.n_it_overlapped >= 1);
    // Drain-only ranks block on the exchange instead of polling it.
    let drain_only = rank_events(&out, 3);
    assert_eq!(events_of_kind(&drain_only, EventKind::Wait).len(), 1);
}

#[test]
fn spawned_ranks_appear_after_the_spawn_latency() {
    let out = run(
        2,
        4,
        Method::RmaLockall,
        Strategy::Blocking,
        64,
        &AppConfig::default(),
        &SimConfig::default(),
    );
    let spawn_at = VTime::from_secs_f64(SimConfig::default().cost.spawn_latency);
    for rank in 2..4 {
        let events = rank_events(&out, rank);
        assert_eq!(events[0].kind, EventKind::Spawn);
        assert_eq!(events[0].time, spawn_at);
        assert!(events.iter().all(|e| e.time >= spawn_at));
    }
}

#[test]
fn identical_config_and_seed_reproduce_the_run() {
    let make = || {
        run(
            4,
            2,
            Method::RmaLock,
            Strategy::WaitDrains,
            1000,
            &AppConfig::default(),
            &SimConfig {
                seed: 99,
                ..SimConfig::default()
            },
        )
    };
    let a = make();
    let b = make();
    assert_eq!(a.record, b.record);
    assert_eq!(a.trace.export_text(), b.trace.export_text());
    assert_eq!(a.trace.hash_hex(), b.trace.hash_hex());
}

#[test]
fn config_errors_are_rejected_up_front() {
    let app = AppConfig::default();
    let sim = SimConfig::default();
    let err = run_reconfiguration(
        2,
        4,
        Method::RmaLock,
        Strategy::Nonblocking,
        &DataDescriptor::constant(64),
        &app,
        &sim,
    )
    .unwrap_err();
    assert!(matches!(err, RunError::Config(_)), "{err}");

    let variable = DataDescriptor {
        len: 64,
        category: DataCategory::Variable,
        element_width: 8,
    };
    let err = run_reconfiguration(2, 4, Method::Col, Strategy::WaitDrains, &variable, &app, &sim)
        .unwrap_err();
    assert!(matches!(err, RunError::Config(_)), "{err}");
    // Blocking transfers of variable data stay legal.
    run_reconfiguration(2, 4, Method::Col, Strategy::Blocking, &variable, &app, &sim).unwrap();

    let err = run_reconfiguration(
        0,
        4,
        Method::Col,
        Strategy::Blocking,
        &DataDescriptor::constant(64),
        &app,
        &sim,
    )
    .unwrap_err();
    assert!(matches!(err, RunError::Topology(_)));
}

#[test]
fn both_rank_computes_once_per_read_poll() {
    // Identity 1 -> 1: the single rank reads its whole block from itself.
    // The transfer is tuned to land at 2.5 iteration-lengths, so the rank
    // computes exactly three times before it signals the barrier.
    let app = AppConfig {
        work_per_iteration: 0.01,
        sync_every: 1000,
        total_iterations: 4,
        reconfig_at_iteration: 1,
    };
    let sim = SimConfig {
        cost: CostModel {
            window_create_latency: 0.1,
            lock_latency: 0.0,
            per_message_latency: 0.024,
            bandwidth: 1e6,
            barrier_latency: 1e-4,
            spawn_latency: 0.0,
            oversubscription_factor: 20.0,
            test_poll_cost: 0.0,
        },
        ..SimConfig::default()
    };
    let out = run(1, 1, Method::RmaLockall, Strategy::WaitDrains, 1000, &app, &sim);
    let events = rank_events(&out, 0);
    let barrier_at = events
        .iter()
        .find(|e| e.kind == EventKind::Ibarrier)
        .map(|e| e.time)
        .unwrap();
    let computes_before_signal = events
        .iter()
        .filter(|e| {
            e.kind == EventKind::Compute
                && e.field("phase") == Some("during")
                && e.time <= barrier_at
        })
        .count();
    assert_eq!(computes_before_signal, 3);
    assert!(out.data_intact());
}

#[test]
fn blocked_collectives_wait_for_the_background_stream() {
    // With the quirk flag on, the application's sync collective stalls until
    // the auxiliary stream finishes its redistribution.
    let app = AppConfig {
        sync_every: 1,
        ..AppConfig::default()
    };
    let sim = SimConfig {
        collective_blocks_background: true,
        ..SimConfig::default()
    };
    let out = run(2, 4, Method::RmaLockall, Strategy::Threading, 1000, &app, &sim);
    let events = rank_events(&out, 0);
    let aux_free = events
        .iter()
        .find(|e| e.stream == StreamKind::Aux && e.kind == EventKind::WinFree)
        .map(|e| e.time)
        .unwrap();
    let redist_start = events
        .iter()
        .find(|e| e.kind == EventKind::RedistStart)
        .map(|e| e.time)
        .unwrap();
    let first_sync = events
        .iter()
        .find(|e| e.kind == EventKind::AppSync && e.time > redist_start)
        .map(|e| e.time)
        .unwrap();
    assert_eq!(first_sync, aux_free + VTime::from_secs_f64(1e-4));
    // The stall makes the main stream observe completion right away.
    assert_eq!(out.record.n_it_overlapped, 1);

    // Without the flag the sync costs only its latency and more iterations
    // overlap.
    let out = run(
        2,
        4,
        Method::RmaLockall,
        Strategy::Threading,
        1000,
        &app,
        &SimConfig::default(),
    );
    assert!(out.record.n_it_overlapped > 1);
}

/// Drives the wait-drains state machine directly, with the barrier already
/// satisfied by the peer before the source-only rank first polls.
struct SourceOnlyHarness {
    machine: WaitDrainsRma,
    engine: IterationEngine,
    iteration: VTime,
}

impl Program for SourceOnlyHarness {
    fn step(&mut self, ctx: &mut Ctx<'_>) -> Result<StepStatus, SimError> {
        if self.machine.phase() == Phase::Init {
            let _ = self.machine.init_rma(ctx)?;
            return Ok(StepStatus::Yield);
        }
        match self
            .machine
            .complete_rma_step(ctx, &mut self.engine, self.iteration)?
        {
            Poll::Ready(()) => Ok(StepStatus::Finished),
            Poll::Pending => Ok(StepStatus::Yield),
        }
    }
}

/// Counterpart rank: creates the window, joins the barrier at once, waits,
/// frees.
struct PeerHarness {
    win: malleasim_core::simcore::WinId,
    bar: malleasim_core::simcore::BarrierId,
    req: Option<malleasim_core::simcore::ReqId>,
    freed: bool,
}

impl Program for PeerHarness {
    fn step(&mut self, ctx: &mut Ctx<'_>) -> Result<StepStatus, SimError> {
        if self.req.is_none() {
            if ctx.win_create(self.win, Expose::Data)?.is_pending() {
                return Ok(StepStatus::Yield);
            }
            self.req = Some(ctx.ibarrier(self.bar)?);
            return Ok(StepStatus::Yield);
        }
        if !self.freed {
            if ctx.wait(self.req.unwrap())?.is_pending() {
                return Ok(StepStatus::Yield);
            }
            self.freed = true;
        }
        match ctx.win_free(self.win)? {
            Poll::Pending => Ok(StepStatus::Yield),
            Poll::Ready(()) => Ok(StepStatus::Finished),
        }
    }
}

#[test]
fn source_only_with_completed_barrier_frees_after_one_test() {
    // The peer joins the barrier immediately after window creation, so the
    // barrier completes long before the source-only rank's first poll (its
    // iteration is one full second). One test, then straight to freeing.
    let mut runtime = Runtime::new(SimConfig::default()).unwrap();
    runtime.add_rank(0, vec![1, 2, 3], 0);
    runtime.add_rank(1, vec![4, 5], 0);
    let win = runtime.alloc_window(vec![0, 1]);
    let bar = runtime.alloc_barrier(vec![0, 1]);
    let app = AppConfig {
        work_per_iteration: 1.0,
        ..AppConfig::default()
    };
    runtime.add_stream(
        0,
        StreamKind::Main,
        Box::new(PeerHarness {
            win,
            bar,
            req: None,
            freed: false,
        }),
        StreamStart::At(VTime::ZERO),
    );
    runtime.add_stream(
        1,
        StreamKind::Main,
        Box::new(SourceOnlyHarness {
            machine: WaitDrainsRma::new(
                Method::RmaLockall,
                Role::SourceOnly,
                win,
                bar,
                Expose::Data,
                Vec::new(),
            ),
            engine: IterationEngine::new(&app),
            iteration: app.base_iteration_time(1),
        }),
        StreamStart::At(VTime::ZERO),
    );
    runtime.run().unwrap();
    let events: Vec<TraceEvent> = runtime.trace().rank_events(1).cloned().collect();
    let tests = events_of_kind(&events, EventKind::Test);
    assert_eq!(tests.len(), 1);
    assert_eq!(tests[0].field("result"), Some("true"));
    let phases = phase_names(&events);
    assert!(!phases.contains(&"await_barrier".to_string()));
    assert_eq!(phases.last().map(String::as_str), Some("done"));
}

#[test]
fn stepping_a_finished_redistribution_is_an_error() {
    struct OverStepper {
        machine: WaitDrainsRma,
        engine: IterationEngine,
        done_once: bool,
    }
    impl Program for OverStepper {
        fn step(&mut self, ctx: &mut Ctx<'_>) -> Result<StepStatus, SimError> {
            let base = VTime::from_nanos(1_000_000);
            if self.machine.phase() == Phase::Init {
                let _ = self.machine.init_rma(ctx)?;
                return Ok(StepStatus::Yield);
            }
            if !self.done_once {
                if self
                    .machine
                    .complete_rma_step(ctx, &mut self.engine, base)?
                    .is_ready()
                {
                    self.done_once = true;
                }
                return Ok(StepStatus::Yield);
            }
            // One step too many.
            self.machine.complete_rma_step(ctx, &mut self.engine, base)?;
            unreachable!("the extra step must fail");
        }
    }
    let mut runtime = Runtime::new(SimConfig::default()).unwrap();
    runtime.add_rank(0, vec![1, 2], 2);
    let win = runtime.alloc_window(vec![0]);
    let bar = runtime.alloc_barrier(vec![0]);
    let reads = compute_read_plan(
        block_partition(1, 2).unwrap()[0],
        &block_partition(1, 2).unwrap(),
    )
    .unwrap()
    .reads();
    runtime.add_stream(
        0,
        StreamKind::Main,
        Box::new(OverStepper {
            machine: WaitDrainsRma::new(
                Method::RmaLockall,
                Role::Both,
                win,
                bar,
                Expose::Data,
                reads,
            ),
            engine: IterationEngine::new(&AppConfig::default()),
            done_once: false,
        }),
        StreamStart::At(VTime::ZERO),
    );
    let err = runtime.run().unwrap_err();
    assert!(err.to_string().contains("completed redistribution"), "{err}");
}
