//! Orchestration of one reconfiguration run.
//!
//! Builds the runtime for an `ns -> nd` resize, wires each rank's program for
//! the chosen method and strategy, runs the kernel, and distills the event
//! trace into a [`RunRecord`].

use thiserror::Error;

use crate::app::{AppConfig, IterationEngine};
use crate::blockdist::{block_partition, compute_read_plan, compute_send_plan, PlanError};
use crate::metrics::RunRecord;
use crate::simcore::{
    EventKind, Expose, Runtime, SimConfig, SimError, StreamKind, StreamStart, Trace, VTime,
    XferPlan,
};
use crate::topology::{merge_roles, ReconfigPlan, TopologyError};

use super::programs::{
    AuxProgram, BlockingCol, BlockingRma, ColBackground, RankProgram, RedistKernel, RedistPart,
    ThreadingMain,
};
use super::state::WaitDrainsRma;
use super::{ConfigError, DataCategory, DataDescriptor, Method, Strategy};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub trace: Trace,
    /// Post-resize buffer of each drain rank, in rank order.
    pub drain_data: Vec<Vec<u64>>,
    /// The full pre-resize array, for integrity checks.
    pub source_data: Vec<u64>,
}

impl RunOutput {
    /// True when the drains' buffers, concatenated in rank order, reproduce
    /// the original array bit for bit.
    pub fn data_intact(&self) -> bool {
        let gathered: Vec<u64> = self.drain_data.iter().flatten().copied().collect();
        gathered == self.source_data
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic payload for the array being redistributed.
pub fn payload(seed: u64, len: usize) -> Vec<u64> {
    let mut state = seed;
    (0..len).map(|_| splitmix64(&mut state)).collect()
}

/// Stable per-run seed derivation for experiment matrices.
pub fn derive_seed(seed: u64, run_index: u64) -> u64 {
    let mut state = seed ^ run_index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    splitmix64(&mut state)
}

/// Runs one full reconfiguration: spawn of the new ranks, data
/// redistribution with the chosen method and strategy, and resumption of the
/// application on the resized group.
pub fn run_reconfiguration(
    ns: usize,
    nd: usize,
    method: Method,
    strategy: Strategy,
    data: &DataDescriptor,
    app: &AppConfig,
    sim: &SimConfig,
) -> Result<RunOutput, RunError> {
    if !super::strategy_eligible(method, strategy) {
        return Err(ConfigError::IneligibleStrategy { method, strategy }.into());
    }
    if data.category == DataCategory::Variable && strategy != Strategy::Blocking {
        return Err(ConfigError::VariableDataNeedsBlocking { strategy }.into());
    }
    app.validate().map_err(ConfigError::Invalid)?;
    let plan = merge_roles(ns, nd)?;
    let total = plan.total_ranks();

    let source_partition = block_partition(ns, data.len)?;
    let drain_partition = block_partition(nd, data.len)?;
    let global = payload(sim.seed, data.len);

    let mut runtime = Runtime::new(sim.clone())?;
    let spawn_at = VTime::from_secs_f64(sim.cost.spawn_latency);

    for rank in 0..total {
        let role = plan.role(rank);
        let old = if role.is_source() {
            let range = source_partition[rank];
            global[range.ini..range.end].to_vec()
        } else {
            Vec::new()
        };
        let new_len = if role.is_drain() {
            drain_partition[rank].len()
        } else {
            0
        };
        runtime.add_rank(rank, old, new_len);
    }

    let all_ranks: Vec<usize> = (0..total).collect();
    let win = method
        .is_rma()
        .then(|| runtime.alloc_window(all_ranks.clone()));
    let coll = (method == Method::Col).then(|| runtime.alloc_collective(all_ranks.clone()));
    let bar = (strategy == Strategy::WaitDrains).then(|| runtime.alloc_barrier(all_ranks.clone()));

    let iterations_before = app.reconfig_at_iteration;
    let iterations_after = app.total_iterations - app.reconfig_at_iteration;
    let base_before = app.base_iteration_time(ns);
    let base_after = app.base_iteration_time(nd);

    for rank in 0..total {
        let role = plan.role(rank);
        let expose = if role.is_source() {
            Expose::Data
        } else {
            Expose::Empty
        };
        let reads = if role.is_drain() {
            compute_read_plan(drain_partition[rank], &source_partition)?.reads()
        } else {
            Vec::new()
        };
        let xfer = if method == Method::Col {
            Some(build_xfer_plan(rank, &plan, data.len)?)
        } else {
            None
        };

        let kernel = || -> RedistKernel {
            match method {
                Method::Col => RedistKernel::Col(BlockingCol::new(
                    coll.unwrap(),
                    xfer.clone().unwrap(),
                )),
                Method::RmaLock | Method::RmaLockall => RedistKernel::Rma(BlockingRma::new(
                    method,
                    win.unwrap(),
                    expose,
                    reads.clone(),
                )),
            }
        };

        let mut aux = None;
        let part = match strategy {
            Strategy::Blocking => RedistPart::Blocking(kernel()),
            Strategy::Threading => {
                if role.is_source() {
                    aux = Some(AuxProgram::new(kernel()));
                    RedistPart::ThreadingMain(ThreadingMain::new())
                } else {
                    // Spawned ranks have no application to overlap; they run
                    // the blocking protocol directly.
                    RedistPart::Blocking(kernel())
                }
            }
            Strategy::Nonblocking | Strategy::WaitDrains => match method {
                Method::Col => RedistPart::ColBackground(ColBackground::new(
                    coll.unwrap(),
                    xfer.unwrap(),
                    bar,
                    role.is_source(),
                )),
                Method::RmaLock | Method::RmaLockall => {
                    RedistPart::WaitDrains(Box::new(WaitDrainsRma::new(
                        method,
                        role,
                        win.unwrap(),
                        bar.expect("wait drains allocates a barrier"),
                        expose,
                        reads.clone(),
                    )))
                }
            },
        };

        let spawned = rank >= ns;
        let program = RankProgram::new(
            part,
            IterationEngine::new(app),
            if role.is_source() { iterations_before } else { 0 },
            if role.is_drain() { iterations_after } else { 0 },
            base_before,
            base_after,
            spawned,
        );
        let start = if spawned {
            StreamStart::At(spawn_at)
        } else {
            StreamStart::At(VTime::ZERO)
        };
        runtime.add_stream(rank, StreamKind::Main, Box::new(program), start);
        if let Some(aux_program) = aux {
            runtime.add_stream(rank, StreamKind::Aux, Box::new(aux_program), StreamStart::OnSignal);
        }
    }

    runtime.run()?;

    let record = extract_record(
        runtime.trace(),
        method,
        strategy,
        &plan,
        app,
    );
    let drain_data: Vec<Vec<u64>> = plan
        .drain_ranks()
        .map(|r| runtime.rank_new_data(r).to_vec())
        .collect();
    Ok(RunOutput {
        record,
        trace: runtime.trace().clone(),
        drain_data,
        source_data: global,
    })
}

/// Assembles a rank's all-to-all halves over the full participant set.
fn build_xfer_plan(rank: usize, plan: &ReconfigPlan, len: usize) -> Result<XferPlan, PlanError> {
    let total = plan.total_ranks();
    let ns = plan.ns();
    let nd = plan.nd();
    let mut xfer = XferPlan {
        send_counts: vec![0; total],
        send_offsets: vec![0; total],
        recv_counts: vec![0; total],
        recv_displs: vec![0; total],
    };
    if plan.role(rank).is_source() {
        let send = compute_send_plan(
            block_partition(ns, len)?[rank],
            &block_partition(nd, len)?,
        )?;
        xfer.send_counts[..nd].copy_from_slice(&send.counts);
        xfer.send_offsets[..nd].copy_from_slice(&send.offsets);
    }
    if plan.role(rank).is_drain() {
        let read = compute_read_plan(
            block_partition(nd, len)?[rank],
            &block_partition(ns, len)?,
        )?;
        xfer.recv_counts[..ns].copy_from_slice(&read.counts);
        xfer.recv_displs[..ns].copy_from_slice(&read.displs[..ns]);
    }
    Ok(xfer)
}

/// Distills the trace into the per-run measurements.
fn extract_record(
    trace: &Trace,
    method: Method,
    strategy: Strategy,
    plan: &ReconfigPlan,
    app: &AppConfig,
) -> RunRecord {
    let mut redist_start: Option<VTime> = None;
    let mut redist_done: Option<VTime> = None;
    let mut before_durations: Vec<u64> = Vec::new();
    let mut after_durations: Vec<u64> = Vec::new();
    let mut during_durations: Vec<u64> = Vec::new();
    let mut during_counts = vec![0u64; plan.total_ranks()];

    for event in trace.events() {
        match event.kind {
            EventKind::RedistStart => {
                redist_start = Some(redist_start.map_or(event.time, |t| t.min(event.time)));
            }
            EventKind::RedistDone => {
                redist_done = Some(redist_done.map_or(event.time, |t| t.max(event.time)));
            }
            EventKind::Compute if event.stream == StreamKind::Main => {
                let dur = event.field_u64("dur_ns").unwrap_or(0);
                match event.field("phase") {
                    Some("before") if event.rank == 0 => before_durations.push(dur),
                    Some("after") if event.rank == 0 => after_durations.push(dur),
                    Some("during") => {
                        during_durations.push(dur);
                        during_counts[event.rank] += 1;
                    }
                    _ => {}
                }
            }
            _ => {}
        }
    }

    let mean_secs = |durs: &[u64]| -> Option<f64> {
        if durs.is_empty() {
            None
        } else {
            Some(durs.iter().map(|d| *d as f64).sum::<f64>() / durs.len() as f64 / 1e9)
        }
    };
    let t_it_normal =
        mean_secs(&before_durations).unwrap_or_else(|| app.base_iteration_time(plan.ns()).as_secs_f64());
    let t_it_nd =
        mean_secs(&after_durations).unwrap_or_else(|| app.base_iteration_time(plan.nd()).as_secs_f64());
    let t_it_during = mean_secs(&during_durations).unwrap_or(t_it_normal);
    let t_redis = match (redist_start, redist_done) {
        (Some(start), Some(done)) => (done - start).as_secs_f64(),
        _ => 0.0,
    };

    RunRecord {
        method,
        strategy,
        ns: plan.ns(),
        nd: plan.nd(),
        t_redis,
        t_it_normal,
        t_it_during,
        n_it_overlapped: during_counts.iter().copied().max().unwrap_or(0),
        t_it_nd,
        trace_hash: trace.hash_hex(),
    }
}
