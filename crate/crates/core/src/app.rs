//! Synthetic iterative application.
//!
//! Emulates an iterative solver at the level that matters for reconfiguration
//! experiments: a fixed per-iteration compute time that scales inversely with
//! the rank count, plus a periodic global collective modeled as a flat
//! barrier-latency charge. Numerical content is not simulated; data buffers
//! are opaque payloads.

use std::task::Poll;

use crate::simcore::{Ctx, SimError, VTime};

/// Workload parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    /// Aggregate compute per iteration in seconds; a group of `p` ranks needs
    /// `work_per_iteration / p` per iteration (ideal scaling).
    pub work_per_iteration: f64,
    /// Every this-many iterations the ranks join a global collective.
    pub sync_every: u64,
    /// Iterations the whole run executes.
    pub total_iterations: u64,
    /// Iteration index at which the reconfiguration checkpoint fires.
    pub reconfig_at_iteration: u64,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            work_per_iteration: 0.04,
            sync_every: 100,
            total_iterations: 10,
            reconfig_at_iteration: 2,
        }
    }
}

impl AppConfig {
    /// Per-iteration compute time on a group of `p` ranks.
    pub fn base_iteration_time(&self, p: usize) -> VTime {
        VTime::from_secs_f64(self.work_per_iteration / p as f64)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.work_per_iteration.is_finite() || self.work_per_iteration <= 0.0 {
            return Err("work_per_iteration must be positive".into());
        }
        if self.sync_every == 0 {
            return Err("sync_every must be at least 1".into());
        }
        if self.reconfig_at_iteration > self.total_iterations {
            return Err("reconfig_at_iteration cannot exceed total_iterations".into());
        }
        Ok(())
    }
}

/// Duration of one iteration under a compute slowdown.
pub fn iteration_duration(base: VTime, slowdown: f64) -> VTime {
    debug_assert!(slowdown >= 1.0);
    base.scaled(slowdown)
}

/// Drives the iteration sequence of one rank, keeping the global iteration
/// counter and the sync cadence across phase changes.
#[derive(Debug, Clone)]
pub struct IterationEngine {
    sync_every: u64,
    next_iteration: u64,
    awaiting_sync: bool,
}

impl IterationEngine {
    pub fn new(config: &AppConfig) -> Self {
        IterationEngine {
            sync_every: config.sync_every,
            next_iteration: 1,
            awaiting_sync: false,
        }
    }

    /// Iterations fully executed so far.
    pub fn completed(&self) -> u64 {
        self.next_iteration - 1
    }

    /// Runs one iteration: compute scaled by the rank's current slowdown,
    /// then the global collective when the cadence says so. Pending only
    /// when the sync itself blocks (it can, when collectives are configured
    /// to wait for background work); re-entry resumes at the sync.
    pub fn run_one(
        &mut self,
        ctx: &mut Ctx<'_>,
        base: VTime,
        phase: &str,
    ) -> Result<Poll<()>, SimError> {
        if !self.awaiting_sync {
            ctx.compute(base, self.next_iteration, phase);
            if self.next_iteration % self.sync_every == 0 {
                self.awaiting_sync = true;
            } else {
                self.next_iteration += 1;
                return Ok(Poll::Ready(()));
            }
        }
        match ctx.app_sync()? {
            Poll::Pending => Ok(Poll::Pending),
            Poll::Ready(()) => {
                self.awaiting_sync = false;
                self.next_iteration += 1;
                Ok(Poll::Ready(()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::{
        CostModel, Program, Runtime, SimConfig, StepStatus, StreamKind, StreamStart,
    };

    #[test]
    fn iteration_duration_is_base_times_slowdown()  {
        let base = VTime::from_nanos(10_000_000);
        assert_eq!(iteration_duration(base, 1.0), base);
        assert_eq!(
            iteration_duration(base, 20.0),
            VTime::from_nanos(200_000_000)
        );
    }

    #[test]
    fn base_time_scales_inversely_with_ranks() {
        let cfg = AppConfig {
            work_per_iteration: 0.04,
            ..AppConfig::default()
        };
        assert_eq!(cfg.base_iteration_time(2), VTime::from_nanos(20_000_000));
        assert_eq!(cfg.base_iteration_time(16), VTime::from_nanos(2_500_000));
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = AppConfig::default();
        cfg.work_per_iteration = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = AppConfig::default();
        cfg.sync_every = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = AppConfig::default();
        cfg.reconfig_at_iteration = cfg.total_iterations + 1;
        assert!(cfg.validate().is_err());
    }

    struct IterateProgram {
        engine: IterationEngine,
        base: VTime,
        remaining: u64,
    }

    impl Program for IterateProgram {
        fn step(&mut self, ctx: &mut crate::simcore::Ctx<'_>) -> Result<StepStatus, SimError> {
            if self.remaining == 0 {
                return Ok(StepStatus::Finished);
            }
            if self.engine.run_one(ctx, self.base, "before")?.is_ready() {
                self.remaining -= 1;
            }
            Ok(StepStatus::Yield)
        }
    }

    #[test]
    fn total_time_is_iterations_plus_collective_costs() {
        // 7 iterations with a sync every 3rd: two syncs at barrier latency.
        let cfg = AppConfig {
            work_per_iteration: 0.04,
            sync_every: 3,
            total_iterations: 7,
            reconfig_at_iteration: 0,
        };
        let cost = CostModel {
            barrier_latency: 0.25,
            ..CostModel::default()
        };
        let mut runtime = Runtime::new(SimConfig {
            cost,
            ..SimConfig::default()
        })
        .unwrap();
        runtime.add_rank(0, Vec::new(), 0);
        runtime.add_stream(
            0,
            StreamKind::Main,
            Box::new(IterateProgram {
                engine: IterationEngine::new(&cfg),
                base: cfg.base_iteration_time(4),
                remaining: cfg.total_iterations,
            }),
            StreamStart::At(VTime::ZERO),
        );
        runtime.run().unwrap();
        let expected = VTime::from_nanos(7 * 10_000_000 + 2 * 250_000_000);
        assert_eq!(runtime.finish_time(0, StreamKind::Main), Some(expected));
    }
}
