//! Virtual-time cost parameters for the simulated primitives.

use super::time::VTime;

/// Latencies and bandwidth charged for each primitive, in seconds and
/// elements per second.
///
/// The defaults are calibrated so that, at desk scale, window creation
/// dominates the one-sided methods (it is a collective that must also absorb
/// the spawn of new ranks), transfers are cheap relative to an application
/// iteration, and an oversubscribed rank computes twenty times slower. Under
/// those defaults a wait-drains redistribution overlaps about two iterations
/// and a threading one at least as many.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    /// Collective window setup; every participant resumes this long after the
    /// last one arrives.
    pub window_create_latency: f64,
    /// Opening an epoch (`lock` per target, `lock_all` once).
    pub lock_latency: f64,
    /// Fixed startup charge per transfer.
    pub per_message_latency: f64,
    /// Transfer throughput, elements per second.
    pub bandwidth: f64,
    /// Charged on top of the last arrival of a barrier.
    pub barrier_latency: f64,
    /// Delay before a spawned rank starts executing.
    pub spawn_latency: f64,
    /// Compute slowdown while a rank runs two streams on one core; 1 means
    /// no oversubscription.
    pub oversubscription_factor: f64,
    /// Cost of one completion test; zero by default.
    pub test_poll_cost: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            window_create_latency: 1.0,
            lock_latency: 1e-4,
            per_message_latency: 1e-4,
            bandwidth: 1e8,
            barrier_latency: 1e-4,
            spawn_latency: 0.1,
            oversubscription_factor: 20.0,
            test_poll_cost: 0.0,
        }
    }
}

impl CostModel {
    /// Checks the documented ranges; returns the offending field name.
    pub fn validate(&self) -> Result<(), String> {
        let non_negative = [
            ("window_create_latency", self.window_create_latency),
            ("lock_latency", self.lock_latency),
            ("per_message_latency", self.per_message_latency),
            ("barrier_latency", self.barrier_latency),
            ("spawn_latency", self.spawn_latency),
            ("test_poll_cost", self.test_poll_cost),
        ];
        for (name, value) in non_negative {
            if !value.is_finite() || value < 0.0 {
                return Err(format!("{name} must be finite and non-negative"));
            }
        }
        if !self.bandwidth.is_finite() || self.bandwidth <= 0.0 {
            return Err("bandwidth must be positive".into());
        }
        if !self.oversubscription_factor.is_finite() || self.oversubscription_factor < 1.0 {
            return Err("oversubscription_factor must be at least 1".into());
        }
        Ok(())
    }
}

/// The same model resolved to integer nanoseconds once, at runtime creation.
#[derive(Debug, Clone)]
pub(crate) struct ResolvedCost {
    pub create: VTime,
    pub lock: VTime,
    pub message: VTime,
    pub barrier: VTime,
    pub poll: VTime,
    pub bandwidth: f64,
    pub oversubscription: f64,
}

impl ResolvedCost {
    pub fn new(model: &CostModel) -> Self {
        ResolvedCost {
            create: VTime::from_secs_f64(model.window_create_latency),
            lock: VTime::from_secs_f64(model.lock_latency),
            message: VTime::from_secs_f64(model.per_message_latency),
            barrier: VTime::from_secs_f64(model.barrier_latency),
            poll: VTime::from_secs_f64(model.test_poll_cost),
            bandwidth: model.bandwidth,
            oversubscription: model.oversubscription_factor,
        }
    }

    /// Service time of one transfer of `count` elements; zero-length
    /// transfers complete immediately and for free.
    pub fn transfer(&self, count: usize) -> VTime {
        if count == 0 {
            VTime::ZERO
        } else {
            self.message + VTime::from_secs_f64(count as f64 / self.bandwidth)
        }
    }
}
