//! Deterministic virtual-time simulation of dynamic reconfiguration for
//! distributed iterative applications.
//!
//! A reconfiguration replaces a group of `NS` source ranks with a group of
//! `ND` drain ranks and moves the application's block-distributed data from
//! the old group to the new one. This crate models that process end to end:
//!
//! - [`topology`] assigns each rank its role (source, drain, or both) under
//!   the merge process-management scheme.
//! - [`blockdist`] computes block ranges and the per-rank transfer plans
//!   (which elements to read from which peer).
//! - [`simcore`] is a deterministic discrete-event runtime providing the
//!   one-sided communication primitives (windows, passive-target locks,
//!   get/rget, non-blocking barriers) plus all-to-all collectives, with full
//!   epoch-discipline checking and a parameterized cost model.
//! - [`redist`] implements the redistribution methods (collective,
//!   lock/unlock, lockall/unlockall) and execution strategies (blocking,
//!   threading, non-blocking, wait-drains) on top of the runtime.
//! - [`app`] is the synthetic iterative workload that overlaps background
//!   redistribution.
//! - [`metrics`] turns run traces into records, iteration-cost ratios and
//!   blocking-vs-background total times, and aggregates repeated runs.
//!
//! Everything runs on virtual time (integer nanoseconds): identical
//! configuration and seed produce identical traces, byte for byte.

pub mod app;
pub mod blockdist;
pub mod metrics;
pub mod redist;
pub mod simcore;
pub mod topology;

pub use app::AppConfig;
pub use blockdist::{block_range, compute_read_plan, compute_send_plan, oracle_plan};
pub use blockdist::{BlockRange, ReadPlan, SendPlan};
pub use metrics::{omega, summarize, total_time_background, total_time_blocking};
pub use metrics::{Report, RunRecord};
pub use redist::{run_reconfiguration, DataDescriptor, Method, RunOutput, Strategy};
pub use simcore::{CostModel, SimConfig, SimError, VTime};
pub use topology::{merge_roles, ReconfigPlan, Role};
