//! Deterministic virtual-time runtime: primitives, costs, trace.

mod cost;
mod error;
mod runtime;
mod time;
mod trace;

pub use cost::CostModel;
pub use error::{ProtocolKind, SimError};
pub use runtime::{
    BarrierId, CollId, Ctx, Expose, Program, ReqId, Runtime, SimConfig, StepStatus, StreamKind,
    StreamStart, WinId, XferPlan,
};
pub use time::VTime;
pub use trace::{EventKind, Trace, TraceEvent};
