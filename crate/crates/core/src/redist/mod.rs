//! Data-redistribution methods and their execution strategies.
//!
//! Three methods move the data: an all-to-all collective exchange, and two
//! one-sided variants where drains read directly from source windows — one
//! epoch per accessed source (lock/unlock) or a single epoch over all of
//! them (lockall/unlockall). Four strategies decide how the application
//! behaves meanwhile: it can stop (blocking), hand the transfer to an
//! auxiliary stream (threading), poll a non-blocking collective between
//! iterations (non-blocking), or keep computing until a non-blocking barrier
//! confirms every drain finished reading (wait drains).

mod driver;
mod programs;
mod state;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use driver::{derive_seed, payload, run_reconfiguration, RunError, RunOutput};
pub use state::{Phase, WaitDrainsRma};

/// How the data moves from sources to drains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// All-to-all collective exchange.
    Col,
    /// One-sided reads, one lock/unlock epoch per accessed source.
    RmaLock,
    /// One-sided reads under a single lockall/unlockall epoch.
    RmaLockall,
}

impl Method {
    pub fn is_rma(self) -> bool {
        matches!(self, Method::RmaLock | Method::RmaLockall)
    }

    pub const ALL: [Method; 3] = [Method::Col, Method::RmaLock, Method::RmaLockall];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Col => "col",
            Method::RmaLock => "rma-lock",
            Method::RmaLockall => "rma-lockall",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "col" => Ok(Method::Col),
            "rma-lock" => Ok(Method::RmaLock),
            "rma-lockall" => Ok(Method::RmaLockall),
            other => Err(format!(
                "unknown method '{other}' (expected col, rma-lock or rma-lockall)"
            )),
        }
    }
}

/// What the application does while the data moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    Blocking,
    Threading,
    Nonblocking,
    WaitDrains,
}

impl Strategy {
    pub fn is_background(self) -> bool {
        self != Strategy::Blocking
    }

    pub const ALL: [Strategy; 4] = [
        Strategy::Blocking,
        Strategy::Threading,
        Strategy::Nonblocking,
        Strategy::WaitDrains,
    ];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Blocking => "blocking",
            Strategy::Threading => "threading",
            Strategy::Nonblocking => "nonblocking",
            Strategy::WaitDrains => "wait-drains",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blocking" => Ok(Strategy::Blocking),
            "threading" => Ok(Strategy::Threading),
            "nonblocking" => Ok(Strategy::Nonblocking),
            "wait-drains" => Ok(Strategy::WaitDrains),
            other => Err(format!(
                "unknown strategy '{other}' (expected blocking, threading, nonblocking or wait-drains)"
            )),
        }
    }
}

/// The plain non-blocking strategy needs request-returning collectives,
/// which the one-sided methods do not go through; they overlap via threading
/// or wait-drains instead.
pub fn strategy_eligible(method: Method, strategy: Strategy) -> bool {
    match method {
        Method::Col => true,
        Method::RmaLock | Method::RmaLockall => strategy != Strategy::Nonblocking,
    }
}

/// Every eligible (method, strategy) combination, in a stable order.
pub fn eligible_variants() -> Vec<(Method, Strategy)> {
    let mut out = Vec::new();
    for method in Method::ALL {
        for strategy in Strategy::ALL {
            if strategy_eligible(method, strategy) {
                out.push((method, strategy));
            }
        }
    }
    out
}

/// Whether the registered data may change while the application runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataCategory {
    /// Never written during execution; any strategy may move it.
    Constant,
    /// Mutated by the application; only a blocking transfer is safe.
    Variable,
}

/// The one-dimensional structure being redistributed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataDescriptor {
    /// Element count.
    pub len: usize,
    pub category: DataCategory,
    /// Bytes per element; descriptive only, costs are per element.
    pub element_width: usize,
}

impl DataDescriptor {
    pub fn constant(len: usize) -> Self {
        DataDescriptor {
            len,
            category: DataCategory::Constant,
            element_width: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("strategy {strategy} is not eligible for method {method}")]
    IneligibleStrategy { method: Method, strategy: Strategy },
    #[error("variable data requires the blocking strategy, got {strategy}")]
    VariableDataNeedsBlocking { strategy: Strategy },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eligibility_matrix_matches_the_experiment_set() {
        assert!(strategy_eligible(Method::Col, Strategy::Nonblocking));
        assert!(!strategy_eligible(Method::RmaLock, Strategy::Nonblocking));
        assert!(!strategy_eligible(Method::RmaLockall, Strategy::Nonblocking));
        assert!(strategy_eligible(Method::RmaLock, Strategy::WaitDrains));
        assert!(strategy_eligible(Method::RmaLockall, Strategy::Threading));
        assert_eq!(eligible_variants().len(), 10);
    }

    #[test]
    fn names_round_trip() {
        for method in Method::ALL {
            assert_eq!(method.to_string().parse::<Method>().unwrap(), method);
        }
        for strategy in Strategy::ALL {
            assert_eq!(strategy.to_string().parse::<Strategy>().unwrap(), strategy);
        }
        assert!("fancy".parse::<Method>().is_err());
        assert!("eager".parse::<Strategy>().is_err());
    }
}
