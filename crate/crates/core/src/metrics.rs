//! Measurements per run and their aggregation across repeats.
//!
//! A [`RunRecord`] captures one reconfiguration: how long the redistribution
//! took, how iteration cost changed while it ran in the background, and how
//! many iterations overlapped it. [`summarize`] groups repeated runs by
//! experiment, takes medians, and fills the blocking-versus-background
//! comparison columns: a blocking variant is charged the iterations the best
//! background variant completed for free, at the post-resize iteration time,
//! while a background variant's total is its redistribution span alone.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::redist::{Method, Strategy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Measurements of a single reconfiguration run. Times are in seconds of
/// virtual time.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub strategy: Strategy,
    pub ns: usize,
    pub nd: usize,
    /// First redistribution event to last rank finishing it, global clock.
    pub t_redis: f64,
    /// Iteration time without any reconfiguration underway.
    pub t_it_normal: f64,
    /// Mean iteration time of iterations overlapping the redistribution;
    /// equals `t_it_normal` when nothing overlapped.
    pub t_it_during: f64,
    /// Most iterations any rank completed inside the redistribution window.
    pub n_it_overlapped: u64,
    /// Iteration time on the post-resize group.
    pub t_it_nd: f64,
    /// Hash of the exported event trace.
    pub trace_hash: String,
}

impl RunRecord {
    /// Iteration-cost ratio of this run.
    pub fn omega(&self) -> f64 {
        omega(self.t_it_during, self.t_it_normal).expect("record holds a positive baseline")
    }
}

/// Ratio between iteration time during background redistribution and the
/// undisturbed iteration time; 1 means no interference.
pub fn omega(t_it_during: f64, t_it_normal: f64) -> Result<f64, MetricsError> {
    if !t_it_normal.is_finite() || t_it_normal <= 0.0 {
        return Err(MetricsError::InvalidArgument(format!(
            "baseline iteration time must be positive, got {t_it_normal}"
        )));
    }
    if !t_it_during.is_finite() || t_it_during < 0.0 {
        return Err(MetricsError::InvalidArgument(format!(
            "iteration time during redistribution must be non-negative, got {t_it_during}"
        )));
    }
    Ok(t_it_during / t_it_normal)
}

/// Total cost of a blocking redistribution once it is charged the iterations
/// a background variant would have completed meanwhile: the redistribution
/// span plus `min_n_it` iterations at the post-resize iteration time.
pub fn total_time_blocking(
    t_redis_bl: f64,
    t_it_nd: f64,
    min_n_it: f64,
) -> Result<f64, MetricsError> {
    for (name, v) in [
        ("t_redis_bl", t_redis_bl),
        ("t_it_nd", t_it_nd),
        ("min_n_it", min_n_it),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(MetricsError::InvalidArgument(format!(
                "{name} must be non-negative, got {v}"
            )));
        }
    }
    Ok(t_redis_bl + t_it_nd * min_n_it)
}

/// Total cost of a background redistribution: the redistribution span itself,
/// since the application keeps progressing through it.
pub fn total_time_background(t_redis_bc: f64) -> Result<f64, MetricsError> {
    if !t_redis_bc.is_finite() || t_redis_bc < 0.0 {
        return Err(MetricsError::InvalidArgument(format!(
            "t_redis_bc must be non-negative, got {t_redis_bc}"
        )));
    }
    Ok(t_redis_bc)
}

/// Median; an even count averages the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("metrics values are comparable"));
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, Default)]
pub struct SummaryOptions {
    /// Include the one-sided threading variants when taking the minimum
    /// overlapped-iteration count; they are excluded by default because
    /// their iteration cost makes the comparison meaningless.
    pub include_threading_in_min: bool,
}

/// One aggregated row: medians over the repeats of a single experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub strategy: Strategy,
    pub ns: usize,
    pub nd: usize,
    pub t_redis: f64,
    pub omega: f64,
    pub n_it: f64,
    /// Filled for blocking rows only.
    pub t_total_bl: Option<f64>,
    /// Filled for background rows; one-sided threading rows stay empty
    /// unless explicitly included.
    pub t_total_bc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// CSV with the fixed column schema; absent values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,strategy,ns,nd,t_redis,omega,n_it,t_total_bl,t_total_bc\n");
        for row in &self.rows {
            let bl = row.t_total_bl.map(|v| v.to_string()).unwrap_or_default();
            let bc = row.t_total_bc.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.method, row.strategy, row.ns, row.nd, row.t_redis, row.omega, row.n_it, bl, bc
            ));
        }
        out
    }
}

fn excluded_from_min(method: Method, strategy: Strategy, options: &SummaryOptions) -> bool {
    !options.include_threading_in_min && method.is_rma() && strategy == Strategy::Threading
}

/// Groups records by (method, strategy, ns, nd), takes medians, and fills
/// the comparison columns. Groups absent from the input simply produce no
/// row. The minimum overlapped-iteration count is taken per (ns, nd) across
/// the background variants present.
pub fn summarize(records: &[RunRecord], options: &SummaryOptions) -> Report {
    let mut groups: BTreeMap<(Method, Strategy, usize, usize), Vec<&RunRecord>> = BTreeMap::new();
    for record in records {
        groups
            .entry((record.method, record.strategy, record.ns, record.nd))
            .or_default()
            .push(record);
    }

    struct GroupStats {
        t_redis: f64,
        omega: f64,
        n_it: f64,
        t_it_nd: f64,
    }
    let stats: BTreeMap<(Method, Strategy, usize, usize), GroupStats> = groups
        .iter()
        .map(|(key, rs)| {
            let pick = |f: &dyn Fn(&RunRecord) -> f64| {
                let values: Vec<f64> = rs.iter().map(|r| f(r)).collect();
                median(&values).expect("group is non-empty")
            };
            (
                *key,
                GroupStats {
                    t_redis: pick(&|r| r.t_redis),
                    omega: pick(&|r| r.omega()),
                    n_it: pick(&|r| r.n_it_overlapped as f64),
                    t_it_nd: pick(&|r| r.t_it_nd),
                },
            )
        })
        .collect();

    // Per (ns, nd): minimum median overlapped-iteration count among the
    // background variants considered.
    let mut min_n_it: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for ((method, strategy, ns, nd), s) in &stats {
        if !strategy.is_background() || excluded_from_min(*method, *strategy, options) {
            continue;
        }
        min_n_it
            .entry((*ns, *nd))
            .and_modify(|m| *m = m.min(s.n_it))
            .or_insert(s.n_it);
    }

    let rows = stats
        .iter()
        .map(|((method, strategy, ns, nd), s)| {
            let (t_total_bl, t_total_bc) = if strategy.is_background() {
                let bc = (!excluded_from_min(*method, *strategy, options))
                    .then(|| total_time_background(s.t_redis).expect("non-negative medians"));
                (None, bc)
            } else {
                let min = min_n_it.get(&(*ns, *nd)).copied().unwrap_or(0.0);
                let bl = total_time_blocking(s.t_redis, s.t_it_nd, min)
                    .expect("non-negative medians");
                (Some(bl), None)
            };
            ReportRow {
                method: *method,
                strategy: *strategy,
                ns: *ns,
                nd: *nd,
                t_redis: s.t_redis,
                omega: s.omega,
                n_it: s.n_it,
                t_total_bl,
                t_total_bc,
            }
        })
        .collect();
    Report { rows }
}
