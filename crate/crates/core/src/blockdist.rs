//! Block data distribution and per-rank transfer plans.
//!
//! Application data is a one-dimensional array split into contiguous blocks,
//! one per rank, with the remainder spread over the first ranks. When the
//! group size changes, each drain computes a [`ReadPlan`]: how many elements
//! to pull from each source window and where to write them locally. Sources
//! compute the mirrored [`SendPlan`] used by the all-to-all collective path.
//!
//! [`oracle_plan`] derives the same answer element by element and exists only
//! to validate [`compute_read_plan`]; it deliberately shares no code with it.

use thiserror::Error;

/// Half-open range of element indices owned by one rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRange {
    /// First owned element (inclusive).
    pub ini: usize,
    /// One past the last owned element (exclusive).
    pub end: usize,
}

impl BlockRange {
    pub fn new(ini: usize, end: usize) -> Self {
        Self { ini, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.ini
    }

    pub fn is_empty(&self) -> bool {
        self.ini == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("rank {rank} out of range for group size {p}")]
    RankOutOfRange { rank: usize, p: usize },
    #[error("group must have at least one rank")]
    EmptyGroup,
    #[error("range [{ini}, {end}) is not a valid block range")]
    InvalidRange { ini: usize, end: usize },
    #[error("partition is not contiguous at index {index}")]
    NotContiguous { index: usize },
    #[error("partition has a non-tail empty block at index {index}")]
    NonTailEmptyBlock { index: usize },
    #[error("range [{ini}, {end}) exceeds the partitioned domain [0, {n})")]
    RangeOutOfBounds { ini: usize, end: usize, n: usize },
}

/// Elements owned by `rank` out of `n` split over `p` ranks.
///
/// Remainder-first blocks: the first `n mod p` ranks get one extra element,
/// so block sizes are non-increasing with the rank id.
pub fn block_range(rank: usize, p: usize, n: usize) -> Result<BlockRange, PlanError> {
    if p == 0 {
        return Err(PlanError::EmptyGroup);
    }
    if rank >= p {
        return Err(PlanError::RankOutOfRange { rank, p });
    }
    let base = n / p;
    let rem = n % p;
    let ini = rank * base + rank.min(rem);
    let len = base + usize::from(rank < rem);
    Ok(BlockRange::new(ini, ini + len))
}

/// The full partition of `[0, n)` over `p` ranks.
pub fn block_partition(p: usize, n: usize) -> Result<Vec<BlockRange>, PlanError> {
    (0..p).map(|r| block_range(r, p, n)).collect()
}

/// One read a drain performs: `count` elements from `source`'s window at
/// `remote_offset`, written locally at `local_offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadSegment {
    pub source: usize,
    pub remote_offset: usize,
    pub local_offset: usize,
    pub count: usize,
}

/// Target-side communication parameters for one drain.
///
/// `counts[i]` is the number of elements read from source `i` and `displs`
/// the running prefix of local write offsets (`displs[0] = 0`). Sources with
/// data for this drain are exactly `first_source..last_source`; the read from
/// `first_source` starts at `first_index` inside its window and every later
/// read starts at offset zero, a consequence of the contiguous block scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadPlan {
    pub counts: Vec<usize>,
    pub displs: Vec<usize>,
    pub first_source: usize,
    pub last_source: usize,
    pub first_index: usize,
}

impl ReadPlan {
    /// Total elements this drain receives.
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// The reads as concrete segments, in source order.
    pub fn reads(&self) -> Vec<ReadSegment> {
        let mut out = Vec::new();
        let mut remote = self.first_index;
        for source in self.first_source..self.last_source {
            let count = self.counts[source];
            if count > 0 {
                out.push(ReadSegment {
                    source,
                    remote_offset: remote,
                    local_offset: self.displs[source],
                    count,
                });
            }
            remote = 0;
        }
        out
    }

    fn empty(s_size: usize) -> Self {
        ReadPlan {
            counts: vec![0; s_size],
            displs: vec![0; s_size + 1],
            first_source: 0,
            last_source: 0,
            first_index: 0,
        }
    }
}

/// Source-side mirror of a [`ReadPlan`] for the collective path.
///
/// `counts[j]` elements go to drain `j`, read from this source's block at
/// local offset `offsets[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendPlan {
    pub counts: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl SendPlan {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Checks that `ranges` is a contiguous partition starting at 0 with empty
/// blocks only at the tail (the shape every monotone block scheme produces).
fn validate_partition(ranges: &[BlockRange]) -> Result<usize, PlanError> {
    if ranges.is_empty() {
        return Err(PlanError::EmptyGroup);
    }
    if ranges[0].ini != 0 {
        return Err(PlanError::NotContiguous { index: 0 });
    }
    let mut seen_empty = false;
    for (i, r) in ranges.iter().enumerate() {
        if r.ini > r.end {
            return Err(PlanError::InvalidRange {
                ini: r.ini,
                end: r.end,
            });
        }
        if i > 0 && r.ini != ranges[i - 1].end {
            return Err(PlanError::NotContiguous { index: i });
        }
        if r.is_empty() {
            seen_empty = true;
        } else if seen_empty {
            return Err(PlanError::NonTailEmptyBlock { index: i });
        }
    }
    Ok(ranges.last().unwrap().end)
}

fn validate_my_range(my_range: BlockRange, n: usize) -> Result<(), PlanError> {
    if my_range.ini > my_range.end {
        return Err(PlanError::InvalidRange {
            ini: my_range.ini,
            end: my_range.end,
        });
    }
    if my_range.end > n {
        return Err(PlanError::RangeOutOfBounds {
            ini: my_range.ini,
            end: my_range.end,
            n,
        });
    }
    Ok(())
}

/// Target-side parameters: intersects `my_range` with each source block.
///
/// Single forward scan; once the intersection run ends no later source can
/// intersect again, so the scan stops there. `last_source` stays at `s_size`
/// when the run extends through the final source, keeping the
/// `first_source..last_source` bound exclusive in every case.
pub fn compute_read_plan(
    my_range: BlockRange,
    source_ranges: &[BlockRange],
) -> Result<ReadPlan, PlanError> {
    let n = validate_partition(source_ranges)?;
    validate_my_range(my_range, n)?;
    let s_size = source_ranges.len();
    if my_range.is_empty() {
        return Ok(ReadPlan::empty(s_size));
    }

    let mut counts = vec![0usize; s_size];
    let mut first_source = None;
    let mut first_index = 0;
    let mut last_source = s_size;
    for (i, src) in source_ranges.iter().enumerate() {
        if !src.is_empty() && my_range.ini < src.end && my_range.end > src.ini {
            if first_source.is_none() {
                first_source = Some(i);
                first_index = my_range.ini - src.ini;
            }
            let big_ini = my_range.ini.max(src.ini);
            let small_end = my_range.end.min(src.end);
            counts[i] = small_end - big_ini;
        } else if first_source.is_some() {
            last_source = i;
            break;
        }
    }

    let mut displs = vec![0usize; s_size + 1];
    for i in 0..s_size {
        displs[i + 1] = displs[i] + counts[i];
    }
    Ok(ReadPlan {
        counts,
        displs,
        first_source: first_source.expect("non-empty range always intersects a source"),
        last_source,
        first_index,
    })
}

/// Source-side parameters: intersects `my_range` with each drain block.
pub fn compute_send_plan(
    my_range: BlockRange,
    drain_ranges: &[BlockRange],
) -> Result<SendPlan, PlanError> {
    let n = validate_partition(drain_ranges)?;
    validate_my_range(my_range, n)?;
    let d_size = drain_ranges.len();
    let mut counts = vec![0usize; d_size];
    let mut offsets = vec![0usize; d_size];
    if my_range.is_empty() {
        return Ok(SendPlan { counts, offsets });
    }
    for (j, dst) in drain_ranges.iter().enumerate() {
        if !dst.is_empty() && my_range.ini < dst.end && my_range.end > dst.ini {
            let big_ini = my_range.ini.max(dst.ini);
            let small_end = my_range.end.min(dst.end);
            counts[j] = small_end - big_ini;
            offsets[j] = big_ini - my_range.ini;
        }
    }
    Ok(SendPlan { counts, offsets })
}

/// Ground-truth read plan, derived one element at a time.
///
/// Walks every element of `my_range`, finds its owner by binary search over
/// the source partition, and tallies the counts. Quadratic in spirit and
/// independent of the scan in [`compute_read_plan`].
pub fn oracle_plan(
    my_range: BlockRange,
    source_ranges: &[BlockRange],
) -> Result<ReadPlan, PlanError> {
    let n = validate_partition(source_ranges)?;
    validate_my_range(my_range, n)?;
    let s_size = source_ranges.len();
    let mut counts = vec![0usize; s_size];
    for element in my_range.ini..my_range.end {
        // First source whose end is past the element owns it.
        let owner = source_ranges.partition_point(|r| r.end <= element);
        debug_assert!(element >= source_ranges[owner].ini);
        counts[owner] += 1;
    }
    let mut displs = vec![0usize; s_size + 1];
    for i in 0..s_size {
        displs[i + 1] = displs[i] + counts[i];
    }
    let first_source = counts.iter().position(|c| *c > 0);
    let last_source = counts.iter().rposition(|c| *c > 0).map(|i| i + 1);
    let (first_source, last_source) = match (first_source, last_source) {
        (Some(f), Some(l)) => (f, l),
        _ => (0, 0),
    };
    let first_index = if my_range.is_empty() {
        0
    } else {
        my_range.ini - source_ranges[first_source].ini
    };
    Ok(ReadPlan {
        counts,
        displs,
        first_source,
        last_source,
        first_index,
    })
}
