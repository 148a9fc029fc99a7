//! Process-group topology for reconfigurations under the merge scheme.
//!
//! A reconfiguration goes from `ns` source ranks to `nd` drain ranks. The
//! merge scheme keeps surviving ranks' identities: ranks `0..min(ns, nd)`
//! belong to both groups, `nd - ns` new processes are spawned at the tail
//! when growing, and the tail `ns - nd` sources are removed when shrinking.

use thiserror::Error;

/// Role of a rank during one reconfiguration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Exists only before the resize; removed once redistribution ends.
    SourceOnly,
    /// Spawned for the resize; holds no data until redistribution ends.
    DrainOnly,
    /// Survives the resize; acts as source and drain at the same time.
    Both,
}

impl Role {
    /// True for ranks that hold data before the resize.
    pub fn is_source(self) -> bool {
        matches!(self, Role::SourceOnly | Role::Both)
    }

    /// True for ranks that hold data after the resize.
    pub fn is_drain(self) -> bool {
        matches!(self, Role::DrainOnly | Role::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("process counts must be at least 1 (ns={ns}, nd={nd})")]
    InvalidCounts { ns: usize, nd: usize },
}

/// Per-rank roles for one `ns -> nd` reconfiguration.
///
/// Built by [`merge_roles`]; the invariants (exactly `min(ns, nd)` ranks are
/// [`Role::Both`] and they occupy ranks `0..min`) hold by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconfigPlan {
    ns: usize,
    nd: usize,
    roles: Vec<Role>,
}

impl ReconfigPlan {
    /// Number of source ranks.
    pub fn ns(&self) -> usize {
        self.ns
    }

    /// Number of drain ranks.
    pub fn nd(&self) -> usize {
        self.nd
    }

    /// Total ranks alive at any point of the reconfiguration: `max(ns, nd)`.
    pub fn total_ranks(&self) -> usize {
        self.roles.len()
    }

    /// Role of `rank`; panics if out of range.
    pub fn role(&self, rank: usize) -> Role {
        self.roles[rank]
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    /// Ranks holding data before the resize: `0..ns`.
    pub fn source_ranks(&self) -> impl Iterator<Item = usize> {
        0..self.ns
    }

    /// Ranks holding data after the resize: `0..nd`.
    pub fn drain_ranks(&self) -> impl Iterator<Item = usize> {
        0..self.nd
    }

    /// True when the group size does not change.
    pub fn is_identity(&self) -> bool {
        self.ns == self.nd
    }
}

/// Assigns roles for an `ns -> nd` reconfiguration.
///
/// Ranks `0..min(ns, nd)` are `Both`; when growing, ranks `min..nd` are the
/// spawned `DrainOnly` processes; when shrinking, ranks `min..ns` are the
/// `SourceOnly` processes that will be removed.
pub fn merge_roles(ns: usize, nd: usize) -> Result<ReconfigPlan, TopologyError> {
    if ns == 0 || nd == 0 {
        return Err(TopologyError::InvalidCounts { ns, nd });
    }
    let min = ns.min(nd);
    let total = ns.max(nd);
    let surplus = if nd > ns {
        Role::DrainOnly
    } else {
        Role::SourceOnly
    };
    let mut roles = vec![Role::Both; total];
    for role in roles.iter_mut().take(total).skip(min) {
        *role = surplus;
    }
    Ok(ReconfigPlan { ns, nd, roles })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(plan: &ReconfigPlan, role: Role) -> usize {
        plan.roles().iter().filter(|r| **r == role).count()
    }

    #[test]
    fn identity_plan_is_all_both() {
        let plan = merge_roles(4, 4).unwrap();
        assert_eq!(plan.total_ranks(), 4);
        assert!(plan.roles().iter().all(|r| *r == Role::Both));
    }

    #[test]
    fn growing_appends_drain_only_ranks() {
        let plan = merge_roles(2, 4).unwrap();
        assert_eq!(plan.total_ranks(), 4);
        assert_eq!(plan.role(0), Role::Both);
        assert_eq!(plan.role(1), Role::Both);
        assert_eq!(plan.role(2), Role::DrainOnly);
        assert_eq!(plan.role(3), Role::DrainOnly);
    }

    #[test]
    fn shrinking_marks_tail_ranks_source_only() {
        let plan = merge_roles(8, 2).unwrap();
        assert_eq!(plan.total_ranks(), 8);
        for rank in 0..2 {
            assert_eq!(plan.role(rank), Role::Both);
        }
        for rank in 2..8 {
            assert_eq!(plan.role(rank), Role::SourceOnly);
        }
    }

    #[test]
    fn zero_counts_are_rejected() {
        assert!(merge_roles(0, 4).is_err());
        assert!(merge_roles(4, 0).is_err());
        assert!(merge_roles(0, 0).is_err());
    }

    #[test]
    fn role_counts_match_merge_rule() {
        for ns in 1..=24 {
            for nd in 1..=24 {
                let plan = merge_roles(ns, nd).unwrap();
                assert_eq!(count(&plan, Role::Both), ns.min(nd));
                assert_eq!(count(&plan, Role::DrainOnly), nd.saturating_sub(ns));
                assert_eq!(count(&plan, Role::SourceOnly), ns.saturating_sub(nd));
                assert_eq!(plan.total_ranks(), ns.max(nd));
                // Surviving ranks keep their ids at the head of the group.
                for rank in 0..ns.min(nd) {
                    assert_eq!(plan.role(rank), Role::Both);
                }
            }
        }
    }

    #[test]
    fn identity_has_no_surplus_roles() {
        for n in 1..=16 {
            let plan = merge_roles(n, n).unwrap();
            assert_eq!(count(&plan, Role::SourceOnly), 0);
            assert_eq!(count(&plan, Role::DrainOnly), 0);
        }
    }
}
