//! The membership protocol suite: join, leave, merge, partition and
//! cascaded supergroups, executed as explicit message sequences over
//! [`crate::simnet`].
//!
//! Every run mutates the ground-truth [`GroupSnapshot`] only through what
//! individual members can locally derive from their own state plus
//! delivered payloads; the ring invariant checker cross-validates the two
//! views after every event.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::group::{GroupError, GroupRing, GroupSnapshot, MemberState, StateVector};
use crate::id::{GroupId, MemberId};
use crate::primitives::{next_nonce, Digest, SeededRng};
use crate::simnet::{NetError, SimNet};

pub mod auth;
pub mod cascade;
mod join;
mod leave;
mod merge;
mod partition;

pub use auth::{AuthServer, JoinTag, MergeTicket};
pub use cascade::{cascade_event, bootstrap_cascade, Cascade, SuperLevel};
pub use join::run_join;
pub use leave::run_leave;
pub use merge::{run_merge_multi, run_merge_pair};
pub use partition::run_partition;

/// Sender id used for authentication-stub records; never a group member.
pub const AUTH_SENDER: MemberId = MemberId(0);

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("member {0} is not registered with the authentication server")]
    AuthRefused(MemberId),
    #[error("{0} is already a group member")]
    AlreadyMember(MemberId),
    #[error("joining tag failed verification: {0}")]
    InvalidTag(String),
    #[error("member {0} does not belong to the group")]
    NotAMember(MemberId),
    #[error("sponsor {0} cannot drive an event it departs in")]
    SponsorDeparting(MemberId),
    #[error("operation would leave the group with fewer than two members")]
    GroupWouldShrinkBelowTwo,
    #[error("merging groups share member ids")]
    IdCollision,
    #[error("merge requires at least two groups")]
    NotEnoughGroups,
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Runtime switches that disable one rekeying countermeasure each; used by
/// the mutation-sensitivity suite to show that every countermeasure is
/// load-bearing for at least one secrecy property.
#[derive(Clone, Copy, Default, Debug, PartialEq, Eq)]
pub struct MutationSet {
    /// Join: skip mixing the sponsor nonce into the next group key.
    pub disable_join_key_mix: bool,
    /// Leave: skip both nonce rehashes (sponsor and predecessor-of-departed).
    pub disable_leave_nonce_rehash: bool,
    /// Merge: skip the host-sponsor nonce rehash.
    pub disable_merge_sponsor_rehash: bool,
    /// Partition: skip the function-G block rehashes.
    pub disable_partition_function_g: bool,
}

impl MutationSet {
    pub const NAMES: [&'static str; 4] = [
        "join-key-mix",
        "leave-nonce-rehash",
        "merge-sponsor-rehash",
        "partition-function-g",
    ];

    pub fn disabling(name: &str) -> Option<MutationSet> {
        let mut m = MutationSet::default();
        match name {
            "join-key-mix" => m.disable_join_key_mix = true,
            "leave-nonce-rehash" => m.disable_leave_nonce_rehash = true,
            "merge-sponsor-rehash" => m.disable_merge_sponsor_rehash = true,
            "partition-function-g" => m.disable_partition_function_g = true,
            _ => return None,
        }
        Some(m)
    }
}

/// One membership event as the engine consumes it. Events are processed
/// strictly one at a time; each completes before the next starts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MembershipEvent {
    Join {
        group: GroupId,
        joiner: MemberId,
        sponsor: Option<MemberId>,
    },
    Leave {
        group: GroupId,
        departing: MemberId,
        sponsor: Option<MemberId>,
    },
    Merge {
        groups: Vec<GroupId>,
    },
    Partition {
        group: GroupId,
        departing: BTreeSet<MemberId>,
        sponsor: Option<MemberId>,
    },
}

/// Trusted setup: builds a fresh group of the given members, distributing
/// each state vector directly. Ring order is ascending member id. The
/// first group key is an independent random value drawn by the setup, so
/// every later key chains back to material that never left the group.
pub fn bootstrap_group(
    net: &mut SimNet,
    group_id: GroupId,
    mut member_ids: Vec<MemberId>,
    rng: &mut SeededRng,
    mac_key: Digest,
) -> Result<GroupSnapshot, ProtocolError> {
    member_ids.sort_unstable();
    member_ids.dedup();
    if member_ids.len() < 2 {
        return Err(ProtocolError::GroupWouldShrinkBelowTwo);
    }
    net.step("bootstrap");
    let ring = GroupRing::new(member_ids.clone())?;
    let nonces: Vec<_> = member_ids
        .iter()
        .map(|id| next_nonce(rng, *id))
        .collect();
    let group_key = Digest(rng.next_bytes());

    let mut members = std::collections::BTreeMap::new();
    let mut shared = std::collections::BTreeMap::new();
    for n in &nonces {
        shared.insert(n.origin, *n);
    }
    for id in &member_ids {
        let pred = ring.pred(*id)?;
        let mut state = StateVector::new();
        for n in &nonces {
            if n.origin != pred {
                state.insert(*n);
            }
        }
        members.insert(
            *id,
            MemberState {
                id: *id,
                own_nonce: shared[id],
                state,
                ring: ring.clone(),
                group_key,
                held_keys: vec![group_key],
                session_keys: Vec::new(),
                mac_key,
            },
        );
    }
    let sponsor = member_ids[0];
    let snapshot = GroupSnapshot {
        group_id,
        ring,
        members,
        group_key,
        sponsor,
        shared_nonces: shared,
        lineage: [group_id].into(),
    };
    net.record_epoch(group_id, snapshot.lineage.clone(), group_key, "bootstrap");
    Ok(snapshot)
}

/// Bootstrap without an external net: wraps a throwaway instrumented net
/// so unit tests can build groups directly.
pub fn bootstrap_group_standalone(
    group_id: GroupId,
    member_ids: Vec<MemberId>,
    rng: &mut SeededRng,
) -> GroupSnapshot {
    let mut net = SimNet::new(crate::simnet::SizeModel::default());
    net.begin_event("bootstrap".into(), group_id, member_ids.len());
    let g = bootstrap_group(&mut net, group_id, member_ids, rng, Digest([0x5A; 32]))
        .expect("standalone bootstrap");
    net.end_event();
    g
}

/// Applies the new ring to every member's local view (ring order is
/// public structure, announced alongside the protocol messages).
pub(crate) fn install_ring(g: &mut GroupSnapshot, ring: &GroupRing) {
    for m in g.members.values_mut() {
        m.ring = ring.clone();
    }
    g.ring = ring.clone();
}
