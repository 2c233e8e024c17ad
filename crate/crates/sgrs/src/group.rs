//! Group data model: the logical ring, per-member state vectors, multicast
//! key derivation, subgroup-key counting, and the structural invariant
//! checker that every protocol test runs as a post-step oracle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::id::{GroupId, MemberId};
use crate::primitives::{kdf2, xor_combine, Digest, Nonce};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupError {
    #[error("member {0} is not on the ring")]
    UnknownMember(MemberId),
    #[error("ring must hold at least two distinct members")]
    RingTooSmall,
    #[error("duplicate member {0} on the ring")]
    DuplicateMember(MemberId),
    #[error("group of {0} members exceeds the brute-force bound of {1}")]
    GroupTooLarge(usize, usize),
    #[error("key counting requires N >= {1}, got {0}")]
    GroupTooSmallFor(usize, usize),
    #[error("member cannot derive the multicast key: {0} is missing from its state vector")]
    NotDerivable(MemberId),
    #[error("empty subgroup index set")]
    EmptySubgroup,
}

/// The set of secret nonces one member holds, keyed by originating member.
/// In a well-formed group of ring X this is X minus the member's ring
/// predecessor.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct StateVector {
    pub entries: BTreeMap<MemberId, Nonce>,
}

impl StateVector {
    pub fn new() -> Self {
        StateVector {
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: MemberId) -> Option<&Nonce> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: MemberId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn insert(&mut self, nonce: Nonce) {
        self.entries.insert(nonce.origin, nonce);
    }

    pub fn remove(&mut self, id: MemberId) -> Option<Nonce> {
        self.entries.remove(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = MemberId> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.entries.values()).finish()
    }
}

/// Ring order of the group. The arrow `pred(i) -> i` carries the secrecy
/// relation: member `i` never holds its predecessor's nonce.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct GroupRing {
    order: Vec<MemberId>,
}

impl GroupRing {
    pub fn new(order: Vec<MemberId>) -> Result<Self, GroupError> {
        if order.len() < 2 {
            return Err(GroupError::RingTooSmall);
        }
        let mut seen = BTreeSet::new();
        for id in &order {
            if !seen.insert(*id) {
                return Err(GroupError::DuplicateMember(*id));
            }
        }
        Ok(GroupRing { order })
    }

    pub fn order(&self) -> &[MemberId] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, id: MemberId) -> bool {
        self.order.contains(&id)
    }

    fn position(&self, id: MemberId) -> Result<usize, GroupError> {
        self.order
            .iter()
            .position(|m| *m == id)
            .ok_or(GroupError::UnknownMember(id))
    }

    /// Circular predecessor.
    pub fn pred(&self, id: MemberId) -> Result<MemberId, GroupError> {
        let i = self.position(id)?;
        Ok(self.order[(i + self.order.len() - 1) % self.order.len()])
    }

    /// Circular successor.
    pub fn succ(&self, id: MemberId) -> Result<MemberId, GroupError> {
        let i = self.position(id)?;
        Ok(self.order[(i + 1) % self.order.len()])
    }

    /// Inserts `new` immediately after `anchor`.
    pub fn insert_after(&mut self, anchor: MemberId, new: MemberId) -> Result<(), GroupError> {
        if self.contains(new) {
            return Err(GroupError::DuplicateMember(new));
        }
        let i = self.position(anchor)?;
        self.order.insert(i + 1, new);
        Ok(())
    }

    /// Splices a sequence immediately after `anchor`, preserving its order.
    pub fn splice_after(
        &mut self,
        anchor: MemberId,
        segment: &[MemberId],
    ) -> Result<(), GroupError> {
        for id in segment {
            if self.contains(*id) {
                return Err(GroupError::DuplicateMember(*id));
            }
        }
        let i = self.position(anchor)?;
        for (k, id) in segment.iter().enumerate() {
            self.order.insert(i + 1 + k, *id);
        }
        Ok(())
    }

    pub fn remove(&mut self, id: MemberId) -> Result<(), GroupError> {
        let i = self.position(id)?;
        self.order.remove(i);
        Ok(())
    }

    /// Walks the ring from `start` (inclusive) around once.
    pub fn walk_from(&self, start: MemberId) -> Result<Vec<MemberId>, GroupError> {
        let i = self.position(start)?;
        Ok((0..self.order.len())
            .map(|k| self.order[(i + k) % self.order.len()])
            .collect())
    }
}

/// One member's complete view: identity, own secret, state vector, ring
/// view and current group key. `held_keys` accumulates every group key the
/// member ever held; the adversary module snapshots it on removal.
#[derive(Clone, Debug)]
pub struct MemberState {
    pub id: MemberId,
    pub own_nonce: Nonce,
    pub state: StateVector,
    pub ring: GroupRing,
    pub group_key: Digest,
    pub held_keys: Vec<Digest>,
    /// Private session keys issued by the authentication stub: the join
    /// key-wrap key, and the merge state-transfer keys.
    pub session_keys: Vec<Digest>,
    pub mac_key: Digest,
}

impl MemberState {
    pub fn adopt_group_key(&mut self, key: Digest) {
        self.group_key = key;
        if !self.held_keys.contains(&key) {
            self.held_keys.push(key);
        }
    }
}

/// Ground-truth view of a whole group. `shared_nonces` is the authoritative
/// nonce set; member state vectors are checked against it.
#[derive(Clone, Debug)]
pub struct GroupSnapshot {
    pub group_id: GroupId,
    pub ring: GroupRing,
    pub members: BTreeMap<MemberId, MemberState>,
    pub group_key: Digest,
    pub sponsor: MemberId,
    pub shared_nonces: BTreeMap<MemberId, Nonce>,
    /// Group ids whose history flowed into this group (merge unions them).
    pub lineage: BTreeSet<GroupId>,
}

impl GroupSnapshot {
    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn member(&self, id: MemberId) -> Result<&MemberState, GroupError> {
        self.members.get(&id).ok_or(GroupError::UnknownMember(id))
    }

    pub fn member_mut(&mut self, id: MemberId) -> Result<&mut MemberState, GroupError> {
        self.members
            .get_mut(&id)
            .ok_or(GroupError::UnknownMember(id))
    }

    /// Default sponsor rule: surviving member with the smallest id,
    /// skipping any ids in `exclude`.
    pub fn default_sponsor(&self, exclude: &[MemberId]) -> Option<MemberId> {
        self.ring
            .order()
            .iter()
            .copied()
            .filter(|id| !exclude.contains(id))
            .min()
    }
}

/// Derives the multicast key for the id set `Y` from one member's local
/// state: `kdf2("MK", XOR(Y_s), K_G)`. Succeeds exactly when the member
/// holds every indexed nonce.
pub fn derive_multicast_key(
    m: &MemberState,
    subgroup: &BTreeSet<MemberId>,
) -> Result<Digest, GroupError> {
    if subgroup.is_empty() {
        return Err(GroupError::EmptySubgroup);
    }
    let mut nonces = Vec::with_capacity(subgroup.len());
    for id in subgroup {
        match m.state.get(*id) {
            Some(n) => nonces.push(n),
            None => return Err(GroupError::NotDerivable(*id)),
        }
    }
    let combined = xor_combine(nonces).expect("non-empty, distinct by construction");
    Ok(kdf2("MK", &combined, m.group_key.as_bytes()).expect("MK is registered"))
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Closed-form counts of subgroup keys for a group of `n` members.
///
/// `W` follows the published two-branch formula verbatim: for odd `n` it
/// sums C(n,1)..C(n,n-2); for even `n` it sums C(n,1)..C(n,n-1), which
/// also counts the n single-holder private keys (see
/// [`count_keys_bruteforce`] for the semantic count). `Z`, the number of
/// subgroups one member can participate in, is `2^(n-1) - 1`: the odd
/// branch as printed carries a trailing "+1" which contradicts the
/// published n = 7 example (63); the example value is authoritative here.
pub fn count_keys_closed_form(n: usize) -> Result<(u128, u128), GroupError> {
    if n < 3 {
        return Err(GroupError::GroupTooSmallFor(n, 3));
    }
    let nn = n as u64;
    let w_top = if n % 2 == 1 { nn - 2 } else { nn - 1 };
    let w: u128 = (1..=w_top).map(|k| binomial(nn, k)).sum();
    let z: u128 = (1..=nn - 1).map(|k| binomial(nn - 1, k)).sum();
    Ok((w, z))
}

/// The odd-branch `Z` exactly as printed (with the trailing "+1"),
/// surfaced so reports can show the discrepancy against the pinned value.
pub fn count_z_as_printed(n: usize) -> Result<u128, GroupError> {
    let (_, z) = count_keys_closed_form(n)?;
    Ok(if n % 2 == 1 { z + 1 } else { z })
}

/// Brute-force oracle over all non-empty nonce subsets.
///
/// `w_semantic` counts subsets derivable by at least two members (keys
/// usable for actual subgroup communication); `z_per_member` counts, for
/// each member, the non-empty subsets of its own state vector.
#[derive(Debug)]
pub struct KeyCensus {
    pub w_semantic: u64,
    /// Subsets derivable by at least one member (includes private keys).
    pub w_reachable: u64,
    pub z_per_member: BTreeMap<MemberId, u64>,
}

pub const BRUTE_FORCE_MAX: usize = 12;

pub fn count_keys_bruteforce(g: &GroupSnapshot) -> Result<KeyCensus, GroupError> {
    let n = g.ring.len();
    if n > BRUTE_FORCE_MAX {
        return Err(GroupError::GroupTooLarge(n, BRUTE_FORCE_MAX));
    }
    let order = g.ring.order().to_vec();
    // Member i can derive the subset key iff its predecessor's nonce is
    // not indexed by the subset.
    let mut pred_idx = BTreeMap::new();
    for id in &order {
        let p = g.ring.pred(*id)?;
        let pos = order.iter().position(|m| m == &p).unwrap();
        pred_idx.insert(*id, pos);
    }
    let mut w_semantic = 0u64;
    let mut w_reachable = 0u64;
    for mask in 1u64..(1u64 << n) {
        let holders = order
            .iter()
            .filter(|id| mask & (1 << pred_idx[id]) == 0)
            .count();
        if holders >= 2 {
            w_semantic += 1;
        }
        if holders >= 1 {
            w_reachable += 1;
        }
    }
    let mut z_per_member = BTreeMap::new();
    for id in &order {
        let s = g.member(*id)?.state.len();
        let mut z = 0u64;
        for mask in 1u64..(1u64 << s) {
            let _ = mask;
            z += 1;
        }
        z_per_member.insert(*id, z);
    }
    Ok(KeyCensus {
        w_semantic,
        w_reachable,
        z_per_member,
    })
}

/// One structural violation found by [`check_ring_invariant`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub member: MemberId,
    pub detail: String,
}

/// Checks the full ring invariant against ground truth: every member's
/// state vector indexes exactly the ring minus its predecessor, values are
/// byte-identical to the shared nonce set, own nonce is present, and all
/// group keys agree. Violations are data, not errors.
pub fn check_ring_invariant(g: &GroupSnapshot) -> Vec<Violation> {
    let mut out = Vec::new();
    let ring_ids: BTreeSet<MemberId> = g.ring.order().iter().copied().collect();

    if ring_ids.len() != g.members.len() || !g.members.keys().all(|id| ring_ids.contains(id)) {
        out.push(Violation {
            member: *g.ring.order().first().unwrap_or(&MemberId(0)),
            detail: "ring and member map disagree".into(),
        });
    }
    for (id, truth) in &g.shared_nonces {
        if !ring_ids.contains(id) {
            out.push(Violation {
                member: *id,
                detail: "ground-truth nonce for a member not on the ring".into(),
            });
        }
        let _ = truth;
    }

    for id in g.ring.order() {
        let m = match g.members.get(id) {
            Some(m) => m,
            None => continue,
        };
        let pred = g.ring.pred(*id).expect("id from ring");
        let expected: BTreeSet<MemberId> =
            ring_ids.iter().copied().filter(|x| *x != pred).collect();
        let actual: BTreeSet<MemberId> = m.state.ids().collect();
        if actual != expected {
            let extra: Vec<_> = actual.difference(&expected).collect();
            let missing: Vec<_> = expected.difference(&actual).collect();
            out.push(Violation {
                member: *id,
                detail: format!(
                    "state vector indexes {actual:?}, expected ring minus predecessor {pred} \
                     (extra {extra:?}, missing {missing:?})"
                ),
            });
        }
        match m.state.get(*id) {
            Some(own) if own == &m.own_nonce => {}
            _ => out.push(Violation {
                member: *id,
                detail: "own nonce missing from state vector".into(),
            }),
        }
        for (nid, nonce) in &m.state.entries {
            if let Some(truth) = g.shared_nonces.get(nid) {
                if truth != nonce {
                    out.push(Violation {
                        member: *id,
                        detail: format!(
                            "stale nonce for {nid}: holds v{}, ground truth v{}",
                            nonce.version, truth.version
                        ),
                    });
                }
            }
        }
        if m.group_key != g.group_key {
            out.push(Violation {
                member: *id,
                detail: format!(
                    "group key disagreement: holds {}, group has {}",
                    m.group_key, g.group_key
                ),
            });
        }
        if m.ring != g.ring {
            out.push(Violation {
                member: *id,
                detail: "ring view diverges from ground truth".into(),
            });
        }
    }
    out
}
