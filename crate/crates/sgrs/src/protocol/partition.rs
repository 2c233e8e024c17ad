//! Partition protocol: simultaneous departure of a member set.
//!
//! The rekey announcement is sealed under the multicast key indexed by the
//! intersection of all survivors' state vectors; that intersection is
//! exactly the set of nonces owned by each departing member's ring
//! predecessor, so every departing member individually lacks at least one
//! of them. Function G then walks the maximal contiguous departing blocks
//! and rehashes each surviving block-predecessor's nonce with the block's
//! tail nonce, re-linking the ring.

use std::collections::BTreeSet;

use crate::group::GroupSnapshot;
use crate::id::MemberId;
use crate::primitives::{Nonce, SeededRng};
use crate::simnet::{KeyClass, Lane, MessageSpec, Mode, OpScope, PayloadItem, SimNet};

use super::{install_ring, MutationSet, ProtocolError, AUTH_SENDER};

/// A maximal contiguous run of departing members on the ring.
#[derive(Debug, PartialEq, Eq)]
pub(crate) struct DepartingBlock {
    /// Surviving predecessor of the block (function G rehashes its nonce).
    pub pred: MemberId,
    /// Block member adjacent to the surviving successor; its nonce is the
    /// rehash mix-in.
    pub tail: MemberId,
    /// Surviving successor: the member that cannot follow the rehash and
    /// deletes the predecessor entry instead.
    pub succ: MemberId,
}

pub(crate) fn departing_blocks(
    g: &GroupSnapshot,
    departing: &BTreeSet<MemberId>,
) -> Vec<DepartingBlock> {
    let order = g.ring.order();
    let n = order.len();
    let mut blocks = Vec::new();
    for idx in 0..n {
        let id = order[idx];
        let prev = order[(idx + n - 1) % n];
        // Start of a block: a departing member whose predecessor survives.
        if departing.contains(&id) && !departing.contains(&prev) {
            let mut tail_idx = idx;
            while departing.contains(&order[(tail_idx + 1) % n]) {
                tail_idx = (tail_idx + 1) % n;
            }
            blocks.push(DepartingBlock {
                pred: prev,
                tail: order[tail_idx],
                succ: order[(tail_idx + 1) % n],
            });
        }
    }
    blocks
}

/// Ids whose nonces form the survivors' state-vector intersection: exactly
/// the ring predecessors of departing members (including predecessors that
/// are themselves departing, inside contiguous blocks).
pub(crate) fn survivor_intersection_ids(
    g: &GroupSnapshot,
    departing: &BTreeSet<MemberId>,
) -> Vec<MemberId> {
    g.ring
        .order()
        .iter()
        .copied()
        .filter(|id| departing.contains(&g.ring.succ(*id).expect("ring member")))
        .collect()
}

pub fn run_partition(
    g: &mut GroupSnapshot,
    departing: &BTreeSet<MemberId>,
    sponsor: MemberId,
    rng: &mut SeededRng,
    net: &mut SimNet,
    muts: &MutationSet,
) -> Result<(), ProtocolError> {
    if departing.is_empty() {
        return Err(ProtocolError::NotEnoughGroups);
    }
    for id in departing {
        if !g.ring.contains(*id) {
            return Err(ProtocolError::NotAMember(*id));
        }
    }
    if departing.contains(&sponsor) {
        return Err(ProtocolError::SponsorDeparting(sponsor));
    }
    if !g.ring.contains(sponsor) {
        return Err(ProtocolError::NotAMember(sponsor));
    }
    let survivors: Vec<MemberId> = g
        .ring
        .order()
        .iter()
        .copied()
        .filter(|id| !departing.contains(id))
        .collect();
    if survivors.len() < 2 {
        return Err(ProtocolError::GroupWouldShrinkBelowTwo);
    }

    let old_key = g.group_key;
    let old_sponsor_nonce = g.shared_nonces[&sponsor];
    let index_ids = survivor_intersection_ids(g, departing);
    let index_nonces: Vec<Nonce> = index_ids.iter().map(|id| g.shared_nonces[id]).collect();
    let blocks = departing_blocks(g, departing);
    let sponsor_block = blocks.iter().find(|b| b.pred == sponsor);

    let removal_seq = net.trace.next_seq();
    let removal_states: Vec<_> = departing
        .iter()
        .map(|id| g.member(*id).map(|m| m.clone()))
        .collect::<Result<_, _>>()?;

    // Step 1: announce n_random and the survivor roster, sealed under the
    // intersection-indexed multicast key.
    net.step("partition.announce");
    let n_random = Nonce {
        bytes: rng.next_bytes(),
        origin: AUTH_SENDER,
        version: 0,
    };
    let announce_key = {
        let m = g.member(sponsor)?;
        let nonces: Vec<&Nonce> = index_ids
            .iter()
            .map(|id| m.state.get(*id).expect("intersection lies in every survivor state"))
            .collect();
        net.multicast_key(OpScope::Protocol, &nonces, &m.group_key)
    };
    let mut payload = vec![PayloadItem::Nonce(n_random)];
    for id in &survivors {
        payload.push(PayloadItem::Id(*id));
    }
    let announce = net.send(MessageSpec {
        lane: Lane::Wire,
        mode: Mode::Broadcast,
        group: g.group_id,
        sender: sponsor,
        recipients: survivors.clone(),
        key_hint: index_ids.clone(),
        payload,
        seal_key: announce_key,
        key_class: KeyClass::Multicast { group_key: old_key },
    })?;
    for id in &survivors {
        if *id == sponsor {
            continue;
        }
        let ky = {
            let m = g.member(*id)?;
            let nonces: Vec<&Nonce> = index_ids
                .iter()
                .map(|x| m.state.get(*x).expect("survivor holds the intersection"))
                .collect();
            net.multicast_key(OpScope::Protocol, &nonces, &m.group_key)
        };
        net.open_with(announce, &ky)
            .expect("survivor opens the partition announce");
    }

    // Step 2: function G plus the sponsor rekey, per survivor.
    net.step("partition.rekey");
    let mut new_key = None;
    let mut needy = Vec::new();
    let mut final_nonces: Vec<Nonce> = Vec::new();

    for id in &survivors {
        // Function G: for each block, rehash the surviving predecessor's
        // nonce with the block tail's nonce when both are held; the
        // block's surviving successor deletes the entry instead.
        if !muts.disable_partition_function_g {
            for block in &blocks {
                let holds_pred = g.member(*id)?.state.contains(block.pred);
                let holds_tail = g.member(*id)?.state.contains(block.tail);
                if holds_pred && holds_tail {
                    let (old_p, tail_n) = {
                        let m = g.member(*id)?;
                        (
                            *m.state.get(block.pred).unwrap(),
                            *m.state.get(block.tail).unwrap(),
                        )
                    };
                    let rehashed = net.kdf(OpScope::Protocol, "NR", &old_p.bytes, &tail_n.bytes);
                    let updated = Nonce {
                        bytes: rehashed.0,
                        origin: block.pred,
                        version: old_p.version + 1,
                    };
                    let m = g.member_mut(*id)?;
                    m.state.insert(updated);
                    if m.id == block.pred {
                        m.own_nonce = updated;
                    }
                    if !final_nonces.iter().any(|n| n.origin == block.pred) {
                        final_nonces.push(updated);
                    }
                } else if holds_pred && *id == block.succ {
                    g.member_mut(*id)?.state.remove(block.pred);
                }
            }
        }

        // Sponsor rekey: the (possibly G-updated) sponsor nonce rehashed
        // with n_random, then the new group key.
        let sponsor_entry = g.member(*id)?.state.get(sponsor).copied();
        match sponsor_entry {
            Some(base)
                if muts.disable_partition_function_g
                    || sponsor_block.is_none()
                    || base.version > old_sponsor_nonce.version =>
            {
                let rehashed = net.kdf(OpScope::Protocol, "NR", &base.bytes, &n_random.bytes);
                let updated = Nonce {
                    bytes: rehashed.0,
                    origin: sponsor,
                    version: base.version + 1,
                };
                let k = net.kdf(
                    OpScope::Protocol,
                    "GK-leave",
                    &updated.bytes,
                    &n_random.bytes,
                );
                let m = g.member_mut(*id)?;
                m.state.insert(updated);
                if m.id == sponsor {
                    m.own_nonce = updated;
                }
                m.adopt_group_key(k);
                if let Some(pos) = final_nonces.iter().position(|n| n.origin == sponsor) {
                    final_nonces[pos] = updated;
                } else {
                    final_nonces.push(updated);
                }
                new_key = Some(k);
            }
            _ => {
                // Either never held the sponsor nonce (old succ(sponsor))
                // or missed the sponsor's G-rehash (successor of the
                // sponsor's block): cannot derive the key.
                if g.member(*id)?.state.contains(sponsor) && sponsor_block.is_some() {
                    g.member_mut(*id)?.state.remove(sponsor);
                }
                needy.push(*id);
            }
        }

        // Drop all departed entries.
        for dep in departing {
            g.member_mut(*id)?.state.remove(*dep);
        }
    }
    let new_key = new_key.expect("the sponsor derives the new key");

    // Step 3: forward the key to survivors that could not derive it,
    // under the same (retained old) intersection key.
    net.step("partition.key_forward");
    for target in &needy {
        let seal_key = {
            let nonces: Vec<&Nonce> = index_nonces.iter().collect();
            net.multicast_key(OpScope::Protocol, &nonces, &old_key)
        };
        let msg = net.send(MessageSpec {
            lane: Lane::Wire,
            mode: Mode::Unicast,
            group: g.group_id,
            sender: sponsor,
            recipients: vec![*target],
            key_hint: index_ids.clone(),
            payload: vec![PayloadItem::Key(new_key)],
            seal_key,
            key_class: KeyClass::Multicast { group_key: old_key },
        })?;
        let receiver_key = {
            let nonces: Vec<&Nonce> = index_nonces.iter().collect();
            net.multicast_key(OpScope::Protocol, &nonces, &old_key)
        };
        let items = net
            .open_with(msg, &receiver_key)
            .expect("needy survivor retained the old intersection values");
        if let Some(PayloadItem::Key(k)) = items.first() {
            g.member_mut(*target)?.adopt_group_key(*k);
        }
    }

    // Finish: ground truth.
    let mut new_ring = g.ring.clone();
    for dep in departing {
        new_ring.remove(*dep)?;
        g.members.remove(dep);
        g.shared_nonces.remove(dep);
    }
    for n in &final_nonces {
        if !muts.disable_partition_function_g || n.origin == sponsor {
            g.shared_nonces.insert(n.origin, *n);
        }
    }
    g.group_key = new_key;
    g.sponsor = sponsor;
    install_ring(g, &new_ring);
    net.record_epoch(g.group_id, g.lineage.clone(), new_key, "partition");

    let event = net.current_event().unwrap_or(0);
    net.trace.removals.push(crate::simnet::RemovalRecord {
        seq: removal_seq,
        event,
        group: g.group_id,
        lineage: g.lineage.clone(),
        states: removal_states,
    });
    Ok(())
}
