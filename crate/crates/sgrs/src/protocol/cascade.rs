//! Cascaded supergroups: groups as logical members, their group keys as
//! logical nonces.
//!
//! A leaf membership event reruns the ordinary protocol inside one child
//! group; the resulting child key then plays the nonce role one level up:
//! every child except the event child's ring predecessor folds it into the
//! supergroup key, and one unicast delivers the new supergroup key to that
//! excluded child. Sponsors are trusted couriers inside their own groups,
//! so sibling groups' internal nonces are never touched.

use std::collections::BTreeMap;

use crate::group::GroupSnapshot;
use crate::id::{GroupId, MemberId};
use crate::primitives::Digest;
use crate::simnet::{KeyClass, Lane, MessageSpec, Mode, OpScope, PayloadItem, SimNet};

use super::ProtocolError;

/// One supergroup layer over child units (child = leaf group index).
#[derive(Clone, Debug)]
pub struct SuperLevel {
    pub level: usize,
    /// Child units in ring order.
    pub ring: Vec<usize>,
    /// Ground-truth current key of each child.
    pub unit_keys: BTreeMap<usize, Digest>,
    /// Per-child view of sibling keys; each child misses exactly its ring
    /// successor's key (the mirror of the member-level exclusion, so the
    /// ring predecessor of an event child is the one that cannot rekey).
    pub views: BTreeMap<usize, BTreeMap<usize, Digest>>,
    pub super_key: Digest,
}

impl SuperLevel {
    fn ring_pred(&self, unit: usize) -> usize {
        let pos = self.ring.iter().position(|u| *u == unit).expect("unit on ring");
        self.ring[(pos + self.ring.len() - 1) % self.ring.len()]
    }

    fn ring_succ(&self, unit: usize) -> usize {
        let pos = self.ring.iter().position(|u| *u == unit).expect("unit on ring");
        self.ring[(pos + 1) % self.ring.len()]
    }
}

/// A two-level cascade: leaf groups plus (for two or more children) one
/// supergroup layer. Every leaf member tracks the current top-level key.
#[derive(Clone, Debug)]
pub struct Cascade {
    pub groups: Vec<GroupSnapshot>,
    pub level: Option<SuperLevel>,
    pub top_keys: BTreeMap<MemberId, Digest>,
}

impl Cascade {
    pub fn top_key(&self) -> Digest {
        match &self.level {
            Some(l) => l.super_key,
            None => self.groups[0].group_key,
        }
    }

    pub fn child_index(&self, gid: GroupId) -> Option<usize> {
        self.groups.iter().position(|g| g.group_id == gid)
    }

    /// All leaf members agree on the top-level key.
    pub fn agreement_holds(&self) -> bool {
        let top = self.top_key();
        self.groups.iter().all(|g| {
            g.ring
                .order()
                .iter()
                .all(|id| self.top_keys.get(id) == Some(&top))
        })
    }

    fn refresh_top_keys(&mut self) {
        let top = self.top_key();
        self.top_keys.clear();
        for g in &self.groups {
            for id in g.ring.order() {
                self.top_keys.insert(*id, top);
            }
        }
    }
}

/// Builds a cascade over freshly bootstrapped child groups. The supergroup
/// key mixes the XOR of all child keys with the first child's key,
/// mirroring the leaf bootstrap.
pub fn bootstrap_cascade(
    net: &mut SimNet,
    groups: Vec<GroupSnapshot>,
) -> Result<Cascade, ProtocolError> {
    if groups.is_empty() {
        return Err(ProtocolError::NotEnoughGroups);
    }
    net.step("cascade.bootstrap");
    let level = if groups.len() >= 2 {
        let ring: Vec<usize> = (0..groups.len()).collect();
        let unit_keys: BTreeMap<usize, Digest> = groups
            .iter()
            .enumerate()
            .map(|(i, g)| (i, g.group_key))
            .collect();
        let key_bytes: Vec<[u8; 32]> = unit_keys.values().map(|k| k.0).collect();
        let combined = net.xor_raw(&key_bytes);
        let super_key = net.kdf(OpScope::Protocol, "SG", &combined, &unit_keys[&0].0);
        let mut views = BTreeMap::new();
        for unit in &ring {
            let succ = ring[(unit + 1) % ring.len()];
            let view: BTreeMap<usize, Digest> = unit_keys
                .iter()
                .filter(|(u, _)| **u != succ)
                .map(|(u, k)| (*u, *k))
                .collect();
            views.insert(*unit, view);
        }
        Some(SuperLevel {
            level: 1,
            ring,
            unit_keys,
            views,
            super_key,
        })
    } else {
        None
    };
    let mut cascade = Cascade {
        groups,
        level,
        top_keys: BTreeMap::new(),
    };
    cascade.refresh_top_keys();
    Ok(cascade)
}

/// Propagates a completed leaf event (the child group already rekeyed to
/// `new_child_key`) up the cascade: sibling rekey plus one unicast to the
/// excluded child.
pub fn cascade_event(
    cascade: &mut Cascade,
    child: usize,
    net: &mut SimNet,
) -> Result<(), ProtocolError> {
    let new_child_key = cascade.groups[child].group_key;
    if let Some(level) = &mut cascade.level {
        net.step("cascade.super_rekey");
        let old_super = level.super_key;
        let excluded = level.ring_pred(child);
        let succ = level.ring_succ(child);
        level.unit_keys.insert(child, new_child_key);
        let mut new_super = old_super;
        for unit in level.ring.clone() {
            if unit == excluded && level.ring.len() > 1 {
                continue;
            }
            let view = level.views.get_mut(&unit).expect("unit view");
            view.insert(child, new_child_key);
            new_super = net.kdf(
                OpScope::Protocol,
                "SG",
                old_super.as_bytes(),
                new_child_key.as_bytes(),
            );
        }

        // One unicast: any updated child's sponsor forwards the new
        // supergroup key to the excluded child's sponsor, sealed under the
        // key of the event child's ring successor (which the excluded
        // child still holds) mixed with the old supergroup key.
        if excluded != child {
            net.step("cascade.super_key_forward");
            let succ_key = level.unit_keys[&succ];
            let seal_key = net.kdf(
                OpScope::Protocol,
                "MK",
                succ_key.as_bytes(),
                old_super.as_bytes(),
            );
            let sender = cascade.groups[child].sponsor;
            let recipient = cascade.groups[excluded].sponsor;
            let msg = net.send(MessageSpec {
                lane: Lane::Wire,
                mode: Mode::Unicast,
                group: cascade.groups[excluded].group_id,
                sender,
                recipients: vec![recipient],
                key_hint: vec![cascade.groups[succ].sponsor],
                payload: vec![PayloadItem::Key(new_super)],
                seal_key,
                key_class: KeyClass::Multicast {
                    group_key: old_super,
                },
            })?;
            let receiver_key = {
                let view_key = level.views[&excluded][&succ];
                net.kdf(
                    OpScope::Protocol,
                    "MK",
                    view_key.as_bytes(),
                    old_super.as_bytes(),
                )
            };
            net.open_with(msg, &receiver_key)
                .expect("excluded child's sponsor holds the successor key");
        }
        level.super_key = new_super;
    }
    cascade.refresh_top_keys();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::check_ring_invariant;
    use crate::primitives::SeededRng;
    use crate::protocol::{bootstrap_group, run_leave, MutationSet};
    use crate::simnet::SizeModel;

    fn build(net: &mut SimNet, rng: &mut SeededRng, sizes: &[u32]) -> Cascade {
        let mut groups = Vec::new();
        let mut next_id = 1u32;
        for (gi, size) in sizes.iter().enumerate() {
            net.begin_event(format!("bootstrap G{gi}"), GroupId(gi as u32), *size as usize);
            let ids: Vec<MemberId> = (next_id..next_id + size).map(MemberId).collect();
            next_id += size;
            groups.push(
                bootstrap_group(net, GroupId(gi as u32), ids, rng, Digest([0x5A; 32])).unwrap(),
            );
            net.end_event();
        }
        net.begin_event("cascade bootstrap".into(), GroupId(0), 0);
        let c = bootstrap_cascade(net, groups).unwrap();
        net.end_event();
        c
    }

    #[test]
    fn leaf_event_keeps_top_level_agreement_with_one_extra_unicast() {
        let mut net = SimNet::new(SizeModel::default());
        let mut rng = SeededRng::new(41);
        let mut c = build(&mut net, &mut rng, &[4, 4, 4]);
        assert!(c.agreement_holds());

        // A leave in child 1.
        net.begin_event("leave in G1".into(), GroupId(1), 4);
        run_leave(
            &mut c.groups[1],
            MemberId(6),
            MemberId(5),
            &mut rng,
            &mut net,
            &MutationSet::default(),
        )
        .unwrap();
        let wire_before = net
            .transcript
            .iter()
            .filter(|r| matches!(r.lane, Lane::Wire))
            .count();
        cascade_event(&mut c, 1, &mut net).unwrap();
        net.end_event();

        assert!(c.agreement_holds());
        assert_eq!(check_ring_invariant(&c.groups[1]), vec![]);
        // Exactly one extra wire message at the super level.
        let wire_after = net
            .transcript
            .iter()
            .filter(|r| matches!(r.lane, Lane::Wire))
            .count();
        assert_eq!(wire_after - wire_before, 1);
        let last = net.transcript.last().unwrap();
        assert_eq!(last.step, "cascade.super_key_forward");
        assert_eq!(last.mode, Mode::Unicast);
    }

    #[test]
    fn sibling_groups_are_untouched_by_a_leaf_event() {
        let mut net = SimNet::new(SizeModel::default());
        let mut rng = SeededRng::new(42);
        let mut c = build(&mut net, &mut rng, &[4, 4, 4]);
        let sibling0 = c.groups[0].clone();
        let sibling2 = c.groups[2].clone();

        net.begin_event("leave in G1".into(), GroupId(1), 4);
        run_leave(
            &mut c.groups[1],
            MemberId(7),
            MemberId(5),
            &mut rng,
            &mut net,
            &MutationSet::default(),
        )
        .unwrap();
        cascade_event(&mut c, 1, &mut net).unwrap();
        net.end_event();

        for (before, after) in [(&sibling0, &c.groups[0]), (&sibling2, &c.groups[2])] {
            assert_eq!(before.group_key, after.group_key);
            for (id, n) in &before.shared_nonces {
                assert_eq!(after.shared_nonces[id], *n, "sibling nonce changed");
            }
        }
    }

    #[test]
    fn excluded_child_never_learns_the_event_child_key() {
        let mut net = SimNet::new(SizeModel::default());
        let mut rng = SeededRng::new(43);
        let mut c = build(&mut net, &mut rng, &[3, 3, 3]);
        net.begin_event("leave in G2".into(), GroupId(2), 3);
        run_leave(
            &mut c.groups[2],
            MemberId(8),
            MemberId(7),
            &mut rng,
            &mut net,
            &MutationSet::default(),
        )
        .unwrap();
        cascade_event(&mut c, 2, &mut net).unwrap();
        net.end_event();

        let level = c.level.as_ref().unwrap();
        // Ring 0->1->2->0: pred(2) = 1 is excluded, its view of child 2 is
        // stale; everyone still agrees on the super key.
        assert!(c.agreement_holds());
        assert_ne!(level.views[&1].get(&2), Some(&c.groups[2].group_key));
        assert_eq!(level.views[&0][&2], c.groups[2].group_key);
    }

    #[test]
    fn single_group_cascade_is_degenerate() {
        let mut net = SimNet::new(SizeModel::default());
        let mut rng = SeededRng::new(44);
        let mut c = build(&mut net, &mut rng, &[4]);
        assert_eq!(c.top_key(), c.groups[0].group_key);
        net.begin_event("leave".into(), GroupId(0), 4);
        run_leave(
            &mut c.groups[0],
            MemberId(2),
            MemberId(1),
            &mut rng,
            &mut net,
            &MutationSet::default(),
        )
        .unwrap();
        cascade_event(&mut c, 0, &mut net).unwrap();
        net.end_event();
        assert_eq!(c.top_key(), c.groups[0].group_key);
        assert!(c.agreement_holds());
    }
}
