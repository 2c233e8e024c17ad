//! Leave protocol.
//!
//! The sponsor multicasts a fresh random nonce under the multicast key
//! indexed by the departed member's ring predecessor: the one nonce the
//! departed member never held. Survivors rehash the sponsor nonce with the
//! random nonce and the predecessor nonce with the departed nonce, which
//! cuts the departed member out of both the key and the ring. The single
//! survivor that cannot recompute the new key (it never held the sponsor's
//! old nonce, or the mix-in from the departed member) receives it by
//! unicast under old-value keys retained for exactly this window.

use crate::group::GroupSnapshot;
use crate::id::MemberId;
use crate::primitives::{Nonce, SeededRng};
use crate::simnet::{KeyClass, Lane, MessageSpec, Mode, OpScope, PayloadItem, SimNet};

use super::{install_ring, MutationSet, ProtocolError, AUTH_SENDER};

pub fn run_leave(
    g: &mut GroupSnapshot,
    departing: MemberId,
    sponsor: MemberId,
    rng: &mut SeededRng,
    net: &mut SimNet,
    muts: &MutationSet,
) -> Result<(), ProtocolError> {
    if !g.ring.contains(departing) {
        return Err(ProtocolError::NotAMember(departing));
    }
    if !g.ring.contains(sponsor) {
        return Err(ProtocolError::NotAMember(sponsor));
    }
    if sponsor == departing {
        return Err(ProtocolError::SponsorDeparting(sponsor));
    }
    if g.ring.len() < 3 {
        return Err(ProtocolError::GroupWouldShrinkBelowTwo);
    }

    let pred_dep = g.ring.pred(departing)?;
    let old_key = g.group_key;
    let old_pred_nonce = g.shared_nonces[&pred_dep];
    let old_sponsor_nonce = g.shared_nonces[&sponsor];
    let departed_nonce = g.shared_nonces[&departing];
    let survivors: Vec<MemberId> = g
        .ring
        .order()
        .iter()
        .copied()
        .filter(|id| *id != departing)
        .collect();

    // Terminal knowledge of the departing member, stamped at removal time
    // so every key the event itself establishes counts as post-removal.
    let removal_seq = net.trace.next_seq();
    let removal_states = vec![g.member(departing)?.clone()];

    // Step 1: announce. Fresh n_random sealed under K_Y indexed by the
    // departed member's predecessor; the departed member lacks that nonce
    // and cannot read it.
    net.step("leave.announce");
    let n_random = Nonce {
        bytes: rng.next_bytes(),
        origin: AUTH_SENDER,
        version: 0,
    };
    let announce_key = {
        let m = g.member(sponsor)?;
        let pred_nonce = m
            .state
            .get(pred_dep)
            .expect("sponsor always holds the departed member's predecessor nonce");
        net.multicast_key(OpScope::Protocol, &[pred_nonce], &m.group_key)
    };
    let announce = net.send(MessageSpec {
        lane: Lane::Wire,
        mode: Mode::Broadcast,
        group: g.group_id,
        sender: sponsor,
        recipients: survivors.clone(),
        key_hint: vec![pred_dep],
        payload: vec![PayloadItem::Nonce(n_random), PayloadItem::Id(departing)],
        seal_key: announce_key,
        key_class: KeyClass::Multicast { group_key: old_key },
    })?;
    for id in &survivors {
        if *id == sponsor {
            continue; // sender holds the plaintext
        }
        let ky = {
            let m = g.member(*id)?;
            let pred_nonce = m.state.get(pred_dep).expect("survivors hold it");
            net.multicast_key(OpScope::Protocol, &[pred_nonce], &m.group_key)
        };
        net.open_with(announce, &ky)
            .expect("survivor-derived key opens the announce");
    }

    // Step 2: local rekey. Old values are retained until the key-forward
    // step completes, then dropped.
    net.step("leave.rekey");
    let sponsor_is_pred = pred_dep == sponsor; // departing == succ(sponsor)
    let mut new_key = None;
    let mut needy: Vec<MemberId> = Vec::new();
    let mut final_sponsor_nonce: Option<Nonce> = None;
    let mut final_pred_nonce: Option<Nonce> = None;

    for id in &survivors {
        let holds_dep = g.member(*id)?.state.contains(departing);
        let holds_sponsor = g.member(*id)?.state.contains(sponsor);
        let holds_pred = g.member(*id)?.state.contains(pred_dep);

        if muts.disable_leave_nonce_rehash {
            // Mutant: no nonce evolves; the new key mixes the stale
            // sponsor nonce with n_random.
            if holds_sponsor {
                let k = net.kdf(
                    OpScope::Protocol,
                    "GK-leave",
                    &old_sponsor_nonce.bytes,
                    &n_random.bytes,
                );
                g.member_mut(*id)?.adopt_group_key(k);
                new_key = Some(k);
            } else {
                needy.push(*id);
            }
            g.member_mut(*id)?.state.remove(departing);
            continue;
        }

        if sponsor_is_pred {
            // The departed member sat right after the sponsor: the sponsor
            // nonce takes both rehashes, link mix-in first, then the
            // random nonce.
            if holds_sponsor && holds_dep {
                let linked = {
                    let linked = net.kdf(
                        OpScope::Protocol,
                        "NR",
                        &old_sponsor_nonce.bytes,
                        &departed_nonce.bytes,
                    );
                    Nonce {
                        bytes: linked.0,
                        origin: sponsor,
                        version: old_sponsor_nonce.version + 1,
                    }
                };
                let randomized = net.kdf(OpScope::Protocol, "NR", &linked.bytes, &n_random.bytes);
                let updated = Nonce {
                    bytes: randomized.0,
                    origin: sponsor,
                    version: linked.version + 1,
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
                final_sponsor_nonce = Some(updated);
                new_key = Some(k);
            } else {
                // succ(departing): lacks the departed nonce, cannot follow
                // the link rehash; the updated sponsor nonce becomes its
                // new excluded predecessor value.
                g.member_mut(*id)?.state.remove(sponsor);
                needy.push(*id);
            }
            g.member_mut(*id)?.state.remove(departing);
            continue;
        }

        // General case: predecessor-of-departed rehash with the departed
        // nonce (cuts succ(departing) out of that value) ...
        if holds_pred {
            if holds_dep {
                let rehashed = net.kdf(
                    OpScope::Protocol,
                    "NR",
                    &old_pred_nonce.bytes,
                    &departed_nonce.bytes,
                );
                let updated = Nonce {
                    bytes: rehashed.0,
                    origin: pred_dep,
                    version: old_pred_nonce.version + 1,
                };
                let m = g.member_mut(*id)?;
                m.state.insert(updated);
                if m.id == pred_dep {
                    m.own_nonce = updated;
                }
                final_pred_nonce = Some(updated);
            } else {
                // succ(departing): its new ring predecessor is pred_dep,
                // whose updated nonce it must not know.
                g.member_mut(*id)?.state.remove(pred_dep);
            }
        }
        // ... and the sponsor rehash with n_random, feeding the new key.
        if holds_sponsor {
            let rehashed = net.kdf(
                OpScope::Protocol,
                "NR",
                &old_sponsor_nonce.bytes,
                &n_random.bytes,
            );
            let updated = Nonce {
                bytes: rehashed.0,
                origin: sponsor,
                version: old_sponsor_nonce.version + 1,
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
            final_sponsor_nonce = Some(updated);
            new_key = Some(k);
        } else {
            // Old succ(sponsor): never held the sponsor nonce.
            needy.push(*id);
        }
        g.member_mut(*id)?.state.remove(departing);
    }
    let new_key = new_key.expect("at least the sponsor rekeys");

    // Step 3: forward the group key (and the survivor roster) to the one
    // member that could not derive it, sealed under the *retained old*
    // predecessor-indexed key.
    net.step("leave.key_forward");
    for target in &needy {
        let seal_key = {
            let m = g.member(sponsor)?;
            let _ = m;
            // Retention window: both sides use the pre-rekey value.
            net.multicast_key(OpScope::Protocol, &[&old_pred_nonce], &old_key)
        };
        let mut payload = vec![PayloadItem::Key(new_key)];
        for id in &survivors {
            payload.push(PayloadItem::Id(*id));
        }
        let msg = net.send(MessageSpec {
            lane: Lane::Wire,
            mode: Mode::Unicast,
            group: g.group_id,
            sender: sponsor,
            recipients: vec![*target],
            key_hint: vec![pred_dep],
            payload,
            seal_key,
            key_class: KeyClass::Multicast { group_key: old_key },
        })?;
        let receiver_key = net.multicast_key(OpScope::Protocol, &[&old_pred_nonce], &old_key);
        let items = net
            .open_with(msg, &receiver_key)
            .expect("needy survivor retained the old values");
        if let Some(PayloadItem::Key(k)) = items.first() {
            g.member_mut(*target)?.adopt_group_key(*k);
        }
    }

    // Finish: ground truth and ring views.
    let mut new_ring = g.ring.clone();
    new_ring.remove(departing)?;
    g.members.remove(&departing);
    g.shared_nonces.remove(&departing);
    if let Some(n) = final_sponsor_nonce {
        g.shared_nonces.insert(sponsor, n);
    }
    if let Some(n) = final_pred_nonce {
        g.shared_nonces.insert(pred_dep, n);
    }
    g.group_key = new_key;
    g.sponsor = sponsor;
    install_ring(g, &new_ring);
    net.record_epoch(g.group_id, g.lineage.clone(), new_key, "leave");

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
