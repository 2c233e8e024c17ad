//! Merge protocol: splices a requesting group into a host group.
//!
//! The requester's sponsor relays a sealed join request that only the host
//! sponsor can open (it is sealed under the host sponsor's private
//! multicast key). The host sponsor rehashes its own nonce with the old
//! host key: the backward-secrecy anchor: then plays state broker: host
//! state to the requester side, requester state to the host side, with the
//! requester's head/tail link cut and the whole requester ring spliced in
//! after the host sponsor. The merged group adopts the requester's key.
//!
//! Merging k groups runs a tournament bracket: pairs by ascending group
//! id, odd group passes through, ceil(log2 k) rounds.

use std::collections::BTreeMap;

use crate::group::{GroupSnapshot, MemberState};
use crate::id::MemberId;
use crate::primitives::{Digest, Nonce};
use crate::simnet::{KeyClass, Lane, MessageSpec, Mode, OpScope, PayloadItem, SimNet};

use super::auth::{AuthServer, MergeTicket};
use super::{install_ring, MutationSet, ProtocolError, AUTH_SENDER};

struct ParsedRequest {
    b_key: Digest,
    b_nonces: BTreeMap<MemberId, Nonce>,
    requester_share: Digest,
    tail_share: Digest,
    host_share: Digest,
    sig: Digest,
}

fn parse_request(items: &[PayloadItem]) -> Result<ParsedRequest, ProtocolError> {
    let malformed = || ProtocolError::InvalidTag("malformed merge request".into());
    if items.len() < 6 {
        return Err(malformed());
    }
    let b_key = match items[0] {
        PayloadItem::Key(k) => k,
        _ => return Err(malformed()),
    };
    let sig = match items[items.len() - 1] {
        PayloadItem::Sig(s) => s,
        _ => return Err(malformed()),
    };
    let shares: Vec<Digest> = items[items.len() - 4..items.len() - 1]
        .iter()
        .map(|i| match i {
            PayloadItem::Key(k) => Ok(*k),
            _ => Err(malformed()),
        })
        .collect::<Result<_, _>>()?;
    let mut b_nonces = BTreeMap::new();
    for item in &items[1..items.len() - 4] {
        match item {
            PayloadItem::Nonce(n) => {
                b_nonces.insert(n.origin, *n);
            }
            _ => return Err(malformed()),
        }
    }
    Ok(ParsedRequest {
        b_key,
        b_nonces,
        requester_share: shares[0],
        tail_share: shares[1],
        host_share: shares[2],
        sig,
    })
}

pub fn run_merge_pair(
    host: &mut GroupSnapshot,
    requester: GroupSnapshot,
    ticket: &MergeTicket,
    net: &mut SimNet,
    muts: &MutationSet,
) -> Result<(), ProtocolError> {
    for id in requester.ring.order() {
        if host.ring.contains(*id) {
            return Err(ProtocolError::IdCollision);
        }
    }
    let sponsor = ticket.host_sponsor;
    let sponsor_succ = host.ring.succ(sponsor)?;
    let sponsor_pred = host.ring.pred(sponsor)?;
    let head = ticket.requester_sponsor;
    let tail = requester.ring.succ(head)?;
    let old_host_key = host.group_key;
    let host_lineage_before = host.lineage.clone();
    let admission_seq = net.trace.next_seq();
    // The rehash retires this value: no admitted member may end up
    // holding it.
    let retired_sponsor_nonce = host.shared_nonces[&sponsor];

    // Step 1: the requester sponsor relays the sealed join request; only
    // the host sponsor holds every nonce of its own state vector, so only
    // it can derive the sealing key.
    net.step("merge.request");
    let request_hint: Vec<MemberId> = host
        .ring
        .order()
        .iter()
        .copied()
        .filter(|id| *id != sponsor_pred)
        .collect();
    let request = net.send(MessageSpec {
        lane: Lane::Wire,
        mode: Mode::Unicast,
        group: host.group_id,
        sender: head,
        recipients: vec![sponsor],
        key_hint: request_hint,
        payload: ticket.request_payload.clone(),
        seal_key: ticket.request_key,
        key_class: ticket.request_key_class.clone(),
    })?;
    let parsed = {
        let m = host.member(sponsor)?;
        let nonces: Vec<&Nonce> = m.state.entries.values().collect();
        let ky = net.multicast_key(OpScope::Protocol, &nonces, &m.group_key);
        let items = net
            .open_with(request, &ky)
            .map_err(|_| ProtocolError::InvalidTag("merge request does not open".into()))?;
        parse_request(&items)?
    };
    {
        let mac_key = host.member(sponsor)?.mac_key;
        let unsigned = &ticket.request_payload[..ticket.request_payload.len() - 1];
        let expect = net.mac(&mac_key, &crate::simnet::encode_payload(unsigned));
        if expect != parsed.sig {
            return Err(ProtocolError::InvalidTag(
                "merge request signature does not verify".into(),
            ));
        }
    }
    let b_key = parsed.b_key;
    let b_nonces = parsed.b_nonces;

    // Install the stub-issued state-transfer keys with their scoped
    // audiences; members received them on the private lane at ticket
    // time, so the install reads the ticket, not the sealed request.
    let mut requester = requester;
    for (id, m) in requester.members.iter_mut() {
        if *id == tail {
            m.session_keys.push(ticket.tail_share);
        } else {
            m.session_keys.push(ticket.requester_share);
        }
    }
    for (id, m) in host.members.iter_mut() {
        if *id != sponsor_succ {
            m.session_keys.push(ticket.host_share);
        }
    }

    // Step 2: host-side update broadcast. Everyone except the sponsor's
    // successor rehashes the sponsor nonce with the old host key.
    net.step("merge.update_a");
    let update_recipients: Vec<MemberId> = host
        .ring
        .order()
        .iter()
        .copied()
        .filter(|id| *id != sponsor_succ)
        .collect();
    let update = net.send(MessageSpec {
        lane: Lane::Wire,
        mode: Mode::Broadcast,
        group: host.group_id,
        sender: sponsor,
        recipients: update_recipients.clone(),
        key_hint: vec![],
        payload: vec![PayloadItem::Int(1)],
        seal_key: old_host_key,
        key_class: KeyClass::GroupKey,
    })?;
    let mut updated_sponsor_nonce = host.shared_nonces[&sponsor];
    for id in &update_recipients {
        if *id != sponsor {
            net.open_with(update, &old_host_key)
                .expect("host members hold the group key");
        }
        if muts.disable_merge_sponsor_rehash {
            continue;
        }
        let old = *host.member(*id)?.state.get(sponsor).expect("holds it");
        let rehashed = net.kdf(OpScope::Protocol, "NR", &old.bytes, old_host_key.as_bytes());
        let updated = Nonce {
            bytes: rehashed.0,
            origin: sponsor,
            version: old.version + 1,
        };
        let m = host.member_mut(*id)?;
        m.state.insert(updated);
        if m.id == sponsor {
            m.own_nonce = updated;
        }
        updated_sponsor_nonce = updated;
    }

    // Step 3: host sponsor shares its state vector with every requester
    // member except the tail, under the requester-side transfer key. The
    // re-linked members hold the same multicast-derivable material as
    // their neighbours, so only a stub-scoped key keeps the transcript
    // from handing them their excluded nonces later.
    net.step("merge.state_to_b");
    let sponsor_state_items: Vec<PayloadItem> = host
        .member(sponsor)?
        .state
        .entries
        .values()
        .map(|n| PayloadItem::Nonce(*n))
        .collect();
    let b_recipients: Vec<MemberId> = requester
        .ring
        .order()
        .iter()
        .copied()
        .filter(|id| *id != tail)
        .collect();
    let state_to_b = net.send(MessageSpec {
        lane: Lane::Wire,
        mode: Mode::Broadcast,
        group: host.group_id,
        sender: sponsor,
        recipients: b_recipients.clone(),
        key_hint: vec![head],
        payload: sponsor_state_items.clone(),
        seal_key: parsed.requester_share,
        key_class: KeyClass::Session,
    })?;
    let mut b_received: BTreeMap<MemberId, Vec<Nonce>> = BTreeMap::new();
    for id in &b_recipients {
        let items = net
            .open_with(state_to_b, &parsed.requester_share)
            .expect("requester member opens the state share");
        let nonces = items
            .iter()
            .filter_map(|i| match i {
                PayloadItem::Nonce(n) => Some(*n),
                _ => None,
            })
            .collect();
        b_received.insert(*id, nonces);
    }

    // Step 4: tail link. The tail learns the head nonce (its link to the
    // head breaks; it re-links behind the host sponsor) plus the host
    // state minus the sponsor nonce, under the tail's own transfer key.
    net.step("merge.tail_link");
    let mut tail_payload = vec![PayloadItem::Nonce(b_nonces[&head])];
    for n in host.member(sponsor)?.state.entries.values() {
        if n.origin != sponsor {
            tail_payload.push(PayloadItem::Nonce(*n));
        }
    }
    let tail_msg = net.send(MessageSpec {
        lane: Lane::Wire,
        mode: Mode::Unicast,
        group: host.group_id,
        sender: sponsor,
        recipients: vec![tail],
        key_hint: vec![tail],
        payload: tail_payload,
        seal_key: parsed.tail_share,
        key_class: KeyClass::Session,
    })?;
    let tail_received: Vec<Nonce> = net
        .open_with(tail_msg, &parsed.tail_share)
        .expect("tail opens its link message")
        .iter()
        .filter_map(|i| match i {
            PayloadItem::Nonce(n) => Some(*n),
            _ => None,
        })
        .collect();

    // Step 5: requester state and key to the host side under the
    // host-side transfer key, which the sponsor's successor never gets.
    net.step("merge.state_to_a");
    let mut state_to_a_payload: Vec<PayloadItem> = b_nonces
        .values()
        .map(|n| PayloadItem::Nonce(*n))
        .collect();
    state_to_a_payload.push(PayloadItem::Key(b_key));
    let state_to_a = net.send(MessageSpec {
        lane: Lane::Wire,
        mode: Mode::Broadcast,
        group: host.group_id,
        sender: sponsor,
        recipients: update_recipients.clone(),
        key_hint: vec![sponsor],
        payload: state_to_a_payload,
        seal_key: parsed.host_share,
        key_class: KeyClass::Session,
    })?;
    for id in &update_recipients {
        if *id == sponsor {
            continue;
        }
        net.open_with(state_to_a, &parsed.host_share)
            .expect("host member opens the requester state share");
    }

    // Step 6: the sponsor's predecessor forwards the updated sponsor nonce
    // plus the requester state (minus the head nonce: the successor's new
    // ring predecessor) to the sponsor's successor. In a two-member host
    // the predecessor *is* the successor, so the stub plays courier.
    net.step("merge.succ_link");
    let mut succ_payload = vec![PayloadItem::Nonce(updated_sponsor_nonce)];
    for n in b_nonces.values() {
        if n.origin != head {
            succ_payload.push(PayloadItem::Nonce(*n));
        }
    }
    succ_payload.push(PayloadItem::Key(b_key));
    let succ_received: Vec<PayloadItem> = if host.ring.len() >= 3 {
        let (seal_key, sender) = {
            let m = host.member(sponsor_pred)?;
            (
                net.multicast_key(OpScope::Protocol, &[&m.own_nonce], &old_host_key),
                sponsor_pred,
            )
        };
        let msg = net.send(MessageSpec {
            lane: Lane::Wire,
            mode: Mode::Unicast,
            group: host.group_id,
            sender,
            recipients: vec![sponsor_succ],
            key_hint: vec![sponsor_pred],
            payload: succ_payload,
            seal_key,
            key_class: KeyClass::Multicast {
                group_key: old_host_key,
            },
        })?;
        let ky = {
            let m = host.member(sponsor_succ)?;
            let pred_nonce = m.state.get(sponsor_pred).expect("always held");
            net.multicast_key(OpScope::Protocol, &[pred_nonce], &m.group_key)
        };
        net.open_with(msg, &ky)
            .expect("successor opens the link message")
    } else {
        let mac_key = host.member(sponsor)?.mac_key;
        let msg = net.send(MessageSpec {
            lane: Lane::Auth,
            mode: Mode::Unicast,
            group: host.group_id,
            sender: AUTH_SENDER,
            recipients: vec![sponsor_succ],
            key_hint: vec![],
            payload: succ_payload,
            seal_key: mac_key,
            key_class: KeyClass::AuthStub,
        })?;
        net.open_with(msg, &mac_key).expect("stub courier")
    };

    // Finish: apply the deliveries, splice the rings, adopt the key.
    net.step("merge.finish");
    let segment = requester.ring.walk_from(tail)?;
    let mut new_ring = host.ring.clone();
    new_ring.splice_after(sponsor, &segment)?;

    let host_ids: Vec<MemberId> = host.ring.order().to_vec();
    for id in &host_ids {
        let m = host.member_mut(*id)?;
        if *id == sponsor_succ {
            for item in &succ_received {
                match item {
                    PayloadItem::Nonce(n) => m.state.insert(*n),
                    PayloadItem::Key(k) => m.adopt_group_key(*k),
                    _ => {}
                }
            }
        } else {
            for n in b_nonces.values() {
                m.state.insert(*n);
            }
            m.adopt_group_key(b_key);
        }
    }

    let mut members = std::mem::take(&mut host.members);
    for (id, mut m) in requester.members {
        if id == tail {
            for n in &tail_received {
                m.state.insert(*n);
            }
        } else {
            for n in &b_received[&id] {
                m.state.insert(*n);
            }
        }
        m.state.insert(ticket.host_pred_nonce);
        members.insert(id, m);
    }
    host.members = members;

    for (id, n) in requester.shared_nonces {
        host.shared_nonces.insert(id, n);
    }
    host.shared_nonces.insert(sponsor, updated_sponsor_nonce);
    host.group_key = b_key;
    host.lineage.extend(requester.lineage.iter().copied());
    host.sponsor = host.default_sponsor(&[]).expect("non-empty");
    install_ring(host, &new_ring);
    net.record_epoch(host.group_id, host.lineage.clone(), b_key, "merge");

    let event = net.current_event().unwrap_or(0);
    let admitted: Vec<MemberState> = segment
        .iter()
        .map(|id| host.member(*id).map(|m| m.clone()))
        .collect::<Result<_, _>>()?;
    net.trace.admissions.push(crate::simnet::AdmissionRecord {
        seq: admission_seq,
        event,
        host_lineage: host_lineage_before,
        states: admitted,
        kind: "merge",
        retired: vec![(
            retired_sponsor_nonce.bytes,
            format!(
                "pre-merge nonce n[{}.v{}] of the host sponsor",
                retired_sponsor_nonce.origin, retired_sponsor_nonce.version
            ),
        )],
    });
    Ok(())
}

/// Merges `groups` into one by tournament bracket; returns the merged
/// group and the number of rounds (`ceil(log2 k)`).
pub fn run_merge_multi(
    mut groups: Vec<GroupSnapshot>,
    auth: &mut AuthServer,
    net: &mut SimNet,
    muts: &MutationSet,
) -> Result<(GroupSnapshot, usize), ProtocolError> {
    if groups.len() < 2 {
        return Err(ProtocolError::NotEnoughGroups);
    }
    groups.sort_by_key(|g| g.group_id);
    let mut rounds = 0;
    while groups.len() > 1 {
        rounds += 1;
        let mut next = Vec::with_capacity(groups.len().div_ceil(2));
        let mut iter = groups.into_iter();
        while let Some(mut host) = iter.next() {
            match iter.next() {
                Some(requester) => {
                    let ticket = auth.issue_merge_ticket(net, &host, &requester)?;
                    run_merge_pair(&mut host, requester, &ticket, net, muts)?;
                    next.push(host);
                }
                None => next.push(host), // odd group passes through
            }
        }
        next.sort_by_key(|g| g.group_id);
        groups = next;
    }
    Ok((groups.into_iter().next().unwrap(), rounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::check_ring_invariant;
    use crate::id::GroupId;
    use crate::primitives::{kdf2, SeededRng};
    use crate::protocol::bootstrap_group;
    use crate::simnet::SizeModel;
    use std::collections::BTreeSet;

    struct Fixture {
        net: SimNet,
        auth: AuthServer,
        rng: SeededRng,
    }

    impl Fixture {
        fn new(seed: u64) -> Self {
            let rng = SeededRng::new(seed);
            Fixture {
                net: SimNet::new(SizeModel::default()),
                auth: AuthServer::new(rng.derive("auth")),
                rng,
            }
        }

        fn group(&mut self, gid: u32, ids: &[u32]) -> GroupSnapshot {
            self.net
                .begin_event(format!("bootstrap G{gid}"), GroupId(gid), ids.len());
            let ids: Vec<MemberId> = ids.iter().map(|i| MemberId(*i)).collect();
            self.auth.register_all(ids.iter().copied());
            let g = bootstrap_group(
                &mut self.net,
                GroupId(gid),
                ids,
                &mut self.rng,
                self.auth.mac_key,
            )
            .unwrap();
            self.net.end_event();
            g
        }
    }

    #[test]
    fn figure_scenario_two_triples() {
        // Host {1,2,3} with sponsor 2; requester {4,5,6} with sponsor 6
        // (head), so the tail is 4. The requester ring enters between the
        // host sponsor and its successor: 1,2,[4,5,6],3.
        let mut fx = Fixture::new(31);
        let mut a = fx.group(0, &[1, 2, 3]);
        let mut b = fx.group(1, &[4, 5, 6]);
        a.sponsor = MemberId(2);
        b.sponsor = MemberId(6);
        let old_a_key = a.group_key;
        let b_key = b.group_key;
        let n2_old = a.shared_nonces[&MemberId(2)];

        fx.net.begin_event("merge".into(), a.group_id, a.len());
        let ticket = fx.auth.issue_merge_ticket(&mut fx.net, &a, &b).unwrap();
        run_merge_pair(&mut a, b, &ticket, &mut fx.net, &MutationSet::default()).unwrap();
        fx.net.end_event();

        assert_eq!(check_ring_invariant(&a), vec![]);
        assert_eq!(
            a.ring.order(),
            &[
                MemberId(1),
                MemberId(2),
                MemberId(4),
                MemberId(5),
                MemberId(6),
                MemberId(3)
            ]
        );
        // All six members share the requester's key.
        assert_eq!(a.group_key, b_key);
        for m in a.members.values() {
            assert_eq!(m.group_key, b_key);
        }
        // Sponsor nonce rehashed with the old host key.
        let expect = kdf2("NR", &n2_old.bytes, old_a_key.as_bytes()).unwrap();
        assert_eq!(a.shared_nonces[&MemberId(2)].bytes, expect.0);
        assert_eq!(a.shared_nonces[&MemberId(2)].version, 1);

        // Link cuts: the tail (4) must not know the updated sponsor nonce;
        // the host successor (3) must not know the head nonce (6).
        assert!(!a.member(MemberId(4)).unwrap().state.contains(MemberId(2)));
        assert!(!a.member(MemberId(3)).unwrap().state.contains(MemberId(6)));

        // Six wire messages per pair merge: 3 unicast + 3 broadcast.
        let ev = fx.net.ledger_for_event(2).unwrap();
        assert_eq!((ev.totals.uc_count, ev.totals.bc_count), (3, 3));
    }

    #[test]
    fn id_collision_is_refused() {
        let mut fx = Fixture::new(32);
        let mut a = fx.group(0, &[1, 2, 3]);
        let b = fx.group(1, &[3, 4, 5]);
        fx.net.begin_event("merge".into(), a.group_id, a.len());
        let ticket = fx.auth.issue_merge_ticket(&mut fx.net, &a, &b).unwrap();
        let err = run_merge_pair(&mut a, b, &ticket, &mut fx.net, &MutationSet::default());
        assert!(matches!(err.unwrap_err(), ProtocolError::IdCollision));
    }

    #[test]
    fn six_groups_merge_in_three_rounds() {
        let mut fx = Fixture::new(33);
        let groups: Vec<GroupSnapshot> = (0..6)
            .map(|gi| {
                let base = 1 + gi * 10;
                fx.group(gi, &[base, base + 1, base + 2])
            })
            .collect();
        fx.net.begin_event("merge x6".into(), GroupId(0), 18);
        let (merged, rounds) = run_merge_multi(
            groups,
            &mut fx.auth,
            &mut fx.net,
            &MutationSet::default(),
        )
        .unwrap();
        fx.net.end_event();
        assert_eq!(rounds, 3);
        assert_eq!(merged.len(), 18);
        assert_eq!(check_ring_invariant(&merged), vec![]);
    }

    #[test]
    fn two_groups_is_the_base_case() {
        let mut fx = Fixture::new(34);
        let a = fx.group(0, &[1, 2, 3, 4]);
        let b = fx.group(1, &[11, 12]);
        fx.net.begin_event("merge".into(), GroupId(0), 6);
        let (merged, rounds) =
            run_merge_multi(vec![a, b], &mut fx.auth, &mut fx.net, &MutationSet::default())
                .unwrap();
        fx.net.end_event();
        assert_eq!(rounds, 1);
        assert_eq!(merged.len(), 6);
        assert_eq!(check_ring_invariant(&merged), vec![]);
    }

    #[test]
    fn two_member_host_uses_the_stub_courier() {
        let mut fx = Fixture::new(35);
        let mut a = fx.group(0, &[1, 2]);
        let b = fx.group(1, &[5, 6, 7]);
        fx.net.begin_event("merge".into(), a.group_id, 2);
        let ticket = fx.auth.issue_merge_ticket(&mut fx.net, &a, &b).unwrap();
        run_merge_pair(&mut a, b, &ticket, &mut fx.net, &MutationSet::default()).unwrap();
        fx.net.end_event();
        assert_eq!(check_ring_invariant(&a), vec![]);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn fifteen_groups_of_seven_form_one_ring_of_105() {
        let mut fx = Fixture::new(36);
        let groups: Vec<GroupSnapshot> = (0..15)
            .map(|gi| {
                let base = 1 + gi * 100;
                let ids: Vec<u32> = (base..base + 7).collect();
                fx.group(gi, &ids)
            })
            .collect();
        fx.net.begin_event("merge x15".into(), GroupId(0), 105);
        let (merged, rounds) = run_merge_multi(
            groups,
            &mut fx.auth,
            &mut fx.net,
            &MutationSet::default(),
        )
        .unwrap();
        fx.net.end_event();
        assert_eq!(rounds, 4); // ceil(log2 15)
        assert_eq!(merged.len(), 105);
        assert_eq!(check_ring_invariant(&merged), vec![]);
        let all_ids: BTreeSet<MemberId> = merged.ring.order().iter().copied().collect();
        assert_eq!(all_ids.len(), 105);
    }
}
