//! Join protocol.
//!
//! The joiner relays its sealed credential as a broadcast join request;
//! every member that holds the sponsor's nonce verifies it, adopts the
//! joiner's nonce and rekeys to `Hash(K_G, n_sponsor)`. The sponsor wraps
//! the new key for the joiner under the private session key from the tag,
//! and the sponsor's predecessor forwards the sponsor nonce to the
//! sponsor's old successor, which re-links the ring around the joiner.

use crate::group::{GroupSnapshot, MemberState, StateVector};
use crate::primitives::Digest;
use crate::simnet::{KeyClass, Lane, MessageSpec, Mode, OpScope, PayloadItem, SimNet};

use super::auth::{AuthServer, JoinTag};
use super::{install_ring, MutationSet, ProtocolError, AUTH_SENDER};

fn parse_part2(items: &[PayloadItem]) -> Result<(Digest, Digest), ProtocolError> {
    match items {
        [PayloadItem::Sig(sig), PayloadItem::Key(k)] => Ok((*sig, *k)),
        _ => Err(ProtocolError::InvalidTag("malformed join request".into())),
    }
}

pub fn run_join(
    g: &mut GroupSnapshot,
    tag: &JoinTag,
    net: &mut SimNet,
    muts: &MutationSet,
) -> Result<(), ProtocolError> {
    if g.ring.contains(tag.joiner) {
        return Err(ProtocolError::AlreadyMember(tag.joiner));
    }
    if !g.ring.contains(tag.sponsor) {
        return Err(ProtocolError::NotAMember(tag.sponsor));
    }
    let sponsor = tag.sponsor;
    let joiner = tag.joiner;
    // Admission timestamp: every key the event itself establishes counts
    // as post-admission.
    let admission_seq = net.trace.next_seq();
    let old_key = g.group_key;
    let sponsor_succ = g.ring.succ(sponsor)?;
    let sponsor_pred = g.ring.pred(sponsor)?;

    // Step 1: the joiner multicasts the join request (the relayed second
    // tag part). Everyone holding the sponsor nonce can open; the
    // sponsor's successor cannot.
    net.step("join.request");
    let request = net.send(MessageSpec {
        lane: Lane::Wire,
        mode: Mode::Broadcast,
        group: g.group_id,
        sender: joiner,
        recipients: g.ring.order().to_vec(),
        key_hint: vec![sponsor],
        payload: tag.part2_payload.clone(),
        seal_key: tag.part2_key,
        key_class: tag.part2_key_class.clone(),
    })?;

    // The joiner-nonce value reached the same audience over the private
    // lane at tag-issue time; openers verify the relayed signature over it.
    let n_j = tag.joiner_nonce;
    let mut session_key = None;
    let mut openers = Vec::new();
    for id in g.ring.order().to_vec() {
        let (ky, mac_key) = {
            let m = g.member(id)?;
            let Some(sponsor_nonce) = m.state.get(sponsor) else {
                continue; // succ(sponsor): the request is opaque to it
            };
            (
                net.multicast_key(OpScope::Protocol, &[sponsor_nonce], &m.group_key),
                m.mac_key,
            )
        };
        let items = net
            .open_with(request, &ky)
            .map_err(|_| ProtocolError::InvalidTag("join request does not open".into()))?;
        let (sig, k_x) = parse_part2(&items)?;
        if !AuthServer::verify_nonce_sig(net, &mac_key, &n_j, &sig) {
            // Abort before any state mutation: the group is unchanged.
            return Err(ProtocolError::InvalidTag(
                "signature on joiner nonce does not verify".into(),
            ));
        }
        session_key = Some(k_x);
        openers.push(id);
    }
    let k_x = session_key.expect("session key travels with the request");

    // Step 2: everyone who received the request adopts the joiner nonce
    // and derives the next group key from the sponsor nonce.
    net.step("join.rekey");
    let mut new_key = old_key;
    for id in &openers {
        let m = g.member_mut(*id)?;
        let sponsor_nonce = m.state.get(sponsor).expect("opener holds it").bytes;
        m.state.insert(n_j);
        let k = if muts.disable_join_key_mix {
            old_key
        } else {
            net.kdf(OpScope::Protocol, "GK-join", old_key.as_bytes(), &sponsor_nonce)
        };
        g.member_mut(*id)?.adopt_group_key(k);
        new_key = k;
    }

    // Step 3: the sponsor wraps the new group key for the joiner under the
    // session key; the joiner then opens the first tag part and installs
    // its state vector.
    net.step("join.key_to_joiner");
    let key_msg = net.send(MessageSpec {
        lane: Lane::Wire,
        mode: Mode::Unicast,
        group: g.group_id,
        sender: sponsor,
        recipients: vec![joiner],
        key_hint: vec![joiner],
        payload: vec![PayloadItem::Key(new_key)],
        seal_key: k_x,
        key_class: KeyClass::Session,
    })?;
    // The joiner opens with its own credential copy of the session key.
    let delivered = net
        .open_with(key_msg, &tag.session_key)
        .map_err(|_| ProtocolError::InvalidTag("joiner cannot open the key delivery".into()))?;
    let delivered_key = match delivered.as_slice() {
        [PayloadItem::Key(k)] => *k,
        _ => unreachable!("fixed payload shape"),
    };
    let part1_items = net
        .open_with(tag.part1_msg, &delivered_key)
        .map_err(|_| ProtocolError::InvalidTag("tag part1 does not open under the new key".into()))?;
    let mut joiner_state = StateVector::new();
    for item in &part1_items {
        if let PayloadItem::Nonce(n) = item {
            joiner_state.insert(*n);
        }
    }
    let mac_key = g.members.values().next().expect("non-empty group").mac_key;

    // Step 4: the sponsor's predecessor forwards the sponsor nonce to the
    // sponsor's old successor, breaking the sponsor->successor link. In a
    // two-member group no third member knows the sponsor nonce, so the
    // authentication stub plays courier.
    net.step("join.nonce_forward");
    let forwarded_sponsor_nonce;
    if g.ring.len() >= 3 {
        let (seal_key, nonce_to_send) = {
            let sender = g.member(sponsor_pred)?;
            let ky = net.multicast_key(OpScope::Protocol, &[&sender.own_nonce], &old_key);
            (ky, *sender.state.get(sponsor).expect("holds sponsor nonce"))
        };
        let fwd = net.send(MessageSpec {
            lane: Lane::Wire,
            mode: Mode::Unicast,
            group: g.group_id,
            sender: sponsor_pred,
            recipients: vec![sponsor_succ],
            key_hint: vec![sponsor_pred],
            payload: vec![PayloadItem::Nonce(nonce_to_send)],
            seal_key,
            key_class: KeyClass::Multicast { group_key: old_key },
        })?;
        let receiver_key = {
            let m = g.member(sponsor_succ)?;
            let pred_nonce = m.state.get(sponsor_pred).expect("always held");
            net.multicast_key(OpScope::Protocol, &[pred_nonce], &m.group_key)
        };
        let items = net
            .open_with(fwd, &receiver_key)
            .map_err(|_| ProtocolError::InvalidTag("nonce forward does not open".into()))?;
        forwarded_sponsor_nonce = match items.as_slice() {
            [PayloadItem::Nonce(n)] => *n,
            _ => unreachable!("fixed payload shape"),
        };
    } else {
        let sponsor_nonce = g.shared_nonces[&sponsor];
        let fwd = net.send(MessageSpec {
            lane: Lane::Auth,
            mode: Mode::Unicast,
            group: g.group_id,
            sender: AUTH_SENDER,
            recipients: vec![sponsor_succ],
            key_hint: vec![],
            payload: vec![PayloadItem::Nonce(sponsor_nonce)],
            seal_key: mac_key,
            key_class: KeyClass::AuthStub,
        })?;
        let items = net.open_with(fwd, &mac_key).expect("stub courier");
        forwarded_sponsor_nonce = match items.as_slice() {
            [PayloadItem::Nonce(n)] => *n,
            _ => unreachable!("fixed payload shape"),
        };
    }

    // Step 5: the sponsor's old successor learns the sponsor nonce and
    // catches up on the rekey. It never sees the joiner's nonce: the new
    // ring places the joiner right before it.
    net.step("join.finish");
    {
        let m = g.member_mut(sponsor_succ)?;
        m.state.insert(forwarded_sponsor_nonce);
        let k = if muts.disable_join_key_mix {
            old_key
        } else {
            net.kdf(
                OpScope::Protocol,
                "GK-join",
                old_key.as_bytes(),
                &forwarded_sponsor_nonce.bytes,
            )
        };
        g.member_mut(sponsor_succ)?.adopt_group_key(k);
    }

    let mut new_ring = g.ring.clone();
    new_ring.insert_after(sponsor, joiner)?;
    g.members.insert(
        joiner,
        MemberState {
            id: joiner,
            own_nonce: tag.joiner_nonce,
            state: joiner_state,
            ring: new_ring.clone(),
            group_key: delivered_key,
            held_keys: vec![delivered_key],
            session_keys: vec![k_x],
            mac_key,
        },
    );
    g.shared_nonces.insert(joiner, n_j);
    g.group_key = new_key;
    install_ring(g, &new_ring);
    net.record_epoch(g.group_id, g.lineage.clone(), new_key, "join");

    let event = net.current_event().unwrap_or(0);
    let joiner_snapshot = g.member(joiner)?.clone();
    net.trace.admissions.push(crate::simnet::AdmissionRecord {
        seq: admission_seq,
        event,
        host_lineage: g.lineage.clone(),
        states: vec![joiner_snapshot],
        kind: "join",
        retired: Vec::new(),
    });
    Ok(())
}
