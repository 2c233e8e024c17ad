//! Authentication-server stub.
//!
//! Real deployments authenticate joiners with an independent protocol; here
//! the stub is an omniscient oracle that knows the sponsor's secret nonce,
//! shares a MAC key with all legitimate members, and hands out joining
//! credentials over a private lane that the symbolic adversary cannot see.

use std::collections::BTreeSet;

use crate::group::GroupSnapshot;
use crate::id::MemberId;
use crate::primitives::{next_nonce, Digest, Nonce, SealedBox, SeededRng};
use crate::simnet::{KeyClass, Lane, MessageSpec, Mode, OpScope, PayloadItem, SimNet};

use super::{ProtocolError, AUTH_SENDER};

/// The two-part joining credential. `part1` is the joiner's future state
/// vector sealed under the *updated* group key; `part2` is the signed
/// joiner nonce (plus the private session key) sealed under the multicast
/// key indexed by the sponsor alone. The joiner can read neither part
/// until the join protocol completes.
#[derive(Clone, Debug)]
pub struct JoinTag {
    pub part1: SealedBox,
    pub part2: SealedBox,
    pub joiner: MemberId,
    pub sponsor: MemberId,
    /// Transcript index of the part1 handoff; the joiner opens it once it
    /// holds the new group key.
    pub(crate) part1_msg: usize,
    /// Relayed verbatim as the join-request broadcast.
    pub(crate) part2_payload: Vec<PayloadItem>,
    pub(crate) part2_key: Digest,
    pub(crate) part2_key_class: KeyClass,
    /// Private half handed to the joiner over the authentication lane.
    pub(crate) joiner_nonce: Nonce,
    pub(crate) session_key: Digest,
}

/// Credential for a group-merge: the requesting group's sponsor relays the
/// sealed request to the host sponsor; every requester member additionally
/// learns the nonce of the host sponsor's ring predecessor (the one value
/// the host sponsor's own state vector cannot supply).
///
/// The ticket also issues three private state-transfer keys. Inside a
/// merged group the re-linked members (the requester tail and the host
/// sponsor's successor) hold the same nonce/key material as their
/// neighbours, so no multicast key can deliver the link state to one while
/// hiding it from the other: a recorded transcript would hand every
/// member its own excluded predecessor nonce. The stub therefore scopes
/// each state-transfer message with a session key: one for the requester
/// side minus the tail, one for the tail, one for the host side minus the
/// sponsor's successor.
#[derive(Clone, Debug)]
pub struct MergeTicket {
    pub host_sponsor: MemberId,
    pub requester_sponsor: MemberId,
    pub(crate) request_payload: Vec<PayloadItem>,
    pub(crate) request_key: Digest,
    pub(crate) request_key_class: KeyClass,
    pub(crate) host_pred_nonce: Nonce,
    pub(crate) requester_share: Digest,
    pub(crate) tail_share: Digest,
    pub(crate) host_share: Digest,
}

/// Omniscient authentication stub: registry of authorized ids plus the
/// MAC key shared with all legitimate members.
pub struct AuthServer {
    pub mac_key: Digest,
    pub registry: BTreeSet<MemberId>,
    rng: SeededRng,
}

impl AuthServer {
    pub fn new(rng: SeededRng) -> Self {
        let mut rng = rng;
        let mac_key = Digest(rng.next_bytes());
        AuthServer {
            mac_key,
            registry: BTreeSet::new(),
            rng,
        }
    }

    pub fn register(&mut self, id: MemberId) {
        self.registry.insert(id);
    }

    pub fn register_all(&mut self, ids: impl IntoIterator<Item = MemberId>) {
        for id in ids {
            self.registry.insert(id);
        }
    }

    fn mac_input(nonce: &Nonce) -> Vec<u8> {
        let mut data = Vec::with_capacity(40);
        data.extend_from_slice(&nonce.origin.0.to_le_bytes());
        data.extend_from_slice(&nonce.version.to_le_bytes());
        data.extend_from_slice(&nonce.bytes);
        data
    }

    pub(crate) fn verify_nonce_sig(
        net: &mut SimNet,
        mac_key: &Digest,
        nonce: &Nonce,
        sig: &Digest,
    ) -> bool {
        net.mac(mac_key, &Self::mac_input(nonce)) == *sig
    }

    /// Issues a joining tag for `joiner`, sponsored by `g.sponsor`.
    ///
    /// The handoff itself travels the private authentication lane: the
    /// part1 state vector is priced as keying material (it is the dominant
    /// byte term of a join), the session credential into the auth
    /// sub-counter.
    pub fn issue_join_tag(
        &mut self,
        net: &mut SimNet,
        g: &GroupSnapshot,
        joiner: MemberId,
        muts: &super::MutationSet,
    ) -> Result<JoinTag, ProtocolError> {
        if !self.registry.contains(&joiner) {
            return Err(ProtocolError::AuthRefused(joiner));
        }
        if g.ring.contains(joiner) {
            return Err(ProtocolError::AlreadyMember(joiner));
        }
        let sponsor = g.sponsor;
        net.step("join.tag_issue");

        let joiner_nonce = next_nonce(&mut self.rng, joiner);
        let session_key = Digest(self.rng.next_bytes());
        let sponsor_nonce = g.shared_nonces[&sponsor];

        // Part 1: the joiner's state vector, sealed under the updated
        // group key Hash(K_G, n_sponsor). The joiner's ring predecessor
        // will be the sponsor, so the sponsor's nonce is excluded.
        let updated_key = if muts.disable_join_key_mix {
            g.group_key
        } else {
            net.kdf(
                OpScope::AuthStub,
                "GK-join",
                g.group_key.as_bytes(),
                &sponsor_nonce.bytes,
            )
        };
        let mut part1_items: Vec<PayloadItem> = vec![PayloadItem::Nonce(joiner_nonce)];
        for (id, n) in &g.shared_nonces {
            if *id != sponsor {
                part1_items.push(PayloadItem::Nonce(*n));
            }
        }
        let part1_msg = net.send(MessageSpec {
            lane: Lane::AuthKeying,
            mode: Mode::Unicast,
            group: g.group_id,
            sender: AUTH_SENDER,
            recipients: vec![joiner],
            key_hint: vec![],
            payload: part1_items.clone(),
            seal_key: updated_key,
            key_class: KeyClass::GroupKey,
        })?;
        let part1 = net.transcript[part1_msg].sealed.clone();

        // Part 2: the signed joiner nonce plus the private session key,
        // sealed under the sponsor-indexed multicast key. Relayed by the
        // joiner as the join request; opaque to the joiner itself. The
        // nonce *value* rides the private lane to the same audience
        // instead: once the sponsor's successor learns the sponsor nonce
        // in the final join step, a wire copy of the request would hand it
        // the joiner nonce: its own new excluded link: on replay.
        let sig = net.mac(&self.mac_key, &Self::mac_input(&joiner_nonce));
        let part2_key = {
            let combined = net.xor(&[&sponsor_nonce]);
            net.kdf(OpScope::AuthStub, "MK", &combined, g.group_key.as_bytes())
        };
        let part2_payload = vec![PayloadItem::Sig(sig), PayloadItem::Key(session_key)];
        let part2 = crate::primitives::seal(
            &part2_key,
            b"join.tag_issue",
            &crate::simnet::encode_payload(&part2_payload),
        );
        let sponsor_succ = g.ring.succ(sponsor)?;
        net.send(MessageSpec {
            lane: Lane::Auth,
            mode: Mode::Broadcast,
            group: g.group_id,
            sender: AUTH_SENDER,
            recipients: g
                .ring
                .order()
                .iter()
                .copied()
                .filter(|id| *id != sponsor_succ)
                .collect(),
            key_hint: vec![sponsor],
            payload: vec![PayloadItem::Nonce(joiner_nonce)],
            seal_key: self.mac_key,
            key_class: KeyClass::AuthStub,
        })?;

        // Private credential to the joiner: its own nonce and the session
        // key under which the sponsor will wrap the group key.
        net.step("join.credential");
        net.send(MessageSpec {
            lane: Lane::Auth,
            mode: Mode::Unicast,
            group: g.group_id,
            sender: AUTH_SENDER,
            recipients: vec![joiner],
            key_hint: vec![],
            payload: vec![
                PayloadItem::Nonce(joiner_nonce),
                PayloadItem::Key(session_key),
            ],
            seal_key: self.mac_key,
            key_class: KeyClass::AuthStub,
        })?;

        Ok(JoinTag {
            part1,
            part2,
            joiner,
            sponsor,
            part1_msg,
            part2_payload,
            part2_key,
            part2_key_class: KeyClass::Multicast {
                group_key: g.group_key,
            },
            joiner_nonce,
            session_key,
        })
    }

    /// Issues a merge ticket: the sealed join request for the host
    /// sponsor (readable by it alone: the sealing key is the host
    /// sponsor's private multicast key, indexed by its entire state
    /// vector), plus the host-sponsor-predecessor nonce delivered to every
    /// requester member.
    pub fn issue_merge_ticket(
        &mut self,
        net: &mut SimNet,
        host: &GroupSnapshot,
        requester: &GroupSnapshot,
    ) -> Result<MergeTicket, ProtocolError> {
        for id in requester.ring.order() {
            if !self.registry.contains(id) {
                return Err(ProtocolError::AuthRefused(*id));
            }
        }
        net.step("merge.ticket_issue");
        let host_sponsor = host.sponsor;
        let requester_sponsor = requester.sponsor;
        let host_pred = host.ring.pred(host_sponsor)?;
        let host_pred_nonce = host.shared_nonces[&host_pred];
        let requester_share = Digest(self.rng.next_bytes());
        let tail_share = Digest(self.rng.next_bytes());
        let host_share = Digest(self.rng.next_bytes());
        let tail = requester.ring.succ(requester_sponsor)?;
        let host_sponsor_succ = host.ring.succ(host_sponsor)?;

        // Request payload: the requester's group key and full nonce set,
        // signed, plus the state-transfer keys the host sponsor will seal
        // with.
        let mut request_payload = vec![PayloadItem::Key(requester.group_key)];
        for n in requester.shared_nonces.values() {
            request_payload.push(PayloadItem::Nonce(*n));
        }
        request_payload.push(PayloadItem::Key(requester_share));
        request_payload.push(PayloadItem::Key(tail_share));
        request_payload.push(PayloadItem::Key(host_share));
        let sig = net.mac(
            &self.mac_key,
            &crate::simnet::encode_payload(&request_payload),
        );
        request_payload.push(PayloadItem::Sig(sig));

        let sponsor_state = &host.member(host_sponsor)?.state;
        let nonces: Vec<&Nonce> = sponsor_state.entries.values().collect();
        let combined = net.xor(&nonces);
        let request_key = net.kdf(
            OpScope::AuthStub,
            "MK",
            &combined,
            host.group_key.as_bytes(),
        );

        // Private-lane deliveries: every requester member learns the host
        // predecessor nonce (the one host nonce the merge messages cannot
        // carry); the state-transfer keys go to their scoped audiences.
        net.send(MessageSpec {
            lane: Lane::Auth,
            mode: Mode::Broadcast,
            group: requester.group_id,
            sender: AUTH_SENDER,
            recipients: requester.ring.order().to_vec(),
            key_hint: vec![],
            payload: vec![PayloadItem::Nonce(host_pred_nonce)],
            seal_key: self.mac_key,
            key_class: KeyClass::AuthStub,
        })?;
        net.send(MessageSpec {
            lane: Lane::Auth,
            mode: Mode::Broadcast,
            group: requester.group_id,
            sender: AUTH_SENDER,
            recipients: requester
                .ring
                .order()
                .iter()
                .copied()
                .filter(|id| *id != tail)
                .collect(),
            key_hint: vec![],
            payload: vec![PayloadItem::Key(requester_share)],
            seal_key: self.mac_key,
            key_class: KeyClass::AuthStub,
        })?;
        net.send(MessageSpec {
            lane: Lane::Auth,
            mode: Mode::Unicast,
            group: requester.group_id,
            sender: AUTH_SENDER,
            recipients: vec![tail],
            key_hint: vec![],
            payload: vec![PayloadItem::Key(tail_share)],
            seal_key: self.mac_key,
            key_class: KeyClass::AuthStub,
        })?;
        net.send(MessageSpec {
            lane: Lane::Auth,
            mode: Mode::Broadcast,
            group: host.group_id,
            sender: AUTH_SENDER,
            recipients: host
                .ring
                .order()
                .iter()
                .copied()
                .filter(|id| *id != host_sponsor_succ)
                .collect(),
            key_hint: vec![],
            payload: vec![PayloadItem::Key(host_share)],
            seal_key: self.mac_key,
            key_class: KeyClass::AuthStub,
        })?;

        Ok(MergeTicket {
            host_sponsor,
            requester_sponsor,
            request_payload,
            request_key,
            request_key_class: KeyClass::Multicast {
                group_key: host.group_key,
            },
            host_pred_nonce,
            requester_share,
            tail_share,
            host_share,
        })
    }
}
