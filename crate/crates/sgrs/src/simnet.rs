//! Deterministic in-memory transport with full instrumentation.
//!
//! Every protocol message is a typed envelope sent through [`SimNet`]. The
//! ledger counts unicast/broadcast messages, payload bytes under the
//! abstract size model (4-byte nonces/ids/integers, 32-byte keys and
//! signatures), hash invocations and encryption operations, attributed per
//! event and per protocol step. The net also records a replayable trace:
//! every primitive call made by protocol code and every sealed box on the
//! wire, which is exactly what the symbolic adversary closes over.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::id::{GroupId, MemberId};
use crate::primitives::{
    auth_mac, kdf2, open, seal, xor_combine, Digest, Nonce, PrimitiveError, SealedBox,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("protocol message with empty payload")]
    EmptyPayload,
    #[error("no event is active")]
    NoActiveEvent,
    #[error("unknown event index {0}")]
    UnknownEvent(usize),
    #[error("unknown message {0}")]
    UnknownMessage(usize),
}

/// Abstract wire sizes. Nonces, member ids and integers cost `int_bytes`;
/// keys, digests and signatures cost `key_bytes`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SizeModel {
    pub int_bytes: u64,
    pub key_bytes: u64,
}

impl Default for SizeModel {
    fn default() -> Self {
        SizeModel {
            int_bytes: 4,
            key_bytes: 32,
        }
    }
}

/// One typed item inside a sealed payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PayloadItem {
    Nonce(Nonce),
    Id(MemberId),
    Int(u64),
    Key(Digest),
    Sig(Digest),
}

impl PayloadItem {
    pub fn abstract_size(&self, sizes: &SizeModel) -> u64 {
        match self {
            PayloadItem::Nonce(_) | PayloadItem::Id(_) | PayloadItem::Int(_) => sizes.int_bytes,
            PayloadItem::Key(_) | PayloadItem::Sig(_) => sizes.key_bytes,
        }
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            PayloadItem::Nonce(n) => {
                out.push(1);
                out.extend_from_slice(&n.origin.0.to_le_bytes());
                out.extend_from_slice(&n.version.to_le_bytes());
                out.extend_from_slice(&n.bytes);
            }
            PayloadItem::Id(id) => {
                out.push(2);
                out.extend_from_slice(&id.0.to_le_bytes());
            }
            PayloadItem::Int(v) => {
                out.push(3);
                out.extend_from_slice(&v.to_le_bytes());
            }
            PayloadItem::Key(d) => {
                out.push(4);
                out.extend_from_slice(&d.0);
            }
            PayloadItem::Sig(d) => {
                out.push(5);
                out.extend_from_slice(&d.0);
            }
        }
    }
}

pub fn encode_payload(items: &[PayloadItem]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for item in items {
        item.encode_into(&mut out);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Unicast,
    Broadcast,
}

/// Which lane a record travels on. `Wire` is a counted protocol message;
/// `AuthKeying` is stub-delivered keying material whose bytes are still
/// priced (the joining tag's state vector); `Auth` is authentication-stub
/// bookkeeping priced into a separate sub-counter. Auth-lane records are
/// private to the stub and invisible to the symbolic adversary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lane {
    Wire,
    AuthKeying,
    Auth,
}

/// How the sealing key of a message was derived; drives the adversary's
/// key-target bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KeyClass {
    /// `kdf2("MK", XOR(Y_s), K_G)` with the given group-key argument.
    Multicast { group_key: Digest },
    /// Sealed directly under a group/supergroup key.
    GroupKey,
    /// Sealed under a joiner's private session key.
    Session,
    /// Sealed under the authentication stub's MAC key.
    AuthStub,
}

/// A message as recorded on the transcript.
#[derive(Clone, Debug)]
pub struct WireRecord {
    pub seq: usize,
    pub event: usize,
    pub step: &'static str,
    pub lane: Lane,
    pub mode: Mode,
    pub group: GroupId,
    pub sender: MemberId,
    pub recipients: Vec<MemberId>,
    pub key_hint: Vec<MemberId>,
    pub payload: Vec<PayloadItem>,
    pub sealed: SealedBox,
    pub seal_key: Digest,
    pub key_class: KeyClass,
    pub abstract_bytes: u64,
    pub physical_bytes: u64,
}

/// Kind of a recorded primitive invocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DerivationKind {
    Kdf { label: &'static str },
    Xor,
    Mac,
}

/// One primitive call made by protocol code: the closure replays these
/// against a knowledge set (rule R2/R3).
#[derive(Clone, Debug)]
pub struct DerivationRecord {
    pub seq: usize,
    pub kind: DerivationKind,
    pub inputs: Vec<[u8; 32]>,
    pub output: [u8; 32],
}

/// A group-key epoch: every key the group ever agreed on, in order.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub seq: usize,
    pub event: Option<usize>,
    pub group: GroupId,
    pub lineage: BTreeSet<GroupId>,
    pub key: Digest,
    pub kind: &'static str,
}

/// Knowledge snapshot of parties removed by a leave or partition, taken at
/// removal time.
#[derive(Clone, Debug)]
pub struct RemovalRecord {
    pub seq: usize,
    pub event: usize,
    pub group: GroupId,
    pub lineage: BTreeSet<GroupId>,
    pub states: Vec<crate::group::MemberState>,
}

/// Knowledge snapshot of an admitted party (joiner, or each member of a
/// merged-in group) right after its admission completes.
#[derive(Clone, Debug)]
pub struct AdmissionRecord {
    pub seq: usize,
    pub event: usize,
    /// Lineage of the group that was joined, before the event.
    pub host_lineage: BTreeSet<GroupId>,
    pub states: Vec<crate::group::MemberState>,
    pub kind: &'static str,
    /// Keying material the event retires: pre-event values the admitted
    /// party must never hold (the host sponsor's old nonce, for merges).
    pub retired: Vec<([u8; 32], String)>,
}

/// Everything the adversary may look at, plus replay metadata.
#[derive(Default, Debug)]
pub struct RunTrace {
    pub derivations: Vec<DerivationRecord>,
    pub epochs: Vec<EpochRecord>,
    pub removals: Vec<RemovalRecord>,
    pub admissions: Vec<AdmissionRecord>,
    seq: usize,
}

impl RunTrace {
    pub fn next_seq(&mut self) -> usize {
        self.seq += 1;
        self.seq
    }

    pub fn record_derivation(&mut self, kind: DerivationKind, inputs: Vec<[u8; 32]>, output: [u8; 32]) {
        let seq = self.next_seq();
        self.derivations.push(DerivationRecord {
            seq,
            kind,
            inputs,
            output,
        });
    }
}

/// Operation counters, kept per step, per event, and in total.
#[derive(Clone, Copy, Default, Debug, PartialEq, Eq)]
pub struct Counters {
    pub uc_count: u64,
    pub bc_count: u64,
    pub bytes_total: u64,
    pub physical_bytes: u64,
    /// Group-key-class hashes: GK-join, GK-leave, NR, SG.
    pub hash_ops: u64,
    /// Multicast-key derivations (MK label), reported separately.
    pub mk_ops: u64,
    /// Seals plus successful opens.
    pub crypt_ops: u64,
    /// Authentication-stub operations (MAC create/verify, stub kdf calls).
    pub auth_ops: u64,
    /// Bytes on the private authentication lane.
    pub auth_bytes: u64,
}

impl Counters {
    pub fn add(&mut self, other: &Counters) {
        self.uc_count += other.uc_count;
        self.bc_count += other.bc_count;
        self.bytes_total += other.bytes_total;
        self.physical_bytes += other.physical_bytes;
        self.hash_ops += other.hash_ops;
        self.mk_ops += other.mk_ops;
        self.crypt_ops += other.crypt_ops;
        self.auth_ops += other.auth_ops;
        self.auth_bytes += other.auth_bytes;
    }
}

impl fmt::Display for Counters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}UC+{}BC {}B (phys {}B, auth {}B) {}H {}MK {}E {}A",
            self.uc_count,
            self.bc_count,
            self.bytes_total,
            self.physical_bytes,
            self.auth_bytes,
            self.hash_ops,
            self.mk_ops,
            self.crypt_ops,
            self.auth_ops
        )
    }
}

/// Per-event sub-ledger with per-step attribution.
#[derive(Clone, Debug)]
pub struct EventLedger {
    pub index: usize,
    pub label: String,
    pub group: GroupId,
    /// Ring size of the affected group before the event.
    pub n_before: usize,
    pub totals: Counters,
    pub per_step: BTreeMap<&'static str, Counters>,
}

/// The running ledger. Totals always equal the componentwise sum of the
/// per-event entries; out-of-event activity is forbidden.
#[derive(Default, Debug)]
pub struct CostLedger {
    pub totals: Counters,
    pub per_event: Vec<EventLedger>,
}

/// Whether an instrumented call is protocol work or authentication-stub
/// work; stub work lands in the `auth_ops` sub-counter so both readings of
/// the published complexity columns can be compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpScope {
    Protocol,
    AuthStub,
}

/// Deterministic instrumented transport.
pub struct SimNet {
    pub sizes: SizeModel,
    pub ledger: CostLedger,
    pub transcript: Vec<WireRecord>,
    pub trace: RunTrace,
    current_event: Option<usize>,
    current_step: &'static str,
}

pub struct MessageSpec {
    pub lane: Lane,
    pub mode: Mode,
    pub group: GroupId,
    pub sender: MemberId,
    pub recipients: Vec<MemberId>,
    pub key_hint: Vec<MemberId>,
    pub payload: Vec<PayloadItem>,
    pub seal_key: Digest,
    pub key_class: KeyClass,
}

impl SimNet {
    pub fn new(sizes: SizeModel) -> Self {
        SimNet {
            sizes,
            ledger: CostLedger::default(),
            transcript: Vec::new(),
            trace: RunTrace::default(),
            current_event: None,
            current_step: "-",
        }
    }

    pub fn begin_event(&mut self, label: String, group: GroupId, n_before: usize) -> usize {
        let index = self.ledger.per_event.len();
        self.ledger.per_event.push(EventLedger {
            index,
            label,
            group,
            n_before,
            totals: Counters::default(),
            per_step: BTreeMap::new(),
        });
        self.current_event = Some(index);
        self.current_step = "-";
        index
    }

    pub fn end_event(&mut self) {
        self.current_event = None;
        self.current_step = "-";
    }

    pub fn step(&mut self, tag: &'static str) {
        self.current_step = tag;
    }

    pub fn current_event(&self) -> Option<usize> {
        self.current_event
    }

    fn bump(&mut self, f: impl Fn(&mut Counters)) {
        f(&mut self.ledger.totals);
        if let Some(idx) = self.current_event {
            let ev = &mut self.ledger.per_event[idx];
            f(&mut ev.totals);
            f(ev.per_step.entry(self.current_step).or_default());
        }
    }

    /// Instrumented `kdf2`. Protocol-scope calls count into `hash_ops`
    /// (group-key class labels) or `mk_ops` (the MK label); stub-scope
    /// calls count into `auth_ops`. Every call is recorded for replay.
    pub fn kdf(
        &mut self,
        scope: OpScope,
        label: &'static str,
        a: &[u8; 32],
        b: &[u8; 32],
    ) -> Digest {
        let out = kdf2(label, a, b).expect("protocol uses registered labels only");
        match scope {
            OpScope::Protocol => {
                if label == "MK" {
                    self.bump(|c| c.mk_ops += 1);
                } else {
                    self.bump(|c| c.hash_ops += 1);
                }
            }
            OpScope::AuthStub => self.bump(|c| c.auth_ops += 1),
        }
        self.trace
            .record_derivation(DerivationKind::Kdf { label }, vec![*a, *b], out.0);
        out
    }

    /// Instrumented XOR combination (free in the cost model, recorded for
    /// the closure).
    pub fn xor(&mut self, nonces: &[&Nonce]) -> [u8; 32] {
        let out = xor_combine(nonces.iter().copied()).expect("protocol xor sets are valid");
        self.trace.record_derivation(
            DerivationKind::Xor,
            nonces.iter().map(|n| n.bytes).collect(),
            out,
        );
        out
    }

    /// Instrumented XOR over raw 32-byte values (supergroup level, where
    /// child keys play the nonce role).
    pub fn xor_raw(&mut self, values: &[[u8; 32]]) -> [u8; 32] {
        let out = crate::primitives::xor_bytes(values.iter());
        self.trace
            .record_derivation(DerivationKind::Xor, values.to_vec(), out);
        out
    }

    /// Multicast key from explicit nonce values plus the group key:
    /// records both the XOR and the MK derivation.
    pub fn multicast_key(&mut self, scope: OpScope, nonces: &[&Nonce], group_key: &Digest) -> Digest {
        let combined = self.xor(nonces);
        self.kdf(scope, "MK", &combined, group_key.as_bytes())
    }

    /// Instrumented MAC (authentication stub).
    pub fn mac(&mut self, key: &Digest, data: &[u8]) -> Digest {
        let out = auth_mac(key, data);
        self.bump(|c| c.auth_ops += 1);
        self.trace.record_derivation(
            DerivationKind::Mac,
            vec![key.0, crate::primitives::Digest(padded(data)).0],
            out.0,
        );
        out
    }

    /// Seals and delivers a message, updating message, byte and crypt
    /// counters according to its lane.
    pub fn send(&mut self, spec: MessageSpec) -> Result<usize, NetError> {
        if spec.payload.is_empty() {
            return Err(NetError::EmptyPayload);
        }
        let event = self.current_event.ok_or(NetError::NoActiveEvent)?;
        let encoded = encode_payload(&spec.payload);
        let sealed = seal(&spec.seal_key, self.current_step.as_bytes(), &encoded);
        let abstract_bytes: u64 = spec
            .payload
            .iter()
            .map(|i| i.abstract_size(&self.sizes))
            .sum();
        let physical_bytes = sealed.physical_len() as u64;
        match spec.lane {
            Lane::Wire => {
                match spec.mode {
                    Mode::Unicast => self.bump(|c| c.uc_count += 1),
                    Mode::Broadcast => self.bump(|c| c.bc_count += 1),
                }
                self.bump(|c| {
                    c.bytes_total += abstract_bytes;
                    c.physical_bytes += physical_bytes;
                    c.crypt_ops += 1; // the seal
                });
            }
            Lane::AuthKeying => {
                self.bump(|c| {
                    c.bytes_total += abstract_bytes;
                    c.physical_bytes += physical_bytes;
                    c.auth_ops += 1;
                });
            }
            Lane::Auth => {
                self.bump(|c| {
                    c.auth_bytes += abstract_bytes;
                    c.auth_ops += 1;
                });
            }
        }
        let seq = self.trace.next_seq();
        let record = WireRecord {
            seq,
            event,
            step: self.current_step,
            lane: spec.lane,
            mode: spec.mode,
            group: spec.group,
            sender: spec.sender,
            recipients: spec.recipients,
            key_hint: spec.key_hint,
            payload: spec.payload,
            sealed,
            seal_key: spec.seal_key,
            key_class: spec.key_class,
            abstract_bytes,
            physical_bytes,
        };
        self.transcript.push(record);
        Ok(self.transcript.len() - 1)
    }

    /// A recipient opens message `idx` with `key`. Runs the real
    /// authenticated open; a successful open costs one crypt op (or one
    /// stub op on the auth lanes).
    pub fn open_with(&mut self, idx: usize, key: &Digest) -> Result<Vec<PayloadItem>, PrimitiveError> {
        let (sealed, lane, payload) = {
            let rec = &self.transcript[idx];
            (rec.sealed.clone(), rec.lane, rec.payload.clone())
        };
        let bytes = open(key, &sealed)?;
        debug_assert_eq!(bytes, encode_payload(&payload));
        match lane {
            Lane::Wire => self.bump(|c| c.crypt_ops += 1),
            Lane::AuthKeying | Lane::Auth => self.bump(|c| c.auth_ops += 1),
        }
        Ok(payload)
    }

    pub fn record_epoch(
        &mut self,
        group: GroupId,
        lineage: BTreeSet<GroupId>,
        key: Digest,
        kind: &'static str,
    ) {
        let seq = self.trace.next_seq();
        let event = self.current_event;
        self.trace.epochs.push(EpochRecord {
            seq,
            event,
            group,
            lineage,
            key,
            kind,
        });
    }

    pub fn ledger_for_event(&self, index: usize) -> Result<&EventLedger, NetError> {
        self.ledger
            .per_event
            .get(index)
            .ok_or(NetError::UnknownEvent(index))
    }

    pub fn totals(&self) -> Counters {
        self.ledger.totals
    }

    /// Recomputes totals from per-event entries; used by the conservation
    /// check.
    pub fn recompute_totals(&self) -> Counters {
        let mut acc = Counters::default();
        for ev in &self.ledger.per_event {
            acc.add(&ev.totals);
        }
        acc
    }

    /// Plain-text transcript: one record per line.
    pub fn export_transcript(&self) -> String {
        let mut out = String::new();
        for rec in &self.transcript {
            let recipients: Vec<String> = rec.recipients.iter().map(|r| r.to_string()).collect();
            let hint: Vec<String> = rec.key_hint.iter().map(|r| r.to_string()).collect();
            out.push_str(&format!(
                "{}\t{}\t{:?}\t{:?}\t{}\t{}\t[{}]\t[{}]\t{}B\n",
                rec.event,
                rec.step,
                rec.lane,
                rec.mode,
                rec.group,
                rec.sender,
                recipients.join(","),
                hint.join(","),
                rec.abstract_bytes,
            ));
        }
        out
    }
}

fn padded(data: &[u8]) -> [u8; 32] {
    // Derivation inputs are fixed 32-byte cells; MAC'd data is digested in.
    use sha2::{Digest as _, Sha256};
    let mut h = Sha256::new();
    h.update(data);
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nonce(id: u32, fill: u8) -> Nonce {
        Nonce {
            bytes: [fill; 32],
            origin: MemberId(id),
            version: 0,
        }
    }

    fn net() -> SimNet {
        SimNet::new(SizeModel::default())
    }

    #[test]
    fn unicast_of_one_key_costs_32_bytes_and_two_crypt_ops() {
        let mut n = net();
        n.begin_event("test".into(), GroupId(0), 3);
        let key = Digest([1; 32]);
        let idx = n
            .send(MessageSpec {
                lane: Lane::Wire,
                mode: Mode::Unicast,
                group: GroupId(0),
                sender: MemberId(1),
                recipients: vec![MemberId(2)],
                key_hint: vec![MemberId(1)],
                payload: vec![PayloadItem::Key(Digest([7; 32]))],
                seal_key: key,
                key_class: KeyClass::GroupKey,
            })
            .unwrap();
        n.open_with(idx, &key).unwrap();
        let t = n.totals();
        assert_eq!(t.bytes_total, 32);
        assert_eq!(t.uc_count, 1);
        assert_eq!(t.bc_count, 0);
        assert_eq!(t.crypt_ops, 2);
    }

    #[test]
    fn broadcast_payload_of_n_ids_costs_4n_bytes() {
        let mut n = net();
        n.begin_event("test".into(), GroupId(0), 5);
        let key = Digest([1; 32]);
        let ids: Vec<PayloadItem> = (1..=5).map(|i| PayloadItem::Id(MemberId(i))).collect();
        let idx = n
            .send(MessageSpec {
                lane: Lane::Wire,
                mode: Mode::Broadcast,
                group: GroupId(0),
                sender: MemberId(1),
                recipients: (2..=5).map(MemberId).collect(),
                key_hint: vec![MemberId(1)],
                payload: ids,
                seal_key: key,
                key_class: KeyClass::GroupKey,
            })
            .unwrap();
        // 3 of 4 recipients manage to open.
        for _ in 0..3 {
            n.open_with(idx, &key).unwrap();
        }
        assert!(n.open_with(idx, &Digest([9; 32])).is_err());
        let t = n.totals();
        assert_eq!(t.bytes_total, 20);
        assert_eq!(t.bc_count, 1);
        assert_eq!(t.crypt_ops, 1 + 3);
    }

    #[test]
    fn empty_payload_is_rejected_at_construction() {
        let mut n = net();
        n.begin_event("test".into(), GroupId(0), 2);
        let err = n
            .send(MessageSpec {
                lane: Lane::Wire,
                mode: Mode::Unicast,
                group: GroupId(0),
                sender: MemberId(1),
                recipients: vec![MemberId(2)],
                key_hint: vec![],
                payload: vec![],
                seal_key: Digest([0; 32]),
                key_class: KeyClass::GroupKey,
            })
            .unwrap_err();
        assert_eq!(err, NetError::EmptyPayload);
    }

    #[test]
    fn zero_events_means_zero_ledger() {
        let n = net();
        assert_eq!(n.totals(), Counters::default());
        assert!(n.ledger.per_event.is_empty());
        assert_eq!(n.ledger_for_event(0).unwrap_err(), NetError::UnknownEvent(0));
    }

    #[test]
    fn totals_equal_sum_of_events() {
        let mut n = net();
        let key = Digest([1; 32]);
        for ev in 0..4 {
            n.begin_event(format!("ev{ev}"), GroupId(0), 3);
            n.step("s1");
            let nonce_a = nonce(1, ev as u8 + 1);
            n.kdf(OpScope::Protocol, "NR", &nonce_a.bytes, &[ev as u8; 32]);
            n.multicast_key(OpScope::Protocol, &[&nonce_a], &key);
            let idx = n
                .send(MessageSpec {
                    lane: Lane::Wire,
                    mode: if ev % 2 == 0 {
                        Mode::Unicast
                    } else {
                        Mode::Broadcast
                    },
                    group: GroupId(0),
                    sender: MemberId(1),
                    recipients: vec![MemberId(2)],
                    key_hint: vec![MemberId(1)],
                    payload: vec![PayloadItem::Nonce(nonce_a), PayloadItem::Key(key)],
                    seal_key: key,
                    key_class: KeyClass::GroupKey,
                })
                .unwrap();
            n.open_with(idx, &key).unwrap();
            n.end_event();
        }
        assert_eq!(n.totals(), n.recompute_totals());
        assert_eq!(n.totals().hash_ops, 4);
        assert_eq!(n.totals().mk_ops, 4);
        assert_eq!(n.totals().bytes_total, 4 * 36);
    }

    #[test]
    fn hash_class_attribution() {
        let mut n = net();
        n.begin_event("e".into(), GroupId(0), 2);
        n.step("k");
        n.kdf(OpScope::Protocol, "GK-join", &[1; 32], &[2; 32]);
        n.kdf(OpScope::Protocol, "MK", &[1; 32], &[2; 32]);
        n.kdf(OpScope::AuthStub, "MK", &[3; 32], &[2; 32]);
        let t = n.totals();
        assert_eq!((t.hash_ops, t.mk_ops, t.auth_ops), (1, 1, 1));
        let ev = n.ledger_for_event(0).unwrap();
        assert_eq!(ev.per_step["k"].hash_ops, 1);
    }

    #[test]
    fn pure_primitive_calls_do_not_touch_the_ledger() {
        let n = net();
        // kdf2/seal called directly, not through the net.
        let _ = kdf2("GK-join", &[1; 32], &[2; 32]).unwrap();
        let _ = seal(&Digest([1; 32]), b"x", b"y");
        assert_eq!(n.totals(), Counters::default());
    }

    #[test]
    fn auth_lane_bytes_are_separated() {
        let mut n = net();
        n.begin_event("e".into(), GroupId(0), 3);
        let key = Digest([1; 32]);
        n.send(MessageSpec {
            lane: Lane::Auth,
            mode: Mode::Unicast,
            group: GroupId(0),
            sender: MemberId(1),
            recipients: vec![MemberId(9)],
            key_hint: vec![],
            payload: vec![PayloadItem::Key(key)],
            seal_key: key,
            key_class: KeyClass::AuthStub,
        })
        .unwrap();
        let t = n.totals();
        assert_eq!(t.uc_count, 0);
        assert_eq!(t.bytes_total, 0);
        assert_eq!(t.auth_bytes, 32);
    }

    #[test]
    fn keying_lane_prices_bytes_without_counting_a_message() {
        let mut n = net();
        n.begin_event("e".into(), GroupId(0), 3);
        let key = Digest([1; 32]);
        n.send(MessageSpec {
            lane: Lane::AuthKeying,
            mode: Mode::Unicast,
            group: GroupId(0),
            sender: MemberId(1),
            recipients: vec![MemberId(9)],
            key_hint: vec![],
            payload: vec![
                PayloadItem::Nonce(nonce(1, 1)),
                PayloadItem::Nonce(nonce(2, 2)),
            ],
            seal_key: key,
            key_class: KeyClass::AuthStub,
        })
        .unwrap();
        let t = n.totals();
        assert_eq!((t.uc_count, t.bc_count), (0, 0));
        assert_eq!(t.bytes_total, 8);
    }
}
