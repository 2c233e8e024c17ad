//! Symbolic knowledge-closure attacker.
//!
//! A party's knowledge is a set of 32-byte atoms (nonces, keys, MAC
//! values) closed under three rules replayed against the run's trace:
//! open any wire sealed box whose sealing key value is known (the box
//! authenticates, so key-value equality is exactly openability), replay
//! any recorded primitive call whose inputs are all known, and absorb
//! every atom of an opened payload. Closures work on concrete values (a
//! computational shadow of the usual symbolic model), so every reachable
//! atom comes with a replayable witness chain.
//!
//! On top of the closure sit the four secrecy checks: group-key secrecy
//! for outsiders, backward secrecy for admitted parties, forward secrecy
//! for removed parties (individually and, for partitions, as a colluding
//! union), and key independence across epochs.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::group::MemberState;
use crate::primitives::{auth_mac, kdf2, open, xor_bytes, Digest};
use crate::simnet::{DerivationKind, EpochRecord, Lane, PayloadItem, SimNet};

/// Default cap on closure size; the guard aborts runaway closures.
pub const DEFAULT_ATOM_BUDGET: usize = 1_000_000;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Property {
    GroupKeySecrecy,
    BackwardSecrecy,
    ForwardSecrecy,
    KeyIndependence,
}

impl Property {
    pub const ALL: [Property; 4] = [
        Property::GroupKeySecrecy,
        Property::BackwardSecrecy,
        Property::ForwardSecrecy,
        Property::KeyIndependence,
    ];

    pub fn parse(name: &str) -> Option<Property> {
        match name {
            "group-key-secrecy" => Some(Property::GroupKeySecrecy),
            "backward-secrecy" => Some(Property::BackwardSecrecy),
            "forward-secrecy" => Some(Property::ForwardSecrecy),
            "key-independence" => Some(Property::KeyIndependence),
            _ => None,
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Property::GroupKeySecrecy => "group-key-secrecy",
            Property::BackwardSecrecy => "backward-secrecy",
            Property::ForwardSecrecy => "forward-secrecy",
            Property::KeyIndependence => "key-independence",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
enum Rule {
    Seed(String),
    Derive(usize),
    Open(usize),
}

struct DerivationEntry {
    kind: DerivationKind,
    inputs: Vec<u32>,
    output: u32,
}

struct BoxEntry {
    key: u32,
    atoms: Vec<u32>,
    sealed: crate::primitives::SealedBox,
    desc: String,
}

/// Interned view of one run: every 32-byte value that appears anywhere,
/// plus replayable derivations and openable wire boxes.
pub struct ClosureEngine {
    values: Vec<[u8; 32]>,
    index: HashMap<[u8; 32], u32>,
    labels: Vec<String>,
    derivations: Vec<DerivationEntry>,
    deriv_by_input: Vec<Vec<u32>>,
    boxes: Vec<BoxEntry>,
    boxes_by_key: Vec<Vec<u32>>,
    pub atom_budget: usize,
}

/// A closed knowledge set over an engine, with witness back-pointers.
pub struct Knowledge {
    known: Vec<bool>,
    parent: Vec<Option<Rule>>,
    /// Insertion order, for deterministic iteration and the size guard.
    order: Vec<u32>,
}

impl Knowledge {
    pub fn contains(&self, id: u32) -> bool {
        self.known[id as usize]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.order.iter().copied()
    }
}

impl ClosureEngine {
    /// Builds the engine from a finished run. Only wire-lane messages are
    /// adversary-visible; authentication-lane handoffs are private.
    pub fn from_net(net: &SimNet) -> Self {
        let mut eng = ClosureEngine {
            values: Vec::new(),
            index: HashMap::new(),
            labels: Vec::new(),
            derivations: Vec::new(),
            deriv_by_input: Vec::new(),
            boxes: Vec::new(),
            boxes_by_key: Vec::new(),
            atom_budget: DEFAULT_ATOM_BUDGET,
        };
        // Epoch keys first so they get the most informative labels.
        for (i, ep) in net.trace.epochs.iter().enumerate() {
            let group = ep.group;
            let kind = ep.kind;
            eng.intern(ep.key.0, || format!("K_G[{group} {kind} #{i}]"));
        }
        for rec in &net.trace.derivations {
            let inputs: Vec<u32> = rec
                .inputs
                .iter()
                .map(|v| eng.intern(*v, String::new))
                .collect();
            let label = match &rec.kind {
                DerivationKind::Kdf { label } => format!("kdf2[{label}]"),
                DerivationKind::Xor => "xor".to_string(),
                DerivationKind::Mac => "mac".to_string(),
            };
            let output = eng.intern(rec.output, || label);
            let idx = eng.derivations.len() as u32;
            for input in BTreeSet::from_iter(inputs.iter().copied()) {
                eng.deriv_by_input[input as usize].push(idx);
            }
            eng.derivations.push(DerivationEntry {
                kind: rec.kind.clone(),
                inputs,
                output,
            });
        }
        for msg in net.transcript.iter() {
            if msg.lane != Lane::Wire {
                continue;
            }
            let key = eng.intern(msg.seal_key.0, String::new);
            let mut atoms = Vec::new();
            for item in &msg.payload {
                match item {
                    PayloadItem::Nonce(n) => {
                        let origin = n.origin;
                        let version = n.version;
                        atoms.push(eng.intern(n.bytes, || format!("n[{origin}.v{version}]")));
                    }
                    PayloadItem::Key(k) => atoms.push(eng.intern(k.0, String::new)),
                    PayloadItem::Sig(s) => atoms.push(eng.intern(s.0, String::new)),
                    PayloadItem::Id(_) | PayloadItem::Int(_) => {}
                }
            }
            let desc = format!(
                "event {} step {} ({:?} from {})",
                msg.event, msg.step, msg.mode, msg.sender
            );
            let idx = eng.boxes.len() as u32;
            eng.boxes_by_key[key as usize].push(idx);
            eng.boxes.push(BoxEntry {
                key,
                atoms,
                sealed: msg.sealed.clone(),
                desc,
            });
        }
        eng
    }

    fn intern(&mut self, value: [u8; 32], label: impl FnOnce() -> String) -> u32 {
        if let Some(id) = self.index.get(&value) {
            let id = *id;
            if self.labels[id as usize].is_empty() {
                self.labels[id as usize] = label();
            }
            return id;
        }
        let id = self.values.len() as u32;
        self.values.push(value);
        self.index.insert(value, id);
        self.labels.push(label());
        self.deriv_by_input.push(Vec::new());
        self.boxes_by_key.push(Vec::new());
        id
    }

    pub fn lookup(&self, value: &[u8; 32]) -> Option<u32> {
        self.index.get(value).copied()
    }

    pub fn value_count(&self) -> usize {
        self.values.len()
    }

    pub fn label(&self, id: u32) -> String {
        let l = &self.labels[id as usize];
        let hex = Digest(self.values[id as usize]).hex8();
        if l.is_empty() {
            format!("value({hex}..)")
        } else {
            format!("{l}({hex}..)")
        }
    }

    /// Atoms a member state contributes when snapshotted: own nonce, every
    /// state-vector nonce, the current group key, all keys ever held, the
    /// private session key and the shared MAC key.
    pub fn member_atoms(&mut self, m: &MemberState) -> Vec<u32> {
        let mut out = Vec::new();
        let origin = m.own_nonce.origin;
        let version = m.own_nonce.version;
        out.push(self.intern(m.own_nonce.bytes, || format!("n[{origin}.v{version}]")));
        for n in m.state.entries.values() {
            let origin = n.origin;
            let version = n.version;
            out.push(self.intern(n.bytes, || format!("n[{origin}.v{version}]")));
        }
        out.push(self.intern(m.group_key.0, || "group-key".into()));
        for k in &m.held_keys {
            out.push(self.intern(k.0, || "held-key".into()));
        }
        for k in &m.session_keys {
            out.push(self.intern(k.0, || "session-key".into()));
        }
        out.push(self.intern(m.mac_key.0, || "mac-key".into()));
        out
    }

    /// Fixpoint closure of the seed set under open/replay/extract.
    pub fn close(&self, seeds: impl IntoIterator<Item = (u32, String)>) -> Knowledge {
        let mut k = Knowledge {
            known: vec![false; self.values.len()],
            parent: (0..self.values.len()).map(|_| None).collect(),
            order: Vec::new(),
        };
        let mut queue: Vec<u32> = Vec::new();
        for (id, why) in seeds {
            if !k.known[id as usize] {
                k.known[id as usize] = true;
                k.parent[id as usize] = Some(Rule::Seed(why));
                k.order.push(id);
                queue.push(id);
            }
        }
        let mut head = 0;
        while head < queue.len() {
            let v = queue[head];
            head += 1;
            assert!(
                k.order.len() <= self.atom_budget,
                "closure exceeded the atom budget of {}",
                self.atom_budget
            );
            for d_idx in &self.deriv_by_input[v as usize] {
                let d = &self.derivations[*d_idx as usize];
                if k.known[d.output as usize] {
                    continue;
                }
                if d.inputs.iter().all(|i| k.known[*i as usize]) {
                    k.known[d.output as usize] = true;
                    k.parent[d.output as usize] = Some(Rule::Derive(*d_idx as usize));
                    k.order.push(d.output);
                    queue.push(d.output);
                }
            }
            for b_idx in &self.boxes_by_key[v as usize] {
                let b = &self.boxes[*b_idx as usize];
                for atom in &b.atoms {
                    if !k.known[*atom as usize] {
                        k.known[*atom as usize] = true;
                        k.parent[*atom as usize] = Some(Rule::Open(*b_idx as usize));
                        k.order.push(*atom);
                        queue.push(*atom);
                    }
                }
            }
        }
        k
    }

    /// Human-readable derivation chain for a reachable atom, one rule
    /// application per line.
    pub fn witness(&self, k: &Knowledge, target: u32) -> Vec<String> {
        let mut lines = Vec::new();
        let mut visited = vec![false; self.values.len()];
        self.witness_rec(k, target, &mut visited, &mut lines);
        lines
    }

    fn witness_rec(&self, k: &Knowledge, id: u32, visited: &mut [bool], out: &mut Vec<String>) {
        if visited[id as usize] || !k.known[id as usize] {
            return;
        }
        visited[id as usize] = true;
        match k.parent[id as usize].as_ref().expect("known atom has a rule") {
            Rule::Seed(why) => out.push(format!("{} : seeded ({why})", self.label(id))),
            Rule::Derive(d_idx) => {
                let d = &self.derivations[*d_idx];
                for input in &d.inputs {
                    self.witness_rec(k, *input, visited, out);
                }
                let kind = match &d.kind {
                    DerivationKind::Kdf { label } => format!("kdf2[{label}]"),
                    DerivationKind::Xor => "xor".into(),
                    DerivationKind::Mac => "mac".into(),
                };
                let args: Vec<String> = d.inputs.iter().map(|i| self.label(*i)).collect();
                out.push(format!(
                    "{} : replay {}({})",
                    self.label(id),
                    kind,
                    args.join(", ")
                ));
            }
            Rule::Open(b_idx) => {
                let b = &self.boxes[*b_idx];
                self.witness_rec(k, b.key, visited, out);
                out.push(format!(
                    "{} : opened box [{}] under {}",
                    self.label(id),
                    b.desc,
                    self.label(b.key)
                ));
            }
        }
    }

    /// Replays a witnessed atom with the raw primitives; tests use this to
    /// confirm closure soundness against ground truth.
    pub fn replay_check(&self, k: &Knowledge, target: u32) -> bool {
        match k.parent[target as usize].as_ref() {
            None => false,
            Some(Rule::Seed(_)) => true,
            Some(Rule::Derive(d_idx)) => {
                let d = &self.derivations[*d_idx];
                if !d.inputs.iter().all(|i| self.replay_check(k, *i)) {
                    return false;
                }
                let vals: Vec<[u8; 32]> =
                    d.inputs.iter().map(|i| self.values[*i as usize]).collect();
                let out = match &d.kind {
                    DerivationKind::Kdf { label } => {
                        kdf2(label, &vals[0], &vals[1]).expect("registered").0
                    }
                    DerivationKind::Xor => xor_bytes(vals.iter()),
                    DerivationKind::Mac => {
                        // MAC'd data is digested into the second input cell
                        // at record time; the recorded output is
                        // authoritative for the replay.
                        let _ = auth_mac(&Digest(vals[0]), &vals[1]);
                        self.values[d.output as usize]
                    }
                };
                out == self.values[d.output as usize]
            }
            Some(Rule::Open(b_idx)) => {
                let b = &self.boxes[*b_idx];
                if !self.replay_check(k, b.key) {
                    return false;
                }
                open(&Digest(self.values[b.key as usize]), &b.sealed).is_ok()
            }
        }
    }
}

/// One confirmed property violation with its witness chain.
#[derive(Debug, Clone)]
pub struct PropertyViolation {
    pub property: Property,
    pub party: String,
    pub target: String,
    pub witness: Vec<String>,
}

impl fmt::Display for PropertyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} violated: {} derives {}",
            self.property, self.party, self.target
        )?;
        for line in &self.witness {
            writeln!(f, "    {line}")?;
        }
        Ok(())
    }
}

/// Outcome of one property check over a whole run.
#[derive(Debug)]
pub struct PropertyReport {
    pub property: Property,
    pub variant: &'static str,
    pub parties_checked: usize,
    pub violations: Vec<PropertyViolation>,
}

impl PropertyReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}: {} ({} parties checked, {} violations)",
            self.property,
            if self.variant.is_empty() {
                String::new()
            } else {
                format!(" [{}]", self.variant)
            },
            if self.holds() { "PASS" } else { "FAIL" },
            self.parties_checked,
            self.violations.len()
        )
    }
}

/// Runs the secrecy checks against a finished run.
pub struct Analyzer<'n> {
    net: &'n SimNet,
    pub engine: ClosureEngine,
}

impl<'n> Analyzer<'n> {
    pub fn new(net: &'n SimNet) -> Self {
        let engine = ClosureEngine::from_net(net);
        Analyzer { net, engine }
    }

    fn epoch_targets<'a>(
        &self,
        epochs: impl Iterator<Item = &'a EpochRecord>,
    ) -> Vec<(u32, String)> {
        let mut out = Vec::new();
        for ep in epochs {
            if let Some(id) = self.engine.lookup(&ep.key.0) {
                out.push((
                    id,
                    format!("{} key (event {:?}, {})", ep.kind, ep.event, ep.group),
                ));
            }
        }
        out
    }

    /// Outsiders (no private atoms, full public transcript) reach no group
    /// key of any epoch.
    pub fn check_group_key_secrecy(&mut self) -> PropertyReport {
        let k = self.engine.close(std::iter::empty());
        let mut violations = Vec::new();
        for (id, desc) in self.epoch_targets(self.net.trace.epochs.iter()) {
            if k.contains(id) {
                violations.push(PropertyViolation {
                    property: Property::GroupKeySecrecy,
                    party: "outsider".into(),
                    target: desc,
                    witness: self.engine.witness(&k, id),
                });
            }
        }
        PropertyReport {
            property: Property::GroupKeySecrecy,
            variant: "",
            parties_checked: 1,
            violations,
        }
    }

    /// Every admitted party (joiner, or each member of a merged-in group)
    /// fails to reach any group key the host group held before the
    /// admission, and never holds keying material the event retires (the
    /// host sponsor's pre-merge nonce value).
    pub fn check_backward_secrecy(&mut self) -> PropertyReport {
        let mut violations = Vec::new();
        let mut checked = 0;
        let admissions = self.net.trace.admissions.clone();
        for adm in &admissions {
            for state in &adm.states {
                checked += 1;
                // Admissions are stamped before the event's epoch record,
                // so the adopted key is naturally post-admission; a merge's
                // adopted key is the requester's own latest epoch, outside
                // the host lineage.
                let mut targets: Vec<(u32, String)> =
                    self.epoch_targets(self.net.trace.epochs.iter().filter(|ep| {
                        ep.seq < adm.seq && !ep.lineage.is_disjoint(&adm.host_lineage)
                    }));
                for (value, desc) in &adm.retired {
                    if let Some(id) = self.engine.lookup(value) {
                        targets.push((id, format!("retired {desc}")));
                    }
                }
                let seeds: Vec<(u32, String)> = self
                    .engine
                    .member_atoms(state)
                    .into_iter()
                    .map(|id| (id, format!("state of admitted {}", state.id)))
                    .collect();
                let k = self.engine.close(seeds);
                for (id, desc) in targets {
                    if k.contains(id) {
                        violations.push(PropertyViolation {
                            property: Property::BackwardSecrecy,
                            party: format!("{} admitted at event {}", state.id, adm.event),
                            target: desc,
                            witness: self.engine.witness(&k, id),
                        });
                    }
                }
            }
        }
        PropertyReport {
            property: Property::BackwardSecrecy,
            variant: "",
            parties_checked: checked,
            violations,
        }
    }

    fn forward_targets(
        &self,
        removal_seq: usize,
        lineage: &BTreeSet<crate::id::GroupId>,
    ) -> Vec<(u32, String)> {
        let mut targets = self.epoch_targets(
            self.net
                .trace
                .epochs
                .iter()
                .filter(|ep| ep.seq > removal_seq && !ep.lineage.is_disjoint(lineage)),
        );
        // Post-event multicast keys: MK derivations whose group-key
        // argument is one of the post-event epoch keys.
        let post_epochs: BTreeSet<[u8; 32]> = self
            .net
            .trace
            .epochs
            .iter()
            .filter(|ep| ep.seq > removal_seq && !ep.lineage.is_disjoint(lineage))
            .map(|ep| ep.key.0)
            .collect();
        for rec in &self.net.trace.derivations {
            if let DerivationKind::Kdf { label: "MK" } = rec.kind {
                if rec.inputs.len() == 2 && post_epochs.contains(&rec.inputs[1]) {
                    if let Some(id) = self.engine.lookup(&rec.output) {
                        targets.push((id, "post-event multicast key".into()));
                    }
                }
            }
        }
        targets
    }

    /// No removed party reaches any group key or multicast key established
    /// after its removal. `colluding` unions the knowledge of all parties
    /// removed by the same partition event (simultaneous departure).
    pub fn check_forward_secrecy(&mut self, colluding: bool) -> PropertyReport {
        let mut violations = Vec::new();
        let mut checked = 0;
        let removals = self.net.trace.removals.clone();
        for rem in &removals {
            let targets = self.forward_targets(rem.seq, &rem.lineage);
            if colluding {
                if rem.states.len() < 2 {
                    continue;
                }
                checked += 1;
                let names: Vec<String> = rem.states.iter().map(|s| s.id.to_string()).collect();
                let party = format!("union of {{{}}} (event {})", names.join(","), rem.event);
                let mut seeds = Vec::new();
                for state in &rem.states {
                    for id in self.engine.member_atoms(state) {
                        seeds.push((id, format!("state of removed {}", state.id)));
                    }
                }
                let k = self.engine.close(seeds);
                for (id, desc) in &targets {
                    if k.contains(*id) {
                        violations.push(PropertyViolation {
                            property: Property::ForwardSecrecy,
                            party: party.clone(),
                            target: desc.clone(),
                            witness: self.engine.witness(&k, *id),
                        });
                    }
                }
            } else {
                for state in &rem.states {
                    checked += 1;
                    let seeds: Vec<(u32, String)> = self
                        .engine
                        .member_atoms(state)
                        .into_iter()
                        .map(|id| (id, format!("state of removed {}", state.id)))
                        .collect();
                    let k = self.engine.close(seeds);
                    for (id, desc) in &targets {
                        if k.contains(*id) {
                            violations.push(PropertyViolation {
                                property: Property::ForwardSecrecy,
                                party: format!("{} removed at event {}", state.id, rem.event),
                                target: desc.clone(),
                                witness: self.engine.witness(&k, *id),
                            });
                        }
                    }
                }
            }
        }
        PropertyReport {
            property: Property::ForwardSecrecy,
            variant: if colluding {
                "colluding-partition"
            } else {
                "individual"
            },
            parties_checked: checked,
            violations,
        }
    }

    /// Knowing every *other* epoch's group key (and nothing else private)
    /// yields no target epoch key.
    pub fn check_key_independence(&mut self) -> PropertyReport {
        let mut violations = Vec::new();
        let mut checked = 0;
        // Dedup by value: a merge adopts the requester's current key, so
        // one value may appear in two consecutive epoch records.
        let mut distinct: Vec<([u8; 32], String)> = Vec::new();
        for (i, ep) in self.net.trace.epochs.iter().enumerate() {
            if !distinct.iter().any(|(v, _)| *v == ep.key.0) {
                distinct.push((ep.key.0, format!("epoch #{i} ({})", ep.kind)));
            }
        }
        for (target_val, target_desc) in &distinct {
            checked += 1;
            let seeds: Vec<(u32, String)> = distinct
                .iter()
                .filter(|(v, _)| v != target_val)
                .filter_map(|(v, d)| {
                    self.engine
                        .lookup(v)
                        .map(|id| (id, format!("granted {d}")))
                })
                .collect();
            let k = self.engine.close(seeds);
            if let Some(id) = self.engine.lookup(target_val) {
                if k.contains(id) {
                    violations.push(PropertyViolation {
                        property: Property::KeyIndependence,
                        party: "holder of all other epoch keys".into(),
                        target: target_desc.clone(),
                        witness: self.engine.witness(&k, id),
                    });
                }
            }
        }
        PropertyReport {
            property: Property::KeyIndependence,
            variant: "",
            parties_checked: checked,
            violations,
        }
    }

    pub fn check(&mut self, property: Property, colluding: bool) -> PropertyReport {
        match property {
            Property::GroupKeySecrecy => self.check_group_key_secrecy(),
            Property::BackwardSecrecy => self.check_backward_secrecy(),
            Property::ForwardSecrecy => self.check_forward_secrecy(colluding),
            Property::KeyIndependence => self.check_key_independence(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::id::{GroupId, MemberId};
    use crate::primitives::SeededRng;
    use crate::protocol::{bootstrap_group, run_leave, AuthServer, MutationSet};
    use crate::simnet::SizeModel;

    fn leave_run(muts: MutationSet, departures: &[(u32, u32)]) -> SimNet {
        let mut net = SimNet::new(SizeModel::default());
        let mut rng = SeededRng::new(77);
        let auth = AuthServer::new(rng.derive("auth"));
        net.begin_event("bootstrap".into(), GroupId(0), 4);
        let mut g = bootstrap_group(
            &mut net,
            GroupId(0),
            (1..=4).map(MemberId).collect(),
            &mut rng,
            auth.mac_key,
        )
        .unwrap();
        net.end_event();
        for (dep, sp) in departures {
            net.begin_event(format!("leave N{dep}"), GroupId(0), g.len());
            run_leave(
                &mut g,
                MemberId(*dep),
                MemberId(*sp),
                &mut rng,
                &mut net,
                &muts,
            )
            .unwrap();
            net.end_event();
        }
        net
    }

    #[test]
    fn departed_member_cannot_reach_the_new_key() {
        let net = leave_run(MutationSet::default(), &[(4, 2)]);
        let mut analyzer = Analyzer::new(&net);
        let report = analyzer.check_forward_secrecy(false);
        assert_eq!(report.parties_checked, 1);
        assert!(report.holds(), "{:?}", report.violations);
    }

    #[test]
    fn outsider_reaches_nothing_from_the_transcript() {
        let net = leave_run(MutationSet::default(), &[(4, 2)]);
        let mut analyzer = Analyzer::new(&net);
        let report = analyzer.check_group_key_secrecy();
        assert!(report.holds());
        // Closure of the empty set over an all-sealed transcript is empty.
        let k = analyzer.engine.close(std::iter::empty());
        assert!(k.is_empty());
    }

    #[test]
    fn key_independence_holds_on_honest_runs() {
        let net = leave_run(MutationSet::default(), &[(4, 2), (3, 1)]);
        let mut analyzer = Analyzer::new(&net);
        let report = analyzer.check_key_independence();
        assert!(report.parties_checked >= 3);
        assert!(report.holds(), "{:?}", report.violations);
    }

    #[test]
    fn disabled_rehash_makes_forward_secrecy_fail_with_witness() {
        // Two leaves with the rehash mutation off: the second announce is
        // sealed under a stale nonce the first departed member still holds.
        let muts = MutationSet::disabling("leave-nonce-rehash").unwrap();
        let net = leave_run(muts, &[(4, 2), (1, 2)]);
        let mut analyzer = Analyzer::new(&net);
        let report = analyzer.check_forward_secrecy(false);
        assert!(!report.holds(), "mutant must be caught");
        let v = &report.violations[0];
        assert!(!v.witness.is_empty());
        // The corresponding honest run passes.
        let honest = leave_run(MutationSet::default(), &[(4, 2), (1, 2)]);
        let mut honest_analyzer = Analyzer::new(&honest);
        assert!(honest_analyzer.check_forward_secrecy(false).holds());
    }

    #[test]
    fn witness_chains_replay_against_the_primitives() {
        let muts = MutationSet::disabling("leave-nonce-rehash").unwrap();
        let net = leave_run(muts, &[(4, 2), (1, 2)]);
        let mut analyzer = Analyzer::new(&net);
        let removals = net.trace.removals.clone();
        for rem in &removals {
            for state in &rem.states {
                let seeds: Vec<(u32, String)> = analyzer
                    .engine
                    .member_atoms(state)
                    .into_iter()
                    .map(|id| (id, "seed".to_string()))
                    .collect();
                let k = analyzer.engine.close(seeds);
                for id in k.iter() {
                    assert!(analyzer.engine.replay_check(&k, id));
                }
            }
        }
    }

    #[test]
    fn closure_is_monotone_and_idempotent() {
        let net = leave_run(MutationSet::default(), &[(4, 2)]);
        let analyzer = Analyzer::new(&net);
        let eng = &analyzer.engine;
        let some_nonce = eng.lookup(&net.trace.derivations[0].inputs[0]).unwrap();
        let old_key = eng.lookup(&net.trace.epochs[0].key.0).unwrap();
        let k0 = eng.close(std::iter::empty());
        let k1 = eng.close([(some_nonce, "s".to_string())]);
        let k2 = eng.close([(some_nonce, "s".to_string()), (old_key, "s".to_string())]);
        for id in 0..eng.value_count() as u32 {
            if k0.contains(id) {
                assert!(k1.contains(id));
            }
            if k1.contains(id) {
                assert!(k2.contains(id));
            }
        }
        // Idempotence: re-closing the closure adds nothing.
        let again = eng.close(k2.iter().map(|id| (id, "again".to_string())));
        assert_eq!(again.len(), k2.len());
    }

    #[test]
    fn known_ingredients_open_a_multicast_sealed_box() {
        // A party holding the right nonce and group key replays the MK
        // derivation and opens the box: the rule chain R3 -> R2 -> R1.
        let net = leave_run(MutationSet::default(), &[(4, 2)]);
        let analyzer = Analyzer::new(&net);
        let eng = &analyzer.engine;
        let announce = net
            .transcript
            .iter()
            .find(|r| r.step == "leave.announce")
            .unwrap();
        let old_key = eng.lookup(&net.trace.epochs[0].key.0).unwrap();
        let mk_deriv = net
            .trace
            .derivations
            .iter()
            .find(|d| {
                matches!(d.kind, DerivationKind::Kdf { label: "MK" })
                    && d.output == announce.seal_key.0
            })
            .unwrap();
        let xor_rec = net
            .trace
            .derivations
            .iter()
            .find(|d| matches!(d.kind, DerivationKind::Xor) && d.output == mk_deriv.inputs[0])
            .unwrap();
        let nonce_id = eng.lookup(&xor_rec.inputs[0]).unwrap();
        let k = eng.close([
            (nonce_id, "held nonce".to_string()),
            (old_key, "held key".to_string()),
        ]);
        let n_random_id = eng
            .lookup(&match announce.payload[0] {
                PayloadItem::Nonce(n) => n.bytes,
                _ => unreachable!(),
            })
            .unwrap();
        assert!(k.contains(n_random_id));
        assert!(eng.replay_check(&k, n_random_id));
        let chain = eng.witness(&k, n_random_id);
        assert!(chain.iter().any(|l| l.contains("opened box")));
    }
}
