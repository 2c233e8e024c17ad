//! Deterministic cryptographic primitives.
//!
//! Everything here is pure: the key-derivation function `kdf2`, the XOR
//! combiner over nonce sets, a deterministic authenticated envelope
//! (`seal`/`open`), and a seeded nonce source. Instrumented counting lives
//! in [`crate::simnet`]; calling these functions directly never touches a
//! ledger.
//!
//! All keys, digests and nonces are 256 bits. The hash is SHA-256; the
//! envelope is encrypt-then-MAC over a SHA-256 keystream with a synthetic
//! IV, so sealing is reproducible byte-for-byte given identical inputs.

use std::fmt;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::id::MemberId;

/// Registered domain-separation labels for [`kdf2`]. Each protocol call
/// site uses exactly one label with a fixed argument order:
///
/// | label     | a                    | b                  | derives            |
/// |-----------|----------------------|--------------------|--------------------|
/// | `GK-join` | current group key    | sponsor nonce      | next group key     |
/// | `GK-leave`| updated sponsor nonce| random nonce       | next group key     |
/// | `NR`      | old nonce            | mix-in value       | updated nonce      |
/// | `MK`      | XOR of indexed nonces| current group key  | multicast key      |
/// | `SG`      | current super key    | updated child key  | next super key     |
///
/// At bootstrap `GK-join` is applied to (XOR of all founding nonces,
/// first member's nonce), and at supergroup bootstrap `SG` to (XOR of all
/// child keys, first child's key).
pub const KDF_LABELS: [&str; 5] = ["GK-join", "GK-leave", "NR", "MK", "SG"];

const DOMAIN_SEAL_ENC: &[u8] = b"sgrs.seal.enc";
const DOMAIN_SEAL_MAC: &[u8] = b"sgrs.seal.mac";
const DOMAIN_SEAL_IV: &[u8] = b"sgrs.seal.iv";
const DOMAIN_RNG: &[u8] = b"sgrs.rng";
const DOMAIN_MAC: &[u8] = b"sgrs.auth.mac";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrimitiveError {
    #[error("kdf label {0:?} is not registered")]
    UnknownLabel(String),
    #[error("xor_combine over an empty nonce set")]
    EmptyNonceSet,
    #[error("xor_combine input contains duplicate nonce (origin {0}, version {1})")]
    DuplicateNonce(MemberId, u32),
    #[error("authentication failure: recipient could not open the sealed box")]
    AuthFailure,
}

/// A 256-bit hash output. Houses group keys, multicast keys and MAC values.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const LEN: usize = 32;

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Short hex form used in reports and witness chains.
    pub fn hex8(&self) -> String {
        self.0[..4].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", self.hex8())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.hex8())
    }
}

/// A member's secret nonce. `version` counts rehash updates of the value;
/// every rehash bumps it by exactly one.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Nonce {
    pub bytes: [u8; 32],
    pub origin: MemberId,
    pub version: u32,
}

impl Nonce {
    /// The rehashed successor of this nonce: `kdf2("NR", old, mixin)`,
    /// same origin, version + 1.
    pub fn rehashed(&self, mixin: &[u8; 32]) -> Nonce {
        let bytes = kdf2("NR", &self.bytes, mixin).expect("NR is registered");
        Nonce {
            bytes: bytes.0,
            origin: self.origin,
            version: self.version + 1,
        }
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex: String = self.bytes[..4].iter().map(|b| format!("{b:02x}")).collect();
        write!(f, "n[{}.v{}]({}..)", self.origin, self.version, hex)
    }
}

/// Authenticated envelope: synthetic IV, XOR keystream ciphertext, MAC tag
/// over IV, associated data and ciphertext.
#[derive(Clone, PartialEq, Eq)]
pub struct SealedBox {
    pub iv: [u8; 16],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; 32],
    pub ad: Vec<u8>,
}

impl SealedBox {
    /// Wire length of the concrete encoding (IV + ciphertext + tag); the
    /// abstract size model ignores this and prices payload composition.
    pub fn physical_len(&self) -> usize {
        self.iv.len() + self.ciphertext.len() + self.tag.len()
    }
}

impl fmt::Debug for SealedBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SealedBox({} ct bytes)", self.ciphertext.len())
    }
}

fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

fn len_prefixed(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + data.len());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    out.extend_from_slice(data);
    out
}

/// Two-input key derivation with label-based domain separation:
/// `SHA-256(len(label) || label || a || b)`.
pub fn kdf2(label: &str, a: &[u8; 32], b: &[u8; 32]) -> Result<Digest, PrimitiveError> {
    if !KDF_LABELS.contains(&label) {
        return Err(PrimitiveError::UnknownLabel(label.to_string()));
    }
    Ok(Digest(sha256(&[&len_prefixed(label.as_bytes()), a, b])))
}

/// Byte-wise XOR of an arbitrary set of 32-byte values. Order-independent.
pub fn xor_bytes<'a>(values: impl IntoIterator<Item = &'a [u8; 32]>) -> [u8; 32] {
    let mut acc = [0u8; 32];
    for v in values {
        for (a, b) in acc.iter_mut().zip(v.iter()) {
            *a ^= b;
        }
    }
    acc
}

/// XOR combination of a non-empty nonce set, the inner step of the
/// multicast key function. Inputs must be pairwise distinct by
/// (origin, version).
pub fn xor_combine<'a>(
    nonces: impl IntoIterator<Item = &'a Nonce>,
) -> Result<[u8; 32], PrimitiveError> {
    let mut seen: Vec<(MemberId, u32)> = Vec::new();
    let mut acc = [0u8; 32];
    let mut any = false;
    for n in nonces {
        if seen.contains(&(n.origin, n.version)) {
            return Err(PrimitiveError::DuplicateNonce(n.origin, n.version));
        }
        seen.push((n.origin, n.version));
        for (a, b) in acc.iter_mut().zip(n.bytes.iter()) {
            *a ^= b;
        }
        any = true;
    }
    if !any {
        return Err(PrimitiveError::EmptyNonceSet);
    }
    Ok(acc)
}

fn keystream_xor(enc_key: &[u8; 32], iv: &[u8; 16], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    for (block_idx, chunk) in data.chunks(32).enumerate() {
        let ks = sha256(&[enc_key, iv, &(block_idx as u64).to_le_bytes()]);
        out.extend(chunk.iter().zip(ks.iter()).map(|(d, k)| d ^ k));
    }
    out
}

/// Seals `plaintext` under `key`, binding `ad`. Deterministic: the IV is
/// synthesized from (key, ad, plaintext), so identical inputs give
/// identical boxes.
pub fn seal(key: &Digest, ad: &[u8], plaintext: &[u8]) -> SealedBox {
    let iv_full = sha256(&[
        DOMAIN_SEAL_IV,
        &key.0,
        &len_prefixed(ad),
        &len_prefixed(plaintext),
    ]);
    let mut iv = [0u8; 16];
    iv.copy_from_slice(&iv_full[..16]);
    let enc_key = sha256(&[DOMAIN_SEAL_ENC, &key.0]);
    let mac_key = sha256(&[DOMAIN_SEAL_MAC, &key.0]);
    let ciphertext = keystream_xor(&enc_key, &iv, plaintext);
    let tag = sha256(&[&mac_key, &iv, &len_prefixed(ad), &len_prefixed(&ciphertext)]);
    SealedBox {
        iv,
        ciphertext,
        tag,
        ad: ad.to_vec(),
    }
}

/// Opens a sealed box. Total: any mismatch in key, associated data,
/// ciphertext or tag yields `AuthFailure`.
pub fn open(key: &Digest, sealed: &SealedBox) -> Result<Vec<u8>, PrimitiveError> {
    let enc_key = sha256(&[DOMAIN_SEAL_ENC, &key.0]);
    let mac_key = sha256(&[DOMAIN_SEAL_MAC, &key.0]);
    let expected = sha256(&[
        &mac_key,
        &sealed.iv,
        &len_prefixed(&sealed.ad),
        &len_prefixed(&sealed.ciphertext),
    ]);
    if expected != sealed.tag {
        return Err(PrimitiveError::AuthFailure);
    }
    Ok(keystream_xor(&enc_key, &sealed.iv, &sealed.ciphertext))
}

/// MAC used by the authentication stub to sign joining-tag nonces.
pub fn auth_mac(key: &Digest, data: &[u8]) -> Digest {
    Digest(sha256(&[DOMAIN_MAC, &key.0, &len_prefixed(data)]))
}

/// Counter-mode hash RNG: `SHA-256(domain || seed || counter)`. Identical
/// seeds reproduce identical streams, which is what makes whole runs
/// replayable.
#[derive(Clone, Debug)]
pub struct SeededRng {
    pub seed: u64,
    pub counter: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { seed, counter: 0 }
    }

    /// Independent substream, e.g. one per group so that events on
    /// disjoint groups commute.
    pub fn derive(&self, stream_label: &str) -> SeededRng {
        let d = sha256(&[
            DOMAIN_RNG,
            &self.seed.to_le_bytes(),
            b"derive",
            stream_label.as_bytes(),
        ]);
        SeededRng::new(u64::from_le_bytes(d[..8].try_into().unwrap()))
    }

    pub fn next_bytes(&mut self) -> [u8; 32] {
        let out = sha256(&[
            DOMAIN_RNG,
            &self.seed.to_le_bytes(),
            &self.counter.to_le_bytes(),
        ]);
        self.counter += 1;
        out
    }

    pub fn next_u64(&mut self) -> u64 {
        u64::from_le_bytes(self.next_bytes()[..8].try_into().unwrap())
    }

    /// Uniform draw in `0..bound` (bound > 0) by rejection-free modular
    /// reduction; bias is negligible for the simulator's ranges.
    pub fn next_range(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        self.next_u64() % bound
    }
}

/// Draws a fresh version-0 nonce for `origin` from the seeded stream.
pub fn next_nonce(rng: &mut SeededRng, origin: MemberId) -> Nonce {
    Nonce {
        bytes: rng.next_bytes(),
        origin,
        version: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nonce(id: u32, bytes: [u8; 32]) -> Nonce {
        Nonce {
            bytes,
            origin: MemberId(id),
            version: 0,
        }
    }

    fn rnd(rng: &mut SeededRng, id: u32) -> Nonce {
        next_nonce(rng, MemberId(id))
    }

    #[test]
    fn kdf2_is_deterministic_and_32_bytes() {
        let k = [7u8; 32];
        let n = [9u8; 32];
        let a = kdf2("GK-join", &k, &n).unwrap();
        let b = kdf2("GK-join", &k, &n).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_bytes().len(), 32);
    }

    #[test]
    fn kdf2_rejects_unregistered_label() {
        let err = kdf2("nope", &[0; 32], &[0; 32]).unwrap_err();
        assert!(matches!(err, PrimitiveError::UnknownLabel(_)));
    }

    #[test]
    fn kdf2_labels_separate_domains() {
        // 10^3 random pairs, no cross-label collision expected.
        let mut rng = SeededRng::new(17);
        for _ in 0..1000 {
            let k = rng.next_bytes();
            let n = rng.next_bytes();
            let a = kdf2("GK-join", &k, &n).unwrap();
            let b = kdf2("NR", &k, &n).unwrap();
            assert_ne!(a, b);
        }
    }

    #[test]
    fn kdf2_argument_order_matters() {
        let a = [1u8; 32];
        let b = [2u8; 32];
        assert_ne!(kdf2("NR", &a, &b).unwrap(), kdf2("NR", &b, &a).unwrap());
    }

    #[test]
    fn xor_combine_singleton_is_identity() {
        let n = nonce(1, [0xAB; 32]);
        assert_eq!(xor_combine([&n]).unwrap(), n.bytes);
    }

    #[test]
    fn xor_combine_is_order_independent() {
        let mut rng = SeededRng::new(3);
        let a = rnd(&mut rng, 1);
        let b = rnd(&mut rng, 2);
        assert_eq!(
            xor_combine([&a, &b]).unwrap(),
            xor_combine([&b, &a]).unwrap()
        );
    }

    #[test]
    fn xor_combine_matches_naive_loop() {
        let mut rng = SeededRng::new(4);
        let ns = [rnd(&mut rng, 1), rnd(&mut rng, 2), rnd(&mut rng, 3)];
        let mut expect = [0u8; 32];
        for n in &ns {
            for i in 0..32 {
                expect[i] ^= n.bytes[i];
            }
        }
        assert_eq!(xor_combine(ns.iter()).unwrap(), expect);
    }

    #[test]
    fn xor_combine_rejects_empty_and_duplicates() {
        assert_eq!(
            xor_combine([]).unwrap_err(),
            PrimitiveError::EmptyNonceSet
        );
        let n = nonce(1, [5; 32]);
        assert!(matches!(
            xor_combine([&n, &n]).unwrap_err(),
            PrimitiveError::DuplicateNonce(_, _)
        ));
    }

    #[test]
    fn seal_open_roundtrip() {
        let key = Digest([0x42; 32]);
        let pt = b"the quick brown fox, twice around the ring";
        let boxed = seal(&key, b"step", pt);
        assert_eq!(open(&key, &boxed).unwrap(), pt.to_vec());
    }

    #[test]
    fn open_with_wrong_key_fails() {
        let key = Digest([0x42; 32]);
        let other = Digest([0x43; 32]);
        let boxed = seal(&key, b"ad", b"payload");
        assert_eq!(open(&other, &boxed).unwrap_err(), PrimitiveError::AuthFailure);
    }

    #[test]
    fn tampered_box_fails() {
        let key = Digest([9; 32]);
        let mut boxed = seal(&key, b"ad", b"payload bytes");
        boxed.ciphertext[0] ^= 1;
        assert_eq!(open(&key, &boxed).unwrap_err(), PrimitiveError::AuthFailure);

        let mut boxed = seal(&key, b"ad", b"payload bytes");
        boxed.ad.push(0);
        assert_eq!(open(&key, &boxed).unwrap_err(), PrimitiveError::AuthFailure);
    }

    #[test]
    fn forgery_sampling_all_rejected() {
        // 10^3 random single-bit flips across key, iv, ct, tag, ad.
        let key = Digest([0x10; 32]);
        let boxed = seal(&key, b"assoc", b"thirty-two bytes of secret data!");
        let mut rng = SeededRng::new(99);
        for _ in 0..1000 {
            let mut k = key;
            let mut b = boxed.clone();
            let field = rng.next_range(5);
            match field {
                0 => {
                    let i = rng.next_range(32) as usize;
                    k.0[i] ^= 1 << rng.next_range(8);
                }
                1 => {
                    let i = rng.next_range(16) as usize;
                    b.iv[i] ^= 1 << rng.next_range(8);
                }
                2 => {
                    let i = rng.next_range(b.ciphertext.len() as u64) as usize;
                    b.ciphertext[i] ^= 1 << rng.next_range(8);
                }
                3 => {
                    let i = rng.next_range(32) as usize;
                    b.tag[i] ^= 1 << rng.next_range(8);
                }
                _ => {
                    let i = rng.next_range(b.ad.len() as u64) as usize;
                    b.ad[i] ^= 1 << rng.next_range(8);
                }
            }
            assert_eq!(open(&k, &b).unwrap_err(), PrimitiveError::AuthFailure);
        }
    }

    #[test]
    fn rng_same_seed_same_sequence() {
        let mut a = SeededRng::new(123);
        let mut b = SeededRng::new(123);
        for id in 0..20 {
            assert_eq!(rnd(&mut a, id), rnd(&mut b, id));
        }
    }

    #[test]
    fn rng_draws_are_distinct() {
        let mut rng = SeededRng::new(5);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..10_000 {
            assert!(seen.insert(rng.next_bytes()));
        }
    }

    #[test]
    fn fresh_nonce_has_version_zero() {
        let mut rng = SeededRng::new(1);
        assert_eq!(rnd(&mut rng, 7).version, 0);
    }

    #[test]
    fn rehash_bumps_version_by_one() {
        let mut rng = SeededRng::new(2);
        let n = rnd(&mut rng, 3);
        let mix = rng.next_bytes();
        let r = n.rehashed(&mix);
        assert_eq!(r.version, 1);
        assert_eq!(r.origin, n.origin);
        assert_eq!(r.bytes, kdf2("NR", &n.bytes, &mix).unwrap().0);
    }

    #[test]
    fn auth_mac_binds_key_and_data() {
        let k1 = Digest([1; 32]);
        let k2 = Digest([2; 32]);
        assert_eq!(auth_mac(&k1, b"m"), auth_mac(&k1, b"m"));
        assert_ne!(auth_mac(&k1, b"m"), auth_mac(&k2, b"m"));
        assert_ne!(auth_mac(&k1, b"m"), auth_mac(&k1, b"n"));
    }
}
