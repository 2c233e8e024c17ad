//! SGRS: group key agreement with shared random nonces.
//!
//! Members of a group form a logical ring. Every member generates one secret
//! nonce which is known to every member except its ring successor; the set of
//! nonces a member holds is its *state vector*. From the state vector and the
//! current group key each member can derive subgroup multicast keys locally,
//! and the membership protocols (join, leave, merge, partition, cascaded
//! supergroups) rekey the group with a constant number of messages.
//!
//! The crate contains the protocol engine over a deterministic in-memory
//! network ([`simnet`]), a symbolic knowledge-closure attacker that checks
//! the scheme's secrecy properties on real transcripts ([`adversary`]), and
//! a closed-form cost evaluator reproducing the published complexity table
//! and figure data ([`analytic`]).

pub mod adversary;
pub mod analytic;
pub mod group;
pub mod id;
pub mod primitives;
pub mod protocol;
pub mod scenario;
pub mod simnet;

pub use group::{GroupRing, GroupSnapshot, MemberState, StateVector};
pub use id::{GroupId, MemberId};
pub use primitives::{Digest, Nonce, SealedBox, SeededRng};
