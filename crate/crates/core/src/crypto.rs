//! Key material and the pluggable signature scheme.
//!
//! The default [`TestScheme`] is deterministic and fast, which is what the
//! simulator wants. It is *not* secure: a signature is a keyed hash over the
//! public key, so anybody who knows a public key can produce signatures for
//! it. Swap in a real scheme through [`KeyScheme`] for anything that faces a
//! network.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// 32-byte public key. Doubles as the owner identity of an output and as the
/// validator identity stake is delegated to.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PublicKey(#[serde(with = "hex32")] pub [u8; 32]);

#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey(pub [u8; 32]);

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Signature(#[serde(with = "hex::serde")] pub Vec<u8>);

impl PublicKey {
    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pk:{}", self.short())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sig:{}", hex::encode(&self.0))
    }
}

/// A signature scheme the ledger can be instantiated with.
pub trait KeyScheme: Send + Sync + fmt::Debug {
    fn keygen(&self, seed: u64) -> (PublicKey, SecretKey);
    fn public_of(&self, sk: &SecretKey) -> PublicKey;
    fn sign(&self, sk: &SecretKey, payload: &[u8]) -> Signature;
    fn verify(&self, pk: &PublicKey, payload: &[u8], sig: &Signature) -> bool;
}

/// Deterministic keyed-hash scheme with 64-bit signatures.
#[derive(Debug, Default, Clone, Copy)]
pub struct TestScheme;

impl TestScheme {
    fn tag(pk: &PublicKey, payload: &[u8]) -> Vec<u8> {
        // HMAC-SHA256 keyed by the public key, truncated to 8 bytes.
        let mut key = [0u8; 64];
        key[..32].copy_from_slice(&pk.0);
        let mut inner = Sha256::new();
        inner.update(key.map(|b| b ^ 0x36));
        inner.update(payload);
        let inner = inner.finalize();
        let mut outer = Sha256::new();
        outer.update(key.map(|b| b ^ 0x5c));
        outer.update(inner);
        outer.finalize()[..8].to_vec()
    }
}

impl KeyScheme for TestScheme {
    fn keygen(&self, seed: u64) -> (PublicKey, SecretKey) {
        let mut h = Sha256::new();
        h.update(b"abc/sk");
        h.update(seed.to_be_bytes());
        let sk = SecretKey(h.finalize().into());
        (self.public_of(&sk), sk)
    }

    fn public_of(&self, sk: &SecretKey) -> PublicKey {
        let mut h = Sha256::new();
        h.update(b"abc/pk");
        h.update(sk.0);
        PublicKey(h.finalize().into())
    }

    fn sign(&self, sk: &SecretKey, payload: &[u8]) -> Signature {
        Signature(Self::tag(&self.public_of(sk), payload))
    }

    fn verify(&self, pk: &PublicKey, payload: &[u8], sig: &Signature) -> bool {
        sig.0 == Self::tag(pk, payload)
    }
}

/// Seed derivation for named test identities ("alice", "v1", ...).
pub fn seed_for_name(name: &str) -> u64 {
    let d = Sha256::digest(name.as_bytes());
    u64::from_be_bytes(d[..8].try_into().expect("8 bytes"))
}

mod hex32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keygen_is_deterministic_and_distinct() {
        let s = TestScheme;
        assert_eq!(s.keygen(7).0, s.keygen(7).0);
        assert_ne!(s.keygen(7).0, s.keygen(8).0);
    }

    #[test]
    fn sign_verify_roundtrip() {
        let s = TestScheme;
        let (pk, sk) = s.keygen(1);
        let (other, other_sk) = s.keygen(2);
        let sig = s.sign(&sk, b"payload");
        assert_eq!(sig.0.len(), 8);
        assert!(s.verify(&pk, b"payload", &sig));
        assert!(!s.verify(&pk, b"payload!", &sig));
        assert!(!s.verify(&other, b"payload", &sig));
        assert!(!s.verify(&pk, b"payload", &s.sign(&other_sk, b"payload")));
    }
}
