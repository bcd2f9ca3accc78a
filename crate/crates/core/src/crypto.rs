//! keccak256 hashing and recoverable secp256k1 ECDSA.
//!
//! Signatures use the 65-byte r || s || v encoding. User ops are verified by
//! recovering the signer and comparing its derived address to the claimed
//! sender; attestations are verified directly under the attested compressed
//! public key.

use k256::ecdsa::signature::hazmat::PrehashVerifier;
pub use k256::ecdsa::SigningKey;
use k256::ecdsa::{RecoveryId, Signature, VerifyingKey};
use sha3::{Digest, Keccak256};

use crate::types::{EnclavePubKey, Hash32, Signature65, UserId};

pub fn keccak256(data: &[u8]) -> Hash32 {
    let out = Keccak256::digest(data);
    Hash32(out.into())
}

/// keccak256 over the concatenation of several byte slices.
pub fn keccak256_concat(parts: &[&[u8]]) -> Hash32 {
    let mut hasher = Keccak256::new();
    for part in parts {
        hasher.update(part);
    }
    Hash32(hasher.finalize().into())
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("secret bytes are not a valid secp256k1 scalar")]
    InvalidSecret,
}

/// Deterministically derive a signing key from 32 seed bytes, stretching the
/// seed until it lands on a valid scalar.
pub fn signing_key_from_seed(seed: &[u8; 32]) -> SigningKey {
    let mut candidate = *seed;
    loop {
        if let Ok(key) = SigningKey::from_bytes(&candidate.into()) {
            return key;
        }
        candidate = keccak256(&candidate).0;
    }
}

/// Address derivation: last 20 bytes of keccak256 of the uncompressed public
/// key (without the 0x04 prefix byte).
pub fn address_of(key: &VerifyingKey) -> UserId {
    let point = key.to_sec1_point(false);
    let digest = keccak256(&point.as_bytes()[1..]);
    let mut addr = [0u8; 20];
    addr.copy_from_slice(&digest.0[12..]);
    UserId(addr)
}

pub fn compressed_pubkey(key: &VerifyingKey) -> EnclavePubKey {
    let point = key.to_sec1_point(true);
    let mut bytes = [0u8; 33];
    bytes.copy_from_slice(point.as_bytes());
    EnclavePubKey(bytes)
}

/// RFC6979 deterministic signature over a 32-byte digest, recoverable
/// encoding.
pub fn sign_digest(key: &SigningKey, digest: &Hash32) -> Signature65 {
    let (sig, recovery): (Signature, RecoveryId) = key.sign_prehash_recoverable(&digest.0);
    let mut out = [0u8; 65];
    out[..64].copy_from_slice(&sig.to_bytes());
    out[64] = recovery.to_byte();
    Signature65(out)
}

/// Recover the signer address from a 65-byte signature. None if the
/// signature is malformed or recovery fails.
pub fn recover_address(digest: &Hash32, sig: &Signature65) -> Option<UserId> {
    let parsed = Signature::from_slice(&sig.0[..64]).ok()?;
    let recovery = RecoveryId::from_byte(sig.0[64])?;
    let key = VerifyingKey::recover_from_prehash(&digest.0, &parsed, recovery).ok()?;
    Some(address_of(&key))
}

/// Verify a signature directly under a compressed public key (recovery byte
/// ignored).
pub fn verify_with_key(pubkey: &EnclavePubKey, digest: &Hash32, sig: &Signature65) -> bool {
    let Ok(key) = VerifyingKey::from_sec1_bytes(&pubkey.0) else {
        return false;
    };
    let Ok(parsed) = Signature::from_slice(&sig.0[..64]) else {
        return false;
    };
    key.verify_prehash(&digest.0, &parsed).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keccak_matches_known_vectors() {
        assert_eq!(
            keccak256(b"").to_hex(),
            "0xc5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"
        );
        assert_eq!(
            keccak256(b"hello").to_hex(),
            "0x1c8aff950685c2ed4bc3174f3472287b56d9517b9c948127319a09a7a36deac8"
        );
    }

    #[test]
    fn concat_equals_single_buffer() {
        let whole = keccak256(b"abcdef");
        let parts = keccak256_concat(&[b"ab", b"cd", b"ef"]);
        assert_eq!(whole, parts);
    }

    #[test]
    fn sign_recover_round_trip() {
        let key = signing_key_from_seed(&[42u8; 32]);
        let digest = keccak256(b"payload");
        let sig = sign_digest(&key, &digest);
        let addr = recover_address(&digest, &sig).unwrap();
        assert_eq!(addr, address_of(key.verifying_key()));
    }

    #[test]
    fn recover_rejects_wrong_digest() {
        let key = signing_key_from_seed(&[42u8; 32]);
        let sig = sign_digest(&key, &keccak256(b"payload"));
        let other = recover_address(&keccak256(b"other"), &sig);
        // Recovery over a different digest yields some other address (or none).
        assert_ne!(other, Some(address_of(key.verifying_key())));
    }

    #[test]
    fn verify_with_key_checks_payload() {
        let key = signing_key_from_seed(&[1u8; 32]);
        let pubkey = compressed_pubkey(key.verifying_key());
        let digest = keccak256(b"attested");
        let sig = sign_digest(&key, &digest);
        assert!(verify_with_key(&pubkey, &digest, &sig));
        assert!(!verify_with_key(&pubkey, &keccak256(b"tampered"), &sig));
    }

    #[test]
    fn signatures_are_deterministic() {
        let key = signing_key_from_seed(&[9u8; 32]);
        let digest = keccak256(b"same input");
        assert_eq!(sign_digest(&key, &digest), sign_digest(&key, &digest));
    }
}
