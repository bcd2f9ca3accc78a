//! Shared domain vocabulary: identifiers, hashes, signatures, userOps and
//! bundles, plus their canonical byte serializations.

use serde::{Deserialize, Serialize};

use crate::crypto::{self, keccak256};

/// Implements 0x-prefixed hex serde + Display for fixed-width byte newtypes.
macro_rules! hex_bytes_newtype {
    ($name:ident, $len:expr) => {
        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                format!("0x{}", hex::encode(self.0))
            }

            pub fn from_hex(s: &str) -> Result<Self, TypeError> {
                let s = s.strip_prefix("0x").unwrap_or(s);
                let raw = hex::decode(s).map_err(|_| TypeError::BadHex)?;
                let bytes: [u8; $len] = raw
                    .try_into()
                    .map_err(|_| TypeError::BadLength { expected: $len })?;
                Ok(Self(bytes))
            }
        }

        impl From<[u8; $len]> for $name {
            fn from(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}", self.to_hex())
            }
        }

        impl std::fmt::Debug for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
                ser.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
                let s = String::deserialize(de)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

/// serde helper for u128 config fields: emits decimal strings (TOML has no
/// 128-bit integers) and accepts strings or plain integers.
pub mod u128_serde {
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = u128;

            fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str("an unsigned integer or decimal string")
            }

            fn visit_u64<E>(self, v: u64) -> Result<u128, E> {
                Ok(v as u128)
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<u128, E> {
                u128::try_from(v).map_err(|_| E::custom("negative value"))
            }

            fn visit_u128<E>(self, v: u128) -> Result<u128, E> {
                Ok(v)
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<u128, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(Visitor)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TypeError {
    #[error("invalid hex string")]
    BadHex,
    #[error("wrong byte length, expected {expected}")]
    BadLength { expected: usize },
    #[error("unknown rule byte {0}")]
    UnknownRule(u8),
    #[error("bundle must contain at least one op")]
    EmptyBundle,
    #[error("bundle ops disagree on rule")]
    MixedRules,
}

/// 20-byte user identifier, derived from the user's secp256k1 public key the
/// same way an Ethereum address is. The zero address is a reserved sentinel
/// and never a valid op sender.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub [u8; 20]);
hex_bytes_newtype!(UserId, 20);

impl UserId {
    pub const ZERO: UserId = UserId([0u8; 20]);

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }
}

/// 20-byte bundler account identifier (staking identity, stable under
/// registry re-indexing).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BundlerAccount(pub [u8; 20]);
hex_bytes_newtype!(BundlerAccount, 20);

/// 32-byte keccak256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash32(pub [u8; 32]);
hex_bytes_newtype!(Hash32, 32);

/// 33-byte compressed secp256k1 public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EnclavePubKey(pub [u8; 33]);
hex_bytes_newtype!(EnclavePubKey, 33);

/// 65-byte recoverable ECDSA signature: r(32) || s(32) || v(1).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature65(pub [u8; 65]);
hex_bytes_newtype!(Signature65, 65);

impl Signature65 {
    /// Placeholder value for ops built in contexts where no key exists;
    /// never verifies.
    pub fn zero() -> Self {
        Signature65([0u8; 65])
    }
}

/// Discrete chain time; one block is one routing epoch.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockHeight(pub u64);

impl BlockHeight {
    pub fn next(self) -> Self {
        BlockHeight(self.0 + 1)
    }
}

impl std::fmt::Display for BlockHeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Debug for BlockHeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The four gas allocation rules.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleId {
    Rule1,
    Rule2,
    Rule3,
    Rule4,
}

impl RuleId {
    pub const ALL: [RuleId; 4] = [RuleId::Rule1, RuleId::Rule2, RuleId::Rule3, RuleId::Rule4];

    pub fn as_byte(self) -> u8 {
        match self {
            RuleId::Rule1 => 1,
            RuleId::Rule2 => 2,
            RuleId::Rule3 => 3,
            RuleId::Rule4 => 4,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, TypeError> {
        match b {
            1 => Ok(RuleId::Rule1),
            2 => Ok(RuleId::Rule2),
            3 => Ok(RuleId::Rule3),
            4 => Ok(RuleId::Rule4),
            other => Err(TypeError::UnknownRule(other)),
        }
    }
}

impl std::fmt::Display for RuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "rule{}", self.as_byte())
    }
}

/// A gas sponsorship request.
///
/// `gas_cost` is declared up front and is exactly what execution consumes.
/// `wallet_balance` is the sender's balance snapshot consumed by rule 4 and
/// cross-checked by the chain at execution time.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct UserOp {
    pub sender: UserId,
    pub rule: RuleId,
    pub gas_cost: u64,
    pub nonce: u64,
    pub wallet_balance: u128,
    pub submit_block: BlockHeight,
    pub signature: Signature65,
}

impl UserOp {
    /// Canonical digest preimage: big-endian fixed-width fields in
    /// declaration order, signature excluded.
    /// sender(20) || rule(1) || gas_cost(8) || nonce(8) || wallet_balance(32) || submit_block(8)
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(77);
        out.extend_from_slice(&self.sender.0);
        out.push(self.rule.as_byte());
        out.extend_from_slice(&self.gas_cost.to_be_bytes());
        out.extend_from_slice(&self.nonce.to_be_bytes());
        let mut bal = [0u8; 32];
        bal[16..].copy_from_slice(&self.wallet_balance.to_be_bytes());
        out.extend_from_slice(&bal);
        out.extend_from_slice(&self.submit_block.0.to_be_bytes());
        out
    }

    pub fn digest(&self) -> Hash32 {
        keccak256(&self.signing_bytes())
    }

    /// True iff the signature recovers to the sender's address.
    pub fn verify_signature(&self) -> bool {
        crypto::recover_address(&self.digest(), &self.signature)
            .map(|addr| addr == self.sender)
            .unwrap_or(false)
    }

    pub fn key(&self) -> (UserId, u64) {
        (self.sender, self.nonce)
    }
}

/// Canonical digest of a userOp. Pure function of the canonical serialization.
pub fn op_digest(op: &UserOp) -> Hash32 {
    op.digest()
}

/// Attestation report binding an enclave measurement and key to a signed
/// payload.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Attestation {
    pub mrenclave: Hash32,
    pub enclave_pubkey: EnclavePubKey,
    pub report_block: BlockHeight,
    pub signature: Signature65,
}

/// Position plus staking identity of a bundler in the active circular
/// registry. The index is re-assigned on churn; the account is stable.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BundlerId {
    pub index: u32,
    pub account: BundlerAccount,
}

/// The enclave-attested submission unit: ordered accepted ops for one rule,
/// the root transition they induce, and the attestation over it.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct OptimizedBundle {
    pub ops: Vec<UserOp>,
    pub rule: RuleId,
    pub bundler: BundlerId,
    pub old_root: Hash32,
    pub new_root: Hash32,
    pub attestation: Attestation,
    pub submit_block: BlockHeight,
}

impl OptimizedBundle {
    pub fn new(
        ops: Vec<UserOp>,
        rule: RuleId,
        bundler: BundlerId,
        old_root: Hash32,
        new_root: Hash32,
        attestation: Attestation,
        submit_block: BlockHeight,
    ) -> Result<Self, TypeError> {
        if ops.is_empty() {
            return Err(TypeError::EmptyBundle);
        }
        if ops.iter().any(|op| op.rule != rule) {
            return Err(TypeError::MixedRules);
        }
        Ok(Self {
            ops,
            rule,
            bundler,
            old_root,
            new_root,
            attestation,
            submit_block,
        })
    }
}
