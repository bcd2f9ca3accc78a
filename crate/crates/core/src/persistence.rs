//! Content-addressed snapshot + ordered update log with deterministic state
//! reconstruction.
//!
//! Blobs live as files named by the hex keccak256 of their bytes under the
//! store directory; `tips.json` tracks the latest log entry per rule. Log
//! entries for a rule form a hash chain through (prev_root, new_root), so
//! the state at any committed root can be rebuilt from the nearest snapshot
//! plus a replay of the entries after it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crypto::keccak256;
use crate::merkle::{RuleGlobalState, StateTree, UserState};
use crate::rules::{self, RuleParams};
use crate::types::{BlockHeight, Hash32, RuleId, UserId, UserOp};

pub const DEFAULT_SNAPSHOT_EVERY: u64 = 50;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("blob {0} missing from store")]
    MissingBlob(Hash32),
    #[error("blob {cid} bytes do not hash to their address")]
    CorruptBlob { cid: Hash32 },
    #[error("entry seq {got} does not extend tip seq {tip}")]
    SequenceBreak { tip: u64, got: u64 },
    #[error("entry prev_root {got} does not match stored tip root {tip}")]
    ChainBreak { tip: Hash32, got: Hash32 },
    #[error("replay at seq {seq} produced root {replayed}, log records {recorded}")]
    RootMismatch {
        seq: u64,
        replayed: Hash32,
        recorded: Hash32,
    },
    #[error("no log entry or snapshot carries root {0}")]
    TargetNotFound(Hash32),
    #[error("replayed op was rejected at seq {seq}: {detail}")]
    ReplayRejected { seq: u64, detail: String },
    #[error("store metadata missing or unreadable")]
    BadMetadata,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding error: {0}")]
    Encoding(#[from] serde_json::Error),
}

/// One accepted round appended to a rule's ordered update log.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct UpdateLogEntry {
    pub seq: u64,
    pub rule: RuleId,
    pub block: BlockHeight,
    pub bundle_digest: Hash32,
    pub ops: Vec<UserOp>,
    pub prev_root: Hash32,
    pub new_root: Hash32,
}

/// On-disk wrapper of a log entry with back pointers for replay.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
struct StoredEntry {
    entry: UpdateLogEntry,
    prev_log_cid: Option<Hash32>,
    snapshot_cid: Option<Hash32>,
}

/// Full leaf-map snapshot of a rule's state after `seq` entries.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
struct SnapshotBlob {
    rule: RuleId,
    seq: u64,
    root: Hash32,
    global: RuleGlobalState,
    leaves: Vec<(UserId, UserState)>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
struct TipRecord {
    seq: u64,
    cid: Hash32,
    root: Hash32,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
struct TipsFile {
    meta_cid: Option<Hash32>,
    tips: BTreeMap<RuleId, TipRecord>,
}

/// Replay configuration persisted with the log so reconstruction is a pure
/// function of the store contents.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
struct StoreMeta {
    params: RuleParams,
    snapshot_every: u64,
}

/// Directory-backed content-addressed store.
pub struct ContentStore {
    dir: PathBuf,
    meta: StoreMeta,
    tips: TipsFile,
}

impl ContentStore {
    /// Create a store in `dir`, persisting the rule parameters the log's
    /// replay semantics depend on.
    pub fn create(
        dir: impl Into<PathBuf>,
        params: RuleParams,
        snapshot_every: u64,
    ) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let meta = StoreMeta {
            params,
            snapshot_every,
        };
        let mut store = Self {
            dir,
            meta,
            tips: TipsFile::default(),
        };
        let meta_cid = store.put_blob(&serde_json::to_vec(&store.meta)?)?;
        store.tips.meta_cid = Some(meta_cid);
        store.write_tips()?;
        Ok(store)
    }

    /// Open an existing store, reading tips and replay metadata from disk.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let tips_raw = fs::read(dir.join("tips.json"))?;
        let tips: TipsFile = serde_json::from_slice(&tips_raw)?;
        let meta_cid = tips.meta_cid.ok_or(StoreError::BadMetadata)?;
        let placeholder = StoreMeta {
            params: RuleParams::default(),
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        };
        let mut store = Self {
            dir,
            meta: placeholder,
            tips,
        };
        let meta_bytes = store.get_blob(&meta_cid)?;
        store.meta = serde_json::from_slice(&meta_bytes)?;
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn params(&self) -> &RuleParams {
        &self.meta.params
    }

    pub fn snapshot_every(&self) -> u64 {
        self.meta.snapshot_every
    }

    pub fn tip_seq(&self, rule: RuleId) -> Option<u64> {
        self.tips.tips.get(&rule).map(|t| t.seq)
    }

    pub fn tip_root(&self, rule: RuleId) -> Option<Hash32> {
        self.tips.tips.get(&rule).map(|t| t.root)
    }

    fn blob_path(&self, cid: &Hash32) -> PathBuf {
        self.dir.join(hex::encode(cid.0))
    }

    /// Store bytes under their content hash. Existing blobs are never
    /// rewritten.
    fn put_blob(&self, bytes: &[u8]) -> Result<Hash32, StoreError> {
        let cid = keccak256(bytes);
        let path = self.blob_path(&cid);
        if !path.exists() {
            fs::write(path, bytes)?;
        }
        Ok(cid)
    }

    /// Fetch a blob and verify it still hashes to its address.
    pub fn get_blob(&self, cid: &Hash32) -> Result<Vec<u8>, StoreError> {
        let path = self.blob_path(cid);
        let bytes = fs::read(&path).map_err(|_| StoreError::MissingBlob(*cid))?;
        if keccak256(&bytes) != *cid {
            return Err(StoreError::CorruptBlob { cid: *cid });
        }
        Ok(bytes)
    }

    fn write_tips(&self) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(&self.tips)?;
        fs::write(self.dir.join("tips.json"), bytes)?;
        Ok(())
    }

    /// Append one accepted round to a rule's log; stores a full snapshot
    /// every `snapshot_every` entries. Returns the log blob cid and the
    /// snapshot cid when one was taken.
    pub fn persist_round(
        &mut self,
        entry: UpdateLogEntry,
        snapshot: Option<&StateTree>,
    ) -> Result<(Hash32, Option<Hash32>), StoreError> {
        let tip = self.tips.tips.get(&entry.rule).copied();
        let (expected_seq, prev_log_cid) = match tip {
            Some(t) => (t.seq + 1, Some(t.cid)),
            None => (1, None),
        };
        if entry.seq != expected_seq {
            return Err(StoreError::SequenceBreak {
                tip: expected_seq - 1,
                got: entry.seq,
            });
        }
        if let Some(t) = tip {
            if entry.prev_root != t.root {
                return Err(StoreError::ChainBreak {
                    tip: t.root,
                    got: entry.prev_root,
                });
            }
        }

        let snapshot_cid = match snapshot {
            Some(tree) if entry.seq.is_multiple_of(self.meta.snapshot_every) => {
                let blob = SnapshotBlob {
                    rule: entry.rule,
                    seq: entry.seq,
                    root: tree.root(),
                    global: *tree.global(),
                    leaves: tree.leaves().iter().map(|(u, s)| (*u, *s)).collect(),
                };
                Some(self.put_blob(&serde_json::to_vec(&blob)?)?)
            }
            _ => None,
        };

        let stored = StoredEntry {
            entry,
            prev_log_cid,
            snapshot_cid,
        };
        let cid = self.put_blob(&serde_json::to_vec(&stored)?)?;
        self.tips.tips.insert(
            stored.entry.rule,
            TipRecord {
                seq: stored.entry.seq,
                cid,
                root: stored.entry.new_root,
            },
        );
        self.write_tips()?;
        Ok((cid, snapshot_cid))
    }

    /// Audit a rule's full hash chain from tip to genesis: every entry blob
    /// loads and hashes to its address, sequence numbers are contiguous,
    /// roots link, and every referenced snapshot matches its entry. Returns
    /// the number of entries checked.
    pub fn verify_chain(&self, rule: RuleId) -> Result<u64, StoreError> {
        let Some(tip) = self.tips.tips.get(&rule) else {
            return Ok(0);
        };
        let mut cursor = Some(tip.cid);
        let mut expected_seq = tip.seq;
        let mut expected_root = tip.root;
        let mut checked = 0u64;

        while let Some(cid) = cursor {
            let stored = self.load_entry(&cid)?;
            let entry = &stored.entry;
            if entry.seq != expected_seq {
                return Err(StoreError::SequenceBreak {
                    tip: expected_seq,
                    got: entry.seq,
                });
            }
            if entry.new_root != expected_root {
                return Err(StoreError::ChainBreak {
                    tip: expected_root,
                    got: entry.new_root,
                });
            }
            if let Some(snap_cid) = stored.snapshot_cid {
                let snap = self.load_snapshot(&snap_cid)?;
                if snap.root != entry.new_root || snap.seq != entry.seq {
                    return Err(StoreError::RootMismatch {
                        seq: entry.seq,
                        replayed: snap.root,
                        recorded: entry.new_root,
                    });
                }
            }
            expected_root = entry.prev_root;
            expected_seq -= 1;
            checked += 1;
            cursor = stored.prev_log_cid;
        }

        if expected_seq != 0 {
            return Err(StoreError::SequenceBreak {
                tip: expected_seq,
                got: 0,
            });
        }
        let genesis = StateTree::new(rule).root();
        if expected_root != genesis {
            return Err(StoreError::ChainBreak {
                tip: genesis,
                got: expected_root,
            });
        }
        Ok(checked)
    }

    fn load_entry(&self, cid: &Hash32) -> Result<StoredEntry, StoreError> {
        let bytes = self.get_blob(cid)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn load_snapshot(&self, cid: &Hash32) -> Result<SnapshotBlob, StoreError> {
        let bytes = self.get_blob(cid)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Rebuild the state tree whose root is `target_root` from the nearest
    /// snapshot at or before it plus an in-order replay of the log.
    pub fn reconstruct(&self, rule: RuleId, target_root: Hash32) -> Result<StateTree, StoreError> {
        let genesis = StateTree::new(rule);
        if target_root == genesis.root() {
            return Ok(genesis);
        }

        // walk the chain backwards from the tip, collecting entries until we
        // find a snapshot at or before the target
        let tip = self
            .tips
            .tips
            .get(&rule)
            .ok_or(StoreError::TargetNotFound(target_root))?;
        let mut cursor = Some(tip.cid);
        let mut path: Vec<StoredEntry> = Vec::new();
        let mut target_seq: Option<u64> = None;
        let mut base: Option<SnapshotBlob> = None;

        while let Some(cid) = cursor {
            let stored = self.load_entry(&cid)?;
            if stored.entry.new_root == target_root {
                target_seq = Some(stored.entry.seq);
            }
            if let (Some(t_seq), Some(snap_cid)) = (target_seq, stored.snapshot_cid) {
                if stored.entry.seq <= t_seq {
                    let snap = self.load_snapshot(&snap_cid)?;
                    path.push(stored);
                    base = Some(snap);
                    break;
                }
            }
            cursor = stored.prev_log_cid;
            path.push(stored);
        }
        let target_seq = target_seq.ok_or(StoreError::TargetNotFound(target_root))?;

        let (mut tree, replay_from) = match base {
            Some(snap) => {
                let leaves = snap.leaves.iter().copied().collect();
                let tree = StateTree::from_parts(rule, leaves, snap.global);
                if tree.root() != snap.root {
                    return Err(StoreError::RootMismatch {
                        seq: snap.seq,
                        replayed: tree.root(),
                        recorded: snap.root,
                    });
                }
                (tree, snap.seq + 1)
            }
            None => (genesis, 1),
        };

        path.sort_by_key(|stored| stored.entry.seq);
        for stored in path
            .iter()
            .filter(|s| s.entry.seq >= replay_from && s.entry.seq <= target_seq)
        {
            self.replay_entry(&mut tree, &stored.entry)?;
        }

        if tree.root() != target_root {
            return Err(StoreError::RootMismatch {
                seq: target_seq,
                replayed: tree.root(),
                recorded: target_root,
            });
        }
        Ok(tree)
    }

    /// Apply one log entry's batch through the rules engine, checking the
    /// recorded root transition.
    fn replay_entry(&self, tree: &mut StateTree, entry: &UpdateLogEntry) -> Result<(), StoreError> {
        if tree.root() != entry.prev_root {
            return Err(StoreError::RootMismatch {
                seq: entry.seq,
                replayed: tree.root(),
                recorded: entry.prev_root,
            });
        }
        let params = &self.meta.params;
        for op in &entry.ops {
            let current = tree.state_of(&op.sender).copied().unwrap_or_default();
            let (state, global) =
                rules::epoch_normalize(&current, tree.global(), op.submit_block, params);
            let (next_state, next_global) = rules::apply_transition(&state, &global, op, params)
                .map_err(|e| StoreError::ReplayRejected {
                    seq: entry.seq,
                    detail: e.to_string(),
                })?;
            tree.apply_leaf_update(op.sender, next_state);
            tree.set_global(next_global);
        }
        if tree.root() != entry.new_root {
            return Err(StoreError::RootMismatch {
                seq: entry.seq,
                replayed: tree.root(),
                recorded: entry.new_root,
            });
        }
        Ok(())
    }
}
