//! Sliding-window token memory.
//!
//! The newest `N` frames stay active with all of their tokens. When a frame
//! leaves the window its tokens are folded into the pruned store: each
//! anchored token competes under the selection rule with whatever the store
//! already holds for its voxel, so revisiting a place replaces memory rather
//! than growing it. Anchorless tokens of an evicted frame are kept up to
//! `ceil(rho · L)` per frame.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::{keep_floor, PipelineConfig};
use crate::error::{Error, Result};
use crate::frame::FrameObservation;
use crate::pruner::select;
use crate::tokens::{tokenize_frame, TokenRecord};
use crate::voxelgrid::{TokenKey, VoxelIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheState {
    Active,
    Evicted,
}

/// Append/evict bookkeeping for one observed frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub frame_id: u64,
    pub token_count: usize,
    pub state: CacheState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveFrame {
    pub frame_id: u64,
    pub tokens: Vec<TokenRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvictionReport {
    pub evicted_frame: Option<u64>,
    /// Tokens of the evicted frame that entered memory.
    pub stored: usize,
    /// Tokens of the evicted frame that were pruned.
    pub dropped: usize,
    /// Older memory tokens displaced by the evicted frame.
    pub replaced: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub frame_id: Option<u64>,
    pub active_frames: usize,
    pub active_tokens: usize,
    pub memory_tokens: usize,
    pub occupied_voxels: usize,
    pub observed_tokens: usize,
    pub reduction_ratio: f64,
}

/// Placeholder for the instruction tokens that precede memory in the
/// decoder context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InstructionSlot;

/// Decoder-ordered view: instruction slot, memory tokens, active tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<'a> {
    pub instruction: InstructionSlot,
    pub memory: Vec<&'a TokenRecord>,
    pub active: Vec<&'a TokenRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MemoryState {
    config: PipelineConfig,
    active: VecDeque<ActiveFrame>,
    /// Surviving tokens of evicted frames, each list sorted by token index.
    pruned: BTreeMap<u64, Vec<TokenRecord>>,
    ledger: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    state: MemoryState,
    /// Derived index over `pruned`: voxel → stored tokens.
    occupied: BTreeMap<VoxelIndex, Vec<TokenKey>>,
}

impl Serialize for MemoryStore {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.state.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MemoryStore {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let state = MemoryState::deserialize(d)?;
        state.config.validate().map_err(serde::de::Error::custom)?;
        Ok(Self::from_state(state))
    }
}

impl MemoryStore {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::from_state(MemoryState {
            config,
            active: VecDeque::new(),
            pruned: BTreeMap::new(),
            ledger: Vec::new(),
        }))
    }

    fn from_state(state: MemoryState) -> Self {
        let mut occupied: BTreeMap<VoxelIndex, Vec<TokenKey>> = BTreeMap::new();
        for t in state.pruned.values().flatten() {
            if let Some(v) = t.voxel {
                occupied.entry(v).or_default().push(t.key());
            }
        }
        for keys in occupied.values_mut() {
            keys.sort_unstable();
        }
        Self { state, occupied }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.state.config
    }

    pub fn window(&self) -> usize {
        self.state.config.memory.window
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.state.ledger
    }

    pub fn last_frame_id(&self) -> Option<u64> {
        self.state.ledger.last().map(|e| e.frame_id)
    }

    pub fn active_frame_ids(&self) -> Vec<u64> {
        self.state.active.iter().map(|f| f.frame_id).collect()
    }

    pub fn pruned_frame_ids(&self) -> Vec<u64> {
        self.state.pruned.keys().copied().collect()
    }

    pub fn memory_tokens(&self) -> usize {
        self.state.pruned.values().map(Vec::len).sum()
    }

    pub fn occupied_voxels(&self) -> usize {
        self.occupied.len()
    }

    /// Stored tokens per voxel cell.
    pub fn voxel_cells(&self) -> impl Iterator<Item = (&VoxelIndex, &[TokenKey])> {
        self.occupied.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Appends the next frame and evicts the oldest one once the window is
    /// exceeded.
    pub fn advance(&mut self, frame: &FrameObservation) -> Result<EvictionReport> {
        if let Some(last) = self.last_frame_id() {
            if last.checked_add(1) != Some(frame.frame_id) {
                return Err(Error::NonMonotonicFrame {
                    last,
                    found: frame.frame_id,
                });
            }
        }
        let cfg = &self.state.config;
        let tokens = tokenize_frame(frame, &cfg.voxel, &cfg.anchor)?;
        self.state.ledger.push(LedgerEntry {
            frame_id: frame.frame_id,
            token_count: tokens.len(),
            state: CacheState::Active,
        });
        self.state.active.push_back(ActiveFrame {
            frame_id: frame.frame_id,
            tokens,
        });
        if self.state.active.len() > self.window() {
            if let Some(oldest) = self.state.active.pop_front() {
                return Ok(self.fold_into_memory(oldest));
            }
        }
        Ok(EvictionReport::default())
    }

    fn stored_token(&self, key: &TokenKey) -> Option<&TokenRecord> {
        let tokens = self.state.pruned.get(&key.frame_id)?;
        tokens
            .binary_search_by_key(&key.token_index, |t| t.token_index)
            .ok()
            .map(|i| &tokens[i])
    }

    fn fold_into_memory(&mut self, frame: ActiveFrame) -> EvictionReport {
        let cfg = &self.state.config;
        let mut incoming: BTreeMap<VoxelIndex, Vec<&TokenRecord>> = BTreeMap::new();
        for t in &frame.tokens {
            if let Some(v) = t.voxel {
                incoming.entry(v).or_default().push(t);
            }
        }
        let mut active_by_voxel: BTreeMap<VoxelIndex, Vec<&TokenRecord>> = BTreeMap::new();
        if cfg.memory.consult_active {
            for t in self.state.active.iter().flat_map(|f| &f.tokens) {
                if let Some(v) = t.voxel {
                    if incoming.contains_key(&v) {
                        active_by_voxel.entry(v).or_default().push(t);
                    }
                }
            }
        }

        // Decide every touched cell first, then apply.
        let mut decisions: Vec<(VoxelIndex, Vec<TokenKey>)> = Vec::with_capacity(incoming.len());
        for (voxel, new_tokens) in &incoming {
            let mut cell: Vec<&TokenRecord> = self
                .occupied
                .get(voxel)
                .into_iter()
                .flatten()
                .filter_map(|k| self.stored_token(k))
                .collect();
            cell.extend(new_tokens.iter().copied());
            if let Some(active) = active_by_voxel.get(voxel) {
                cell.extend(active.iter().copied());
            }
            cell.sort_by_key(|t| t.key());
            let chosen = select(&cell, &cfg.selection).expect("cell holds the incoming tokens");
            decisions.push((*voxel, chosen));
        }

        let active_ids: BTreeSet<u64> = self.state.active.iter().map(|f| f.frame_id).collect();
        let mut survivors: BTreeSet<u32> = BTreeSet::new();
        let mut report = EvictionReport {
            evicted_frame: Some(frame.frame_id),
            ..Default::default()
        };
        for (voxel, chosen) in decisions {
            let chosen: BTreeSet<TokenKey> = chosen
                .into_iter()
                .filter(|k| !active_ids.contains(&k.frame_id))
                .collect();
            for old in self.occupied.remove(&voxel).unwrap_or_default() {
                if !chosen.contains(&old) {
                    if let Some(tokens) = self.state.pruned.get_mut(&old.frame_id) {
                        if let Ok(i) = tokens.binary_search_by_key(&old.token_index, |t| t.token_index) {
                            tokens.remove(i);
                            report.replaced += 1;
                        }
                    }
                }
            }
            survivors.extend(
                chosen
                    .iter()
                    .filter(|k| k.frame_id == frame.frame_id)
                    .map(|k| k.token_index),
            );
            if !chosen.is_empty() {
                self.occupied.insert(voxel, chosen.into_iter().collect());
            }
        }

        let anchorless_cap = keep_floor(self.state.config.completion.rho, frame.tokens.len());
        survivors.extend(
            frame
                .tokens
                .iter()
                .filter(|t| !t.is_anchored())
                .take(anchorless_cap)
                .map(|t| t.token_index),
        );

        let total = frame.tokens.len();
        let kept: Vec<TokenRecord> = frame
            .tokens
            .into_iter()
            .filter(|t| survivors.contains(&t.token_index))
            .collect();
        report.stored = kept.len();
        report.dropped = total - kept.len();
        self.state.pruned.insert(frame.frame_id, kept);
        if let Some(entry) = self
            .state
            .ledger
            .iter_mut()
            .find(|e| e.frame_id == frame.frame_id)
        {
            entry.state = CacheState::Evicted;
        }
        report
    }

    pub fn snapshot(&self) -> Snapshot<'_> {
        Snapshot {
            instruction: InstructionSlot,
            memory: self.state.pruned.values().flatten().collect(),
            active: self.state.active.iter().flat_map(|f| &f.tokens).collect(),
        }
    }

    pub fn budget_report(&self) -> BudgetReport {
        let active_tokens: usize = self.state.active.iter().map(|f| f.tokens.len()).sum();
        let memory_tokens = self.memory_tokens();
        let observed_tokens: usize = self.state.ledger.iter().map(|e| e.token_count).sum();
        let reduction_ratio = if observed_tokens == 0 {
            1.0
        } else {
            (active_tokens + memory_tokens) as f64 / observed_tokens as f64
        };
        BudgetReport {
            frame_id: self.last_frame_id(),
            active_frames: self.state.active.len(),
            active_tokens,
            memory_tokens,
            occupied_voxels: self.occupied.len(),
            observed_tokens,
            reduction_ratio,
        }
    }
}
