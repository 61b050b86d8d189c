//! Per-layer orchestration of the anchor tier, the mid-term banks and the
//! baseline policies.
//!
//! A step assembles the loaded cache from the memory committed through the
//! previous frame plus the fresh block, then commits the fresh block: the
//! anchor decision runs once per frame, and each layer's bank re-selects
//! independently, seeded from the block that enters it.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::anchor::{AnchorConfig, AnchorTier, NoveltySource, Promotion};
use crate::error::{Error, Result};
use crate::memory::{compute_prototype, FrameBlock, Prototype, StreamConfig};
use crate::mid_bank::MidBank;
use crate::policies::{Policy, RecentWindow, RetentionMask, TokenMemory};
use crate::trace::TraceEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManagerConfig {
    pub stream: StreamConfig,
    pub policy: Policy,
    /// Mid-term bank capacity in frames, including any recent reservation.
    pub mid_capacity: usize,
    pub anchors: AnchorConfig,
}

impl ManagerConfig {
    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.anchors.validate()?;
        if self.checked_loaded_budget().is_none() {
            return Err(Error::config("capacities overflow the token budget"));
        }
        match self.policy {
            Policy::FrameKcenter | Policy::RecentK { .. } => {
                if self.mid_capacity == 0 {
                    return Err(Error::config("mid-term capacity must be >= 1"));
                }
                let k = self.policy.recent_reserve();
                if k > self.mid_capacity {
                    return Err(Error::config(format!(
                        "recent reservation {k} exceeds mid-term capacity {}",
                        self.mid_capacity
                    )));
                }
            }
            Policy::TokenLevel { budget } => {
                if budget < self.stream.tokens_per_frame {
                    return Err(Error::config(format!(
                        "token budget {budget} is below one frame ({} tokens)",
                        self.stream.tokens_per_frame
                    )));
                }
                if self.anchors.capacity > 0 {
                    return Err(Error::config("the anchor tier only applies to frame-level policies"));
                }
            }
            Policy::FullCache => {
                if self.anchors.capacity > 0 {
                    return Err(Error::config("the anchor tier only applies to frame-level policies"));
                }
            }
        }
        Ok(())
    }

    /// Loaded-cache bound without overflow, or `None` if it does not fit.
    fn checked_loaded_budget(&self) -> Option<usize> {
        let n = self.stream.tokens_per_frame;
        match self.policy {
            Policy::FrameKcenter | Policy::RecentK { .. } => {
                self.mid_capacity.checked_add(self.anchors.capacity)?.checked_add(1)?.checked_mul(n)
            }
            Policy::TokenLevel { budget } => budget.checked_add(n),
            Policy::FullCache => Some(0),
        }
    }

    /// Retained-memory budget `M` in tokens per layer; `None` when unbounded.
    pub fn token_budget(&self) -> Option<usize> {
        let n = self.stream.tokens_per_frame;
        match self.policy {
            Policy::FrameKcenter | Policy::RecentK { .. } => Some((self.mid_capacity + self.anchors.capacity) * n),
            Policy::TokenLevel { budget } => Some(budget),
            Policy::FullCache => None,
        }
    }

    /// Loaded-cache bound per layer: retained memory plus the in-flight frame.
    pub fn loaded_budget(&self) -> Option<usize> {
        self.token_budget().map(|m| m + self.stream.tokens_per_frame)
    }
}

/// A block together with its per-layer prototypes, computed once on ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredBlock {
    pub block: FrameBlock,
    pub prototypes: Vec<Prototype>,
}

impl StoredBlock {
    pub fn new(block: FrameBlock) -> Result<Self> {
        let prototypes = (0..block.layers.len())
            .map(|l| compute_prototype(&block, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(StoredBlock { block, prototypes })
    }

    pub fn frame_id(&self) -> u64 {
        self.block.frame_id()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Anchor,
    Mid,
    Current,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenSelection {
    All,
    /// Ascending token indices.
    Indices(Vec<u32>),
}

/// One source frame's contribution to a layer of cache.
#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub frame_id: u64,
    pub segment: Segment,
    pub tokens: TokenSelection,
    pub block: Arc<StoredBlock>,
}

impl CacheEntry {
    pub fn token_count(&self) -> usize {
        match &self.tokens {
            TokenSelection::All => self.layer_tokens(),
            TokenSelection::Indices(ix) => ix.len(),
        }
    }

    fn layer_tokens(&self) -> usize {
        self.block.block.layers.first().map_or(0, |kv| kv.tokens)
    }

    pub fn token_indices(&self) -> Vec<usize> {
        match &self.tokens {
            TokenSelection::All => (0..self.layer_tokens()).collect(),
            TokenSelection::Indices(ix) => ix.iter().map(|&i| i as usize).collect(),
        }
    }
}

/// Cache contents at one layer, in concatenation order.
#[derive(Debug, Clone)]
pub struct LoadedLayer {
    pub layer: usize,
    pub entries: Vec<CacheEntry>,
}

impl LoadedLayer {
    pub fn token_count(&self) -> usize {
        self.entries.iter().map(CacheEntry::token_count).sum()
    }

    /// Token ranges and the frame each range came from.
    pub fn provenance(&self) -> Vec<(Range<usize>, u64)> {
        let mut start = 0;
        self.entries
            .iter()
            .map(|e| {
                let end = start + e.token_count();
                let r = (start..end, e.frame_id);
                start = end;
                r
            })
            .collect()
    }

    fn gather(&self, values: bool) -> Vec<f32> {
        let Some(first) = self.entries.first() else { return Vec::new() };
        let kv0 = &first.block.block.layers[self.layer];
        let (heads, dim) = (kv0.heads, kv0.dim);
        let total = self.token_count();
        let mut out = Vec::with_capacity(heads * total * dim);
        for h in 0..heads {
            for e in &self.entries {
                let kv = &e.block.block.layers[self.layer];
                for t in e.token_indices() {
                    out.extend_from_slice(if values { kv.value(h, t) } else { kv.key(h, t) });
                }
            }
        }
        out
    }

    /// Concatenated keys, row-major `[heads, tokens, dim]`.
    pub fn keys(&self) -> Vec<f32> {
        self.gather(false)
    }

    pub fn values(&self) -> Vec<f32> {
        self.gather(true)
    }
}

#[derive(Debug, Clone)]
pub struct LoadedCache {
    pub step: u64,
    pub layers: Vec<LoadedLayer>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loaded: LoadedCache,
    pub events: Vec<TraceEvent>,
    pub promotion: Option<Promotion>,
}

/// Byte footprint of retained keys and values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryBytes {
    pub per_layer: Vec<u64>,
    pub total: u64,
}

/// Bounded rolling KV memory for one stream.
#[derive(Debug, Clone)]
pub struct MemoryManager {
    pub(crate) config: ManagerConfig,
    pub(crate) next_frame: u64,
    pub(crate) blocks: BTreeMap<u64, Arc<StoredBlock>>,
    pub(crate) tier: AnchorTier,
    /// One bank per layer; empty when the recent window takes the whole bank
    /// or the policy is not frame-level.
    pub(crate) banks: Vec<MidBank>,
    pub(crate) recent: RecentWindow,
    pub(crate) tokens: Vec<TokenMemory>,
}

impl MemoryManager {
    pub fn new(config: ManagerConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.stream.num_layers;
        let k = config.policy.recent_reserve();
        let banks = if config.policy.is_frame_level() && config.mid_capacity > k {
            (0..layers).map(|_| MidBank::new(config.mid_capacity - k)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let tokens = match config.policy {
            Policy::TokenLevel { budget } => (0..layers).map(|_| TokenMemory::new(budget)).collect(),
            _ => Vec::new(),
        };
        Ok(MemoryManager {
            tier: AnchorTier::new(config.anchors)?,
            recent: RecentWindow::new(k),
            config,
            next_frame: 0,
            blocks: BTreeMap::new(),
            banks,
            tokens,
        })
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.config
    }

    pub fn policy(&self) -> Policy {
        self.config.policy
    }

    /// Id the next block must carry; equals the number of frames seen.
    pub fn next_frame(&self) -> u64 {
        self.next_frame
    }

    pub fn tier(&self) -> &AnchorTier {
        &self.tier
    }

    pub fn bank(&self, layer: usize) -> Option<&MidBank> {
        self.banks.get(layer)
    }

    pub fn recent(&self) -> &RecentWindow {
        &self.recent
    }

    pub fn token_memory(&self, layer: usize) -> Option<&TokenMemory> {
        self.tokens.get(layer)
    }

    pub fn stored_block(&self, frame_id: u64) -> Option<&Arc<StoredBlock>> {
        self.blocks.get(&frame_id)
    }

    /// Frames held by the mid tier (bank plus recent window) at `layer`, ascending.
    fn mid_frames(&self, layer: usize) -> Vec<u64> {
        let mut ids: Vec<u64> = self.recent.frames().collect();
        if let Some(bank) = self.banks.get(layer) {
            ids.extend(bank.frame_ids());
        }
        ids.sort_unstable();
        ids
    }

    fn block_arc(&self, id: u64) -> Arc<StoredBlock> {
        // Every id referenced by a tier is kept in the store until released.
        Arc::clone(self.blocks.get(&id).expect("retained frame has a stored block"))
    }

    /// Retained memory at `layer` in internal order: anchors, then the
    /// mid tier (or token memory), ascending by frame id.
    pub fn memory(&self, layer: usize) -> Vec<CacheEntry> {
        let whole = |id: u64, segment: Segment| CacheEntry {
            frame_id: id,
            segment,
            tokens: TokenSelection::All,
            block: self.block_arc(id),
        };
        match self.config.policy {
            Policy::FrameKcenter | Policy::RecentK { .. } => {
                let mut out: Vec<CacheEntry> = self.tier.frame_ids().map(|id| whole(id, Segment::Anchor)).collect();
                out.extend(self.mid_frames(layer).into_iter().map(|id| whole(id, Segment::Mid)));
                out
            }
            Policy::TokenLevel { .. } => {
                let mem = &self.tokens[layer];
                let mut out: Vec<CacheEntry> = Vec::new();
                for e in mem.entries() {
                    match out.last_mut() {
                        Some(CacheEntry { frame_id, tokens: TokenSelection::Indices(ix), .. }) if *frame_id == e.frame_id => {
                            ix.push(e.token)
                        }
                        _ => out.push(CacheEntry {
                            frame_id: e.frame_id,
                            segment: Segment::Mid,
                            tokens: TokenSelection::Indices(vec![e.token]),
                            block: self.block_arc(e.frame_id),
                        }),
                    }
                }
                out
            }
            Policy::FullCache => self.blocks.keys().map(|&id| whole(id, Segment::Mid)).collect(),
        }
    }

    /// Retained token count at `layer`.
    pub fn retained_tokens(&self, layer: usize) -> usize {
        let n = self.config.stream.tokens_per_frame;
        match self.config.policy {
            Policy::FrameKcenter | Policy::RecentK { .. } => {
                (self.tier.len() + self.recent.len() + self.banks.get(layer).map_or(0, MidBank::len)) * n
            }
            Policy::TokenLevel { .. } => self.tokens[layer].len(),
            Policy::FullCache => self.blocks.len() * n,
        }
    }

    /// Frame-level prototypes currently retained at `layer` (anchors and mid tier).
    pub fn retained_prototypes(&self, layer: usize) -> Vec<(u64, &Prototype)> {
        match self.config.policy {
            Policy::TokenLevel { .. } => Vec::new(),
            Policy::FullCache => self.blocks.iter().map(|(id, b)| (*id, &b.prototypes[layer])).collect(),
            _ => {
                let mut out: Vec<(u64, &Prototype)> =
                    self.tier.slots().iter().map(|a| (a.frame_id, &a.prototypes[layer])).collect();
                out.extend(self.mid_frames(layer).into_iter().map(|id| (id, &self.blocks[&id].prototypes[layer])));
                out
            }
        }
    }

    pub fn retention_mask(&self, layer: usize) -> RetentionMask {
        let n = self.config.stream.tokens_per_frame;
        match self.config.policy {
            Policy::TokenLevel { .. } => self.tokens[layer].mask(n, self.next_frame),
            _ => {
                let mut mask = RetentionMask::new(n, self.next_frame);
                for e in self.memory(layer) {
                    mask.insert_frame(e.frame_id);
                }
                mask
            }
        }
    }

    /// Keys and values held in retained memory: `H * T * D * 2 * bytes` per layer.
    pub fn memory_bytes(&self) -> MemoryBytes {
        let per_layer: Vec<u64> = (0..self.config.stream.num_layers)
            .map(|l| self.retained_tokens(l) as u64 * self.config.stream.bytes_per_token(l))
            .collect();
        let total = per_layer.iter().sum();
        MemoryBytes { per_layer, total }
    }

    fn loaded_cache(&self, current: &Arc<StoredBlock>) -> LoadedCache {
        let layers = (0..self.config.stream.num_layers)
            .map(|l| {
                let mut entries = self.memory(l);
                entries.push(CacheEntry {
                    frame_id: current.frame_id(),
                    segment: Segment::Current,
                    tokens: TokenSelection::All,
                    block: Arc::clone(current),
                });
                LoadedLayer { layer: l, entries }
            })
            .collect();
        LoadedCache { step: current.frame_id(), layers }
    }

    /// Ingests the next frame block.
    pub fn step(&mut self, block: FrameBlock) -> Result<StepOutput> {
        let t = block.frame_id();
        if t != self.next_frame {
            return Err(Error::structural(format!("expected frame {}, got frame {t}", self.next_frame)));
        }
        block.validate(&self.config.stream)?;
        let current = Arc::new(StoredBlock::new(block)?);
        let loaded = self.loaded_cache(&current);
        if let Some(bound) = self.config.loaded_budget() {
            for layer in &loaded.layers {
                if layer.token_count() > bound {
                    return Err(Error::Invariant(format!(
                        "frame {t} layer {}: loaded {} tokens over the budget of {bound}",
                        layer.layer,
                        layer.token_count()
                    )));
                }
            }
        }
        self.blocks.insert(t, Arc::clone(&current));
        self.next_frame += 1;

        let mut events = Vec::new();
        let mut promotion = None;
        match self.config.policy {
            Policy::FrameKcenter | Policy::RecentK { .. } => {
                let p = self.commit_frame(&current, &mut events)?;
                promotion = Some(p);
            }
            Policy::TokenLevel { .. } => {
                for (l, mem) in self.tokens.iter_mut().enumerate() {
                    let evicted = mem.ingest(t, &current.block.layers[l], &current.prototypes[l])?;
                    events.push(TraceEvent::RetainTokens { t, layer: l, counts: mem.counts(), evicted });
                }
            }
            Policy::FullCache => {
                events.push(TraceEvent::Append { t, frames_retained: self.blocks.len() as u64 });
            }
        }
        self.release_unreferenced();
        self.check_invariants()?;
        Ok(StepOutput { loaded, events, promotion })
    }

    fn commit_frame(&mut self, current: &Arc<StoredBlock>, events: &mut Vec<TraceEvent>) -> Result<Promotion> {
        let t = current.frame_id();
        let promo = self.tier.maybe_promote(&current.block.meta, &current.prototypes);
        if self.tier.config().capacity > 0 && promo.novelty_source == NoveltySource::Prototype {
            events.push(TraceEvent::Note { t, message: "novelty from layer-0 prototypes (no pose)".into() });
        }
        if promo.promoted {
            events.push(TraceEvent::Promote {
                t,
                frame: t,
                pinned: promo.pinned,
                evicted: promo.evicted,
                reliability: promo.reliability,
                novelty: promo.novelty,
                source: promo.novelty_source,
            });
        }
        let layers = self.config.stream.num_layers;
        let mut evicted: Vec<Vec<u64>> = vec![Vec::new(); layers];
        let mut degenerate = vec![0usize; layers];
        if !promo.promoted {
            if let Some(out) = self.recent.push(t) {
                if self.banks.is_empty() {
                    evicted.iter_mut().for_each(|e| e.push(out));
                } else {
                    let protos = self.blocks[&out].prototypes.clone();
                    for (l, bank) in self.banks.iter_mut().enumerate() {
                        let r = bank.ingest_block(out, protos[l].clone())?;
                        evicted[l] = r.evicted;
                        degenerate[l] = r.degenerate_pairs;
                    }
                }
            }
        }
        for l in 0..layers {
            events.push(TraceEvent::Retain {
                t,
                layer: l,
                frames: self.mid_frames(l),
                evicted: std::mem::take(&mut evicted[l]),
                degenerate_pairs: degenerate[l],
            });
        }
        Ok(promo)
    }

    fn release_unreferenced(&mut self) {
        let keep: BTreeSet<u64> = match self.config.policy {
            Policy::FullCache => return,
            Policy::TokenLevel { .. } => self.tokens.iter().flat_map(|m| m.entries().iter().map(|e| e.frame_id)).collect(),
            _ => self
                .tier
                .frame_ids()
                .chain(self.recent.frames())
                .chain(self.banks.iter().flat_map(MidBank::frame_ids))
                .collect(),
        };
        self.blocks.retain(|id, _| keep.contains(id));
    }

    /// Budget and disjointness checks over the committed memory.
    pub fn check_invariants(&self) -> Result<()> {
        let budget = self.config.token_budget();
        for l in 0..self.config.stream.num_layers {
            let held = self.retained_tokens(l);
            if let Some(m) = budget {
                if held > m {
                    return Err(Error::Invariant(format!(
                        "layer {l}: {held} retained tokens exceed the budget of {m}"
                    )));
                }
            }
            if self.config.policy.is_frame_level() {
                for id in self.tier.frame_ids() {
                    if self.recent.contains(id) || self.banks.get(l).is_some_and(|b| b.contains(id)) {
                        return Err(Error::Invariant(format!(
                            "frame {id} is in both the anchor tier and the mid tier at layer {l}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
