//! Baseline retention policies: recent-K reservation, token-level diversity
//! retention and the unbounded full cache. All of them report what they keep
//! through a [`RetentionMask`].

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{dot, unit_distance, LayerKv, Prototype};
use crate::mid_bank::farthest_first;

/// Which retention policy a manager runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Policy {
    /// Mid-term bank by block k-center, plus the anchor tier.
    FrameKcenter,
    /// The last `k` frames are reserved; the rest of the bank is k-center.
    RecentK { k: usize },
    /// Per-token k-center under a global token budget. A proxy for
    /// key-diversity token pruning, not a reimplementation of any one method.
    TokenLevel { budget: usize },
    /// Keep everything.
    FullCache,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::FrameKcenter => "frame-kcenter",
            Policy::RecentK { .. } => "recent-k",
            Policy::TokenLevel { .. } => "token-level",
            Policy::FullCache => "full-cache",
        }
    }

    pub fn is_frame_level(&self) -> bool {
        matches!(self, Policy::FrameKcenter | Policy::RecentK { .. })
    }

    /// Frames reserved for recency (0 for the default policy).
    pub fn recent_reserve(&self) -> usize {
        match self {
            Policy::RecentK { k } => *k,
            _ => 0,
        }
    }
}

/// Per-source-frame token indicators.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionMask {
    pub tokens_per_frame: usize,
    /// Frames ingested so far; frames absent from `retained` have `b_t = 0`.
    pub frames_seen: u64,
    /// Retained token indices per source frame, ascending.
    pub retained: BTreeMap<u64, Vec<u32>>,
}

impl RetentionMask {
    pub fn new(tokens_per_frame: usize, frames_seen: u64) -> Self {
        RetentionMask { tokens_per_frame, frames_seen, retained: BTreeMap::new() }
    }

    pub fn insert_frame(&mut self, frame: u64) {
        self.retained.insert(frame, (0..self.tokens_per_frame as u32).collect());
    }

    /// Retained token count of frame `t`.
    pub fn b(&self, frame: u64) -> usize {
        self.retained.get(&frame).map_or(0, Vec::len)
    }

    /// Indicator vector over the frame's tokens.
    pub fn indicators(&self, frame: u64) -> Vec<bool> {
        let mut m = vec![false; self.tokens_per_frame];
        if let Some(idx) = self.retained.get(&frame) {
            for &i in idx {
                if let Some(slot) = m.get_mut(i as usize) {
                    *slot = true;
                }
            }
        }
        m
    }

    /// Sum of `b_t` over every frame seen.
    pub fn total(&self) -> usize {
        self.retained.values().map(Vec::len).sum()
    }

    /// `(1/T) sum b_t <= M/T`, checked as `sum b_t <= M` over the same `T`.
    pub fn average_bound_holds(&self, budget: usize) -> bool {
        self.total() <= budget
    }

    /// Average per-frame retention rate `(1/T) sum b_t / N`.
    pub fn mean_retention(&self) -> f64 {
        if self.frames_seen == 0 {
            return 0.0;
        }
        self.total() as f64 / (self.frames_seen as f64 * self.tokens_per_frame as f64)
    }
}

/// FIFO window of reserved recent frames.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecentWindow {
    capacity: usize,
    frames: VecDeque<u64>,
}

impl RecentWindow {
    pub fn new(capacity: usize) -> Self {
        RecentWindow { capacity, frames: VecDeque::new() }
    }

    pub(crate) fn restore(capacity: usize, frames: Vec<u64>) -> Result<Self> {
        if frames.len() > capacity {
            return Err(Error::format("recent window holds more frames than its capacity"));
        }
        Ok(RecentWindow { capacity, frames: frames.into() })
    }

    /// Admits `frame`; returns the frame that falls out of the window, which
    /// is `frame` itself when the capacity is 0.
    pub fn push(&mut self, frame: u64) -> Option<u64> {
        self.frames.push_back(frame);
        if self.frames.len() > self.capacity {
            self.frames.pop_front()
        } else {
            None
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = u64> + '_ {
        self.frames.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn contains(&self, frame: u64) -> bool {
        self.frames.contains(&frame)
    }
}

/// A retained token's unit key.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEntry {
    pub frame_id: u64,
    pub token: u32,
    pub unit: Vec<f64>,
    pub degenerate: bool,
}

impl TokenEntry {
    pub fn from_layer(frame_id: u64, kv: &LayerKv, token: usize) -> Self {
        let p = Prototype::from_mean(kv.token_key(token));
        TokenEntry { frame_id, token: token as u32, unit: p.unit, degenerate: p.degenerate }
    }

    fn key(&self) -> (u64, u32) {
        (self.frame_id, self.token)
    }
}

/// One layer's token-level memory under a global token budget.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMemory {
    budget: usize,
    /// Ascending by `(frame_id, token)`.
    entries: Vec<TokenEntry>,
}

impl TokenMemory {
    pub fn new(budget: usize) -> Self {
        TokenMemory { budget, entries: Vec::new() }
    }

    pub(crate) fn restore(budget: usize, mut entries: Vec<TokenEntry>) -> Result<Self> {
        if entries.len() > budget {
            return Err(Error::format("token memory exceeds its budget"));
        }
        entries.sort_by_key(TokenEntry::key);
        if entries.windows(2).any(|w| w[0].key() == w[1].key()) {
            return Err(Error::format("duplicate retained token"));
        }
        Ok(TokenMemory { budget, entries })
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn entries(&self) -> &[TokenEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Retained tokens grouped per frame, ascending.
    pub fn counts(&self) -> Vec<(u64, u32)> {
        let mut out: Vec<(u64, u32)> = Vec::new();
        for e in &self.entries {
            match out.last_mut() {
                Some((f, c)) if *f == e.frame_id => *c += 1,
                _ => out.push((e.frame_id, 1)),
            }
        }
        out
    }

    /// Adds a frame's tokens and re-selects down to the budget.
    ///
    /// The seed is the new token closest to the frame's mean key; ties go to
    /// the smaller `(frame_id, token)`. Returns the number of evicted tokens.
    pub fn ingest(&mut self, frame_id: u64, kv: &LayerKv, prototype: &Prototype) -> Result<usize> {
        if self.entries.last().is_some_and(|e| e.frame_id >= frame_id) {
            return Err(Error::structural(format!("token memory already holds frame {frame_id} or later")));
        }
        let fresh: Vec<TokenEntry> = (0..kv.tokens).map(|i| TokenEntry::from_layer(frame_id, kv, i)).collect();
        let mut seed_offset = 0usize;
        if !prototype.degenerate {
            let mut best = f64::NEG_INFINITY;
            for (i, e) in fresh.iter().enumerate() {
                let c = if e.degenerate { f64::NEG_INFINITY } else { dot(&e.unit, &prototype.unit) };
                if c > best {
                    best = c;
                    seed_offset = i;
                }
            }
        }
        let seed = self.entries.len() + seed_offset;
        self.entries.extend(fresh);
        if self.entries.len() <= self.budget {
            return Ok(0);
        }
        let keys: Vec<(u64, u32)> = self.entries.iter().map(TokenEntry::key).collect();
        let entries = &self.entries;
        let (picks, _) = farthest_first(
            &keys,
            self.budget,
            seed,
            |i, j| unit_distance(&entries[i].unit, entries[i].degenerate, &entries[j].unit, entries[j].degenerate),
            |_, _| {},
        );
        let mut keep = vec![false; self.entries.len()];
        for p in picks {
            keep[p] = true;
        }
        let before = self.entries.len();
        let mut it = keep.into_iter();
        self.entries.retain(|_| it.next().unwrap_or(false));
        Ok(before - self.entries.len())
    }

    pub fn mask(&self, tokens_per_frame: usize, frames_seen: u64) -> RetentionMask {
        let mut mask = RetentionMask::new(tokens_per_frame, frames_seen);
        for e in &self.entries {
            mask.retained.entry(e.frame_id).or_default().push(e.token);
        }
        mask
    }
}
