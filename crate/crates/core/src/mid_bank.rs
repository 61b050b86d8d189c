//! Fixed-capacity mid-term bank maintained by greedy farthest-first k-center.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{unit_distance, Prototype};

/// Greedy farthest-first traversal over `keys.len()` candidates.
///
/// Starts from `seed`, then repeatedly adds the unselected candidate with the
/// largest running coverage `m` (ties go to the smallest key) and lowers every
/// `m` by the distance to the new pick. `observe` sees the coverage vector
/// after every update. Returns indices in pick order together with the
/// coverage each pick had when chosen (0 for the seed).
pub(crate) fn farthest_first<K, D, O>(
    keys: &[K],
    k: usize,
    seed: usize,
    mut dist: D,
    mut observe: O,
) -> (Vec<usize>, Vec<f64>)
where
    K: Ord,
    D: FnMut(usize, usize) -> f64,
    O: FnMut(&[f64], &[bool]),
{
    let n = keys.len();
    let target = k.min(n);
    let mut picks = Vec::with_capacity(target);
    let mut scores = Vec::with_capacity(target);
    if target == 0 {
        return (picks, scores);
    }
    let mut selected = vec![false; n];
    selected[seed] = true;
    picks.push(seed);
    scores.push(0.0);
    let mut coverage: Vec<f64> = (0..n).map(|i| if i == seed { 0.0 } else { dist(i, seed) }).collect();
    observe(&coverage, &selected);

    while picks.len() < target {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) if coverage[i] > coverage[b] || (coverage[i] == coverage[b] && keys[i] < keys[b]) => Some(i),
                keep => keep,
            };
        }
        let Some(new) = best else { break };
        selected[new] = true;
        picks.push(new);
        scores.push(coverage[new]);
        coverage[new] = 0.0;
        for i in 0..n {
            if !selected[i] {
                let d = dist(i, new);
                if d < coverage[i] {
                    coverage[i] = d;
                }
            }
        }
        observe(&coverage, &selected);
    }
    (picks, scores)
}

/// Result of one k-center selection pass.
#[derive(Debug, Clone, PartialEq)]
pub struct KCenterSelection {
    /// Frame ids in pick order; `order[0]` is the seed.
    pub order: Vec<u64>,
    /// Coverage score of each pick at the moment it was chosen.
    pub pick_scores: Vec<f64>,
    /// Distance evaluations that involved a degenerate prototype.
    pub degenerate_pairs: usize,
}

fn check_pool(pool: &[(u64, &Prototype)]) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::structural("k-center pool is empty"));
    }
    let dim = pool[0].1.dim();
    let mut seen = BTreeSet::new();
    for (id, p) in pool {
        if !seen.insert(*id) {
            return Err(Error::structural(format!("frame {id} appears twice in the pool")));
        }
        if p.dim() != dim {
            return Err(Error::structural(format!(
                "frame {id} prototype has width {}, pool width is {dim}",
                p.dim()
            )));
        }
    }
    Ok(())
}

/// Farthest-first selection of up to `capacity` blocks seeded from `seed_id`.
pub fn select_k_center(pool: &[(u64, &Prototype)], capacity: usize, seed_id: u64) -> Result<KCenterSelection> {
    check_pool(pool)?;
    if capacity == 0 {
        return Err(Error::config("k-center capacity must be >= 1"));
    }
    let seed = pool
        .iter()
        .position(|(id, _)| *id == seed_id)
        .ok_or_else(|| Error::structural(format!("seed frame {seed_id} is not in the pool")))?;
    let ids: Vec<u64> = pool.iter().map(|(id, _)| *id).collect();
    let mut degenerate_pairs = 0usize;
    let (picks, pick_scores) = farthest_first(
        &ids,
        capacity,
        seed,
        |i, j| {
            let (a, b) = (pool[i].1, pool[j].1);
            if a.degenerate || b.degenerate {
                degenerate_pairs += 1;
            }
            unit_distance(&a.unit, a.degenerate, &b.unit, b.degenerate)
        },
        |_, _| {},
    );
    Ok(KCenterSelection {
        order: picks.into_iter().map(|i| ids[i]).collect(),
        pick_scores,
        degenerate_pairs,
    })
}

/// Outcome of ingesting one block into a bank.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BankIngest {
    /// Evicted frame ids, ascending.
    pub evicted: Vec<u64>,
    pub degenerate_pairs: usize,
}

/// One layer's mid-term bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidBank {
    capacity: usize,
    /// Retained blocks, ascending by frame id.
    retained: Vec<(u64, Prototype)>,
}

impl MidBank {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("mid-term bank capacity must be >= 1"));
        }
        Ok(MidBank { capacity, retained: Vec::new() })
    }

    pub(crate) fn restore(capacity: usize, mut retained: Vec<(u64, Prototype)>) -> Result<Self> {
        let mut bank = MidBank::new(capacity)?;
        if retained.len() > capacity {
            return Err(Error::format("bank holds more blocks than its capacity"));
        }
        retained.sort_by_key(|(id, _)| *id);
        if retained.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::format("duplicate block in bank"));
        }
        bank.retained = retained;
        Ok(bank)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    pub fn retained(&self) -> &[(u64, Prototype)] {
        &self.retained
    }

    pub fn frame_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.retained.iter().map(|(id, _)| *id)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.retained.binary_search_by_key(&id, |(i, _)| *i).is_ok()
    }

    /// Adds `block_id` and, if over capacity, keeps the k-center selection
    /// seeded from it. Returns the evicted ids.
    pub fn ingest_block(&mut self, block_id: u64, proto: Prototype) -> Result<BankIngest> {
        if self.contains(block_id) {
            return Err(Error::structural(format!("frame {block_id} is already in the bank")));
        }
        if let Some((_, first)) = self.retained.first() {
            if first.dim() != proto.dim() {
                return Err(Error::structural(format!(
                    "frame {block_id} prototype has width {}, bank width is {}",
                    proto.dim(),
                    first.dim()
                )));
            }
        }
        let pos = self.retained.partition_point(|(id, _)| *id < block_id);
        self.retained.insert(pos, (block_id, proto));
        if self.retained.len() <= self.capacity {
            return Ok(BankIngest::default());
        }
        let pool: Vec<(u64, &Prototype)> = self.retained.iter().map(|(id, p)| (*id, p)).collect();
        let selection = select_k_center(&pool, self.capacity, block_id)?;
        let keep: BTreeSet<u64> = selection.order.iter().copied().collect();
        let mut evicted = Vec::new();
        self.retained.retain(|(id, _)| {
            let k = keep.contains(id);
            if !k {
                evicted.push(*id);
            }
            k
        });
        Ok(BankIngest { evicted, degenerate_pairs: selection.degenerate_pairs })
    }

    /// Drops a block without selection (used when a frame leaves for another tier).
    pub fn remove(&mut self, id: u64) -> bool {
        match self.retained.binary_search_by_key(&id, |(i, _)| *i) {
            Ok(pos) => {
                self.retained.remove(pos);
                true
            }
            Err(_) => false,
        }
    }

    /// k-center objective of the retained set against `pool`.
    pub fn coverage_radius(&self, pool: &[&Prototype]) -> Result<f64> {
        if self.retained.is_empty() {
            return Err(Error::structural("coverage radius of an empty bank"));
        }
        let centers: Vec<&Prototype> = self.retained.iter().map(|(_, p)| p).collect();
        Ok(coverage_radius(&centers, pool))
    }
}

/// `max_{p in pool} min_{c in centers} d(p, c)`; 0 for an empty pool.
pub fn coverage_radius(centers: &[&Prototype], pool: &[&Prototype]) -> f64 {
    if pool.is_empty() {
        warn!("coverage radius requested over an empty pool");
        return 0.0;
    }
    pool.iter()
        .map(|p| {
            centers
                .iter()
                .map(|c| unit_distance(&p.unit, p.degenerate, &c.unit, c.degenerate))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}
