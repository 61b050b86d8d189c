//! Exhaustive reference solvers for small instances.
//!
//! Nothing here is used on the hot path; the point is an independent
//! implementation the greedy code can be checked against.

use crate::error::{Error, Result};
use crate::memory::Prototype;

/// Largest pool the exact solver will enumerate.
pub const ENUMERATION_LIMIT: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Optimal ids, ascending.
    pub selection: Vec<u64>,
    pub objective: f64,
    /// Subsets evaluated.
    pub enumerated: u64,
}

// Recomputed from the raw means rather than reusing the cached unit vectors.
fn distance(a: &Prototype, b: &Prototype) -> f64 {
    let na = a.raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if a.degenerate || b.degenerate || na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let cos: f64 = a.raw.iter().zip(&b.raw).map(|(x, y)| (x / na) * (y / nb)).sum();
    (1.0 - cos).clamp(0.0, 2.0)
}

/// `max_i min_{j in centers} d(i, j)`, with a selected item covering itself at 0.
pub fn objective(pool: &[(u64, &Prototype)], centers: &[u64]) -> f64 {
    pool.iter()
        .map(|(id, p)| {
            if centers.contains(id) {
                return 0.0;
            }
            pool.iter()
                .filter(|(c, _)| centers.contains(c))
                .map(|(_, c)| distance(p, c))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Exact k-center optimum over all `k`-subsets, optionally forced to contain `pinned`.
///
/// Subsets are visited in lexicographic order of their sorted ids and only a
/// strictly better objective replaces the incumbent, so ties resolve to the
/// lexicographically smallest id set.
pub fn exact_k_center(pool: &[(u64, &Prototype)], k: usize, pinned: Option<u64>) -> Result<OracleResult> {
    let n = pool.len();
    if n > ENUMERATION_LIMIT {
        return Err(Error::OracleGuard { size: n, limit: ENUMERATION_LIMIT });
    }
    if n == 0 {
        return Err(Error::structural("oracle pool is empty"));
    }
    if k == 0 || k > n {
        return Err(Error::config(format!("oracle needs 1 <= k <= {n}, got {k}")));
    }
    let mut ids: Vec<u64> = pool.iter().map(|(id, _)| *id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::structural("duplicate id in oracle pool"));
    }
    if let Some(p) = pinned {
        if !ids.contains(&p) {
            return Err(Error::structural(format!("pinned id {p} is not in the pool")));
        }
    }

    let mut best: Option<(f64, Vec<u64>)> = None;
    let mut enumerated = 0u64;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let subset: Vec<u64> = idx.iter().map(|&i| ids[i]).collect();
        if pinned.is_none_or(|p| subset.contains(&p)) {
            enumerated += 1;
            let obj = objective(pool, &subset);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, subset));
            }
        }
        // Advance to the next combination in lexicographic order.
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else { break };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    let (objective, selection) = best.expect("at least one feasible subset");
    Ok(OracleResult { selection, objective, enumerated })
}

/// Straightforward farthest-first written without the shared selection code:
/// seed, then repeatedly add the item farthest from the chosen set, ties to
/// the smaller id.
pub fn reference_greedy(pool: &[(u64, &Prototype)], k: usize, seed: u64) -> Vec<u64> {
    let mut chosen = vec![seed];
    while chosen.len() < k.min(pool.len()) {
        let mut best: Option<(f64, u64)> = None;
        for (id, p) in pool {
            if chosen.contains(id) {
                continue;
            }
            let d = pool
                .iter()
                .filter(|(c, _)| chosen.contains(c))
                .map(|(_, c)| distance(p, c))
                .fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((bd, bid)) => d > bd || (d == bd && *id < bid),
            };
            if better {
                best = Some((d, *id));
            }
        }
        chosen.push(best.expect("unchosen item exists").1);
    }
    chosen
}
