//! Statistics over retained memory: per-frame support and compression, the
//! dominant-direction contrast statistic, an attention-weight probe, coverage
//! radius and key heatmaps.
//!
//! Three choices here are interpretive rather than given: the support proxy
//! is spatial grid coverage of token positions, the dominant set is the keys
//! above a cosine quantile against the current frame's prototype, and probe
//! queries are a per-head mean key plus Gaussian noise.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manager::MemoryManager;
use crate::memory::{LayerKv, Prototype};
use crate::mid_bank::coverage_radius;
use crate::policies::RetentionMask;

/// Fraction of `grid × grid` cells holding at least one position.
pub fn support_proxy<'a>(positions: impl IntoIterator<Item = &'a [f64; 2]>, grid: usize) -> Result<f64> {
    if grid < 1 {
        return Err(Error::config("support grid size must be >= 1"));
    }
    let mut cells = vec![false; grid * grid];
    let cell = |x: f64| ((x * grid as f64).floor().max(0.0) as usize).min(grid - 1);
    for p in positions {
        cells[cell(p[1]) * grid + cell(p[0])] = true;
    }
    Ok(cells.iter().filter(|&&c| c).count() as f64 / cells.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportRow {
    pub frame: u64,
    /// Retained tokens `b_t`.
    pub retained: usize,
    /// Tokens the frame produced, `N_t`.
    pub produced: usize,
    pub compression: f64,
    pub support_before: f64,
    pub support_after: f64,
    pub damage: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub grid: usize,
    pub rows: Vec<SupportRow>,
}

/// Averages of support columns over frames that still contribute tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SupportSummary {
    pub contributing: usize,
    pub support_before: f64,
    pub support_after: f64,
    pub damage: f64,
    pub ratio: f64,
}

impl SupportReport {
    /// One row per frame seen so far. `positions` maps frame id to its token
    /// positions; frames without positions have zero support before and after.
    pub fn build(mask: &RetentionMask, positions: &BTreeMap<u64, Vec<[f64; 2]>>, grid: usize) -> Result<Self> {
        let n = mask.tokens_per_frame;
        let mut rows = Vec::with_capacity(mask.frames_seen as usize);
        for frame in 0..mask.frames_seen {
            let pos = positions.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
            let kept = mask.retained.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
            let before = support_proxy(pos, grid)?;
            let after = support_proxy(kept.iter().filter_map(|&i| pos.get(i as usize)), grid)?;
            rows.push(SupportRow {
                frame,
                retained: kept.len(),
                produced: n,
                compression: if n == 0 { 0.0 } else { 1.0 - kept.len() as f64 / n as f64 },
                support_before: before,
                support_after: after,
                damage: before - after,
                ratio: if before == 0.0 { 1.0 } else { after / before },
            });
        }
        Ok(SupportReport { grid, rows })
    }

    pub fn mean_retained(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.retained as f64))
    }

    pub fn mean_compression(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.compression))
    }

    pub fn contributing_summary(&self) -> SupportSummary {
        let rows: Vec<&SupportRow> = self.rows.iter().filter(|r| r.retained > 0).collect();
        SupportSummary {
            contributing: rows.len(),
            support_before: mean(rows.iter().map(|r| r.support_before)),
            support_after: mean(rows.iter().map(|r| r.support_after)),
            damage: mean(rows.iter().map(|r| r.damage)),
            ratio: mean(rows.iter().map(|r| r.ratio)),
        }
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { 0.0 } else { sum / n as f64 }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 { 0.0 } else { ab / (aa.sqrt() * bb.sqrt()) }
}

/// Contrast of a dominant key subset against the rest of memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub dominant: Vec<usize>,
    pub remainder: Vec<usize>,
    pub center: Vec<f64>,
    pub delta: f64,
}

/// `Δ = mean_{i∈R} cos(k_i, μ_R) − mean_{j∉R} cos(k_j, μ_R)` with `μ_R` the
/// normalized mean of the dominant keys. `None` when either side is empty or
/// the dominant keys cancel out.
pub fn contrast_statistic(keys: &[Vec<f64>], dominant: &[usize]) -> Option<ContrastReport> {
    let mut in_r = vec![false; keys.len()];
    for &i in dominant {
        *in_r.get_mut(i)? = true;
    }
    let dominant: Vec<usize> = (0..keys.len()).filter(|&i| in_r[i]).collect();
    let remainder: Vec<usize> = (0..keys.len()).filter(|&i| !in_r[i]).collect();
    if dominant.is_empty() || remainder.is_empty() {
        return None;
    }
    let dim = keys[dominant[0]].len();
    let mut center = vec![0.0; dim];
    for &i in &dominant {
        let k = &keys[i];
        let n = k.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            center.iter_mut().zip(k).for_each(|(c, x)| *c += x / n);
        }
    }
    let norm = center.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return None;
    }
    center.iter_mut().for_each(|c| *c /= norm);
    let inside = mean(dominant.iter().map(|&i| cosine(&keys[i], &center)));
    let outside = mean(remainder.iter().map(|&j| cosine(&keys[j], &center)));
    Some(ContrastReport { dominant, remainder, center, delta: inside - outside })
}

/// Keys whose cosine to `reference` is strictly above the `quantile`
/// (nearest-rank) of all cosines.
pub fn dominant_set(keys: &[Vec<f64>], reference: &[f64], quantile: f64) -> Vec<usize> {
    if keys.is_empty() {
        return Vec::new();
    }
    let cos: Vec<f64> = keys.iter().map(|k| cosine(k, reference)).collect();
    let mut sorted = cos.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((quantile.clamp(0.0, 1.0) * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let threshold = sorted[rank - 1];
    (0..keys.len()).filter(|&i| cos[i] > threshold).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProbe {
    pub logits: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `z_i = <q, k_i> / sqrt(D)` and a max-subtracted softmax over `z`.
pub fn attention_probe(query: &[f64], keys: &[Vec<f64>]) -> Result<AttentionProbe> {
    if keys.is_empty() {
        return Err(Error::structural("attention probe needs at least one key"));
    }
    let scale = (query.len() as f64).sqrt();
    let mut logits = Vec::with_capacity(keys.len());
    for k in keys {
        if k.len() != query.len() {
            return Err(Error::structural("probe query and key widths differ"));
        }
        logits.push(k.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / scale);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Ok(AttentionProbe { weights: exp.iter().map(|e| e / total).collect(), logits })
}

/// Per-head mean key of `kv` plus seeded `N(0, sigma²)` noise.
pub fn probe_query(kv: &LayerKv, head: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = vec![0.0f64; kv.dim];
    for t in 0..kv.tokens {
        q.iter_mut().zip(kv.key(head, t)).for_each(|(a, &k)| *a += f64::from(k));
    }
    let n = kv.tokens.max(1) as f64;
    q.iter_mut().for_each(|a| *a = *a / n + sigma * rng.sample::<f64, _>(StandardNormal));
    q
}

/// Unit head-averaged keys of every retained token at `layer`, in memory order.
pub fn retained_token_keys(manager: &MemoryManager, layer: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(manager.retained_tokens(layer));
    for entry in manager.memory(layer) {
        let kv = &entry.block.block.layers[layer];
        for t in entry.token_indices() {
            out.push(Prototype::from_mean(kv.token_key(t)).unit);
        }
    }
    out
}

/// Δ at `layer` with the dominant set taken against `reference`.
pub fn memory_contrast(manager: &MemoryManager, layer: usize, reference: &Prototype, quantile: f64) -> Option<ContrastReport> {
    let keys = retained_token_keys(manager, layer);
    let dominant = dominant_set(&keys, &reference.unit, quantile);
    contrast_statistic(&keys, &dominant)
}

/// Coverage radius of retained memory at `layer` against `history`.
///
/// Frame-level memory is represented by its block prototypes; token-level
/// memory by its retained unit token keys.
pub fn memory_coverage_radius(manager: &MemoryManager, layer: usize, history: &[&Prototype]) -> f64 {
    if manager.policy().is_frame_level() || matches!(manager.policy(), crate::policies::Policy::FullCache) {
        let centers: Vec<&Prototype> = manager.retained_prototypes(layer).into_iter().map(|(_, p)| p).collect();
        coverage_radius(&centers, history)
    } else {
        let owned: Vec<Prototype> = manager
            .token_memory(layer)
            .map(|m| {
                m.entries()
                    .iter()
                    .map(|e| Prototype { raw: e.unit.clone(), unit: e.unit.clone(), degenerate: e.degenerate })
                    .collect()
            })
            .unwrap_or_default();
        let centers: Vec<&Prototype> = owned.iter().collect();
        coverage_radius(&centers, history)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapHeader {
    /// Last ingested frame, if any.
    pub step: Option<u64>,
    pub layer: usize,
    pub head: usize,
    pub policy: String,
    pub rows: usize,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Retained keys of one head as a `rows × D` matrix in internal memory order.
pub fn heatmap_matrix(manager: &MemoryManager, layer: usize, head: usize) -> Result<(HeatmapHeader, Vec<Vec<f32>>)> {
    let stream = &manager.config().stream;
    if layer >= stream.num_layers {
        return Err(Error::structural(format!("layer {layer} out of range ({} layers)", stream.num_layers)));
    }
    if head >= stream.heads(layer) {
        return Err(Error::structural(format!("head {head} out of range ({} heads)", stream.heads(layer))));
    }
    let mut rows = Vec::new();
    for entry in manager.memory(layer) {
        let kv = &entry.block.block.layers[layer];
        for t in entry.token_indices() {
            rows.push(kv.key(head, t).to_vec());
        }
    }
    let header = HeatmapHeader {
        step: manager.next_frame().checked_sub(1),
        layer,
        head,
        policy: manager.policy().name().to_string(),
        rows: rows.len(),
        dim: stream.key_dim(layer),
        config_hash: None,
    };
    Ok((header, rows))
}

/// Writes `# {header json}` followed by one CSV row per retained token.
pub fn write_heatmap<W: Write>(mut w: W, header: &HeatmapHeader, rows: &[Vec<f32>]) -> Result<()> {
    writeln!(w, "# {}", serde_json::to_string(header)?)?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn heatmap_export(
    manager: &MemoryManager,
    layer: usize,
    head: usize,
    path: &Path,
    config_hash: Option<&str>,
) -> Result<HeatmapHeader> {
    let (mut header, rows) = heatmap_matrix(manager, layer, head)?;
    header.config_hash = config_hash.map(str::to_string);
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_heatmap(file, &header, &rows)?;
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};

    #[test]
    fn support_examples() {
        let grid: Vec<[f64; 2]> = (0..64).map(|i| [((i % 8) as f64 + 0.5) / 8.0, ((i / 8) as f64 + 0.5) / 8.0]).collect();
        assert_eq!(support_proxy(&grid, 8).unwrap(), 1.0);
        assert_eq!(support_proxy(&[], 8).unwrap(), 0.0);
        let quadrant: Vec<&[f64; 2]> = grid.iter().filter(|p| p[0] < 0.5 && p[1] < 0.5).collect();
        assert_eq!(support_proxy(quadrant, 8).unwrap(), 0.25);
        assert!(matches!(support_proxy(&grid, 0), Err(Error::Config(_))));
        // Boundary coordinates land in the last cell.
        assert_eq!(support_proxy(&[[1.0, 1.0]], 2).unwrap(), 0.25);
    }

    #[test]
    fn contrast_examples() {
        let keys = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let c = contrast_statistic(&keys, &[0, 1]).unwrap();
        assert_eq!(c.center, vec![1.0, 0.0]);
        assert!((c.delta - 1.0).abs() < 1e-12);
        let mirrored = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert!((contrast_statistic(&mirrored, &[0]).unwrap().delta - 2.0).abs() < 1e-12);
        assert!(contrast_statistic(&keys, &[]).is_none());
        assert!(contrast_statistic(&keys, &[0, 1, 2]).is_none());
    }

    #[test]
    fn contrast_of_identical_draws_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let keys: Vec<Vec<f64>> = (0..10_000)
            .map(|_| Prototype::from_mean((0..64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unit)
            .collect();
        let dominant: Vec<usize> = (0..5_000).collect();
        assert!(contrast_statistic(&keys, &dominant).unwrap().delta.abs() < 0.05);
    }

    #[test]
    fn dominant_set_is_strict_upper_quantile() {
        let keys: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64 * 0.1]).collect();
        // Cosine to (0,1) grows with i; the top decile is index 9 only.
        assert_eq!(dominant_set(&keys, &[0.0, 1.0], 0.9), vec![9]);
        let same = vec![vec![1.0, 0.0]; 5];
        assert!(dominant_set(&same, &[1.0, 0.0], 0.9).is_empty());
    }

    #[test]
    fn probe_examples() {
        let one = attention_probe(&[1.0, 0.0], &[vec![0.3, 0.2]]).unwrap();
        assert_eq!(one.weights, vec![1.0]);
        let two = attention_probe(&[0.5, 0.5], &[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(two.weights, vec![0.5, 0.5]);
        let keys = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
        let p = attention_probe(&[1.0, 0.0, 0.0, 0.0], &keys).unwrap();
        assert_eq!(p.logits, vec![0.5, 0.0]);
        assert!((p.weights[0] - 0.622_459_3).abs() < 1e-6);
        assert!((p.weights[1] - 0.377_540_7).abs() < 1e-6);
        // Large logits stay finite.
        let big = attention_probe(&[1e6, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(big.weights.iter().all(|w| w.is_finite()));
        assert!(attention_probe(&[1.0], &[]).is_err());
    }

    fn rotate(v: &[f64], angle: f64) -> Vec<f64> {
        // Givens rotation in every consecutive coordinate pair.
        let (s, c) = angle.sin_cos();
        let mut out = v.to_vec();
        for i in (0..v.len() - 1).step_by(2) {
            out[i] = c * v[i] - s * v[i + 1];
            out[i + 1] = s * v[i] + c * v[i + 1];
        }
        out
    }

    proptest! {
        #[test]
        fn support_is_monotone(pos in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..40), cut in 0usize..40, grid in 1usize..10) {
            let pos: Vec<[f64; 2]> = pos.into_iter().map(|(x, y)| [x, y]).collect();
            let cut = cut.min(pos.len());
            let fewer = support_proxy(&pos[..cut], grid).unwrap();
            let all = support_proxy(&pos, grid).unwrap();
            prop_assert!(fewer <= all);
            prop_assert!((0.0..=1.0).contains(&all));
        }

        #[test]
        fn softmax_is_a_distribution(q in prop::collection::vec(-50.0f64..50.0, 4), keys in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..20)) {
            let p = attention_probe(&q, &keys).unwrap();
            prop_assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        }

        #[test]
        fn contrast_is_rotation_invariant(keys in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 3..20), split in 1usize..3, angle in -3.0f64..3.0) {
            let dominant: Vec<usize> = (0..split).collect();
            let rotated: Vec<Vec<f64>> = keys.iter().map(|k| rotate(k, angle)).collect();
            match (contrast_statistic(&keys, &dominant), contrast_statistic(&rotated, &dominant)) {
                (Some(a), Some(b)) => {
                    prop_assert!((a.delta - b.delta).abs() < 1e-6);
                    prop_assert!((-2.0..=2.0).contains(&a.delta));
                }
                (None, None) => {}
                _ => prop_assert!(false, "rotation changed whether the statistic is defined"),
            }
        }
    }
}
