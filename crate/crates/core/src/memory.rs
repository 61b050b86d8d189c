//! Frame blocks, per-layer key/value payloads and key-space prototypes.
//!
//! A frame's incremental cache contribution is stored per layer as a
//! row-major `[heads, tokens, dim]` tensor of keys and an identically shaped
//! tensor of values. Selection only ever looks at keys.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm below which a mean key is treated as having no direction.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Tolerance on the unit norm of a pose quaternion.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

/// Fixed dimensions of a stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub num_layers: usize,
    pub heads_per_layer: Vec<usize>,
    pub tokens_per_frame: usize,
    pub key_dims: Vec<usize>,
    /// Width of one stored key/value element.
    pub bytes_per_element: usize,
}

impl StreamConfig {
    /// Same head count and key width on every layer.
    pub fn uniform(
        num_layers: usize,
        heads: usize,
        tokens_per_frame: usize,
        key_dim: usize,
        bytes_per_element: usize,
    ) -> Self {
        StreamConfig {
            num_layers,
            heads_per_layer: vec![heads; num_layers],
            tokens_per_frame,
            key_dims: vec![key_dim; num_layers],
            bytes_per_element,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::config("num_layers must be >= 1"));
        }
        if self.heads_per_layer.len() != self.num_layers || self.key_dims.len() != self.num_layers {
            return Err(Error::config(format!(
                "expected {} per-layer head counts and key widths, got {} and {}",
                self.num_layers,
                self.heads_per_layer.len(),
                self.key_dims.len()
            )));
        }
        if self.tokens_per_frame == 0 {
            return Err(Error::config("tokens_per_frame must be >= 1"));
        }
        if !(1..=8).contains(&self.bytes_per_element) {
            return Err(Error::config("bytes_per_element must be between 1 and 8"));
        }
        if self.heads_per_layer.iter().chain(&self.key_dims).any(|&d| d == 0) {
            return Err(Error::config("every head count and key width must be >= 1"));
        }
        for layer in 0..self.num_layers {
            self.layer_elements_checked(layer)
                .ok_or_else(|| Error::config(format!("layer {layer} tensor size overflows")))?;
        }
        Ok(())
    }

    pub fn heads(&self, layer: usize) -> usize {
        self.heads_per_layer[layer]
    }

    pub fn key_dim(&self, layer: usize) -> usize {
        self.key_dims[layer]
    }

    /// Number of f32 elements in one layer's key tensor for one frame.
    pub fn layer_elements(&self, layer: usize) -> usize {
        self.heads(layer) * self.tokens_per_frame * self.key_dim(layer)
    }

    fn layer_elements_checked(&self, layer: usize) -> Option<usize> {
        self.heads_per_layer[layer]
            .checked_mul(self.tokens_per_frame)?
            .checked_mul(self.key_dims[layer])
    }

    /// Bytes held by one retained token at `layer` (keys and values).
    pub fn bytes_per_token(&self, layer: usize) -> u64 {
        (self.heads(layer) * self.key_dim(layer) * 2 * self.bytes_per_element) as u64
    }
}

/// Frame-level metadata carried alongside the cache block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frame_id: u64,
    pub confidence: f64,
    pub sharpness: f64,
    /// Unit quaternion (w, x, y, z) followed by translation.
    pub pose: Option<[f64; 7]>,
    /// Per-token image coordinates in [0,1]^2; empty when unknown.
    #[serde(default)]
    pub token_positions: Vec<[f64; 2]>,
    /// Ground-truth cluster of the generating scenario, when known.
    #[serde(default)]
    pub cluster: Option<u32>,
}

impl FrameMeta {
    pub fn validate(&self, tokens_per_frame: usize) -> Result<()> {
        let unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !unit(self.confidence) || !unit(self.sharpness) {
            return Err(Error::structural(format!(
                "frame {}: confidence and sharpness must lie in [0,1]",
                self.frame_id
            )));
        }
        if let Some(pose) = &self.pose {
            if pose.iter().any(|x| !x.is_finite()) {
                return Err(Error::structural(format!("frame {}: non-finite pose", self.frame_id)));
            }
            let qn = pose[..4].iter().map(|x| x * x).sum::<f64>().sqrt();
            if (qn - 1.0).abs() > QUATERNION_TOLERANCE {
                return Err(Error::structural(format!(
                    "frame {}: pose quaternion norm {qn} is not unit",
                    self.frame_id
                )));
            }
        }
        if !self.token_positions.is_empty() {
            if self.token_positions.len() != tokens_per_frame {
                return Err(Error::structural(format!(
                    "frame {}: {} token positions for {} tokens",
                    self.frame_id,
                    self.token_positions.len(),
                    tokens_per_frame
                )));
            }
            if self.token_positions.iter().flatten().any(|&c| !unit(c)) {
                return Err(Error::structural(format!(
                    "frame {}: token positions must lie in [0,1]^2",
                    self.frame_id
                )));
            }
        }
        Ok(())
    }

    /// Reliability score: confidence times sharpness.
    pub fn reliability(&self) -> f64 {
        self.confidence * self.sharpness
    }
}

/// One layer's slice of a frame block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerKv {
    pub heads: usize,
    pub tokens: usize,
    pub dim: usize,
    /// Row-major `[heads, tokens, dim]`.
    pub keys: Vec<f32>,
    pub values: Vec<f32>,
}

impl LayerKv {
    pub fn new(heads: usize, tokens: usize, dim: usize, keys: Vec<f32>, values: Vec<f32>) -> Result<Self> {
        let kv = LayerKv { heads, tokens, dim, keys, values };
        kv.check_shape()?;
        Ok(kv)
    }

    fn check_shape(&self) -> Result<()> {
        let expected = self
            .heads
            .checked_mul(self.tokens)
            .and_then(|x| x.checked_mul(self.dim))
            .ok_or_else(|| Error::structural("layer tensor size overflows"))?;
        if self.keys.len() != expected || self.values.len() != expected {
            return Err(Error::structural(format!(
                "layer tensors hold {} keys and {} values, shape [{}, {}, {}] needs {expected}",
                self.keys.len(),
                self.values.len(),
                self.heads,
                self.tokens,
                self.dim
            )));
        }
        Ok(())
    }

    pub fn key(&self, head: usize, token: usize) -> &[f32] {
        let start = (head * self.tokens + token) * self.dim;
        &self.keys[start..start + self.dim]
    }

    pub fn value(&self, head: usize, token: usize) -> &[f32] {
        let start = (head * self.tokens + token) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// Head-averaged key of one token, accumulated in f64.
    pub fn token_key(&self, token: usize) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.dim];
        for h in 0..self.heads {
            for (a, &k) in acc.iter_mut().zip(self.key(h, token)) {
                *a += f64::from(k);
            }
        }
        let scale = 1.0 / self.heads as f64;
        acc.iter_mut().for_each(|a| *a *= scale);
        acc
    }
}

/// One frame's cache contribution across all layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBlock {
    pub meta: FrameMeta,
    pub layers: Vec<LayerKv>,
}

impl FrameBlock {
    pub fn frame_id(&self) -> u64 {
        self.meta.frame_id
    }

    /// Checks the block against the stream dimensions.
    pub fn validate(&self, config: &StreamConfig) -> Result<()> {
        if self.layers.len() != config.num_layers {
            return Err(Error::structural(format!(
                "frame {} has {} layers, stream has {}",
                self.frame_id(),
                self.layers.len(),
                config.num_layers
            )));
        }
        for (l, kv) in self.layers.iter().enumerate() {
            if kv.heads != config.heads(l) || kv.tokens != config.tokens_per_frame || kv.dim != config.key_dim(l) {
                return Err(Error::structural(format!(
                    "frame {} layer {l}: shape [{}, {}, {}] does not match stream [{}, {}, {}]",
                    self.frame_id(),
                    kv.heads,
                    kv.tokens,
                    kv.dim,
                    config.heads(l),
                    config.tokens_per_frame,
                    config.key_dim(l)
                )));
            }
            kv.check_shape()?;
            if kv.keys.iter().chain(&kv.values).any(|x| !x.is_finite()) {
                return Err(Error::structural(format!("frame {} layer {l}: non-finite key or value", self.frame_id())));
            }
        }
        self.meta.validate(config.tokens_per_frame)
    }
}

/// L2-normalized mean key of a block at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub raw: Vec<f64>,
    pub unit: Vec<f64>,
    pub degenerate: bool,
}

impl Prototype {
    /// Builds a prototype from an already averaged vector.
    pub fn from_mean(raw: Vec<f64>) -> Self {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < DEGENERATE_NORM || !norm.is_finite() {
            let unit = vec![0.0; raw.len()];
            Prototype { raw, unit, degenerate: true }
        } else {
            let unit = raw.iter().map(|x| x / norm).collect();
            Prototype { raw, unit, degenerate: false }
        }
    }

    pub fn dim(&self) -> usize {
        self.unit.len()
    }
}

/// Mean over heads and tokens of the block's keys at `layer`, then normalized.
pub fn compute_prototype(block: &FrameBlock, layer: usize) -> Result<Prototype> {
    let kv = block.layers.get(layer).ok_or_else(|| {
        Error::structural(format!(
            "layer {layer} out of range for frame {} with {} layers",
            block.frame_id(),
            block.layers.len()
        ))
    })?;
    kv.check_shape()?;
    let mut acc = vec![0.0f64; kv.dim];
    for row in kv.keys.chunks_exact(kv.dim.max(1)) {
        for (a, &k) in acc.iter_mut().zip(row) {
            *a += f64::from(k);
        }
    }
    let count = (kv.heads * kv.tokens) as f64;
    if count > 0.0 {
        acc.iter_mut().for_each(|a| *a /= count);
    }
    Ok(Prototype::from_mean(acc))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine dissimilarity between unit vectors, or 1.0 when either is degenerate.
pub(crate) fn unit_distance(a: &[f64], a_degenerate: bool, b: &[f64], b_degenerate: bool) -> f64 {
    if a_degenerate || b_degenerate {
        return 1.0;
    }
    (1.0 - dot(a, b)).clamp(0.0, 2.0)
}

/// `1 - <a, b>` on the unit prototypes, in [0, 2].
///
/// A degenerate prototype is treated as orthogonal to everything.
pub fn cosine_distance(a: &Prototype, b: &Prototype) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::structural(format!(
            "prototype widths differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(unit_distance(&a.unit, a.degenerate, &b.unit, b.degenerate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_with_keys(dim: usize, keys: &[&[f32]]) -> FrameBlock {
        let flat: Vec<f32> = keys.iter().flat_map(|k| k.iter().copied()).collect();
        let values = vec![0.0; flat.len()];
        FrameBlock {
            meta: FrameMeta {
                frame_id: 0,
                confidence: 1.0,
                sharpness: 1.0,
                pose: None,
                token_positions: vec![],
                cluster: None,
            },
            layers: vec![LayerKv::new(1, keys.len(), dim, flat, values).unwrap()],
        }
    }

    fn proto(v: &[f64]) -> Prototype {
        Prototype::from_mean(v.to_vec())
    }

    #[test]
    fn prototype_of_two_orthogonal_keys() {
        let p = compute_prototype(&block_with_keys(2, &[&[1.0, 0.0], &[0.0, 1.0]]), 0).unwrap();
        assert_eq!(p.raw, vec![0.5, 0.5]);
        assert!((p.unit[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((p.unit[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(!p.degenerate);
    }

    #[test]
    fn non_finite_tensors_are_rejected() {
        let config = StreamConfig::uniform(1, 1, 2, 2, 2);
        let mut b = block_with_keys(2, &[&[1.0, 0.0], &[0.0, 1.0]]);
        b.validate(&config).unwrap();
        b.layers[0].values[3] = f32::NAN;
        assert!(matches!(b.validate(&config), Err(Error::Structural(_))));
        b.layers[0].values[3] = 0.0;
        b.layers[0].keys[0] = f32::INFINITY;
        assert!(b.validate(&config).is_err());
    }

    #[test]
    fn prototype_of_repeated_key() {
        let p = compute_prototype(&block_with_keys(2, &[&[3.0, 4.0], &[3.0, 4.0], &[3.0, 4.0]]), 0).unwrap();
        assert_eq!(p.raw, vec![3.0, 4.0]);
        assert!((p.unit[0] - 0.6).abs() < 1e-12);
        assert!((p.unit[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn cancelling_keys_are_degenerate() {
        let p = compute_prototype(&block_with_keys(2, &[&[1.0, 0.0], &[-1.0, 0.0]]), 0).unwrap();
        assert_eq!(p.raw, vec![0.0, 0.0]);
        assert_eq!(p.unit, vec![0.0, 0.0]);
        assert!(p.degenerate);
    }

    #[test]
    fn prototype_layer_out_of_range() {
        let b = block_with_keys(2, &[&[1.0, 0.0]]);
        assert!(matches!(compute_prototype(&b, 1), Err(Error::Structural(_))));
    }

    #[test]
    fn distance_examples() {
        let e1 = proto(&[1.0, 0.0]);
        assert_eq!(cosine_distance(&e1, &e1).unwrap(), 0.0);
        assert_eq!(cosine_distance(&e1, &proto(&[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(cosine_distance(&e1, &proto(&[-1.0, 0.0])).unwrap(), 2.0);
    }

    #[test]
    fn degenerate_distance_is_one() {
        let z = proto(&[0.0, 0.0]);
        assert_eq!(cosine_distance(&z, &proto(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_distance(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn distance_width_mismatch() {
        let err = cosine_distance(&proto(&[1.0, 0.0]), &proto(&[1.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn block_shape_mismatch_is_rejected() {
        let config = StreamConfig::uniform(1, 1, 3, 2, 4);
        let b = block_with_keys(2, &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(b.validate(&config), Err(Error::Structural(_))));
    }

    #[test]
    fn meta_rejects_non_unit_quaternion() {
        let mut meta = block_with_keys(2, &[&[1.0, 0.0]]).meta;
        meta.pose = Some([1.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(meta.validate(1).is_err());
        meta.pose = Some([1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0]);
        assert!(meta.validate(1).is_ok());
        meta.confidence = 1.5;
        assert!(meta.validate(1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(StreamConfig::uniform(2, 2, 4, 8, 2).validate().is_ok());
        assert!(StreamConfig::uniform(0, 2, 4, 8, 2).validate().is_err());
        assert!(StreamConfig::uniform(1, 0, 4, 8, 2).validate().is_err());
        let mut c = StreamConfig::uniform(2, 2, 4, 8, 2);
        c.key_dims.pop();
        assert!(c.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn keys_strategy() -> impl Strategy<Value = (usize, Vec<f32>)> {
            (1usize..6, 1usize..8).prop_flat_map(|(tokens, dim)| {
                (Just(dim), proptest::collection::vec(-4.0f32..4.0, tokens * dim))
            })
        }

        fn make(dim: usize, keys: Vec<f32>) -> FrameBlock {
            let tokens = keys.len() / dim;
            let values = vec![0.0; keys.len()];
            let mut b = block_with_keys(dim, &[]);
            b.layers = vec![LayerKv::new(1, tokens, dim, keys, values).unwrap()];
            b
        }

        proptest! {
            #[test]
            fn distance_is_symmetric((dim, ka) in keys_strategy(), kb in proptest::collection::vec(-4.0f32..4.0, 1..8)) {
                let a = compute_prototype(&make(dim, ka), 0).unwrap();
                let kb: Vec<f32> = kb.iter().cycle().take(dim * 3).copied().collect();
                let b = compute_prototype(&make(dim, kb), 0).unwrap();
                prop_assert_eq!(cosine_distance(&a, &b).unwrap(), cosine_distance(&b, &a).unwrap());
            }

            #[test]
            fn self_distance_is_zero((dim, keys) in keys_strategy()) {
                let p = compute_prototype(&make(dim, keys), 0).unwrap();
                if !p.degenerate {
                    let unit_norm = dot(&p.unit, &p.unit).sqrt();
                    prop_assert!((unit_norm - 1.0).abs() < 1e-6);
                    prop_assert!(cosine_distance(&p, &p).unwrap() < 1e-9);
                }
            }

            #[test]
            fn positive_scaling_keeps_direction((dim, keys) in keys_strategy(), scale in 0.01f32..100.0) {
                let p = compute_prototype(&make(dim, keys.clone()), 0).unwrap();
                let scaled: Vec<f32> = keys.iter().map(|k| k * scale).collect();
                let q = compute_prototype(&make(dim, scaled), 0).unwrap();
                if !p.degenerate && p.raw.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-3 {
                    for (a, b) in p.unit.iter().zip(&q.unit) {
                        prop_assert!((a - b).abs() < 1e-6);
                    }
                }
            }

            #[test]
            fn token_order_does_not_change_mean((dim, keys) in keys_strategy(), rot in 0usize..8) {
                let tokens = keys.len() / dim;
                let p = compute_prototype(&make(dim, keys.clone()), 0).unwrap();
                let mut rows: Vec<Vec<f32>> = keys.chunks(dim).map(|c| c.to_vec()).collect();
                rows.rotate_left(rot % tokens);
                rows.reverse();
                let q = compute_prototype(&make(dim, rows.concat()), 0).unwrap();
                for (a, b) in p.raw.iter().zip(&q.raw) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
