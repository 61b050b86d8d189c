//! Deterministic synthetic frame streams.
//!
//! Keys for frame `t` are drawn around the active cluster's center, which
//! drifts along a great circle while the cluster is active. Values are
//! independent noise so that nothing downstream can depend on them.
//!
//! Every random draw comes from a ChaCha8 generator whose seed is derived by
//! SplitMix64 mixing of the stream seed with a domain tag and the draw's
//! coordinates:
//!
//! * cluster center and drift direction: `(CENTER, cluster, layer)`, D normals
//!   each (center first), unless the center is given explicitly;
//! * frame direction jitter: `(FRAME, t, layer)`, D normals;
//! * token key noise then value: `(TOKEN, t, layer, head, token)`, D normals
//!   for the key followed by D normals for the value;
//! * metadata: `(META, t)`: confidence jitter, sharpness jitter, then
//!   `2N` uniforms for random token positions;
//! * random-walk pose step: `(POSE, t)`, 3 normals.
//!
//! A frame is therefore a pure function of `(spec, t)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::memory::{FrameBlock, FrameMeta, LayerKv, StreamConfig};

const TAG_CENTER: u64 = 0x43;
const TAG_FRAME: u64 = 0x46;
const TAG_TOKEN: u64 = 0x54;
const TAG_META: u64 = 0x4d;
const TAG_POSE: u64 = 0x50;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derived_rng(seed: u64, coords: &[u64]) -> ChaCha8Rng {
    let key = coords.iter().fold(splitmix(seed), |acc, &c| splitmix(acc ^ c));
    ChaCha8Rng::seed_from_u64(key)
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    /// Unit center per layer; drawn from the seed when absent.
    #[serde(default)]
    pub centers: Option<Vec<Vec<f64>>>,
    /// Typical angle (radians) between a frame's direction and the center.
    pub spread: f64,
    /// Frames spent in this cluster per visit.
    pub dwell: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradedInterval {
    pub start: u64,
    /// Exclusive.
    pub end: u64,
    pub confidence: f64,
    pub sharpness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataSchedule {
    pub confidence: f64,
    pub sharpness: f64,
    /// Half-width of the uniform jitter added to both scores.
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub degraded: Vec<DegradedInterval>,
}

impl Default for MetadataSchedule {
    fn default() -> Self {
        MetadataSchedule { confidence: 0.9, sharpness: 0.8, jitter: 0.05, degraded: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PoseTrajectory {
    /// No pose; anchors fall back to prototype novelty.
    None,
    /// Yaw advances `rate` radians per frame on a circle of `radius`.
    Circular { radius: f64, rate: f64 },
    /// Each cluster sits at its own yaw around a circle; drift turns the camera.
    ClusterLinked { radius: f64 },
    /// Gaussian translation steps with a slow constant yaw rate.
    RandomWalk { step: f64, yaw_rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionLayout {
    Grid,
    Random,
}

/// Full description of a synthetic stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub frames: u64,
    pub config: StreamConfig,
    pub clusters: Vec<ClusterSpec>,
    /// Radians per frame of center drift while a cluster is active.
    #[serde(default)]
    pub drift_rate: f64,
    /// Per-token isotropic noise, as a fraction of the key norm.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "one")]
    pub key_scale: f64,
    #[serde(default)]
    pub metadata: MetadataSchedule,
    #[serde(default = "default_pose")]
    pub pose: PoseTrajectory,
    #[serde(default = "default_layout")]
    pub layout: PositionLayout,
    /// Frames whose keys are all zero.
    #[serde(default)]
    pub degenerate_frames: Vec<u64>,
}

fn one() -> f64 {
    1.0
}

fn default_pose() -> PoseTrajectory {
    PoseTrajectory::ClusterLinked { radius: 2.0 }
}

fn default_layout() -> PositionLayout {
    PositionLayout::Grid
}

/// Upper bound on elements per layer tensor accepted from untrusted specs.
const MAX_LAYER_ELEMENTS: usize = 1 << 24;

impl StreamSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: StreamSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stream spec serializes")
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("stream spec serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for l in 0..self.config.num_layers {
            if self.config.layer_elements(l) > MAX_LAYER_ELEMENTS {
                return Err(Error::config(format!("layer {l} tensor is too large for the simulator")));
            }
        }
        if self.clusters.is_empty() {
            return Err(Error::config("stream spec needs at least one cluster"));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.dwell == 0 {
                return Err(Error::config(format!("cluster {i} has zero dwell")));
            }
            if !c.spread.is_finite() || c.spread < 0.0 {
                return Err(Error::config(format!("cluster {i} spread must be finite and >= 0")));
            }
            if let Some(centers) = &c.centers {
                if centers.len() != self.config.num_layers {
                    return Err(Error::config(format!("cluster {i} needs one center per layer")));
                }
                for (l, v) in centers.iter().enumerate() {
                    if v.len() != self.config.key_dim(l) {
                        return Err(Error::config(format!("cluster {i} layer {l} center has the wrong width")));
                    }
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
                        return Err(Error::config(format!("cluster {i} layer {l} center is not unit norm")));
                    }
                }
            }
        }
        let finite = [self.drift_rate, self.noise_sigma, self.key_scale, self.metadata.jitter];
        if finite.iter().any(|x| !x.is_finite()) || self.noise_sigma < 0.0 || self.metadata.jitter < 0.0 {
            return Err(Error::config("drift, noise, scale and jitter must be finite (noise and jitter >= 0)"));
        }
        if self.key_scale <= 0.0 {
            return Err(Error::config("key_scale must be positive"));
        }
        let unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !unit(self.metadata.confidence) || !unit(self.metadata.sharpness) {
            return Err(Error::config("base confidence and sharpness must lie in [0,1]"));
        }
        for d in &self.metadata.degraded {
            if !unit(d.confidence) || !unit(d.sharpness) || d.start > d.end {
                return Err(Error::config("degraded interval is malformed"));
            }
        }
        match self.pose {
            PoseTrajectory::Circular { radius, rate } if !radius.is_finite() || !rate.is_finite() => {
                return Err(Error::config("pose parameters must be finite"))
            }
            PoseTrajectory::ClusterLinked { radius } if !radius.is_finite() => {
                return Err(Error::config("pose parameters must be finite"))
            }
            PoseTrajectory::RandomWalk { step, yaw_rate } if !step.is_finite() || !yaw_rate.is_finite() => {
                return Err(Error::config("pose parameters must be finite"))
            }
            _ => {}
        }
        Ok(())
    }

    /// Active cluster and frames elapsed in the current visit.
    pub fn active_cluster(&self, t: u64) -> (usize, u64) {
        let period: u64 = self.clusters.iter().map(|c| c.dwell).fold(0u64, u64::saturating_add);
        let mut r = t % period.max(1);
        for (i, c) in self.clusters.iter().enumerate() {
            if r < c.dwell {
                return (i, r);
            }
            r -= c.dwell;
        }
        (self.clusters.len() - 1, 0)
    }

    /// Unit center and orthogonal drift direction of a cluster at a layer.
    pub fn cluster_basis(&self, cluster: usize, layer: usize) -> (Vec<f64>, Vec<f64>) {
        let dim = self.config.key_dim(layer);
        let mut rng = derived_rng(self.seed, &[TAG_CENTER, cluster as u64, layer as u64]);
        let mut center = normals(&mut rng, dim);
        let mut drift = normals(&mut rng, dim);
        if let Some(c) = self.clusters[cluster].centers.as_ref() {
            center = c[layer].clone();
        }
        normalize(&mut center);
        let proj: f64 = drift.iter().zip(&center).map(|(a, b)| a * b).sum();
        drift.iter_mut().zip(&center).for_each(|(d, c)| *d -= proj * c);
        if normalize(&mut drift) == 0.0 && dim > 1 {
            // Only reachable for dim-1 or pathological draws.
            drift = vec![0.0; dim];
        }
        (center, drift)
    }

    /// Drifted cluster center at frame `t`.
    pub fn center_at(&self, t: u64, layer: usize) -> Vec<f64> {
        let (cluster, elapsed) = self.active_cluster(t);
        let (center, drift) = self.cluster_basis(cluster, layer);
        let theta = self.drift_rate * elapsed as f64;
        let (s, c) = theta.sin_cos();
        center.iter().zip(&drift).map(|(a, b)| c * a + s * b).collect()
    }

    fn pose_at(&self, t: u64, walk: Option<[f64; 3]>) -> Option<[f64; 7]> {
        let quat = |yaw: f64| [(yaw / 2.0).cos(), 0.0, 0.0, (yaw / 2.0).sin()];
        match self.pose {
            PoseTrajectory::None => None,
            PoseTrajectory::Circular { radius, rate } => {
                let yaw = rate * t as f64;
                let q = quat(yaw);
                Some([q[0], q[1], q[2], q[3], radius * yaw.cos(), radius * yaw.sin(), 0.0])
            }
            PoseTrajectory::ClusterLinked { radius } => {
                let (cluster, elapsed) = self.active_cluster(t);
                let base = 2.0 * PI * cluster as f64 / self.clusters.len() as f64;
                let q = quat(base + self.drift_rate * elapsed as f64);
                Some([q[0], q[1], q[2], q[3], radius * base.cos(), radius * base.sin(), 0.0])
            }
            PoseTrajectory::RandomWalk { step, yaw_rate } => {
                let p = walk.unwrap_or_else(|| self.walk_position(t, step));
                let q = quat(yaw_rate * t as f64);
                Some([q[0], q[1], q[2], q[3], p[0], p[1], p[2]])
            }
        }
    }

    fn walk_step(&self, t: u64, step: f64) -> [f64; 3] {
        let mut rng = derived_rng(self.seed, &[TAG_POSE, t]);
        let g = normals(&mut rng, 3);
        [step * g[0], step * g[1], step * g[2]]
    }

    fn walk_position(&self, t: u64, step: f64) -> [f64; 3] {
        let mut p = [0.0; 3];
        for i in 1..=t {
            let s = self.walk_step(i, step);
            (0..3).for_each(|k| p[k] += s[k]);
        }
        p
    }

    fn meta_at(&self, t: u64, walk: Option<[f64; 3]>) -> FrameMeta {
        let n = self.config.tokens_per_frame;
        let mut rng = derived_rng(self.seed, &[TAG_META, t]);
        let jq: f64 = rng.random_range(-1.0..=1.0);
        let js: f64 = rng.random_range(-1.0..=1.0);
        let (mut q, mut s) = (self.metadata.confidence, self.metadata.sharpness);
        if let Some(d) = self.metadata.degraded.iter().find(|d| (d.start..d.end).contains(&t)) {
            q = d.confidence;
            s = d.sharpness;
        }
        let confidence = (q + self.metadata.jitter * jq).clamp(0.0, 1.0);
        let sharpness = (s + self.metadata.jitter * js).clamp(0.0, 1.0);
        let token_positions = match self.layout {
            PositionLayout::Grid => {
                let w = (n as f64).sqrt().ceil() as usize;
                let h = n.div_ceil(w);
                (0..n)
                    .map(|i| [((i % w) as f64 + 0.5) / w as f64, ((i / w) as f64 + 0.5) / h as f64])
                    .collect()
            }
            PositionLayout::Random => (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect(),
        };
        FrameMeta {
            frame_id: t,
            confidence,
            sharpness,
            pose: self.pose_at(t, walk),
            token_positions,
            cluster: Some(self.active_cluster(t).0 as u32),
        }
    }

    /// Generates frame `t` directly.
    pub fn frame(&self, t: u64) -> FrameBlock {
        self.frame_with_walk(t, None)
    }

    fn frame_with_walk(&self, t: u64, walk: Option<[f64; 3]>) -> FrameBlock {
        let cfg = &self.config;
        let (cluster, _) = self.active_cluster(t);
        let spread = self.clusters[cluster].spread;
        let degenerate = self.degenerate_frames.contains(&t);
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let (heads, n, dim) = (cfg.heads(l), cfg.tokens_per_frame, cfg.key_dim(l));
                let root = (dim as f64).sqrt();
                let center = self.center_at(t, l);
                let mut frng = derived_rng(self.seed, &[TAG_FRAME, t, l as u64]);
                let jitter = normals(&mut frng, dim);
                let mut dir: Vec<f64> = center.iter().zip(&jitter).map(|(c, g)| c + spread / root * g).collect();
                normalize(&mut dir);
                let mut keys = Vec::with_capacity(heads * n * dim);
                let mut values = Vec::with_capacity(heads * n * dim);
                for h in 0..heads {
                    for tok in 0..n {
                        let mut rng = derived_rng(self.seed, &[TAG_TOKEN, t, l as u64, h as u64, tok as u64]);
                        let g = normals(&mut rng, dim);
                        let v = normals(&mut rng, dim);
                        if degenerate {
                            keys.extend(std::iter::repeat_n(0.0f32, dim));
                        } else {
                            keys.extend(
                                dir.iter()
                                    .zip(&g)
                                    .map(|(d, e)| (self.key_scale * (d + self.noise_sigma / root * e)) as f32),
                            );
                        }
                        values.extend(v.iter().map(|&x| x as f32));
                    }
                }
                LayerKv { heads, tokens: n, dim, keys, values }
            })
            .collect();
        FrameBlock { meta: self.meta_at(t, walk), layers }
    }

    /// Frames `0..frames` in order.
    pub fn generate(&self) -> FrameStream {
        FrameStream { spec: Arc::new(self.clone()), next: 0, walk: [0.0; 3] }
    }
}

/// Iterator over a spec's frames.
pub struct FrameStream {
    spec: Arc<StreamSpec>,
    next: u64,
    walk: [f64; 3],
}

impl Iterator for FrameStream {
    type Item = FrameBlock;

    fn next(&mut self) -> Option<FrameBlock> {
        if self.next >= self.spec.frames {
            return None;
        }
        let t = self.next;
        self.next += 1;
        let walk = match self.spec.pose {
            PoseTrajectory::RandomWalk { step, .. } => {
                if t > 0 {
                    let s = self.spec.walk_step(t, step);
                    (0..3).for_each(|k| self.walk[k] += s[k]);
                }
                Some(self.walk)
            }
            _ => None,
        };
        Some(self.spec.frame_with_walk(t, walk))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.spec.frames - self.next) as usize;
        (left, Some(left))
    }
}

/// Named scenario and a one-line description.
pub struct Scenario {
    pub name: &'static str,
    pub description: &'static str,
    pub spec: StreamSpec,
}

fn base_spec(name: &str, seed: u64, frames: u64, config: StreamConfig) -> StreamSpec {
    StreamSpec {
        name: name.to_string(),
        seed,
        frames,
        config,
        clusters: Vec::new(),
        drift_rate: 0.0,
        noise_sigma: 0.3,
        key_scale: 1.0,
        metadata: MetadataSchedule::default(),
        pose: default_pose(),
        layout: PositionLayout::Grid,
        degenerate_frames: Vec::new(),
    }
}

fn clusters(count: usize, spread: f64, dwell: u64) -> Vec<ClusterSpec> {
    (0..count).map(|_| ClusterSpec { centers: None, spread, dwell }).collect()
}

pub const SCENARIO_NAMES: [&str; 5] = ["slow-pan", "multi-room", "revisit", "degraded-interval", "long-horizon"];

/// Builds a named scenario with the given seed.
pub fn scenario(name: &str, seed: u64) -> Result<Scenario> {
    let small = StreamConfig::uniform(2, 2, 16, 16, 2);
    let (description, spec) = match name {
        "slow-pan" => {
            let mut s = base_spec(name, seed, 600, small);
            s.clusters = clusters(1, 0.02, 600);
            s.drift_rate = 0.005;
            s.pose = PoseTrajectory::Circular { radius: 1.0, rate: 0.005 };
            ("one slowly drifting view with heavy frame-to-frame redundancy", s)
        }
        "multi-room" => {
            // As many compact rooms as the default total budget of 16 blocks.
            let mut s = base_spec(name, seed, 1200, small);
            s.clusters = clusters(16, 0.05, 25);
            s.drift_rate = 0.004;
            ("sixteen well-separated compact rooms visited in turn, three times", s)
        }
        "revisit" => {
            let mut s = base_spec(name, seed, 900, small);
            s.clusters = vec![
                ClusterSpec { centers: None, spread: 0.05, dwell: 150 },
                ClusterSpec { centers: None, spread: 0.05, dwell: 600 },
            ];
            s.drift_rate = 0.004;
            ("room A, a long stay in room B, then back to room A", s)
        }
        "degraded-interval" => {
            let mut s = base_spec(name, seed, 600, small);
            s.clusters = clusters(3, 0.05, 100);
            s.drift_rate = 0.01;
            s.metadata.degraded = vec![DegradedInterval { start: 250, end: 400, confidence: 0.3, sharpness: 0.4 }];
            ("confidence and sharpness collapse for frames 250..400", s)
        }
        "long-horizon" => {
            let mut s = base_spec(name, seed, 5000, StreamConfig::uniform(1, 2, 16, 16, 2));
            s.clusters = clusters(8, 0.05, 50);
            s.drift_rate = 0.01;
            ("5000 frames cycling through eight regions", s)
        }
        other => {
            return Err(Error::config(format!(
                "unknown scenario '{other}' (known: {})",
                SCENARIO_NAMES.join(", ")
            )))
        }
    };
    Ok(Scenario { name: SCENARIO_NAMES.iter().find(|n| **n == name).copied().unwrap_or("custom"), description, spec })
}

/// Every shipped scenario with the given seed.
pub fn scenario_library(seed: u64) -> Vec<Scenario> {
    SCENARIO_NAMES.iter().map(|n| scenario(n, seed).expect("shipped scenario")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{compute_prototype, cosine_distance};

    fn tiny(clusters: Vec<ClusterSpec>) -> StreamSpec {
        let mut s = base_spec("t", 7, 12, StreamConfig::uniform(2, 2, 4, 3, 4));
        s.clusters = clusters;
        s
    }

    #[test]
    fn zero_spread_zero_noise_gives_identical_prototypes() {
        let mut s = tiny(clusters(1, 0.0, 5));
        s.noise_sigma = 0.0;
        let protos: Vec<_> = s.generate().map(|b| compute_prototype(&b, 0).unwrap()).collect();
        for p in &protos {
            assert!(cosine_distance(p, &protos[0]).unwrap() < 1e-12);
        }
    }

    #[test]
    fn antipodal_clusters_give_zero_or_two() {
        let c = vec![1.0, 0.0, 0.0];
        let d = vec![-1.0, 0.0, 0.0];
        let mut s = tiny(vec![
            ClusterSpec { centers: Some(vec![c.clone(), c]), spread: 0.0, dwell: 2 },
            ClusterSpec { centers: Some(vec![d.clone(), d]), spread: 0.0, dwell: 2 },
        ]);
        s.noise_sigma = 0.0;
        let protos: Vec<_> = s.generate().map(|b| compute_prototype(&b, 1).unwrap()).collect();
        for a in &protos {
            for b in &protos {
                let dist = cosine_distance(a, b).unwrap();
                assert!(dist < 1e-6 || (dist - 2.0).abs() < 1e-6, "{dist}");
            }
        }
    }

    #[test]
    fn replay_is_identical_and_random_access_matches() {
        let mut s = tiny(clusters(2, 0.1, 3));
        s.pose = PoseTrajectory::RandomWalk { step: 0.1, yaw_rate: 0.02 };
        s.layout = PositionLayout::Random;
        let a: Vec<_> = s.generate().collect();
        let b: Vec<_> = s.generate().collect();
        assert_eq!(a, b);
        assert_eq!(s.frame(5), a[5]);
        for f in &a {
            f.validate(&s.config).unwrap();
        }
    }

    #[test]
    fn schedule_cycles() {
        let s = tiny(vec![
            ClusterSpec { centers: None, spread: 0.0, dwell: 2 },
            ClusterSpec { centers: None, spread: 0.0, dwell: 3 },
        ]);
        let seq: Vec<usize> = (0..7).map(|t| s.active_cluster(t).0).collect();
        assert_eq!(seq, vec![0, 0, 1, 1, 1, 0, 0]);
        assert_eq!(s.active_cluster(6), (0, 1));
    }

    #[test]
    fn degenerate_frames_have_zero_keys() {
        let mut s = tiny(clusters(1, 0.1, 4));
        s.degenerate_frames = vec![2];
        let b = s.frame(2);
        assert!(compute_prototype(&b, 0).unwrap().degenerate);
        assert!(!compute_prototype(&s.frame(1), 0).unwrap().degenerate);
    }

    #[test]
    fn spec_validation() {
        assert!(tiny(vec![]).validate().is_err());
        assert!(tiny(clusters(1, 0.1, 0)).validate().is_err());
        let bad = ClusterSpec { centers: Some(vec![vec![2.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]), spread: 0.0, dwell: 1 };
        assert!(tiny(vec![bad]).validate().is_err());
        let s = tiny(clusters(1, 0.1, 3));
        assert_eq!(StreamSpec::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn scenarios_exist_and_validate() {
        for sc in scenario_library(1) {
            sc.spec.validate().unwrap();
        }
        assert!(scenario("revisit", 3).unwrap().spec.frames > 0);
        assert!(matches!(scenario("nope", 1), Err(Error::Config(_))));
        assert!(scenario("long-horizon", 1).unwrap().spec.frames >= 5000);
    }

    #[test]
    fn keys_are_finite_and_nonzero() {
        let s = scenario("multi-room", 4).unwrap().spec;
        for b in s.generate().take(50) {
            for kv in &b.layers {
                let n: f32 = kv.keys.iter().map(|x| x * x).sum();
                assert!(n.is_finite() && n > 0.0);
            }
        }
    }
}
