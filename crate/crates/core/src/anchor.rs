//! Sparse anchor tier: first frame pinned, gap-gated promotion, FIFO eviction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{cosine_distance, dot, FrameMeta, Prototype};

/// Promotion thresholds and capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub capacity: usize,
    /// Minimum frame distance between consecutive promotions.
    pub gap: u64,
    pub phi_min: f64,
    pub nu_min: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig { capacity: 0, gap: 50, phi_min: 0.3, nu_min: 0.05 }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gap == 0 {
            return Err(Error::config("anchor gap must be >= 1"));
        }
        if !self.phi_min.is_finite() || !self.nu_min.is_finite() {
            return Err(Error::config("anchor thresholds must be finite"));
        }
        Ok(())
    }
}

/// Where a novelty score came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoveltySource {
    Pose,
    /// No pose on the candidate or an anchor: layer-0 prototypes were compared.
    Prototype,
    EmptyTier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub frame_id: u64,
    pub meta: FrameMeta,
    pub prototypes: Vec<Prototype>,
}

/// What `maybe_promote` decided for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Promotion {
    pub promoted: bool,
    pub pinned: bool,
    pub evicted: Option<u64>,
    /// Frames since the last promotion, if any.
    pub elapsed: Option<u64>,
    pub reliability: f64,
    pub novelty: f64,
    pub novelty_source: NoveltySource,
}

/// Geometric reliability `q * s`.
pub fn reliability(meta: &FrameMeta) -> f64 {
    meta.reliability()
}

/// Unit quaternion followed by `t / (1 + |t|)`, then L2-normalized.
pub fn pose_signature(pose: &[f64; 7]) -> [f64; 7] {
    let tn = pose[4..].iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut sig = *pose;
    for x in &mut sig[4..] {
        *x /= 1.0 + tn;
    }
    let n = dot(&sig, &sig).sqrt();
    if n > 0.0 {
        sig.iter_mut().for_each(|x| *x /= n);
    }
    sig
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTier {
    config: AnchorConfig,
    slots: Vec<AnchorRecord>,
    t_last: Option<u64>,
    started: bool,
}

impl AnchorTier {
    pub fn new(config: AnchorConfig) -> Result<Self> {
        config.validate()?;
        Ok(AnchorTier { config, slots: Vec::new(), t_last: None, started: false })
    }

    /// Rebuilds a tier from checkpointed parts.
    pub fn restore(config: AnchorConfig, slots: Vec<AnchorRecord>, t_last: Option<u64>, started: bool) -> Result<Self> {
        config.validate()?;
        if slots.len() > config.capacity {
            return Err(Error::format(format!(
                "{} anchor slots exceed capacity {}",
                slots.len(),
                config.capacity
            )));
        }
        if slots.windows(2).any(|w| w[0].frame_id >= w[1].frame_id) {
            return Err(Error::format("anchor slots are not in promotion order"));
        }
        Ok(AnchorTier { config, slots, t_last, started })
    }

    pub fn config(&self) -> &AnchorConfig {
        &self.config
    }

    pub fn slots(&self) -> &[AnchorRecord] {
        &self.slots
    }

    pub fn t_last(&self) -> Option<u64> {
        self.t_last
    }

    pub fn started(&self) -> bool {
        self.started
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn contains(&self, frame_id: u64) -> bool {
        self.slots.iter().any(|s| s.frame_id == frame_id)
    }

    pub fn frame_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.slots.iter().map(|s| s.frame_id)
    }

    /// Smallest pose dissimilarity to any anchor; 2.0 for an empty tier.
    pub fn novelty(&self, pose: &[f64; 7]) -> f64 {
        let sig = pose_signature(pose);
        self.slots
            .iter()
            .filter_map(|a| a.meta.pose.as_ref())
            .map(|p| 1.0 - dot(&sig, &pose_signature(p)))
            .fold(2.0, f64::min)
    }

    fn candidate_novelty(&self, meta: &FrameMeta, prototypes: &[Prototype]) -> (f64, NoveltySource) {
        if self.slots.is_empty() {
            return (2.0, NoveltySource::EmptyTier);
        }
        match &meta.pose {
            Some(pose) if self.slots.iter().all(|a| a.meta.pose.is_some()) => (self.novelty(pose), NoveltySource::Pose),
            _ => {
                let nu = prototypes
                    .first()
                    .map(|cand| {
                        self.slots
                            .iter()
                            .filter_map(|a| a.prototypes.first())
                            .filter_map(|p| cosine_distance(cand, p).ok())
                            .fold(2.0, f64::min)
                    })
                    .unwrap_or(2.0);
                (nu, NoveltySource::Prototype)
            }
        }
    }

    /// Decides whether the frame becomes an anchor.
    ///
    /// The first frame of the stream is pinned into slot 0. Later frames need
    /// the elapsed gap, reliability and novelty gates to pass; a full tier
    /// then drops its oldest non-pinned slot.
    pub fn maybe_promote(&mut self, meta: &FrameMeta, prototypes: &[Prototype]) -> Promotion {
        let phi = meta.reliability();
        let first = !self.started;
        self.started = true;
        let elapsed = self.t_last.map(|t| meta.frame_id.saturating_sub(t));
        let mut out = Promotion {
            promoted: false,
            pinned: false,
            evicted: None,
            elapsed,
            reliability: phi,
            novelty: 2.0,
            novelty_source: NoveltySource::EmptyTier,
        };
        if self.config.capacity == 0 {
            return out;
        }
        if first {
            self.slots.push(AnchorRecord {
                frame_id: meta.frame_id,
                meta: meta.clone(),
                prototypes: prototypes.to_vec(),
            });
            self.t_last = Some(meta.frame_id);
            out.promoted = true;
            out.pinned = true;
            return out;
        }
        let (nu, source) = self.candidate_novelty(meta, prototypes);
        out.novelty = nu;
        out.novelty_source = source;
        let gap_ok = elapsed.is_none_or(|e| e >= self.config.gap);
        if !(gap_ok && phi >= self.config.phi_min && nu >= self.config.nu_min) {
            return out;
        }
        if self.slots.len() >= self.config.capacity {
            if self.slots.len() < 2 {
                // Only the pinned slot exists and it cannot be evicted.
                return out;
            }
            out.evicted = Some(self.slots.remove(1).frame_id);
        }
        self.slots.push(AnchorRecord {
            frame_id: meta.frame_id,
            meta: meta.clone(),
            prototypes: prototypes.to_vec(),
        });
        self.t_last = Some(meta.frame_id);
        out.promoted = true;
        out
    }
}
