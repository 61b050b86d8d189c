//! Runs a policy over a stream and writes metrics, trace, checkpoints and a
//! reproducibility manifest.
//!
//! Per-step metrics, one row per `(t, layer)`:
//!
//! * `b_t`, `c_t`: mean retained tokens per frame seen and mean compression
//!   `1 - b/N`, both over every frame seen so far (support thinning);
//! * `S*`, `S`, `D`, `rho`: grid support before/after, damage and ratio,
//!   averaged over the frames that still contribute tokens;
//! * `delta_k`: contrast statistic of retained memory, dominant set taken
//!   against the current frame's prototype (empty when undefined);
//! * `coverage_radius`: k-center objective of retained memory against every
//!   frame prototype seen, on the `metrics_every` cadence and the last step;
//! * `bytes`: retained key/value bytes at that layer.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anchor::AnchorConfig;
use crate::checkpoint::save_checkpoint;
use crate::container::open_recorded;
use crate::diagnostics::{heatmap_export, memory_contrast, memory_coverage_radius, support_proxy};
use crate::error::{Error, Result};
use crate::manager::{ManagerConfig, MemoryManager};
use crate::memory::{FrameBlock, Prototype, StreamConfig};
use crate::policies::Policy;
use crate::sim::{scenario, StreamSpec};
use crate::trace::{RetentionTrace, TraceEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StreamSource {
    Scenario { name: String },
    Spec { path: PathBuf },
    Recorded { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    FrameKcenter,
    RecentK,
    TokenLevel,
    FullCache,
}

impl PolicyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frame-kcenter" => Ok(PolicyKind::FrameKcenter),
            "recent-k" => Ok(PolicyKind::RecentK),
            "token-level" => Ok(PolicyKind::TokenLevel),
            "full-cache" => Ok(PolicyKind::FullCache),
            other => Err(Error::config(format!(
                "unknown policy '{other}' (frame-kcenter, recent-k, token-level, full-cache)"
            ))),
        }
    }
}

fn default_mid() -> usize {
    16
}
fn default_gap() -> u64 {
    50
}
fn default_phi() -> f64 {
    0.3
}
fn default_nu() -> f64 {
    0.05
}
fn default_grid() -> usize {
    8
}
fn default_every() -> u64 {
    50
}
fn default_quantile() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub stream: StreamSource,
    pub policy: PolicyKind,
    #[serde(default = "default_mid")]
    pub mid_capacity: usize,
    /// Defaults to 4 for frame-level policies and 0 otherwise.
    #[serde(default)]
    pub anchor_capacity: Option<usize>,
    #[serde(default = "default_gap")]
    pub gap: u64,
    #[serde(default = "default_phi")]
    pub phi_min: f64,
    #[serde(default = "default_nu")]
    pub nu_min: f64,
    #[serde(default)]
    pub recent_k: Option<usize>,
    /// Token-level only; defaults to `mid_capacity * N`.
    #[serde(default)]
    pub token_budget: Option<usize>,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    /// Stream seed (scenarios and spec files).
    #[serde(default)]
    pub seed: Option<u64>,
    /// Truncates the stream.
    #[serde(default)]
    pub frames: Option<u64>,
    #[serde(default = "default_every")]
    pub metrics_every: u64,
    #[serde(default = "default_quantile")]
    pub dominant_quantile: f64,
    /// Writes a checkpoint (and layer-0/head-0 heatmap) every this many frames.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
}

impl RunConfig {
    pub fn new(stream: StreamSource, policy: PolicyKind) -> Self {
        RunConfig {
            stream,
            policy,
            mid_capacity: default_mid(),
            anchor_capacity: None,
            gap: default_gap(),
            phi_min: default_phi(),
            nu_min: default_nu(),
            recent_k: None,
            token_budget: None,
            grid_size: default_grid(),
            seed: None,
            frames: None,
            metrics_every: default_every(),
            dominant_quantile: default_quantile(),
            checkpoint_every: None,
        }
    }

    pub fn scenario(name: &str, policy: PolicyKind) -> Self {
        RunConfig::new(StreamSource::Scenario { name: name.to_string() }, policy)
    }

    pub fn validate(&self) -> Result<()> {
        let frame_level = matches!(self.policy, PolicyKind::FrameKcenter | PolicyKind::RecentK);
        if self.token_budget.is_some() && self.policy != PolicyKind::TokenLevel {
            return Err(Error::config("token_budget only applies to the token-level policy"));
        }
        if self.recent_k.is_some() && self.policy != PolicyKind::RecentK {
            return Err(Error::config("recent_k only applies to the recent-k policy"));
        }
        if self.policy == PolicyKind::RecentK && self.recent_k.is_none() {
            return Err(Error::config("the recent-k policy needs recent_k"));
        }
        if !frame_level && self.anchor_capacity.unwrap_or(0) > 0 {
            return Err(Error::config("anchors only apply to frame-level policies"));
        }
        if self.grid_size == 0 {
            return Err(Error::config("grid_size must be >= 1"));
        }
        if self.metrics_every == 0 || self.checkpoint_every == Some(0) {
            return Err(Error::config("cadences must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.dominant_quantile) {
            return Err(Error::config("dominant_quantile must lie in [0,1]"));
        }
        if matches!(self.stream, StreamSource::Recorded { .. }) && self.seed.is_some() {
            return Err(Error::config("a recorded stream has no seed to override"));
        }
        Ok(())
    }

    pub fn anchors(&self) -> usize {
        match self.policy {
            PolicyKind::FrameKcenter | PolicyKind::RecentK => self.anchor_capacity.unwrap_or(4),
            _ => 0,
        }
    }

    pub fn manager_config(&self, stream: &StreamConfig) -> Result<ManagerConfig> {
        self.validate()?;
        let policy = match self.policy {
            PolicyKind::FrameKcenter => Policy::FrameKcenter,
            PolicyKind::RecentK => Policy::RecentK { k: self.recent_k.unwrap_or(0) },
            PolicyKind::TokenLevel => Policy::TokenLevel {
                budget: self.token_budget.unwrap_or(self.mid_capacity * stream.tokens_per_frame),
            },
            PolicyKind::FullCache => Policy::FullCache,
        };
        let cfg = ManagerConfig {
            stream: stream.clone(),
            policy,
            mid_capacity: self.mid_capacity,
            anchors: AnchorConfig {
                capacity: self.anchors(),
                gap: self.gap,
                phi_min: self.phi_min,
                nu_min: self.nu_min,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("run config serializes")))
    }

    /// Short human label for comparison tables.
    pub fn label(&self) -> String {
        match self.policy {
            PolicyKind::FrameKcenter => format!("frame-kcenter:{}+{}", self.mid_capacity, self.anchors()),
            PolicyKind::RecentK => format!(
                "recent-k:{}:{}+{}",
                self.recent_k.unwrap_or(0),
                self.mid_capacity,
                self.anchors()
            ),
            PolicyKind::TokenLevel => match self.token_budget {
                Some(b) => format!("token-level:{b}"),
                None => format!("token-level:{}xN", self.mid_capacity),
            },
            PolicyKind::FullCache => "full-cache".to_string(),
        }
    }
}

/// A stream ready to be consumed.
pub struct OpenedStream {
    pub config: StreamConfig,
    pub frames: u64,
    pub spec_hash: Option<String>,
    pub blocks: Box<dyn Iterator<Item = Result<FrameBlock>>>,
}

pub fn load_spec(source: &StreamSource, seed: Option<u64>) -> Result<Option<StreamSpec>> {
    match source {
        StreamSource::Scenario { name } => Ok(Some(scenario(name, seed.unwrap_or(0))?.spec)),
        StreamSource::Spec { path } => {
            let mut spec = StreamSpec::from_json(&fs::read_to_string(path)?)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            Ok(Some(spec))
        }
        StreamSource::Recorded { .. } => Ok(None),
    }
}

pub fn open_stream(config: &RunConfig) -> Result<OpenedStream> {
    let limit = config.frames.unwrap_or(u64::MAX);
    match load_spec(&config.stream, config.seed)? {
        Some(mut spec) => {
            spec.frames = spec.frames.min(limit);
            Ok(OpenedStream {
                config: spec.config.clone(),
                frames: spec.frames,
                spec_hash: Some(spec.hash()),
                blocks: Box::new(spec.generate().map(Ok)),
            })
        }
        None => {
            let StreamSource::Recorded { path } = &config.stream else { unreachable!("only recorded streams lack a spec") };
            let reader = open_recorded(path)?;
            let m = reader.manifest().clone();
            Ok(OpenedStream {
                config: m.config,
                frames: m.frames.min(limit),
                spec_hash: m.spec_hash,
                blocks: Box::new(reader.take(limit.min(usize::MAX as u64) as usize)),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub t: u64,
    pub policy: String,
    pub layer: usize,
    pub b: f64,
    pub c: f64,
    pub s_star: f64,
    pub s: f64,
    pub damage: f64,
    pub rho: f64,
    pub delta_k: Option<f64>,
    pub coverage_radius: Option<f64>,
    pub bytes: u64,
}

pub const METRICS_HEADER: &str = "t,policy,layer,b_t,c_t,S*,S,D,rho,delta_k,coverage_radius,bytes";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.policy,
            self.layer,
            self.b,
            self.c,
            self.s_star,
            self.s,
            self.damage,
            self.rho,
            opt(self.delta_k),
            opt(self.coverage_radius),
            self.bytes
        )
    }
}

/// Renders rows as CSV with a leading `# {...}` line carrying the config hash.
pub fn metrics_csv(config_hash: &str, rows: &[MetricRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}", serde_json::json!({ "config_hash": config_hash }));
    let _ = writeln!(out, "{METRICS_HEADER}");
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub config_hash: String,
    pub spec_hash: Option<String>,
    pub trace_hash: String,
    pub steps: u64,
    pub promotions: u64,
    pub max_loaded_tokens: usize,
    pub max_bytes: u64,
    pub final_retained_tokens: Vec<usize>,
    pub final_coverage_radius: Vec<f64>,
    /// Mean Δ over the final quartile of steps where it was defined, per layer.
    pub final_quartile_delta: Vec<Option<f64>>,
    pub mean_retention: Vec<f64>,
}

/// Everything a run produced, kept in memory.
pub struct RunOutput {
    pub summary: RunSummary,
    pub rows: Vec<MetricRow>,
    pub events: Vec<TraceEvent>,
    pub manager: MemoryManager,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config: &'a RunConfig,
    config_hash: &'a str,
    spec_hash: Option<&'a str>,
    manager: &'a ManagerConfig,
    build_version: &'static str,
    summary: &'a RunSummary,
    interpretive_choices: [&'static str; 4],
}

const CHOICES: [&str; 4] = [
    "support proxy S: fraction of grid cells covered by retained token positions",
    "dominant set R_k: retained keys with cosine to the current frame prototype above the configured quantile",
    "token-level policy: per-token k-center over head-averaged keys; a proxy for key-diversity token pruning",
    "loaded cache: committed memory through t-1 plus the current block",
];

/// Runs `config`; with `out_dir`, writes `metrics.csv`, `trace.jsonl`,
/// `manifest.json` and any checkpoints/heatmaps there.
pub fn run(config: &RunConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    config.validate()?;
    let stream = open_stream(config)?;
    let mcfg = config.manager_config(&stream.config)?;
    let config_hash = config.hash();
    let mut manager = MemoryManager::new(mcfg.clone())?;
    let layers = stream.config.num_layers;

    let mut trace = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = BufWriter::new(File::create(dir.join("trace.jsonl"))?);
            writeln!(f, "{}", serde_json::json!({ "header": { "config_hash": config_hash, "policy": mcfg.policy.name() } }))?;
            RetentionTrace::with_sink(Box::new(f))
        }
        None => RetentionTrace::new(),
    };
    if let (Some(dir), Some(_)) = (out_dir, config.checkpoint_every) {
        fs::create_dir_all(dir.join("checkpoints"))?;
    }

    let mut history: Vec<Vec<Prototype>> = vec![Vec::new(); layers];
    let mut rows = Vec::new();
    let mut events = Vec::new();
    let mut promotions = 0u64;
    let mut max_loaded = 0usize;
    let mut max_bytes = 0u64;
    let n = stream.config.tokens_per_frame as f64;
    let last = stream.frames.saturating_sub(1);
    let mut steps = 0u64;

    for block in stream.blocks {
        let block = block?;
        let t = block.frame_id();
        let out = manager.step(block)?;
        steps += 1;
        let mut step_events = out.events;
        if out.promotion.as_ref().is_some_and(|p| p.promoted) {
            promotions += 1;
        }
        max_loaded = max_loaded.max(out.loaded.layers.iter().map(|l| l.token_count()).max().unwrap_or(0));
        // The loaded cache always ends with the current block.
        let current = out.loaded.layers[0].entries.last().map(|e| e.block.clone()).expect("current block is loaded");
        let bytes = manager.memory_bytes();
        max_bytes = max_bytes.max(bytes.total);

        for (l, seen_protos) in history.iter_mut().enumerate() {
            let proto = current.prototypes[l].clone();
            seen_protos.push(proto.clone());
            let mask = manager.retention_mask(l);
            let seen = mask.frames_seen as f64;
            let total = mask.total() as f64;
            let (mut s_star, mut s, mut rho, mut count) = (0.0, 0.0, 0.0, 0usize);
            for entry in manager.memory(l) {
                let pos = &entry.block.block.meta.token_positions;
                let before = support_proxy(pos, config.grid_size)?;
                let after = support_proxy(entry.token_indices().iter().filter_map(|&i| pos.get(i)), config.grid_size)?;
                s_star += before;
                s += after;
                rho += if before == 0.0 { 1.0 } else { after / before };
                count += 1;
            }
            if count > 0 {
                let k = count as f64;
                s_star /= k;
                s /= k;
                rho /= k;
            }
            let contrast = memory_contrast(&manager, l, &proto, config.dominant_quantile);
            if contrast.is_none() {
                step_events.push(TraceEvent::Note { t, message: format!("contrast skipped at layer {l}: empty dominant set or remainder") });
            }
            let coverage = (t % config.metrics_every == 0 || t == last).then(|| {
                let pool: Vec<&Prototype> = seen_protos.iter().collect();
                memory_coverage_radius(&manager, l, &pool)
            });
            rows.push(MetricRow {
                t,
                policy: mcfg.policy.name().to_string(),
                layer: l,
                b: total / seen,
                c: 1.0 - total / (seen * n),
                s_star,
                s,
                damage: s_star - s,
                rho,
                delta_k: contrast.map(|c| c.delta),
                coverage_radius: coverage,
                bytes: bytes.per_layer[l],
            });
        }
        trace.extend(&step_events)?;
        events.extend(step_events);

        if let (Some(dir), Some(every)) = (out_dir, config.checkpoint_every) {
            if (t + 1) % every == 0 || t == last {
                let ck = dir.join("checkpoints");
                save_checkpoint(&manager, &ck.join(format!("step_{t:06}.kvbc")))?;
                heatmap_export(&manager, 0, 0, &ck.join(format!("heatmap_step_{t:06}_l0_h0.csv")), Some(&config_hash))?;
            }
        }
    }

    let final_coverage_radius = (0..layers)
        .map(|l| rows.iter().rev().find(|r| r.layer == l).and_then(|r| r.coverage_radius).unwrap_or(0.0))
        .collect();
    let quartile_start = steps - steps / 4;
    let final_quartile_delta = (0..layers)
        .map(|l| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.layer == l && r.t >= quartile_start)
                .filter_map(|r| r.delta_k)
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    let summary = RunSummary {
        label: config.label(),
        config_hash: config_hash.clone(),
        spec_hash: stream.spec_hash.clone(),
        trace_hash: trace.hash(),
        steps,
        promotions,
        max_loaded_tokens: max_loaded,
        max_bytes,
        final_retained_tokens: (0..layers).map(|l| manager.retained_tokens(l)).collect(),
        final_coverage_radius,
        final_quartile_delta,
        mean_retention: (0..layers).map(|l| manager.retention_mask(l).mean_retention()).collect(),
    };
    trace.finish()?;

    if let Some(dir) = out_dir {
        fs::write(dir.join("metrics.csv"), metrics_csv(&config_hash, &rows))?;
        let manifest = Manifest {
            config,
            config_hash: &config_hash,
            spec_hash: stream.spec_hash.as_deref(),
            manager: &mcfg,
            build_version: env!("CARGO_PKG_VERSION"),
            summary: &summary,
            interpretive_choices: CHOICES,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    }
    Ok(RunOutput { summary, rows, events, manager })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub t: u64,
    pub layer: usize,
    pub label: String,
    pub coverage_radius: Option<f64>,
    pub delta_k: Option<f64>,
    pub s: f64,
    pub rho: f64,
    pub bytes: u64,
}

pub const COMPARE_HEADER: &str = "t,layer,label,coverage_radius,delta_k,S,rho,bytes";

impl CompareRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.t,
            self.layer,
            self.label,
            opt(self.coverage_radius),
            opt(self.delta_k),
            self.s,
            self.rho,
            self.bytes
        )
    }
}

/// Checks that every config reads the same stream.
pub fn check_shared_stream(configs: &[RunConfig]) -> Result<()> {
    let Some(first) = configs.first() else {
        return Err(Error::config("compare needs at least one config"));
    };
    for c in &configs[1..] {
        if c.stream != first.stream || c.seed != first.seed || c.frames != first.frames {
            return Err(Error::config(format!(
                "config '{}' reads a different stream than '{}'",
                c.label(),
                first.label()
            )));
        }
    }
    Ok(())
}

/// Long-format comparison rows ordered by `(t, layer, config order)`.
pub fn compare_rows(outputs: &[(String, Vec<MetricRow>)]) -> Vec<CompareRow> {
    let mut rows: Vec<(usize, CompareRow)> = Vec::new();
    for (i, (label, metrics)) in outputs.iter().enumerate() {
        for m in metrics {
            rows.push((
                i,
                CompareRow {
                    t: m.t,
                    layer: m.layer,
                    label: label.clone(),
                    coverage_radius: m.coverage_radius,
                    delta_k: m.delta_k,
                    s: m.s,
                    rho: m.rho,
                    bytes: m.bytes,
                },
            ));
        }
    }
    rows.sort_by_key(|(i, r)| (r.t, r.layer, *i));
    rows.into_iter().map(|(_, r)| r).collect()
}

pub fn compare_csv(rows: &[CompareRow], config_hashes: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}", serde_json::json!({ "config_hashes": config_hashes }));
    let _ = writeln!(out, "{COMPARE_HEADER}");
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

/// Runs every config on the shared stream, sequentially.
pub fn compare(configs: &[RunConfig]) -> Result<Vec<CompareRow>> {
    check_shared_stream(configs)?;
    let outputs = configs
        .iter()
        .map(|c| Ok((c.label(), run(c, None)?.rows)))
        .collect::<Result<Vec<_>>>()?;
    Ok(compare_rows(&outputs))
}

/// Least-squares line through `(x, y)` and its largest absolute residual.
pub fn affine_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let resid = points.iter().map(|p| (p.1 - (slope * p.0 + intercept)).abs()).fold(0.0, f64::max);
    (slope, intercept, resid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mid_capacity: usize,
    pub anchors: usize,
    pub label: String,
    pub max_bytes: u64,
    pub trace_hash: String,
    pub config_hash: String,
}

pub const SWEEP_HEADER: &str = "mid_capacity,anchors,label,max_bytes,trace_hash,config_hash";

impl SweepRow {
    pub fn from_summary(config: &RunConfig, s: &RunSummary) -> Self {
        SweepRow {
            mid_capacity: config.mid_capacity,
            anchors: config.anchors(),
            label: s.label.clone(),
            max_bytes: s.max_bytes,
            trace_hash: s.trace_hash.clone(),
            config_hash: s.config_hash.clone(),
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.mid_capacity, self.anchors, self.label, self.max_bytes, self.trace_hash, self.config_hash
        )
    }
}

/// Exact integer check that bytes are affine in the bank size: every pair of
/// rows shares one per-block increment.
pub fn bytes_increment(rows: &[SweepRow]) -> Option<u64> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.mid_capacity);
    let mut inc = None;
    for w in sorted.windows(2) {
        let dm = (w[1].mid_capacity - w[0].mid_capacity) as u64;
        if dm == 0 || w[1].max_bytes < w[0].max_bytes || (w[1].max_bytes - w[0].max_bytes) % dm != 0 {
            return None;
        }
        let step = (w[1].max_bytes - w[0].max_bytes) / dm;
        if inc.is_some_and(|i| i != step) {
            return None;
        }
        inc = Some(step);
    }
    inc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(name: &str, policy: PolicyKind, frames: u64) -> RunConfig {
        let mut c = RunConfig::scenario(name, policy);
        c.frames = Some(frames);
        c.seed = Some(3);
        c
    }

    #[test]
    fn config_consistency() {
        let mut c = short("slow-pan", PolicyKind::FrameKcenter, 10);
        c.token_budget = Some(10);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = short("slow-pan", PolicyKind::RecentK, 10);
        assert!(c.validate().is_err());
        c.recent_k = Some(20);
        c.mid_capacity = 16;
        let stream = StreamConfig::uniform(1, 1, 4, 4, 2);
        assert!(c.manager_config(&stream).is_err());
        let mut c = short("slow-pan", PolicyKind::TokenLevel, 10);
        c.anchor_capacity = Some(2);
        assert!(c.validate().is_err());
        c.anchor_capacity = None;
        assert_eq!(c.manager_config(&stream).unwrap().policy, Policy::TokenLevel { budget: 64 });
    }

    #[test]
    fn run_writes_artifacts_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = short("multi-room", PolicyKind::FrameKcenter, 80);
        c.checkpoint_every = Some(40);
        let a = run(&c, Some(&dir.path().join("a"))).unwrap();
        let b = run(&c, Some(&dir.path().join("b"))).unwrap();
        assert_eq!(a.summary.trace_hash, b.summary.trace_hash);
        let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
        assert_eq!(read("a/metrics.csv"), read("b/metrics.csv"));
        assert_eq!(read("a/trace.jsonl"), read("b/trace.jsonl"));
        assert!(String::from_utf8(read("a/metrics.csv")).unwrap().contains(&c.hash()));
        assert!(dir.path().join("a/checkpoints/step_000079.kvbc").exists());
        assert!(dir.path().join("a/manifest.json").exists());
        assert_eq!(a.rows.len(), 80 * 2);
    }

    #[test]
    fn recent_zero_matches_default_policy() {
        let a = run(&short("revisit", PolicyKind::FrameKcenter, 200), None).unwrap();
        let mut c = short("revisit", PolicyKind::RecentK, 200);
        c.recent_k = Some(0);
        let b = run(&c, None).unwrap();
        assert_eq!(a.summary.trace_hash, b.summary.trace_hash);
        assert_ne!(a.summary.config_hash, b.summary.config_hash);
    }

    #[test]
    fn compare_requires_a_shared_stream() {
        let a = short("slow-pan", PolicyKind::FrameKcenter, 20);
        let mut b = short("slow-pan", PolicyKind::FullCache, 20);
        let rows = compare(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(rows.len(), 20 * 2 * 2);
        assert_eq!(rows[0].label, a.label());
        b.seed = Some(4);
        assert!(matches!(compare(&[a, b]), Err(Error::Config(_))));
    }

    #[test]
    fn affine_helpers() {
        let (s, i, r) = affine_fit(&[(12.0, 1.9), (16.0, 2.4), (20.0, 3.0), (24.0, 3.7)]);
        assert!((s - 0.15).abs() < 1e-9 && (i - 0.05).abs() < 1e-9 && r <= 0.05 + 1e-9);
        let row = |m: usize, b: u64| SweepRow {
            mid_capacity: m,
            anchors: 0,
            label: String::new(),
            max_bytes: b,
            trace_hash: String::new(),
            config_hash: String::new(),
        };
        assert_eq!(bytes_increment(&[row(12, 120), row(16, 160), row(24, 240)]), Some(10));
        assert_eq!(bytes_increment(&[row(12, 120), row(16, 161)]), None);
    }
}
