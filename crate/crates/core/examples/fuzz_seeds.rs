//! Writes fuzz corpus seeds: `cargo run -p kvframe --example fuzz_seeds -- fuzz/corpus`.

use std::fs;
use std::path::{Path, PathBuf};

use kvframe::anchor::AnchorConfig;
use kvframe::checkpoint::encode_checkpoint;
use kvframe::container::{encode_stream, StreamManifest};
use kvframe::runner::{PolicyKind, RunConfig};
use kvframe::sim::{scenario, SCENARIO_NAMES};
use kvframe::{ManagerConfig, MemoryManager, Policy, StreamConfig};

fn put(dir: &Path, name: &str, bytes: &[u8]) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(name), bytes).unwrap();
}

fn tiny(name: &str, frames: u64) -> kvframe::sim::StreamSpec {
    let mut spec = scenario(name, 1).unwrap().spec;
    spec.config = StreamConfig::uniform(1, 1, 4, 4, 2);
    spec.frames = frames;
    spec
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fuzz/corpus".into()));

    let specs = root.join("stream_spec_json");
    for name in SCENARIO_NAMES {
        put(&specs, &format!("{name}.json"), scenario(name, 0).unwrap().spec.to_json().as_bytes());
    }
    put(&specs, "tiny.json", tiny("revisit", 8).to_json().as_bytes());

    let configs = root.join("run_config_json");
    let mut recent = RunConfig::scenario("multi-room", PolicyKind::RecentK);
    recent.recent_k = Some(2);
    let mut token = RunConfig::scenario("revisit", PolicyKind::TokenLevel);
    token.token_budget = Some(128);
    for (i, c) in [RunConfig::scenario("slow-pan", PolicyKind::FrameKcenter), recent, token].iter().enumerate() {
        put(&configs, &format!("config_{i}.json"), serde_json::to_string(c).unwrap().as_bytes());
    }

    let streams = root.join("stream_container");
    for (name, frames) in [("multi-room", 3), ("degraded-interval", 1), ("slow-pan", 0)] {
        let spec = tiny(name, frames);
        let manifest = StreamManifest { config: spec.config.clone(), frames, spec_hash: Some(spec.hash()) };
        let blocks: Vec<_> = spec.generate().collect();
        put(&streams, &format!("{name}.kvbs"), &encode_stream(&manifest, &blocks).unwrap());
    }

    let checkpoints = root.join("checkpoint");
    let traces = root.join("trace_line");
    let spec = tiny("revisit", 12);
    let policies = [
        ("frame-kcenter", Policy::FrameKcenter, 2),
        ("recent-k", Policy::RecentK { k: 1 }, 2),
        ("token-level", Policy::TokenLevel { budget: 10 }, 0),
        ("full-cache", Policy::FullCache, 0),
    ];
    let mut lines = Vec::new();
    for (name, policy, anchors) in policies {
        let mut m = MemoryManager::new(ManagerConfig {
            stream: spec.config.clone(),
            policy,
            mid_capacity: 3,
            anchors: AnchorConfig { capacity: anchors, gap: 3, ..AnchorConfig::default() },
        })
        .unwrap();
        for b in spec.generate() {
            for e in m.step(b).unwrap().events {
                lines.push(e.to_line());
            }
        }
        put(&checkpoints, &format!("{name}.kvbc"), &encode_checkpoint(&m).unwrap());
    }
    lines.sort();
    lines.dedup_by(|a, b| a.split(',').next() == b.split(',').next());
    for (i, line) in lines.iter().enumerate() {
        put(&traces, &format!("event_{i}.jsonl"), line.as_bytes());
    }
    put(&traces, "note.jsonl", br#"{"event":"note","t":3,"message":"contrast skipped at layer 0"}"#);
}
