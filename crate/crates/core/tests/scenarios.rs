//! Behavior of the shipped scenarios under each policy.

use kvframe::anchor::AnchorConfig;
use kvframe::diagnostics::{heatmap_matrix, memory_coverage_radius};
use kvframe::runner::{run, PolicyKind, RunConfig};
use kvframe::sim::scenario;
use kvframe::{cosine_distance, ManagerConfig, MemoryManager, Policy, Prototype, TraceEvent};

fn manager(stream: &kvframe::StreamConfig, policy: Policy, mid: usize, anchors: usize, gap: u64) -> MemoryManager {
    MemoryManager::new(ManagerConfig {
        stream: stream.clone(),
        policy,
        mid_capacity: mid,
        anchors: AnchorConfig { capacity: anchors, gap, ..AnchorConfig::default() },
    })
    .unwrap()
}

/// Smallest distance from A's center to any block loaded while back in A.
fn revisit_reference(mid: usize, anchors: usize) -> f64 {
    let spec = scenario("revisit", 0).unwrap().spec;
    let mut m = manager(&spec.config, Policy::FrameKcenter, mid, anchors, 50);
    let return_at = 750;
    assert_eq!(spec.active_cluster(return_at), (0, 0));
    let center = Prototype::from_mean(spec.center_at(return_at, 0));
    let mut best = f64::INFINITY;
    for b in spec.generate().take(return_at as usize + 1) {
        let t = b.frame_id();
        let out = m.step(b).unwrap();
        if t == return_at {
            for e in &out.loaded.layers[0].entries {
                if e.frame_id < 150 {
                    best = best.min(cosine_distance(&e.block.prototypes[0], &center).unwrap());
                }
            }
        }
    }
    best
}

#[test]
fn revisit_keeps_a_room_a_reference_with_anchors() {
    assert!(revisit_reference(20, 4) < 0.1);
}

#[test]
fn slow_pan_recent_window_covers_worse_than_kcenter() {
    let spec = scenario("slow-pan", 0).unwrap().spec;
    let radius = |policy| {
        let mut m = manager(&spec.config, policy, 16, 0, 50);
        let mut history = Vec::new();
        for b in spec.generate() {
            let out = m.step(b).unwrap();
            history.push(out.loaded.layers[0].entries.last().unwrap().block.prototypes[0].clone());
        }
        let pool: Vec<&Prototype> = history.iter().collect();
        memory_coverage_radius(&m, 0, &pool)
    };
    let window = radius(Policy::RecentK { k: 16 });
    let kcenter = radius(Policy::FrameKcenter);
    assert!(window > kcenter, "window {window} vs k-center {kcenter}");
}

#[test]
fn degraded_interval_blocks_promotions() {
    let spec = scenario("degraded-interval", 0).unwrap().spec;
    let interval = &spec.metadata.degraded[0];
    let mut m = manager(&spec.config, Policy::FrameKcenter, 12, 4, 20);
    let mut promoted = Vec::new();
    for b in spec.generate() {
        let reliability = b.meta.reliability();
        let t = b.frame_id();
        for e in m.step(b).unwrap().events {
            if let TraceEvent::Promote { pinned: false, reliability: r, .. } = e {
                assert!(r >= 0.3 && reliability >= 0.3, "promoted frame {t} with reliability {r}");
                promoted.push(t);
            }
        }
    }
    assert!(!promoted.is_empty());
    assert!(promoted.iter().all(|t| !(interval.start..interval.end).contains(t)), "{promoted:?}");
}

#[test]
fn identical_frames_keep_zero_radius() {
    let mut spec = scenario("slow-pan", 1).unwrap().spec;
    spec.frames = 500;
    spec.drift_rate = 0.0;
    spec.noise_sigma = 0.0;
    spec.clusters[0].spread = 0.0;
    let mut m = manager(&spec.config, Policy::FrameKcenter, 2, 0, 50);
    let mut history = Vec::new();
    for b in spec.generate() {
        let out = m.step(b).unwrap();
        history.push(out.loaded.layers[0].entries.last().unwrap().block.prototypes[0].clone());
        assert!(m.bank(0).unwrap().len() <= 2);
    }
    let pool: Vec<&Prototype> = history.iter().collect();
    assert!(memory_coverage_radius(&m, 0, &pool) < 1e-9);
}

#[test]
fn matched_budgets_retain_the_same_token_count() {
    let spec = scenario("multi-room", 2).unwrap().spec;
    let n = spec.config.tokens_per_frame;
    let mut frame = manager(&spec.config, Policy::FrameKcenter, 16, 0, 50);
    let mut token = manager(&spec.config, Policy::TokenLevel { budget: 16 * n }, 16, 0, 50);
    for b in spec.generate().take(300) {
        frame.step(b.clone()).unwrap();
        token.step(b).unwrap();
        for l in 0..spec.config.num_layers {
            let (a, b) = (frame.retained_tokens(l), token.retained_tokens(l));
            assert!(a.abs_diff(b) <= n, "layer {l}: {a} vs {b}");
            let (ha, _) = heatmap_matrix(&frame, l, 0).unwrap();
            let (hb, _) = heatmap_matrix(&token, l, 0).unwrap();
            assert_eq!(ha.rows, a);
            assert_eq!(hb.rows, b);
        }
    }
}

#[test]
fn metric_rows_agree_with_the_retention_mask() {
    let mut c = RunConfig::scenario("revisit", PolicyKind::TokenLevel);
    c.frames = Some(120);
    c.token_budget = Some(200);
    let out = run(&c, None).unwrap();
    let n = 16.0;
    for l in 0..2 {
        let last = out.rows.iter().rev().find(|r| r.layer == l).unwrap();
        let mask = out.manager.retention_mask(l);
        let expect = 1.0 - mask.total() as f64 / (mask.frames_seen as f64 * n);
        assert!((last.c - expect).abs() < 1e-12);
        assert!((last.b - mask.total() as f64 / mask.frames_seen as f64).abs() < 1e-12);
        assert!(mask.total() <= 200);
    }
    for r in &out.rows {
        assert!(r.damage >= -1e-12, "support damage must be non-negative");
        assert!(r.rho <= 1.0 + 1e-12);
    }
}

#[test]
fn full_cache_grows_linearly() {
    let spec = scenario("degraded-interval", 3).unwrap().spec;
    let mut m = manager(&spec.config, Policy::FullCache, 16, 0, 50);
    let per_frame = m.config().stream.tokens_per_frame;
    let mut prev = 0;
    for b in spec.generate().take(50) {
        let t = b.frame_id() as usize;
        m.step(b).unwrap();
        assert_eq!(m.retained_tokens(0), (t + 1) * per_frame);
        let bytes = m.memory_bytes().total;
        if t > 0 {
            assert_eq!(bytes - prev, bytes / (t as u64 + 1));
        }
        prev = bytes;
    }
}

#[test]
fn long_horizon_stays_within_budget_end_to_end() {
    let mut c = RunConfig::scenario("long-horizon", PolicyKind::RecentK);
    c.recent_k = Some(4);
    c.metrics_every = 1000;
    let out = run(&c, None).unwrap();
    assert_eq!(out.summary.steps, 5000);
    assert!(out.summary.max_loaded_tokens <= (16 + 4 + 1) * 16);
    assert_eq!(out.summary.final_retained_tokens, vec![(16 + 4) * 16]);
}
