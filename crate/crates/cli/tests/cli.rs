use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kvframe(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kvframe"))
        .args(args)
        .env("KVFRAME_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn trace_hash(dir: &Path) -> String {
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    manifest["summary"]["trace_hash"].as_str().unwrap().to_string()
}

#[test]
fn run_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        ok(&kvframe(
            &[
                "run", "--scenario", "multi-room", "--policy", "frame-kcenter", "--mid", "16", "--anchors", "4", "--gap",
                "50", "--seed", "42", "--frames", "150", "--out", dir.to_str().unwrap(),
            ],
            tmp.path(),
        ));
    }
    let csv = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(a.join("trace.jsonl")).unwrap(), fs::read(b.join("trace.jsonl")).unwrap());
    assert!(String::from_utf8(csv).unwrap().starts_with("# {\"config_hash\":"));
    assert!(fs::read_to_string(a.join("trace.jsonl")).unwrap().starts_with("{\"header\":{\"config_hash\":"));
}

#[test]
fn recent_zero_matches_default_trace_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let common = ["--scenario", "revisit", "--frames", "200", "--seed", "7"];
    let mut ra = vec!["run", "--policy", "recent-k", "--recent-k", "0", "--out", a.to_str().unwrap()];
    ra.extend(common);
    let mut rb = vec!["run", "--policy", "frame-kcenter", "--out", b.to_str().unwrap()];
    rb.extend(common);
    ok(&kvframe(&ra, tmp.path()));
    ok(&kvframe(&rb, tmp.path()));
    assert_eq!(trace_hash(&a), trace_hash(&b));
}

#[test]
fn sweep_reports_affine_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sweep");
    let stdout = ok(&kvframe(
        &["sweep", "--scenario", "slow-pan", "--frames", "80", "--mid", "12,16,20,24", "--out", dir.to_str().unwrap()],
        tmp.path(),
    ));
    assert!(stdout.contains("bytes are affine in B_M"), "{stdout}");
    let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 5);
    for m in [12, 16, 20, 24] {
        assert!(dir.join(format!("mid_{m}/metrics.csv")).exists());
    }
}

#[test]
fn compare_writes_aligned_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("cmp");
    ok(&kvframe(
        &[
            "compare", "--scenario", "revisit", "--frames", "120", "--metrics-every", "20", "--variants",
            "recent-k:0:16+0,recent-k:2:14+0,token-level:256", "--out", dir.to_str().unwrap(),
        ],
        tmp.path(),
    ));
    let csv = fs::read_to_string(dir.join("compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().contains("config_hashes"));
    assert_eq!(lines.next().unwrap(), "t,layer,label,coverage_radius,delta_k,S,rho,bytes");
    for label in ["recent-k:0:16+0", "recent-k:2:14+0", "token-level:256"] {
        assert!(csv.contains(label), "{label}");
    }
}

#[test]
fn heatmap_from_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    ok(&kvframe(
        &["run", "--scenario", "slow-pan", "--frames", "40", "--checkpoint-every", "20", "--out", run_dir.to_str().unwrap()],
        tmp.path(),
    ));
    let ck = run_dir.join("checkpoints/step_000039.kvbc");
    let out = tmp.path().join("h.csv");
    ok(&kvframe(&["heatmap", "--checkpoint", ck.to_str().unwrap(), "--layer", "1", "--out", out.to_str().unwrap()], tmp.path()));
    let text = fs::read_to_string(&out).unwrap();
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap().trim_start_matches("# ")).unwrap();
    assert_eq!(header["layer"], 1);
    assert!(header["config_hash"].is_string());
    assert_eq!(text.lines().count() as u64 - 1, header["rows"].as_u64().unwrap());
}

#[test]
fn failures_exit_nonzero_with_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bad");
    let out = kvframe(
        &["run", "--scenario", "slow-pan", "--policy", "recent-k", "--recent-k", "20", "--mid", "16", "--out", dir.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("error.json")).unwrap()).unwrap();
    assert_eq!(record["error"]["kind"], "config");

    assert_eq!(kvframe(&["run", "--scenario", "nowhere"], tmp.path()).status.code(), Some(2));
    assert_eq!(kvframe(&["run", "--no-such-flag"], tmp.path()).status.code(), Some(2));
    let junk = tmp.path().join("junk.kvbc");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let out = kvframe(&["heatmap", "--checkpoint", junk.to_str().unwrap(), "--out", "x.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(4));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "format");
}

#[test]
fn record_then_run_recorded_matches_generated() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("s.kvbs");
    ok(&kvframe(&["record", "--scenario", "degraded-interval", "--frames", "60", "--out", file.to_str().unwrap()], tmp.path()));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&kvframe(&["run", "--recorded", file.to_str().unwrap(), "--out", a.to_str().unwrap()], tmp.path()));
    ok(&kvframe(&["run", "--scenario", "degraded-interval", "--frames", "60", "--out", b.to_str().unwrap()], tmp.path()));
    assert_eq!(trace_hash(&a), trace_hash(&b));
}

#[test]
fn scenario_list_and_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let list = ok(&kvframe(&["scenario-list"], tmp.path()));
    for name in ["slow-pan", "multi-room", "revisit", "degraded-interval", "long-horizon"] {
        assert!(list.contains(name));
    }
    let dump = ok(&kvframe(&["scenario-list", "--dump", "revisit"], tmp.path()));
    let spec: serde_json::Value = serde_json::from_str(&dump).unwrap();
    assert_eq!(spec["name"], "revisit");
}

#[test]
fn default_output_goes_under_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&kvframe(&["run", "--scenario", "slow-pan", "--frames", "10"], tmp.path()));
    let entries: Vec<_> = fs::read_dir(tmp.path()).unwrap().collect();
    assert_eq!(entries.len(), 1);
    assert!(entries[0].as_ref().unwrap().path().join("manifest.json").exists());
}
