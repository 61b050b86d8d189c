use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use kvframe::checkpoint::load_checkpoint;
use kvframe::container::record_spec;
use kvframe::diagnostics::heatmap_export;
use kvframe::oracle::{exact_k_center, objective};
use kvframe::runner::{
    bytes_increment, check_shared_stream, compare_csv, compare_rows, load_spec, run, PolicyKind, RunConfig,
    StreamSource, SweepRow, SWEEP_HEADER,
};
use kvframe::sim::scenario_library;
use kvframe::{select_k_center, Error, Prototype, Result};

/// Environment variable overriding the default output root.
const OUT_ENV: &str = "KVFRAME_OUT";

#[derive(Parser)]
#[command(name = "kvframe", version, about = "Bounded frame-level KV memory simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy over a stream.
    Run(RunArgs),
    /// Run one policy for several mid-term capacities in parallel.
    Sweep(SweepArgs),
    /// Run several policy variants over the same stream.
    Compare(CompareArgs),
    /// Export a key heatmap from a checkpoint.
    Heatmap(HeatmapArgs),
    /// Compare greedy k-center with the exact optimum on random instances.
    #[command(hide = true)]
    OracleCheck(OracleArgs),
    /// List the shipped scenarios.
    ScenarioList {
        /// Print this scenario's spec as JSON instead.
        #[arg(long)]
        dump: Option<String>,
    },
    /// Record a generated stream to the binary container format.
    Record {
        #[command(flatten)]
        stream: StreamArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct StreamArgs {
    #[arg(long, conflicts_with_all = ["spec", "recorded"])]
    scenario: Option<String>,
    /// StreamSpec JSON file.
    #[arg(long, conflicts_with = "recorded")]
    spec: Option<PathBuf>,
    /// Recorded stream container.
    #[arg(long)]
    recorded: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Truncate the stream to this many frames.
    #[arg(long)]
    frames: Option<u64>,
}

impl StreamArgs {
    fn source(&self) -> Result<StreamSource> {
        match (&self.scenario, &self.spec, &self.recorded) {
            (Some(name), None, None) => Ok(StreamSource::Scenario { name: name.clone() }),
            (None, Some(path), None) => Ok(StreamSource::Spec { path: path.clone() }),
            (None, None, Some(path)) => Ok(StreamSource::Recorded { path: path.clone() }),
            _ => Err(Error::Config("give exactly one of --scenario, --spec or --recorded".into())),
        }
    }
}

#[derive(Args, Clone)]
struct PolicyArgs {
    #[arg(long, default_value = "frame-kcenter")]
    policy: String,
    /// Anchor capacity B_A (frame-level policies; default 4).
    #[arg(long)]
    anchors: Option<usize>,
    #[arg(long, default_value_t = 50)]
    gap: u64,
    #[arg(long, default_value_t = 0.3)]
    phi_min: f64,
    #[arg(long, default_value_t = 0.05)]
    nu_min: f64,
    #[arg(long)]
    recent_k: Option<usize>,
    #[arg(long)]
    token_budget: Option<usize>,
    #[arg(long, default_value_t = 8)]
    grid_size: usize,
    #[arg(long, default_value_t = 50)]
    metrics_every: u64,
    #[arg(long, default_value_t = 0.9)]
    dominant_quantile: f64,
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Mid-term capacity B_M in frames.
    #[arg(long, default_value_t = 16)]
    mid: usize,
    /// Full RunConfig as JSON; replaces the stream and policy flags.
    #[arg(long, conflicts_with_all = ["scenario", "spec", "recorded"])]
    config: Option<PathBuf>,
    /// Output directory (default: $KVFRAME_OUT/<label>-<hash>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Mid-term capacities to sweep.
    #[arg(long, value_delimiter = ',', default_value = "12,16,20,24")]
    mid: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    stream: StreamArgs,
    /// Variants: frame-kcenter:M+A, recent-k:K:M+A, token-level[:BUDGET], full-cache.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// RunConfig JSON files (alternative to --variants).
    #[arg(long)]
    config: Vec<PathBuf>,
    #[arg(long, default_value_t = 50)]
    metrics_every: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    layer: usize,
    #[arg(long, default_value_t = 0)]
    head: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 500)]
    instances: u64,
    #[arg(long, default_value_t = 12)]
    max_n: usize,
    #[arg(long, default_value_t = 5)]
    max_k: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_config(stream: &StreamArgs, p: &PolicyArgs, mid: usize) -> Result<RunConfig> {
    let mut c = RunConfig::new(stream.source()?, PolicyKind::parse(&p.policy)?);
    c.mid_capacity = mid;
    c.anchor_capacity = p.anchors;
    c.gap = p.gap;
    c.phi_min = p.phi_min;
    c.nu_min = p.nu_min;
    c.recent_k = p.recent_k;
    c.token_budget = p.token_budget;
    c.grid_size = p.grid_size;
    c.seed = stream.seed;
    c.frames = stream.frames;
    c.metrics_every = p.metrics_every;
    c.dominant_quantile = p.dominant_quantile;
    c.checkpoint_every = p.checkpoint_every;
    c.validate()?;
    Ok(c)
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("kvframe-out"))
}

fn default_dir(config: &RunConfig) -> PathBuf {
    let label = config.label().replace([':', '+'], "_");
    out_root().join(format!("{label}-{}", &config.hash()[..12]))
}

/// Parses `frame-kcenter:16+4`, `recent-k:2:14+0`, `token-level:256`, `full-cache`.
fn parse_variant(text: &str, base: &RunConfig) -> Result<RunConfig> {
    let bad = || Error::Config(format!("cannot parse variant '{text}'"));
    let sizes = |s: &str| -> Result<(usize, usize)> {
        let (m, a) = s.split_once('+').ok_or_else(bad)?;
        Ok((m.parse().map_err(|_| bad())?, a.parse().map_err(|_| bad())?))
    };
    let parts: Vec<&str> = text.split(':').collect();
    let mut c = base.clone();
    c.policy = PolicyKind::parse(parts[0])?;
    match (c.policy, &parts[1..]) {
        (PolicyKind::FrameKcenter, [s]) => {
            let (m, a) = sizes(s)?;
            c.mid_capacity = m;
            c.anchor_capacity = Some(a);
        }
        (PolicyKind::RecentK, [k, s]) => {
            c.recent_k = Some(k.parse().map_err(|_| bad())?);
            let (m, a) = sizes(s)?;
            c.mid_capacity = m;
            c.anchor_capacity = Some(a);
        }
        (PolicyKind::TokenLevel, []) => {}
        (PolicyKind::TokenLevel, [b]) => c.token_budget = Some(b.parse().map_err(|_| bad())?),
        (PolicyKind::FullCache, []) => {}
        _ => return Err(bad()),
    }
    c.validate()?;
    Ok(c)
}

fn cmd_run(args: RunArgs) -> Result<Option<PathBuf>> {
    let config = match &args.config {
        Some(path) => {
            let c: RunConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
            c.validate()?;
            c
        }
        None => run_config(&args.stream, &args.policy, args.mid)?,
    };
    let dir = args.out.unwrap_or_else(|| default_dir(&config));
    let out = run(&config, Some(&dir)).inspect_err(|e| write_error_record(&dir, e))?;
    println!("{}", serde_json::to_string_pretty(&out.summary)?);
    println!("wrote {}", dir.display());
    Ok(Some(dir))
}

fn cmd_sweep(args: SweepArgs) -> Result<Option<PathBuf>> {
    let first = *args.mid.first().ok_or_else(|| Error::Config("--mid needs at least one value".into()))?;
    let base = run_config(&args.stream, &args.policy, first)?;
    let root = args.out.unwrap_or_else(|| out_root().join(format!("sweep-{}", &base.hash()[..12])));
    let configs: Vec<RunConfig> = args
        .mid
        .iter()
        .map(|&m| {
            let mut c = base.clone();
            c.mid_capacity = m;
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<SweepRow> = configs
        .par_iter()
        .map(|c| {
            let out = run(c, Some(&root.join(format!("mid_{}", c.mid_capacity))))?;
            Ok(SweepRow::from_summary(c, &out.summary))
        })
        .collect::<Result<_>>()?;
    let mut csv = format!("# {}\n{SWEEP_HEADER}\n", serde_json::json!({ "config_hash": base.hash() }));
    for r in &rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    fs::create_dir_all(&root)?;
    fs::write(root.join("sweep.csv"), &csv)?;
    print!("{csv}");
    match bytes_increment(&rows) {
        Some(inc) => println!("bytes are affine in B_M: {inc} bytes per block"),
        None => println!("bytes are NOT affine in B_M"),
    }
    Ok(Some(root))
}

fn cmd_compare(args: CompareArgs) -> Result<Option<PathBuf>> {
    let mut configs = Vec::new();
    for path in &args.config {
        let c: RunConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        c.validate()?;
        configs.push(c);
    }
    if !args.variants.is_empty() {
        let mut base = RunConfig::new(args.stream.source()?, PolicyKind::FrameKcenter);
        base.seed = args.stream.seed;
        base.frames = args.stream.frames;
        base.metrics_every = args.metrics_every;
        for v in &args.variants {
            configs.push(parse_variant(v, &base)?);
        }
    }
    if configs.len() < 2 {
        return Err(Error::Config("compare needs at least two variants".into()));
    }
    check_shared_stream(&configs)?;
    let outputs = configs
        .par_iter()
        .map(|c| Ok((c.label(), run(c, None)?.rows)))
        .collect::<Result<Vec<_>>>()?;
    let hashes: Vec<String> = configs.iter().map(RunConfig::hash).collect();
    let csv = compare_csv(&compare_rows(&outputs), &hashes);
    let root = args.out.unwrap_or_else(|| out_root().join("compare"));
    fs::create_dir_all(&root)?;
    fs::write(root.join("compare.csv"), csv)?;
    println!("wrote {}", root.join("compare.csv").display());
    Ok(Some(root))
}

fn cmd_heatmap(args: HeatmapArgs) -> Result<Option<PathBuf>> {
    let manager = load_checkpoint(&args.checkpoint)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let hash = run_config_hash(&args.checkpoint);
    let header = heatmap_export(&manager, args.layer, args.head, &args.out, hash.as_deref())?;
    println!("{}", serde_json::to_string(&header)?);
    Ok(None)
}

/// Config hash from the manifest of the run that wrote `checkpoint`, if any.
fn run_config_hash(checkpoint: &Path) -> Option<String> {
    let manifest = checkpoint.parent()?.parent()?.join("manifest.json");
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(manifest).ok()?).ok()?;
    value.get("config_hash")?.as_str().map(str::to_string)
}

fn cmd_oracle(args: OracleArgs) -> Result<Option<PathBuf>> {
    let mut worst = 0.0f64;
    let mut equal = 0u64;
    for i in 0..args.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ i);
        let n = rng.random_range(2..=args.max_n.max(2));
        let k = rng.random_range(1..=args.max_k.clamp(1, n));
        let protos: Vec<Prototype> = (0..n)
            .map(|_| Prototype::from_mean((0..args.dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let pool: Vec<(u64, &Prototype)> = protos.iter().enumerate().map(|(i, p)| (i as u64, p)).collect();
        let seed = (n - 1) as u64;
        let greedy = objective(&pool, &select_k_center(&pool, k, seed)?.order);
        let exact = exact_k_center(&pool, k, Some(seed))?;
        if greedy == exact.objective {
            equal += 1;
        } else if exact.objective > 0.0 {
            worst = worst.max(greedy / exact.objective);
        }
    }
    println!("instances {} equal {} worst ratio {worst:.4}", args.instances, equal);
    Ok(None)
}

fn cmd_scenarios(dump: Option<String>) -> Result<Option<PathBuf>> {
    match dump {
        Some(name) => {
            let spec = load_spec(&StreamSource::Scenario { name }, None)?.expect("scenarios have a spec");
            println!("{}", spec.to_json());
        }
        None => {
            for s in scenario_library(0) {
                println!("{:<18} {:>5} frames  {}", s.name, s.spec.frames, s.description);
            }
        }
    }
    Ok(None)
}

fn cmd_record(stream: StreamArgs, out: PathBuf) -> Result<Option<PathBuf>> {
    let mut spec = load_spec(&stream.source()?, stream.seed)?
        .ok_or_else(|| Error::Config("record needs --scenario or --spec".into()))?;
    if let Some(f) = stream.frames {
        spec.frames = spec.frames.min(f);
    }
    let manifest = record_spec(&spec, &out)?;
    println!("recorded {} frames to {}", manifest.frames, out.display());
    Ok(None)
}

fn write_error_record(dir: &Path, e: &Error) {
    if fs::create_dir_all(dir).is_ok() {
        let _ = fs::write(dir.join("error.json"), error_json(e) + "\n");
    }
}

fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() } }).to_string()
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Heatmap(a) => cmd_heatmap(a),
        Command::OracleCheck(a) => cmd_oracle(a),
        Command::ScenarioList { dump } => cmd_scenarios(dump),
        Command::Record { stream, out } => cmd_record(stream, out),
    };
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
