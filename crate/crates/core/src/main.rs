use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use hetmarl::checkpoint::{self, Checkpoint};
use hetmarl::config::{parse_config, parse_levels, ExperimentConfig, Overrides, Source};
use hetmarl::evaluation::{self, EvalOptions};
use hetmarl::training::{self, OutputOptions, Profile};
use serde_json::json;

#[derive(Parser)]
#[command(name = "hetmarl", version, about = "Train and evaluate GPPO / HetGPPO multi-robot policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes metrics.csv, checkpoints and config.toml.
    Train(TrainArgs),
    /// Summarise rewards and success over evaluation runs (JSON).
    Evaluate(EvalArgs),
    /// Normalised reward against observation-noise magnitude (CSV).
    Sweep(SweepArgs),
    /// Scenario A team action over a velocity grid (CSV).
    VectorField(RunArgs),
    /// One episode, one JSON record per timestep.
    Rollout(EvalArgs),
    /// Print a checkpoint's manifest.
    InspectCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `io.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
}

#[derive(Args)]
struct RunArgs {
    /// Checkpoint file, or a training directory (uses its `latest`).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; defaults to a file under `io.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    runs: Option<usize>,
    /// Observation noise magnitude.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Checkpoints to compare; normalised by the best noise-free mean unless
    /// `eval.normalization_anchor` is set.
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise levels as `a:b:n`.
    #[arg(long, value_parser = |s: &str| parse_levels(s).map(Levels))]
    levels: Option<Levels>,
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Clone)]
struct Levels(Vec<f64>);

fn parse_profile(s: &str) -> Result<Profile, String> {
    match s {
        "desk" => Ok(Profile::Desk),
        "paper" => Ok(Profile::Paper),
        _ => Err(format!("unknown profile `{s}` (expected desk or paper)")),
    }
}

/// Load `--config` if given (its scenario must match the checkpoint), else defaults.
fn run_config(ck: &Checkpoint, config: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let overrides = Overrides { seed, ..Overrides::default() };
    let cfg = match config {
        Some(path) => {
            let cfg = parse_config(path, &overrides)?;
            evaluation::check_compatible(ck, &cfg.scenario)?;
            cfg
        }
        None => {
            let mut cfg = ExperimentConfig::defaults_for(ck.scenario.scenario_id);
            cfg.scenario = ck.scenario.clone();
            cfg.model.sharing_mode = ck.params.sharing();
            cfg.model.typing_mode = ck.typing;
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.train.seed = s;
                cfg.provenance.insert("seed".into(), Source::Flag("--seed"));
            }
            cfg
        }
    };
    Ok(cfg)
}

fn load(path: &Path) -> Result<Checkpoint> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Write `contents` to `path`, read it back, and write the config snapshot beside it.
fn emit(path: &Path, contents: &[u8], cfg: &ExperimentConfig) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    let back = fs::read(path).with_context(|| format!("reading back {}", path.display()))?;
    ensure!(back == contents, "{} was not written intact", path.display());
    let mut snap = path.as_os_str().to_owned();
    snap.push(".config.toml");
    cfg.write_snapshot(Path::new(&snap))?;
    Ok(())
}

fn output_path(out: Option<PathBuf>, cfg: &ExperimentConfig, name: &str) -> PathBuf {
    out.unwrap_or_else(|| cfg.io.output_dir.join(name))
}

fn train(args: TrainArgs) -> Result<()> {
    let overrides = Overrides { seed: args.seed, profile: args.profile, output_dir: args.out };
    let cfg = parse_config(&args.config, &overrides)?;
    let dir = cfg.io.output_dir.clone();
    cfg.write_snapshot(&dir.join("config.toml"))?;
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
        // a second signal while stopping terminates immediately
        signal_hook::flag::register_conditional_shutdown(sig, 1, Arc::clone(&stop))?;
        signal_hook::flag::register(sig, Arc::clone(&stop))?;
    }
    let out = OutputOptions { dir: dir.clone(), checkpoint_every: cfg.io.checkpoint_every, stop: Some(stop) };
    let outcome = training::train(&cfg.scenario, &cfg.model, &cfg.train, Some(&out))?;
    let metrics = fs::read_to_string(dir.join("metrics.csv")).context("reading back metrics.csv")?;
    ensure!(
        metrics.lines().count() == outcome.history.len() + 1,
        "metrics.csv does not hold one row per iteration"
    );
    for p in &outcome.checkpoint_paths {
        ensure!(p.exists(), "missing checkpoint {}", p.display());
    }
    match outcome.history.last() {
        Some(m) => println!(
            "trained {} iterations: mean episode reward {:.4}, success rate {:.3}; outputs in {}",
            m.iteration,
            m.mean_episode_reward,
            m.success_rate,
            dir.display()
        ),
        None => println!("no iterations requested; initial checkpoint in {}", dir.display()),
    }
    Ok(())
}

fn evaluate(args: EvalArgs) -> Result<()> {
    let ck = load(&args.run.checkpoint)?;
    let cfg = run_config(&ck, args.run.config.as_deref(), args.run.seed)?;
    let opts = EvalOptions {
        n_runs: args.runs.unwrap_or(cfg.eval.runs),
        noise: args.noise.unwrap_or(cfg.eval.noise),
        seed: cfg.seed,
        sample_actions: cfg.eval.sample_actions,
    };
    let summary = evaluation::evaluate(&ck, &cfg.scenario, &opts)?;
    let path = output_path(args.run.out, &cfg, "evaluation.json");
    let text = serde_json::to_string_pretty(&summary)?;
    emit(&path, text.as_bytes(), &cfg)?;
    println!(
        "{} runs: mean reward {:.4} ± {:.4}, success rate {:.3}, mean length {:.1}",
        summary.n_runs, summary.mean_reward, summary.std_reward, summary.success_rate, summary.mean_length
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cks: Vec<Checkpoint> = args.checkpoint.iter().map(|p| load(p)).collect::<Result<_>>()?;
    let cfg = run_config(&cks[0], args.config.as_deref(), args.seed)?;
    let levels = args.levels.map_or_else(|| cfg.eval.noise_levels.clone(), |l| l.0);
    let base = EvalOptions {
        n_runs: args.runs.unwrap_or(cfg.eval.runs),
        noise: 0.0,
        seed: cfg.seed,
        sample_actions: cfg.eval.sample_actions,
    };
    let mut raws = Vec::with_capacity(cks.len());
    let mut zero_means = Vec::with_capacity(cks.len());
    for ck in &cks {
        let spec = if args.config.is_some() { cfg.scenario.clone() } else { ck.scenario.clone() };
        let raw = evaluation::raw_sweep(ck, &spec, &levels, &base)?;
        let zero = if levels.first() == Some(&0.0) {
            raw[0].iter().sum::<f64>() / raw[0].len().max(1) as f64
        } else {
            evaluation::evaluate(ck, &spec, &base)?.mean_reward
        };
        raws.push(raw);
        zero_means.push(zero);
    }
    let anchor = if cfg.eval.normalization_anchor > 0.0 {
        cfg.eval.normalization_anchor
    } else {
        zero_means.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    let path = output_path(args.out, &cfg, "sweep.csv");
    for (k, raw) in raws.iter().enumerate() {
        let result = evaluation::normalize_sweep(&levels, raw, anchor)?;
        let target = if cks.len() == 1 { path.clone() } else { indexed(&path, k) };
        emit(&target, result.to_csv().as_bytes(), &cfg)?;
        println!("{} -> {} ({} levels, anchor {anchor:.4})", args.checkpoint[k].display(), target.display(), levels.len());
    }
    Ok(())
}

/// `dir/name.ext` becomes `dir/name_k.ext`.
fn indexed(path: &Path, k: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{k}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{k}"),
    };
    path.with_file_name(name)
}

fn vector_field(args: RunArgs) -> Result<()> {
    let ck = load(&args.checkpoint)?;
    let cfg = run_config(&ck, args.config.as_deref(), args.seed)?;
    let table = evaluation::vector_field(&ck, cfg.eval.vf_min, cfg.eval.vf_max, cfg.eval.vf_resolution)?;
    ensure!(table.cells.iter().all(|c| c.f1.is_finite() && c.f2.is_finite()), "non-finite vector field");
    let path = output_path(args.out, &cfg, "vector_field.csv");
    emit(&path, table.to_csv().as_bytes(), &cfg)?;
    println!("{} cells -> {}", table.cells.len(), path.display());
    Ok(())
}

fn rollout(args: EvalArgs) -> Result<()> {
    if args.runs.is_some() {
        bail!("rollout records a single episode; --runs does not apply");
    }
    let ck = load(&args.run.checkpoint)?;
    let cfg = run_config(&ck, args.run.config.as_deref(), args.run.seed)?;
    let trace = evaluation::rollout_trace(&ck, &cfg.scenario, cfg.seed, args.noise.unwrap_or(cfg.eval.noise))?;
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf)?;
    let path = output_path(args.run.out, &cfg, "rollout.jsonl");
    emit(&path, &buf, &cfg)?;
    println!("{} records, success {} -> {}", trace.records.len(), trace.success, path.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let ck = load(path)?;
    let info = json!({
        "scenario_id": ck.scenario.scenario_id,
        "sharing_mode": ck.params.sharing(),
        "typing_mode": ck.typing,
        "iteration": ck.iteration,
        "parameters": ck.params.num_parameters(),
        "shape": ck.params.shape,
        "trainer": ck.trainer,
        "scenario": ck.scenario,
    });
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HETMARL_THREADS") {
        let n: usize = v.parse().with_context(|| format!("HETMARL_THREADS must be a positive integer, got `{v}`"))?;
        ensure!(n > 0, "HETMARL_THREADS must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::VectorField(a) => vector_field(a),
        Command::Rollout(a) => rollout(a),
        Command::InspectCheckpoint { checkpoint } => inspect(&checkpoint),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
