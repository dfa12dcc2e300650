//! Deployment-time evaluation: noise injection, reward summaries, noise
//! sweeps, Scenario A vector fields and rollout traces.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::envs::{Env, EnvError, ObsLayout, Observation, ScenarioId, ScenarioSpec};
use crate::nn::{policy_value_forward, AgentInput, GraphBatch, ModelError};
use crate::physics::{Vec2, WorldState};
use crate::training::team_inputs;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Add `U(-magnitude, magnitude)` to every entry. Zero magnitude draws nothing.
pub fn inject_noise<R: Rng + ?Sized>(obs: &[f64], magnitude: f64, rng: &mut R) -> Observation {
    if magnitude == 0.0 {
        return obs.to_vec();
    }
    obs.iter().map(|x| x + rng.random_range(-magnitude..=magnitude)).collect()
}

/// Reject checkpoints whose model cannot read `spec`'s observations.
pub fn check_compatible(ck: &Checkpoint, spec: &ScenarioSpec) -> Result<(), EvalError> {
    spec.validate()?;
    if ck.scenario.scenario_id != spec.scenario_id {
        return Err(EvalError::Config(format!(
            "checkpoint was trained on scenario {} but evaluation asks for {}",
            ck.scenario.scenario_id.label(),
            spec.scenario_id.label()
        )));
    }
    let shape = &ck.params.shape;
    let layout = ObsLayout::for_spec(spec, ck.typing);
    if shape.enc_input != layout.encoder_dim() || shape.act_dim != spec.act_dim() || shape.n_agents != spec.n_agents {
        return Err(EvalError::Config("checkpoint model shape does not match the scenario".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub n_runs: usize,
    pub noise: f64,
    pub seed: u64,
    /// Sample from the policy instead of acting with its mean.
    pub sample_actions: bool,
}

impl EvalOptions {
    pub fn new(n_runs: usize, noise: f64, seed: u64) -> Self {
        Self { n_runs, noise, seed, sample_actions: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub n_runs: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub success_rate: f64,
    pub mean_length: f64,
    pub episode_rewards: Vec<f64>,
    /// Per agent, mean norm of the applied (clamped) action over all steps.
    pub mean_abs_action: Vec<f64>,
}

/// One timestep of a rollout. Record 0 is the initial state with no actions.
/// `noisy_observations` are what the policy saw when acting from this state;
/// `actions` and `rewards` are those of the step that led into it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: u64,
    pub world: WorldState,
    pub observations: Vec<Observation>,
    pub noisy_observations: Vec<Observation>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub success: bool,
    /// Scaled sum of negative goal distances (scenario B).
    pub task_completion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutTrace {
    pub records: Vec<TraceRecord>,
    pub success: bool,
}

impl RolloutTrace {
    /// One JSON object per line, one line per record.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct Run {
    env: Env,
    obs: Vec<Observation>,
    rng: ChaCha8Rng,
    reward: f64,
    abs_action: Vec<f64>,
    success: bool,
    trace: Option<Vec<TraceRecord>>,
}

fn run_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn completion(env: &Env) -> Option<f64> {
    (env.spec().scenario_id == ScenarioId::B).then(|| env.task_completion())
}

/// Play one episode per seed in lockstep, batching the policy forward pass.
fn play(
    ck: &Checkpoint,
    spec: &ScenarioSpec,
    seeds: &[u64],
    noise: f64,
    sample: bool,
    trace: bool,
) -> Result<Vec<Run>, EvalError> {
    check_compatible(ck, spec)?;
    if !(noise >= 0.0) {
        return Err(EvalError::Config("noise magnitude must be non-negative".into()));
    }
    let layout = ObsLayout::for_spec(spec, ck.typing);
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (env, obs) = Env::reset(spec, ck.typing, seed)?;
        let trace = trace.then(|| {
            vec![TraceRecord {
                t: 0,
                world: env.world().clone(),
                observations: obs.clone(),
                noisy_observations: obs.clone(),
                actions: Vec::new(),
                rewards: Vec::new(),
                success: env.success(),
                task_completion: completion(&env),
            }]
        });
        runs.push(Run {
            success: env.success() && env.is_done(),
            env,
            obs,
            rng: run_rng(seed),
            reward: 0.0,
            abs_action: vec![0.0; spec.n_agents],
            trace,
        });
    }
    loop {
        let live: Vec<usize> = (0..runs.len()).filter(|&k| !runs[k].env.is_done()).collect();
        if live.is_empty() {
            break;
        }
        let mut inputs: Vec<Vec<AgentInput>> = Vec::with_capacity(live.len());
        let mut nbrs = Vec::with_capacity(live.len());
        for &k in &live {
            let run = &mut runs[k];
            let s: Vec<Observation> = run.obs.iter().map(|o| inject_noise(o, noise, &mut run.rng)).collect();
            inputs.push(team_inputs(&layout, &s));
            if let Some(last) = run.trace.as_mut().and_then(|tr| tr.last_mut()) {
                last.noisy_observations = s.clone();
            }
            nbrs.push(run.env.comm_graph().neighbors);
        }
        let batch = GraphBatch::build(layout.encoder_dim(), &inputs, &nbrs)?;
        let out = policy_value_forward(&ck.params, &batch)?;
        for (s, &k) in live.iter().enumerate() {
            let run = &mut runs[k];
            let actions: Vec<Vec<f64>> = out.dists[s]
                .iter()
                .map(|d| if sample { d.sample(&mut run.rng) } else { d.mean.clone() })
                .collect();
            let applied = run.env.action_forces(&actions)?;
            for (acc, f) in run.abs_action.iter_mut().zip(&applied) {
                *acc += f.norm();
            }
            let result = run.env.step(&actions)?;
            run.reward += result.rewards.iter().sum::<f64>() / result.rewards.len() as f64;
            run.success = result.info.success;
            if let Some(tr) = run.trace.as_mut() {
                tr.push(TraceRecord {
                    t: run.env.world().time,
                    world: run.env.world().clone(),
                    observations: result.observations.clone(),
                    noisy_observations: result.observations.clone(),
                    actions,
                    rewards: result.rewards.clone(),
                    success: result.info.success,
                    task_completion: completion(&run.env),
                });
            }
            run.obs = result.observations;
        }
    }
    Ok(runs)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run `n_runs` episodes; run `k` uses seed `seed + k` for both the spawn and
/// its noise stream.
pub fn evaluate(ck: &Checkpoint, spec: &ScenarioSpec, opts: &EvalOptions) -> Result<EvalSummary, EvalError> {
    let seeds: Vec<u64> = (0..opts.n_runs as u64).map(|k| opts.seed.wrapping_add(k)).collect();
    let runs = play(ck, spec, &seeds, opts.noise, opts.sample_actions, false)?;
    let rewards: Vec<f64> = runs.iter().map(|r| r.reward).collect();
    let (mean_reward, std_reward) = mean_std(&rewards);
    let n = runs.len().max(1) as f64;
    let steps: u64 = runs.iter().map(|r| r.env.world().time).sum();
    let mut abs = vec![0.0; spec.n_agents];
    for r in &runs {
        for (a, x) in abs.iter_mut().zip(&r.abs_action) {
            *a += x;
        }
    }
    if steps > 0 {
        abs.iter_mut().for_each(|a| *a /= steps as f64);
    }
    Ok(EvalSummary {
        n_runs: runs.len(),
        mean_reward,
        std_reward,
        success_rate: runs.iter().filter(|r| r.success).count() as f64 / n,
        mean_length: steps as f64 / n,
        episode_rewards: rewards,
        mean_abs_action: abs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSweepResult {
    pub levels: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub anchor: f64,
}

impl NoiseSweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("noise,mean,std\n");
        for ((l, m), d) in self.levels.iter().zip(&self.mean).zip(&self.std) {
            s.push_str(&format!("{l},{m},{d}\n"));
        }
        s
    }
}

fn check_levels(levels: &[f64]) -> Result<(), EvalError> {
    if levels.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(EvalError::Config("noise levels must be finite and non-negative".into()));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvalError::Config("noise levels must be strictly increasing".into()));
    }
    Ok(())
}

/// Raw episode rewards per level. Every level reuses the same run seeds.
pub fn raw_sweep(
    ck: &Checkpoint,
    spec: &ScenarioSpec,
    levels: &[f64],
    base: &EvalOptions,
) -> Result<Vec<Vec<f64>>, EvalError> {
    check_levels(levels)?;
    levels
        .iter()
        .map(|&noise| Ok(evaluate(ck, spec, &EvalOptions { noise, ..*base })?.episode_rewards))
        .collect()
}

/// Per level, the mean reward over `anchor` clamped to `[0, 1]` and the
/// standard deviation over `anchor`.
pub fn normalize_sweep(levels: &[f64], raw: &[Vec<f64>], anchor: f64) -> Result<NoiseSweepResult, EvalError> {
    check_levels(levels)?;
    if !(anchor > 0.0) || !anchor.is_finite() {
        return Err(EvalError::Config(format!("normalisation anchor must be positive, got {anchor}")));
    }
    let mut mean = Vec::with_capacity(levels.len());
    let mut std = Vec::with_capacity(levels.len());
    for runs in raw {
        let (m, s) = mean_std(runs);
        mean.push((m / anchor).clamp(0.0, 1.0));
        std.push(s / anchor);
    }
    Ok(NoiseSweepResult { levels: levels.to_vec(), mean, std, anchor })
}

/// Sweep `levels`, normalising by `anchor` or, when absent, by this
/// checkpoint's own noise-free mean reward.
pub fn noise_sweep(
    ck: &Checkpoint,
    spec: &ScenarioSpec,
    levels: &[f64],
    n_runs: usize,
    seed: u64,
    anchor: Option<f64>,
) -> Result<NoiseSweepResult, EvalError> {
    let raw = raw_sweep(ck, spec, levels, &EvalOptions::new(n_runs, 0.0, seed))?;
    let anchor = match anchor {
        Some(a) => a,
        None if levels.first() == Some(&0.0) => mean_std(&raw[0]).0,
        None => evaluate(ck, spec, &EvalOptions::new(n_runs, 0.0, seed))?.mean_reward,
    };
    normalize_sweep(levels, &raw, anchor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VectorFieldCell {
    pub v1: f64,
    pub v2: f64,
    pub f1: f64,
    pub f2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorFieldTable {
    pub resolution: usize,
    /// Row-major over (v1, v2).
    pub cells: Vec<VectorFieldCell>,
}

impl VectorFieldTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("v1,v2,f1,f2\n");
        for c in &self.cells {
            s.push_str(&format!("{},{},{},{}\n", c.v1, c.v2, c.f1, c.f2));
        }
        s
    }

    /// Largest deviation from `f(v1, v2) = swap(f(v2, v1))`.
    pub fn max_swap_asymmetry(&self) -> f64 {
        let r = self.resolution;
        let mut worst: f64 = 0.0;
        for i in 0..r {
            for j in 0..r {
                let a = self.cells[i * r + j];
                let b = self.cells[j * r + i];
                worst = worst.max((a.f1 - b.f2).abs()).max((a.f2 - b.f1).abs());
            }
        }
        worst
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Mean team action over a velocity grid, positions pinned at the origin.
pub fn vector_field(ck: &Checkpoint, v_min: f64, v_max: f64, resolution: usize) -> Result<VectorFieldTable, EvalError> {
    let spec = &ck.scenario;
    if spec.scenario_id != ScenarioId::A {
        return Err(EvalError::Config(format!(
            "vector fields need a scenario A checkpoint, got {}",
            spec.scenario_id.label()
        )));
    }
    if !(v_min < v_max) && resolution > 1 {
        return Err(EvalError::Config("grid bounds must satisfy min < max".into()));
    }
    let layout = ObsLayout::for_spec(spec, ck.typing);
    let vs = grid(v_min, v_max, resolution);
    let mut inputs = Vec::new();
    let mut nbrs = Vec::new();
    let mut cells = Vec::new();
    for &v1 in &vs {
        for &v2 in &vs {
            let mut world = WorldState::new(
                [v1, v2]
                    .iter()
                    .zip(&spec.masses)
                    .zip(&spec.radii)
                    .map(|((v, m), r)| crate::physics::AgentBody {
                        velocity: Vec2::new(*v, 0.0),
                        ..crate::physics::AgentBody::new(Vec2::zeros(), *m, *r, spec.max_force)
                    })
                    .collect(),
            );
            world.time = 0;
            let lm = crate::envs::Landmarks::default();
            let obs: Vec<Observation> =
                (0..2).map(|i| crate::envs::observe(&world, &lm, spec, i, ck.typing)).collect();
            inputs.push(team_inputs(&layout, &obs));
            nbrs.push(crate::envs::comm_graph(&world, spec.comm_range).neighbors);
            cells.push(VectorFieldCell { v1, v2, f1: 0.0, f2: 0.0 });
        }
    }
    let batch = GraphBatch::build(layout.encoder_dim(), &inputs, &nbrs)?;
    let out = policy_value_forward(&ck.params, &batch)?;
    for (c, d) in cells.iter_mut().zip(&out.dists) {
        c.f1 = d[0].mean[0];
        c.f2 = d[1].mean[0];
    }
    Ok(VectorFieldTable { resolution, cells })
}

/// Full record of one deterministic (mean-action) episode.
pub fn rollout_trace(ck: &Checkpoint, spec: &ScenarioSpec, seed: u64, noise: f64) -> Result<RolloutTrace, EvalError> {
    let mut runs = play(ck, spec, &[seed], noise, false, true)?;
    let run = runs.pop().expect("one run");
    Ok(RolloutTrace { records: run.trace.unwrap_or_default(), success: run.success })
}

#[cfg(test)]
mod tests;
