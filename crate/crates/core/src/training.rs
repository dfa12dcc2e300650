//! Multi-agent PPO: rollout collection, returns and GAE, the clipped and
//! KL-regularised update, and the outer training loop.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, Checkpoint, CheckpointError, TrainerState};
use crate::envs::{Env, EnvError, ObsLayout, Observation, ScenarioId, ScenarioSpec, TypingMode};
use crate::evaluation::inject_noise;
use crate::nn::{
    clip_global_norm, dist, forward, ActionDistribution, Adam, AgentInput, Aggregation, GradError, Graph, GraphBatch,
    Mat, ModelError, ModelParams, ModelShape, SharingMode, Var,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("iteration {iteration}: {source}")]
    Numeric { iteration: usize, source: GradError },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

/// Architecture and behavioural-typing choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sharing_mode: SharingMode,
    pub typing_mode: TypingMode,
    pub width: usize,
    pub encoder_depth: usize,
    pub aggregation: Aggregation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sharing_mode: SharingMode::PerAgent,
            typing_mode: TypingMode::None,
            width: 64,
            encoder_depth: 2,
            aggregation: Aggregation::Sum,
        }
    }
}

impl ModelConfig {
    pub fn shape(&self, spec: &ScenarioSpec) -> ModelShape {
        ModelShape {
            n_agents: spec.n_agents,
            enc_input: ObsLayout::for_spec(spec, self.typing_mode).encoder_dim(),
            act_dim: spec.act_dim(),
            width: self.width,
            encoder_depth: self.encoder_depth,
            aggregation: self.aggregation,
            sharing: self.sharing_mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: Profile,
    pub iterations: usize,
    /// Environment steps (team transitions) per iteration.
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub sgd_iters: usize,
    pub lr: f64,
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coeff: f64,
    pub kl_coeff: f64,
    pub kl_target: f64,
    pub value_coeff: f64,
    pub grad_clip: f64,
    pub n_env_workers: usize,
    pub envs_per_worker: usize,
    /// When non-zero, each iteration collects exactly this many complete
    /// episodes and `batch_size` is ignored.
    pub episodes_per_iteration: usize,
    pub seed: u64,
    /// Half-width of the uniform noise added to training observations.
    pub obs_noise_train: f64,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            iterations: 100,
            batch_size: 4096,
            minibatch_size: 512,
            sgd_iters: 8,
            lr: 3e-4,
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.9,
            entropy_coeff: 0.0,
            kl_coeff: 0.01,
            kl_target: 0.01,
            value_coeff: 0.5,
            grad_clip: 0.5,
            n_env_workers: 1,
            envs_per_worker: 16,
            episodes_per_iteration: 0,
            seed: 0,
            obs_noise_train: 0.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            iterations: 1000,
            batch_size: 60000,
            minibatch_size: 4096,
            sgd_iters: 40,
            lr: 5e-5,
            n_env_workers: 5,
            envs_per_worker: 50,
            ..Self::desk()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn n_envs(&self) -> usize {
        self.n_env_workers * self.envs_per_worker
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be positive");
        }
        if self.minibatch_size == 0 || self.minibatch_size > self.batch_size {
            return bad("minibatch_size must be in 1..=batch_size");
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) || !(self.kl_target > 0.0) {
            return bad("lr, grad_clip and kl_target must be positive");
        }
        if self.kl_coeff < 0.0 || self.entropy_coeff < 0.0 || self.value_coeff < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        if self.n_envs() == 0 {
            return bad("at least one environment is required");
        }
        if !(self.obs_noise_train >= 0.0) {
            return bad("obs_noise_train must be non-negative");
        }
        Ok(())
    }
}

/// Per-episode bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeStats {
    pub reward: f64,
    pub length: u64,
    pub success: bool,
    pub positional_return: f64,
    pub positional_max: f64,
}

/// Team transitions indexed `[sample][agent]`, each environment's steps
/// contiguous and in time order.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub n_agents: usize,
    pub act_dim: usize,
    /// Observations exactly as the policy saw them.
    pub observations: Vec<Vec<Observation>>,
    pub inputs: Vec<Vec<AgentInput>>,
    pub neighbors: Vec<Vec<Vec<usize>>>,
    pub actions: Vec<Vec<Vec<f64>>>,
    pub log_probs: Vec<Vec<f64>>,
    pub dists: Vec<Vec<ActionDistribution>>,
    pub rewards: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    /// Episode ended at this step (terminal or time limit).
    pub dones: Vec<bool>,
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
    /// Completed episodes only.
    pub episodes: Vec<EpisodeStats>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// `v_t = sum_k gamma^k r_{t+k}` restarted after every done.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), dones.len());
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            acc = 0.0;
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Generalised advantage estimation over one agent's sequence.
///
/// `values[t]` is V(s_t). A done at `t` makes `s_{t+1}` terminal. `last_value`
/// bootstraps the step after the final element when it is not done. Returns
/// `(advantages, advantages + values)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n);
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_value = if dones[t] {
            0.0
        } else if t + 1 < n {
            values[t + 1]
        } else {
            last_value
        };
        if dones[t] {
            acc = 0.0;
        }
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Rescale to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len();
    if n < 2 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n as f64;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
    adv.iter_mut().for_each(|a| *a = (*a - mean) * scale);
}

/// Model inputs for one team.
pub fn team_inputs(layout: &ObsLayout, obs: &[Observation]) -> Vec<AgentInput> {
    obs.iter().map(|o| layout.agent_input(o)).collect()
}

struct StepRecord {
    obs: Vec<Observation>,
    inputs: Vec<AgentInput>,
    neighbors: Vec<Vec<usize>>,
    actions: Vec<Vec<f64>>,
    log_probs: Vec<f64>,
    dists: Vec<ActionDistribution>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    done: bool,
}

struct Lane {
    env: Env,
    obs: Vec<Observation>,
    records: Vec<StepRecord>,
    /// (index one past the segment end, bootstrap value per agent)
    segments: Vec<(usize, Option<Vec<f64>>)>,
    episode: EpisodeStats,
    active: bool,
}

struct PendingBootstrap {
    lane: usize,
    segment: usize,
    inputs: Vec<AgentInput>,
    neighbors: Vec<Vec<usize>>,
}

fn fresh_episode() -> EpisodeStats {
    EpisodeStats { reward: 0.0, length: 0, success: false, positional_return: 0.0, positional_max: 0.0 }
}

fn noisy(obs: &[Observation], magnitude: f64, rng: &mut ChaCha8Rng) -> Vec<Observation> {
    obs.iter().map(|o| inject_noise(o, magnitude, rng)).collect()
}

/// Run the current policy on a fresh set of environments and return a batch
/// with advantages and return targets filled in.
pub fn collect_rollouts(
    params: &ModelParams,
    spec: &ScenarioSpec,
    typing: TypingMode,
    config: &TrainConfig,
    curriculum_on: bool,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBatch, TrainError> {
    config.validate()?;
    if spec.horizon == 0 {
        return Err(TrainError::Config("training needs a positive horizon".into()));
    }
    let layout = ObsLayout::for_spec(spec, typing);
    let n_envs = config.n_envs();
    let episode_mode = config.episodes_per_iteration > 0;
    let (n_lanes, steps_per_lane) = if episode_mode {
        (n_envs.min(config.episodes_per_iteration), usize::MAX)
    } else {
        (n_envs, config.batch_size.div_ceil(n_envs))
    };
    let mut started = 0usize;
    let mut lanes = Vec::with_capacity(n_lanes);
    for _ in 0..n_lanes {
        let (mut env, obs) = Env::reset(spec, typing, rng.next_u64())?;
        env.set_curriculum(curriculum_on);
        started += 1;
        lanes.push(Lane {
            env,
            obs,
            records: Vec::new(),
            segments: Vec::new(),
            episode: fresh_episode(),
            active: true,
        });
    }
    let mut episodes = Vec::new();
    let noise = config.obs_noise_train;

    while lanes.iter().any(|l| l.active) {
        let active: Vec<usize> = (0..lanes.len()).filter(|&k| lanes[k].active).collect();
        let seen: Vec<Vec<Observation>> = active.iter().map(|&k| noisy(&lanes[k].obs, noise, rng)).collect();
        let inputs: Vec<Vec<AgentInput>> = seen.iter().map(|o| team_inputs(&layout, o)).collect();
        let neighbors: Vec<Vec<Vec<usize>>> = active.iter().map(|&k| lanes[k].env.comm_graph().neighbors).collect();
        let batch = GraphBatch::build(layout.encoder_dim(), &inputs, &neighbors)?;
        let out = crate::nn::policy_value_forward(params, &batch)?;

        let mut pending = Vec::new();
        for (s, &k) in active.iter().enumerate() {
            let dists = out.dists[s].clone();
            let actions: Vec<Vec<f64>> = dists.iter().map(|d| d.sample(rng)).collect();
            let log_probs = dists.iter().zip(&actions).map(|(d, a)| d.log_prob(a)).collect();
            let lane = &mut lanes[k];
            let positional_max = lane.env.max_positional_return();
            let result = lane.env.step(&actions)?;
            let team_reward = result.rewards.iter().sum::<f64>() / result.rewards.len() as f64;
            lane.episode.reward += team_reward;
            lane.episode.length += 1;
            lane.episode.positional_return += result.info.positional_reward;
            lane.episode.positional_max = positional_max;
            lane.records.push(StepRecord {
                obs: seen[s].clone(),
                inputs: inputs[s].clone(),
                neighbors: neighbors[s].clone(),
                actions,
                log_probs,
                dists,
                rewards: result.rewards.clone(),
                values: out.values[s].clone(),
                done: result.done,
            });
            let full = lane.records.len() >= steps_per_lane;
            if result.done {
                let mut ep = std::mem::replace(&mut lane.episode, fresh_episode());
                ep.success = result.info.success;
                episodes.push(ep);
                if result.terminated {
                    lane.segments.push((lane.records.len(), None));
                } else {
                    lane.segments.push((lane.records.len(), Some(Vec::new())));
                    let final_seen = noisy(&result.observations, noise, rng);
                    pending.push(PendingBootstrap {
                        lane: k,
                        segment: lane.segments.len() - 1,
                        inputs: team_inputs(&layout, &final_seen),
                        neighbors: lane.env.comm_graph().neighbors,
                    });
                }
                let more = if episode_mode { started < config.episodes_per_iteration } else { !full };
                if more {
                    let (mut env, obs) = Env::reset(spec, typing, rng.next_u64())?;
                    env.set_curriculum(curriculum_on);
                    started += 1;
                    lane.env = env;
                    lane.obs = obs;
                } else {
                    lane.active = false;
                }
            } else {
                lane.obs = result.observations;
                if full {
                    // cut mid-episode: bootstrap from the current state
                    lane.active = false;
                    lane.segments.push((lane.records.len(), Some(Vec::new())));
                    let seen_now = noisy(&lane.obs, noise, rng);
                    pending.push(PendingBootstrap {
                        lane: k,
                        segment: lane.segments.len() - 1,
                        inputs: team_inputs(&layout, &seen_now),
                        neighbors: lane.env.comm_graph().neighbors,
                    });
                }
            }
        }
        if !pending.is_empty() {
            let inputs: Vec<Vec<AgentInput>> = pending.iter().map(|p| p.inputs.clone()).collect();
            let nbrs: Vec<Vec<Vec<usize>>> = pending.iter().map(|p| p.neighbors.clone()).collect();
            let b = GraphBatch::build(layout.encoder_dim(), &inputs, &nbrs)?;
            let v = crate::nn::policy_value_forward(params, &b)?;
            for (p, values) in pending.iter().zip(v.values) {
                lanes[p.lane].segments[p.segment].1 = Some(values);
            }
        }
    }

    let mut batch = RolloutBatch { n_agents: spec.n_agents, act_dim: spec.act_dim(), episodes, ..Default::default() };
    for lane in lanes {
        let mut start = 0;
        for (end, bootstrap) in &lane.segments {
            let seg = &lane.records[start..*end];
            let mut adv = vec![vec![0.0; spec.n_agents]; seg.len()];
            let mut ret = adv.clone();
            for i in 0..spec.n_agents {
                let r: Vec<f64> = seg.iter().map(|s| s.rewards[i]).collect();
                let v: Vec<f64> = seg.iter().map(|s| s.values[i]).collect();
                let (last, terminal) = match bootstrap {
                    Some(b) => (b[i], false),
                    None => (0.0, true),
                };
                let mut d = vec![false; seg.len()];
                d[seg.len() - 1] = terminal;
                let (a, rt) = gae(&r, &v, &d, last, config.gamma, config.gae_lambda);
                for t in 0..seg.len() {
                    adv[t][i] = a[t];
                    ret[t][i] = rt[t];
                }
            }
            batch.advantages.extend(adv);
            batch.returns.extend(ret);
            start = *end;
        }
        for rec in lane.records {
            batch.observations.push(rec.obs);
            batch.inputs.push(rec.inputs);
            batch.neighbors.push(rec.neighbors);
            batch.actions.push(rec.actions);
            batch.log_probs.push(rec.log_probs);
            batch.dists.push(rec.dists);
            batch.rewards.push(rec.rewards);
            batch.values.push(rec.values);
            batch.dones.push(rec.done);
        }
    }
    Ok(batch)
}

/// Tensors for one minibatch, rows agent-major to match [`GraphBatch`].
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub graph: GraphBatch,
    pub actions: Mat,
    pub old_log_probs: Mat,
    pub old_mean: Mat,
    pub old_log_std: Mat,
    pub advantages: Mat,
    pub returns: Mat,
}

impl Minibatch {
    /// `advantages` is the (already normalised) advantage table of the batch.
    pub fn gather(
        batch: &RolloutBatch,
        advantages: &[Vec<f64>],
        samples: &[usize],
        enc_dim: usize,
    ) -> Result<Self, ModelError> {
        let inputs: Vec<Vec<AgentInput>> = samples.iter().map(|&s| batch.inputs[s].clone()).collect();
        let nbrs: Vec<Vec<Vec<usize>>> = samples.iter().map(|&s| batch.neighbors[s].clone()).collect();
        let graph = GraphBatch::build(enc_dim, &inputs, &nbrs)?;
        let (n, m, d) = (batch.n_agents, samples.len(), batch.act_dim);
        let mut actions = Array2::zeros((n * m, d));
        let mut old_mean = Array2::zeros((n * m, d));
        let mut old_log_std = Array2::zeros((n * m, d));
        let mut old_log_probs = Array2::zeros((n * m, 1));
        let mut adv = Array2::zeros((n * m, 1));
        let mut returns = Array2::zeros((n * m, 1));
        for i in 0..n {
            for (k, &s) in samples.iter().enumerate() {
                let r = i * m + k;
                for c in 0..d {
                    actions[[r, c]] = batch.actions[s][i][c];
                    old_mean[[r, c]] = batch.dists[s][i].mean[c];
                    old_log_std[[r, c]] = batch.dists[s][i].log_std[c];
                }
                old_log_probs[[r, 0]] = batch.log_probs[s][i];
                adv[[r, 0]] = advantages[s][i];
                returns[[r, 0]] = batch.returns[s][i];
            }
        }
        Ok(Self { graph, actions, old_log_probs, old_mean, old_log_std, advantages: adv, returns })
    }
}

/// Graph nodes of the PPO objective.
#[derive(Debug, Clone, Copy)]
pub struct PpoLossVars {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub kl: Var,
    pub entropy: Var,
    pub ratio: Var,
}

/// `-min(rho A, clip(rho) A) + c_v (V - R)^2 + c_kl KL(old || new) - c_e H`,
/// each averaged over rows.
pub fn ppo_loss(
    g: &mut Graph,
    params: &ModelParams,
    vars: &[crate::nn::NetVars],
    mb: &Minibatch,
    kl_coeff: f64,
    config: &TrainConfig,
) -> Result<PpoLossVars, ModelError> {
    let f = forward(g, params, vars, &mb.graph)?;
    let act = g.constant(mb.actions.clone());
    let lp = dist::log_prob(g, f.mean, f.log_std, act);
    let old_lp = g.constant(mb.old_log_probs.clone());
    let diff = g.sub(lp, old_lp);
    let ratio = g.exp(diff);
    let adv = g.constant(mb.advantages.clone());
    let s1 = g.mul(ratio, adv);
    let eps = config.clip_epsilon;
    let clipped = g.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let s2 = g.mul(clipped, adv);
    let surr = g.minimum(s1, s2);
    let surr = g.mean(surr);
    let policy = g.neg(surr);

    let ret = g.constant(mb.returns.clone());
    let verr = g.sub(f.value, ret);
    let verr = g.square(verr);
    let value = g.mean(verr);

    let om = g.constant(mb.old_mean.clone());
    let ols = g.constant(mb.old_log_std.clone());
    let kl = dist::kl_divergence(g, om, ols, f.mean, f.log_std);
    let kl = g.mean(kl);
    let ent = dist::entropy(g, f.log_std);
    let entropy = g.mean(ent);

    let vterm = g.scale(value, config.value_coeff);
    let kterm = g.scale(kl, kl_coeff);
    let eterm = g.scale(entropy, -config.entropy_coeff);
    let t = g.add(policy, vterm);
    let t = g.add(t, kterm);
    let total = g.add(t, eterm);
    Ok(PpoLossVars { total, policy, value, kl, entropy, ratio })
}

/// Averages over the minibatches of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_kl: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

/// Adaptive KL penalty: doubled above twice the target, halved below half.
pub fn adapt_kl_coeff(kl_coeff: f64, mean_kl: f64, kl_target: f64) -> f64 {
    if mean_kl > 2.0 * kl_target {
        kl_coeff * 2.0
    } else if mean_kl < 0.5 * kl_target {
        kl_coeff * 0.5
    } else {
        kl_coeff
    }
}

/// `sgd_iters` epochs of shuffled minibatch steps. `kl_coeff` is adapted in
/// place from the mean KL of the last epoch.
pub fn ppo_update(
    batch: &RolloutBatch,
    params: &mut ModelParams,
    optimizer: &mut Adam,
    kl_coeff: &mut f64,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, PpoError> {
    let m = batch.len();
    if m == 0 || config.sgd_iters == 0 {
        return Ok(UpdateStats::default());
    }
    let mut flat: Vec<f64> = batch.advantages.iter().flatten().copied().collect();
    normalize_advantages(&mut flat);
    let n = batch.n_agents;
    let advantages: Vec<Vec<f64>> = flat.chunks(n).map(<[f64]>::to_vec).collect();
    let enc_dim = params.shape.enc_input;
    let mb_size = config.minibatch_size.min(m).max(1);

    let mut order: Vec<usize> = (0..m).collect();
    let mut totals = UpdateStats::default();
    let mut count = 0usize;
    let mut last_epoch_kl = (0.0, 0usize);
    for epoch in 0..config.sgd_iters {
        order.shuffle(rng);
        for chunk in order.chunks(mb_size) {
            let mb = Minibatch::gather(batch, &advantages, chunk, enc_dim)?;
            let mut g = Graph::new();
            let vars = params.register(&mut g);
            let loss = ppo_loss(&mut g, params, &vars, &mb, *kl_coeff, config)?;
            let mut grads = g.backward(loss.total).map_err(PpoError::Numeric)?;
            let norm = clip_global_norm(&mut grads, config.grad_clip);
            if !norm.is_finite() {
                return Err(PpoError::Numeric(GradError::NonFinite("gradient norm")));
            }
            optimizer.step(params, &grads);
            let kl = g.scalar(loss.kl);
            totals.policy_loss += g.scalar(loss.policy);
            totals.value_loss += g.scalar(loss.value);
            totals.mean_kl += kl;
            totals.entropy += g.scalar(loss.entropy);
            totals.grad_norm += norm;
            count += 1;
            if epoch + 1 == config.sgd_iters {
                last_epoch_kl.0 += kl;
                last_epoch_kl.1 += 1;
            }
        }
    }
    let k = count as f64;
    let stats = UpdateStats {
        policy_loss: totals.policy_loss / k,
        value_loss: totals.value_loss / k,
        mean_kl: totals.mean_kl / k,
        entropy: totals.entropy / k,
        grad_norm: totals.grad_norm / k,
    };
    *kl_coeff = adapt_kl_coeff(*kl_coeff, last_epoch_kl.0 / last_epoch_kl.1 as f64, config.kl_target);
    Ok(stats)
}

#[derive(Debug, Error)]
pub enum PpoError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite value in PPO update: {0}")]
    Numeric(GradError),
}

/// One row of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainMetrics {
    pub iteration: usize,
    pub episodes: usize,
    pub mean_episode_reward: f64,
    pub success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_kl: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

pub const METRICS_HEADER: &str =
    "iteration,episodes,mean_episode_reward,success_rate,policy_loss,value_loss,mean_kl,entropy,grad_norm,wall_time_s";

impl TrainMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:.3}",
            self.iteration,
            self.episodes,
            self.mean_episode_reward,
            self.success_rate,
            self.policy_loss,
            self.value_loss,
            self.mean_kl,
            self.entropy,
            self.grad_norm,
            self.wall_time_s
        )
    }
}

/// Batch-level latch for the scenario B recess-collision curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub on: bool,
    pub ema: Option<f64>,
}

impl Curriculum {
    /// Feed the batch mean of positional return over its straight-line maximum.
    pub fn update(&mut self, ratio: f64, fraction: f64, smoothing: f64) -> bool {
        let ema = match self.ema {
            Some(e) => smoothing * e + (1.0 - smoothing) * ratio,
            None => ratio,
        };
        self.ema = Some(ema);
        if ema >= fraction {
            self.on = true;
        }
        self.on
    }
}

/// Where a run writes its metrics and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    pub dir: PathBuf,
    pub checkpoint_every: usize,
    /// When raised, training checkpoints after the current iteration and returns.
    pub stop: Option<Arc<AtomicBool>>,
}

/// Stateful driver of the collect / update loop.
pub struct Trainer {
    spec: ScenarioSpec,
    model: ModelConfig,
    config: TrainConfig,
    params: ModelParams,
    optimizer: Adam,
    kl_coeff: f64,
    curriculum: Curriculum,
    rng: ChaCha8Rng,
    iteration: usize,
    started: Instant,
}

impl Trainer {
    pub fn new(spec: &ScenarioSpec, model: &ModelConfig, config: &TrainConfig) -> Result<Self, TrainError> {
        spec.validate()?;
        config.validate()?;
        if spec.horizon == 0 {
            return Err(TrainError::Config("training needs a positive horizon".into()));
        }
        if model.width == 0 || model.encoder_depth == 0 {
            return Err(TrainError::Config("width and encoder_depth must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(model.shape(spec), &mut rng);
        let optimizer = Adam::new(&params, config.lr);
        Ok(Self {
            spec: spec.clone(),
            model: model.clone(),
            config: config.clone(),
            params,
            optimizer,
            kl_coeff: config.kl_coeff,
            curriculum: Curriculum { on: false, ema: None },
            rng,
            iteration: 0,
            started: Instant::now(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn kl_coeff(&self) -> f64 {
        self.kl_coeff
    }

    pub fn curriculum(&self) -> Curriculum {
        self.curriculum
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            scenario: self.spec.clone(),
            typing: self.model.typing_mode,
            params: self.params.clone(),
            iteration: self.iteration as u64,
            rng: self.rng.clone(),
            trainer: TrainerState {
                kl_coeff: self.kl_coeff,
                curriculum_on: self.curriculum.on,
                curriculum_ema: self.curriculum.ema,
            },
        }
    }

    /// Collect one batch, update, and advance the curriculum.
    pub fn step(&mut self) -> Result<(TrainMetrics, RolloutBatch), TrainError> {
        let iteration = self.iteration + 1;
        let batch = collect_rollouts(
            &self.params,
            &self.spec,
            self.model.typing_mode,
            &self.config,
            self.curriculum.on,
            &mut self.rng,
        )?;
        let stats = ppo_update(&batch, &mut self.params, &mut self.optimizer, &mut self.kl_coeff, &self.config, &mut self.rng)
            .map_err(|e| match e {
                PpoError::Model(m) => TrainError::Model(m),
                PpoError::Numeric(source) => TrainError::Numeric { iteration, source },
            })?;
        if self.spec.scenario_id == ScenarioId::B && !batch.episodes.is_empty() {
            let ratio = batch
                .episodes
                .iter()
                .map(|e| if e.positional_max > 0.0 { e.positional_return / e.positional_max } else { 0.0 })
                .sum::<f64>()
                / batch.episodes.len() as f64;
            self.curriculum
                .update(ratio, self.spec.curriculum_fraction, self.spec.curriculum_smoothing);
        }
        self.iteration = iteration;
        let n_ep = batch.episodes.len();
        let (mean_reward, success) = if n_ep == 0 {
            (0.0, 0.0)
        } else {
            (
                batch.episodes.iter().map(|e| e.reward).sum::<f64>() / n_ep as f64,
                batch.episodes.iter().filter(|e| e.success).count() as f64 / n_ep as f64,
            )
        };
        let metrics = TrainMetrics {
            iteration,
            episodes: n_ep,
            mean_episode_reward: mean_reward,
            success_rate: success,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            mean_kl: stats.mean_kl,
            entropy: stats.entropy,
            grad_norm: stats.grad_norm,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        Ok((metrics, batch))
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<TrainMetrics>,
    pub checkpoint_paths: Vec<PathBuf>,
}

pub fn checkpoint_name(iteration: u64) -> String {
    format!("ck_{iteration:06}.bin")
}

fn save_checkpoint(dir: &Path, ck: &Checkpoint) -> Result<PathBuf, TrainError> {
    let path = dir.join(checkpoint_name(ck.iteration));
    checkpoint::save(&path, ck)?;
    let latest = dir.join("latest");
    fs::write(&latest, format!("{}\n", checkpoint_name(ck.iteration))).map_err(io_err(&latest))?;
    Ok(path)
}

/// Run `config.iterations` iterations. With `output`, writes `metrics.csv`,
/// an initial checkpoint, one every `checkpoint_every` iterations and a final one.
pub fn train(
    spec: &ScenarioSpec,
    model: &ModelConfig,
    config: &TrainConfig,
    output: Option<&OutputOptions>,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(spec, model, config)?;
    let mut paths = Vec::new();
    let mut metrics_file = None;
    if let Some(out) = output {
        fs::create_dir_all(&out.dir).map_err(io_err(&out.dir))?;
        paths.push(save_checkpoint(&out.dir, &trainer.checkpoint())?);
        let mpath = out.dir.join("metrics.csv");
        let mut f = BufWriter::new(File::create(&mpath).map_err(io_err(&mpath))?);
        writeln!(f, "{METRICS_HEADER}").map_err(io_err(&mpath))?;
        f.flush().map_err(io_err(&mpath))?;
        metrics_file = Some((f, mpath));
    }
    let mut history = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let (m, _) = trainer.step()?;
        if let (Some(out), Some((f, mpath))) = (output, metrics_file.as_mut()) {
            writeln!(f, "{}", m.csv_row()).map_err(io_err(mpath))?;
            f.flush().map_err(io_err(mpath))?;
            let stopping = out.stop.as_ref().is_some_and(|f| f.load(Ordering::Relaxed));
            let last = m.iteration == config.iterations || stopping;
            if last || (out.checkpoint_every > 0 && m.iteration % out.checkpoint_every == 0) {
                paths.push(save_checkpoint(&out.dir, &trainer.checkpoint())?);
            }
        }
        history.push(m);
        if output.and_then(|o| o.stop.as_ref()).is_some_and(|f| f.load(Ordering::Relaxed)) {
            break;
        }
    }
    Ok(TrainOutcome { checkpoint: trainer.checkpoint(), history, checkpoint_paths: paths })
}
