use rayon::prelude::*;

use super::{Env, EnvError, Observation, ScenarioSpec, StepResult, TypingMode};

/// A batch of independent environments. Env `k` of reset round `r` is seeded
/// with `base_seed + r * len + k`.
#[derive(Debug, Clone)]
pub struct VecEnv {
    spec: ScenarioSpec,
    typing: TypingMode,
    base_seed: u64,
    resets: u64,
    envs: Vec<Env>,
}

impl VecEnv {
    pub fn new(
        spec: &ScenarioSpec,
        typing: TypingMode,
        n: usize,
        base_seed: u64,
    ) -> Result<(Self, Vec<Vec<Observation>>), EnvError> {
        let mut v = Self {
            spec: spec.clone(),
            typing,
            base_seed,
            resets: 0,
            envs: Vec::with_capacity(n),
        };
        let mut obs = Vec::with_capacity(n);
        for k in 0..n {
            let (env, o) = Env::reset(spec, typing, base_seed.wrapping_add(k as u64))?;
            v.envs.push(env);
            obs.push(o);
        }
        Ok((v, obs))
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    pub fn envs_mut(&mut self) -> &mut [Env] {
        &mut self.envs
    }

    /// Reset every env with fresh seeds.
    pub fn reset_all(&mut self) -> Result<Vec<Vec<Observation>>, EnvError> {
        self.resets += 1;
        let n = self.envs.len() as u64;
        let mut obs = Vec::with_capacity(self.envs.len());
        for (k, env) in self.envs.iter_mut().enumerate() {
            let seed = self.base_seed.wrapping_add(self.resets * n + k as u64);
            let curriculum = env.curriculum_on();
            let (mut fresh, o) = Env::reset(&self.spec, self.typing, seed)?;
            fresh.set_curriculum(curriculum);
            *env = fresh;
            obs.push(o);
        }
        Ok(obs)
    }

    pub fn set_curriculum(&mut self, on: bool) {
        self.envs.iter_mut().for_each(|e| e.set_curriculum(on));
    }

    /// Step every env with its joint action. Envs are independent so they may
    /// run in parallel; results keep env order.
    pub fn step(&mut self, actions: &[Vec<Vec<f64>>]) -> Result<Vec<StepResult>, EnvError> {
        if actions.len() != self.envs.len() {
            return Err(EnvError::Action {
                expected: self.envs.len(),
                dim: self.spec.act_dim(),
                got: vec![actions.len()],
            });
        }
        self.envs
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(env, a)| env.step(a))
            .collect()
    }
}
