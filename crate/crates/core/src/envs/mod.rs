//! Multi-agent scenarios on top of [`crate::physics`].
//!
//! Every scenario here is cooperative with a single team reward: the scalar
//! returned for each agent at a step is the same.

mod geometry;
mod rewards;
mod spec;
mod vec_env;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use geometry::{corridor_walls, passage_walls, Landmarks};
pub use rewards::{
    link_pose, orientation_error, reward_passage, reward_scenario_a, reward_scenario_b, PassagePhase, ScenarioBRewardParams,
};
pub use spec::{ScenarioId, ScenarioSpec, TypingMode};
pub use vec_env::VecEnv;

use crate::nn::AgentInput;
use crate::physics::{self, AgentBody, PhysicsError, RigidLink, ShapeTag, Vec2, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("scenario configuration: {0}")]
    Config(String),
    #[error("environment is done; reset before stepping")]
    Done,
    #[error("expected {expected} actions of dim {dim}, got {got:?}")]
    Action { expected: usize, dim: usize, got: Vec<usize> },
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

pub type Observation = Vec<f64>;

/// Which observation entries carry absolute position and velocity (used only
/// for edge features) and which feed the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsLayout {
    pub len: usize,
    pub position: [Option<usize>; 2],
    pub velocity: [Option<usize>; 2],
    pub encoder: Vec<usize>,
}

impl ObsLayout {
    pub fn for_spec(spec: &ScenarioSpec, typing: TypingMode) -> Self {
        let (base, position, velocity) = match spec.scenario_id {
            // (p, v)
            ScenarioId::A => (2, [Some(0), None], [Some(1), None]),
            // (p, v, goal - p)
            ScenarioId::B => (6, [Some(0), Some(1)], [Some(2), Some(3)]),
            // (p, v, big_gap - p, small_gap - p, goal - p)
            ScenarioId::PassageSizes => (10, [Some(0), Some(1)], [Some(2), Some(3)]),
            // (p, v, gap - p, goal - p, cos 2θ_goal, sin 2θ_goal)
            ScenarioId::PassageAsym => (10, [Some(0), Some(1)], [Some(2), Some(3)]),
        };
        let len = base + usize::from(typing == TypingMode::ExplicitIndex);
        let absolute: Vec<usize> = position.iter().flatten().copied().collect();
        let encoder = (0..len).filter(|i| !absolute.contains(i)).collect();
        Self { len, position, velocity, encoder }
    }

    pub fn encoder_dim(&self) -> usize {
        self.encoder.len()
    }

    fn read(obs: &[f64], slots: &[Option<usize>; 2]) -> Vec2 {
        Vec2::new(slots[0].map_or(0.0, |i| obs[i]), slots[1].map_or(0.0, |i| obs[i]))
    }

    pub fn agent_input(&self, obs: &[f64]) -> AgentInput {
        AgentInput {
            features: self.encoder.iter().map(|&i| obs[i]).collect(),
            position: Self::read(obs, &self.position),
            velocity: Self::read(obs, &self.velocity),
        }
    }
}

/// Undirected communication graph; `neighbors[i]` never contains `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    pub neighbors: Vec<Vec<usize>>,
}

/// Edge between `i` and `j` iff their distance is at most `range`.
pub fn comm_graph(world: &WorldState, range: f64) -> CommGraph {
    let n = world.agents.len();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (world.agents[i].position - world.agents[j].position).norm();
            if d <= range {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    for list in neighbors.iter_mut() {
        list.sort_unstable();
    }
    CommGraph { neighbors }
}

/// Observation of `agent`. The explicit index, when enabled, is scaled to [0, 1].
pub fn observe(
    world: &WorldState,
    landmarks: &Landmarks,
    spec: &ScenarioSpec,
    agent: usize,
    typing: TypingMode,
) -> Observation {
    let body = &world.agents[agent];
    let (p, v) = (body.position, body.velocity);
    let mut obs = match spec.scenario_id {
        ScenarioId::A => vec![p.x, v.x],
        ScenarioId::B => {
            let g = landmarks.goals[agent] - p;
            vec![p.x, p.y, v.x, v.y, g.x, g.y]
        }
        ScenarioId::PassageSizes => {
            let big = landmarks.gaps[0] - p;
            let small = landmarks.gaps[1] - p;
            let goal = landmarks.goal_center - p;
            vec![p.x, p.y, v.x, v.y, big.x, big.y, small.x, small.y, goal.x, goal.y]
        }
        ScenarioId::PassageAsym => {
            let gap = landmarks.gaps[0] - p;
            let goal = landmarks.goal_center - p;
            let a = 2.0 * landmarks.goal_angle;
            vec![p.x, p.y, v.x, v.y, gap.x, gap.y, goal.x, goal.y, a.cos(), a.sin()]
        }
    };
    if typing == TypingMode::ExplicitIndex {
        let n = world.agents.len();
        obs.push(if n > 1 { agent as f64 / (n - 1) as f64 } else { 0.0 });
    }
    obs
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepInfo {
    pub success: bool,
    /// Penetrating contacts this step (agent-agent pairs counted once).
    pub collisions: usize,
    pub goal_distance: Vec<f64>,
    /// Shared positional term of this step (scenario B; zero elsewhere).
    pub positional_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    /// True when the episode ended by reaching a terminal state rather than the
    /// time limit; bootstrapping must use zero in that case.
    pub terminated: bool,
    pub info: StepInfo,
}

/// One live episode of a scenario.
#[derive(Debug, Clone)]
pub struct Env {
    spec: ScenarioSpec,
    typing: TypingMode,
    world: WorldState,
    landmarks: Landmarks,
    done: bool,
    curriculum_on: bool,
    phase: PassagePhase,
    initial_goal_distance: Vec<f64>,
}

impl Env {
    pub fn reset(spec: &ScenarioSpec, typing: TypingMode, seed: u64) -> Result<(Self, Vec<Observation>), EnvError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (world, landmarks) = spawn(spec, &mut rng)?;
        let mut env = Self {
            spec: spec.clone(),
            typing,
            world,
            landmarks,
            done: spec.horizon == 0,
            curriculum_on: false,
            phase: PassagePhase::Approach,
            initial_goal_distance: Vec::new(),
        };
        env.phase = env.current_phase();
        env.initial_goal_distance = env.goal_distances();
        let obs = env.observe_all();
        Ok((env, obs))
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn typing(&self) -> TypingMode {
        self.typing
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn landmarks(&self) -> &Landmarks {
        &self.landmarks
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn curriculum_on(&self) -> bool {
        self.curriculum_on
    }

    pub fn set_curriculum(&mut self, on: bool) {
        self.curriculum_on = on;
    }

    pub fn layout(&self) -> ObsLayout {
        ObsLayout::for_spec(&self.spec, self.typing)
    }

    pub fn observe_all(&self) -> Vec<Observation> {
        (0..self.world.agents.len())
            .map(|i| observe(&self.world, &self.landmarks, &self.spec, i, self.typing))
            .collect()
    }

    pub fn comm_graph(&self) -> CommGraph {
        comm_graph(&self.world, self.spec.comm_range)
    }

    /// Straight-line upper bound on the episode's positional return (scenario B).
    pub fn max_positional_return(&self) -> f64 {
        self.spec.pos_scale * self.initial_goal_distance.iter().sum::<f64>()
    }

    pub fn goal_distances(&self) -> Vec<f64> {
        match self.spec.scenario_id {
            ScenarioId::A => Vec::new(),
            ScenarioId::B => self
                .world
                .agents
                .iter()
                .zip(&self.landmarks.goals)
                .map(|(a, g)| (a.position - g).norm())
                .collect(),
            ScenarioId::PassageSizes | ScenarioId::PassageAsym => {
                let (centre, _) = link_pose(&self.world);
                vec![(centre - self.landmarks.goal_center).norm()]
            }
        }
    }

    /// Scaled sum of negative goal distances, 0 when every robot is on its goal
    /// and -1 at spawn.
    pub fn task_completion(&self) -> f64 {
        let d0: f64 = self.initial_goal_distance.iter().sum();
        if d0 <= 0.0 {
            return 0.0;
        }
        -self.goal_distances().iter().sum::<f64>() / d0
    }

    fn current_phase(&self) -> PassagePhase {
        if self.spec.scenario_id.is_passage() && link_pose(&self.world).0.y > 0.0 {
            PassagePhase::Depart
        } else {
            PassagePhase::Approach
        }
    }

    /// Scenario success predicate on the current state.
    pub fn success(&self) -> bool {
        match self.spec.scenario_id {
            ScenarioId::A => false,
            ScenarioId::B => self.goal_distances().iter().all(|d| *d <= self.spec.goal_radius),
            ScenarioId::PassageSizes | ScenarioId::PassageAsym => {
                let (centre, angle) = link_pose(&self.world);
                centre.y > 0.0
                    && (centre - self.landmarks.goal_center).norm() <= self.spec.goal_radius
                    && orientation_error(angle, self.landmarks.goal_angle) <= self.spec.orientation_tolerance
            }
        }
    }

    /// Clamp each action component to `[-max_force, max_force]` and lift to 2D.
    pub fn action_forces(&self, actions: &[Vec<f64>]) -> Result<Vec<Vec2>, EnvError> {
        let dim = self.spec.act_dim();
        if actions.len() != self.world.agents.len() || actions.iter().any(|a| a.len() != dim) {
            return Err(EnvError::Action {
                expected: self.world.agents.len(),
                dim,
                got: actions.iter().map(Vec::len).collect(),
            });
        }
        let f = self.spec.max_force;
        Ok(actions
            .iter()
            .map(|a| {
                let x = a[0].clamp(-f, f);
                let y = if dim > 1 { a[1].clamp(-f, f) } else { 0.0 };
                Vec2::new(x, y)
            })
            .collect())
    }

    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::Done);
        }
        let forces = self.action_forces(actions)?;
        let prev = self.world.clone();
        physics::step_in_place(&mut self.world, &forces, &self.spec.physics)?;
        let contacts = physics::contacts(&self.world);

        let mut positional = 0.0;
        let (rewards, terminal) = match self.spec.scenario_id {
            ScenarioId::A => (reward_scenario_a(&prev, &forces, &self.world, self.spec.energy_coeff), false),
            ScenarioId::B => {
                let params = ScenarioBRewardParams::from_spec(&self.spec);
                let (r, pos) = rewards::scenario_b_terms(
                    &prev,
                    &self.world,
                    &self.landmarks,
                    &contacts,
                    self.curriculum_on,
                    &params,
                );
                positional = pos;
                (r, false)
            }
            ScenarioId::PassageSizes | ScenarioId::PassageAsym => {
                let r = reward_passage(&prev, &self.world, &self.spec, &self.landmarks, &contacts, self.phase);
                self.phase = self.current_phase();
                let success = self.success();
                let r = if success {
                    r.into_iter().map(|x| x + self.spec.final_reward).collect()
                } else {
                    r
                };
                (r, success)
            }
        };

        let timeout = self.world.time >= self.spec.horizon;
        self.done = timeout || terminal;
        let info = StepInfo {
            success: self.success(),
            collisions: contacts.len(),
            goal_distance: self.goal_distances(),
            positional_reward: positional,
        };
        Ok(StepResult {
            observations: self.observe_all(),
            rewards,
            done: self.done,
            terminated: terminal || (timeout && self.spec.scenario_id == ScenarioId::B),
            info,
        })
    }
}

fn spawn(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<(WorldState, Landmarks), EnvError> {
    let body = |i: usize, p: Vec2, tag: ShapeTag| AgentBody {
        max_speed: spec.max_speed,
        shape_tag: tag,
        ..AgentBody::new(p, spec.masses[i], spec.radii[i], spec.max_force)
    };
    match spec.scenario_id {
        ScenarioId::A => {
            let agents = (0..2)
                .map(|i| {
                    let x = rng.random_range(-spec.spawn_extent..=spec.spawn_extent);
                    let tag = if i == 0 { ShapeTag::Heavy } else { ShapeTag::Light };
                    AgentBody {
                        collide: false,
                        ..body(i, Vec2::new(x, 0.0), tag)
                    }
                })
                .collect();
            Ok((WorldState::new(agents), Landmarks::default()))
        }
        ScenarioId::B => {
            let statics = corridor_walls(spec);
            let inset = spec.radii[0] + 0.03;
            let half = 0.5 * spec.corridor_length;
            let goals = vec![Vec2::new(half - inset, 0.0), Vec2::new(-half + inset, 0.0)];
            let mut jitter = || {
                let r = 0.5 * spec.goal_radius * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                Vec2::new(r * a.cos(), r * a.sin())
            };
            // each robot starts on the other's goal
            let agents = vec![
                body(0, goals[1] + jitter(), ShapeTag::Robot),
                body(1, goals[0] + jitter(), ShapeTag::Robot),
            ];
            let mut world = WorldState::new(agents);
            world.statics = statics;
            let landmarks = Landmarks { goals, ..Landmarks::default() };
            Ok((world, landmarks))
        }
        ScenarioId::PassageSizes | ScenarioId::PassageAsym => {
            let sizes = spec.scenario_id == ScenarioId::PassageSizes;
            let ext = spec.spawn_extent;
            let centre_x = rng.random_range(-ext..=ext);
            let gaps = if sizes {
                let half = 0.5 * spec.gap_spacing;
                let big_left = rng.random_bool(0.5);
                let (big, small) = if big_left {
                    (centre_x - half, centre_x + half)
                } else {
                    (centre_x + half, centre_x - half)
                };
                vec![Vec2::new(big, 0.0), Vec2::new(small, 0.0)]
            } else {
                vec![Vec2::new(centre_x, 0.0)]
            };
            let widths = if sizes {
                vec![spec.gap_width_big, spec.gap_width_small]
            } else {
                vec![spec.gap_width_big]
            };
            let statics = passage_walls(spec, &gaps, &widths);

            let team_centre = Vec2::new(rng.random_range(-ext..=ext), -spec.goal_offset);
            let team_angle = if sizes {
                // perpendicular to the wall, random order
                if rng.random_bool(0.5) {
                    std::f64::consts::FRAC_PI_2
                } else {
                    -std::f64::consts::FRAC_PI_2
                }
            } else {
                rng.random_range(0.0..std::f64::consts::TAU)
            };
            let goal_center = Vec2::new(rng.random_range(-ext..=ext), spec.goal_offset);
            let goal_angle = if sizes { 0.0 } else { rng.random_range(0.0..std::f64::consts::PI) };

            let axis = Vec2::new(team_angle.cos(), team_angle.sin()) * (0.5 * spec.gap_spacing);
            let tags = if sizes {
                if spec.radii[0] > spec.radii[1] {
                    [ShapeTag::Big, ShapeTag::Small]
                } else {
                    [ShapeTag::Small, ShapeTag::Big]
                }
            } else {
                [ShapeTag::Robot, ShapeTag::Robot]
            };
            let agents = vec![body(0, team_centre - axis, tags[0]), body(1, team_centre + axis, tags[1])];
            let mut world = WorldState::new(agents);
            world.statics = statics;
            world.links.push(RigidLink {
                point_mass: spec.link_point_mass,
                point_mass_offset: spec.link_point_mass_offset,
                ..RigidLink::new(0, 1, spec.gap_spacing)
            });
            if !physics::contacts(&world).is_empty() {
                return Err(EnvError::Config("spawned team overlaps the passage wall".into()));
            }
            let landmarks = Landmarks {
                goals: Vec::new(),
                gaps,
                goal_center,
                goal_angle,
                passage_center: Vec2::new(centre_x, 0.0),
                approach_angle: if sizes { goal_angle } else { std::f64::consts::FRAC_PI_2 },
            };
            Ok((world, landmarks))
        }
    }
}

#[cfg(test)]
mod tests;
