use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Landmarks, ScenarioSpec};
use crate::physics::{Contact, ContactOther, StaticGeometry, Vec2, WallTag, WorldState};

/// Team speed objective: `max_i |v_i| - energy_coeff * sum_i |f_i|^2`, shared.
pub fn reward_scenario_a(_prev: &WorldState, forces: &[Vec2], next: &WorldState, energy_coeff: f64) -> Vec<f64> {
    let top = next.agents.iter().map(|a| a.velocity.norm()).fold(0.0, f64::max);
    let energy: f64 = forces.iter().map(|f| f.norm_squared()).sum();
    vec![top - energy_coeff * energy; next.agents.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioBRewardParams {
    pub pos_scale: f64,
    pub final_reward: f64,
    pub collision_penalty: f64,
    pub goal_radius: f64,
}

impl ScenarioBRewardParams {
    pub fn from_spec(spec: &ScenarioSpec) -> Self {
        Self {
            pos_scale: spec.pos_scale,
            final_reward: spec.final_reward,
            collision_penalty: spec.collision_penalty,
            goal_radius: spec.goal_radius,
        }
    }
}

/// Number of agents touching something that is penalised.
fn penalised_agents(contacts: &[Contact], statics: &StaticGeometry, n: usize, recess_counts: bool) -> usize {
    let mut hit = vec![false; n];
    for c in contacts {
        match c.other {
            ContactOther::Agent(j) => {
                hit[c.agent] = true;
                hit[j] = true;
            }
            ContactOther::Wall(s) => {
                if recess_counts && statics.segments[s].tag == WallTag::Recess {
                    hit[c.agent] = true;
                }
            }
        }
    }
    hit.into_iter().filter(|h| *h).count()
}

/// Scenario B reward and its positional part.
pub(crate) fn scenario_b_terms(
    prev: &WorldState,
    next: &WorldState,
    landmarks: &Landmarks,
    contacts: &[Contact],
    curriculum_on: bool,
    params: &ScenarioBRewardParams,
) -> (Vec<f64>, f64) {
    let goals = &landmarks.goals;
    let positional: f64 = prev
        .agents
        .iter()
        .zip(&next.agents)
        .zip(goals)
        .map(|((a, b), g)| params.pos_scale * ((a.position - g).norm() - (b.position - g).norm()))
        .sum();
    let on_goal = next
        .agents
        .iter()
        .zip(goals)
        .all(|(a, g)| (a.position - g).norm() <= params.goal_radius);
    let n = next.agents.len();
    let penalty = params.collision_penalty * penalised_agents(contacts, &next.statics, n, curriculum_on) as f64;
    let r = positional + if on_goal { params.final_reward } else { 0.0 } - penalty;
    (vec![r; n], positional)
}

/// Scenario B shared reward: positional progress, final reward while both
/// robots sit on their goals, and collision penalties (recess walls only once
/// the curriculum is on).
pub fn reward_scenario_b(
    prev: &WorldState,
    next: &WorldState,
    landmarks: &Landmarks,
    curriculum_on: bool,
    params: &ScenarioBRewardParams,
) -> Vec<f64> {
    let contacts = crate::physics::contacts(next);
    scenario_b_terms(prev, next, landmarks, &contacts, curriculum_on, params).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassagePhase {
    /// Link centre still on the spawn side of the wall.
    Approach,
    Depart,
}

/// Midpoint of the first two agents and the direction from agent 0 to agent 1.
pub fn link_pose(world: &WorldState) -> (Vec2, f64) {
    let (p0, p1) = (world.agents[0].position, world.agents[1].position);
    let d = p1 - p0;
    (0.5 * (p0 + p1), d.y.atan2(d.x))
}

/// Distance between two undirected orientations, in `[0, pi/2]`.
pub fn orientation_error(angle: f64, target: f64) -> f64 {
    let d = (angle - target).rem_euclid(PI);
    d.min(PI - d)
}

fn passage_potential(world: &WorldState, spec: &ScenarioSpec, landmarks: &Landmarks, phase: PassagePhase) -> f64 {
    let (centre, angle) = link_pose(world);
    let (target, target_angle) = match phase {
        PassagePhase::Approach => (landmarks.passage_center, landmarks.approach_angle),
        PassagePhase::Depart => (landmarks.goal_center, landmarks.goal_angle),
    };
    -spec.orientation_weight * orientation_error(angle, target_angle) - (centre - target).norm()
}

/// Two-phase shaped passage reward (without the success bonus): change in the
/// pose potential of the current phase, minus the collision penalty.
pub fn reward_passage(
    prev: &WorldState,
    next: &WorldState,
    spec: &ScenarioSpec,
    landmarks: &Landmarks,
    contacts: &[Contact],
    phase: PassagePhase,
) -> Vec<f64> {
    let shaped = spec.pos_scale
        * (passage_potential(next, spec, landmarks, phase) - passage_potential(prev, spec, landmarks, phase));
    let n = next.agents.len();
    let hit = {
        let mut hit = vec![false; n];
        for c in contacts {
            hit[c.agent] = true;
            if let ContactOther::Agent(j) = c.other {
                hit[j] = true;
            }
        }
        hit.into_iter().filter(|h| *h).count()
    };
    vec![shaped - spec.collision_penalty * hit as f64; n]
}
