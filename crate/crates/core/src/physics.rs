//! Deterministic 2D rigid-circle dynamics.
//!
//! Agents are discs integrated with semi-implicit Euler. Contacts are resolved
//! with linear penalty springs (no restitution), friction is a constant
//! magnitude deceleration opposing motion, and rigid linkages are distance
//! constraints solved by positional projection.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("non-finite {what} for agent {agent}")]
    NonFinite { what: &'static str, agent: usize },
    #[error("expected {expected} forces, got {got}")]
    ForceCount { expected: usize, got: usize },
    #[error("link {link} references missing agent {agent}")]
    MissingAgent { link: usize, agent: usize },
    #[error("link {0} has coincident endpoints")]
    DegenerateLink(usize),
    #[error("invalid physics parameter: {0}")]
    InvalidParam(&'static str),
}

/// Scenario-level role of a body. Physics ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeTag {
    Robot,
    Heavy,
    Light,
    Big,
    Small,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBody {
    pub position: Vec2,
    pub velocity: Vec2,
    pub mass: f64,
    pub radius: f64,
    pub max_force: f64,
    /// `f64::INFINITY` disables the cap.
    pub max_speed: f64,
    pub shape_tag: ShapeTag,
    /// Whether this body takes part in contacts at all.
    pub collide: bool,
}

impl AgentBody {
    pub fn new(position: Vec2, mass: f64, radius: f64, max_force: f64) -> Self {
        Self {
            position,
            velocity: Vec2::zeros(),
            mass,
            radius,
            max_force,
            max_speed: f64::INFINITY,
            shape_tag: ShapeTag::Robot,
            collide: true,
        }
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * self.velocity.norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallTag {
    Plain,
    Recess,
}

/// A wall: a capsule of the given thickness around the segment `a`-`b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
    pub thickness: f64,
    pub tag: WallTag,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2, thickness: f64) -> Self {
        Self {
            a,
            b,
            thickness,
            tag: WallTag::Plain,
        }
    }

    pub fn tagged(mut self, tag: WallTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn closest_point(&self, p: &Vec2) -> Vec2 {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        if len2 == 0.0 {
            return self.a;
        }
        let t = ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0);
        self.a + ab * t
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StaticGeometry {
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidLink {
    pub agent_a: usize,
    pub agent_b: usize,
    pub rest_length: f64,
    /// Extra mass carried by the bar.
    pub point_mass: f64,
    /// Position of the point mass along the bar, 0 at `agent_a`, 1 at `agent_b`.
    pub point_mass_offset: f64,
}

impl RigidLink {
    pub fn new(agent_a: usize, agent_b: usize, rest_length: f64) -> Self {
        Self {
            agent_a,
            agent_b,
            rest_length,
            point_mass: 0.0,
            point_mass_offset: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub agents: Vec<AgentBody>,
    pub statics: StaticGeometry,
    pub links: Vec<RigidLink>,
    pub time: u64,
}

impl WorldState {
    pub fn new(agents: Vec<AgentBody>) -> Self {
        Self {
            agents,
            statics: StaticGeometry::default(),
            links: Vec::new(),
            time: 0,
        }
    }

    /// Body mass plus the share of every link point mass lumped onto it.
    pub fn effective_masses(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.agents.iter().map(|a| a.mass).collect();
        for link in &self.links {
            if link.agent_a < m.len() && link.agent_b < m.len() {
                m[link.agent_a] += link.point_mass * (1.0 - link.point_mass_offset);
                m[link.agent_b] += link.point_mass * link.point_mass_offset;
            }
        }
        m
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.agents.iter().map(AgentBody::kinetic_energy).sum()
    }

    fn check_finite(&self) -> Result<(), PhysicsError> {
        for (i, a) in self.agents.iter().enumerate() {
            if !(a.position.iter().all(|x| x.is_finite())) {
                return Err(PhysicsError::NonFinite { what: "position", agent: i });
            }
            if !(a.velocity.iter().all(|x| x.is_finite())) {
                return Err(PhysicsError::NonFinite { what: "velocity", agent: i });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsParams {
    pub dt: f64,
    /// Deceleration (m/s², i.e. force per unit mass) opposing motion.
    pub linear_friction: f64,
    /// Velocity-proportional damping coefficient (kg/s).
    pub drag: f64,
    pub collision_stiffness: f64,
    pub max_acceleration: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            linear_friction: 0.25,
            drag: 0.0,
            collision_stiffness: 100.0,
            max_acceleration: 5.0,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(PhysicsError::InvalidParam("dt must be positive"));
        }
        if !(self.linear_friction >= 0.0) {
            return Err(PhysicsError::InvalidParam("linear_friction must be >= 0"));
        }
        if !(self.drag >= 0.0) {
            return Err(PhysicsError::InvalidParam("drag must be >= 0"));
        }
        if !(self.collision_stiffness > 0.0) {
            return Err(PhysicsError::InvalidParam("collision_stiffness must be > 0"));
        }
        if !(self.max_acceleration > 0.0) {
            return Err(PhysicsError::InvalidParam("max_acceleration must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContactOther {
    Agent(usize),
    Wall(usize),
}

/// A penetrating pair. `normal` points from the other body towards `agent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub agent: usize,
    pub other: ContactOther,
    pub depth: f64,
    pub normal: Vec2,
}

/// All penetrating agent-agent (each pair once, `agent < j`) and agent-wall pairs.
pub fn contacts(world: &WorldState) -> Vec<Contact> {
    let mut out = Vec::new();
    let n = world.agents.len();
    for i in 0..n {
        let a = &world.agents[i];
        if !a.collide {
            continue;
        }
        for j in (i + 1)..n {
            let b = &world.agents[j];
            if !b.collide {
                continue;
            }
            let d = a.position - b.position;
            let dist = d.norm();
            let depth = a.radius + b.radius - dist;
            if depth > 0.0 {
                let normal = if dist > 0.0 { d / dist } else { Vec2::new(1.0, 0.0) };
                out.push(Contact {
                    agent: i,
                    other: ContactOther::Agent(j),
                    depth,
                    normal,
                });
            }
        }
        for (s, seg) in world.statics.segments.iter().enumerate() {
            let q = seg.closest_point(&a.position);
            let d = a.position - q;
            let dist = d.norm();
            let depth = a.radius + 0.5 * seg.thickness - dist;
            if depth > 0.0 {
                let normal = if dist > 0.0 {
                    d / dist
                } else {
                    let ab = seg.b - seg.a;
                    Vec2::new(-ab.y, ab.x).normalize()
                };
                out.push(Contact {
                    agent: i,
                    other: ContactOther::Wall(s),
                    depth,
                    normal,
                });
            }
        }
    }
    out
}

/// Penalty forces `stiffness * depth` along each contact normal.
pub fn collision_forces(world: &WorldState, stiffness: f64) -> Vec<Vec2> {
    let mut forces = vec![Vec2::zeros(); world.agents.len()];
    for c in contacts(world) {
        let f = c.normal * (stiffness * c.depth);
        forces[c.agent] += f;
        if let ContactOther::Agent(j) = c.other {
            forces[j] -= f;
        }
    }
    forces
}

fn clamp_norm(v: Vec2, max: f64) -> Vec2 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Advance one world by `params.dt`.
pub fn step_world(
    world: &WorldState,
    forces: &[Vec2],
    params: &PhysicsParams,
) -> Result<WorldState, PhysicsError> {
    let mut next = world.clone();
    step_in_place(&mut next, forces, params)?;
    Ok(next)
}

/// In-place variant of [`step_world`]; on error the world is left untouched.
pub fn step_in_place(
    world: &mut WorldState,
    forces: &[Vec2],
    params: &PhysicsParams,
) -> Result<(), PhysicsError> {
    if forces.len() != world.agents.len() {
        return Err(PhysicsError::ForceCount {
            expected: world.agents.len(),
            got: forces.len(),
        });
    }
    for (i, f) in forces.iter().enumerate() {
        if !f.iter().all(|x| x.is_finite()) {
            return Err(PhysicsError::NonFinite { what: "force", agent: i });
        }
    }
    world.check_finite()?;
    params.validate()?;
    check_links(world)?;

    let masses = world.effective_masses();
    let contact = collision_forces(world, params.collision_stiffness);
    let dt = params.dt;
    let friction_dv = params.linear_friction * dt;

    for (i, agent) in world.agents.iter_mut().enumerate() {
        let m = masses[i];
        let actuation = clamp_norm(forces[i], agent.max_force) / m;
        let accel = clamp_norm(actuation, params.max_acceleration) + contact[i] / m;
        let mut v = agent.velocity + accel * dt;
        if params.drag > 0.0 {
            v *= (1.0 - params.drag * dt / m).max(0.0);
        }
        let speed = v.norm();
        if speed <= friction_dv {
            v = Vec2::zeros();
        } else if friction_dv > 0.0 {
            v *= (speed - friction_dv) / speed;
        }
        agent.velocity = clamp_norm(v, agent.max_speed);
        agent.position += agent.velocity * dt;
    }

    project_links(world, &masses)?;
    for agent in world.agents.iter_mut() {
        agent.velocity = clamp_norm(agent.velocity, agent.max_speed);
    }
    world.time += 1;
    Ok(())
}

fn check_links(world: &WorldState) -> Result<(), PhysicsError> {
    let n = world.agents.len();
    for (l, link) in world.links.iter().enumerate() {
        for agent in [link.agent_a, link.agent_b] {
            if agent >= n {
                return Err(PhysicsError::MissingAgent { link: l, agent });
            }
        }
    }
    Ok(())
}

/// Project every link back to its rest length and remove relative velocity
/// along the bar axis. Corrections are split by inverse effective mass.
pub fn solve_links(world: &WorldState) -> Result<WorldState, PhysicsError> {
    check_links(world)?;
    let mut next = world.clone();
    let masses = next.effective_masses();
    project_links(&mut next, &masses)?;
    Ok(next)
}

const LINK_PASSES: usize = 20;
const LINK_TOLERANCE: f64 = 1e-9;

fn project_links(world: &mut WorldState, masses: &[f64]) -> Result<(), PhysicsError> {
    if world.links.is_empty() {
        return Ok(());
    }
    let passes = if world.links.len() == 1 { 1 } else { LINK_PASSES };
    for _ in 0..passes {
        let mut worst: f64 = 0.0;
        for (l, link) in world.links.iter().enumerate() {
            let (ia, ib) = (link.agent_a, link.agent_b);
            let d = world.agents[ib].position - world.agents[ia].position;
            let len = d.norm();
            if len < 1e-12 {
                return Err(PhysicsError::DegenerateLink(l));
            }
            let axis = d / len;
            let wa = 1.0 / masses[ia];
            let wb = 1.0 / masses[ib];
            let share_a = wa / (wa + wb);
            let share_b = wb / (wa + wb);

            let err = len - link.rest_length;
            if err != 0.0 {
                world.agents[ia].position += axis * (err * share_a);
                world.agents[ib].position -= axis * (err * share_b);
            }
            worst = worst.max(err.abs());

            let rel = (world.agents[ib].velocity - world.agents[ia].velocity).dot(&axis);
            if rel != 0.0 {
                world.agents[ia].velocity += axis * (rel * share_a);
                world.agents[ib].velocity -= axis * (rel * share_b);
            }
        }
        if worst < LINK_TOLERANCE {
            break;
        }
    }
    Ok(())
}
