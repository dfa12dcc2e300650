use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::physics::PhysicsParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    /// Two masses on a line, rewarded for the team's top speed.
    A,
    /// Give-way corridor with two recesses.
    B,
    #[serde(rename = "passage_sizes")]
    PassageSizes,
    #[serde(rename = "passage_asym")]
    PassageAsym,
}

impl ScenarioId {
    pub fn label(self) -> &'static str {
        match self {
            ScenarioId::A => "A",
            ScenarioId::B => "B",
            ScenarioId::PassageSizes => "passage_sizes",
            ScenarioId::PassageAsym => "passage_asym",
        }
    }

    pub fn is_passage(self) -> bool {
        matches!(self, ScenarioId::PassageSizes | ScenarioId::PassageAsym)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypingMode {
    None,
    ExplicitIndex,
}

/// Declarative description of one task. Fields that a scenario does not use
/// are ignored by it; defaults come from [`ScenarioSpec::default_for`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario_id: ScenarioId,
    pub n_agents: usize,
    pub horizon: u64,
    /// Metres; `inf` connects every pair.
    pub comm_range: f64,

    // per-agent physical attributes
    pub masses: Vec<f64>,
    pub radii: Vec<f64>,
    pub max_force: f64,
    /// `inf` disables the cap.
    pub max_speed: f64,
    pub link_point_mass: f64,
    pub link_point_mass_offset: f64,

    // geometry
    /// Scenario A spawn interval half-width, passage spawn jitter half-width.
    pub spawn_extent: f64,
    pub corridor_length: f64,
    pub corridor_width: f64,
    pub recess_width: f64,
    pub recess_depth: f64,
    pub wall_thickness: f64,
    pub wall_extent: f64,
    pub gap_width_big: f64,
    pub gap_width_small: f64,
    /// Centre-to-centre gap distance; also the linkage rest length.
    pub gap_spacing: f64,
    /// Distance of spawn and goal centres from the passage wall.
    pub goal_offset: f64,

    // rewards
    pub energy_coeff: f64,
    pub pos_scale: f64,
    pub orientation_weight: f64,
    pub final_reward: f64,
    pub collision_penalty: f64,
    /// Fraction of the straight-line positional maximum that latches the curriculum.
    pub curriculum_fraction: f64,
    /// Smoothing factor of the curriculum moving average.
    pub curriculum_smoothing: f64,

    // success
    pub goal_radius: f64,
    pub orientation_tolerance: f64,

    pub physics: PhysicsParams,
}

impl ScenarioSpec {
    pub fn default_for(id: ScenarioId) -> Self {
        let base = Self {
            scenario_id: id,
            n_agents: 2,
            horizon: 100,
            comm_range: f64::INFINITY,
            masses: vec![1.0, 1.0],
            radii: vec![0.1, 0.1],
            max_force: 1.0,
            max_speed: 0.5,
            link_point_mass: 0.0,
            link_point_mass_offset: 0.5,
            spawn_extent: 1.0,
            corridor_length: 2.0,
            corridor_width: 0.3,
            recess_width: 0.3,
            recess_depth: 0.3,
            wall_thickness: 0.02,
            wall_extent: 2.0,
            gap_width_big: 0.28,
            gap_width_small: 0.16,
            gap_spacing: 0.6,
            goal_offset: 0.6,
            energy_coeff: 0.1,
            pos_scale: 1.0,
            orientation_weight: 1.0,
            final_reward: 0.05,
            collision_penalty: 0.05,
            curriculum_fraction: 0.8,
            curriculum_smoothing: 0.5,
            goal_radius: 0.05,
            orientation_tolerance: 0.1,
            physics: PhysicsParams::default(),
        };
        match id {
            ScenarioId::A => Self {
                masses: vec![4.0, 1.0],
                radii: vec![0.05, 0.05],
                max_force: 2.0,
                max_speed: 1.0,
                ..base
            },
            ScenarioId::B => Self {
                horizon: 500,
                radii: vec![0.12, 0.12],
                ..base
            },
            ScenarioId::PassageSizes => Self {
                horizon: 200,
                radii: vec![0.1, 0.05],
                spawn_extent: 0.5,
                final_reward: 1.0,
                ..base
            },
            ScenarioId::PassageAsym => Self {
                horizon: 200,
                radii: vec![0.08, 0.08],
                gap_spacing: 0.5,
                gap_width_big: 0.22,
                link_point_mass: 2.0,
                link_point_mass_offset: 0.2,
                spawn_extent: 0.5,
                final_reward: 1.0,
                ..base
            },
        }
    }

    pub fn act_dim(&self) -> usize {
        match self.scenario_id {
            ScenarioId::A => 1,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::Config(msg));
        if self.n_agents != 2 {
            return bad(format!("n_agents must be 2 for {}, got {}", self.scenario_id.label(), self.n_agents));
        }
        if self.masses.len() != self.n_agents || self.radii.len() != self.n_agents {
            return bad("masses and radii need one entry per agent".into());
        }
        if self.masses.iter().any(|m| !(*m > 0.0)) || self.radii.iter().any(|r| !(*r > 0.0)) {
            return bad("masses and radii must be positive".into());
        }
        if !(self.max_force > 0.0) || !(self.max_speed > 0.0) {
            return bad("max_force and max_speed must be positive".into());
        }
        if !(self.comm_range > 0.0) {
            return bad("comm_range must be positive or inf".into());
        }
        let geometry = [
            ("spawn_extent", self.spawn_extent),
            ("corridor_length", self.corridor_length),
            ("corridor_width", self.corridor_width),
            ("recess_width", self.recess_width),
            ("recess_depth", self.recess_depth),
            ("wall_thickness", self.wall_thickness),
            ("wall_extent", self.wall_extent),
            ("gap_width_big", self.gap_width_big),
            ("gap_width_small", self.gap_width_small),
            ("gap_spacing", self.gap_spacing),
            ("goal_offset", self.goal_offset),
            ("goal_radius", self.goal_radius),
            ("orientation_tolerance", self.orientation_tolerance),
        ];
        for (name, v) in geometry {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.link_point_mass_offset) || self.link_point_mass < 0.0 {
            return bad("link point mass must be >= 0 with offset in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.curriculum_smoothing) {
            return bad("curriculum_smoothing must lie in [0, 1]".into());
        }
        self.physics.validate().map_err(|e| EnvError::Config(e.to_string()))?;

        match self.scenario_id {
            ScenarioId::A => {
                if self.masses[0] <= self.masses[1] {
                    return bad("scenario A needs the first agent heavier than the second".into());
                }
            }
            ScenarioId::B => {
                let d = 2.0 * self.radii[0];
                if self.radii[0] != self.radii[1] {
                    return bad("scenario B agents must be physically identical".into());
                }
                if !(self.corridor_width >= d && self.corridor_width < 2.0 * d) {
                    return bad(format!(
                        "corridor width {} must fit exactly one robot abreast (diameter {d})",
                        self.corridor_width
                    ));
                }
                if self.recess_width < d || self.recess_depth < d {
                    return bad("recesses must be robot-sized".into());
                }
                if self.corridor_length < 2.0 * (d + 0.06) + self.recess_width {
                    return bad("corridor too short for both robots and the recesses".into());
                }
            }
            ScenarioId::PassageSizes => {
                let (big, small) = (self.radii[0].max(self.radii[1]), self.radii[0].min(self.radii[1]));
                if big == small {
                    return bad("passage_sizes agents must differ in size".into());
                }
                if self.gap_width_big < 2.0 * big || self.gap_width_small < 2.0 * small {
                    return bad("each gap must fit its robot".into());
                }
                if self.gap_spacing < 0.5 * (self.gap_width_big + self.gap_width_small) + self.wall_thickness {
                    return bad("gaps overlap at this spacing".into());
                }
                self.check_passage_room(big)?;
            }
            ScenarioId::PassageAsym => {
                if self.gap_width_big < 2.0 * self.radii[0].max(self.radii[1]) {
                    return bad("the gap must fit a robot".into());
                }
                self.check_passage_room(self.radii[0].max(self.radii[1]))?;
            }
        }
        Ok(())
    }

    fn check_passage_room(&self, big_radius: f64) -> Result<(), EnvError> {
        let half = 0.5 * self.gap_spacing;
        if self.goal_offset < half + big_radius + self.wall_thickness {
            return Err(EnvError::Config("goal_offset leaves no room between the team and the wall".into()));
        }
        if self.wall_extent < self.spawn_extent + self.gap_spacing + self.gap_width_big {
            return Err(EnvError::Config("wall_extent too small for the gap spawn range".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for id in [ScenarioId::A, ScenarioId::B, ScenarioId::PassageSizes, ScenarioId::PassageAsym] {
            ScenarioSpec::default_for(id).validate().unwrap();
        }
    }

    #[test]
    fn corridor_fits_exactly_one_robot() {
        let mut s = ScenarioSpec::default_for(ScenarioId::B);
        s.corridor_width = 0.5;
        assert!(matches!(s.validate(), Err(EnvError::Config(_))));
        s.corridor_width = 0.2;
        assert!(matches!(s.validate(), Err(EnvError::Config(_))));
    }

    #[test]
    fn scenario_a_needs_heavier_first_agent() {
        let mut s = ScenarioSpec::default_for(ScenarioId::A);
        s.masses = vec![1.0, 4.0];
        assert!(s.validate().is_err());
    }
}
