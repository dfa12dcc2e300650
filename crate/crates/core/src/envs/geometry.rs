use serde::{Deserialize, Serialize};

use super::ScenarioSpec;
use crate::physics::{Segment, StaticGeometry, Vec2, WallTag};

/// Scenario landmarks that are not bodies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    /// Per-agent goal positions (scenario B).
    pub goals: Vec<Vec2>,
    /// Gap centres on the passage wall; for passage_sizes the big gap comes first.
    pub gaps: Vec<Vec2>,
    pub goal_center: Vec2,
    /// Undirected goal orientation of the linkage, radians.
    pub goal_angle: f64,
    pub passage_center: Vec2,
    /// Linkage orientation rewarded before the wall is crossed.
    pub approach_angle: f64,
}

impl Landmarks {
    pub fn translated(&self, by: Vec2) -> Self {
        Self {
            goals: self.goals.iter().map(|g| g + by).collect(),
            gaps: self.gaps.iter().map(|g| g + by).collect(),
            goal_center: self.goal_center + by,
            passage_center: self.passage_center + by,
            ..self.clone()
        }
    }
}

/// Corridor along x centred at the origin, with one robot-sized recess above
/// and one below its midpoint. Wall centre lines sit half a thickness outside
/// the free space.
pub fn corridor_walls(spec: &ScenarioSpec) -> StaticGeometry {
    let t = spec.wall_thickness;
    let ht = 0.5 * t;
    let half_l = 0.5 * spec.corridor_length;
    let half_w = 0.5 * spec.corridor_width;
    let half_r = 0.5 * spec.recess_width + ht;
    let y_wall = half_w + ht;
    let y_back = half_w + spec.recess_depth + ht;
    let x_end = half_l + ht;

    let mut segments = Vec::new();
    for sign in [1.0, -1.0] {
        let y = sign * y_wall;
        let yb = sign * y_back;
        segments.push(Segment::new(Vec2::new(-x_end, y), Vec2::new(-half_r, y), t));
        segments.push(Segment::new(Vec2::new(half_r, y), Vec2::new(x_end, y), t));
        segments.push(Segment::new(Vec2::new(-half_r, y), Vec2::new(-half_r, yb), t).tagged(WallTag::Recess));
        segments.push(Segment::new(Vec2::new(half_r, y), Vec2::new(half_r, yb), t).tagged(WallTag::Recess));
        segments.push(Segment::new(Vec2::new(-half_r, yb), Vec2::new(half_r, yb), t).tagged(WallTag::Recess));
    }
    for sign in [1.0, -1.0] {
        let x = sign * x_end;
        segments.push(Segment::new(Vec2::new(x, -y_wall), Vec2::new(x, y_wall), t));
    }
    StaticGeometry { segments }
}

/// Horizontal wall on `y = 0` spanning `±wall_extent` with an opening of the
/// given free width at each gap centre.
pub fn passage_walls(spec: &ScenarioSpec, gaps: &[Vec2], widths: &[f64]) -> StaticGeometry {
    let t = spec.wall_thickness;
    let mut openings: Vec<(f64, f64)> = gaps
        .iter()
        .zip(widths)
        .map(|(g, w)| (g.x - 0.5 * (w + t), g.x + 0.5 * (w + t)))
        .collect();
    openings.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut segments = Vec::new();
    let mut x = -spec.wall_extent;
    for (lo, hi) in openings {
        if lo > x {
            segments.push(Segment::new(Vec2::new(x, 0.0), Vec2::new(lo, 0.0), t));
        }
        x = hi;
    }
    if spec.wall_extent > x {
        segments.push(Segment::new(Vec2::new(x, 0.0), Vec2::new(spec.wall_extent, 0.0), t));
    }
    StaticGeometry { segments }
}
