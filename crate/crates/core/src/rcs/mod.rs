//! Relative coordinate system and multi-vehicle path planning on it.
//!
//! The grid moves with the formation at the cruise speed. `x` counts cells of
//! `d_F` metres backwards from the front anchor, `y` is the lane. Time is
//! discretised by the switching cycle: one path point per cycle.

mod astar;
mod cbs;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::scenario::Arm;
use crate::scheduler::{max_forward_layers, relative_x, Distribution, FormationParams, VehicleRecord};

pub use astar::{plan_single, PlanContext};
pub use cbs::{detect_conflicts, plan_cbs, CbsConfig, CbsSolution, CbsStats, TraceNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelativePoint {
    pub x: i32,
    pub y: i32,
}

impl RelativePoint {
    pub const fn new(x: i32, y: i32) -> Self {
        RelativePoint { x, y }
    }

    pub fn chebyshev(&self, o: &RelativePoint) -> i32 {
        (self.x - o.x).abs().max((self.y - o.y).abs())
    }

    pub fn manhattan(&self, o: &RelativePoint) -> i32 {
        (self.x - o.x).abs() + (self.y - o.y).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn allows(&self, a: RelativePoint, b: RelativePoint) -> bool {
        match self {
            Connectivity::Four => a.manhattan(&b) <= 1,
            Connectivity::Eight => a.chebyshev(&b) <= 1,
        }
    }

    /// Lower bound on the number of steps between two points.
    pub fn distance(&self, a: RelativePoint, b: RelativePoint) -> i32 {
        match self {
            Connectivity::Four => a.manhattan(&b),
            Connectivity::Eight => a.chebyshev(&b),
        }
    }

    /// Per-step offsets, waiting first.
    pub fn offsets(&self) -> &'static [(i32, i32)] {
        match self {
            Connectivity::Four => &[(0, 0), (-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[(0, 0), (-1, 0), (0, -1), (0, 1), (1, 0), (-1, -1), (-1, 1), (1, -1), (1, 1)],
        }
    }
}

/// What a planner minimises per vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Step at which the vehicle reaches its goal for good.
    #[default]
    ArrivalTime,
    /// Number of non-waiting moves.
    TotalDistance,
}

/// Grid points of one vehicle, one per cycle starting at step 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelativePath {
    pub points: Vec<RelativePoint>,
    /// When set the vehicle leaves the grid after its last point (it has
    /// crossed the stop line); otherwise it keeps holding the last point.
    #[serde(default)]
    pub exits: bool,
}

impl RelativePath {
    pub fn new(points: Vec<RelativePoint>) -> Self {
        RelativePath { points, exits: false }
    }

    pub fn at(&self, j: usize) -> Option<RelativePoint> {
        match self.points.get(j) {
            Some(p) => Some(*p),
            None if self.exits => None,
            None => self.points.last().copied(),
        }
    }

    /// Steps until the vehicle sits on its final point for good.
    pub fn arrival(&self) -> usize {
        let Some(last) = self.points.last() else { return 0 };
        self.points.iter().rposition(|p| p != last).map_or(0, |i| i + 1)
    }

    pub fn moves(&self) -> usize {
        self.points.windows(2).filter(|w| w[0] != w[1]).count()
    }

    pub fn cost(&self, mode: CostMode) -> u64 {
        match mode {
            CostMode::ArrivalTime => self.arrival() as u64,
            CostMode::TotalDistance => self.moves() as u64,
        }
    }

    pub fn respects(&self, c: Connectivity) -> bool {
        self.points.windows(2).all(|w| c.allows(w[0], w[1]))
    }
}

/// Rectangular grid: `x` in `x_min(j)..=x_max`, lanes `1..=n_lanes`.
///
/// The lower bound may rise with the step, which models cells that reach the
/// stop line while the grid advances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RcsGrid {
    pub n_lanes: i32,
    pub x_max: i32,
    front: Vec<i32>,
}

impl RcsGrid {
    pub fn new(n_lanes: usize, x_len: usize) -> Self {
        RcsGrid { n_lanes: n_lanes as i32, x_max: x_len as i32 - 1, front: vec![0] }
    }

    /// `front[j]` is the smallest valid `x` at step `j`; the last entry holds
    /// for later steps.
    pub fn with_front(mut self, front: Vec<i32>) -> Self {
        if !front.is_empty() {
            self.front = front;
        }
        self
    }

    pub fn x_min(&self, j: usize) -> i32 {
        self.front[j.min(self.front.len() - 1)]
    }

    pub fn valid(&self, p: RelativePoint, j: usize) -> bool {
        p.y >= 1 && p.y <= self.n_lanes && p.x >= self.x_min(j) && p.x <= self.x_max
    }

    pub fn cell_count(&self) -> usize {
        ((self.x_max - self.x_min(0) + 1).max(0) * self.n_lanes) as usize
    }
}

/// One vehicle to plan for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub id: usize,
    pub start: RelativePoint,
    pub goal: RelativePoint,
    /// Last step the vehicle is on the grid; it must be at its goal then and
    /// leaves afterwards.
    pub deadline: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Forbidden {
    /// Being at the point at the constraint's step.
    Vertex(RelativePoint),
    /// Moving between the points from the constraint's step to the next.
    Edge(RelativePoint, RelativePoint),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CbsConstraint {
    pub agent: usize,
    pub step: usize,
    pub forbidden: Forbidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictType {
    Vertex,
    Swap,
    DiagonalCrossing,
    /// Interpolating both moves linearly, the vehicles come less than one
    /// cell apart on both axes at once, e.g. a lane change cutting past the
    /// corner of a neighbour.
    Proximity,
}

/// Conflict between two vehicles. Vertex conflicts happen at `step`; move
/// conflicts happen between `step` and `step + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub a: usize,
    pub b: usize,
    pub step: usize,
    pub kind: ConflictType,
    pub a_move: (RelativePoint, RelativePoint),
    pub b_move: (RelativePoint, RelativePoint),
}

impl Conflict {
    /// Sort key: vertex conflicts at `j` come before move conflicts leaving `j`.
    pub fn time_key(&self) -> usize {
        match self.kind {
            ConflictType::Vertex => 2 * self.step,
            _ => 2 * self.step + 1,
        }
    }
}

/// Conflict between two simultaneous moves `a0 -> a1` and `b0 -> b1` other
/// than sharing an endpoint at the same time. Waiting is a move onto the same
/// point.
pub fn move_conflict(
    a0: RelativePoint,
    a1: RelativePoint,
    b0: RelativePoint,
    b1: RelativePoint,
) -> Option<ConflictType> {
    if a0 != a1 && a0 == b1 && a1 == b0 {
        return Some(ConflictType::Swap);
    }
    let diag = |p: RelativePoint, q: RelativePoint| (p.x - q.x).abs() == 1 && (p.y - q.y).abs() == 1;
    if a0 != b0 && diag(a0, a1) && diag(b0, b1) && a0.x + a1.x == b0.x + b1.x && a0.y + a1.y == b0.y + b1.y {
        // same 2x2 block, the other diagonal
        return Some(ConflictType::DiagonalCrossing);
    }
    if a1 == b1 {
        return None;
    }
    if min_separation(a0, a1, b0, b1) < 1.0 - 1e-9 {
        return Some(ConflictType::Proximity);
    }
    None
}

/// Smallest Chebyshev distance between the two vehicles while both move
/// linearly from their start to their end points.
fn min_separation(a0: RelativePoint, a1: RelativePoint, b0: RelativePoint, b1: RelativePoint) -> f64 {
    let (x0, y0) = ((a0.x - b0.x) as f64, (a0.y - b0.y) as f64);
    let (dx, dy) = ((a1.x - b1.x) as f64 - x0, (a1.y - b1.y) as f64 - y0);
    let at = |u: f64| (x0 + u * dx).abs().max((y0 + u * dy).abs());
    // the distance is convex and piecewise linear; its kinks are candidates
    let mut best = at(0.0).min(at(1.0));
    for (num, den) in [(-x0, dx), (-y0, dy), (-(x0 - y0), dx - dy), (-(x0 + y0), dx + dy)] {
        if den != 0.0 {
            let u = num / den;
            if (0.0..=1.0).contains(&u) {
                best = best.min(at(u));
            }
        }
    }
    best
}

/// Grid positions of the vehicles on one arm. The closest vehicle is the
/// anchor; vehicles that round to an occupied point are pushed back one cell
/// at a time, farther vehicles first keeping their order.
pub fn to_relative(vehicles: &[VehicleRecord], p: &FormationParams) -> BTreeMap<usize, RelativePoint> {
    let mut order: Vec<&VehicleRecord> = vehicles.iter().collect();
    order.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    let Some(first) = order.first() else { return BTreeMap::new() };
    let d0 = first.distance;
    let n_y0 = max_forward_layers(d0, p);
    let mut taken = BTreeSet::new();
    let mut out = BTreeMap::new();
    for v in order {
        let mut pt = RelativePoint::new(relative_x(v.distance, d0, n_y0, p.d_f) as i32, v.lane as i32);
        while !taken.insert(pt) {
            pt.x += 1;
        }
        out.insert(v.id, pt);
    }
    out
}

/// Target point of every vehicle on `arm`: layer `k` sits `2 (k - 1)` cells
/// behind the anchor.
pub fn goals_from_distribution(
    dist: &Distribution,
    vehicles: &[VehicleRecord],
    arm: Arm,
) -> BTreeMap<usize, RelativePoint> {
    vehicles
        .iter()
        .filter(|v| v.arm == arm)
        .filter_map(|v| {
            let layer = dist.layer_of(v.id)?;
            let lane = dist.lane_of(v.id)?;
            Some((v.id, RelativePoint::new(2 * (layer as i32 - 1), lane as i32)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Turn;

    fn veh(id: usize, lane: usize, d: f64) -> VehicleRecord {
        VehicleRecord { id, arm: Arm::North, turn: Turn::Straight, lane, distance: d, speed: 10.0 }
    }

    #[test]
    fn relative_positions() {
        let p = FormationParams::default();
        let r = to_relative(&[veh(1, 2, 100.0)], &p);
        assert_eq!(r[&1], RelativePoint::new(1, 2));
        let r = to_relative(&[veh(1, 2, 100.0), veh(2, 2, 117.5)], &p);
        assert_eq!(r[&2].x, r[&1].x + 1);
        let r = to_relative(&[veh(1, 1, 100.0), veh(2, 1, 102.0)], &p);
        assert_eq!(r[&2], RelativePoint::new(r[&1].x + 1, 1));
        // different lanes do not collide
        let r = to_relative(&[veh(1, 1, 100.0), veh(2, 2, 102.0)], &p);
        assert_eq!(r[&1].x, r[&2].x);
    }

    #[test]
    fn goals() {
        let v = [veh(1, 2, 10.0), veh(2, 1, 20.0), veh(3, 3, 30.0)];
        let dist = Distribution {
            lanes: [(1, 2), (2, 1), (3, 3)].into(),
            layers: [(1, 1), (2, 2), (3, 3)].into(),
            groups: vec![vec![1], vec![2], vec![3]],
        };
        let g = goals_from_distribution(&dist, &v, Arm::North);
        assert_eq!(g[&1], RelativePoint::new(0, 2));
        assert_eq!(g[&2], RelativePoint::new(2, 1));
        assert_eq!(g[&3], RelativePoint::new(4, 3));
        assert!(goals_from_distribution(&dist, &v, Arm::East).is_empty());
    }

    #[test]
    fn move_conflicts() {
        let p = RelativePoint::new;
        assert_eq!(move_conflict(p(0, 1), p(0, 2), p(0, 2), p(0, 1)), Some(ConflictType::Swap));
        assert_eq!(move_conflict(p(0, 1), p(1, 2), p(1, 1), p(0, 2)), Some(ConflictType::DiagonalCrossing));
        // parallel diagonals
        assert_eq!(move_conflict(p(0, 1), p(1, 2), p(0, 2), p(1, 3)), None);
        // lane change past a waiting neighbour, ahead in the old lane or
        // behind in the new one
        assert_eq!(move_conflict(p(1, 1), p(0, 2), p(0, 1), p(0, 1)), Some(ConflictType::Proximity));
        assert_eq!(move_conflict(p(1, 1), p(0, 2), p(1, 2), p(1, 2)), Some(ConflictType::Proximity));
        // side by side, and one cell apart
        assert_eq!(move_conflict(p(1, 1), p(0, 1), p(1, 2), p(0, 2)), None);
        assert_eq!(move_conflict(p(1, 1), p(0, 2), p(2, 1), p(1, 1)), None);
        // lanes swapped while one surges and the other falls back
        assert_eq!(move_conflict(p(17, 1), p(18, 2), p(17, 2), p(16, 1)), Some(ConflictType::Proximity));
        // one lane, splitting to both sides while passing
        assert_eq!(move_conflict(p(20, 2), p(19, 1), p(19, 2), p(20, 3)), Some(ConflictType::Proximity));
        // overtaking one lane over
        assert_eq!(move_conflict(p(1, 1), p(0, 1), p(0, 2), p(0, 2)), None);
        // following in a column
        assert_eq!(move_conflict(p(1, 1), p(0, 1), p(2, 1), p(1, 1)), None);
    }

    #[test]
    fn path_measures() {
        let p = RelativePoint::new;
        let path = RelativePath::new(vec![p(2, 3), p(1, 2), p(1, 2)]);
        assert_eq!(path.arrival(), 1);
        assert_eq!(path.moves(), 1);
        assert!(path.respects(Connectivity::Eight));
        assert!(!path.respects(Connectivity::Four));
        assert_eq!(path.at(10), Some(p(1, 2)));
        let gone = RelativePath { exits: true, ..path };
        assert_eq!(gone.at(3), None);
    }

    #[test]
    fn grid_front() {
        let g = RcsGrid::new(3, 6).with_front(vec![0, 1, 3]);
        assert!(g.valid(RelativePoint::new(0, 1), 0));
        assert!(!g.valid(RelativePoint::new(0, 1), 1));
        assert!(!g.valid(RelativePoint::new(2, 1), 7));
        assert!(g.valid(RelativePoint::new(5, 3), 7));
        assert!(!g.valid(RelativePoint::new(5, 4), 0));
        assert_eq!(g.cell_count(), 18);
    }
}
