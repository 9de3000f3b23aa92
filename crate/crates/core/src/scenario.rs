//! Intersection geometry and the movement encoding.
//!
//! World frame: origin at the centre of the conflict zone, `x` pointing east and
//! `y` pointing north. Arms are numbered clockwise starting from north and
//! traffic keeps to the right. Every arm is the north arm rotated clockwise by
//! `(arm - 1)` quarter turns, which is how entry and exit points are derived.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A 2-D point or vector in metres.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    North = 1,
    East = 2,
    South = 3,
    West = 4,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::North, Arm::East, Arm::South, Arm::West];

    pub fn from_index(r: usize) -> Result<Arm> {
        match r {
            1 => Ok(Arm::North),
            2 => Ok(Arm::East),
            3 => Ok(Arm::South),
            4 => Ok(Arm::West),
            _ => Err(Error::InvalidArgument(format!("arm index {r} outside 1..=4"))),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Next arm clockwise.
    pub fn rotated(self, quarter_turns: usize) -> Arm {
        Arm::ALL[(self.index() - 1 + quarter_turns) % 4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Turn {
    Right = 1,
    Straight = 2,
    Left = 3,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Right, Turn::Straight, Turn::Left];

    pub fn from_index(t: usize) -> Result<Turn> {
        match t {
            1 => Ok(Turn::Right),
            2 => Ok(Turn::Straight),
            3 => Ok(Turn::Left),
            _ => Err(Error::InvalidArgument(format!("turn index {t} outside 1..=3"))),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A traffic movement: source arm, turn and entry lane (1 = rightmost lane).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Movement {
    pub arm: Arm,
    pub turn: Turn,
    pub lane: usize,
}

impl Movement {
    pub fn new(arm: Arm, turn: Turn, lane: usize) -> Self {
        Movement { arm, turn, lane }
    }

    /// Integer code `3 n (r-1) + n (t-1) + l`, in `1..=12 n`.
    pub fn code(&self, n_lanes: usize) -> Result<usize> {
        movement_code(self.arm.index(), self.turn.index(), self.lane, n_lanes)
    }

    pub fn decode(code: usize, n_lanes: usize) -> Result<Movement> {
        decode_movement(code, n_lanes)
    }

    pub fn exit_arm(&self) -> Arm {
        exit_arm(self.arm, self.turn)
    }

    /// The same movement with its source arm rotated clockwise.
    pub fn rotated(&self, quarter_turns: usize) -> Movement {
        Movement { arm: self.arm.rotated(quarter_turns), ..*self }
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arm = match self.arm {
            Arm::North => "N",
            Arm::East => "E",
            Arm::South => "S",
            Arm::West => "W",
        };
        let turn = match self.turn {
            Turn::Right => "R",
            Turn::Straight => "S",
            Turn::Left => "L",
        };
        write!(f, "{arm}{turn}{}", self.lane)
    }
}

pub fn movement_code(r: usize, t: usize, l: usize, n_lanes: usize) -> Result<usize> {
    if n_lanes == 0 {
        return Err(Error::InvalidArgument("lane count must be at least 1".into()));
    }
    if !(1..=4).contains(&r) || !(1..=3).contains(&t) || !(1..=n_lanes).contains(&l) {
        return Err(Error::InvalidArgument(format!("movement (r={r}, t={t}, l={l}) out of range for {n_lanes} lanes")));
    }
    Ok(3 * n_lanes * (r - 1) + n_lanes * (t - 1) + l)
}

pub fn decode_movement(code: usize, n_lanes: usize) -> Result<Movement> {
    if n_lanes == 0 || code == 0 || code > 12 * n_lanes {
        return Err(Error::InvalidArgument(format!("movement code {code} outside 1..={} ", 12 * n_lanes)));
    }
    let z = code - 1;
    let r = z / (3 * n_lanes) + 1;
    let t = (z % (3 * n_lanes)) / n_lanes + 1;
    let l = z % n_lanes + 1;
    Ok(Movement { arm: Arm::from_index(r)?, turn: Turn::from_index(t)?, lane: l })
}

/// Arm a movement leaves through (right-hand traffic, arms numbered clockwise).
pub fn exit_arm(arm: Arm, turn: Turn) -> Arm {
    let r = arm.index();
    let e = match turn {
        Turn::Right => (r + 2) % 4 + 1,
        Turn::Straight => (r + 1) % 4 + 1,
        Turn::Left => r % 4 + 1,
    };
    Arm::ALL[e - 1]
}

/// Rotate a point clockwise about the origin by `q` quarter turns.
pub fn rotate_cw(p: Point, q: usize) -> Point {
    match q % 4 {
        0 => p,
        1 => [p[1], -p[0]],
        2 => [-p[0], -p[1]],
        _ => [-p[1], p[0]],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntersectionGeometry {
    pub n_lanes: usize,
    pub lane_width: f64,
    pub arm_length: f64,
    pub path_samples: usize,
    /// Paths closer than this are crossing. Defaults to half a lane.
    pub clearance: f64,
}

impl Default for IntersectionGeometry {
    fn default() -> Self {
        IntersectionGeometry { n_lanes: 3, lane_width: 3.5, arm_length: 400.0, path_samples: 64, clearance: 1.75 }
    }
}

impl IntersectionGeometry {
    pub fn with_lanes(n_lanes: usize) -> Self {
        IntersectionGeometry { n_lanes, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n_lanes >= 1
            && self.lane_width > 0.0
            && self.arm_length > 0.0
            && self.clearance > 0.0
            && self.path_samples >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid intersection geometry {self:?}")))
        }
    }

    pub fn movement_count(&self) -> usize {
        12 * self.n_lanes
    }

    /// Half side of the square conflict zone (incoming plus outgoing lanes).
    pub fn half_width(&self) -> f64 {
        self.n_lanes as f64 * self.lane_width
    }

    /// Distance from the median to the centreline of lane `lane`.
    pub fn lane_offset(&self, lane: usize) -> f64 {
        (self.n_lanes as f64 - lane as f64 + 0.5) * self.lane_width
    }

    /// Signed lateral coordinate of a lane centre in the arm frame used for
    /// vehicle control (`+x` to the driver's left, median at zero).
    pub fn lane_lateral(&self, lane: usize) -> f64 {
        -self.lane_offset(lane)
    }

    /// Lane whose centre is closest to a lateral arm-frame coordinate.
    pub fn lane_at_lateral(&self, lateral: f64) -> usize {
        let l = self.n_lanes as f64 + 0.5 + lateral / self.lane_width;
        (l.round() as i64).clamp(1, self.n_lanes as i64) as usize
    }

    /// Stop-line point of incoming lane `lane` on `arm`.
    pub fn entry_point(&self, arm: Arm, lane: usize) -> Point {
        rotate_cw([-self.lane_offset(lane), self.half_width()], arm.index() - 1)
    }

    /// Stop-line point of outgoing lane `lane` on `arm`.
    pub fn exit_point(&self, arm: Arm, lane: usize) -> Point {
        rotate_cw([self.lane_offset(lane), self.half_width()], arm.index() - 1)
    }

    /// Unit travel direction of vehicles approaching on `arm`.
    pub fn inbound_direction(&self, arm: Arm) -> Point {
        rotate_cw([0.0, -1.0], arm.index() - 1)
    }

    /// Maps an arm-frame point (`lateral` positive to the driver's left,
    /// `station` measured from the arm entry) to world coordinates.
    pub fn arm_to_world(&self, arm: Arm, lateral: f64, station: f64) -> Point {
        let local = [lateral, self.half_width() + self.arm_length - station];
        rotate_cw(local, arm.index() - 1)
    }

    /// Sampled path of `m` through the conflict zone, from its stop-line entry
    /// to the exit lane with the same index.
    pub fn conflict_zone_path(&self, m: &Movement) -> Vec<Point> {
        let n = self.path_samples.max(2);
        let p0 = self.entry_point(m.arm, m.lane);
        let exit = m.exit_arm();
        let p2 = self.exit_point(exit, m.lane);
        match m.turn {
            Turn::Straight => (0..n)
                .map(|i| {
                    let t = i as f64 / (n - 1) as f64;
                    [p0[0] + t * (p2[0] - p0[0]), p0[1] + t * (p2[1] - p0[1])]
                })
                .collect(),
            Turn::Right | Turn::Left => {
                let d_in = self.inbound_direction(m.arm);
                // outbound direction on the exit arm points away from the centre
                let d_out = {
                    let d = self.inbound_direction(exit);
                    [-d[0], -d[1]]
                };
                let p1 = line_intersection(p0, d_in, p2, d_out);
                (0..n)
                    .map(|i| {
                        let t = i as f64 / (n - 1) as f64;
                        let u = 1.0 - t;
                        [
                            u * u * p0[0] + 2.0 * u * t * p1[0] + t * t * p2[0],
                            u * u * p0[1] + 2.0 * u * t * p1[1] + t * t * p2[1],
                        ]
                    })
                    .collect()
            }
        }
    }

    pub fn path_length(&self, m: &Movement) -> f64 {
        self.conflict_zone_path(m).windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

fn line_intersection(p: Point, d: Point, q: Point, e: Point) -> Point {
    // p + s d = q + u e
    let det = d[0] * (-e[1]) - d[1] * (-e[0]);
    let rx = q[0] - p[0];
    let ry = q[1] - p[1];
    let s = (rx * (-e[1]) - ry * (-e[0])) / det;
    [p[0] + s * d[0], p[1] + s * d[1]]
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_movements(n: usize) -> Vec<Movement> {
        (1..=12 * n).map(|c| decode_movement(c, n).unwrap()).collect()
    }

    #[test]
    fn code_examples() {
        assert_eq!(movement_code(1, 1, 1, 3).unwrap(), 1);
        assert_eq!(movement_code(4, 3, 3, 3).unwrap(), 36);
        assert_eq!(movement_code(2, 2, 2, 3).unwrap(), 14);
        assert!(movement_code(5, 1, 1, 3).is_err());
        assert!(movement_code(1, 0, 1, 3).is_err());
        assert!(movement_code(1, 1, 4, 3).is_err());
    }

    #[test]
    fn decode_examples() {
        let m = decode_movement(1, 3).unwrap();
        assert_eq!((m.arm, m.turn, m.lane), (Arm::North, Turn::Right, 1));
        let m = decode_movement(36, 3).unwrap();
        assert_eq!((m.arm, m.turn, m.lane), (Arm::West, Turn::Left, 3));
        let m = decode_movement(14, 3).unwrap();
        assert_eq!((m.arm, m.turn, m.lane), (Arm::East, Turn::Straight, 2));
        assert!(decode_movement(0, 3).is_err());
        assert!(decode_movement(37, 3).is_err());
    }

    #[test]
    fn encoding_is_bijective() {
        for n in 1..=4 {
            let mut seen = vec![false; 12 * n + 1];
            for m in all_movements(n) {
                let c = m.code(n).unwrap();
                assert!(!seen[c]);
                seen[c] = true;
                assert_eq!(decode_movement(c, n).unwrap(), m);
            }
        }
    }

    #[test]
    fn exit_arms() {
        assert_eq!(exit_arm(Arm::North, Turn::Straight), Arm::South);
        assert_eq!(exit_arm(Arm::North, Turn::Right), Arm::West);
        assert_eq!(exit_arm(Arm::East, Turn::Left), Arm::South);
        assert_eq!(exit_arm(Arm::West, Turn::Left), Arm::North);
    }

    #[test]
    fn straight_path_is_parallel_to_axis() {
        let g = IntersectionGeometry::default();
        let p = g.conflict_zone_path(&Movement::new(Arm::North, Turn::Straight, 2));
        assert!(p.len() >= g.path_samples);
        for q in &p {
            assert!((q[0] + 1.5 * 3.5).abs() < 1e-12);
        }
        assert!((p[0][1] - 10.5).abs() < 1e-12);
        assert!((p[p.len() - 1][1] + 10.5).abs() < 1e-12);
    }

    #[test]
    fn right_turn_stays_in_north_west_quadrant() {
        let g = IntersectionGeometry::default();
        let p = g.conflict_zone_path(&Movement::new(Arm::North, Turn::Right, 1));
        for q in &p {
            assert!(q[0] <= 1e-12 && q[1] >= -1e-12, "{q:?}");
            // within the outer lane band
            assert!(q[0] <= -2.5 * 3.5 + 1e-9 && q[1] >= 2.5 * 3.5 - 1e-9);
        }
    }

    #[test]
    fn inner_left_turn_passes_near_centre() {
        let g = IntersectionGeometry::default();
        let p = g.conflict_zone_path(&Movement::new(Arm::North, Turn::Left, 3));
        let closest = p.iter().map(|q| q[0].hypot(q[1])).fold(f64::INFINITY, f64::min);
        assert!(closest < g.lane_width, "closest approach {closest}");
    }

    #[test]
    fn paths_rotate_with_their_arm() {
        for n in 1..=3 {
            let g = IntersectionGeometry::with_lanes(n);
            for m in all_movements(n) {
                let a = g.conflict_zone_path(&m);
                let b = g.conflict_zone_path(&m.rotated(1));
                assert_eq!(a.len(), b.len());
                for (p, q) in a.iter().zip(&b) {
                    let r = rotate_cw(*p, 1);
                    assert!(dist(r, *q) < 1e-9, "{m}: {r:?} vs {q:?}");
                }
            }
        }
    }

    #[test]
    fn paths_keep_lane_index() {
        let g = IntersectionGeometry::default();
        for m in all_movements(3) {
            let p = g.conflict_zone_path(&m);
            assert!(dist(p[0], g.entry_point(m.arm, m.lane)) < 1e-12);
            assert!(dist(*p.last().unwrap(), g.exit_point(m.exit_arm(), m.lane)) < 1e-12);
        }
    }

    #[test]
    fn arm_frame_maps_lane_centre_to_entry_point() {
        let g = IntersectionGeometry::default();
        for arm in Arm::ALL {
            for lane in 1..=3 {
                let p = g.arm_to_world(arm, g.lane_lateral(lane), g.arm_length);
                assert!(dist(p, g.entry_point(arm, lane)) < 1e-9);
                assert_eq!(g.lane_at_lateral(g.lane_lateral(lane) + 0.3), lane);
            }
        }
    }
}
