//! Conflict relation between movements.
//!
//! Two movements conflict when they leave from the same lane (diverging),
//! arrive at the same lane (merging) or when their paths through the conflict
//! zone come closer than the geometry's clearance (crossing).

use serde::{Deserialize, Serialize};

use crate::scenario::{IntersectionGeometry, Movement, Point};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConflictKind {
    None,
    Diverging,
    Merging,
    Crossing,
}

/// Symmetric conflict matrix indexed by movement code (1-based).
#[derive(Debug, Clone)]
pub struct ConflictMatrix {
    n_lanes: usize,
    n: usize,
    kinds: Vec<ConflictKind>,
}

impl ConflictMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_lanes(&self) -> usize {
        self.n_lanes
    }

    pub fn kind(&self, mi: usize, mj: usize) -> Result<ConflictKind> {
        self.check(mi)?;
        self.check(mj)?;
        Ok(self.kinds[(mi - 1) * self.n + (mj - 1)])
    }

    pub fn in_conflict(&self, mi: usize, mj: usize) -> Result<bool> {
        Ok(self.kind(mi, mj)? != ConflictKind::None)
    }

    /// Conflict test on movements; panics only if a movement does not belong
    /// to this matrix's lane count.
    pub fn movements_conflict(&self, a: &Movement, b: &Movement) -> bool {
        let i = a.code(self.n_lanes).expect("movement outside matrix");
        let j = b.code(self.n_lanes).expect("movement outside matrix");
        self.kinds[(i - 1) * self.n + (j - 1)] != ConflictKind::None
    }

    fn check(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.n {
            Err(Error::InvalidArgument(format!("movement index {m} outside 1..={}", self.n)))
        } else {
            Ok(())
        }
    }

    /// CSV dump with a header row and column of movement codes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("M");
        for j in 1..=self.n {
            out.push_str(&format!(",{j}"));
        }
        out.push('\n');
        for i in 1..=self.n {
            out.push_str(&i.to_string());
            for j in 1..=self.n {
                let c = self.kinds[(i - 1) * self.n + (j - 1)] != ConflictKind::None;
                out.push_str(if c { ",1" } else { ",0" });
            }
            out.push('\n');
        }
        out
    }
}

pub fn build_conflict_matrix(g: &IntersectionGeometry) -> Result<ConflictMatrix> {
    g.validate()?;
    let n = g.movement_count();
    let movements: Vec<Movement> = (1..=n).map(|c| Movement::decode(c, g.n_lanes)).collect::<Result<_>>()?;
    let paths: Vec<Vec<Point>> = movements.iter().map(|m| g.conflict_zone_path(m)).collect();
    let mut kinds = vec![ConflictKind::None; n * n];
    for i in 0..n {
        for j in i..n {
            let k = classify_with_paths(&movements[i], &movements[j], &paths[i], &paths[j], g);
            kinds[i * n + j] = k;
            kinds[j * n + i] = k;
        }
    }
    Ok(ConflictMatrix { n_lanes: g.n_lanes, n, kinds })
}

pub fn classify_conflict(a: &Movement, b: &Movement, g: &IntersectionGeometry) -> ConflictKind {
    classify_with_paths(a, b, &g.conflict_zone_path(a), &g.conflict_zone_path(b), g)
}

fn classify_with_paths(
    a: &Movement,
    b: &Movement,
    pa: &[Point],
    pb: &[Point],
    g: &IntersectionGeometry,
) -> ConflictKind {
    if a.arm == b.arm && a.lane == b.lane {
        ConflictKind::Diverging
    } else if a.exit_arm() == b.exit_arm() && a.lane == b.lane {
        ConflictKind::Merging
    } else if polyline_distance(pa, pb) < g.clearance {
        ConflictKind::Crossing
    } else {
        ConflictKind::None
    }
}

/// Minimum distance between two polylines.
pub fn polyline_distance(a: &[Point], b: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for sa in a.windows(2) {
        for sb in b.windows(2) {
            best = best.min(segment_distance(sa[0], sa[1], sb[0], sb[1]));
            if best == 0.0 {
                return 0.0;
            }
        }
    }
    best
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

fn segment_distance(a0: Point, a1: Point, b0: Point, b1: Point) -> f64 {
    let d1 = orient(a0, a1, b0);
    let d2 = orient(a0, a1, b1);
    let d3 = orient(b0, b1, a0);
    let d4 = orient(b0, b1, a1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return 0.0;
    }
    point_segment_distance(a0, b0, b1)
        .min(point_segment_distance(a1, b0, b1))
        .min(point_segment_distance(b0, a0, a1))
        .min(point_segment_distance(b1, a0, a1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Arm, Turn};

    fn cm3() -> ConflictMatrix {
        build_conflict_matrix(&IntersectionGeometry::default()).unwrap()
    }

    #[test]
    fn diagonal_is_diverging() {
        let cm = cm3();
        for i in 1..=cm.n() {
            assert_eq!(cm.kind(i, i).unwrap(), ConflictKind::Diverging);
        }
    }

    #[test]
    fn same_index_right_turns_do_not_conflict() {
        let g = IntersectionGeometry::default();
        let cm = cm3();
        for lane in 1..=3 {
            let codes: Vec<usize> =
                Arm::ALL.iter().map(|&a| Movement::new(a, Turn::Right, lane).code(3).unwrap()).collect();
            for i in 0..4 {
                for j in (i + 1)..4 {
                    assert!(!cm.in_conflict(codes[i], codes[j]).unwrap(), "lane {lane}");
                }
            }
        }
        let _ = g;
    }

    #[test]
    fn perpendicular_straights_cross() {
        let g = IntersectionGeometry::default();
        let a = Movement::new(Arm::North, Turn::Straight, 2);
        let b = Movement::new(Arm::East, Turn::Straight, 2);
        assert_eq!(classify_conflict(&a, &b, &g), ConflictKind::Crossing);
        let cm = cm3();
        assert!(cm.in_conflict(a.code(3).unwrap(), b.code(3).unwrap()).unwrap());
    }

    #[test]
    fn classification_examples() {
        let g = IntersectionGeometry::default();
        let ns1 = Movement::new(Arm::North, Turn::Straight, 1);
        let nl1 = Movement::new(Arm::North, Turn::Left, 1);
        assert_eq!(classify_conflict(&ns1, &nl1, &g), ConflictKind::Diverging);
        // east right turn and south straight both end in north lane 1
        let er1 = Movement::new(Arm::East, Turn::Right, 1);
        let ss1 = Movement::new(Arm::South, Turn::Straight, 1);
        assert_eq!(classify_conflict(&er1, &ss1, &g), ConflictKind::Merging);
        let wl1 = Movement::new(Arm::West, Turn::Left, 1);
        assert_eq!(classify_conflict(&ns1, &wl1, &g), ConflictKind::Crossing);
        // opposite straights in parallel lanes
        let ss2 = Movement::new(Arm::South, Turn::Straight, 2);
        let ns2 = Movement::new(Arm::North, Turn::Straight, 2);
        assert_eq!(classify_conflict(&ns2, &ss2, &g), ConflictKind::None);
    }

    #[test]
    fn out_of_range_query_is_rejected() {
        let cm = cm3();
        assert!(cm.in_conflict(0, 1).is_err());
        assert!(cm.in_conflict(1, 37).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let cm = build_conflict_matrix(&IntersectionGeometry::with_lanes(1)).unwrap();
        let csv = cm.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 13);
        assert!(lines[0].starts_with("M,1,2"));
        assert!(lines[1].starts_with("1,1"));
    }
}
