//! Piecewise cubic Bézier reference paths through road points.

use crate::scenario::Point;
use crate::{Error, Result};

const SAMPLES_PER_PIECE: usize = 64;

// 5-point Gauss-Legendre on [-1, 1]
const GL_X: [f64; 5] =
    [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
const GL_W: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

#[derive(Debug, Clone, Copy)]
struct Sample {
    piece: usize,
    u: f64,
    point: Point,
    station: f64,
}

#[derive(Debug, Clone)]
pub struct ReferencePath {
    road_points: Vec<Point>,
    pieces: Vec<[Point; 4]>,
    samples: Vec<Sample>,
}

/// Closest point of a path to a query position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathProjection {
    pub station: f64,
    /// Signed distance, positive on the side a positive yaw rate turns toward.
    pub cross_track: f64,
    pub point: Point,
    /// Index of the polyline sample segment, usable as a search hint.
    pub segment: usize,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn unit(a: Point) -> Point {
    let n = norm(a);
    if n > 0.0 {
        [a[0] / n, a[1] / n]
    } else {
        [0.0, 1.0]
    }
}

fn bezier(c: &[Point; 4], u: f64) -> Point {
    let w = 1.0 - u;
    let (b0, b1, b2, b3) = (w * w * w, 3.0 * w * w * u, 3.0 * w * u * u, u * u * u);
    [
        b0 * c[0][0] + b1 * c[1][0] + b2 * c[2][0] + b3 * c[3][0],
        b0 * c[0][1] + b1 * c[1][1] + b2 * c[2][1] + b3 * c[3][1],
    ]
}

fn bezier_d1(c: &[Point; 4], u: f64) -> Point {
    let w = 1.0 - u;
    let (d0, d1, d2) = (3.0 * w * w, 6.0 * w * u, 3.0 * u * u);
    [
        d0 * (c[1][0] - c[0][0]) + d1 * (c[2][0] - c[1][0]) + d2 * (c[3][0] - c[2][0]),
        d0 * (c[1][1] - c[0][1]) + d1 * (c[2][1] - c[1][1]) + d2 * (c[3][1] - c[2][1]),
    ]
}

fn bezier_d2(c: &[Point; 4], u: f64) -> Point {
    let w = 1.0 - u;
    [
        6.0 * w * (c[2][0] - 2.0 * c[1][0] + c[0][0]) + 6.0 * u * (c[3][0] - 2.0 * c[2][0] + c[1][0]),
        6.0 * w * (c[2][1] - 2.0 * c[1][1] + c[0][1]) + 6.0 * u * (c[3][1] - 2.0 * c[2][1] + c[1][1]),
    ]
}

fn arc_length(c: &[Point; 4], u0: f64, u1: f64) -> f64 {
    let half = 0.5 * (u1 - u0);
    let mid = 0.5 * (u1 + u0);
    GL_X.iter().zip(GL_W).map(|(x, w)| w * norm(bezier_d1(c, mid + half * x))).sum::<f64>() * half
}

/// Cubic pieces with tangent continuity through `road_points`. Both end
/// tangents follow `direction`; interior tangents point from the previous to
/// the next road point, with handles a third of the adjacent chord long.
pub fn build_reference_path(road_points: &[Point], direction: Point) -> Result<ReferencePath> {
    let mut pts: Vec<Point> = Vec::with_capacity(road_points.len());
    for p in road_points {
        if pts.last().is_none_or(|q| norm(sub(*p, *q)) > 1e-9) {
            pts.push(*p);
        }
    }
    if pts.len() < 2 {
        return Err(Error::InvalidArgument("a reference path needs two distinct road points".into()));
    }
    let dir = unit(direction);
    let n = pts.len();
    let tangents: Vec<Point> =
        (0..n).map(|i| if i == 0 || i == n - 1 { dir } else { unit(sub(pts[i + 1], pts[i - 1])) }).collect();
    let pieces: Vec<[Point; 4]> = (0..n - 1)
        .map(|i| {
            let h = norm(sub(pts[i + 1], pts[i])) / 3.0;
            [
                pts[i],
                [pts[i][0] + h * tangents[i][0], pts[i][1] + h * tangents[i][1]],
                [pts[i + 1][0] - h * tangents[i + 1][0], pts[i + 1][1] - h * tangents[i + 1][1]],
                pts[i + 1],
            ]
        })
        .collect();
    let mut samples = Vec::with_capacity(pieces.len() * SAMPLES_PER_PIECE + 1);
    let mut station = 0.0;
    for (pi, c) in pieces.iter().enumerate() {
        for k in 0..SAMPLES_PER_PIECE {
            let u = k as f64 / SAMPLES_PER_PIECE as f64;
            if k > 0 {
                station += arc_length(c, (k - 1) as f64 / SAMPLES_PER_PIECE as f64, u);
            }
            samples.push(Sample { piece: pi, u, point: bezier(c, u), station });
        }
        station += arc_length(c, (SAMPLES_PER_PIECE - 1) as f64 / SAMPLES_PER_PIECE as f64, 1.0);
    }
    let last = pieces.len() - 1;
    samples.push(Sample { piece: last, u: 1.0, point: pts[n - 1], station });
    Ok(ReferencePath { road_points: pts, pieces, samples })
}

impl ReferencePath {
    pub fn length(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.station)
    }

    pub fn road_points(&self) -> &[Point] {
        &self.road_points
    }

    /// Station of every road point.
    pub fn road_point_stations(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.samples.iter().filter(|s| s.u == 0.0).map(|s| s.station).collect();
        out.push(self.length());
        out
    }

    fn locate(&self, station: f64) -> (usize, f64) {
        let s = station.clamp(0.0, self.length());
        let i = self.samples.partition_point(|x| x.station <= s).saturating_sub(1).min(self.samples.len() - 2);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let span = b.station - a.station;
        let f = if span > 0.0 { (s - a.station) / span } else { 0.0 };
        let u_end = if b.piece == a.piece { b.u } else { 1.0 };
        (a.piece, a.u + f * (u_end - a.u))
    }

    /// Point and unit tangent at a station; beyond the ends the path is
    /// extended along its end tangents.
    pub fn point_at(&self, station: f64) -> (Point, Point) {
        let len = self.length();
        if station > len || station < 0.0 {
            let (end, s_end) = if station > len { (self.pieces.len() - 1, 1.0) } else { (0, 0.0) };
            let c = &self.pieces[end];
            let t = unit(bezier_d1(c, s_end));
            let p = bezier(c, s_end);
            let d = if station > len { station - len } else { station };
            return ([p[0] + d * t[0], p[1] + d * t[1]], t);
        }
        let (pi, u) = self.locate(station);
        let c = &self.pieces[pi];
        (bezier(c, u), unit(bezier_d1(c, u)))
    }

    pub fn curvature_at(&self, station: f64) -> f64 {
        let (pi, u) = self.locate(station);
        let c = &self.pieces[pi];
        let d1 = bezier_d1(c, u);
        let d2 = bezier_d2(c, u);
        let n = norm(d1);
        if n == 0.0 {
            return 0.0;
        }
        (d1[0] * d2[1] - d1[1] * d2[0]) / (n * n * n)
    }

    /// Closest point on the sampled path. With a hint only nearby segments
    /// are searched.
    pub fn project(&self, q: Point, hint: Option<usize>) -> PathProjection {
        let nseg = self.samples.len() - 1;
        let (lo, hi) = match hint {
            Some(h) => (h.saturating_sub(8), (h + 9).min(nseg)),
            None => (0, nseg),
        };
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for i in lo..hi {
            let (a, b) = (self.samples[i].point, self.samples[i + 1].point);
            let d = sub(b, a);
            let len2 = d[0] * d[0] + d[1] * d[1];
            let t = if len2 > 0.0 { ((q[0] - a[0]) * d[0] + (q[1] - a[1]) * d[1]) / len2 } else { 0.0 };
            let t = t.clamp(0.0, 1.0);
            let p = [a[0] + t * d[0], a[1] + t * d[1]];
            let dist = norm(sub(q, p));
            if dist < best.0 {
                best = (dist, i, t);
            }
        }
        let (_, i, t) = best;
        if hint.is_some() && (i == lo && lo > 0 || i + 1 == hi && hi < nseg) {
            // drifted out of the window
            return self.project(q, None);
        }
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let d = sub(b.point, a.point);
        let p = [a.point[0] + t * d[0], a.point[1] + t * d[1]];
        let tan = unit(d);
        let normal = [tan[1], -tan[0]];
        let mut station = a.station + t * (b.station - a.station);
        let off = sub(q, p);
        // before the start or past the end, measure along the end tangents
        if (i == 0 && t == 0.0) || (i + 1 == nseg && t == 1.0) {
            station += off[0] * tan[0] + off[1] * tan[1];
        }
        PathProjection { station, cross_track: off[0] * normal[0] + off[1] * normal[1], point: p, segment: i }
    }
}
