//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;

use laneflex::conflict::ConflictMatrix;
use laneflex::rcs::{Connectivity, CostMode, RelativePoint};
use laneflex::scenario::{Arm, Movement, Point, Turn};
use laneflex::scheduler::{LanePolicy, VehicleRecord};
use laneflex::vehicle::LongitudinalProblem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One status line per acceptance criterion. Written straight to the process
/// stderr so it shows up even when the harness captures test output.
pub fn criterion_line(n: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("\ncriterion {n} [{verdict}] {title}: {detail}\n");
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(line.as_bytes());
    let _ = err.flush();
}

// ---------------------------------------------------------------- geometry

/// A movement's path through the zone as an analytic curve: a straight
/// segment or a quadratic Bezier whose control point is the corner where the
/// entry and exit lane centrelines meet.
#[derive(Debug, Clone, Copy)]
pub struct Curve {
    p0: Point,
    p1: Point,
    p2: Point,
}

impl Curve {
    pub fn at(&self, t: f64) -> Point {
        let u = 1.0 - t;
        [
            u * u * self.p0[0] + 2.0 * u * t * self.p1[0] + t * t * self.p2[0],
            u * u * self.p0[1] + 2.0 * u * t * self.p1[1] + t * t * self.p2[1],
        ]
    }
}

fn rotate_clockwise(p: Point, quarter_turns: usize) -> Point {
    let phi = std::f64::consts::FRAC_PI_2 * quarter_turns as f64;
    let (s, c) = phi.sin_cos();
    let r = [p[0] * c + p[1] * s, -p[0] * s + p[1] * c];
    // snap the trig noise so that symmetric geometry stays symmetric
    [(r[0] * 1e9).round() / 1e9, (r[1] * 1e9).round() / 1e9]
}

/// Curve of `m` worked out in the frame of the north arm (traffic heading
/// south, driving on the right) and rotated onto the movement's own arm.
pub fn movement_curve(m: &Movement, n_lanes: usize, lane_width: f64) -> Curve {
    let h = n_lanes as f64 * lane_width;
    let off = (n_lanes as f64 - m.lane as f64 + 0.5) * lane_width;
    let entry = [-off, h];
    let (exit, corner) = match m.turn {
        // leaves westbound at y = off
        Turn::Right => ([-h, off], [-off, off]),
        // leaves southbound at x = -off
        Turn::Straight => ([-off, -h], [-off, 0.0]),
        // leaves eastbound at y = -off
        Turn::Left => ([h, -off], [-off, -off]),
    };
    let q = m.arm.index() - 1;
    let (p0, p2) = (rotate_clockwise(entry, q), rotate_clockwise(exit, q));
    let p1 = if m.turn == Turn::Straight {
        [(p0[0] + p2[0]) / 2.0, (p0[1] + p2[1]) / 2.0]
    } else {
        rotate_clockwise(corner, q)
    };
    Curve { p0, p1, p2 }
}

fn d2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Minimum distance between two curves: dense sampling, then repeated zooming
/// around the best parameter pair.
pub fn curve_distance(a: &Curve, b: &Curve) -> f64 {
    const N: usize = 400;
    let pa: Vec<Point> = (0..=N).map(|i| a.at(i as f64 / N as f64)).collect();
    let pb: Vec<Point> = (0..=N).map(|i| b.at(i as f64 / N as f64)).collect();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for (i, p) in pa.iter().enumerate() {
        for (j, q) in pb.iter().enumerate() {
            let d = d2(*p, *q);
            if d < best.0 {
                best = (d, i as f64 / N as f64, j as f64 / N as f64);
            }
        }
    }
    let mut half = 2.0 / N as f64;
    for _ in 0..8 {
        let (_, s0, t0) = best;
        for i in 0..=40 {
            let s = (s0 - half + 2.0 * half * i as f64 / 40.0).clamp(0.0, 1.0);
            let p = a.at(s);
            for j in 0..=40 {
                let t = (t0 - half + 2.0 * half * j as f64 / 40.0).clamp(0.0, 1.0);
                let d = d2(p, b.at(t));
                if d < best.0 {
                    best = (d, s, t);
                }
            }
        }
        half /= 10.0;
    }
    best.0.sqrt()
}

/// Conflict rule evaluated on the analytic curves.
pub fn oracle_conflict(a: &Movement, b: &Movement, n_lanes: usize, lane_width: f64, clearance: f64) -> bool {
    if a.arm == b.arm && a.lane == b.lane {
        return true;
    }
    if a.exit_arm() == b.exit_arm() && a.lane == b.lane {
        return true;
    }
    let (ca, cb) = (movement_curve(a, n_lanes, lane_width), movement_curve(b, n_lanes, lane_width));
    curve_distance(&ca, &cb) < clearance
}

pub fn all_movements(n_lanes: usize) -> Vec<Movement> {
    let mut out = Vec::new();
    for arm in Arm::ALL {
        for turn in Turn::ALL {
            for lane in 1..=n_lanes {
                out.push(Movement::new(arm, turn, lane));
            }
        }
    }
    out
}

// ---------------------------------------------------------------- grouping

pub fn selectable(policy: LanePolicy, turn: Turn, n_lanes: usize) -> Vec<usize> {
    match policy {
        LanePolicy::Flexible => (1..=n_lanes).collect(),
        LanePolicy::Fixed => vec![match turn {
            Turn::Right => 1,
            Turn::Straight => n_lanes.div_ceil(2),
            Turn::Left => n_lanes,
        }],
    }
}

/// Smallest number of layers into which the vehicles can be split, each
/// layer pairwise conflict-free at some lane choice, with vehicle `id` held
/// out of layers below `min_layer(id)`. Exhaustive; meant for ten vehicles
/// or fewer.
pub fn brute_force_min_layers(
    vehicles: &[VehicleRecord],
    cm: &ConflictMatrix,
    policy: LanePolicy,
    min_layer: &dyn Fn(usize) -> usize,
) -> usize {
    fn place(
        i: usize,
        k: usize,
        vehicles: &[VehicleRecord],
        cm: &ConflictMatrix,
        policy: LanePolicy,
        min_layer: &dyn Fn(usize) -> usize,
        placed: &mut Vec<(usize, Movement)>,
    ) -> bool {
        let Some(v) = vehicles.get(i) else { return true };
        for layer in min_layer(v.id)..=k {
            for lane in selectable(policy, v.turn, cm.n_lanes()) {
                let m = Movement::new(v.arm, v.turn, lane);
                if placed.iter().any(|(l, o)| *l == layer && cm.movements_conflict(&m, o)) {
                    continue;
                }
                placed.push((layer, m));
                if place(i + 1, k, vehicles, cm, policy, min_layer, placed) {
                    return true;
                }
                placed.pop();
            }
        }
        false
    }
    let lowest = vehicles.iter().map(|v| min_layer(v.id)).max().unwrap_or(1);
    (lowest..)
        .find(|&k| place(0, k, vehicles, cm, policy, min_layer, &mut Vec::new()))
        .expect("some layer count always works")
}

/// `n` vehicles with uniform arms, turns and lanes, spread over the approach
/// and numbered from the stop line backwards.
pub fn random_sequence(seed: u64, n: usize, n_lanes: usize) -> Vec<VehicleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..400.0)).collect();
    d.sort_by(f64::total_cmp);
    d.into_iter()
        .enumerate()
        .map(|(id, distance)| VehicleRecord {
            id,
            arm: Arm::ALL[rng.random_range(0..4)],
            turn: Turn::ALL[rng.random_range(0..3)],
            lane: rng.random_range(1..=n_lanes),
            distance,
            speed: 10.0,
        })
        .collect()
}

// ---------------------------------------------------------------- planning

fn offsets(c: Connectivity) -> &'static [(i32, i32)] {
    match c {
        Connectivity::Four => &[(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    }
}

fn grid_distance(c: Connectivity, a: (i32, i32), b: (i32, i32)) -> u64 {
    let (dx, dy) = ((a.0 - b.0).abs(), (a.1 - b.1).abs());
    match c {
        Connectivity::Four => (dx + dy) as u64,
        Connectivity::Eight => dx.max(dy) as u64,
    }
}

/// Two simultaneous moves collide when, moving linearly, the vehicles come
/// closer than one cell on both axes at some instant. The separation is
/// piecewise linear with kinks at multiples of 1/12 for unit moves, so the
/// samples below find its minimum exactly.
pub fn sampled_move_conflict(a0: (i32, i32), a1: (i32, i32), b0: (i32, i32), b1: (i32, i32)) -> bool {
    (0..=12).any(|k| {
        let u = k as f64 / 12.0;
        let ax = a0.0 as f64 + u * (a1.0 - a0.0) as f64;
        let ay = a0.1 as f64 + u * (a1.1 - a0.1) as f64;
        let bx = b0.0 as f64 + u * (b1.0 - b0.0) as f64;
        let by = b0.1 as f64 + u * (b1.1 - b0.1) as f64;
        (ax - bx).abs().max((ay - by).abs()) < 1.0 - 1e-9
    })
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Joint {
    pos: Vec<(i32, i32)>,
    done: u32,
}

/// Optimal sum of costs over the joint state space, or `None` when no
/// conflict-free plan exists. Vehicles live on `lanes x x_len` cells
/// (`x` in `0..x_len`, lanes `1..=lanes`) and hold their goal once done.
///
/// In arrival mode a vehicle commits to being finished when it steps on its
/// goal and never moves again; every step costs the number of vehicles still
/// unfinished. In distance mode a step costs the number of vehicles that move.
pub fn joint_optimum(
    agents: &[(RelativePoint, RelativePoint)],
    lanes: i32,
    x_len: i32,
    conn: Connectivity,
    mode: CostMode,
) -> Option<u64> {
    let n = agents.len();
    let goals: Vec<(i32, i32)> = agents.iter().map(|(_, g)| (g.x, g.y)).collect();
    let inside = |p: (i32, i32)| p.0 >= 0 && p.0 < x_len && p.1 >= 1 && p.1 <= lanes;
    let all_done = (1u32 << n) - 1;
    let h = |s: &Joint| -> u64 {
        (0..n).filter(|&i| s.done & (1 << i) == 0).map(|i| grid_distance(conn, s.pos[i], goals[i])).sum()
    };
    let finished = |s: &Joint| match mode {
        CostMode::ArrivalTime => s.done == all_done,
        CostMode::TotalDistance => s.pos == goals,
    };
    // In arrival mode each vehicle standing on its goal may or may not commit.
    let commit_options = |pos: &[(i32, i32)], done: u32| -> Vec<u32> {
        if mode == CostMode::TotalDistance {
            return vec![0];
        }
        let free: Vec<usize> = (0..n).filter(|&i| done & (1 << i) == 0 && pos[i] == goals[i]).collect();
        (0..1u32 << free.len())
            .map(|sub| free.iter().enumerate().filter(|(b, _)| sub & (1 << b) != 0).fold(done, |m, (_, &i)| m | 1 << i))
            .collect()
    };

    let start: Vec<(i32, i32)> = agents.iter().map(|(s, _)| (s.x, s.y)).collect();
    let mut best: HashMap<Joint, u64> = HashMap::new();
    let mut open = BinaryHeap::new();
    for done in commit_options(&start, 0) {
        let s = Joint { pos: start.clone(), done };
        best.insert(s.clone(), 0);
        open.push(Reverse((h(&s), 0u64, s)));
    }
    let moves = offsets(conn);
    while let Some(Reverse((_, g, s))) = open.pop() {
        if best.get(&s).is_some_and(|&b| b < g) {
            continue;
        }
        if finished(&s) {
            return Some(g);
        }
        let unfinished = (0..n).filter(|&i| s.done & (1 << i) == 0).count() as u64;
        // enumerate joint moves agent by agent, pruning as conflicts appear
        let mut stack: Vec<(usize, Vec<(i32, i32)>)> = vec![(0, Vec::with_capacity(n))];
        while let Some((i, next)) = stack.pop() {
            if i == n {
                let step = match mode {
                    CostMode::ArrivalTime => unfinished,
                    CostMode::TotalDistance => (0..n).filter(|&k| next[k] != s.pos[k]).count() as u64,
                };
                for done in commit_options(&next, s.done) {
                    let t = Joint { pos: next.clone(), done };
                    let ng = g + step;
                    if best.get(&t).is_none_or(|&b| ng < b) {
                        best.insert(t.clone(), ng);
                        open.push(Reverse((ng + h(&t), ng, t)));
                    }
                }
                continue;
            }
            let here = s.pos[i];
            let options: &[(i32, i32)] = if s.done & (1 << i) != 0 { &[(0, 0)] } else { moves };
            for &(dx, dy) in options {
                let to = (here.0 + dx, here.1 + dy);
                if !inside(to) {
                    continue;
                }
                let clash = (0..i).any(|k| next[k] == to || sampled_move_conflict(here, to, s.pos[k], next[k]));
                if clash {
                    continue;
                }
                let mut nx = next.clone();
                nx.push(to);
                stack.push((i + 1, nx));
            }
        }
    }
    None
}

// ---------------------------------------------------------------- control

/// Minimum of the summed squared accelerations for `prob`, solved as a
/// generic sparse QP over accelerations, speeds and stations with an
/// interior-point solver. Returns the cost and the accelerations.
pub fn qp_oracle(prob: &LongitudinalProblem) -> (f64, Vec<f64>) {
    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

    let nk = (prob.t_f / prob.dt).round() as usize;
    let k = nk * prob.segments.len();
    let dt = prob.dt;
    // x = [a_0..a_{K-1}, v_0..v_K, s_0..s_K]
    let ia = |j: usize| j;
    let iv = |j: usize| k + j;
    let is = |j: usize| 2 * k + 1 + j;
    let nx = 3 * k + 2;

    let (mut rows, mut cols, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut row = 0;
    let mut eq = |terms: &[(usize, f64)], rhs: f64, rows: &mut Vec<usize>, b: &mut Vec<f64>| {
        for &(c, v) in terms {
            rows.push(row);
            cols.push(c);
            vals.push(v);
        }
        b.push(rhs);
        row += 1;
    };
    eq(&[(iv(0), 1.0)], prob.v0, &mut rows, &mut b);
    eq(&[(is(0), 1.0)], 0.0, &mut rows, &mut b);
    for j in 0..k {
        eq(&[(iv(j + 1), 1.0), (iv(j), -1.0), (ia(j), -dt)], 0.0, &mut rows, &mut b);
        eq(&[(is(j + 1), 1.0), (is(j), -1.0), (iv(j), -dt)], 0.0, &mut rows, &mut b);
    }
    let mut cum = 0.0;
    for (i, seg) in prob.segments.iter().enumerate() {
        cum += seg;
        eq(&[(is((i + 1) * nk), 1.0)], cum, &mut rows, &mut b);
    }
    eq(&[(iv(k), 1.0)], prob.v_f, &mut rows, &mut b);
    let n_eq = b.len();
    // inequalities: row . x <= rhs
    for j in 0..k {
        eq(&[(ia(j), 1.0)], prob.a_max, &mut rows, &mut b);
        eq(&[(ia(j), -1.0)], -prob.a_min, &mut rows, &mut b);
    }
    for j in 1..=k {
        eq(&[(iv(j), 1.0)], prob.v_max, &mut rows, &mut b);
        eq(&[(iv(j), -1.0)], -prob.v_min, &mut rows, &mut b);
    }
    let n_ineq = b.len() - n_eq;
    let a_mat = CscMatrix::new_from_triplets(b.len(), nx, rows, cols, vals);
    let p_mat = CscMatrix::new_from_triplets(nx, nx, (0..k).collect(), (0..k).collect(), vec![2.0; k]);
    let q = vec![0.0; nx];
    let cones = [SupportedConeT::ZeroConeT(n_eq), SupportedConeT::NonnegativeConeT(n_ineq)];
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .build()
        .expect("solver settings");
    let mut solver = DefaultSolver::new(&p_mat, &q, &a_mat, &b, &cones, settings).expect("well-formed QP");
    solver.solve();
    assert!(
        matches!(solver.solution.status, SolverStatus::Solved | SolverStatus::AlmostSolved),
        "QP oracle status {:?}",
        solver.solution.status
    );
    let a: Vec<f64> = solver.solution.x[..k].to_vec();
    (a.iter().map(|x| x * x).sum(), a)
}
