//! Minimum-energy longitudinal schedules through timed waypoints.
//!
//! The decision variables are the accelerations `a(0..K)`. Every equality row
//! of the problem (station at a waypoint, terminal speed, an active speed
//! bound) only involves a prefix `a(0..k_r)` with coefficients affine in the
//! sample index, `p_r + q_r j`. That structure lets the dual Newton system be
//! assembled in `O(K + m^2)` from prefix moments of the free set.
//!
//! Acceleration bounds are handled inside the dual (`a = clip(C^T lambda)`),
//! speed bounds by an outer active set.

use serde::{Deserialize, Serialize};

use super::VehicleParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalProblem {
    /// Segment lengths, one per cycle, m.
    pub segments: Vec<f64>,
    pub t_f: f64,
    pub dt: f64,
    /// Initial speed.
    pub v0: f64,
    /// Terminal speed.
    pub v_f: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl LongitudinalProblem {
    /// Problem starting and ending at `v_f` with the vehicle's bounds.
    pub fn new(segments: Vec<f64>, t_f: f64, dt: f64, v_f: f64, p: &VehicleParams) -> Self {
        LongitudinalProblem {
            segments,
            t_f,
            dt,
            v0: v_f,
            v_f,
            v_min: p.v_min,
            v_max: p.v_max,
            a_min: p.a_min,
            a_max: p.a_max,
        }
    }

    pub fn steps_per_segment(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.t_f > 0.0) {
            return Err(Error::InvalidArgument("dt and T_F must be positive".into()));
        }
        let n = self.t_f / self.dt;
        let r = n.round();
        if r < 1.0 || (n - r).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("T_F / dt = {n} is not a positive integer")));
        }
        Ok(r as usize)
    }

    fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidArgument("no segments".into()));
        }
        if self.segments.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument(format!("bad segment lengths {:?}", self.segments)));
        }
        if !(self.a_min < 0.0 && self.a_max > 0.0 && self.v_min <= self.v_max) {
            return Err(Error::InvalidArgument("inconsistent bounds".into()));
        }
        for v in [self.v0, self.v_f] {
            if v < self.v_min - 1e-9 || v > self.v_max + 1e-9 {
                return Err(Error::InvalidArgument(format!("boundary speed {v} outside bounds")));
            }
        }
        Ok(())
    }
}

/// Accelerations and the states they produce under the discrete dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub dt: f64,
    pub a: Vec<f64>,
    /// Station, `K + 1` samples starting at 0.
    pub s: Vec<f64>,
    /// Speed, `K + 1` samples.
    pub v: Vec<f64>,
}

impl ControlSchedule {
    pub fn from_accelerations(a: Vec<f64>, v0: f64, dt: f64) -> Self {
        let mut s = Vec::with_capacity(a.len() + 1);
        let mut v = Vec::with_capacity(a.len() + 1);
        s.push(0.0);
        v.push(v0);
        for (k, ak) in a.iter().enumerate() {
            s.push(s[k] + v[k] * dt);
            v.push(v[k] + ak * dt);
        }
        ControlSchedule { dt, a, s, v }
    }

    pub fn cost(&self) -> f64 {
        self.a.iter().map(|x| x * x).sum()
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Acceleration at sample `k`, zero after the end.
    pub fn accel(&self, k: usize) -> f64 {
        self.a.get(k).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RowKind {
    Equality,
    Upper,
    Lower,
}

/// `sum_{j < k} (p + q j) a_j = b`
#[derive(Debug, Clone, Copy)]
struct Row {
    k: usize,
    p: f64,
    q: f64,
    b: f64,
    kind: RowKind,
}

struct Dual<'a> {
    rows: &'a [Row],
    /// Row indices sorted by decreasing `k`.
    order: Vec<usize>,
    n: usize,
    lo: f64,
    hi: f64,
}

impl<'a> Dual<'a> {
    fn new(rows: &'a [Row], n: usize, lo: f64, hi: f64) -> Self {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[b].k.cmp(&rows[a].k));
        Dual { rows, order, n, lo, hi }
    }

    /// `C^T lambda`
    fn ct(&self, lambda: &[f64], out: &mut [f64]) {
        let (mut pp, mut qq) = (0.0, 0.0);
        let mut next = 0;
        for j in (0..self.n).rev() {
            while next < self.order.len() && self.rows[self.order[next]].k > j {
                let r = &self.rows[self.order[next]];
                pp += lambda[self.order[next]] * r.p;
                qq += lambda[self.order[next]] * r.q;
                next += 1;
            }
            out[j] = pp + qq * j as f64;
        }
    }

    /// `C a`
    fn c(&self, a: &[f64], out: &mut [f64]) {
        let mut a0 = vec![0.0; self.n + 1];
        let mut a1 = vec![0.0; self.n + 1];
        for (j, x) in a.iter().enumerate() {
            a0[j + 1] = a0[j] + x;
            a1[j + 1] = a1[j] + x * j as f64;
        }
        for (o, r) in out.iter_mut().zip(self.rows) {
            *o = r.p * a0[r.k] + r.q * a1[r.k];
        }
    }

    fn primal(&self, lambda: &[f64], a: &mut [f64]) {
        self.ct(lambda, a);
        for x in a.iter_mut() {
            *x = x.clamp(self.lo, self.hi);
        }
    }

    fn objective(&self, lambda: &[f64], a: &mut [f64], ca: &mut [f64]) -> f64 {
        self.primal(lambda, a);
        self.c(a, ca);
        let half: f64 = 0.5 * a.iter().map(|x| x * x).sum::<f64>();
        half - lambda.iter().zip(ca.iter().zip(self.rows)).map(|(l, (c, r))| l * (c - r.b)).sum::<f64>()
    }

    /// `C D C^T` where `D` selects the unclipped samples.
    fn jacobian(&self, u: &[f64]) -> Vec<f64> {
        let mut f0 = vec![0.0; self.n + 1];
        let mut f1 = vec![0.0; self.n + 1];
        let mut f2 = vec![0.0; self.n + 1];
        for j in 0..self.n {
            let free = u[j] > self.lo && u[j] < self.hi;
            let jf = j as f64;
            f0[j + 1] = f0[j] + if free { 1.0 } else { 0.0 };
            f1[j + 1] = f1[j] + if free { jf } else { 0.0 };
            f2[j + 1] = f2[j] + if free { jf * jf } else { 0.0 };
        }
        let m = self.rows.len();
        let mut jm = vec![0.0; m * m];
        for r in 0..m {
            for s in r..m {
                let (a, b) = (&self.rows[r], &self.rows[s]);
                let k = a.k.min(b.k);
                let v = a.p * b.p * f0[k] + (a.p * b.q + a.q * b.p) * f1[k] + a.q * b.q * f2[k];
                jm[r * m + s] = v;
                jm[s * m + r] = v;
            }
        }
        jm
    }
}

/// Solves `J x = r` for symmetric positive semidefinite `J` with a small
/// diagonal shift.
fn solve_spd(mut j: Vec<f64>, r: &[f64]) -> Vec<f64> {
    let m = r.len();
    let scale = (0..m).map(|i| j[i * m + i]).fold(0.0f64, f64::max).max(1e-300);
    for i in 0..m {
        j[i * m + i] += 1e-13 * scale + 1e-300;
    }
    // Cholesky, lower triangle in place
    for c in 0..m {
        let mut d = j[c * m + c];
        for k in 0..c {
            d -= j[c * m + k] * j[c * m + k];
        }
        let d = d.max(1e-14 * scale).sqrt();
        j[c * m + c] = d;
        for i in c + 1..m {
            let mut v = j[i * m + c];
            for k in 0..c {
                v -= j[i * m + k] * j[c * m + k];
            }
            j[i * m + c] = v / d;
        }
    }
    let mut y = r.to_vec();
    for i in 0..m {
        for k in 0..i {
            y[i] -= j[i * m + k] * y[k];
        }
        y[i] /= j[i * m + i];
    }
    for i in (0..m).rev() {
        for k in i + 1..m {
            y[i] -= j[k * m + i] * y[k];
        }
        y[i] /= j[i * m + i];
    }
    y
}

const MAX_NEWTON: usize = 200;
const MAX_OUTER: usize = 60;
const RESIDUAL_TOL: f64 = 1e-11;
const STALL_TOL: f64 = 1e-8;
const BOUND_MARGIN: f64 = 1e-9;

/// Semismooth Newton on the dual of `min 1/2 |a|^2 s.t. C a = b, lo <= a <= hi`.
fn solve_equality_box(rows: &[Row], n: usize, lo: f64, hi: f64, lambda: &mut [f64]) -> Result<Vec<f64>> {
    let dual = Dual::new(rows, n, lo, hi);
    let m = rows.len();
    let mut u = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut ca = vec![0.0; m];
    let mut trial = vec![0.0; m];
    // magnitude of each row's left-hand side at the largest admissible control
    let amax = lo.abs().max(hi.abs());
    let scale: Vec<f64> =
        rows.iter().map(|r| amax * (r.p.abs() * r.k as f64 + r.q.abs() * (r.k * r.k) as f64 / 2.0)).collect();
    let mut prev_rel = f64::INFINITY;
    for _ in 0..MAX_NEWTON {
        dual.ct(lambda, &mut u);
        for (x, y) in a.iter_mut().zip(&u) {
            *x = y.clamp(lo, hi);
        }
        dual.c(&a, &mut ca);
        let res: Vec<f64> = rows.iter().zip(&ca).map(|(r, c)| r.b - c).collect();
        let rel =
            res.iter().zip(rows.iter().zip(&scale)).map(|(x, (r, s))| x.abs() / (s + r.b.abs())).fold(0.0, f64::max);
        // stop at the tolerance, or at the round-off floor once close enough
        if rel <= RESIDUAL_TOL || (rel <= STALL_TOL && rel > 0.5 * prev_rel) {
            return Ok(a);
        }
        prev_rel = rel;
        let step = solve_spd(dual.jacobian(&u), &res);
        let q0 = dual.objective(lambda, &mut a, &mut ca);
        let slope: f64 = res.iter().zip(&step).map(|(r, d)| r * d).sum();
        let mut t = 1.0;
        loop {
            for i in 0..m {
                trial[i] = lambda[i] + t * step[i];
            }
            let q = dual.objective(&trial, &mut a, &mut ca);
            if q >= q0 + 1e-4 * t * slope {
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                // no ascent left: either round-off or an infeasible system
                if rel <= STALL_TOL {
                    dual.primal(lambda, &mut a);
                    return Ok(a);
                }
                return Err(Error::LongitudinalInfeasible("dual ascent stalled".into()));
            }
        }
        lambda.copy_from_slice(&trial);
    }
    Err(Error::LongitudinalInfeasible("waypoints unreachable within the acceleration bounds".into()))
}

/// Minimum `sum a^2` schedule hitting every waypoint on time and ending at the
/// terminal speed, within the speed and acceleration bounds.
pub fn plan_longitudinal(prob: &LongitudinalProblem) -> Result<ControlSchedule> {
    prob.validate()?;
    let nk = prob.steps_per_segment()?;
    let n = nk * prob.segments.len();
    let dt = prob.dt;
    let mut rows = Vec::with_capacity(prob.segments.len() + 1);
    let mut cum = 0.0;
    for (i, seg) in prob.segments.iter().enumerate() {
        cum += seg;
        let k = (i + 1) * nk;
        rows.push(Row {
            k,
            p: dt * dt * (k as f64 - 1.0),
            q: -dt * dt,
            b: cum - k as f64 * dt * prob.v0,
            kind: RowKind::Equality,
        });
    }
    rows.push(Row { k: n, p: dt, q: 0.0, b: prob.v_f - prob.v0, kind: RowKind::Equality });

    let mut lambda = vec![0.0; rows.len()];
    for _ in 0..MAX_OUTER {
        let a = solve_equality_box(&rows, n, prob.a_min, prob.a_max, &mut lambda)?;

        // drop speed-bound rows that hold the solution the wrong way
        let keep: Vec<bool> = rows
            .iter()
            .zip(&lambda)
            .map(|(r, l)| match r.kind {
                RowKind::Equality => true,
                RowKind::Upper => *l <= 1e-12,
                RowKind::Lower => *l >= -1e-12,
            })
            .collect();
        if keep.iter().any(|k| !k) {
            let (r2, l2): (Vec<Row>, Vec<f64>) =
                rows.iter().zip(&lambda).zip(&keep).filter(|(_, k)| **k).map(|((r, l), _)| (*r, *l)).unzip();
            rows = r2;
            lambda = l2;
            continue;
        }

        let sched = ControlSchedule::from_accelerations(a, prob.v0, dt);
        let added = add_violated_bounds(&sched.v, prob, &mut rows, &mut lambda);
        if !added {
            return Ok(sched);
        }
    }
    Err(Error::LongitudinalInfeasible("speed bounds could not be resolved".into()))
}

/// Adds one speed-bound row per run of consecutive violating samples, at the
/// worst sample of the run. Returns whether any row was added.
fn add_violated_bounds(v: &[f64], prob: &LongitudinalProblem, rows: &mut Vec<Row>, lambda: &mut Vec<f64>) -> bool {
    let dt = prob.dt;
    let mut added = false;
    let mut k = 1;
    while k < v.len() {
        let over = v[k] - prob.v_max;
        let under = prob.v_min - v[k];
        if over > BOUND_MARGIN || under > BOUND_MARGIN {
            let upper = over > 0.0;
            let excess = |i: usize| if upper { v[i] - prob.v_max } else { prob.v_min - v[i] };
            let mut worst = k;
            while k < v.len() && excess(k) > BOUND_MARGIN {
                if excess(k) > excess(worst) {
                    worst = k;
                }
                k += 1;
            }
            let (bound, kind) = if upper {
                (prob.v_max - BOUND_MARGIN, RowKind::Upper)
            } else {
                (prob.v_min + BOUND_MARGIN, RowKind::Lower)
            };
            if !rows.iter().any(|r| r.kind != RowKind::Equality && r.k == worst) {
                rows.push(Row { k: worst, p: dt, q: 0.0, b: bound - prob.v0, kind });
                lambda.push(0.0);
                added = true;
            }
        } else {
            k += 1;
        }
    }
    added
}

/// Re-poses the problem at a segment boundary from the measured state.
///
/// `shortfall` is how far the vehicle is behind its planned station; it is
/// added to the first remaining segment so the later waypoints stay put.
pub fn replan_longitudinal(
    shortfall: f64,
    v_now: f64,
    remaining: &[f64],
    base: &LongitudinalProblem,
) -> Result<ControlSchedule> {
    let mut segments = remaining.to_vec();
    if let Some(first) = segments.first_mut() {
        *first = (*first + shortfall).max(0.0);
    }
    let prob = LongitudinalProblem { segments, v0: v_now.clamp(base.v_min, base.v_max), ..base.clone() };
    plan_longitudinal(&prob)
}
