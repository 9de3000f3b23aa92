//! Fixed-time signal baseline.
//!
//! Vehicles drive their turn's fixed lane and move along it in one dimension.
//! Car following uses a Gipps-style safe speed; the stop line acts as a
//! standing obstacle unless the vehicle can reach it before its green ends.
//! The conflict zone is crossed at the cruise speed.

use std::collections::BTreeMap;

use super::metrics::{Diagnostics, MetricsReport, SafetyReport, TrajectoryLog, TrajectoryRecord, VehicleOutcome};
use super::traffic::{generate_traffic, Arrival};
use super::{spacing_check, zone_check, ScenarioConfig, SimOutput, ZonePaths};
use crate::conflict::build_conflict_matrix;
use crate::scenario::{Arm, Movement};
use crate::scheduler::fixed_lane;
use crate::vehicle::heading_of;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Waiting,
    Arm,
    Zone,
    Done,
}

struct Car {
    arr: Arrival,
    lane: usize,
    stage: Stage,
    s: f64,
    v: f64,
    a: f64,
    admitted: f64,
    crossed: f64,
    zone_s: f64,
}

/// Largest speed that still lets the follower stop behind a leader braking
/// at `b`, after a reaction time `tau`, within gap `g`.
fn safe_speed(g: f64, v_lead: f64, b: f64, tau: f64) -> f64 {
    -b * tau + (b * b * tau * tau + v_lead * v_lead + 2.0 * b * g.max(0.0)).sqrt()
}

/// Time to cover `d` from speed `v`, accelerating at `a` up to `v_top`.
fn time_to_reach(d: f64, v: f64, a: f64, v_top: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    let v = v.min(v_top);
    let t_acc = (v_top - v) / a;
    let d_acc = v * t_acc + 0.5 * a * t_acc * t_acc;
    if d <= d_acc {
        (-v + (v * v + 2.0 * a * d).sqrt()) / a
    } else {
        t_acc + (d - d_acc) / v_top
    }
}

pub(super) fn simulate(cfg: &ScenarioConfig) -> Result<SimOutput> {
    let g = &cfg.geometry;
    let l = g.arm_length;
    let dt = cfg.dt;
    let v_f = cfg.formation.v_f;
    let vp = &cfg.vehicle;
    let fm = &cfg.following;
    let envelope = 0.5 * cfg.formation.d_f;
    let cm = build_conflict_matrix(g)?;
    let zones = ZonePaths::new(g);

    let mut cars: Vec<Car> = generate_traffic(cfg)
        .into_iter()
        .map(|arr| Car {
            arr,
            lane: fixed_lane(arr.turn, g.n_lanes),
            stage: Stage::Waiting,
            s: 0.0,
            v: 0.0,
            a: 0.0,
            admitted: f64::NAN,
            crossed: f64::NAN,
            zone_s: 0.0,
        })
        .collect();
    let mut safety = SafetyReport::default();
    let mut log =
        cfg.log_trajectories.then(|| TrajectoryLog { interval: cfg.log_every as f64 * dt, frames: Vec::new() });
    let max_ticks = (cfg.max_time / dt).ceil() as u64;

    // Per (arm, lane): indices of vehicles on the arm, front first.
    let mut queues: BTreeMap<(Arm, usize), Vec<usize>> = BTreeMap::new();
    let mut k: u64 = 0;
    while cars.iter().any(|c| c.stage != Stage::Done) {
        if k > max_ticks {
            let waiting = cars.iter().filter(|c| c.stage != Stage::Done).count();
            return Err(Error::SchedulingFailure {
                rounds: 0,
                reason: format!("{waiting} vehicles unfinished at t = {}", cfg.max_time),
            });
        }
        let t = k as f64 * dt;

        // Admission, one per lane per tick.
        let mut heads: BTreeMap<(Arm, usize), usize> = BTreeMap::new();
        for (i, c) in cars.iter().enumerate() {
            if c.stage == Stage::Waiting && c.arr.time <= t {
                heads.entry((c.arr.arm, c.lane)).or_insert(i);
            }
        }
        for (key, i) in heads {
            let q = queues.entry(key).or_default();
            let v_in = match q.last() {
                None => v_f,
                Some(&j) => {
                    let gap = cars[j].s - envelope - fm.standstill_gap;
                    if gap < 0.0 {
                        continue;
                    }
                    v_f.min(safe_speed(gap, cars[j].v, fm.comfortable_decel, fm.reaction_time))
                }
            };
            q.push(i);
            let c = &mut cars[i];
            c.stage = Stage::Arm;
            c.admitted = t;
            c.v = v_in;
        }

        if k.is_multiple_of(cfg.log_every as u64) {
            if let Some(log) = log.as_mut() {
                let mut frame = Vec::new();
                for c in &cars {
                    let (p, theta, v, a) = match c.stage {
                        Stage::Arm => {
                            let dir = g.inbound_direction(c.arr.arm);
                            (g.arm_to_world(c.arr.arm, g.lane_lateral(c.lane), c.s), heading_of(dir), c.v, c.a)
                        }
                        Stage::Zone => {
                            let (p, th) = zones.at(&Movement::new(c.arr.arm, c.arr.turn, c.lane), c.zone_s);
                            (p, th, v_f, 0.0)
                        }
                        Stage::Waiting | Stage::Done => continue,
                    };
                    frame.push(TrajectoryRecord { t, id: c.arr.id, x: p[0], y: p[1], v, theta, a, delta: 0.0 });
                }
                log.frames.push(frame);
            }
        }

        // Motion, front to back so leaders have moved first.
        for q in queues.values_mut() {
            let mut leader: Option<(f64, f64)> = None;
            for &i in q.iter() {
                let c = &cars[i];
                let mut v_next = (c.v + vp.a_max * dt).min(v_f);
                if let Some((s_l, v_l)) = leader {
                    let gap = s_l - c.s - envelope - fm.standstill_gap;
                    v_next = v_next.min(safe_speed(gap, v_l, fm.comfortable_decel, fm.reaction_time));
                }
                let go = cfg
                    .signal
                    .green_end(c.arr.arm, c.arr.turn, t)
                    .is_some_and(|ge| t + time_to_reach(l - c.s, c.v, vp.a_max, v_f) <= ge);
                if !go {
                    let gap = l - c.s - 0.05;
                    v_next = v_next.min((2.0 * fm.comfortable_decel * gap.max(0.0)).sqrt());
                }
                let v_next = v_next.max((c.v + vp.a_min * dt).max(0.0));
                let c = &mut cars[i];
                c.a = (v_next - c.v) / dt;
                c.v = v_next;
                let prev = c.s;
                c.s += c.v * dt;
                if c.s >= l {
                    let frac = if c.s > prev { (l - prev) / (c.s - prev) } else { 1.0 };
                    c.crossed = t + frac * dt;
                    c.zone_s = v_f * (t + dt - c.crossed);
                    c.stage = Stage::Zone;
                }
                leader = Some((c.s, c.v));
            }
            q.retain(|&i| cars[i].stage == Stage::Arm);
        }
        for c in cars.iter_mut().filter(|c| c.stage == Stage::Zone) {
            if c.crossed < t {
                c.zone_s += v_f * dt;
            }
            if c.zone_s >= zones.length(&Movement::new(c.arr.arm, c.arr.turn, c.lane)) {
                c.stage = Stage::Done;
            }
        }

        for q in queues.values() {
            let mut items: Vec<(f64, f64)> = q.iter().map(|&i| (cars[i].s, 0.0)).collect();
            let (v, gap) = spacing_check(&mut items, g.lane_width, envelope);
            safety.spacing_violations += v;
            safety.min_same_lane_gap = safety.min_same_lane_gap.min(gap);
        }
        // Vehicles following each other through the same lane are not a conflict.
        let inside: Vec<((Arm, usize), Movement)> = cars
            .iter()
            .filter(|c| c.stage == Stage::Zone)
            .map(|c| ((c.arr.arm, c.lane), Movement::new(c.arr.arm, c.arr.turn, c.lane)))
            .collect();
        safety.zone_violations += zone_check(&inside, &cm, |a, b| a != b);
        k += 1;
    }

    let vehicles = cars
        .iter()
        .map(|c| VehicleOutcome {
            id: c.arr.id,
            arm: c.arr.arm,
            turn: c.arr.turn,
            entry_lane: c.arr.lane,
            lane: c.lane,
            generated: c.arr.time,
            admitted: c.admitted,
            crossed: c.crossed,
            travel_time: c.crossed - c.arr.time,
            slot: None,
        })
        .collect();
    let mut report = MetricsReport {
        policy: cfg.policy,
        volume: cfg.volume,
        proportions: cfg.proportions,
        seed: cfg.seed,
        n_warm: cfg.n_warm,
        vehicles,
        mean_travel_time: f64::NAN,
        std_travel_time: f64::NAN,
        layers: None,
        throughput: 0.0,
        end_time: k as f64 * dt,
        safety,
        diagnostics: Diagnostics::default(),
    };
    report.finish();
    Ok(SimOutput { report, trajectories: log, planning: None })
}
