//! Formation engine for the flexible and fixed lane policies.
//!
//! All four arms share one moving grid. Cell `c` is at distance
//! `L + c d_F - v_F t` from the stop line, so it enters the arm at
//! `t = c d_F / v_F` and crosses the stop line `L / v_F` later. Even cells are
//! layer slots, which makes consecutive layers `d_c = 2 d_F` apart.
//!
//! A vehicle is let onto the arm when a cell boundary passes the entry and
//! its entry cell is free. On admission it is scheduled once: the grouping
//! algorithm places it around the vehicles already committed (which stay
//! pinned), and CBS plans its relative path with the committed paths as
//! obstacles. Paths start at the next switching cycle; until then the vehicle
//! cruises in its cell. From then on its longitudinal schedule is re-solved at
//! every cycle boundary from the measured state, and it crosses the conflict
//! zone at `v_F` along its movement path.

use std::collections::{BTreeMap, BTreeSet};

use super::metrics::{
    Diagnostics, MetricsReport, PlanningRound, SafetyReport, SearchRecord, TrajectoryLog, TrajectoryRecord,
    VehicleOutcome,
};
use super::traffic::{generate_traffic, Arrival};
use super::{arm_coords, spacing_check, zone_check, ScenarioConfig, SimOutput, ZonePaths, HEADWAY_TOLERANCE};
use crate::conflict::{build_conflict_matrix, ConflictMatrix};
use crate::rcs::{move_conflict, plan_cbs, Agent, CbsConfig, RcsGrid, RelativePath, RelativePoint};
use crate::scenario::{Arm, Movement, Point};
use crate::scheduler::{
    max_forward_layers, run_iga_with, Availability, AvailabilityAdjuster, FormationParams, LanePolicy, PinnedPlacement,
    VehicleRecord,
};
use crate::vehicle::{
    build_reference_path, heading_of, lateral_preview_with_hint, plan_longitudinal, step_dynamics, ControlSchedule,
    LongitudinalProblem, ReferencePath, VehicleState,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Waiting,
    Arm,
    Zone,
    Done,
}

/// Committed grid path: `cells[j]` is `(cell, lane)` at cycle `e0 + j`; the
/// last entry is the layer slot.
#[derive(Debug, Clone)]
struct CellPlan {
    e0: i64,
    cells: Vec<(i64, usize)>,
}

impl CellPlan {
    fn at(&self, e: i64) -> Option<RelativePoint> {
        let j = e - self.e0;
        if j < 0 {
            return self.cells.first().map(|&(c, l)| RelativePoint::new(c as i32, l as i32));
        }
        self.cells.get(j as usize).map(|&(c, l)| RelativePoint::new(c as i32, l as i32))
    }

    fn last_step(&self) -> i64 {
        self.e0 + self.cells.len() as i64 - 1
    }
}

struct Car {
    arr: Arrival,
    stage: Stage,
    z: VehicleState,
    admitted: f64,
    plan: Option<CellPlan>,
    slot: i64,
    lane: usize,
    reference: Option<ReferencePath>,
    hint: Option<usize>,
    schedule: Option<ControlSchedule>,
    sched_tick: u64,
    a: f64,
    delta: f64,
    station: f64,
    lateral: f64,
    crossed: f64,
    zone_s: f64,
}

impl Car {
    fn movement(&self) -> Movement {
        Movement::new(self.arr.arm, self.arr.turn, self.lane)
    }
}

/// The shared moving grid.
#[derive(Debug, Clone, Copy)]
struct Grid {
    l: f64,
    fp: FormationParams,
}

impl Grid {
    fn distance(&self, c: i64, t: f64) -> f64 {
        self.l + c as f64 * self.fp.d_f - self.fp.v_f * t
    }

    fn crossing_time(&self, c: i64) -> f64 {
        (c as f64 * self.fp.d_f + self.l) / self.fp.v_f
    }

    /// First cell still on the arm at `t`.
    fn front(&self, t: f64) -> i64 {
        ((self.fp.v_f * t - self.l) / self.fp.d_f - 1e-9).ceil() as i64
    }

    /// First even cell crossing strictly after `t`.
    fn first_slot_after(&self, t: f64) -> i64 {
        let c = ((self.fp.v_f * t - self.l) / self.fp.d_f + 1e-9).floor() as i64 + 1;
        c + c.rem_euclid(2)
    }
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    grid: Grid,
    cm: ConflictMatrix,
    zones: ZonePaths,
    policy: LanePolicy,
    cbs: CbsConfig,
    cars: Vec<Car>,
    tpc: u64,
    tpe: u64,
    safety: SafetyReport,
    diag: Diagnostics,
    log: Option<TrajectoryLog>,
    planning: Option<Vec<PlanningRound>>,
    searches: Vec<SearchRecord>,
}

pub(super) fn simulate(cfg: &ScenarioConfig) -> Result<SimOutput> {
    let policy = cfg.policy.lane_policy().expect("formation policy");
    let cm = build_conflict_matrix(&cfg.geometry)?;
    let cars = generate_traffic(cfg)
        .into_iter()
        .map(|arr| Car {
            arr,
            stage: Stage::Waiting,
            z: VehicleState { x: 0.0, y: 0.0, v: 0.0, theta: 0.0 },
            admitted: f64::NAN,
            plan: None,
            slot: 0,
            lane: arr.lane,
            reference: None,
            hint: None,
            schedule: None,
            sched_tick: 0,
            a: 0.0,
            delta: 0.0,
            station: 0.0,
            lateral: 0.0,
            crossed: f64::NAN,
            zone_s: 0.0,
        })
        .collect();
    let mut e = Engine {
        cfg,
        grid: Grid { l: cfg.geometry.arm_length, fp: cfg.formation },
        cm,
        zones: ZonePaths::new(&cfg.geometry),
        policy,
        cbs: CbsConfig { connectivity: cfg.connectivity, node_budget: cfg.cbs_node_budget, ..Default::default() },
        cars,
        tpc: cfg.ticks_per_cell().expect("validated"),
        tpe: cfg.ticks_per_cycle().expect("validated"),
        safety: SafetyReport::default(),
        diag: Diagnostics::default(),
        log: cfg
            .log_trajectories
            .then(|| TrajectoryLog { interval: cfg.log_every as f64 * cfg.dt, frames: Vec::new() }),
        planning: cfg.log_planning.then(Vec::new),
        searches: Vec::new(),
    };
    e.run()
}

impl Engine<'_> {
    fn run(&mut self) -> Result<SimOutput> {
        let dt = self.cfg.dt;
        let max_ticks = (self.cfg.max_time / dt).ceil() as u64;
        let mut k: u64 = 0;
        while self.cars.iter().any(|c| c.stage != Stage::Done) {
            if k > max_ticks {
                let waiting = self.cars.iter().filter(|c| c.stage == Stage::Waiting).count();
                return Err(Error::SchedulingFailure {
                    rounds: self.cfg.max_replans,
                    reason: format!("{waiting} vehicles still waiting to enter at t = {}", self.cfg.max_time),
                });
            }
            let t = k as f64 * dt;
            if k.is_multiple_of(self.tpc) {
                self.admit(k)?;
            }
            if k.is_multiple_of(self.tpe) {
                self.replan_all(k);
            }
            if k.is_multiple_of(self.cfg.log_every as u64) {
                self.record(t);
            }
            self.step(k);
            self.check_safety();
            k += 1;
        }
        let end_time = k as f64 * dt;
        Ok(self.finish(end_time))
    }

    fn t(&self, k: u64) -> f64 {
        k as f64 * self.cfg.dt
    }

    fn epoch_time(&self, e: i64) -> f64 {
        e as f64 * self.cfg.formation.t_f
    }

    fn lane_lateral(&self, lane: usize) -> f64 {
        self.cfg.geometry.lane_lateral(lane)
    }

    fn world(&self, arm: Arm, lane: usize, station: f64) -> Point {
        self.cfg.geometry.arm_to_world(arm, self.lane_lateral(lane), station)
    }

    // ---- admission and scheduling ----

    fn admit(&mut self, k: u64) -> Result<()> {
        let t = self.t(k);
        let cell = (k / self.tpc) as i64;
        let e_p = k.div_ceil(self.tpe) as i64;
        let mut heads: BTreeMap<(Arm, usize), usize> = BTreeMap::new();
        for (i, c) in self.cars.iter().enumerate() {
            if c.stage == Stage::Waiting && c.arr.time <= t {
                heads.entry((c.arr.arm, c.arr.lane)).or_insert(i);
            }
        }
        let mut cands = Vec::new();
        for (_, i) in heads {
            if self.entry_free(i, cell, e_p, k.is_multiple_of(self.tpe)) {
                cands.push(i);
            } else {
                self.diag.entry_blocked += 1;
            }
        }
        if cands.is_empty() {
            return Ok(());
        }
        let admitted = self.schedule(&cands, cell, e_p, t)?;
        self.diag.unschedulable += (cands.len() - admitted) as u64;
        Ok(())
    }

    /// Whether the entry cell of car `i` is clear of every vehicle on its arm
    /// between now and the start of cycle `e_p`.
    fn entry_free(&self, i: usize, cell: i64, e_p: i64, aligned: bool) -> bool {
        let me = &self.cars[i];
        let here = RelativePoint::new(cell as i32, me.arr.lane as i32);
        let lat = self.lane_lateral(me.arr.lane);
        let w = self.cfg.geometry.lane_width;
        for o in self.cars.iter().filter(|o| o.stage == Stage::Arm && o.arr.arm == me.arr.arm) {
            if (o.lateral - lat).abs() < 0.5 * w && o.station < 0.5 * self.cfg.formation.d_f + 1.0 {
                return false;
            }
            let plan = o.plan.as_ref().expect("admitted vehicles are planned");
            let p1 = plan.at(e_p);
            if p1 == Some(here) {
                return false;
            }
            if !aligned {
                let p0 = plan.at(e_p - 1);
                if p0 == Some(here) {
                    return false;
                }
                if let (Some(a0), Some(a1)) = (p0, p1) {
                    if move_conflict(a0, a1, here, here).is_some() {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Schedules the candidates jointly and puts those that got a plan on the
    /// arm; returns how many did.
    fn schedule(&mut self, cands: &[usize], cell: i64, e_p: i64, t: f64) -> Result<usize> {
        let t_ep = self.epoch_time(e_p);
        let g = self.grid;
        let s1 = g.first_slot_after(t_ep);
        let layer_of_slot = |s: i64| ((s - s1) / 2 + 1) as usize;

        let mut pinned: BTreeMap<usize, PinnedPlacement> = BTreeMap::new();
        let mut records: BTreeMap<usize, VehicleRecord> = BTreeMap::new();
        for c in self.cars.iter().filter(|c| c.stage == Stage::Arm && c.slot >= s1) {
            pinned.insert(c.arr.id, PinnedPlacement { layer: layer_of_slot(c.slot), lane: c.lane });
            records.insert(c.arr.id, self.record_of(c, c.lane, 0.0));
        }
        let d_ep = g.distance(cell, t_ep);
        let mut min_layer = BTreeMap::new();
        for &i in cands {
            let c = &self.cars[i];
            records.insert(c.arr.id, self.record_of(c, c.arr.lane, d_ep));
            let target = cell - max_forward_layers(d_ep, &self.cfg.formation) as i64;
            let k = if target <= s1 { 1 } else { ((target - s1 + 1) / 2 + 1) as usize };
            min_layer.insert(c.arr.id, k);
        }
        let mut adjuster = AvailabilityAdjuster::new(Availability { min_layer }, self.cfg.max_replans);
        let mut remaining: Vec<usize> = cands.to_vec();
        let mut admitted = 0;

        while !remaining.is_empty() {
            let vehicles: Vec<VehicleRecord> = records
                .values()
                .filter(|r| pinned.contains_key(&r.id) || remaining.iter().any(|&i| self.cars[i].arr.id == r.id))
                .cloned()
                .collect();
            let dist = run_iga_with(&vehicles, &self.cm, self.policy, &adjuster.availability, &pinned)?;
            let mut infeasible = BTreeSet::new();
            for arm in Arm::ALL {
                let group: Vec<usize> = remaining.iter().copied().filter(|&i| self.cars[i].arr.arm == arm).collect();
                if group.is_empty() {
                    continue;
                }
                let targets: Vec<(usize, i64, usize)> = group
                    .iter()
                    .map(|&i| {
                        let id = self.cars[i].arr.id;
                        let layer = dist.layer_of(id).expect("every vehicle placed");
                        (i, s1 + 2 * (layer as i64 - 1), dist.lane_of(id).expect("every vehicle placed"))
                    })
                    .collect();
                let plans = self.plan_arm(arm, &targets, cell, e_p);
                for ((i, slot, lane), plan) in targets.into_iter().zip(plans) {
                    let c = &mut self.cars[i];
                    match plan {
                        Some(plan) => {
                            c.plan = Some(plan);
                            c.slot = slot;
                            c.lane = lane;
                            pinned.insert(c.arr.id, PinnedPlacement { layer: layer_of_slot(slot), lane });
                            self.place_at_entry(i, t);
                            admitted += 1;
                        }
                        None => {
                            infeasible.insert(c.arr.id);
                        }
                    }
                }
            }
            let searches = std::mem::take(&mut self.searches);
            if let Some(log) = self.planning.as_mut() {
                log.push(PlanningRound {
                    t,
                    distribution: dist.clone(),
                    searches,
                    infeasible: infeasible.iter().copied().collect(),
                });
            }
            remaining.retain(|&i| infeasible.contains(&self.cars[i].arr.id));
            if remaining.is_empty() {
                break;
            }
            self.diag.availability_adjustments += 1;
            if adjuster.adjust(&dist, &infeasible).is_err() {
                break;
            }
        }
        Ok(admitted)
    }

    /// `entry_distance` is used for vehicles not yet on the arm.
    fn record_of(&self, c: &Car, lane: usize, entry_distance: f64) -> VehicleRecord {
        let distance = match c.stage {
            Stage::Arm => (self.grid.l - c.station).max(0.0),
            _ => entry_distance,
        };
        VehicleRecord { id: c.arr.id, arm: c.arr.arm, turn: c.arr.turn, lane, distance, speed: c.z.v }
    }

    /// CBS for the newcomers of one arm against the committed paths.
    /// `targets` holds `(car, slot, lane)`; the result is aligned with it.
    fn plan_arm(&mut self, arm: Arm, targets: &[(usize, i64, usize)], cell: i64, e_p: i64) -> Vec<Option<CellPlan>> {
        let g = self.grid;
        let t_ep = self.epoch_time(e_p);
        let tf = self.cfg.formation.t_f;
        let base = g.front(t_ep);
        let rel = |c: i64, l: usize| RelativePoint::new((c - base) as i32, l as i32);

        let mut out = vec![None; targets.len()];
        // index into `targets` of each agent
        let mut slots_of = Vec::new();
        let mut agents = Vec::new();
        for (n, &(i, slot, lane)) in targets.iter().enumerate() {
            let x = ((g.crossing_time(slot) - t_ep) / tf + 1e-9).floor();
            let start = rel(cell, self.cars[i].arr.lane);
            let goal = rel(slot, lane);
            if x < 0.0 || self.cfg.connectivity.distance(start, goal) as f64 > x {
                continue;
            }
            slots_of.push(n);
            agents.push(Agent { id: self.cars[i].arr.id, start, goal, deadline: Some(x as usize) });
        }
        if agents.is_empty() {
            return out;
        }
        let mut obstacles = Vec::new();
        for o in self.cars.iter().filter(|o| o.stage == Stage::Arm && o.arr.arm == arm) {
            let plan = o.plan.as_ref().expect("admitted vehicles are planned");
            let from = (e_p - plan.e0).max(0) as usize;
            if from >= plan.cells.len() {
                continue;
            }
            let points = plan.cells[from..].iter().map(|&(c, l)| rel(c, l)).collect();
            obstacles.push(RelativePath { points, exits: true });
        }
        let horizon = agents.iter().map(|a| a.deadline.unwrap_or(0)).max().unwrap_or(0);
        let x_top = agents
            .iter()
            .flat_map(|a| [a.start.x, a.goal.x])
            .chain(obstacles.iter().flat_map(|o| o.points.iter().map(|p| p.x)))
            .max()
            .unwrap_or(0);
        let front: Vec<i32> = (0..=horizon).map(|j| (g.front(t_ep + j as f64 * tf) - base) as i32).collect();
        let grid = RcsGrid::new(self.cfg.geometry.n_lanes, (x_top + 3) as usize).with_front(front);

        self.diag.cbs_calls += 1;
        let to_plan = |p: &RelativePath| CellPlan {
            e0: e_p,
            cells: p.points.iter().map(|q| (q.x as i64 + base, q.y as usize)).collect(),
        };
        let mut rec =
            SearchRecord { arm, agents: agents.iter().map(|a| a.id).collect(), expanded: 0, generated: 0, cost: None };
        match plan_cbs(&agents, &grid, &obstacles, &self.cbs) {
            Ok(sol) => {
                rec.expanded = sol.stats.expanded;
                rec.generated = sol.stats.generated;
                rec.cost = Some(sol.cost);
                for (a, &n) in agents.iter().zip(&slots_of) {
                    out[n] = Some(to_plan(&sol.paths[&a.id]));
                }
            }
            Err(_) => {
                self.diag.cbs_failures += 1;
                if agents.len() > 1 {
                    // one at a time, earliest deadline first
                    let mut order: Vec<usize> = (0..agents.len()).collect();
                    order.sort_by_key(|&i| (agents[i].deadline, agents[i].id));
                    for i in order {
                        if let Ok(sol) = plan_cbs(&agents[i..=i], &grid, &obstacles, &self.cbs) {
                            rec.expanded += sol.stats.expanded;
                            rec.generated += sol.stats.generated;
                            let path = &sol.paths[&agents[i].id];
                            out[slots_of[i]] = Some(to_plan(path));
                            obstacles.push(path.clone());
                        }
                    }
                }
            }
        }
        if self.planning.is_some() {
            self.searches.push(rec);
        }
        out
    }

    fn place_at_entry(&mut self, i: usize, t: f64) {
        let geo = &self.cfg.geometry;
        let (arm, lane) = (self.cars[i].arr.arm, self.cars[i].arr.lane);
        let p0 = self.world(arm, lane, 0.0);
        let p1 = self.world(arm, lane, geo.arm_length);
        let dir = geo.inbound_direction(arm);
        let reference = build_reference_path(&[p0, p1], dir).expect("distinct points");
        let c = &mut self.cars[i];
        c.stage = Stage::Arm;
        c.admitted = t;
        c.z = VehicleState { x: p0[0], y: p0[1], v: self.cfg.formation.v_f, theta: heading_of(dir) };
        c.station = 0.0;
        c.lateral = geo.lane_lateral(lane);
        c.reference = Some(reference);
        c.hint = None;
        c.schedule = None;
    }

    // ---- control ----

    fn replan_all(&mut self, k: u64) {
        let e = (k / self.tpe) as i64;
        for i in 0..self.cars.len() {
            let c = &self.cars[i];
            if c.stage != Stage::Arm {
                continue;
            }
            let plan = c.plan.as_ref().expect("admitted vehicles are planned");
            if e < plan.e0 || e >= plan.last_step() {
                continue;
            }
            self.replan(i, e, k);
        }
    }

    /// Re-poses the longitudinal problem from the measured state through the
    /// remaining road points.
    fn replan(&mut self, i: usize, e: i64, k: u64) {
        let g = self.grid;
        let c = &self.cars[i];
        let pos = [c.z.x, c.z.y];
        if let (Some(s), Some(r)) = (&c.schedule, &c.reference) {
            if let Some(planned) = s.s.get((k - c.sched_tick) as usize) {
                let actual = r.project(pos, c.hint).station;
                self.diag.max_boundary_error = self.diag.max_boundary_error.max((actual - planned).abs());
            }
        }
        let plan = c.plan.as_ref().unwrap();
        let arm = c.arr.arm;
        let mut points = vec![pos];
        for ej in e + 1..=plan.last_step() {
            let (cell, lane) = plan.cells[(ej - plan.e0) as usize];
            let d = g.distance(cell, self.epoch_time(ej));
            points.push(self.world(arm, lane, g.l - d));
        }
        let segments_n = points.len() - 1;
        let (last_cell, last_lane) = *plan.cells.last().unwrap();
        if g.distance(last_cell, self.epoch_time(plan.last_step())) > 0.5 {
            points.push(self.world(arm, last_lane, g.l));
        }
        let dir = self.cfg.geometry.inbound_direction(arm);
        let Ok(reference) = build_reference_path(&points, dir) else {
            self.diag.longitudinal_failures += 1;
            return;
        };
        let st = reference.road_point_stations();
        let segments: Vec<f64> = (0..segments_n).map(|j| st[j + 1] - st[j]).collect();
        let vp = &self.cfg.vehicle;
        let prob = LongitudinalProblem {
            segments,
            t_f: self.cfg.formation.t_f,
            dt: self.cfg.dt,
            v0: c.z.v.clamp(vp.v_min, vp.v_max),
            v_f: self.cfg.formation.v_f,
            v_min: vp.v_min,
            v_max: vp.v_max,
            a_min: vp.a_min,
            a_max: vp.a_max,
        };
        self.diag.longitudinal_solves += 1;
        match plan_longitudinal(&prob) {
            Ok(s) => {
                let c = &mut self.cars[i];
                c.schedule = Some(s);
                c.sched_tick = k;
                c.reference = Some(reference);
                c.hint = None;
            }
            Err(_) => self.diag.longitudinal_failures += 1,
        }
    }

    fn step(&mut self, k: u64) {
        let t = self.t(k);
        let dt = self.cfg.dt;
        let v_f = self.cfg.formation.v_f;
        let l = self.grid.l;
        for i in 0..self.cars.len() {
            match self.cars[i].stage {
                Stage::Arm => {
                    let c = &self.cars[i];
                    let a = match &c.schedule {
                        Some(s) => s.accel((k - c.sched_tick) as usize),
                        None => 0.0,
                    };
                    let reference = c.reference.as_ref().expect("vehicles on the arm have a reference");
                    let (delta, proj) =
                        lateral_preview_with_hint(&c.z, reference, &self.cfg.gains, &self.cfg.vehicle, c.hint);
                    let z = step_dynamics(&c.z, a, delta, dt, &self.cfg.vehicle);
                    let (lat, station) = arm_coords(&self.cfg.geometry, c.arr.arm, [z.x, z.y]);
                    let prev = c.station;
                    let c = &mut self.cars[i];
                    c.z = z;
                    c.a = a;
                    c.delta = delta;
                    c.hint = Some(proj.segment);
                    c.lateral = lat;
                    c.station = station;
                    if station >= l {
                        let frac = if station > prev { (l - prev) / (station - prev) } else { 1.0 };
                        c.crossed = t + frac * dt;
                        c.zone_s = v_f * (t + dt - c.crossed);
                        c.stage = Stage::Zone;
                    }
                }
                Stage::Zone => {
                    let m = self.cars[i].movement();
                    let c = &mut self.cars[i];
                    c.zone_s += v_f * dt;
                    if c.zone_s >= self.zones.length(&m) {
                        c.stage = Stage::Done;
                    }
                }
                Stage::Waiting | Stage::Done => {}
            }
        }
    }

    fn check_safety(&mut self) {
        let limit = 0.5 * self.cfg.formation.d_f;
        let w = self.cfg.geometry.lane_width;
        for arm in Arm::ALL {
            let mut items: Vec<(f64, f64)> = self
                .cars
                .iter()
                .filter(|c| c.stage == Stage::Arm && c.arr.arm == arm)
                .map(|c| (c.station, c.lateral))
                .collect();
            let (v, gap) = spacing_check(&mut items, w, limit);
            self.safety.spacing_violations += v;
            self.safety.min_same_lane_gap = self.safety.min_same_lane_gap.min(gap);
        }
        let inside: Vec<(i64, Movement)> =
            self.cars.iter().filter(|c| c.stage == Stage::Zone).map(|c| (c.slot, c.movement())).collect();
        self.safety.zone_violations += zone_check(&inside, &self.cm, |a, b| a == b);
    }

    fn record(&mut self, t: f64) {
        let Some(log) = self.log.as_mut() else { return };
        let v_f = self.cfg.formation.v_f;
        let mut frame = Vec::new();
        for c in &self.cars {
            let rec = match c.stage {
                Stage::Arm => TrajectoryRecord {
                    t,
                    id: c.arr.id,
                    x: c.z.x,
                    y: c.z.y,
                    v: c.z.v,
                    theta: c.z.theta,
                    a: c.a,
                    delta: c.delta,
                },
                Stage::Zone => {
                    let (p, th) = self.zones.at(&c.movement(), c.zone_s);
                    TrajectoryRecord { t, id: c.arr.id, x: p[0], y: p[1], v: v_f, theta: th, a: 0.0, delta: 0.0 }
                }
                Stage::Waiting | Stage::Done => continue,
            };
            frame.push(rec);
        }
        log.frames.push(frame);
    }

    fn finish(&mut self, end_time: f64) -> SimOutput {
        let vehicles: Vec<VehicleOutcome> = self
            .cars
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
                slot: Some(c.slot),
            })
            .collect();

        let mut crossings: Vec<(f64, i64)> = vehicles.iter().map(|v| (v.crossed, v.slot.unwrap())).collect();
        crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
        let min_headway = self.cfg.formation.d_c / self.cfg.formation.v_f - HEADWAY_TOLERANCE;
        for w in crossings.windows(2) {
            if w[0].1 != w[1].1 {
                let h = w[1].0 - w[0].0;
                self.safety.min_layer_headway = self.safety.min_layer_headway.min(h);
                if h < min_headway {
                    self.safety.headway_violations += 1;
                }
            }
        }

        let mut report = MetricsReport {
            policy: self.cfg.policy,
            volume: self.cfg.volume,
            proportions: self.cfg.proportions,
            seed: self.cfg.seed,
            n_warm: self.cfg.n_warm,
            vehicles,
            mean_travel_time: f64::NAN,
            std_travel_time: f64::NAN,
            layers: None,
            throughput: 0.0,
            end_time,
            safety: self.safety,
            diagnostics: self.diag,
        };
        report.finish();
        SimOutput { report, trajectories: self.log.take(), planning: self.planning.take() }
    }
}
