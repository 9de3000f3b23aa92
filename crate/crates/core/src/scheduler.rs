//! Two-dimensional distribution of vehicles: which layer each vehicle crosses
//! the conflict zone in, and which lane it occupies when it does.
//!
//! [`run_iga`] is the iterative grouping algorithm. Layers are filled one at a
//! time; vehicles are visited in id order (closest to the stop line first) and
//! join the current layer if some lane occupation of the layer is
//! conflict-free. Among the conflict-free occupations the one with the least
//! squared lane change against the current lane assignment is adopted.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::conflict::ConflictMatrix;
use crate::scenario::{Arm, Movement, Turn};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: usize,
    pub arm: Arm,
    pub turn: Turn,
    pub lane: usize,
    /// Distance to the stop line, metres.
    pub distance: f64,
    pub speed: f64,
}

impl VehicleRecord {
    pub fn movement(&self, lane: usize) -> Movement {
        Movement::new(self.arm, self.turn, lane)
    }
}

/// Formation constants: following gaps, switching cycle and cruise speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationParams {
    /// Following gap inside the formation, m.
    pub d_f: f64,
    /// Following gap between layers in the conflict zone, m.
    pub d_c: f64,
    /// Formation switching cycle, s.
    pub t_f: f64,
    /// Formation cruise speed, m/s.
    pub v_f: f64,
}

impl Default for FormationParams {
    fn default() -> Self {
        FormationParams { d_f: 17.5, d_c: 35.0, t_f: 4.0, v_f: 10.0 }
    }
}

impl FormationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_f > 0.0 && self.d_c > 0.0 && self.t_f > 0.0 && self.v_f > 0.0) {
            return Err(Error::InvalidArgument(format!("formation parameters must be positive: {self:?}")));
        }
        if (self.d_c - 2.0 * self.d_f).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "layer gap d_c = {} must be twice the formation gap d_F = {}",
                self.d_c, self.d_f
            )));
        }
        Ok(())
    }

    /// Road length covered while advancing one grid cell in one cycle.
    pub fn forward_cell_length(&self) -> f64 {
        self.v_f * self.t_f + self.d_f
    }
}

/// Lanes a vehicle may occupy when it crosses the conflict zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanePolicy {
    /// Any lane carries any turn.
    Flexible,
    /// One lane per turn: rightmost for right turns, leftmost for left turns,
    /// the middle lane for straight movements.
    Fixed,
}

impl LanePolicy {
    pub fn selectable_lanes(&self, turn: Turn, n_lanes: usize) -> Vec<usize> {
        match self {
            LanePolicy::Flexible => (1..=n_lanes).collect(),
            LanePolicy::Fixed => vec![fixed_lane(turn, n_lanes)],
        }
    }
}

pub fn fixed_lane(turn: Turn, n_lanes: usize) -> usize {
    match turn {
        Turn::Right => 1,
        Turn::Straight => n_lanes.div_ceil(2),
        Turn::Left => n_lanes,
    }
}

/// Output of the grouping algorithm.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    /// Vehicle id to lane.
    pub lanes: BTreeMap<usize, usize>,
    /// Vehicle id to layer (1-based).
    pub layers: BTreeMap<usize, usize>,
    /// Members of each layer, `groups[k - 1]`, sorted by id.
    pub groups: Vec<Vec<usize>>,
}

#[derive(Serialize)]
struct Placement {
    layer: usize,
    lane: usize,
}

impl Distribution {
    pub fn layer_count(&self) -> usize {
        self.groups.len()
    }

    pub fn layer_of(&self, id: usize) -> Option<usize> {
        self.layers.get(&id).copied()
    }

    pub fn lane_of(&self, id: usize) -> Option<usize> {
        self.lanes.get(&id).copied()
    }

    /// `{"<id>": {"layer": k, "lane": l}, ...}`
    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, Placement> = self
            .layers
            .iter()
            .map(|(&id, &layer)| (id.to_string(), Placement { layer, lane: self.lanes[&id] }))
            .collect();
        serde_json::to_string_pretty(&map).expect("distribution serializes")
    }
}

/// Number of cells a vehicle at distance `d_i` can still gain on the formation
/// before it reaches the stop line.
pub fn max_forward_layers(d_i: f64, p: &FormationParams) -> usize {
    (d_i.max(0.0) / p.forward_cell_length()).floor() as usize
}

/// Relative longitudinal grid index of a vehicle, anchored on the closest one.
pub fn relative_x(d_i: f64, d_0: f64, n_y0: usize, d_f: f64) -> i64 {
    ((d_i - d_0) / d_f).round() as i64 + n_y0 as i64
}

/// Squared lane difference between two assignments over the same vehicles.
pub fn lane_diff(a: &BTreeMap<usize, usize>, b: &BTreeMap<usize, usize>) -> Result<u64> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::InvalidArgument("lane assignments cover different vehicles".into()));
    }
    Ok(a.values()
        .zip(b.values())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum())
}

/// Earliest layer each vehicle may join.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Availability {
    pub min_layer: BTreeMap<usize, usize>,
}

impl Availability {
    /// Every layer available to every vehicle.
    pub fn unrestricted(vehicles: &[VehicleRecord]) -> Self {
        Availability { min_layer: vehicles.iter().map(|v| (v.id, 1)).collect() }
    }

    /// Layers behind the most forward reachable one. Layer `k` sits
    /// `2 (k - 1)` cells behind the front anchor, so it is available to a
    /// vehicle at relative cell `x` with `N` reachable cells iff
    /// `2 (k - 1) >= x - N`.
    pub fn from_reachability(vehicles: &[VehicleRecord], p: &FormationParams) -> Self {
        let Some(closest) = vehicles.iter().min_by(|a, b| a.distance.total_cmp(&b.distance)) else {
            return Availability::default();
        };
        let d0 = closest.distance;
        let n_y0 = max_forward_layers(d0, p);
        let min_layer = vehicles
            .iter()
            .map(|v| {
                let x = relative_x(v.distance, d0, n_y0, p.d_f);
                let front = x - max_forward_layers(v.distance, p) as i64;
                let k = if front <= 0 { 1 } else { (front as usize).div_ceil(2) + 1 };
                (v.id, k)
            })
            .collect();
        Availability { min_layer }
    }

    pub fn min_layer(&self, id: usize) -> usize {
        self.min_layer.get(&id).copied().unwrap_or(1)
    }
}

/// Availability map plus the bounded feedback loop from motion planning.
#[derive(Debug, Clone)]
pub struct AvailabilityAdjuster {
    pub availability: Availability,
    pub rounds: usize,
    pub max_replans: usize,
}

impl AvailabilityAdjuster {
    pub fn new(availability: Availability, max_replans: usize) -> Self {
        AvailabilityAdjuster { availability, rounds: 0, max_replans }
    }

    /// Moves the earliest available layer of every infeasible vehicle one
    /// layer behind the layer it was given in `dist`.
    pub fn adjust(&mut self, dist: &Distribution, infeasible: &BTreeSet<usize>) -> Result<&Availability> {
        if infeasible.is_empty() {
            return Ok(&self.availability);
        }
        if self.rounds >= self.max_replans {
            return Err(Error::SchedulingFailure {
                rounds: self.rounds,
                reason: format!("vehicles {infeasible:?} still infeasible"),
            });
        }
        self.rounds += 1;
        for &id in infeasible {
            let assigned = dist.layer_of(id).unwrap_or(1);
            let entry = self.availability.min_layer.entry(id).or_insert(1);
            *entry = (*entry).max(assigned + 1);
        }
        Ok(&self.availability)
    }
}

/// A vehicle whose layer and lane are already fixed (e.g. committed in an
/// earlier planning cycle). It occupies its layer but is never re-laned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PinnedPlacement {
    pub layer: usize,
    pub lane: usize,
}

/// Grouping with reachability from [`Availability::from_reachability`].
pub fn run_iga(
    vehicles: &[VehicleRecord],
    cm: &ConflictMatrix,
    policy: LanePolicy,
    p: &FormationParams,
) -> Result<Distribution> {
    let avail = Availability::from_reachability(vehicles, p);
    run_iga_with(vehicles, cm, policy, &avail, &BTreeMap::new())
}

/// Grouping with an explicit availability map and optional pinned vehicles.
///
/// Pinned vehicles must also appear in `vehicles`.
pub fn run_iga_with(
    vehicles: &[VehicleRecord],
    cm: &ConflictMatrix,
    policy: LanePolicy,
    avail: &Availability,
    pinned: &BTreeMap<usize, PinnedPlacement>,
) -> Result<Distribution> {
    if vehicles.is_empty() {
        return Err(Error::InvalidArgument("no vehicles to schedule".into()));
    }
    let n_lanes = cm.n_lanes();
    let mut order: Vec<&VehicleRecord> = vehicles.iter().collect();
    order.sort_by_key(|v| v.id);
    if order.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidArgument("vehicle ids must be unique".into()));
    }
    for v in &order {
        if v.lane == 0 || v.lane > n_lanes {
            return Err(Error::InvalidArgument(format!("vehicle {} in lane {}", v.id, v.lane)));
        }
    }
    let by_id: BTreeMap<usize, &VehicleRecord> = order.iter().map(|v| (v.id, *v)).collect();

    let mut lanes: BTreeMap<usize, usize> = order.iter().map(|v| (v.id, v.lane)).collect();
    let mut layer_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();

    for (&id, pin) in pinned {
        if !by_id.contains_key(&id) || pin.layer == 0 {
            return Err(Error::InvalidArgument(format!("bad pinned placement for vehicle {id}")));
        }
        lanes.insert(id, pin.lane);
        layer_of.insert(id, pin.layer);
        if groups.len() < pin.layer {
            groups.resize(pin.layer, Vec::new());
        }
        groups[pin.layer - 1].push(id);
    }

    let free: Vec<&VehicleRecord> = order.iter().copied().filter(|v| !pinned.contains_key(&v.id)).collect();
    let max_min = free.iter().map(|v| avail.min_layer(v.id)).max().unwrap_or(1);
    let layer_cap = max_min + groups.len() + free.len() + 1;

    let mut remaining = free.len();
    let mut k = 0;
    while remaining > 0 {
        k += 1;
        if k > layer_cap {
            let id = free.iter().find(|v| !layer_of.contains_key(&v.id)).map(|v| v.id).unwrap_or(0);
            return Err(Error::Unplaceable(id));
        }
        if groups.len() < k {
            groups.resize(k, Vec::new());
        }
        for v in &free {
            if layer_of.contains_key(&v.id) || avail.min_layer(v.id) > k {
                continue;
            }
            let layer = LayerView { members: &groups[k - 1], by_id: &by_id, pinned, lanes: &lanes };
            if let Some(best) = best_occupation(v, &layer, cm, policy, n_lanes) {
                for (id, lane) in best.lanes {
                    lanes.insert(id, lane);
                }
                layer_of.insert(v.id, k);
                groups[k - 1].push(v.id);
                groups[k - 1].sort_unstable();
                remaining -= 1;
            }
        }
    }
    while groups.last().is_some_and(|g| g.is_empty()) {
        groups.pop();
    }
    Ok(Distribution { lanes, layers: layer_of, groups })
}

struct LayerView<'a> {
    members: &'a [usize],
    by_id: &'a BTreeMap<usize, &'a VehicleRecord>,
    pinned: &'a BTreeMap<usize, PinnedPlacement>,
    lanes: &'a BTreeMap<usize, usize>,
}

/// A conflict-free lane occupation of a layer after adding one vehicle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occupation {
    /// New lanes for the added vehicle followed by the re-laned members.
    pub lanes: Vec<(usize, usize)>,
    /// Squared lane difference against the current assignment.
    pub e: u64,
    /// Members of the layer (other than the added vehicle) that change lane.
    pub relocated: usize,
}

struct Var {
    id: usize,
    arm: Arm,
    turn: Turn,
    current: usize,
    candidates: Vec<usize>,
}

fn vars_for(v: &VehicleRecord, layer: &LayerView<'_>, policy: LanePolicy, n_lanes: usize) -> (Vec<Var>, Vec<Movement>) {
    let mut fixed = Vec::new();
    let mut vars = Vec::new();
    let make_var = |r: &VehicleRecord| {
        let current = layer.lanes[&r.id];
        let mut candidates = policy.selectable_lanes(r.turn, n_lanes);
        candidates.sort_by_key(|&l| ((l as i64 - current as i64).abs(), l));
        Var { id: r.id, arm: r.arm, turn: r.turn, current, candidates }
    };
    vars.push(make_var(v));
    for &id in layer.members {
        let r = layer.by_id[&id];
        if layer.pinned.contains_key(&id) {
            fixed.push(r.movement(layer.lanes[&id]));
        } else {
            vars.push(make_var(r));
        }
    }
    (vars, fixed)
}

fn best_occupation(
    v: &VehicleRecord,
    layer: &LayerView<'_>,
    cm: &ConflictMatrix,
    policy: LanePolicy,
    n_lanes: usize,
) -> Option<Occupation> {
    let (vars, fixed) = vars_for(v, layer, policy, n_lanes);
    let mut st = Search { vars: &vars, fixed: &fixed, cm, chosen: Vec::new(), lanes: Vec::new(), best: None };
    st.run(0, (0, 0));
    st.best.map(|(key, ls)| Occupation {
        lanes: vars.iter().zip(ls).map(|(var, l)| (var.id, l)).collect(),
        e: key.0,
        relocated: key.1,
    })
}

/// Depth-first branch and bound over lane choices. The key is
/// `(e, relocated members)` compared lexicographically, so moving a vehicle
/// that is already in the layer only wins when it strictly lowers `e`.
/// Equal keys keep the first occupation found.
struct Search<'a> {
    vars: &'a [Var],
    fixed: &'a [Movement],
    cm: &'a ConflictMatrix,
    chosen: Vec<Movement>,
    lanes: Vec<usize>,
    best: Option<((u64, usize), Vec<usize>)>,
}

impl Search<'_> {
    fn dominated(&self, key: (u64, usize)) -> bool {
        self.best.as_ref().is_some_and(|(b, _)| key >= *b)
    }

    fn run(&mut self, depth: usize, key: (u64, usize)) {
        if self.dominated(key) {
            return;
        }
        if depth == self.vars.len() {
            self.best = Some((key, self.lanes.clone()));
            return;
        }
        let var = &self.vars[depth];
        for &lane in &var.candidates {
            let d = lane as i64 - var.current as i64;
            let moved = usize::from(depth > 0 && d != 0);
            let k = (key.0 + (d * d) as u64, key.1 + moved);
            if self.dominated(k) {
                // candidates are sorted by |d|, so the rest cost at least as much
                break;
            }
            let m = Movement::new(var.arm, var.turn, lane);
            if self.fixed.iter().chain(self.chosen.iter()).any(|o| self.cm.movements_conflict(&m, o)) {
                continue;
            }
            self.chosen.push(m);
            self.lanes.push(lane);
            self.run(depth + 1, k);
            self.chosen.pop();
            self.lanes.pop();
        }
    }
}

/// Every conflict-free occupation for adding `v` to a layer made of
/// `members` (with their current lanes), in enumeration order. Used to audit
/// the placement rule; the grouping itself uses a pruned search.
pub fn enumerate_occupations(
    v: &VehicleRecord,
    members: &[VehicleRecord],
    lanes: &BTreeMap<usize, usize>,
    cm: &ConflictMatrix,
    policy: LanePolicy,
) -> Vec<Occupation> {
    let all: Vec<&VehicleRecord> = std::iter::once(v).chain(members.iter()).collect();
    let by_id: BTreeMap<usize, &VehicleRecord> = all.iter().map(|r| (r.id, *r)).collect();
    let ids: Vec<usize> = members.iter().map(|m| m.id).collect();
    let pinned = BTreeMap::new();
    let layer = LayerView { members: &ids, by_id: &by_id, pinned: &pinned, lanes };
    let (vars, _) = vars_for(v, &layer, policy, cm.n_lanes());
    let mut out = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    fn rec(vars: &[Var], cm: &ConflictMatrix, stack: &mut Vec<usize>, out: &mut Vec<Occupation>) {
        let depth = stack.len();
        if depth == vars.len() {
            let e = vars
                .iter()
                .zip(stack.iter())
                .map(|(v, &l)| {
                    let d = l as i64 - v.current as i64;
                    (d * d) as u64
                })
                .sum();
            let relocated = vars.iter().zip(stack.iter()).skip(1).filter(|(v, &l)| v.current != l).count();
            out.push(Occupation {
                lanes: vars.iter().zip(stack.iter()).map(|(v, &l)| (v.id, l)).collect(),
                e,
                relocated,
            });
            return;
        }
        for &lane in &vars[depth].candidates {
            let m = Movement::new(vars[depth].arm, vars[depth].turn, lane);
            let ok = vars[..depth]
                .iter()
                .zip(stack.iter())
                .all(|(o, &l)| !cm.movements_conflict(&m, &Movement::new(o.arm, o.turn, l)));
            if ok {
                stack.push(lane);
                rec(vars, cm, stack, out);
                stack.pop();
            }
        }
    }
    rec(&vars, cm, &mut stack, &mut out);
    out
}

/// Checks the two structural guarantees of a distribution: every vehicle is
/// placed, and members of a layer are pairwise conflict-free at their lanes.
pub fn verify_distribution(
    vehicles: &[VehicleRecord],
    dist: &Distribution,
    cm: &ConflictMatrix,
) -> std::result::Result<(), String> {
    let by_id: BTreeMap<usize, &VehicleRecord> = vehicles.iter().map(|v| (v.id, v)).collect();
    for v in vehicles {
        if dist.layer_of(v.id).is_none() {
            return Err(format!("vehicle {} unassigned", v.id));
        }
    }
    for (k, group) in dist.groups.iter().enumerate() {
        for (a, &i) in group.iter().enumerate() {
            for &j in &group[a + 1..] {
                let mi = by_id[&i].movement(dist.lanes[&i]);
                let mj = by_id[&j].movement(dist.lanes[&j]);
                if cm.movements_conflict(&mi, &mj) {
                    return Err(format!("layer {} holds conflicting {mi} ({i}) and {mj} ({j})", k + 1));
                }
            }
        }
    }
    Ok(())
}
