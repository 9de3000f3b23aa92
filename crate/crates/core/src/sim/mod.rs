//! Discrete-time intersection simulation.
//!
//! [`run_unsignalized`] drives the formation pipeline (grouping, relative-grid
//! planning, multi-stage control) under the flexible or fixed lane policy;
//! [`run_signalized`] is the fixed-time signal baseline. Both report travel
//! times from generation to the stop line.

mod config;
mod metrics;
mod signalized;
mod traffic;
mod unsignalized;

use std::collections::BTreeMap;

pub use config::{
    parse_config, parse_config_str, write_config, ConfigFile, ExperimentMatrix, FollowingModel, MatrixConfig, Phase,
    Policy, ScenarioConfig, SignalTiming, SCHEMA_VERSION,
};
pub use metrics::{
    aggregate_seeds, average_travel_time, export_snapshot, Diagnostics, LayerStats, MetricsReport, PlanningRound,
    SafetyReport, SearchRecord, SeedAggregate, Snapshot, SnapshotVehicle, TrajectoryLog, TrajectoryRecord,
    VehicleOutcome,
};
pub use traffic::{generate_traffic, Arrival};

use crate::conflict::ConflictMatrix;
use crate::scenario::{rotate_cw, Arm, IntersectionGeometry, Movement, Point};
use crate::Result;

/// Slack on the inter-layer headway check, s. Covers the residual tracking
/// error between the last replanning and the stop line.
pub const HEADWAY_TOLERANCE: f64 = 0.05;

/// A finished run plus the logs that were enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub report: MetricsReport,
    pub trajectories: Option<TrajectoryLog>,
    /// Formation policies only.
    pub planning: Option<Vec<PlanningRound>>,
}

/// Runs the scenario under its configured policy.
pub fn simulate(cfg: &ScenarioConfig) -> Result<SimOutput> {
    cfg.validate()?;
    match cfg.policy {
        Policy::Flexible | Policy::Fixed => unsignalized::simulate(cfg),
        Policy::Signalized => signalized::simulate(cfg),
    }
}

pub fn run_unsignalized(cfg: &ScenarioConfig) -> Result<MetricsReport> {
    if cfg.policy == Policy::Signalized {
        return Err(crate::Error::InvalidArgument("run_unsignalized needs the flexible or fixed policy".into()));
    }
    simulate(cfg).map(|o| o.report)
}

pub fn run_signalized(cfg: &ScenarioConfig) -> Result<MetricsReport> {
    if cfg.policy != Policy::Signalized {
        return Err(crate::Error::InvalidArgument("run_signalized needs the signalized policy".into()));
    }
    simulate(cfg).map(|o| o.report)
}

/// Arm-frame coordinates `(lateral, station)` of a world point.
fn arm_coords(g: &IntersectionGeometry, arm: Arm, p: Point) -> (f64, f64) {
    let local = rotate_cw(p, 4 - (arm.index() - 1));
    (local[0], g.half_width() + g.arm_length - local[1])
}

/// Conflict-zone paths with cumulative arc length, for playback.
struct ZonePaths {
    paths: BTreeMap<Movement, (Vec<Point>, Vec<f64>)>,
}

impl ZonePaths {
    fn new(g: &IntersectionGeometry) -> Self {
        let mut paths = BTreeMap::new();
        for code in 1..=g.movement_count() {
            let m = Movement::decode(code, g.n_lanes).expect("code in range");
            let pts = g.conflict_zone_path(&m);
            let mut cum = vec![0.0];
            for w in pts.windows(2) {
                let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
                cum.push(cum.last().unwrap() + d);
            }
            paths.insert(m, (pts, cum));
        }
        ZonePaths { paths }
    }

    fn length(&self, m: &Movement) -> f64 {
        *self.paths[m].1.last().unwrap()
    }

    /// Position and heading `s` metres into the path.
    fn at(&self, m: &Movement, s: f64) -> (Point, f64) {
        let (pts, cum) = &self.paths[m];
        let i = cum.partition_point(|c| *c <= s).clamp(1, pts.len() - 1);
        let (a, b) = (pts[i - 1], pts[i]);
        let seg = cum[i] - cum[i - 1];
        let u = if seg > 0.0 { ((s - cum[i - 1]) / seg).clamp(0.0, 1.0) } else { 0.0 };
        let p = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])];
        (p, crate::vehicle::heading_of([b[0] - a[0], b[1] - a[1]]))
    }
}

/// Counts consecutive same-lane pairs closer than `limit` on one arm and
/// returns the smallest same-lane gap. Items are `(station, lateral)`.
fn spacing_check(items: &mut [(f64, f64)], lane_width: f64, limit: f64) -> (u64, f64) {
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let gap = items[j].0 - items[i].0;
            if (items[j].1 - items[i].1).abs() < 0.5 * lane_width {
                min_gap = min_gap.min(gap);
                if gap < limit {
                    violations += 1;
                }
                break;
            }
            if gap >= limit.max(50.0) {
                break;
            }
        }
    }
    (violations, min_gap)
}

/// Conflicting pairs among in-zone vehicles whose keys `related` accepts.
fn zone_check<K>(inside: &[(K, Movement)], cm: &ConflictMatrix, related: impl Fn(&K, &K) -> bool) -> u64 {
    let mut n = 0;
    for i in 0..inside.len() {
        for j in i + 1..inside.len() {
            if related(&inside[i].0, &inside[j].0) && cm.movements_conflict(&inside[i].1, &inside[j].1) {
                n += 1;
            }
        }
    }
    n
}
