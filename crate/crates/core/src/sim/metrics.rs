//! Run results, safety counters, trajectory logs and snapshots.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Policy;
use crate::scenario::{Arm, Turn};
use crate::scheduler::Distribution;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleOutcome {
    pub id: usize,
    pub arm: Arm,
    pub turn: Turn,
    /// Lane the vehicle was generated in.
    pub entry_lane: usize,
    /// Lane it crossed the stop line in.
    pub lane: usize,
    pub generated: f64,
    /// Time it was let onto the arm.
    pub admitted: f64,
    pub crossed: f64,
    /// `crossed - generated`.
    pub travel_time: f64,
    /// Formation cell the vehicle crossed in, unsignalized runs only.
    pub slot: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    /// Ticks times pairs with two vehicles of one lane closer than `0.5 d_F`.
    pub spacing_violations: u64,
    /// Ticks times pairs of conflicting movements inside the zone together
    /// (same slot for the formation policies, any time for the signal).
    pub zone_violations: u64,
    /// Consecutive stop-line crossings of different layers closer than
    /// `d_c / v_F` minus the tolerance.
    pub headway_violations: u64,
    /// Smallest longitudinal gap seen between two vehicles of one lane.
    pub min_same_lane_gap: f64,
    /// Smallest time between crossings of different layers.
    pub min_layer_headway: f64,
}

impl Default for SafetyReport {
    fn default() -> Self {
        SafetyReport {
            spacing_violations: 0,
            zone_violations: 0,
            headway_violations: 0,
            min_same_lane_gap: f64::INFINITY,
            min_layer_headway: f64::INFINITY,
        }
    }
}

impl SafetyReport {
    pub fn is_clean(&self) -> bool {
        self.spacing_violations == 0 && self.zone_violations == 0 && self.headway_violations == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layers_used: usize,
    pub mean_size: f64,
    pub max_size: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Admission attempts refused because the entry cell was taken.
    pub entry_blocked: u64,
    /// Admission attempts refused because no schedule was found.
    pub unschedulable: u64,
    pub availability_adjustments: u64,
    pub cbs_calls: u64,
    pub cbs_failures: u64,
    pub longitudinal_solves: u64,
    /// Replans that failed; the vehicle kept its previous schedule.
    pub longitudinal_failures: u64,
    /// Largest station error at a cycle boundary before replanning, m.
    pub max_boundary_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: Policy,
    pub volume: f64,
    pub proportions: [f64; 3],
    pub seed: u64,
    pub n_warm: usize,
    /// Every vehicle that crossed, in id order.
    pub vehicles: Vec<VehicleOutcome>,
    pub mean_travel_time: f64,
    pub std_travel_time: f64,
    pub layers: Option<LayerStats>,
    /// Counted vehicles per hour between the first counted arrival and the
    /// last counted crossing.
    pub throughput: f64,
    pub end_time: f64,
    pub safety: SafetyReport,
    pub diagnostics: Diagnostics,
}

impl MetricsReport {
    pub fn counted(&self) -> impl Iterator<Item = &VehicleOutcome> {
        self.vehicles.iter().filter(move |v| v.id >= self.n_warm)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub(crate) fn finish(&mut self) {
        if let Ok((m, s)) = average_travel_time(self) {
            self.mean_travel_time = m;
            self.std_travel_time = s;
        }
        let counted: Vec<&VehicleOutcome> = self.counted().collect();
        if let (Some(first), Some(last)) = (
            counted.iter().map(|v| v.generated).min_by(f64::total_cmp),
            counted.iter().map(|v| v.crossed).max_by(f64::total_cmp),
        ) {
            if last > first {
                self.throughput = counted.len() as f64 * 3600.0 / (last - first);
            }
        }
        let mut sizes: BTreeMap<i64, usize> = BTreeMap::new();
        for v in &self.vehicles {
            if let Some(s) = v.slot {
                *sizes.entry(s).or_default() += 1;
            }
        }
        if !sizes.is_empty() {
            self.layers = Some(LayerStats {
                layers_used: sizes.len(),
                mean_size: self.vehicles.len() as f64 / sizes.len() as f64,
                max_size: sizes.values().copied().max().unwrap_or(0),
            });
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation of the counted travel times.
pub fn average_travel_time(report: &MetricsReport) -> Result<(f64, f64)> {
    let tt: Vec<f64> = report.counted().map(|v| v.travel_time).collect();
    if tt.is_empty() {
        return Err(Error::InvalidState("no counted vehicles".into()));
    }
    Ok(mean_std(&tt))
}

/// Per-seed means and their cross-seed mean and population deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate_seeds(reports: &[MetricsReport]) -> Result<SeedAggregate> {
    let per_seed =
        reports.iter().map(|r| average_travel_time(r).map(|(m, _)| (r.seed, m))).collect::<Result<Vec<_>>>()?;
    if per_seed.is_empty() {
        return Err(Error::InvalidState("no reports".into()));
    }
    let means: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
    let (mean, std) = mean_std(&means);
    Ok(SeedAggregate { per_seed, mean, std })
}

/// One conflict-based search made while admitting vehicles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub arm: Arm,
    pub agents: Vec<usize>,
    /// Nodes expanded and generated by the searches that succeeded, the
    /// one-at-a-time fallback included.
    pub expanded: usize,
    pub generated: usize,
    /// Sum of arrival steps; `None` when the joint search failed.
    pub cost: Option<u64>,
}

/// One pass of grouping and path search at an admission tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningRound {
    pub t: f64,
    pub distribution: Distribution,
    pub searches: Vec<SearchRecord>,
    /// Vehicles sent back to the grouping step.
    pub infeasible: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
    pub a: f64,
    pub delta: f64,
}

/// Decimated states of every vehicle on the road. Frame `i` is at
/// `i * interval`; every frame is present even when empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub interval: f64,
    pub frames: Vec<Vec<TrajectoryRecord>>,
}

impl TrajectoryLog {
    pub fn horizon(&self) -> f64 {
        self.frames.len().saturating_sub(1) as f64 * self.interval
    }

    /// Flat CSV, header `t,id,x,y,v,theta,a,delta`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,id,x,y,v,theta,a,delta\n");
        for r in self.frames.iter().flatten() {
            out.push_str(&format!("{},{},{},{},{},{},{},{}\n", r.t, r.id, r.x, r.y, r.v, r.theta, r.a, r.delta));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotVehicle {
    pub state: TrajectoryRecord,
    /// Earlier positions, oldest first.
    pub trail: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub vehicles: Vec<SnapshotVehicle>,
}

/// All vehicles on the road at the last logged frame not after `t`, with
/// their positions over the preceding `trail` seconds.
pub fn export_snapshot(log: &TrajectoryLog, t: f64, trail: f64) -> Result<Snapshot> {
    if log.frames.is_empty() || t.is_nan() || t < 0.0 || t > log.horizon() + 1e-9 {
        return Err(Error::InvalidArgument(format!("t = {t} outside the logged horizon [0, {}]", log.horizon())));
    }
    let i = ((t / log.interval) + 1e-9).floor() as usize;
    let i = i.min(log.frames.len() - 1);
    let back = (trail / log.interval).round() as usize;
    let vehicles = log.frames[i]
        .iter()
        .map(|s| {
            let trail = log.frames[i.saturating_sub(back)..i]
                .iter()
                .filter_map(|f| f.iter().find(|r| r.id == s.id).map(|r| [r.x, r.y]))
                .collect();
            SnapshotVehicle { state: *s, trail }
        })
        .collect();
    Ok(Snapshot { t: i as f64 * log.interval, vehicles })
}
