//! Scenario and experiment configuration, stored as TOML.
//!
//! Every field has a default, so an empty file is a valid scenario. The
//! `version` field is checked against [`SCHEMA_VERSION`].

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rcs::Connectivity;
use crate::scenario::{Arm, IntersectionGeometry, Turn};
use crate::scheduler::{FormationParams, LanePolicy};
use crate::vehicle::{PreviewGains, VehicleParams};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    #[default]
    Flexible,
    Fixed,
    Signalized,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Flexible, Policy::Fixed, Policy::Signalized];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Flexible => "flexible",
            Policy::Fixed => "fixed",
            Policy::Signalized => "signalized",
        }
    }

    /// Lane policy of the unsignalized scheduler, `None` for the signal.
    pub fn lane_policy(self) -> Option<LanePolicy> {
        match self {
            Policy::Flexible => Some(LanePolicy::Flexible),
            Policy::Fixed => Some(LanePolicy::Fixed),
            Policy::Signalized => None,
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flexible" => Ok(Policy::Flexible),
            "fixed" => Ok(Policy::Fixed),
            "signalized" => Ok(Policy::Signalized),
            _ => Err(Error::Config(format!("unknown policy '{s}' (flexible, fixed, signalized)"))),
        }
    }
}

/// Arms and turns that may enter during one green phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub arms: Vec<Arm>,
    pub turns: Vec<Turn>,
}

impl Phase {
    pub fn permits(&self, arm: Arm, turn: Turn) -> bool {
        self.arms.contains(&arm) && self.turns.contains(&turn)
    }
}

/// Fixed-time plan: each phase gets `green` seconds followed by `yellow`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalTiming {
    pub green: f64,
    pub yellow: f64,
    pub phases: Vec<Phase>,
}

impl Default for SignalTiming {
    fn default() -> Self {
        use Arm::*;
        use Turn::*;
        SignalTiming {
            green: 20.0,
            yellow: 3.0,
            phases: vec![
                Phase { arms: vec![North, South], turns: vec![Straight, Right] },
                Phase { arms: vec![North, South], turns: vec![Left] },
                Phase { arms: vec![East, West], turns: vec![Straight, Right] },
                Phase { arms: vec![East, West], turns: vec![Left] },
            ],
        }
    }
}

impl SignalTiming {
    pub fn cycle(&self) -> f64 {
        self.phases.len() as f64 * (self.green + self.yellow)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() || !(self.green > 0.0) || !(self.yellow >= 0.0) {
            return Err(Error::Config(format!("invalid signal timing {self:?}")));
        }
        Ok(())
    }

    fn phase_index(&self, t: f64) -> (usize, f64) {
        let span = self.green + self.yellow;
        let tc = t.rem_euclid(self.cycle());
        let i = ((tc / span).floor() as usize).min(self.phases.len() - 1);
        (i, tc - i as f64 * span)
    }

    /// End of the green interval open at `t` for the movement, if any.
    pub fn green_end(&self, arm: Arm, turn: Turn, t: f64) -> Option<f64> {
        let (i, into) = self.phase_index(t);
        (into < self.green && self.phases[i].permits(arm, turn)).then_some(t - into + self.green)
    }

    /// Start of the next green for the movement at or after `t`.
    pub fn next_green(&self, arm: Arm, turn: Turn, t: f64) -> Option<f64> {
        if self.green_end(arm, turn, t).is_some() {
            return Some(t);
        }
        let span = self.green + self.yellow;
        let (i, into) = self.phase_index(t);
        let start = t - into;
        (1..=self.phases.len()).find_map(|d| {
            let j = (i + d) % self.phases.len();
            self.phases[j].permits(arm, turn).then_some(start + d as f64 * span)
        })
    }
}

/// Queue model of the signalized baseline.
///
/// Every vehicle occupies `0.5 d_F` of road (the same envelope the formation
/// keeps) and keeps at least `standstill_gap` beyond it. The safe speed
/// towards a leader is the largest speed from which, after `reaction_time`,
/// braking at `comfortable_decel` stops behind the leader's own stopping point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FollowingModel {
    pub standstill_gap: f64,
    pub reaction_time: f64,
    pub comfortable_decel: f64,
}

impl Default for FollowingModel {
    fn default() -> Self {
        FollowingModel { standstill_gap: 2.0, reaction_time: 1.0, comfortable_decel: 4.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub policy: Policy,
    /// Total arrivals per hour over the four arms.
    pub volume: f64,
    /// Shares of right, straight and left turns.
    pub proportions: [f64; 3],
    pub n_total: usize,
    /// Leading vehicles excluded from the statistics.
    pub n_warm: usize,
    pub seed: u64,
    /// Simulation step, s. Must divide the switching cycle and `d_F / v_F`.
    pub dt: f64,
    pub connectivity: Connectivity,
    /// Availability adjustments per admission before a vehicle is held back.
    pub max_replans: usize,
    /// Node budget of each joint path search; past it the vehicles of the
    /// arm are planned one after another instead.
    pub cbs_node_budget: usize,
    /// A run that has not finished by this time is aborted.
    pub max_time: f64,
    pub log_trajectories: bool,
    /// Keep each admission round's layer assignment and path searches.
    pub log_planning: bool,
    /// Logging decimation in steps.
    pub log_every: usize,
    pub geometry: IntersectionGeometry,
    pub formation: FormationParams,
    pub vehicle: VehicleParams,
    pub gains: PreviewGains,
    pub signal: SignalTiming,
    pub following: FollowingModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            version: SCHEMA_VERSION,
            policy: Policy::Flexible,
            volume: 3000.0,
            proportions: [0.33, 0.33, 0.34],
            n_total: 200,
            n_warm: 100,
            seed: 0,
            dt: 0.01,
            connectivity: Connectivity::Eight,
            max_replans: 5,
            cbs_node_budget: 200,
            max_time: 7200.0,
            log_trajectories: false,
            log_planning: false,
            log_every: 10,
            geometry: IntersectionGeometry::default(),
            formation: FormationParams::default(),
            vehicle: VehicleParams::default(),
            gains: PreviewGains::default(),
            signal: SignalTiming::default(),
            following: FollowingModel::default(),
        }
    }
}

fn integer_ratio(a: f64, b: f64) -> Option<u64> {
    let r = a / b;
    let n = r.round();
    (n >= 1.0 && (r - n).abs() < 1e-6).then_some(n as u64)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema version {} (expected {SCHEMA_VERSION})", self.version)));
        }
        let sum: f64 = self.proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.proportions.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config(format!(
                "turning proportions {:?} must be non-negative and sum to 1",
                self.proportions
            )));
        }
        if !(self.volume > 0.0 && self.volume <= 10000.0) {
            return Err(Error::Config(format!("volume {} outside (0, 10000] veh/h", self.volume)));
        }
        if self.n_total == 0 || self.n_warm >= self.n_total {
            return Err(Error::Config(format!("need n_warm < n_total, got {} and {}", self.n_warm, self.n_total)));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed {} does not fit a signed 64-bit integer", self.seed)));
        }
        if self.log_every == 0 || self.cbs_node_budget == 0 || !(self.max_time > 0.0) {
            return Err(Error::Config("log_every, cbs_node_budget and max_time must be positive".into()));
        }
        self.geometry.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.formation.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.vehicle.validate(self.formation.v_f).map_err(|e| Error::Config(e.to_string()))?;
        self.signal.validate()?;
        if !(self.dt > 0.0) || self.ticks_per_cycle().is_none() || self.ticks_per_cell().is_none() {
            return Err(Error::Config(format!(
                "dt = {} must divide T_F = {} and d_F / v_F = {}",
                self.dt,
                self.formation.t_f,
                self.formation.d_f / self.formation.v_f
            )));
        }
        Ok(())
    }

    /// Simulation steps per switching cycle.
    pub fn ticks_per_cycle(&self) -> Option<u64> {
        integer_ratio(self.formation.t_f, self.dt)
    }

    /// Simulation steps for the formation to advance one cell.
    pub fn ticks_per_cell(&self) -> Option<u64> {
        integer_ratio(self.formation.d_f / self.formation.v_f, self.dt)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }
}

/// Cross product of volumes, turning proportions, policies and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentMatrix {
    pub volumes: Vec<f64>,
    pub proportions: Vec<[f64; 3]>,
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    pub out_dir: String,
}

impl Default for ExperimentMatrix {
    fn default() -> Self {
        ExperimentMatrix {
            volumes: vec![1000.0, 2000.0, 3000.0, 4000.0, 5000.0],
            proportions: vec![[0.33, 0.33, 0.34], [0.25, 0.25, 0.5], [0.25, 0.5, 0.25], [0.5, 0.25, 0.25]],
            policies: Policy::ALL.to_vec(),
            seeds: (0..10).collect(),
            out_dir: "results".into(),
        }
    }
}

/// A matrix file: the sweep plus the scenario every run starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixConfig {
    pub version: u32,
    pub matrix: ExperimentMatrix,
    pub base: ScenarioConfig,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig { version: SCHEMA_VERSION, matrix: ExperimentMatrix::default(), base: ScenarioConfig::default() }
    }
}

impl MatrixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema version {} (expected {SCHEMA_VERSION})", self.version)));
        }
        let m = &self.matrix;
        if m.volumes.is_empty() || m.proportions.is_empty() || m.policies.is_empty() || m.seeds.is_empty() {
            return Err(Error::Config("matrix lists must be nonempty".into()));
        }
        for run in self.runs() {
            run.validate()?;
        }
        Ok(())
    }

    /// Every run, ordered by volume, proportions, policy, then seed.
    pub fn runs(&self) -> Vec<ScenarioConfig> {
        let m = &self.matrix;
        let mut out = Vec::with_capacity(m.volumes.len() * m.proportions.len() * m.policies.len() * m.seeds.len());
        for &volume in &m.volumes {
            for &proportions in &m.proportions {
                for &policy in &m.policies {
                    for &seed in &m.seeds {
                        out.push(ScenarioConfig { volume, proportions, policy, seed, ..self.base.clone() });
                    }
                }
            }
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("matrix config serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigFile {
    Scenario(ScenarioConfig),
    Matrix(MatrixConfig),
}

/// Parses TOML text. A document with a `[matrix]` table is an experiment
/// matrix, anything else a single scenario.
pub fn parse_config_str(text: &str) -> Result<ConfigFile> {
    let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    if value.contains_key("matrix") {
        let m: MatrixConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        Ok(ConfigFile::Matrix(m))
    } else {
        let c: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(ConfigFile::Scenario(c))
    }
}

pub fn parse_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_config(c: &ScenarioConfig) -> String {
    c.to_toml()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let ConfigFile::Scenario(c) = parse_config_str("").unwrap() else { panic!() };
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.policy, Policy::Flexible);
        assert_eq!(c.seed, 0);
        assert_eq!(c.formation.d_f, 17.5);
        assert_eq!(c.vehicle.a_min, -10.0);
    }

    #[test]
    fn proportions_must_sum_to_one() {
        let err = parse_config_str("proportions = [0.5, 0.5, 0.5]").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn malformed_input_names_the_line() {
        let err = parse_config_str("volume = 1000\nseed = \"x\"\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_config_str("bogus = 1").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn default_matrix_has_600_runs() {
        let ConfigFile::Matrix(m) = parse_config_str("[matrix]\n").unwrap() else { panic!() };
        assert_eq!(m.runs().len(), 600);
    }

    #[test]
    fn round_trip() {
        let c = ScenarioConfig { policy: Policy::Signalized, volume: 1234.5, seed: 99, ..Default::default() };
        let ConfigFile::Scenario(back) = parse_config_str(&write_config(&c)).unwrap() else { panic!() };
        assert_eq!(back, c);
        let m = MatrixConfig::default();
        let ConfigFile::Matrix(back) = parse_config_str(&m.to_toml()).unwrap() else { panic!() };
        assert_eq!(back, m);
    }

    #[test]
    fn dt_must_divide_the_cycle() {
        assert!(parse_config_str("dt = 0.03").is_err());
        assert!(parse_config_str("dt = 0.05").is_ok());
    }

    #[test]
    fn signal_cycle() {
        let s = SignalTiming::default();
        assert_eq!(s.cycle(), 92.0);
        assert_eq!(s.green_end(Arm::North, Turn::Straight, 5.0), Some(20.0));
        assert_eq!(s.green_end(Arm::North, Turn::Straight, 21.0), None);
        assert_eq!(s.green_end(Arm::East, Turn::Left, 70.0), Some(89.0));
        assert_eq!(s.next_green(Arm::North, Turn::Straight, 20.5), Some(92.0));
        assert_eq!(s.next_green(Arm::North, Turn::Left, 20.5), Some(23.0));
    }
}
