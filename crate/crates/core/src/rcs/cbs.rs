//! Conflict-based search over [`plan_single`].

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::astar::{plan_single, PlanContext};
use super::{
    move_conflict, Agent, CbsConstraint, Conflict, ConflictType, Connectivity, CostMode, Forbidden, RcsGrid,
    RelativePath,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbsConfig {
    pub connectivity: Connectivity,
    pub cost_mode: CostMode,
    pub node_budget: usize,
    /// Upper bound on the time horizon of a single search.
    pub horizon_cap: usize,
    /// Keep every generated node's constraint set (diagnostics and tests).
    #[serde(skip)]
    pub record_tree: bool,
}

impl Default for CbsConfig {
    fn default() -> Self {
        CbsConfig {
            connectivity: Connectivity::Eight,
            cost_mode: CostMode::ArrivalTime,
            node_budget: 10_000,
            horizon_cap: 256,
            record_tree: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CbsStats {
    pub expanded: usize,
    pub generated: usize,
    pub root_conflicts: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceNode {
    pub parent: Option<usize>,
    pub constraints: Vec<CbsConstraint>,
}

#[derive(Debug, Clone)]
pub struct CbsSolution {
    pub paths: BTreeMap<usize, RelativePath>,
    pub cost: u64,
    pub stats: CbsStats,
    pub tree: Vec<TraceNode>,
}

impl CbsSolution {
    /// `{"<id>": [[x, y], ...], ...}`
    pub fn paths_json(&self) -> String {
        let map: BTreeMap<String, Vec<[i32; 2]>> =
            self.paths.iter().map(|(id, p)| (id.to_string(), p.points.iter().map(|q| [q.x, q.y]).collect())).collect();
        serde_json::to_string(&map).expect("paths serialize")
    }

    /// Node counts and final cost of the search tree.
    pub fn tree_json(&self) -> String {
        serde_json::json!({
            "expanded": self.stats.expanded,
            "generated": self.stats.generated,
            "root_conflicts": self.stats.root_conflicts,
            "cost": self.cost,
        })
        .to_string()
    }
}

/// All pairwise conflicts, ordered by time.
pub fn detect_conflicts(paths: &BTreeMap<usize, RelativePath>) -> Vec<Conflict> {
    let entries: Vec<(usize, &RelativePath)> = paths.iter().map(|(&id, p)| (id, p)).collect();
    detect(&entries)
}

fn detect(paths: &[(usize, &RelativePath)]) -> Vec<Conflict> {
    let horizon = paths.iter().map(|(_, p)| p.points.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for j in 0..horizon {
        for (ia, &(a, pa)) in paths.iter().enumerate() {
            for &(b, pb) in &paths[ia + 1..] {
                let (Some(a0), Some(b0)) = (pa.at(j), pb.at(j)) else { continue };
                if a0 == b0 {
                    out.push(Conflict {
                        a,
                        b,
                        step: j,
                        kind: ConflictType::Vertex,
                        a_move: (a0, a0),
                        b_move: (b0, b0),
                    });
                    continue;
                }
                let (Some(a1), Some(b1)) = (pa.at(j + 1), pb.at(j + 1)) else { continue };
                if let Some(kind) = move_conflict(a0, a1, b0, b1) {
                    out.push(Conflict { a, b, step: j, kind, a_move: (a0, a1), b_move: (b0, b1) });
                }
            }
        }
    }
    out.sort_by_key(|c| c.time_key());
    out
}

fn constraint_for(agent: usize, c: &Conflict, mv: (super::RelativePoint, super::RelativePoint)) -> CbsConstraint {
    let forbidden = match c.kind {
        ConflictType::Vertex => Forbidden::Vertex(mv.0),
        _ => Forbidden::Edge(mv.0, mv.1),
    };
    CbsConstraint { agent, step: c.step, forbidden }
}

struct Node {
    constraints: Vec<CbsConstraint>,
    paths: Vec<RelativePath>,
    cost: u64,
    conflicts: Vec<Conflict>,
}

/// Conflict-free paths minimising the summed per-vehicle cost.
///
/// `obstacles` are paths of vehicles that keep their plan; the agents avoid
/// them but never constrain them.
pub fn plan_cbs(agents: &[Agent], grid: &RcsGrid, obstacles: &[RelativePath], cfg: &CbsConfig) -> Result<CbsSolution> {
    let mut ids: Vec<usize> = agents.iter().map(|a| a.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("agent ids must be unique".into()));
    }
    for (i, a) in agents.iter().enumerate() {
        for b in &agents[i + 1..] {
            if a.start == b.start || (a.goal == b.goal && a.deadline.is_none() && b.deadline.is_none()) {
                return Err(Error::InvalidArgument(format!("agents {} and {} share a start or goal", a.id, b.id)));
            }
        }
    }
    let max_dist = agents.iter().map(|a| cfg.connectivity.distance(a.start, a.goal) as usize).max().unwrap_or(0);
    let obstacle_len = obstacles.iter().map(|o| o.points.len()).max().unwrap_or(0);
    let horizon = (max_dist + grid.cell_count()).max(obstacle_len).min(cfg.horizon_cap);
    let ctx =
        PlanContext { grid, obstacles, soft: &[], connectivity: cfg.connectivity, cost_mode: cfg.cost_mode, horizon };
    let index: BTreeMap<usize, usize> = agents.iter().enumerate().map(|(i, a)| (a.id, i)).collect();

    let conflicts_of = |paths: &[RelativePath]| {
        let entries: Vec<(usize, &RelativePath)> = agents.iter().map(|a| a.id).zip(paths.iter()).collect();
        detect(&entries)
    };

    let mut paths = Vec::with_capacity(agents.len());
    for a in agents {
        let path = plan_single(a, &[], &PlanContext { soft: &paths, ..ctx })?;
        paths.push(path);
    }
    let cost = paths.iter().map(|p| p.cost(cfg.cost_mode)).sum();
    let conflicts = conflicts_of(&paths);
    let mut stats = CbsStats { root_conflicts: conflicts.len(), generated: 1, ..Default::default() };
    let mut tree = Vec::new();
    if cfg.record_tree {
        tree.push(TraceNode { parent: None, constraints: Vec::new() });
    }

    let mut arena: Vec<Option<Node>> = vec![Some(Node { constraints: Vec::new(), paths, cost, conflicts })];
    let mut open: BinaryHeap<Reverse<(u64, usize, usize)>> = BinaryHeap::new();
    open.push(Reverse((cost, arena[0].as_ref().unwrap().conflicts.len(), 0)));

    while let Some(Reverse((_, _, id))) = open.pop() {
        let node = arena[id].take().expect("node expanded once");
        stats.expanded += 1;
        if node.conflicts.is_empty() {
            let paths = agents.iter().map(|a| a.id).zip(node.paths).collect();
            return Ok(CbsSolution { paths, cost: node.cost, stats, tree });
        }
        if stats.expanded >= cfg.node_budget {
            return Err(Error::SearchBudget(stats.expanded));
        }
        let c = node.conflicts[0];
        for (agent, mv) in [(c.a, c.a_move), (c.b, c.b_move)] {
            let new_c = constraint_for(agent, &c, mv);
            let mut constraints = node.constraints.clone();
            constraints.push(new_c);
            let i = index[&agent];
            let others: Vec<RelativePath> =
                node.paths.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| p.clone()).collect();
            let Ok(path) = plan_single(&agents[i], &constraints, &PlanContext { soft: &others, ..ctx }) else {
                continue;
            };
            let mut paths = node.paths.clone();
            paths[i] = path;
            let cost = paths.iter().map(|p| p.cost(cfg.cost_mode)).sum();
            let conflicts = conflicts_of(&paths);
            let child = arena.len();
            stats.generated += 1;
            if cfg.record_tree {
                tree.push(TraceNode { parent: Some(id), constraints: constraints.clone() });
            }
            open.push(Reverse((cost, conflicts.len(), child)));
            arena.push(Some(Node { constraints, paths, cost, conflicts }));
        }
    }
    Err(Error::PlanningInfeasible(format!("no conflict-free plan for {} vehicles within the horizon", agents.len())))
}
