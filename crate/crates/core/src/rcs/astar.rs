//! Space-time A* for one vehicle under CBS constraints and fixed obstacles.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use super::{
    move_conflict, Agent, CbsConstraint, Connectivity, CostMode, Forbidden, RcsGrid, RelativePath, RelativePoint,
};
use crate::{Error, Result};

/// Everything a single-vehicle search needs besides its own constraints.
#[derive(Debug, Clone, Copy)]
pub struct PlanContext<'a> {
    pub grid: &'a RcsGrid,
    /// Paths of vehicles that are not replanned; they are avoided exactly as
    /// other agents would be.
    pub obstacles: &'a [RelativePath],
    /// Paths that may be crossed but are avoided among equally cheap
    /// alternatives (the other agents' current plans).
    pub soft: &'a [RelativePath],
    pub connectivity: Connectivity,
    pub cost_mode: CostMode,
    /// Last step the search may reach, before constraint slack.
    pub horizon: usize,
}

struct Blocks {
    vertex: HashSet<(RelativePoint, usize)>,
    edge: HashSet<(RelativePoint, RelativePoint, usize)>,
    latest: usize,
}

impl Blocks {
    fn new(agent: usize, constraints: &[CbsConstraint]) -> Self {
        let mut b = Blocks { vertex: HashSet::new(), edge: HashSet::new(), latest: 0 };
        for c in constraints.iter().filter(|c| c.agent == agent) {
            match c.forbidden {
                Forbidden::Vertex(p) => {
                    b.vertex.insert((p, c.step));
                    b.latest = b.latest.max(c.step);
                }
                Forbidden::Edge(p, q) => {
                    b.edge.insert((p, q, c.step));
                    b.latest = b.latest.max(c.step + 1);
                }
            }
        }
        b
    }
}

fn obstacle_allows(obstacles: &[RelativePath], p: RelativePoint, q: RelativePoint, j: usize) -> bool {
    obstacles.iter().all(|o| {
        let Some(o1) = o.at(j + 1) else { return true };
        if o1 == q {
            return false;
        }
        match o.at(j) {
            Some(o0) => move_conflict(p, q, o0, o1).is_none(),
            None => true,
        }
    })
}

/// Last step at which holding `goal` is impossible, or `None` if it is never
/// blocked. With a deadline only steps up to it matter.
fn goal_blocked_until(
    goal: RelativePoint,
    blocks: &Blocks,
    obstacles: &[RelativePath],
    deadline: Option<usize>,
) -> std::result::Result<Option<usize>, ()> {
    let mut last = None;
    for &(p, t) in &blocks.vertex {
        if p == goal && deadline.is_none_or(|d| t <= d) {
            last = last.max(Some(t));
        }
    }
    for &(p, q, t) in &blocks.edge {
        if p == goal && q == goal && deadline.is_none_or(|d| t < d) {
            last = last.max(Some(t + 1));
        }
    }
    for o in obstacles {
        if !o.exits && o.points.last() == Some(&goal) {
            // parked on the goal for good
            return Err(());
        }
        let end = deadline.map_or(o.points.len(), |d| o.points.len().min(d + 1));
        for (t, p) in o.points.iter().enumerate().take(end) {
            if *p == goal {
                last = last.max(Some(t));
            }
            if let Some(&q) = o.points.get(t + 1) {
                if t + 1 < end && move_conflict(goal, goal, *p, q).is_some() {
                    last = last.max(Some(t + 1));
                }
            }
        }
    }
    Ok(last)
}

/// Cheapest path for one vehicle that respects its constraints, the
/// obstacles and the grid. Ties go to fewer clashes with the soft paths,
/// then fewer moves in arrival-time mode or earlier arrival in distance mode.
pub fn plan_single(agent: &Agent, constraints: &[CbsConstraint], ctx: &PlanContext<'_>) -> Result<RelativePath> {
    let fail = |why: &str| Err(Error::PlanningInfeasible(format!("vehicle {}: {why}", agent.id)));
    let conn = ctx.connectivity;
    let blocks = Blocks::new(agent.id, constraints);
    // Waiting is free in distance mode, so a horizon that grew with the
    // constraints would leave CBS an endless plateau of equal-cost retimings.
    let limit = match (agent.deadline, ctx.cost_mode) {
        (Some(d), _) => d,
        (None, CostMode::TotalDistance) => ctx.horizon,
        (None, CostMode::ArrivalTime) => {
            ctx.horizon.max(blocks.latest + 1) + conn.distance(agent.start, agent.goal) as usize
        }
    };
    if !ctx.grid.valid(agent.start, 0) || blocks.vertex.contains(&(agent.start, 0)) {
        return fail("start cell not available");
    }
    if ctx.obstacles.iter().any(|o| o.at(0) == Some(agent.start)) {
        return fail("start cell occupied");
    }
    let Ok(goal_block) = goal_blocked_until(agent.goal, &blocks, ctx.obstacles, agent.deadline) else {
        return fail("goal permanently occupied");
    };
    let h = |p: RelativePoint| conn.distance(p, agent.goal) as u32;
    let key = |t: u32, moves: u32, clashes: u32, hp: u32| match ctx.cost_mode {
        CostMode::ArrivalTime => (t + hp, clashes, moves + hp),
        CostMode::TotalDistance => (moves + hp, clashes, t + hp),
    };
    let clash = |p: RelativePoint, q: RelativePoint, j: usize| {
        ctx.soft
            .iter()
            .filter(|o| match (o.at(j), o.at(j + 1)) {
                (_, Some(o1)) if o1 == q => true,
                (Some(o0), Some(o1)) => move_conflict(p, q, o0, o1).is_some(),
                _ => false,
            })
            .count() as u32
    };

    type Node = (RelativePoint, u32);
    type Entry = ((u32, u32, u32), u64, RelativePoint, u32, u32, u32, Option<Node>);
    let mut open: BinaryHeap<Reverse<Entry>> = BinaryHeap::new();
    let mut parent: HashMap<Node, Node> = HashMap::new();
    let mut closed: HashSet<Node> = HashSet::new();
    let mut seq = 0u64;
    open.push(Reverse((key(0, 0, 0, h(agent.start)), seq, agent.start, 0, 0, 0, None)));

    while let Some(Reverse((_, _, p, t, moves, clashes, from))) = open.pop() {
        if !closed.insert((p, t)) {
            continue;
        }
        if let Some(prev) = from {
            parent.insert((p, t), prev);
        }
        let tu = t as usize;
        let at_goal = p == agent.goal && goal_block.is_none_or(|b| tu >= b);
        let done = match agent.deadline {
            Some(d) => at_goal && tu <= d,
            None => at_goal,
        };
        if done {
            let mut points = vec![p];
            let mut cur = (p, t);
            while let Some(&prev) = parent.get(&cur) {
                points.push(prev.0);
                cur = prev;
            }
            points.reverse();
            if let Some(d) = agent.deadline {
                points.resize(d + 1, agent.goal);
            }
            return Ok(RelativePath { points, exits: agent.deadline.is_some() });
        }
        if tu >= limit {
            continue;
        }
        for &(dx, dy) in conn.offsets() {
            let q = RelativePoint::new(p.x + dx, p.y + dy);
            let nt = tu + 1;
            if !ctx.grid.valid(q, nt)
                || closed.contains(&(q, t + 1))
                || blocks.vertex.contains(&(q, nt))
                || blocks.edge.contains(&(p, q, tu))
                || !obstacle_allows(ctx.obstacles, p, q, tu)
            {
                continue;
            }
            if agent.deadline.is_some_and(|d| nt + h(q) as usize > d) {
                continue;
            }
            let nm = moves + u32::from(q != p);
            let nc = clashes + clash(p, q, tu);
            seq += 1;
            open.push(Reverse((key(t + 1, nm, nc, h(q)), seq, q, t + 1, nm, nc, Some((p, t)))));
        }
    }
    fail("no path within the horizon")
}
