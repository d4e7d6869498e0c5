//! Best-first branch and bound over binary variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::conic::solve_with_bounds;
use super::{ConicMethod, Solution, SolveConfig, Status};
use crate::model_ir::{ModelIR, Sense, VarId, VarKind};

/// Integrality tolerance on binary values.
const INT_TOL: f64 = 1e-6;
/// Nodes between rounding attempts.
const ROUNDING_EVERY: usize = 25;
/// Groups without pseudo-cost history probed per node.
const PROBES_PER_NODE: usize = 8;

#[derive(Debug, Clone)]
struct Node {
    /// Binary fixings on the path from the root.
    fixings: Vec<(VarId, f64)>,
    bound: f64,
    depth: usize,
    seq: usize,
    /// Group, side and removed mass of the split that created the node.
    origin: Option<(usize, usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Max-heap order: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.seq.cmp(&self.seq))
    }
}

fn most_fractional(model: &ModelIR, x: &[f64]) -> Option<VarId> {
    let mut best: Option<(f64, VarId)> = None;
    for v in model.binaries() {
        let f = x[v.index()] - x[v.index()].floor();
        let dist = f.min(1.0 - f);
        if dist > INT_TOL && best.map_or(true, |(d, _)| dist > d) {
            best = Some((dist, v));
        }
    }
    best.map(|(_, v)| v)
}

/// Binaries tied by a row `z_1 + ... + z_n = 1`, in row order.
fn one_hot_groups(model: &ModelIR) -> Vec<Vec<VarId>> {
    let binary: Vec<bool> = model.variables().iter().map(|v| v.kind == VarKind::Binary).collect();
    model
        .linear_constraints()
        .iter()
        .filter(|c| c.sense == Sense::Eq && c.rhs == 1.0 && c.expr.constant == 0.0 && c.expr.terms.len() >= 2)
        .filter(|c| c.expr.terms.iter().all(|&(v, a)| binary[v.index()] && a == 1.0))
        .map(|c| c.expr.terms.iter().map(|&(v, _)| v).collect())
        .collect()
}

/// How a node is split into two children.
#[derive(Debug, Clone)]
enum Split {
    /// One binary fixed to 0 and to 1.
    Var(VarId),
    /// An ordered group: the left part set to zero in one child and the
    /// right part in the other.
    Group(Vec<VarId>, Vec<VarId>),
}

impl Split {
    fn children(&self) -> [Vec<(VarId, f64)>; 2] {
        match self {
            Split::Var(v) => [vec![(*v, 0.0)], vec![(*v, 1.0)]],
            Split::Group(left, right) => [
                left.iter().map(|&v| (v, 0.0)).collect(),
                right.iter().map(|&v| (v, 0.0)).collect(),
            ],
        }
    }
}

/// Average bound gain per unit of relaxed mass removed, per group and side.
#[derive(Debug, Clone, Default)]
struct PseudoCosts {
    sum: Vec<[f64; 2]>,
    count: Vec<[usize; 2]>,
}

impl PseudoCosts {
    fn new(groups: usize) -> Self {
        Self { sum: vec![[0.0; 2]; groups], count: vec![[0; 2]; groups] }
    }

    fn record(&mut self, group: usize, side: usize, gain: f64) {
        self.sum[group][side] += gain;
        self.count[group][side] += 1;
    }

    fn known(&self, group: usize) -> bool {
        self.count[group].iter().all(|&n| n > 0)
    }

    /// Per-unit gain for one side, or the mean over all groups when the
    /// side has no history yet.
    fn rate(&self, group: usize, side: usize) -> f64 {
        let n = self.count.get(group).map_or(0, |c| c[side]);
        if n > 0 {
            return self.sum[group][side] / n as f64;
        }
        let (tot, cnt) = self.sum.iter().zip(&self.count).fold((0.0, 0), |(t, c), (s, k)| {
            (t + s[side], c + k[side])
        });
        if cnt > 0 { tot / cnt as f64 } else { 1.0 }
    }
}

/// A group split together with the relaxed mass each child removes.
#[derive(Debug, Clone)]
struct GroupChoice {
    group: usize,
    split: Split,
    mass: [f64; 2],
}

/// Splits of every fractional group. A group is split after the position
/// `floor(sum_j j z_j)`; with two or more nonzero members that position
/// lies before the last of them, so both children cut off `x`.
fn group_choices(groups: &[Vec<VarId>], x: &[f64], fixed: &[(VarId, f64)]) -> Vec<GroupChoice> {
    let mut out = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let free: Vec<VarId> = g.iter().copied().filter(|v| fixed.iter().all(|(f, _)| f != v)).collect();
        if free.len() < 2 {
            continue;
        }
        let vals: Vec<f64> = free.iter().map(|v| x[v.index()].clamp(0.0, 1.0)).collect();
        if 1.0 - vals.iter().copied().fold(0.0, f64::max) <= INT_TOL {
            continue;
        }
        let total: f64 = vals.iter().sum();
        let mean = vals.iter().enumerate().map(|(j, v)| j as f64 * v).sum::<f64>() / total;
        let cut = (mean.floor() as usize + 1).clamp(1, free.len() - 1);
        let left: f64 = vals[..cut].iter().sum();
        let split = Split::Group(free[..cut].to_vec(), free[cut..].to_vec());
        out.push(GroupChoice { group: gi, split, mass: [left, total - left] });
    }
    out
}

fn score(c: &GroupChoice, pc: &PseudoCosts) -> f64 {
    (c.mass[0] * pc.rate(c.group, 0)).max(1e-6) * (c.mass[1] * pc.rate(c.group, 1)).max(1e-6)
}

/// The choice with the best pseudo-cost product.
fn pick(choices: Vec<GroupChoice>, pc: &PseudoCosts) -> Option<GroupChoice> {
    let mut best: Option<(f64, GroupChoice)> = None;
    for c in choices {
        let s = score(&c, pc);
        if best.as_ref().map_or(true, |(b, _)| s > *b) {
            best = Some((s, c));
        }
    }
    best.map(|(_, c)| c)
}

/// Any split of the free binaries, for nodes without a usable relaxation.
fn blind_split(model: &ModelIR, groups: &[Vec<VarId>], fixed: &[(VarId, f64)]) -> Option<Split> {
    let is_free = |v: &VarId| fixed.iter().all(|(f, _)| f != v);
    for g in groups {
        let free: Vec<VarId> = g.iter().copied().filter(is_free).collect();
        if free.len() >= 2 {
            let half = free.len() / 2;
            return Some(Split::Group(free[..half].to_vec(), free[half..].to_vec()));
        }
    }
    model.binaries().into_iter().find(is_free).map(Split::Var)
}

/// Fixes every binary: the largest member of each group is set to one and
/// the remaining binaries are rounded.
fn round_groups(model: &ModelIR, groups: &[Vec<VarId>], x: &[f64]) -> Vec<(VarId, f64)> {
    let mut val: Vec<Option<f64>> = vec![None; model.num_vars()];
    for g in groups {
        let top = g.iter().copied().max_by(|a, b| x[a.index()].total_cmp(&x[b.index()]));
        for &v in g {
            val[v.index()] = Some(if Some(v) == top { 1.0 } else { 0.0 });
        }
    }
    model.binaries().into_iter().map(|v| (v, val[v.index()].unwrap_or_else(|| x[v.index()].round()))).collect()
}

fn prunable(bound: f64, incumbent: f64, cfg: &SolveConfig) -> bool {
    let limit = incumbent.min(cfg.cutoff.unwrap_or(f64::INFINITY));
    bound >= limit - cfg.opt_tol * limit.abs().max(1.0)
}

/// Minimizes a model with binaries. Deterministic for a fixed config.
///
/// The returned `bound` is the smallest bound over open nodes, nodes pruned
/// against the incumbent or the cutoff, and nodes whose relaxation could not
/// be solved (which keep their parent's bound). With a cutoff and no
/// solution below it the status is `Infeasible` and `bound` is still valid.
pub fn solve_mixed_binary(model: &ModelIR, cfg: &SolveConfig) -> Solution {
    let start = Instant::now();
    let deadline = cfg.deadline(start);
    let base_lb: Vec<f64> = model.variables().iter().map(|v| v.lb).collect();
    let base_ub: Vec<f64> = model.variables().iter().map(|v| v.ub).collect();
    let fallback = SolveConfig { method: ConicMethod::OuterApproximation, ..cfg.clone() };
    let relax = |fixings: &[(VarId, f64)]| {
        let (mut lb, mut ub) = (base_lb.clone(), base_ub.clone());
        for &(v, val) in fixings {
            lb[v.index()] = val;
            ub[v.index()] = val;
        }
        let sol = solve_with_bounds(model, &lb, &ub, cfg, deadline);
        if matches!(sol.status, Status::Numerical | Status::IterationLimit) && cfg.method != ConicMethod::OuterApproximation {
            log::debug!("relaxation ended with {:?}; retrying with outer approximation", sol.status);
            return solve_with_bounds(model, &lb, &ub, &fallback, deadline);
        }
        sol
    };

    let groups = one_hot_groups(model);
    let mut pc = PseudoCosts::new(groups.len());
    let mut incumbent: Option<Solution> = None;
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    let mut nodes = 0;
    let mut floor = f64::INFINITY;
    let mut stop: Option<Status> = None;
    heap.push(Node { fixings: Vec::new(), bound: f64::NEG_INFINITY, depth: 0, seq, origin: None });

    while let Some(node) = heap.pop() {
        let inc_obj = incumbent.as_ref().map_or(f64::INFINITY, |s| s.objective);
        if prunable(node.bound, inc_obj, cfg) {
            floor = floor.min(node.bound);
            continue;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            stop = Some(Status::TimeLimit);
            heap.push(node);
            break;
        }
        if nodes >= cfg.node_limit {
            stop = Some(Status::IterationLimit);
            heap.push(node);
            break;
        }
        nodes += 1;
        let sol = relax(&node.fixings);
        let forced = match sol.status {
            Status::Optimal => {
                if let Some((g, side, mass)) = node.origin {
                    if node.bound.is_finite() && mass > INT_TOL {
                        pc.record(g, side, (sol.objective - node.bound).max(0.0) / mass);
                    }
                }
                None
            }
            Status::Infeasible => continue,
            Status::TimeLimit => {
                stop = Some(Status::TimeLimit);
                heap.push(node);
                break;
            }
            other => {
                log::debug!("node {nodes} relaxation ended with {other:?}; keeping parent bound");
                match blind_split(model, &groups, &node.fixings) {
                    Some(split) => Some(split),
                    None => {
                        floor = floor.min(node.bound);
                        continue;
                    }
                }
            }
        };
        // Children inherit the larger of the parent bound and the relaxation.
        let bound = if forced.is_some() { node.bound } else { sol.objective.max(node.bound) };
        if prunable(bound, inc_obj, cfg) {
            floor = floor.min(bound);
            continue;
        }
        if nodes % 500 == 0 {
            let open = heap.iter().map(|n| n.bound).fold(floor.min(bound), f64::min);
            log::debug!("node {nodes}: {} open, bound {open:.6}, incumbent {inc_obj:.6}", heap.len());
        }
        if forced.is_none() && (nodes == 1 || nodes % ROUNDING_EVERY == 0) {
            let cand = relax(&round_groups(model, &groups, &sol.x));
            let limit = inc_obj.min(cfg.cutoff.unwrap_or(f64::INFINITY));
            if cand.status == Status::Optimal && cand.objective < limit {
                log::debug!("node {nodes}: rounding found {:.6}", cand.objective);
                let obj = cand.objective;
                incumbent = Some(cand);
                if prunable(bound, obj, cfg) {
                    floor = floor.min(bound);
                    continue;
                }
            }
        }
        let split = match forced {
            Some(split) => Some((split, None)),
            None => {
                let mut choices = group_choices(&groups, &sol.x, &node.fixings);
                // Probe both children of groups with no history yet.
                choices.sort_by(|a, b| (b.mass[0] * b.mass[1]).total_cmp(&(a.mass[0] * a.mass[1])));
                let unknown: Vec<usize> = (0..choices.len()).filter(|&i| !pc.known(choices[i].group)).collect();
                for &i in unknown.iter().take(PROBES_PER_NODE) {
                    let c = &choices[i];
                    for (side, extra) in c.split.children().into_iter().enumerate() {
                        let mut fixings = node.fixings.clone();
                        fixings.extend(extra);
                        let child = relax(&fixings);
                        let gain = if child.status == Status::Optimal && c.mass[side] > INT_TOL {
                            (child.objective - bound).max(0.0) / c.mass[side]
                        } else {
                            pc.rate(c.group, side)
                        };
                        pc.record(c.group, side, gain);
                    }
                }
                let chosen = pick(choices, &pc).map(|c| (c.split, Some((c.group, c.mass))));
                chosen.or_else(|| most_fractional(model, &sol.x).map(|v| (Split::Var(v), None)))
            }
        };
        match split {
            Some((split, choice)) => {
                for (side, extra) in split.children().into_iter().enumerate() {
                    seq += 1;
                    let mut fixings = node.fixings.clone();
                    fixings.extend(extra);
                    let origin = choice.map(|(g, mass)| (g, side, mass[side]));
                    heap.push(Node { fixings, bound, depth: node.depth + 1, seq, origin });
                }
            }
            None => {
                let fixings: Vec<(VarId, f64)> =
                    model.binaries().into_iter().map(|v| (v, sol.x[v.index()].round())).collect();
                let fixed = relax(&fixings);
                let cand = if fixed.status == Status::Optimal { fixed } else { sol };
                if cand.objective < inc_obj {
                    log::debug!("node {nodes}: incumbent {:.6}", cand.objective);
                    incumbent = Some(cand);
                }
            }
        }
    }

    let open = heap.iter().map(|n| n.bound).fold(floor, f64::min);
    let mut out = match incumbent {
        Some(mut s) => {
            s.bound = open.min(s.objective);
            s.status = stop.unwrap_or(Status::Optimal);
            s
        }
        None => {
            let mut s = Solution::without_point(stop.unwrap_or(Status::Infeasible), model.num_vars());
            s.bound = open;
            s
        }
    };
    out.nodes = nodes;
    log::debug!("branch and bound: {:?} after {nodes} nodes, bound {:.6}", out.status, out.bound);
    out
}
