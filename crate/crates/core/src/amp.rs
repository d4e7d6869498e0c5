//! Adaptive multivariate partitioning.
//!
//! The driver computes a local solution and a root relaxation, tightens the
//! voltage and angle boxes by optimization-based bound tightening, picks the
//! variables to partition, and then alternates between refining partitions
//! around the latest relaxed solution and searching the selected partition
//! for a better AC point.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::envelopes::Interval;
use crate::localsolver::{solve_local, solve_local_restricted, AcPoint, AcSolution, LocalConfig};
use crate::model_ir::{LinExpr, Objective, VarId};
use crate::piecewise::Discretization;
use crate::qcbuilder::{build_pqc, build_qc, PartitionScheme, PartitionVar, QcModel, VariableBounds};
use crate::solver::{solve_continuous, solve_mixed_binary, Solution, SolveConfig, Status};
use crate::{Error, Network, Result};

/// Points of an initial discretization closer than this are merged.
pub const INIT_MERGE_TOL: f64 = 1e-8;
/// New breakpoints closer than this to an existing one are dropped.
pub const REFINE_MERGE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct ObbtConfig {
    /// Number of sweeps; zero disables tightening.
    pub max_rounds: usize,
    /// Time cap for each min/max subproblem, in seconds.
    pub solve_time_limit: Option<f64>,
    /// Sweeps stop once no bound moves by more than this (p.u. or rad).
    pub min_improvement: f64,
    /// Worker threads for one sweep; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for ObbtConfig {
    fn default() -> Self {
        ObbtConfig { max_rounds: 10, solve_time_limit: None, min_improvement: 1e-3, threads: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AmpConfig {
    /// Partition width divisor.
    pub delta: usize,
    /// Fraction of candidate variables to partition.
    pub alpha: f64,
    /// Relative gap target, `(ub - lb) / |lb|`.
    pub epsilon: f64,
    /// Wall-clock limit for the whole run, in seconds.
    pub time_limit: Option<f64>,
    pub max_iterations: usize,
    pub obbt: ObbtConfig,
    pub local: LocalConfig,
    pub solver: SolveConfig,
}

impl Default for AmpConfig {
    fn default() -> Self {
        AmpConfig {
            delta: 16,
            alpha: 1.0,
            epsilon: 1e-4,
            time_limit: None,
            max_iterations: 200,
            obbt: ObbtConfig::default(),
            local: LocalConfig::default(),
            solver: SolveConfig::default(),
        }
    }
}

impl AmpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta < 2 {
            return Err(Error::Validation(format!("delta must be at least 2, got {}", self.delta)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Validation(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Validation(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// `(ub - lb) / |lb|`, the termination measure.
pub fn relative_gap(ub: f64, lb: f64) -> f64 {
    gap_over(ub, lb, lb)
}

/// `(ub - lb) / |ub|`, the figure usually tabulated.
pub fn table_gap(ub: f64, lb: f64) -> f64 {
    gap_over(ub, lb, ub)
}

fn gap_over(ub: f64, lb: f64, denom: f64) -> f64 {
    let diff = ub - lb;
    if diff <= 0.0 {
        0.0
    } else if denom == 0.0 {
        f64::INFINITY
    } else {
        diff / denom.abs()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AmpIteration {
    pub iteration: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Termination gap in percent.
    pub gap: f64,
    /// Gap over the upper bound, in percent.
    pub table_gap: f64,
    /// Seconds since the start of the run.
    pub elapsed: f64,
    pub binaries: usize,
    /// Partition counts, aligned with [`AmpTrace::variables`].
    pub partitions: Vec<usize>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AmpTrace {
    pub variables: Vec<PartitionVar>,
    pub iterations: Vec<AmpIteration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AmpStatus {
    Converged,
    TimeLimit,
    IterationLimit,
    /// The partitions stopped changing before the gap closed.
    Stalled,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseTimes {
    pub local: f64,
    pub root: f64,
    pub obbt: f64,
    pub partitioning: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AmpOutcome {
    pub status: AmpStatus,
    /// Best lower bound; never above `upper.objective`.
    pub lower_bound: f64,
    /// Relaxed solution of the last partitioned solve, if it has a point.
    #[serde(skip)]
    pub lower: Option<Solution>,
    pub upper: AcSolution,
    /// Objective of the local solve before any partitioning.
    pub initial_upper: f64,
    pub root_bound: f64,
    pub obbt_bound: Option<f64>,
    pub obbt_rounds: usize,
    pub bounds: VariableBounds,
    pub scheme: PartitionScheme,
    pub trace: AmpTrace,
    pub times: PhaseTimes,
}

impl AmpOutcome {
    pub fn gap(&self) -> f64 {
        relative_gap(self.upper.objective, self.lower_bound)
    }

    pub fn table_gap(&self) -> f64 {
        table_gap(self.upper.objective, self.lower_bound)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ObbtOutcome {
    pub bounds: VariableBounds,
    pub rounds: usize,
    /// Largest bound movement in the last sweep.
    pub last_change: f64,
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Voltage(usize),
    Angle(usize),
}

fn target_var(qc: &QcModel, t: Target) -> VarId {
    match t {
        Target::Voltage(i) => qc.vm[i],
        Target::Angle(k) => qc.branches[k].td,
    }
}

/// Optimization-based bound tightening of voltage magnitudes and angle
/// differences over the QC relaxation with the cut `objective <= ub`.
///
/// All subproblems of a sweep share one bounds snapshot and run in
/// parallel. The `cs`/`sn` boxes are rederived from the final angle boxes.
/// Smallest width OBBT leaves on a voltage or angle box.
const MIN_WIDTH: f64 = 1e-4;

pub fn tighten_bounds(
    net: &Network,
    bounds: &VariableBounds,
    ub: f64,
    cfg: &ObbtConfig,
    solver: &SolveConfig,
) -> Result<ObbtOutcome> {
    let pool = match cfg.threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Algorithm(format!("cannot start OBBT workers: {e}")))?,
        ),
        None => None,
    };
    let targets: Vec<Target> = (0..net.buses.len())
        .map(Target::Voltage)
        .chain((0..net.branches.len()).map(Target::Angle))
        .collect();
    let sub_cfg = SolveConfig { time_limit: cfg.solve_time_limit, ..solver.clone() };
    // A small allowance keeps the incumbent strictly inside the cut.
    let cutoff = ub + 1e-7 * ub.abs().max(1.0);
    let mut cur = bounds.clone();
    let mut rounds = 0;
    let mut last_change = 0.0;
    while rounds < cfg.max_rounds {
        let mut qc = build_qc(net, &cur)?;
        qc.add_objective_cutoff(cutoff)?;
        let jobs: Vec<(Target, bool)> = targets.iter().flat_map(|&t| [(t, false), (t, true)]).collect();
        let run = || -> Vec<Solution> {
            jobs.par_iter()
                .map(|&(t, maximize)| {
                    let mut m = qc.model.clone();
                    let v = target_var(&qc, t);
                    let sign = if maximize { -1.0 } else { 1.0 };
                    m.set_objective(Objective::linear(LinExpr::new().term(v, sign))).expect("linear objective");
                    solve_continuous(&m, &sub_cfg)
                })
                .collect()
        };
        let sols = match &pool {
            Some(p) => p.install(run),
            None => run(),
        };
        // The first sweep runs on the original box, so an infeasible subproblem
        // there means the upper bound is wrong. Later boxes still contain the
        // incumbent, and a failure on them comes from near-degenerate boxes.
        if rounds > 0 && sols.iter().any(|s| s.status == Status::Infeasible) {
            log::warn!("OBBT sweep {}: subproblem reported infeasible on a narrow box; keeping previous bounds", rounds + 1);
            break;
        }
        let mut next = cur.clone();
        for (&(t, maximize), sol) in jobs.iter().zip(&sols) {
            let b = match t {
                Target::Voltage(i) => &mut next.v[i],
                Target::Angle(k) => &mut next.theta[k],
            };
            match sol.status {
                Status::Optimal => {
                    // Solver tolerance is given back so the box stays valid.
                    let margin = 1e-6;
                    if maximize {
                        b.hi = b.hi.min(-sol.objective + margin);
                    } else {
                        b.lo = b.lo.max(sol.objective - margin);
                    }
                }
                Status::Infeasible => {
                    return Err(Error::Algorithm(format!(
                        "bound tightening found the relaxation infeasible under objective <= {ub}; \
                         the upper bound is inconsistent"
                    )));
                }
                other => log::debug!("OBBT subproblem {t:?} ended with {other:?}; bound kept"),
            }
        }
        // Boxes narrower than MIN_WIDTH make the envelopes ill-conditioned; a
        // wider box inside the previous one is still valid.
        for (b, old) in next.v.iter_mut().zip(&cur.v).chain(next.theta.iter_mut().zip(&cur.theta)) {
            if b.hi - b.lo < MIN_WIDTH {
                let m = 0.5 * (b.lo + b.hi);
                let lo = (m - 0.5 * MIN_WIDTH).max(old.lo);
                let hi = (lo + MIN_WIDTH).min(old.hi);
                *b = Interval { lo: (hi - MIN_WIDTH).max(old.lo), hi };
            }
        }
        next.recompute_trig();
        last_change = cur
            .v
            .iter()
            .zip(&next.v)
            .chain(cur.theta.iter().zip(&next.theta))
            .map(|(a, b)| (a.lo - b.lo).abs().max((a.hi - b.hi).abs()))
            .fold(0.0, f64::max);
        cur = next;
        rounds += 1;
        log::info!("OBBT sweep {rounds}: largest bound change {last_change:.3e}");
        if last_change < cfg.min_improvement {
            break;
        }
    }
    Ok(ObbtOutcome { bounds: cur, rounds, last_change })
}

/// Indices of the `ceil(alpha * n)` largest entries of `delta`, ties going
/// to the lower index. The result is in descending-`delta` order.
pub fn select_by_delta(delta: &[f64], alpha: f64) -> Vec<usize> {
    let n = delta.len();
    let count = ((alpha * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| delta[b].total_cmp(&delta[a]).then(a.cmp(&b)));
    idx.truncate(count);
    idx
}

/// Chooses the variables whose values differ most between the AC point and
/// the relaxed solution.
pub fn select_partition_variables(
    net: &Network,
    upper: &AcPoint,
    lower: &Solution,
    qc: &QcModel,
    alpha: f64,
) -> Vec<PartitionVar> {
    let all = PartitionVar::all(net);
    let delta: Vec<f64> = all.iter().map(|&v| (upper.lifted(net, v) - lower.value(qc.var(v))).abs()).collect();
    select_by_delta(&delta, alpha).into_iter().map(|i| all[i]).collect()
}

fn insert_points(points: &mut Vec<f64>, new: &[f64], tol: f64) {
    for &p in new {
        if points.iter().all(|&q| (q - p).abs() > tol) {
            points.push(p);
        }
    }
    points.sort_by(f64::total_cmp);
}

/// Breakpoints `{l, x - w/2, x + w/2, u}` with `w = (u - l) / delta`, the
/// middle pair clipped to `[l, u]`. `None` when the box is a point.
pub fn initial_points(lo: f64, hi: f64, x: f64, delta: usize) -> Option<Vec<f64>> {
    if hi - lo <= INIT_MERGE_TOL {
        return None;
    }
    let x = x.clamp(lo, hi);
    let half = (hi - lo) / (2.0 * delta as f64);
    let mut pts = vec![lo, hi];
    insert_points(&mut pts, &[(x - half).clamp(lo, hi), (x + half).clamp(lo, hi)], INIT_MERGE_TOL);
    Some(pts)
}

/// Adds a narrow interval around `x` inside the partition that holds it.
///
/// The interval is `1/delta` of that partition's width, so repeated
/// refinement around the same value keeps shrinking the partition that
/// contains it.
pub fn refine_points(points: &[f64], x: f64, delta: usize) -> Vec<f64> {
    let d = Discretization::new(points.to_vec()).expect("valid discretization");
    let x = x.clamp(d.lo(), d.hi());
    let (a, b) = d.partition(d.partition_of(x));
    let half = (b - a) / (2.0 * delta as f64);
    let mut pts = points.to_vec();
    insert_points(&mut pts, &[(x - half).clamp(a, b), (x + half).clamp(a, b)], REFINE_MERGE_TOL);
    pts
}

/// Initial narrow partitions around the AC point.
pub fn initialize_partitions(
    vars: &[PartitionVar],
    net: &Network,
    upper: &AcPoint,
    bounds: &VariableBounds,
    delta: usize,
) -> Result<PartitionScheme> {
    let mut scheme = PartitionScheme::new();
    for &v in vars {
        let b = bounds.interval(v);
        if let Some(pts) = initial_points(b.lo, b.hi, upper.lifted(net, v), delta) {
            scheme.insert(v, Discretization::new(pts)?);
        }
    }
    Ok(scheme)
}

/// Refines every partitioned variable around its relaxed value.
pub fn tighten_partitions(
    scheme: &PartitionScheme,
    lower: &Solution,
    qc: &QcModel,
    delta: usize,
) -> Result<PartitionScheme> {
    let mut out = PartitionScheme::new();
    for (&v, d) in scheme {
        let pts = refine_points(d.points(), lower.value(qc.var(v)), delta);
        out.insert(v, Discretization::new(pts)?);
    }
    Ok(out)
}

fn remaining(start: Instant, limit: Option<f64>) -> Option<f64> {
    limit.map(|l| (l - start.elapsed().as_secs_f64()).max(0.0))
}

/// Runs the full pipeline on `net`.
pub fn amp_run(net: &Network, cfg: &AmpConfig) -> Result<AmpOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let base = VariableBounds::from_network(net);

    let t = Instant::now();
    let mut upper = solve_local(net, &base, None, &cfg.local)?;
    if !upper.is_feasible() {
        return Err(Error::Algorithm(format!(
            "local solve found no AC-feasible point ({:?}, violation {:.2e}); no upper bound available",
            upper.status, upper.max_violation
        )));
    }
    let initial_upper = upper.objective;
    let local_time = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let root_qc = build_qc(net, &base)?;
    let root = solve_continuous(&root_qc.model, &cfg.solver);
    if root.status != Status::Optimal {
        return Err(Error::Algorithm(format!("root relaxation ended with {:?}", root.status)));
    }
    let mut lb = root.objective.min(upper.objective);
    let root_time = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (bounds, obbt_bound, obbt_rounds) = if cfg.obbt.max_rounds > 0 {
        let out = tighten_bounds(net, &base, upper.objective, &cfg.obbt, &cfg.solver)?;
        let qc = build_qc(net, &out.bounds)?;
        let s = solve_continuous(&qc.model, &cfg.solver);
        let bound = (s.status == Status::Optimal).then_some(s.objective);
        if let Some(b) = bound {
            lb = lb.max(b.min(upper.objective));
        }
        (out.bounds, bound, out.rounds)
    } else {
        (base.clone(), None, 0)
    };
    let obbt_time = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let vars = select_partition_variables(net, &upper.point, &root, &root_qc, cfg.alpha);
    let mut scheme = initialize_partitions(&vars, net, &upper.point, &bounds, cfg.delta)?;
    let mut trace = AmpTrace { variables: vars.clone(), iterations: Vec::new() };
    let mut lower = None;
    let mut status = AmpStatus::IterationLimit;
    let mut iteration = 0;
    loop {
        if iteration > 0 {
            let Some(prev) = lower.as_ref() else { break };
            let (qc_prev, _): &(QcModel, Solution) = prev;
            let next = tighten_partitions(&scheme, &prev.1, qc_prev, cfg.delta)?;
            if next == scheme {
                status = AmpStatus::Stalled;
                break;
            }
            scheme = next;
        }
        let qc = build_pqc(net, &bounds, &scheme)?;
        // Nodes that cannot push the bound past the termination threshold
        // are not worth expanding, and the MIP only needs to be solved to a
        // fraction of the target gap.
        let threshold = upper.objective - 0.5 * cfg.epsilon * upper.objective.abs();
        let solve_cfg = SolveConfig {
            time_limit: remaining(start, cfg.time_limit),
            cutoff: Some(threshold),
            opt_tol: cfg.solver.opt_tol.max(0.25 * cfg.epsilon),
            ..cfg.solver.clone()
        };
        let sol = solve_mixed_binary(&qc.model, &solve_cfg);
        if sol.bound.is_finite() {
            lb = lb.max(sol.bound.min(upper.objective));
        } else if sol.bound == f64::INFINITY {
            log::warn!("partitioned relaxation reported infeasible; lower bound unchanged");
        }
        if sol.has_point() {
            let cand = solve_local_restricted(net, &bounds, &sol, &qc, &scheme, &cfg.local)?;
            if cand.is_feasible() && cand.objective < upper.objective {
                log::info!("AMP iteration {iteration}: incumbent improved to {:.6}", cand.objective);
                upper = cand;
                lb = lb.min(upper.objective);
            }
        }
        let binaries = qc.model.binaries().len();
        let partitions = vars.iter().map(|v| scheme.get(v).map_or(1, Discretization::n_partitions)).collect();
        let it = AmpIteration {
            iteration,
            lower_bound: lb,
            upper_bound: upper.objective,
            gap: 100.0 * relative_gap(upper.objective, lb),
            table_gap: 100.0 * table_gap(upper.objective, lb),
            elapsed: start.elapsed().as_secs_f64(),
            binaries,
            partitions,
        };
        log::info!(
            "AMP iteration {iteration}: lb {:.6} ub {:.6} gap {:.4}% ({} binaries)",
            it.lower_bound,
            it.upper_bound,
            it.gap,
            binaries
        );
        trace.iterations.push(it);
        lower = sol.has_point().then_some((qc, sol));
        if relative_gap(upper.objective, lb) < cfg.epsilon {
            status = AmpStatus::Converged;
            break;
        }
        if remaining(start, cfg.time_limit) == Some(0.0) {
            status = AmpStatus::TimeLimit;
            break;
        }
        iteration += 1;
        if iteration > cfg.max_iterations {
            break;
        }
    }
    let partitioning = t.elapsed().as_secs_f64();
    Ok(AmpOutcome {
        status,
        lower_bound: lb,
        lower: lower.map(|(_, s)| s),
        upper,
        initial_upper,
        root_bound: root.objective,
        obbt_bound,
        obbt_rounds,
        bounds,
        scheme,
        trace,
        times: PhaseTimes { local: local_time, root: root_time, obbt: obbt_time, partitioning },
    })
}
