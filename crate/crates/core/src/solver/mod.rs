//! Solvers for [`ModelIR`] instances.
//!
//! Continuous models go to a conic interior-point method, either directly or
//! through an outer approximation of every convex row by tangent cuts.
//! Mixed-binary models are solved by best-first branch and bound whose node
//! relaxations use the continuous solver.

mod bnb;
mod compile;
mod conic;

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::model_ir::{ModelIR, VarId, ViolationSite};

pub use bnb::solve_mixed_binary;
pub use compile::{tangent_cut, ConvexRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConicMethod {
    /// Second-order cones passed to the interior-point method as cones.
    Native,
    /// Convex rows replaced by tangent cuts added until they hold.
    OuterApproximation,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveConfig {
    pub feas_tol: f64,
    pub opt_tol: f64,
    /// Wall-clock limit in seconds.
    pub time_limit: Option<f64>,
    pub node_limit: usize,
    pub cut_tol: f64,
    pub max_cut_rounds: usize,
    pub max_cuts_per_round: usize,
    pub method: ConicMethod,
    /// Nodes whose bound reaches this value are pruned.
    pub cutoff: Option<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            feas_tol: 1e-6,
            opt_tol: 1e-6,
            time_limit: None,
            node_limit: 100_000,
            cut_tol: 1e-7,
            max_cut_rounds: 2_000,
            max_cuts_per_round: 200,
            method: ConicMethod::Native,
            cutoff: None,
        }
    }
}

impl SolveConfig {
    pub(crate) fn deadline(&self, start: Instant) -> Option<Instant> {
        self.time_limit.map(|t| start + Duration::from_secs_f64(t.max(0.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    TimeLimit,
    IterationLimit,
    /// The interior-point method stopped without a usable answer.
    Numerical,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    /// Objective of `x`; `+inf` when no point is available.
    pub objective: f64,
    /// Value of every model variable, fixed ones included.
    pub x: Vec<f64>,
    /// Best proven lower bound on the optimum.
    pub bound: f64,
    pub nodes: usize,
    /// Row or bound carrying the largest infeasibility multiplier.
    pub certificate: Option<ViolationSite>,
}

impl Solution {
    pub(crate) fn without_point(status: Status, n: usize) -> Self {
        Solution {
            status,
            objective: f64::INFINITY,
            x: vec![f64::NAN; n],
            bound: f64::NEG_INFINITY,
            nodes: 0,
            certificate: None,
        }
    }

    pub fn has_point(&self) -> bool {
        self.objective.is_finite()
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.x[v.index()]
    }
}

/// Solves the continuous relaxation: binaries range over their bounds.
pub fn solve_continuous(model: &ModelIR, cfg: &SolveConfig) -> Solution {
    let (lb, ub): (Vec<f64>, Vec<f64>) = model.variables().iter().map(|v| (v.lb, v.ub)).unzip();
    conic::solve_with_bounds(model, &lb, &ub, cfg, cfg.deadline(Instant::now()))
}
