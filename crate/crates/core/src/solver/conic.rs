//! Continuous solves through Clarabel.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::compile::{lower, tangent_cut, Compiled, ConvexRow, Lowered, Row};
use super::{ConicMethod, Solution, SolveConfig, Status};
use crate::model_ir::{LinExpr, ModelIR, VarId, ViolationSite};

/// Replacement for infinite bounds in outer approximation.
const OA_BOX: f64 = 1e7;
/// Looser acceptance for reduced-accuracy interior-point answers.
const ALMOST_TOL: f64 = 1e-5;

/// One conic program `min 0.5 x'Px + q'x` over equality rows, inequality
/// rows and second-order cones whose first entry bounds the rest.
struct Program<'a> {
    n: usize,
    p_diag: &'a [f64],
    q: &'a [f64],
    eq: &'a [Row],
    le: &'a [Row],
    /// Column bounds emitted as inequality rows.
    lb: &'a [f64],
    ub: &'a [f64],
    socs: &'a [(Vec<LinExpr>, ViolationSite)],
}

struct Outcome {
    status: SolverStatus,
    x: Vec<f64>,
    certificate: Option<ViolationSite>,
}

fn run(prog: &Program, deadline: Option<Instant>) -> Outcome {
    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut b = Vec::new();
    let mut origin = Vec::new();
    let mut cones = Vec::new();
    let mut push_row = |e: &LinExpr, rhs: f64, site: ViolationSite, b: &mut Vec<f64>, origin: &mut Vec<ViolationSite>| {
        let r = b.len();
        for &(v, c) in &e.terms {
            trip.push((r, v.index(), c));
        }
        b.push(rhs);
        origin.push(site);
    };
    for row in prog.eq {
        push_row(&row.expr, row.rhs, row.origin, &mut b, &mut origin);
    }
    if !prog.eq.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(prog.eq.len()));
    }
    let start_le = b.len();
    for row in prog.le {
        push_row(&row.expr, row.rhs, row.origin, &mut b, &mut origin);
    }
    for c in 0..prog.n {
        let site = ViolationSite::Bound(VarId(usize::MAX));
        if prog.ub[c].is_finite() {
            push_row(&LinExpr::var(VarId(c)), prog.ub[c], site, &mut b, &mut origin);
        }
        if prog.lb[c].is_finite() {
            push_row(&LinExpr::var(VarId(c)).scaled(-1.0), -prog.lb[c], site, &mut b, &mut origin);
        }
    }
    if b.len() > start_le {
        cones.push(SupportedConeT::NonnegativeConeT(b.len() - start_le));
    }
    for (elems, site) in prog.socs {
        // s = e(x) = c.x + d  ->  A row = -c, b = d
        for e in elems {
            push_row(&e.scaled(-1.0), e.constant, *site, &mut b, &mut origin);
        }
        cones.push(SupportedConeT::SecondOrderConeT(elems.len()));
    }
    let m = b.len();

    let scale = 1.0 / prog.q.iter().chain(prog.p_diag).fold(1.0f64, |a, v| a.max(v.abs()));
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for (c, &d) in prog.p_diag.iter().enumerate() {
        if d != 0.0 {
            pi.push(c);
            pj.push(c);
            pv.push(d * scale);
        }
    }
    let p = CscMatrix::new_from_triplets(prog.n, prog.n, pi, pj, pv);
    let q: Vec<f64> = prog.q.iter().map(|v| v * scale).collect();
    trip.sort_by_key(|&(r, c, _)| (c, r));
    let mut agg: Vec<(usize, usize, f64)> = Vec::with_capacity(trip.len());
    for (r, c, v) in trip {
        match agg.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => agg.push((r, c, v)),
        }
    }
    let (ai, (aj, av)): (Vec<usize>, (Vec<usize>, Vec<f64>)) = agg.into_iter().map(|(r, c, v)| (r, (c, v))).unzip();
    let a = CscMatrix::new_from_triplets(m, prog.n, ai, aj, av);

    let time_left = deadline.map_or(f64::INFINITY, |d| d.saturating_duration_since(Instant::now()).as_secs_f64());
    if time_left <= 0.0 {
        return Outcome { status: SolverStatus::MaxTime, x: vec![0.0; prog.n], certificate: None };
    }
    // Tighter iterative refinement avoids most stalls on the nearly
    // degenerate boxes produced by narrow partitions.
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .time_limit(time_left)
        .iterative_refinement_reltol(1e-14)
        .iterative_refinement_abstol(1e-14)
        .iterative_refinement_max_iter(50)
        .build()
        .expect("valid solver settings");
    let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("conic setup failed: {e}");
            return Outcome { status: SolverStatus::NumericalError, x: vec![0.0; prog.n], certificate: None };
        }
    };
    solver.solve();
    let sol = &solver.solution;
    log::trace!("conic solve: {:?} after {} iterations in {:.4}s", sol.status, sol.iterations, sol.solve_time);
    let certificate = matches!(sol.status, SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible)
        .then(|| {
            let (row, _) = sol
                .z
                .iter()
                .enumerate()
                .fold((0, -1.0), |best, (i, z)| if z.abs() > best.1 { (i, z.abs()) } else { best });
            origin.get(row).copied()
        })
        .flatten();
    Outcome { status: sol.status, x: sol.x.clone(), certificate }
}

/// Cone elements `[t, rest..]` for a convex row.
fn soc_elements(row: &ConvexRow) -> Vec<LinExpr> {
    match row {
        ConvexRow::Quad { squares, rhs } => {
            // sum sq^2 <= r  <=>  ||(sq, (r - 1)/2)|| <= (r + 1)/2
            let mut out = vec![rhs.scaled(0.5).plus(0.5)];
            out.extend(squares.iter().cloned());
            out.push(rhs.scaled(0.5).plus(-0.5));
            out
        }
        ConvexRow::Rotated { squares, a, b } => {
            let mut t = a.clone();
            t.add_expr(b, 1.0);
            let mut d = a.clone();
            d.add_expr(b, -1.0);
            let mut out = vec![t];
            out.extend(squares.iter().map(|s| s.scaled(2.0)));
            out.push(d);
            out
        }
    }
}

fn bounds_of(x: &[f64], n: usize) -> Vec<f64> {
    x[..n].to_vec()
}

fn finish(model: &ModelIR, c: &Compiled, cols: &[f64], status: SolverStatus) -> Solution {
    let x = c.expand(&bounds_of(cols, c.n));
    let objective = model.objective().eval(&x);
    let status = match status {
        SolverStatus::Solved => Status::Optimal,
        SolverStatus::AlmostSolved => match model.evaluate_relaxed(&x) {
            Ok(e) if e.max_violation <= ALMOST_TOL => Status::Optimal,
            Ok(e) => {
                log::debug!("reduced-accuracy answer rejected: violation {:.2e} at {:?}", e.max_violation, e.worst);
                Status::Numerical
            }
            _ => Status::Numerical,
        },
        _ => Status::Numerical,
    };
    if status != Status::Optimal {
        return Solution::without_point(status, model.num_vars());
    }
    Solution { status, objective, x, bound: objective, nodes: 1, certificate: None }
}

fn failed(model: &ModelIR, out: Outcome) -> Solution {
    let status = match out.status {
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Status::Infeasible,
        SolverStatus::MaxIterations => Status::IterationLimit,
        SolverStatus::MaxTime => Status::TimeLimit,
        _ => Status::Numerical,
    };
    let mut s = Solution::without_point(status, model.num_vars());
    s.certificate = out.certificate;
    if status == Status::Infeasible {
        s.bound = f64::INFINITY;
    }
    s
}

fn is_solved(s: SolverStatus) -> bool {
    matches!(s, SolverStatus::Solved | SolverStatus::AlmostSolved)
}

/// Solves the continuous relaxation of `model` with bounds `lb`, `ub`.
pub(crate) fn solve_with_bounds(
    model: &ModelIR,
    lb: &[f64],
    ub: &[f64],
    cfg: &SolveConfig,
    deadline: Option<Instant>,
) -> Solution {
    let c = match lower(model, lb, ub, cfg.feas_tol) {
        Lowered::Model(c) => c,
        Lowered::Infeasible(site) => {
            let mut s = Solution::without_point(Status::Infeasible, model.num_vars());
            s.certificate = Some(site);
            s.bound = f64::INFINITY;
            return s;
        }
    };
    if c.n == 0 {
        return finish(model, &c, &[], SolverStatus::Solved);
    }
    match cfg.method {
        ConicMethod::Native => native(model, &c, deadline),
        ConicMethod::OuterApproximation => outer(model, &c, cfg, deadline),
    }
}

fn native(model: &ModelIR, c: &Compiled, deadline: Option<Instant>) -> Solution {
    let socs: Vec<(Vec<LinExpr>, ViolationSite)> = c.convex.iter().map(|(r, s)| (soc_elements(r), *s)).collect();
    let p_diag: Vec<f64> = c.obj_quad.iter().map(|v| 2.0 * v).collect();
    let prog = Program { n: c.n, p_diag: &p_diag, q: &c.obj_lin, eq: &c.eq, le: &c.le, lb: &c.lb, ub: &c.ub, socs: &socs };
    let out = run(&prog, deadline);
    if is_solved(out.status) {
        finish(model, c, &out.x, out.status)
    } else {
        failed(model, out)
    }
}

/// Kelley cutting planes: every convex row and every quadratic objective
/// term (through an epigraph column) is enforced by tangent cuts only.
fn outer(model: &ModelIR, c: &Compiled, cfg: &SolveConfig, deadline: Option<Instant>) -> Solution {
    let mut n = c.n;
    let mut lb: Vec<f64> = c.lb.iter().map(|v| v.max(-OA_BOX)).collect();
    let mut ub: Vec<f64> = c.ub.iter().map(|v| v.min(OA_BOX)).collect();
    let mut q = c.obj_lin.clone();
    let mut rows: Vec<(ConvexRow, ViolationSite)> = c.convex.clone();
    for (col, &coef) in c.obj_quad.iter().enumerate() {
        if coef > 0.0 {
            let t = VarId(n);
            n += 1;
            lb.push(0.0);
            ub.push(OA_BOX);
            q.push(1.0);
            let row = ConvexRow::Quad { squares: vec![LinExpr::var(VarId(col)).scaled(coef.sqrt())], rhs: LinExpr::var(t) };
            rows.push((row, ViolationSite::Bound(VarId(usize::MAX))));
        }
    }
    let mut le = c.le.clone();
    let anchor: Vec<f64> = (0..n).map(|i| 0.0f64.clamp(lb[i], ub[i])).collect();
    for (row, site) in &rows {
        if let ConvexRow::Rotated { a, b, .. } = row {
            le.push(Row { expr: a.scaled(-1.0), rhs: a.constant, origin: *site });
            le.push(Row { expr: b.scaled(-1.0), rhs: b.constant, origin: *site });
        }
        if let Some((e, rhs)) = tangent_cut(row, &anchor) {
            le.push(Row { expr: e, rhs, origin: *site });
        }
    }
    for r in le.iter_mut() {
        r.expr.constant = 0.0;
    }
    let p_diag = vec![0.0; n];
    for _ in 0..cfg.max_cut_rounds {
        let prog = Program { n, p_diag: &p_diag, q: &q, eq: &c.eq, le: &le, lb: &lb, ub: &ub, socs: &[] };
        let out = run(&prog, deadline);
        if !is_solved(out.status) {
            return failed(model, out);
        }
        let mut viol: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, (r, _))| (r.violation(&out.x), i))
            .filter(|&(v, _)| v > cfg.cut_tol)
            .collect();
        if viol.iter().all(|&(v, _)| v <= cfg.feas_tol) {
            return finish(model, c, &out.x, out.status);
        }
        viol.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in viol.iter().take(cfg.max_cuts_per_round) {
            if let Some((e, rhs)) = tangent_cut(&rows[i].0, &out.x) {
                le.push(Row { expr: e, rhs, origin: rows[i].1 });
            }
        }
    }
    Solution::without_point(Status::IterationLimit, model.num_vars())
}
