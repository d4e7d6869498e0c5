//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::path::PathBuf;

use acopf_gopt::envelopes::{
    cos_envelope, quad_envelope, sin_envelope, trilinear_extreme_points, trilinear_lambda_hull,
    trilinear_recursive_mccormick, Interval,
};
use acopf_gopt::model_ir::{ModelIR, VarId};
use acopf_gopt::netmodel::parse_matpower_file;
use acopf_gopt::piecewise::{partition_vars, piecewise_quadratic, piecewise_trilinear, Discretization};
use acopf_gopt::solver::{solve_continuous, Solution, SolveConfig, Status};
use acopf_gopt::Network;

pub const SMALL_CASES: [&str; 3] = ["nesta_case3_lmbd", "nesta_case5_pjm", "nesta_case30_ieee"];

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(format!("{name}.m"))
}

pub fn load(name: &str) -> Network {
    parse_matpower_file(case_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn iv(lo: f64, hi: f64) -> Interval {
    Interval::new(lo, hi).unwrap()
}

fn assignment(m: &ModelIR, values: &[(VarId, f64)]) -> Vec<f64> {
    let mut x = vec![0.0; m.num_vars()];
    for &(v, val) in values {
        x[v.index()] = val;
    }
    x
}

fn violation(m: &ModelIR, values: &[(VarId, f64)]) -> f64 {
    m.evaluate(&assignment(m, values)).unwrap().max_violation
}

/// Worst row violation of the quadratic envelope at `(x, x^2)`.
pub fn quad_violation(b: Interval, x: f64) -> f64 {
    let mut m = ModelIR::new();
    let xv = m.add_continuous("x", b.lo, b.hi).unwrap();
    let (w, _) = quad_envelope(&mut m, "w", xv, b).unwrap();
    violation(&m, &[(xv, x), (w, x * x)])
}

pub fn cos_violation(b: Interval, t: f64) -> f64 {
    let mut m = ModelIR::new();
    let tv = m.add_continuous("t", b.lo, b.hi).unwrap();
    let (cs, _) = cos_envelope(&mut m, "cs", tv, b).unwrap();
    violation(&m, &[(tv, t), (cs, t.cos())])
}

pub fn sin_violation(b: Interval, t: f64) -> f64 {
    let mut m = ModelIR::new();
    let tv = m.add_continuous("t", b.lo, b.hi).unwrap();
    let (sn, _) = sin_envelope(&mut m, "sn", tv, b).unwrap();
    violation(&m, &[(tv, t), (sn, t.sin())])
}

/// Weights of the eight box vertices (index `4a + 2b + c`) that interpolate
/// `x` multilinearly; they reproduce every multilinear function exactly.
pub fn multilinear_weights(b: [Interval; 3], x: [f64; 3]) -> [f64; 8] {
    let t: Vec<f64> = (0..3)
        .map(|i| if b[i].width() > 0.0 { (x[i] - b[i].lo) / b[i].width() } else { 0.0 })
        .collect();
    let mut w = [0.0; 8];
    for (k, wk) in w.iter_mut().enumerate() {
        *wk = (0..3)
            .map(|i| if k >> (2 - i) & 1 == 1 { t[i] } else { 1.0 - t[i] })
            .product();
    }
    w
}

fn tri_vars(m: &mut ModelIR, b: [Interval; 3]) -> ([VarId; 3], VarId) {
    let x = [
        m.add_continuous("x1", b[0].lo, b[0].hi).unwrap(),
        m.add_continuous("x2", b[1].lo, b[1].hi).unwrap(),
        m.add_continuous("x3", b[2].lo, b[2].hi).unwrap(),
    ];
    let p = b[0].mul(&b[1]).mul(&b[2]);
    let xhat = m.add_continuous("xhat", p.lo, p.hi).unwrap();
    (x, xhat)
}

/// Violation of the λ-hull at `x` with `xhat = x1 x2 x3` and multilinear λ.
pub fn hull_violation(b: [Interval; 3], x: [f64; 3]) -> f64 {
    let mut m = ModelIR::new();
    let (xv, xhat) = tri_vars(&mut m, b);
    let eps = trilinear_extreme_points(b[0], b[1], b[2]);
    let blk = trilinear_lambda_hull(&mut m, "h", xv, xhat, &eps).unwrap();
    let wts = multilinear_weights(b, x);
    let mut vals: Vec<(VarId, f64)> = (0..3).map(|i| (xv[i], x[i])).collect();
    vals.push((xhat, x[0] * x[1] * x[2]));
    vals.extend(blk.aux_vars.iter().zip(wts).map(|(&l, w)| (l, w)));
    violation(&m, &vals)
}

/// Violation of recursive McCormick at `x` with `w12 = x1 x2`.
pub fn rmc_violation(b: [Interval; 3], x: [f64; 3]) -> f64 {
    let mut m = ModelIR::new();
    let (xv, xhat) = tri_vars(&mut m, b);
    let blk = trilinear_recursive_mccormick(&mut m, "r", xv, xhat, b).unwrap();
    let mut vals: Vec<(VarId, f64)> = (0..3).map(|i| (xv[i], x[i])).collect();
    vals.push((xhat, x[0] * x[1] * x[2]));
    vals.push((blk.aux_vars[0], x[0] * x[1]));
    violation(&m, &vals)
}

/// Violation of the piecewise trilinear block at `x`, with the partitions
/// holding `x` selected and λ interpolating inside that cell.
pub fn pw_trilinear_violation(d: [Discretization; 3], x: [f64; 3]) -> f64 {
    let mut m = ModelIR::new();
    let b = [0, 1, 2].map(|i| iv(d[i].lo(), d[i].hi()));
    let (xv, xhat) = tri_vars(&mut m, b);
    let parts: Vec<_> = (0..3)
        .map(|i| partition_vars(&mut m, &format!("x{}", i + 1), xv[i], d[i].clone()).unwrap())
        .collect();
    let blk = piecewise_trilinear(&mut m, "pt", [&parts[0], &parts[1], &parts[2]], xhat).unwrap();
    let cell: Vec<usize> = (0..3).map(|i| d[i].partition_of(x[i])).collect();
    let cb = [0, 1, 2].map(|i| {
        let (a, c) = d[i].partition(cell[i]);
        iv(a, c)
    });
    let wts = multilinear_weights(cb, x);
    let n = [0, 1, 2].map(|i| d[i].points().len());
    let mut vals: Vec<(VarId, f64)> = (0..3).map(|i| (xv[i], x[i])).collect();
    vals.push((xhat, x[0] * x[1] * x[2]));
    for (i, p) in parts.iter().enumerate() {
        if !p.z.is_empty() {
            vals.push((p.z[cell[i]], 1.0));
        }
    }
    for (k, w) in wts.iter().enumerate() {
        let idx = [cell[0] + 1 + (k >> 2 & 1), cell[1] + 1 + (k >> 1 & 1), cell[2] + 1 + (k & 1)];
        let g = acopf_gopt::piecewise::grid_index(idx, n).unwrap();
        vals.push((blk.lambda[g - 1], *w));
    }
    violation(&m, &vals)
}

/// Violation of the piecewise quadratic block at `(x, x^2)`.
pub fn pw_quadratic_violation(d: Discretization, x: f64) -> f64 {
    let mut m = ModelIR::new();
    let xv = m.add_continuous("x", d.lo(), d.hi()).unwrap();
    let sq = iv(d.lo(), d.hi()).square();
    let w = m.add_continuous("w", sq.lo, sq.hi).unwrap();
    let p = partition_vars(&mut m, "x", xv, d.clone()).unwrap();
    let blk = piecewise_quadratic(&mut m, "pq", &p, w).unwrap();
    let mut vals = vec![(xv, x), (w, x * x)];
    if !p.z.is_empty() {
        let j = d.partition_of(x);
        let (a, c) = d.partition(j);
        let t = (x - a) / (c - a);
        vals.push((p.z[j], 1.0));
        vals.push((blk.lambda[j], 1.0 - t));
        vals.push((blk.lambda[j + 1], t));
    }
    violation(&m, &vals)
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve4(mut a: [[f64; 4]; 4], mut r: [f64; 4]) -> Option<[f64; 4]> {
    for c in 0..4 {
        let p = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        r.swap(c, p);
        for i in c + 1..4 {
            let f = a[i][c] / a[c][c];
            for j in c..4 {
                a[i][j] -= f * a[c][j];
            }
            r[i] -= f * r[c];
        }
    }
    let mut x = [0.0; 4];
    for c in (0..4).rev() {
        let s: f64 = (c + 1..4).map(|j| a[c][j] * x[j]).sum();
        x[c] = (r[c] - s) / a[c][c];
    }
    Some(x)
}

/// Exact range of `xhat` over the λ-hull at fixed `x` (boxes of positive
/// width). The rows `sum λ = 1, sum λ_k v_k = x` have full rank, so both
/// extremes sit at a basic solution; all C(8, 4) bases are enumerated.
/// Returns `(min, max, λ at min)`.
pub fn hull_range_exact(b: [Interval; 3], x: [f64; 3]) -> Option<(f64, f64, [f64; 8])> {
    let eps = trilinear_extreme_points(b[0], b[1], b[2]);
    let mut best: Option<(f64, f64, [f64; 8])> = None;
    for mask in 0u32..256 {
        if mask.count_ones() != 4 {
            continue;
        }
        let cols: Vec<usize> = (0..8).filter(|k| mask >> k & 1 == 1).collect();
        let mut a = [[0.0; 4]; 4];
        for (j, &k) in cols.iter().enumerate() {
            a[0][j] = 1.0;
            for i in 0..3 {
                a[i + 1][j] = eps.points[k][i];
            }
        }
        let Some(sol) = solve4(a, [1.0, x[0], x[1], x[2]]) else { continue };
        if sol.iter().any(|&l| l < -1e-12) {
            continue;
        }
        let mut lam = [0.0; 8];
        for (j, &k) in cols.iter().enumerate() {
            lam[k] = sol[j].max(0.0);
        }
        let v: f64 = (0..8).map(|k| lam[k] * eps.values[k]).sum();
        best = Some(match best {
            None => (v, v, lam),
            Some((lo, hi, _)) if v < lo => (v, hi.max(v), lam),
            Some((lo, hi, arg)) => (lo, hi.max(v), arg),
        });
    }
    best
}

/// Range of `w` allowed by the McCormick envelope of `x y` at fixed `x, y`.
pub fn mccormick_range(bx: Interval, by: Interval, x: f64, y: f64) -> (f64, f64) {
    let lo = (bx.lo * y + by.lo * x - bx.lo * by.lo).max(bx.hi * y + by.hi * x - bx.hi * by.hi);
    let hi = (bx.hi * y + by.lo * x - bx.hi * by.lo).min(bx.lo * y + by.hi * x - bx.lo * by.hi);
    (lo, hi)
}

/// Range of `xhat` under recursive McCormick at fixed `x`, optimizing over
/// the admissible `w12`. The lower side is a max of two lines in `w12` and
/// the upper side a min of two, so extremes sit at the ends of the `w12`
/// range or where two faces cross.
pub fn rmc_range(b: [Interval; 3], x: [f64; 3]) -> (f64, f64) {
    let b12 = b[0].mul(&b[1]);
    let (w_lo, w_hi) = mccormick_range(b[0], b[1], x[0], x[1]);
    let (w_lo, w_hi) = (w_lo.max(b12.lo), w_hi.min(b12.hi));
    let mut cands = vec![w_lo, w_hi];
    let d = b[2].lo - b[2].hi;
    if d != 0.0 {
        let cross_lo = ((b12.hi - b12.lo) * x[2] - b12.hi * b[2].hi + b12.lo * b[2].lo) / d;
        let cross_hi = ((b12.lo - b12.hi) * x[2] - b12.lo * b[2].hi + b12.hi * b[2].lo) / d;
        cands.extend([cross_lo, cross_hi].into_iter().filter(|w| *w > w_lo && *w < w_hi));
    }
    let lo = cands.iter().map(|&w| mccormick_range(b12, b[2], w, x[2]).0).fold(f64::INFINITY, f64::min);
    let hi = cands.iter().map(|&w| mccormick_range(b12, b[2], w, x[2]).1).fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Minimum of the continuous solve over every way of picking one binary
/// per group (all other binaries of the group at zero). With the groups of
/// a partitioned model this enumerates every feasible `z`.
pub fn enumerate_one_hot(model: &ModelIR, groups: &[Vec<VarId>], cfg: &SolveConfig) -> f64 {
    let total: usize = groups.iter().map(Vec::len).product();
    let mut best = f64::INFINITY;
    for mut code in 0..total {
        let mut m = model.clone();
        for g in groups {
            let pick = code % g.len();
            code /= g.len();
            for (i, &z) in g.iter().enumerate() {
                let v = if i == pick { 1.0 } else { 0.0 };
                m.set_bounds(z, v, v).unwrap();
            }
        }
        let s: Solution = solve_continuous(&m, cfg);
        match s.status {
            Status::Optimal => best = best.min(s.objective),
            Status::Infeasible => {}
            other => panic!("enumeration solve ended with {other:?}"),
        }
    }
    best
}

/// A small mixed-binary model: piecewise `x1 x2 x3` and `x1^2` over the
/// given breakpoints with a linear objective and one coupling row.
#[derive(Debug, Clone)]
pub struct PiecewiseSpec {
    pub points: [Vec<f64>; 3],
    /// Objective weights of x1, x2, x3, xhat, w.
    pub objective: [f64; 5],
    /// Right-hand side of `x1 + x2 + x3 >= rhs`.
    pub rhs: f64,
}

impl PiecewiseSpec {
    pub fn binaries(&self) -> usize {
        self.points.iter().map(|p| if p.len() > 2 { p.len() - 1 } else { 0 }).sum()
    }

    /// The model and its binaries grouped by partitioned variable.
    pub fn build(&self) -> (ModelIR, Vec<Vec<VarId>>) {
        use acopf_gopt::model_ir::{LinExpr, Objective, Sense};
        let mut m = ModelIR::new();
        let d: Vec<Discretization> = self.points.iter().map(|p| Discretization::new(p.clone()).unwrap()).collect();
        let b = [0, 1, 2].map(|i| iv(d[i].lo(), d[i].hi()));
        let (x, xhat) = tri_vars(&mut m, b);
        let sq = b[0].square();
        let w = m.add_continuous("w", sq.lo, sq.hi).unwrap();
        let parts: Vec<_> = (0..3)
            .map(|i| partition_vars(&mut m, &format!("x{}", i + 1), x[i], d[i].clone()).unwrap())
            .collect();
        piecewise_trilinear(&mut m, "t", [&parts[0], &parts[1], &parts[2]], xhat).unwrap();
        piecewise_quadratic(&mut m, "q", &parts[0], w).unwrap();
        let sum = LinExpr::var(x[0]).term(x[1], 1.0).term(x[2], 1.0);
        m.add_linear(sum, Sense::Ge, self.rhs).unwrap();
        let vars = [x[0], x[1], x[2], xhat, w];
        let obj = vars.iter().zip(self.objective).fold(LinExpr::new(), |e, (&v, c)| e.term(v, c));
        m.set_objective(Objective::linear(obj)).unwrap();
        let groups = parts.into_iter().map(|p| p.z).filter(|z| !z.is_empty()).collect();
        (m, groups)
    }
}

/// Relaxation bounds along one random refinement chain: `vars` randomly
/// chosen variables start with one random breakpoint, and every step adds
/// a narrow partition around a random point of each.
pub fn refinement_chain(net: &Network, rng: &mut impl rand::Rng, vars: usize, steps: usize) -> Vec<f64> {
    use acopf_gopt::amp::refine_points;
    use acopf_gopt::qcbuilder::{build_pqc, PartitionScheme, PartitionVar, VariableBounds};
    use acopf_gopt::solver::solve_mixed_binary;
    use rand::seq::SliceRandom;

    let bounds = VariableBounds::from_network(net);
    let all = PartitionVar::all(net);
    let chosen: Vec<PartitionVar> = all.choose_multiple(rng, vars.min(all.len())).copied().collect();
    let mut scheme = PartitionScheme::new();
    for &v in &chosen {
        let b = bounds.interval(v);
        if b.width() > 1e-6 {
            let x = rng.gen_range(b.lo..=b.hi);
            let pts = refine_points(&[b.lo, b.hi], x, 4);
            scheme.insert(v, Discretization::new(pts).unwrap());
        }
    }
    let cfg = SolveConfig { opt_tol: 1e-9, ..Default::default() };
    let mut out = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        if step > 0 {
            for d in scheme.values_mut() {
                let x = rng.gen_range(d.lo()..=d.hi());
                *d = Discretization::new(refine_points(d.points(), x, 4)).unwrap();
            }
        }
        let qc = build_pqc(net, &bounds, &scheme).unwrap();
        let s = solve_mixed_binary(&qc.model, &cfg);
        assert_eq!(s.status, Status::Optimal, "refinement step {step}");
        out.push(s.bound);
    }
    out
}
