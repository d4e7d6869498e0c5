//! Lowering of a model with overridden bounds to column space.
//!
//! Fixed variables are substituted out and forcing rows fix further
//! variables before anything reaches the interior-point method.

use crate::model_ir::{ConstraintId, LinExpr, ModelIR, QuadConstraint, RotatedCone, Sense, VarId, ViolationSite};

/// Width below which a variable is treated as fixed.
const FIX_WIDTH: f64 = 1e-10;
const FORCING_TOL: f64 = 1e-12;

/// Convex row `sum(squares^2) <= rhs` or `sum(squares^2) <= a * b`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexRow {
    Quad { squares: Vec<LinExpr>, rhs: LinExpr },
    Rotated { squares: Vec<LinExpr>, a: LinExpr, b: LinExpr },
}

impl From<&QuadConstraint> for ConvexRow {
    fn from(q: &QuadConstraint) -> Self {
        ConvexRow::Quad { squares: q.squares.clone(), rhs: q.rhs.clone() }
    }
}

impl From<&RotatedCone> for ConvexRow {
    fn from(c: &RotatedCone) -> Self {
        ConvexRow::Rotated { squares: c.squares.clone(), a: c.a.clone(), b: c.b.clone() }
    }
}

impl ConvexRow {
    pub fn squares(&self) -> &[LinExpr] {
        match self {
            ConvexRow::Quad { squares, .. } | ConvexRow::Rotated { squares, .. } => squares,
        }
    }

    /// Violation in the convex form used by [`tangent_cut`]: `sum sq^2 - rhs`
    /// for quadratic rows and `||(2 sq, a - b)|| - (a + b)` for cones.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let ss: f64 = self.squares().iter().map(|s| s.eval(x).powi(2)).sum();
        match self {
            ConvexRow::Quad { rhs, .. } => ss - rhs.eval(x),
            ConvexRow::Rotated { a, b, .. } => {
                let (a, b) = (a.eval(x), b.eval(x));
                (4.0 * ss + (a - b).powi(2)).sqrt() - (a + b)
            }
        }
    }

    fn map(&self, f: &impl Fn(&LinExpr) -> LinExpr) -> ConvexRow {
        match self {
            ConvexRow::Quad { squares, rhs } => ConvexRow::Quad { squares: squares.iter().map(f).collect(), rhs: f(rhs) },
            ConvexRow::Rotated { squares, a, b } => {
                ConvexRow::Rotated { squares: squares.iter().map(f).collect(), a: f(a), b: f(b) }
            }
        }
    }
}

/// First-order underestimator of the row's convex function at `x0`, as
/// `expr <= rhs`. `None` where the function is not differentiable.
pub fn tangent_cut(row: &ConvexRow, x0: &[f64]) -> Option<(LinExpr, f64)> {
    let mut e = LinExpr::new();
    match row {
        ConvexRow::Quad { squares, rhs } => {
            // sum(2 s0 sq(x) - s0^2) - rhs(x) <= 0
            let mut konst = 0.0;
            for s in squares {
                let s0 = s.eval(x0);
                e.add_expr(s, 2.0 * s0);
                konst -= s0 * s0;
            }
            e.add_expr(rhs, -1.0);
            e.constant += konst;
        }
        ConvexRow::Rotated { squares, a, b } => {
            // (u0 / |u0|) . u(x) - (a + b)(x) <= 0 with u = (2 sq, a - b)
            let (a0, b0) = (a.eval(x0), b.eval(x0));
            let u: Vec<f64> = squares.iter().map(|s| 2.0 * s.eval(x0)).collect();
            let n0 = (u.iter().map(|v| v * v).sum::<f64>() + (a0 - b0).powi(2)).sqrt();
            if n0 == 0.0 {
                return None;
            }
            for (s, ui) in squares.iter().zip(&u) {
                e.add_expr(s, 2.0 * ui / n0);
            }
            let d = (a0 - b0) / n0;
            e.add_expr(a, d - 1.0);
            e.add_expr(b, -d - 1.0);
        }
    }
    let e = e.compact();
    let rhs = -e.constant;
    Some((LinExpr { terms: e.terms, constant: 0.0 }, rhs))
}

/// Linear row `expr (<= or =) rhs` over columns.
#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub expr: LinExpr,
    pub rhs: f64,
    pub origin: ViolationSite,
}

#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub n: usize,
    /// Model variable of each column.
    pub col_var: Vec<usize>,
    /// Value of each model variable when fixed, NaN when it is a column.
    pub fixed: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub eq: Vec<Row>,
    pub le: Vec<Row>,
    pub convex: Vec<(ConvexRow, ViolationSite)>,
    pub obj_quad: Vec<f64>,
    pub obj_lin: Vec<f64>,
}

impl Compiled {
    /// Full model assignment from column values.
    pub fn expand(&self, cols: &[f64]) -> Vec<f64> {
        let mut x = self.fixed.clone();
        for (c, &v) in self.col_var.iter().enumerate() {
            x[v] = cols[c];
        }
        x
    }
}

/// Inequality rows of the model normalized to `expr <= rhs`.
fn normalized(model: &ModelIR) -> Vec<(LinExpr, f64, ConstraintId)> {
    let mut out = Vec::new();
    for (i, c) in model.linear_constraints().iter().enumerate() {
        let id = ConstraintId::Linear(i);
        let rhs = c.rhs - c.expr.constant;
        let e = LinExpr { terms: c.expr.terms.clone(), constant: 0.0 };
        match c.sense {
            Sense::Le => out.push((e, rhs, id)),
            Sense::Ge => out.push((e.scaled(-1.0), -rhs, id)),
            Sense::Eq => {
                out.push((e.scaled(-1.0), -rhs, id));
                out.push((e, rhs, id));
            }
        }
    }
    out
}

/// Fixes variables at the bound forced by rows whose minimum activity
/// already meets the right-hand side. Returns the first row proven
/// infeasible, if any.
fn propagate_forcing(model: &ModelIR, lb: &mut [f64], ub: &mut [f64], feas_tol: f64) -> Option<ViolationSite> {
    let rows = normalized(model);
    for _ in 0..10 {
        let mut changed = false;
        for (e, rhs, id) in &rows {
            let mut min_act = 0.0;
            let mut free = false;
            for &(v, c) in &e.terms {
                let (l, u) = (lb[v.0], ub[v.0]);
                if u - l > FIX_WIDTH {
                    free = true;
                }
                min_act += if c > 0.0 { c * l } else { c * u };
            }
            if !min_act.is_finite() {
                continue;
            }
            let slack = rhs - min_act;
            if slack < -feas_tol {
                return Some(ViolationSite::Constraint(*id));
            }
            if free && slack <= FORCING_TOL {
                for &(v, c) in &e.terms {
                    let at = if c > 0.0 { lb[v.0] } else { ub[v.0] };
                    lb[v.0] = at;
                    ub[v.0] = at;
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    None
}

pub(crate) enum Lowered {
    Model(Compiled),
    Infeasible(ViolationSite),
}

pub(crate) fn lower(model: &ModelIR, lb: &[f64], ub: &[f64], feas_tol: f64) -> Lowered {
    let nv = model.num_vars();
    let (mut lb, mut ub) = (lb.to_vec(), ub.to_vec());
    for i in 0..nv {
        if lb[i] > ub[i] + feas_tol {
            return Lowered::Infeasible(ViolationSite::Bound(VarId(i)));
        }
        if ub[i] - lb[i] <= FIX_WIDTH {
            let mid = 0.5 * (lb[i] + ub[i]);
            lb[i] = mid;
            ub[i] = mid;
        }
    }
    if let Some(site) = propagate_forcing(model, &mut lb, &mut ub, feas_tol) {
        return Lowered::Infeasible(site);
    }

    let mut fixed = vec![f64::NAN; nv];
    let mut var_col = vec![usize::MAX; nv];
    let mut col_var = Vec::new();
    for i in 0..nv {
        if lb[i] == ub[i] {
            fixed[i] = lb[i];
        } else {
            var_col[i] = col_var.len();
            col_var.push(i);
        }
    }
    let n = col_var.len();
    let to_cols = |e: &LinExpr| -> LinExpr {
        let mut out = LinExpr::constant(e.constant);
        for &(v, c) in &e.terms {
            match var_col[v.0] {
                usize::MAX => out.constant += c * fixed[v.0],
                col => out.add_term(VarId(col), c),
            }
        }
        out.compact()
    };

    let mut eq = Vec::new();
    let mut le = Vec::new();
    for (i, c) in model.linear_constraints().iter().enumerate() {
        let origin = ViolationSite::Constraint(ConstraintId::Linear(i));
        let e = to_cols(&c.expr);
        let rhs = c.rhs - e.constant;
        let expr = LinExpr { terms: e.terms, constant: 0.0 };
        if expr.terms.is_empty() {
            let viol = match c.sense {
                Sense::Le => -rhs,
                Sense::Ge => rhs,
                Sense::Eq => rhs.abs(),
            };
            if viol > feas_tol {
                return Lowered::Infeasible(origin);
            }
            continue;
        }
        match c.sense {
            Sense::Eq => eq.push(Row { expr, rhs, origin }),
            Sense::Le => le.push(Row { expr, rhs, origin }),
            Sense::Ge => le.push(Row { expr: expr.scaled(-1.0), rhs: -rhs, origin }),
        }
    }

    let mut convex = Vec::new();
    let rows = model
        .quad_constraints()
        .iter()
        .enumerate()
        .map(|(i, q)| (ConvexRow::from(q), ConstraintId::Quad(i)))
        .chain(model.cones().iter().enumerate().map(|(i, c)| (ConvexRow::from(c), ConstraintId::Cone(i))));
    for (row, id) in rows {
        let origin = ViolationSite::Constraint(id);
        let row = row.map(&to_cols);
        let has_cols = row.squares().iter().any(|s| !s.terms.is_empty())
            || match &row {
                ConvexRow::Quad { rhs, .. } => !rhs.terms.is_empty(),
                ConvexRow::Rotated { a, b, .. } => !a.terms.is_empty() || !b.terms.is_empty(),
            };
        if !has_cols {
            let viol = match &row {
                ConvexRow::Rotated { a, b, .. } => row.violation(&[]).max(-a.constant).max(-b.constant),
                _ => row.violation(&[]),
            };
            if viol > feas_tol {
                return Lowered::Infeasible(origin);
            }
            continue;
        }
        convex.push((row, origin));
    }

    let obj = model.objective();
    let mut obj_quad = vec![0.0; n];
    let mut obj_lin = vec![0.0; n];
    for &(v, c) in &obj.quad {
        match var_col[v.0] {
            usize::MAX => {}
            col => obj_quad[col] += c,
        }
    }
    for &(v, c) in &obj.linear.terms {
        match var_col[v.0] {
            usize::MAX => {}
            col => obj_lin[col] += c,
        }
    }

    Lowered::Model(Compiled {
        n,
        lb: col_var.iter().map(|&v| lb[v]).collect(),
        ub: col_var.iter().map(|&v| ub[v]).collect(),
        col_var,
        fixed,
        eq,
        le,
        convex,
        obj_quad,
        obj_lin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::Sense;

    #[test]
    fn forcing_row_fixes_lambdas() {
        let mut m = ModelIR::new();
        let l1 = m.add_continuous("l1", 0.0, 1.0).unwrap();
        let l2 = m.add_continuous("l2", 0.0, 1.0).unwrap();
        let z = m.add_binary("z").unwrap();
        m.add_linear(LinExpr::var(l1).term(l2, 1.0).term(z, -1.0), Sense::Le, 0.0).unwrap();
        let (lb, ub) = (vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]);
        match lower(&m, &lb, &ub, 1e-6) {
            Lowered::Model(c) => {
                assert_eq!(c.n, 0);
                assert_eq!(c.fixed, vec![0.0, 0.0, 0.0]);
            }
            Lowered::Infeasible(_) => panic!("feasible"),
        }
    }

    #[test]
    fn cut_matches_function_at_anchor() {
        let mut m = ModelIR::new();
        let x = m.add_continuous("x", -3.0, 3.0).unwrap();
        let t = m.add_continuous("t", 0.0, 9.0).unwrap();
        let row = ConvexRow::Quad { squares: vec![LinExpr::var(x)], rhs: LinExpr::var(t) };
        let (e, rhs) = tangent_cut(&row, &[1.5, 0.0]).unwrap();
        // 3x - 2.25 - t <= 0
        let at = |xv: f64, tv: f64| e.eval(&[xv, tv]) - rhs;
        assert!((at(1.5, 0.0) - row.violation(&[1.5, 0.0])).abs() < 1e-15);
        assert!((at(1.5, 2.25)).abs() < 1e-15);
    }
}
