//! Solver-agnostic mixed-binary convex programs.
//!
//! A [`ModelIR`] holds continuous and binary variables, linear rows, convex
//! quadratic rows written as a sum of squared affine forms bounded by an
//! affine form, and rotated second-order cones. The objective is a separable
//! convex quadratic plus an affine part, always minimized.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::{Error, Result};

/// Feasibility tolerance on per-unit scaled rows.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lb: f64,
    pub ub: f64,
}

/// Affine expression `sum(coef * var) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(v: VarId) -> Self {
        LinExpr { terms: vec![(v, 1.0)], constant: 0.0 }
    }

    pub fn term(mut self, v: VarId, coef: f64) -> Self {
        self.add_term(v, coef);
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
    }

    pub fn add_expr(&mut self, other: &LinExpr, scale: f64) {
        for &(v, c) in &other.terms {
            self.add_term(v, c * scale);
        }
        self.constant += other.constant * scale;
    }

    pub fn scaled(&self, s: f64) -> LinExpr {
        let mut e = LinExpr::new();
        e.add_expr(self, s);
        e
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, &(v, c)| acc + c * x[v.0])
    }

    /// Merges duplicate variables and drops zero coefficients.
    pub fn compact(&self) -> LinExpr {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|&(v, _)| v);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match out.last_mut() {
                Some((lv, lc)) if *lv == v => *lc += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        LinExpr { terms: out, constant: self.constant }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// `expr (sense) rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub expr: LinExpr,
    pub sense: Sense,
    pub rhs: f64,
}

/// `sum(square_k^2) <= rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    pub squares: Vec<LinExpr>,
    pub rhs: LinExpr,
}

/// Rotated cone `sum(square_k^2) <= a * b` with `a, b >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedCone {
    pub squares: Vec<LinExpr>,
    pub a: LinExpr,
    pub b: LinExpr,
}

/// `minimize sum(coef * var^2) + linear` with every `coef >= 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Objective {
    pub quad: Vec<(VarId, f64)>,
    pub linear: LinExpr,
}

impl Objective {
    pub fn linear(expr: LinExpr) -> Self {
        Objective { quad: Vec::new(), linear: expr }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.quad.iter().map(|&(v, c)| c * x[v.0] * x[v.0]).sum::<f64>() + self.linear.eval(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintId {
    Linear(usize),
    Quad(usize),
    Cone(usize),
}

/// Where the worst violation of an assignment was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationSite {
    Bound(VarId),
    Integrality(VarId),
    Constraint(ConstraintId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Largest signed infeasibility; `<= 0` means every row holds.
    pub max_violation: f64,
    pub objective: f64,
    pub worst: Option<ViolationSite>,
}

#[derive(Debug, Clone, Default)]
pub struct ModelIR {
    vars: Vec<Variable>,
    names: HashMap<String, VarId>,
    linear: Vec<LinearConstraint>,
    quad: Vec<QuadConstraint>,
    cones: Vec<RotatedCone>,
    objective: Objective,
}

impl ModelIR {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lb: f64, ub: f64) -> Result<VarId> {
        let name = name.into();
        if lb > ub || lb.is_nan() || ub.is_nan() {
            return Err(Error::Model(format!("variable `{name}` has reversed bounds [{lb}, {ub}]")));
        }
        self.push_var(Variable { name, kind: VarKind::Continuous, lb, ub })
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> Result<VarId> {
        self.push_var(Variable { name: name.into(), kind: VarKind::Binary, lb: 0.0, ub: 1.0 })
    }

    fn push_var(&mut self, var: Variable) -> Result<VarId> {
        if self.names.contains_key(&var.name) {
            return Err(Error::Model(format!("duplicate variable name `{}`", var.name)));
        }
        let id = VarId(self.vars.len());
        self.names.insert(var.name.clone(), id);
        self.vars.push(var);
        Ok(id)
    }

    fn check_expr(&self, e: &LinExpr) -> Result<()> {
        match e.terms.iter().find(|(v, _)| v.0 >= self.vars.len()) {
            Some((v, _)) => Err(Error::Model(format!("expression references undeclared variable #{}", v.0))),
            None => Ok(()),
        }
    }

    pub fn add_linear(&mut self, expr: LinExpr, sense: Sense, rhs: f64) -> Result<ConstraintId> {
        self.check_expr(&expr)?;
        self.linear.push(LinearConstraint { expr, sense, rhs });
        Ok(ConstraintId::Linear(self.linear.len() - 1))
    }

    pub fn add_quad(&mut self, squares: Vec<LinExpr>, rhs: LinExpr) -> Result<ConstraintId> {
        for s in &squares {
            self.check_expr(s)?;
        }
        self.check_expr(&rhs)?;
        self.quad.push(QuadConstraint { squares, rhs });
        Ok(ConstraintId::Quad(self.quad.len() - 1))
    }

    pub fn add_rotated_cone(&mut self, squares: Vec<LinExpr>, a: LinExpr, b: LinExpr) -> Result<ConstraintId> {
        for s in &squares {
            self.check_expr(s)?;
        }
        self.check_expr(&a)?;
        self.check_expr(&b)?;
        self.cones.push(RotatedCone { squares, a, b });
        Ok(ConstraintId::Cone(self.cones.len() - 1))
    }

    pub fn set_objective(&mut self, objective: Objective) -> Result<()> {
        self.check_expr(&objective.linear)?;
        if let Some(&(v, c)) = objective.quad.iter().find(|&&(v, c)| c < 0.0 || v.0 >= self.vars.len()) {
            return Err(Error::Model(format!(
                "objective quadratic term on #{} has coefficient {c}; must be a declared variable with c >= 0",
                v.0
            )));
        }
        self.objective = objective;
        Ok(())
    }

    pub fn set_bounds(&mut self, v: VarId, lb: f64, ub: f64) -> Result<()> {
        if lb > ub {
            return Err(Error::Model(format!(
                "variable `{}` given reversed bounds [{lb}, {ub}]",
                self.vars[v.0].name
            )));
        }
        let var = &mut self.vars[v.0];
        var.lb = lb;
        var.ub = ub;
        Ok(())
    }

    pub fn var(&self, name: &str) -> Option<VarId> {
        self.names.get(name).copied()
    }

    pub fn variable(&self, v: VarId) -> &Variable {
        &self.vars[v.0]
    }

    pub fn bounds(&self, v: VarId) -> (f64, f64) {
        let var = &self.vars[v.0];
        (var.lb, var.ub)
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn binaries(&self) -> Vec<VarId> {
        (0..self.vars.len())
            .filter(|&i| self.vars[i].kind == VarKind::Binary)
            .map(VarId)
            .collect()
    }

    pub fn linear_constraints(&self) -> &[LinearConstraint] {
        &self.linear
    }

    pub fn quad_constraints(&self) -> &[QuadConstraint] {
        &self.quad
    }

    pub fn cones(&self) -> &[RotatedCone] {
        &self.cones
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    /// Maximum signed constraint violation and objective value of `x`.
    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        self.evaluate_with(x, true)
    }

    /// Like [`ModelIR::evaluate`] with binaries treated as continuous in [0, 1].
    pub fn evaluate_relaxed(&self, x: &[f64]) -> Result<Evaluation> {
        self.evaluate_with(x, false)
    }

    fn evaluate_with(&self, x: &[f64], integral: bool) -> Result<Evaluation> {
        if x.len() != self.vars.len() {
            return Err(Error::Model(format!(
                "assignment has {} values for {} variables",
                x.len(),
                self.vars.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| v.is_nan()) {
            return Err(Error::Model(format!("missing value for variable `{}`", self.vars[i].name)));
        }
        let mut worst = f64::NEG_INFINITY;
        let mut site = None;
        let mut note = |viol: f64, s: ViolationSite| {
            if viol > worst {
                worst = viol;
                site = Some(s);
            }
        };
        for (i, var) in self.vars.iter().enumerate() {
            let v = VarId(i);
            note((var.lb - x[i]).max(x[i] - var.ub), ViolationSite::Bound(v));
            if integral && var.kind == VarKind::Binary {
                note((x[i] - x[i].round()).abs(), ViolationSite::Integrality(v));
            }
        }
        for (i, c) in self.linear.iter().enumerate() {
            let lhs = c.expr.eval(x);
            let viol = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            note(viol, ViolationSite::Constraint(ConstraintId::Linear(i)));
        }
        for (i, q) in self.quad.iter().enumerate() {
            let ss: f64 = q.squares.iter().map(|s| s.eval(x).powi(2)).sum();
            note(ss - q.rhs.eval(x), ViolationSite::Constraint(ConstraintId::Quad(i)));
        }
        for (i, c) in self.cones.iter().enumerate() {
            let ss: f64 = c.squares.iter().map(|s| s.eval(x).powi(2)).sum();
            let (a, b) = (c.a.eval(x), c.b.eval(x));
            let viol = (ss - a * b).max(-a).max(-b);
            note(viol, ViolationSite::Constraint(ConstraintId::Cone(i)));
        }
        if self.vars.is_empty() && self.linear.is_empty() {
            worst = 0.0;
        }
        Ok(Evaluation { max_violation: worst, objective: self.objective.eval(x), worst: site })
    }

    /// Debug dump in an LP-style text format.
    pub fn to_lp_string(&self) -> String {
        let mut s = String::new();
        let name = |v: VarId| self.vars[v.0].name.as_str();
        let fmt_lin = |e: &LinExpr| -> String {
            let mut out = String::new();
            for &(v, c) in &e.compact().terms {
                let _ = write!(out, " {} {} {}", if c < 0.0 { '-' } else { '+' }, c.abs(), name(v));
            }
            if out.is_empty() {
                out.push_str(" 0");
            }
            out
        };
        let fmt_squares = |sq: &[LinExpr]| -> String {
            let mut out = String::new();
            for e in sq {
                let e = e.compact();
                for (i, &(vi, ci)) in e.terms.iter().enumerate() {
                    for &(vj, cj) in &e.terms[i..] {
                        let coef = if vi == vj { ci * cj } else { 2.0 * ci * cj };
                        let sign = if coef < 0.0 { '-' } else { '+' };
                        if vi == vj {
                            let _ = write!(out, " {sign} {} {} ^2", coef.abs(), name(vi));
                        } else {
                            let _ = write!(out, " {sign} {} {} * {}", coef.abs(), name(vi), name(vj));
                        }
                    }
                    if e.constant != 0.0 {
                        let _ = write!(out, " + {} {}", 2.0 * ci * e.constant, name(vi));
                    }
                }
            }
            out
        };
        let _ = writeln!(s, "\\ ModelIR dump: {} variables", self.vars.len());
        let _ = write!(s, "Minimize\n obj:{}", fmt_lin(&self.objective.linear));
        if !self.objective.quad.is_empty() {
            let _ = write!(s, " + [");
            for &(v, c) in &self.objective.quad {
                let _ = write!(s, " + {} {} ^2", 2.0 * c, name(v));
            }
            let _ = write!(s, " ] / 2");
        }
        if self.objective.linear.constant != 0.0 {
            let _ = write!(s, " + {}", self.objective.linear.constant);
        }
        let _ = writeln!(s, "\nSubject To");
        for (i, c) in self.linear.iter().enumerate() {
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(s, " l{i}:{} {op} {}", fmt_lin(&c.expr), c.rhs - c.expr.constant);
        }
        for (i, q) in self.quad.iter().enumerate() {
            let _ = writeln!(s, " q{i}: [{} ]{} <= {}", fmt_squares(&q.squares), fmt_lin(&q.rhs.scaled(-1.0)), q.rhs.constant);
        }
        for (i, c) in self.cones.iter().enumerate() {
            let _ = writeln!(
                s,
                " r{i}: [{} ] <= ({}) * ({})",
                fmt_squares(&c.squares),
                fmt_lin(&c.a),
                fmt_lin(&c.b)
            );
        }
        let _ = writeln!(s, "Bounds");
        for v in &self.vars {
            if v.kind == VarKind::Continuous {
                let _ = writeln!(s, " {} <= {} <= {}", v.lb, v.name, v.ub);
            }
        }
        let bins: Vec<&str> = self.vars.iter().filter(|v| v.kind == VarKind::Binary).map(|v| v.name.as_str()).collect();
        if !bins.is_empty() {
            let _ = writeln!(s, "Binaries\n {}", bins.join(" "));
        }
        let _ = writeln!(s, "End");
        s
    }
}
