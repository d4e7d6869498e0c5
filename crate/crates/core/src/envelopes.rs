//! Convex envelopes of the nonconvex terms in the polar power flow equations.
//!
//! Every constructor writes its rows into a [`ModelIR`] and returns an
//! [`EnvelopeBlock`] naming the variables and rows it created. Angles are in
//! radians and must satisfy `max(|lo|, |hi|) <= pi/2`.

use std::f64::consts::FRAC_PI_2;

use serde::Serialize;

use crate::model_ir::{ConstraintId, LinExpr, ModelIR, Sense, VarId};
use crate::netmodel::branch_admittance;
use crate::{Branch, Error, Result};

/// Slack allowed on the `pi/2` angle assumption to absorb rounding in
/// degree to radian conversions.
const ANGLE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    /// Range of `x^2` over the interval.
    pub fn square(&self) -> Interval {
        let (a, b) = (self.lo * self.lo, self.hi * self.hi);
        let lo = if self.lo <= 0.0 && self.hi >= 0.0 { 0.0 } else { a.min(b) };
        Interval { lo, hi: a.max(b) }
    }

    pub fn mul(&self, other: &Interval) -> Interval {
        let c = [self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi];
        Interval {
            lo: c.iter().copied().fold(f64::INFINITY, f64::min),
            hi: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Largest magnitude in the interval.
    pub fn abs_max(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// Range of `cos` over an interval inside `[-pi/2, pi/2]`.
    pub fn cos_range(&self) -> Interval {
        let (a, b) = (self.lo.cos(), self.hi.cos());
        let hi = if self.lo <= 0.0 && self.hi >= 0.0 { 1.0 } else { a.max(b) };
        Interval { lo: a.min(b), hi }
    }

    /// Range of `sin` over an interval inside `[-pi/2, pi/2]`.
    pub fn sin_range(&self) -> Interval {
        Interval { lo: self.lo.sin(), hi: self.hi.sin() }
    }
}

/// Variables and rows added to a model by one envelope constructor.
#[derive(Debug, Clone, Default)]
pub struct EnvelopeBlock {
    pub aux_vars: Vec<VarId>,
    pub constraints: Vec<ConstraintId>,
}

impl EnvelopeBlock {
    fn push(&mut self, id: Result<ConstraintId>) -> Result<()> {
        self.constraints.push(id?);
        Ok(())
    }
}

fn check_angle(b: Interval) -> Result<()> {
    if b.abs_max() > FRAC_PI_2 + ANGLE_SLACK {
        return Err(Error::UnsupportedBounds { lo: b.lo, hi: b.hi });
    }
    Ok(())
}

/// `c * (x - x0) + y0` as `LinExpr`.
fn line(x: VarId, slope: f64, x0: f64, y0: f64) -> LinExpr {
    LinExpr::var(x).scaled(slope).plus(y0 - slope * x0)
}

/// Adds `y (sense) slope * (x - x0) + y0`.
fn add_line(m: &mut ModelIR, y: VarId, sense: Sense, x: VarId, slope: f64, x0: f64, y0: f64) -> Result<ConstraintId> {
    let mut e = LinExpr::var(y);
    e.add_expr(&line(x, slope, x0, y0), -1.0);
    let rhs = -e.constant;
    e.constant = 0.0;
    m.add_linear(e, sense, rhs)
}

/// Introduces `w` with `w >= x^2` and `w <= (lo + hi) x - lo hi`.
pub fn quad_envelope(m: &mut ModelIR, name: &str, x: VarId, b: Interval) -> Result<(VarId, EnvelopeBlock)> {
    let b = Interval::new(b.lo, b.hi)?;
    let sq = b.square();
    let w = m.add_continuous(name, sq.lo, sq.hi)?;
    let mut blk = EnvelopeBlock { aux_vars: vec![w], ..Default::default() };
    quad_envelope_rows(m, &mut blk, x, w, b)?;
    Ok((w, blk))
}

pub(crate) fn quad_envelope_rows(m: &mut ModelIR, blk: &mut EnvelopeBlock, x: VarId, w: VarId, b: Interval) -> Result<()> {
    blk.push(m.add_quad(vec![LinExpr::var(x)], LinExpr::var(w)))?;
    blk.push(add_line(m, w, Sense::Le, x, b.lo + b.hi, b.lo, b.lo * b.lo))?;
    Ok(())
}

/// Introduces `cs` relaxing `cos(theta)`.
pub fn cos_envelope(m: &mut ModelIR, name: &str, theta: VarId, b: Interval) -> Result<(VarId, EnvelopeBlock)> {
    let b = Interval::new(b.lo, b.hi)?;
    check_angle(b)?;
    let r = b.cos_range();
    let cs = m.add_continuous(name, r.lo, r.hi)?;
    let mut blk = EnvelopeBlock { aux_vars: vec![cs], ..Default::default() };
    cos_envelope_rows(m, &mut blk, theta, cs, b)?;
    Ok((cs, blk))
}

pub(crate) fn cos_envelope_rows(m: &mut ModelIR, blk: &mut EnvelopeBlock, theta: VarId, cs: VarId, b: Interval) -> Result<()> {
    let tm = b.abs_max();
    if tm == 0.0 || b.is_point() {
        return Ok(());
    }
    // k theta^2 <= 1 - cs
    let k = (1.0 - tm.cos()) / (tm * tm);
    blk.push(m.add_quad(
        vec![LinExpr::var(theta).scaled(k.sqrt())],
        LinExpr::constant(1.0).term(cs, -1.0),
    ))?;
    let slope = (b.hi.cos() - b.lo.cos()) / b.width();
    blk.push(add_line(m, cs, Sense::Ge, theta, slope, b.lo, b.lo.cos()))?;
    Ok(())
}

/// Which polyhedral sine relaxation applies to an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinCase {
    /// Interval straddles zero, or touches it.
    Straddle,
    /// Both bounds negative.
    Negative,
    /// Both bounds positive.
    Positive,
    Point,
}

pub fn sin_case(b: Interval) -> SinCase {
    if b.is_point() {
        SinCase::Point
    } else if b.hi < 0.0 {
        SinCase::Negative
    } else if b.lo > 0.0 {
        SinCase::Positive
    } else {
        SinCase::Straddle
    }
}

/// Introduces `sn` relaxing `sin(theta)`.
pub fn sin_envelope(m: &mut ModelIR, name: &str, theta: VarId, b: Interval) -> Result<(VarId, EnvelopeBlock)> {
    let b = Interval::new(b.lo, b.hi)?;
    check_angle(b)?;
    let r = b.sin_range();
    let sn = m.add_continuous(name, r.lo, r.hi)?;
    let mut blk = EnvelopeBlock { aux_vars: vec![sn], ..Default::default() };
    sin_envelope_rows(m, &mut blk, theta, sn, b)?;
    Ok((sn, blk))
}

pub(crate) fn sin_envelope_rows(m: &mut ModelIR, blk: &mut EnvelopeBlock, theta: VarId, sn: VarId, b: Interval) -> Result<()> {
    let tangent = |m: &mut ModelIR, sense, at: f64| add_line(m, sn, sense, theta, at.cos(), at, at.sin());
    match sin_case(b) {
        SinCase::Point => {}
        SinCase::Straddle => {
            let h = 0.5 * b.abs_max();
            blk.push(tangent(m, Sense::Le, h))?;
            blk.push(tangent(m, Sense::Ge, -h))?;
        }
        SinCase::Negative | SinCase::Positive => {
            let (sec, tan) = if b.hi < 0.0 { (Sense::Le, Sense::Ge) } else { (Sense::Ge, Sense::Le) };
            let slope = (b.hi.sin() - b.lo.sin()) / b.width();
            blk.push(add_line(m, sn, sec, theta, slope, b.lo, b.lo.sin()))?;
            for at in [b.lo, b.mid(), b.hi] {
                blk.push(tangent(m, tan, at))?;
            }
        }
    }
    Ok(())
}

/// The eight vertices of a box and the product at each.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremePointSet {
    /// Ordered lexicographically with `x1` slowest: index `4 a + 2 b + c`
    /// where `a, b, c` are 0 for the lower and 1 for the upper bound.
    pub points: [[f64; 3]; 8],
    pub values: [f64; 8],
}

pub fn trilinear_extreme_points(b1: Interval, b2: Interval, b3: Interval) -> ExtremePointSet {
    let mut points = [[0.0; 3]; 8];
    let mut values = [0.0; 8];
    let pick = |b: Interval, bit: usize| if bit == 0 { b.lo } else { b.hi };
    for k in 0..8 {
        let p = [pick(b1, k >> 2 & 1), pick(b2, k >> 1 & 1), pick(b3, k & 1)];
        points[k] = p;
        values[k] = p[0] * p[1] * p[2];
    }
    ExtremePointSet { points, values }
}

/// Convex hull of `xhat = x1 x2 x3` through eight vertex multipliers.
pub fn trilinear_lambda_hull(
    m: &mut ModelIR,
    name: &str,
    x: [VarId; 3],
    xhat: VarId,
    eps: &ExtremePointSet,
) -> Result<EnvelopeBlock> {
    let mut blk = EnvelopeBlock::default();
    let mut lambda = Vec::with_capacity(8);
    for k in 0..8 {
        lambda.push(m.add_continuous(format!("{name}_lam{}", k + 1), 0.0, 1.0)?);
    }
    let mut sum = LinExpr::new();
    let mut val = LinExpr::var(xhat);
    let mut coord: Vec<LinExpr> = x.iter().map(|&v| LinExpr::var(v)).collect();
    for (k, &l) in lambda.iter().enumerate() {
        sum.add_term(l, 1.0);
        val.add_term(l, -eps.values[k]);
        for (i, c) in coord.iter_mut().enumerate() {
            c.add_term(l, -eps.points[k][i]);
        }
    }
    blk.push(m.add_linear(sum, Sense::Eq, 1.0))?;
    blk.push(m.add_linear(val, Sense::Eq, 0.0))?;
    for c in coord {
        blk.push(m.add_linear(c, Sense::Eq, 0.0))?;
    }
    blk.aux_vars = lambda;
    Ok(blk)
}

/// The four McCormick inequalities for `w = x y`.
pub fn mccormick(m: &mut ModelIR, blk: &mut EnvelopeBlock, x: VarId, y: VarId, w: VarId, bx: Interval, by: Interval) -> Result<()> {
    let rows = [
        (Sense::Ge, bx.lo, by.lo),
        (Sense::Ge, bx.hi, by.hi),
        (Sense::Le, bx.hi, by.lo),
        (Sense::Le, bx.lo, by.hi),
    ];
    // w (sense) xa * y + yb * x - xa * yb
    for (sense, xa, yb) in rows {
        let e = LinExpr::var(w).term(y, -xa).term(x, -yb);
        blk.push(m.add_linear(e, sense, -xa * yb))?;
    }
    Ok(())
}

/// `xhat = (x1 x2) x3` through two nested McCormick relaxations.
pub fn trilinear_recursive_mccormick(
    m: &mut ModelIR,
    name: &str,
    x: [VarId; 3],
    xhat: VarId,
    b: [Interval; 3],
) -> Result<EnvelopeBlock> {
    let b12 = b[0].mul(&b[1]);
    let w12 = m.add_continuous(format!("{name}_w12"), b12.lo, b12.hi)?;
    let mut blk = EnvelopeBlock { aux_vars: vec![w12], ..Default::default() };
    mccormick(m, &mut blk, x[0], x[1], w12, b[0], b[1])?;
    mccormick(m, &mut blk, w12, x[2], xhat, b12, b[2])?;
    Ok(blk)
}

/// Branch end power variables for [`soc_current_block`].
#[derive(Debug, Clone, Copy)]
pub struct BranchFlowVars {
    pub p_fr: VarId,
    pub q_fr: VarId,
    pub p_to: VarId,
    pub q_to: VarId,
    pub w_fr: VarId,
    pub w_to: VarId,
}

/// Series-current rows: loss identity and rotated cone.
///
/// Line charging and the tap are removed from the terminal flows so the rows
/// hold exactly on the series element: `S_fr' + S_to' = (r + jx) l` and
/// `|S_fr'|^2 <= (w_fr / t^2) l`. Without charging and tap this is
/// `S_ij + S_ji = Z l` and `|S_ij|^2 <= W_ii l`.
pub fn soc_current_block(m: &mut ModelIR, f: BranchFlowVars, l: VarId, branch: &Branch) -> Result<EnvelopeBlock> {
    let adm = branch_admittance(branch)?;
    let tm = adm.tap_sq();
    let mut blk = EnvelopeBlock::default();
    let p_fr = LinExpr::var(f.p_fr);
    let q_fr = LinExpr::var(f.q_fr).term(f.w_fr, adm.b_fr / tm);
    let q_to = LinExpr::var(f.q_to).term(f.w_to, adm.b_to);
    let mut real = p_fr.clone().term(f.p_to, 1.0);
    real.add_term(l, -branch.r);
    blk.push(m.add_linear(real, Sense::Eq, 0.0))?;
    let mut imag = q_fr.clone();
    imag.add_expr(&q_to, 1.0);
    imag.add_term(l, -branch.x);
    blk.push(m.add_linear(imag, Sense::Eq, 0.0))?;
    blk.push(m.add_rotated_cone(vec![p_fr, q_fr], LinExpr::var(f.w_fr).scaled(1.0 / tm), LinExpr::var(l)))?;
    Ok(blk)
}
