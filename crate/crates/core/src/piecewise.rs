//! Piecewise λ formulations over partitioned variable domains.
//!
//! A variable with `n` breakpoints gets `n - 1` partition binaries that sum
//! to one. Grid multipliers may only carry mass on the corners of the
//! selected sub-box. Partition binaries belong to the variable and are shared
//! by every term that uses it.

use serde::Serialize;

use crate::envelopes::{quad_envelope_rows, EnvelopeBlock};
use crate::model_ir::{ConstraintId, LinExpr, ModelIR, Sense, VarId};
use crate::{Error, Result};

const ENDPOINT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discretization {
    points: Vec<f64>,
}

impl Discretization {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Model("a discretization needs at least two points".into()));
        }
        if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Model(format!("discretization points must increase strictly: {points:?}")));
        }
        Ok(Discretization { points })
    }

    /// Single partition spanning `[lo, hi]`. Accepts `lo == hi` for fixed
    /// variables.
    pub fn bounds(lo: f64, hi: f64) -> Result<Self> {
        if lo == hi {
            return Ok(Discretization { points: vec![lo, hi] });
        }
        Self::new(vec![lo, hi])
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn n_partitions(&self) -> usize {
        self.points.len() - 1
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// Checks the endpoints against variable bounds.
    pub fn matches_bounds(&self, lo: f64, hi: f64) -> bool {
        (self.lo() - lo).abs() <= ENDPOINT_TOL && (self.hi() - hi).abs() <= ENDPOINT_TOL
    }

    /// Index of the partition containing `x`, clamped to the ends.
    pub fn partition_of(&self, x: f64) -> usize {
        let n = self.n_partitions();
        self.points[1..n].iter().take_while(|&&p| p < x).count()
    }

    /// Bounds of partition `p` (0-based).
    pub fn partition(&self, p: usize) -> (f64, f64) {
        (self.points[p], self.points[p + 1])
    }
}

/// 1-based grid index `(i3-1) n1 n2 + (i1-1) n2 + i2`.
pub fn grid_index(i: [usize; 3], n: [usize; 3]) -> Result<usize> {
    if (0..3).any(|d| i[d] < 1 || i[d] > n[d]) {
        return Err(Error::Model(format!("grid index {i:?} out of range for sizes {n:?}")));
    }
    Ok((i[2] - 1) * n[0] * n[1] + (i[0] - 1) * n[1] + i[1])
}

/// A variable's breakpoints together with its partition binaries.
#[derive(Debug, Clone)]
pub struct PartitionVars {
    pub var: VarId,
    pub disc: Discretization,
    /// One binary per partition; empty for a single partition.
    pub z: Vec<VarId>,
}

/// Creates partition binaries for `x`, their sum-to-one row and the
/// partition link bounds.
pub fn partition_vars(m: &mut ModelIR, name: &str, x: VarId, disc: Discretization) -> Result<PartitionVars> {
    let mut z = Vec::new();
    if disc.n_partitions() > 1 {
        for p in 0..disc.n_partitions() {
            z.push(m.add_binary(format!("{name}_z{}", p + 1))?);
        }
        let sum = z.iter().fold(LinExpr::new(), |e, &v| e.term(v, 1.0));
        m.add_linear(sum, Sense::Eq, 1.0)?;
        partition_link_bounds(m, x, &disc, &z)?;
    }
    Ok(PartitionVars { var: x, disc, z })
}

/// `sum_p z_p points[p] <= x <= sum_p z_p points[p+1]`.
pub fn partition_link_bounds(m: &mut ModelIR, x: VarId, d: &Discretization, z: &[VarId]) -> Result<Vec<ConstraintId>> {
    if z.is_empty() {
        return Ok(Vec::new());
    }
    if z.len() != d.n_partitions() {
        return Err(Error::Model(format!(
            "{} partition binaries for {} partitions",
            z.len(),
            d.n_partitions()
        )));
    }
    let mut lower = LinExpr::var(x);
    let mut upper = LinExpr::var(x);
    for (p, &zp) in z.iter().enumerate() {
        let (a, b) = d.partition(p);
        lower.add_term(zp, -a);
        upper.add_term(zp, -b);
    }
    Ok(vec![m.add_linear(lower, Sense::Ge, 0.0)?, m.add_linear(upper, Sense::Le, 0.0)?])
}

#[derive(Debug, Clone, Default)]
pub struct PiecewiseBlock {
    /// Multipliers in grid order; `lambda[k - 1]` belongs to grid index `k`.
    pub lambda: Vec<VarId>,
    pub constraints: Vec<ConstraintId>,
}

/// Adjacency rows `sum(lambda at point j) <= z_{j-1} + z_j` for one variable.
fn adjacency(m: &mut ModelIR, blk: &mut PiecewiseBlock, groups: Vec<LinExpr>, z: &[VarId]) -> Result<()> {
    if z.is_empty() {
        return Ok(());
    }
    for (j, mut e) in groups.into_iter().enumerate() {
        if j > 0 {
            e.add_term(z[j - 1], -1.0);
        }
        if j < z.len() {
            e.add_term(z[j], -1.0);
        }
        blk.constraints.push(m.add_linear(e, Sense::Le, 0.0)?);
    }
    Ok(())
}

/// Piecewise relaxation of `xhat = x1 x2 x3` over the product grid.
pub fn piecewise_trilinear(
    m: &mut ModelIR,
    name: &str,
    parts: [&PartitionVars; 3],
    xhat: VarId,
) -> Result<PiecewiseBlock> {
    let pts: Vec<&[f64]> = parts.iter().map(|p| p.disc.points()).collect();
    let n = [pts[0].len(), pts[1].len(), pts[2].len()];
    let total = n[0] * n[1] * n[2];
    let mut blk = PiecewiseBlock::default();
    for k in 0..total {
        blk.lambda.push(m.add_continuous(format!("{name}_lam{}", k + 1), 0.0, 1.0)?);
    }
    let mut sum = LinExpr::new();
    let mut val = LinExpr::var(xhat);
    let mut coord: Vec<LinExpr> = parts.iter().map(|p| LinExpr::var(p.var)).collect();
    let mut groups: Vec<Vec<LinExpr>> = n.iter().map(|&nd| vec![LinExpr::new(); nd]).collect();
    for i3 in 1..=n[2] {
        for i1 in 1..=n[0] {
            for i2 in 1..=n[1] {
                let idx = [i1, i2, i3];
                let l = blk.lambda[grid_index(idx, n)? - 1];
                let xi = [pts[0][i1 - 1], pts[1][i2 - 1], pts[2][i3 - 1]];
                sum.add_term(l, 1.0);
                val.add_term(l, -xi[0] * xi[1] * xi[2]);
                for d in 0..3 {
                    coord[d].add_term(l, -xi[d]);
                    groups[d][idx[d] - 1].add_term(l, 1.0);
                }
            }
        }
    }
    blk.constraints.push(m.add_linear(sum, Sense::Eq, 1.0)?);
    blk.constraints.push(m.add_linear(val, Sense::Eq, 0.0)?);
    for c in coord {
        blk.constraints.push(m.add_linear(c, Sense::Eq, 0.0)?);
    }
    for (d, g) in groups.into_iter().enumerate() {
        adjacency(m, &mut blk, g, &parts[d].z)?;
    }
    Ok(blk)
}

/// Piecewise relaxation of `w = x^2`: exact lower cone, piecewise secant
/// upper through the multipliers.
pub fn piecewise_quadratic(m: &mut ModelIR, name: &str, part: &PartitionVars, w: VarId) -> Result<PiecewiseBlock> {
    let pts = part.disc.points();
    let mut blk = PiecewiseBlock::default();
    if part.z.is_empty() {
        let mut env = EnvelopeBlock::default();
        let b = crate::envelopes::Interval::new(part.disc.lo(), part.disc.hi())?;
        quad_envelope_rows(m, &mut env, part.var, w, b)?;
        blk.constraints = env.constraints;
        return Ok(blk);
    }
    for k in 0..pts.len() {
        blk.lambda.push(m.add_continuous(format!("{name}_lam{}", k + 1), 0.0, 1.0)?);
    }
    blk.constraints.push(m.add_quad(vec![LinExpr::var(part.var)], LinExpr::var(w))?);
    let mut sum = LinExpr::new();
    let mut upper = LinExpr::var(w);
    let mut coord = LinExpr::var(part.var);
    let mut groups = Vec::with_capacity(pts.len());
    for (&l, &p) in blk.lambda.iter().zip(pts) {
        sum.add_term(l, 1.0);
        upper.add_term(l, -p * p);
        coord.add_term(l, -p);
        groups.push(LinExpr::var(l));
    }
    blk.constraints.push(m.add_linear(sum, Sense::Eq, 1.0)?);
    blk.constraints.push(m.add_linear(upper, Sense::Le, 0.0)?);
    blk.constraints.push(m.add_linear(coord, Sense::Eq, 0.0)?);
    adjacency(m, &mut blk, groups, &part.z)?;
    Ok(blk)
}
