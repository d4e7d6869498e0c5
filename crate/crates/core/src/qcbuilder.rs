//! Assembly of the QC relaxation and its piecewise refinement over a network.
//!
//! Bus angles are model variables with the reference angle fixed at zero;
//! every branch carries its own angle difference `td = va_f - va_t` and the
//! lifted terms `cs ~ cos(td)`, `sn ~ sin(td)`, `wcs ~ v_f v_t cs`,
//! `wsn ~ v_f v_t sn` and the series current magnitude `l`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::envelopes::{
    cos_envelope_rows, quad_envelope_rows, sin_envelope_rows, soc_current_block, trilinear_extreme_points,
    trilinear_lambda_hull, trilinear_recursive_mccormick, BranchFlowVars, EnvelopeBlock, Interval,
};
use crate::model_ir::{LinExpr, ModelIR, Objective, Sense, VarId};
use crate::netmodel::branch_admittance;
use crate::piecewise::{partition_vars, piecewise_quadratic, piecewise_trilinear, Discretization, PartitionVars};
use crate::{Error, Network, Result};

/// Box bounds on the variables that enter nonconvex terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableBounds {
    pub v: Vec<Interval>,
    pub theta: Vec<Interval>,
    pub cs: Vec<Interval>,
    pub sn: Vec<Interval>,
}

impl VariableBounds {
    pub fn from_network(net: &Network) -> Self {
        let v = net.buses.iter().map(|b| Interval { lo: b.vmin, hi: b.vmax }).collect();
        let theta = net.branches.iter().map(|br| Interval { lo: br.angmin, hi: br.angmax }).collect();
        let mut out = VariableBounds { v, theta, cs: Vec::new(), sn: Vec::new() };
        out.recompute_trig();
        out
    }

    /// Derives the `cs` and `sn` boxes from the angle-difference boxes.
    pub fn recompute_trig(&mut self) {
        self.cs = self.theta.iter().map(Interval::cos_range).collect();
        self.sn = self.theta.iter().map(Interval::sin_range).collect();
    }

    pub fn interval(&self, var: PartitionVar) -> Interval {
        match var {
            PartitionVar::Voltage(i) => self.v[i],
            PartitionVar::Cos(k) => self.cs[k],
            PartitionVar::Sin(k) => self.sn[k],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for b in self.v.iter().chain(&self.theta) {
            Interval::new(b.lo, b.hi)?;
        }
        Ok(())
    }
}

/// A variable that may be partitioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PartitionVar {
    Voltage(usize),
    Cos(usize),
    Sin(usize),
}

impl PartitionVar {
    /// All candidates in index order: voltages, then cos, then sin terms.
    pub fn all(net: &Network) -> Vec<PartitionVar> {
        let nb = net.buses.len();
        let ne = net.branches.len();
        (0..nb)
            .map(PartitionVar::Voltage)
            .chain((0..ne).map(PartitionVar::Cos))
            .chain((0..ne).map(PartitionVar::Sin))
            .collect()
    }
}

pub type PartitionScheme = BTreeMap<PartitionVar, Discretization>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrilinearRelaxation {
    /// Convex hull of the eight box vertices.
    Hull,
    /// Two nested McCormick envelopes.
    RecursiveMcCormick,
}

#[derive(Debug, Clone)]
pub struct BranchVars {
    pub td: VarId,
    pub cs: VarId,
    pub sn: VarId,
    pub wcs: VarId,
    pub wsn: VarId,
    pub l: VarId,
    pub p_fr: VarId,
    pub q_fr: VarId,
    pub p_to: VarId,
    pub q_to: VarId,
}

/// A relaxation together with handles to its network variables.
#[derive(Debug, Clone)]
pub struct QcModel {
    pub model: ModelIR,
    pub va: Vec<VarId>,
    pub vm: Vec<VarId>,
    pub w: Vec<VarId>,
    pub pg: Vec<VarId>,
    pub qg: Vec<VarId>,
    pub branches: Vec<BranchVars>,
    /// Partition binaries of each partitioned variable.
    pub z: BTreeMap<PartitionVar, Vec<VarId>>,
}

impl QcModel {
    pub fn var(&self, v: PartitionVar) -> VarId {
        match v {
            PartitionVar::Voltage(i) => self.vm[i],
            PartitionVar::Cos(k) => self.branches[k].cs,
            PartitionVar::Sin(k) => self.branches[k].sn,
        }
    }

    /// Adds `objective <= ub`.
    pub fn add_objective_cutoff(&mut self, ub: f64) -> Result<()> {
        let obj = self.model.objective().clone();
        let squares = obj.quad.iter().map(|&(v, c)| LinExpr::var(v).scaled(c.sqrt())).collect();
        let rhs = obj.linear.scaled(-1.0).plus(ub);
        self.model.add_quad(squares, rhs)?;
        Ok(())
    }
}

/// QC relaxation with λ-hull trilinear terms.
pub fn build_qc(net: &Network, bounds: &VariableBounds) -> Result<QcModel> {
    build(net, bounds, &PartitionScheme::new(), TrilinearRelaxation::Hull)
}

/// QC relaxation with a chosen trilinear relaxation.
pub fn build_qc_with(net: &Network, bounds: &VariableBounds, tri: TrilinearRelaxation) -> Result<QcModel> {
    build(net, bounds, &PartitionScheme::new(), tri)
}

/// Piecewise QC relaxation over a partition scheme.
pub fn build_pqc(net: &Network, bounds: &VariableBounds, parts: &PartitionScheme) -> Result<QcModel> {
    build(net, bounds, parts, TrilinearRelaxation::Hull)
}

fn build(net: &Network, bounds: &VariableBounds, parts: &PartitionScheme, tri: TrilinearRelaxation) -> Result<QcModel> {
    bounds.validate()?;
    let nb = net.buses.len();
    let ne = net.branches.len();
    if bounds.v.len() != nb || bounds.theta.len() != ne || bounds.cs.len() != ne || bounds.sn.len() != ne {
        return Err(Error::Model("variable bounds do not match the network size".into()));
    }
    for (var, d) in parts {
        let b = bounds.interval(*var);
        if !d.matches_bounds(b.lo, b.hi) {
            return Err(Error::Model(format!(
                "discretization of {var:?} spans [{}, {}] but bounds are [{}, {}]",
                d.lo(),
                d.hi(),
                b.lo,
                b.hi
            )));
        }
    }

    let mut m = ModelIR::new();
    let slack = net.slack_index();
    let mut va = Vec::with_capacity(nb);
    let mut vm = Vec::with_capacity(nb);
    for (i, bus) in net.buses.iter().enumerate() {
        let (lo, hi) = if i == slack { (0.0, 0.0) } else { (f64::NEG_INFINITY, f64::INFINITY) };
        va.push(m.add_continuous(format!("va_{}", bus.id), lo, hi)?);
        vm.push(m.add_continuous(format!("vm_{}", bus.id), bounds.v[i].lo, bounds.v[i].hi)?);
    }

    let mut z = BTreeMap::new();
    let mut pv: BTreeMap<PartitionVar, PartitionVars> = BTreeMap::new();
    let mut part_of = |m: &mut ModelIR, var: PartitionVar, x: VarId, name: &str| -> Result<PartitionVars> {
        if let Some(p) = pv.get(&var) {
            return Ok(p.clone());
        }
        match parts.get(&var) {
            Some(d) => {
                let p = partition_vars(m, name, x, d.clone())?;
                z.insert(var, p.z.clone());
                pv.insert(var, p.clone());
                Ok(p)
            }
            None => {
                let b = bounds.interval(var);
                Ok(PartitionVars { var: x, disc: Discretization::bounds(b.lo, b.hi)?, z: Vec::new() })
            }
        }
    };

    let mut w = Vec::with_capacity(nb);
    for (i, bus) in net.buses.iter().enumerate() {
        let sq = bounds.v[i].square();
        let wi = m.add_continuous(format!("w_{}", bus.id), sq.lo, sq.hi)?;
        let var = PartitionVar::Voltage(i);
        if parts.get(&var).is_some_and(|d| d.n_partitions() > 1) {
            let p = part_of(&mut m, var, vm[i], &format!("vm_{}", bus.id))?;
            piecewise_quadratic(&mut m, &format!("w_{}", bus.id), &p, wi)?;
        } else {
            let mut blk = EnvelopeBlock::default();
            quad_envelope_rows(&mut m, &mut blk, vm[i], wi, bounds.v[i])?;
        }
        w.push(wi);
    }

    let mut pg = Vec::new();
    let mut qg = Vec::new();
    for (g, gen) in net.generators.iter().enumerate() {
        pg.push(m.add_continuous(format!("pg_{g}"), gen.pmin, gen.pmax)?);
        qg.push(m.add_continuous(format!("qg_{g}"), gen.qmin, gen.qmax)?);
    }

    let mut branches = Vec::with_capacity(ne);
    for (k, br) in net.branches.iter().enumerate() {
        let (f, t) = net.branch_ends(k);
        let th = bounds.theta[k];
        let (cs_b, sn_b) = (bounds.cs[k], bounds.sn[k]);
        let name = |s: &str| format!("{s}_{k}");
        let td = m.add_continuous(name("td"), th.lo, th.hi)?;
        m.add_linear(LinExpr::var(td).term(va[f], -1.0).term(va[t], 1.0), Sense::Eq, 0.0)?;
        let cs = m.add_continuous(name("cs"), cs_b.lo, cs_b.hi)?;
        let sn = m.add_continuous(name("sn"), sn_b.lo, sn_b.hi)?;
        let mut blk = EnvelopeBlock::default();
        cos_envelope_rows(&mut m, &mut blk, td, cs, th)?;
        sin_envelope_rows(&mut m, &mut blk, td, sn, th)?;

        let (bf, bt) = (bounds.v[f], bounds.v[t]);
        let wcs_b = bf.mul(&bt).mul(&cs_b);
        let wsn_b = bf.mul(&bt).mul(&sn_b);
        let wcs = m.add_continuous(name("wcs"), wcs_b.lo, wcs_b.hi)?;
        let wsn = m.add_continuous(name("wsn"), wsn_b.lo, wsn_b.hi)?;
        let piecewise = [PartitionVar::Voltage(f), PartitionVar::Voltage(t), PartitionVar::Cos(k), PartitionVar::Sin(k)]
            .iter()
            .any(|v| parts.get(v).is_some_and(|d| d.n_partitions() > 1));
        if piecewise {
            let pf = part_of(&mut m, PartitionVar::Voltage(f), vm[f], &format!("vm_{}", net.buses[f].id))?;
            let pt = part_of(&mut m, PartitionVar::Voltage(t), vm[t], &format!("vm_{}", net.buses[t].id))?;
            let pc = part_of(&mut m, PartitionVar::Cos(k), cs, &name("cs"))?;
            let ps = part_of(&mut m, PartitionVar::Sin(k), sn, &name("sn"))?;
            piecewise_trilinear(&mut m, &name("wcs"), [&pf, &pt, &pc], wcs)?;
            piecewise_trilinear(&mut m, &name("wsn"), [&pf, &pt, &ps], wsn)?;
        } else {
            match tri {
                TrilinearRelaxation::Hull => {
                    trilinear_lambda_hull(&mut m, &name("wcs"), [vm[f], vm[t], cs], wcs, &trilinear_extreme_points(bf, bt, cs_b))?;
                    trilinear_lambda_hull(&mut m, &name("wsn"), [vm[f], vm[t], sn], wsn, &trilinear_extreme_points(bf, bt, sn_b))?;
                }
                TrilinearRelaxation::RecursiveMcCormick => {
                    trilinear_recursive_mccormick(&mut m, &name("wcs"), [vm[f], vm[t], cs], wcs, [bf, bt, cs_b])?;
                    trilinear_recursive_mccormick(&mut m, &name("wsn"), [vm[f], vm[t], sn], wsn, [bf, bt, sn_b])?;
                }
            }
        }

        let adm = branch_admittance(br)?;
        let flow = |m: &mut ModelIR, n: &str, c: crate::netmodel::FlowCoeffs, w_end: VarId| -> Result<VarId> {
            let v = m.add_continuous(name(n), f64::NEG_INFINITY, f64::INFINITY)?;
            let e = LinExpr::var(v).term(w_end, -c.sq).term(wcs, -c.wr).term(wsn, -c.wi);
            m.add_linear(e, Sense::Eq, 0.0)?;
            Ok(v)
        };
        let p_fr = flow(&mut m, "p_fr", adm.p_from(), w[f])?;
        let q_fr = flow(&mut m, "q_fr", adm.q_from(), w[f])?;
        let p_to = flow(&mut m, "p_to", adm.p_to(), w[t])?;
        let q_to = flow(&mut m, "q_to", adm.q_to(), w[t])?;
        if br.has_thermal_limit() {
            for (p, q) in [(p_fr, q_fr), (p_to, q_to)] {
                m.add_quad(vec![LinExpr::var(p), LinExpr::var(q)], LinExpr::constant(br.rate_a * br.rate_a))?;
            }
        }
        let l = m.add_continuous(name("l"), 0.0, f64::INFINITY)?;
        let fv = BranchFlowVars { p_fr, q_fr, p_to, q_to, w_fr: w[f], w_to: w[t] };
        soc_current_block(&mut m, fv, l, br)?;
        branches.push(BranchVars { td, cs, sn, wcs, wsn, l, p_fr, q_fr, p_to, q_to });
    }

    let incidence = net.incidence();
    let gens = net.gens_at_bus();
    for (i, bus) in net.buses.iter().enumerate() {
        // sum pg - pd - gs w = sum p_flow ; sum qg - qd + bs w = sum q_flow
        let mut p = LinExpr::new();
        let mut q = LinExpr::new();
        for &g in &gens[i] {
            p.add_term(pg[g], 1.0);
            q.add_term(qg[g], 1.0);
        }
        p.add_term(w[i], -bus.gs);
        q.add_term(w[i], bus.bs);
        for &(k, from) in &incidence[i] {
            let b = &branches[k];
            p.add_term(if from { b.p_fr } else { b.p_to }, -1.0);
            q.add_term(if from { b.q_fr } else { b.q_to }, -1.0);
        }
        m.add_linear(p, Sense::Eq, bus.pd)?;
        m.add_linear(q, Sense::Eq, bus.qd)?;
    }

    let mut obj = Objective::default();
    for (g, gen) in net.generators.iter().enumerate() {
        if gen.c2 > 0.0 {
            obj.quad.push((pg[g], gen.c2));
        }
        obj.linear.add_term(pg[g], gen.c1);
        obj.linear.constant += gen.c0;
    }
    m.set_objective(obj)?;

    Ok(QcModel { model: m, va, vm, w, pg, qg, branches, z })
}
