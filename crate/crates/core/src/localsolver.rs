//! Local solutions of the polar ACOPF by a primal-dual interior-point method.
//!
//! The iteration follows the classic MIPS scheme: inequality slacks `z`,
//! multipliers `mu` for `h(x) <= 0` and `lam` for `g(x) = 0`, a barrier
//! parameter driven by `sigma * z'mu / niq`, and fraction-to-boundary steps.
//! Derivatives are analytic. The variable vector is `[va, vm, pg, qg]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::netmodel::{branch_admittance, FlowCoeffs};
use crate::piecewise::Discretization;
use crate::qcbuilder::{PartitionScheme, PartitionVar, QcModel, VariableBounds};
use crate::solver::{Solution, Status};
use crate::{Network, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    /// `vm = 1`, `va = 0`, dispatch at the middle of its range.
    Flat,
    /// Voltages and dispatch stored in the case file.
    CaseValues,
    /// A caller-provided point.
    Seeded,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalConfig {
    pub max_iter: usize,
    pub feas_tol: f64,
    pub grad_tol: f64,
    pub comp_tol: f64,
    pub cost_tol: f64,
    /// Fraction-to-boundary factor.
    pub xi: f64,
    /// Centering parameter.
    pub sigma: f64,
    /// Initial slack value.
    pub z0: f64,
    pub start: StartMode,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            max_iter: 150,
            feas_tol: 1e-6,
            grad_tol: 1e-6,
            comp_tol: 1e-6,
            cost_tol: 1e-6,
            xi: 0.99995,
            sigma: 0.1,
            z0: 1.0,
            start: StartMode::Flat,
        }
    }
}

/// Operating point in per-unit with angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcPoint {
    pub va: Vec<f64>,
    pub vm: Vec<f64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
}

impl AcPoint {
    /// Angle difference across branch `k`.
    pub fn theta(&self, net: &Network, k: usize) -> f64 {
        let (f, t) = net.branch_ends(k);
        self.va[f] - self.va[t]
    }

    /// Value of a partition candidate at this point.
    pub fn lifted(&self, net: &Network, v: PartitionVar) -> f64 {
        match v {
            PartitionVar::Voltage(i) => self.vm[i],
            PartitionVar::Cos(k) => self.theta(net, k).cos(),
            PartitionVar::Sin(k) => self.theta(net, k).sin(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AcSolution {
    pub status: Status,
    /// Cost in $/h.
    pub objective: f64,
    pub point: AcPoint,
    /// Largest violation of the AC constraints at `point`, in per-unit.
    pub max_violation: f64,
    pub iterations: usize,
}

impl AcSolution {
    pub fn is_feasible(&self) -> bool {
        self.status == Status::Optimal
    }
}

struct BranchData {
    f: usize,
    t: usize,
    p_fr: FlowCoeffs,
    q_fr: FlowCoeffs,
    p_to: FlowCoeffs,
    q_to: FlowCoeffs,
    rate_sq: Option<f64>,
    angle: (f64, f64),
}

/// Value, gradient and Hessian of a flow term over `(vm_f, vm_t, theta)`.
struct Local {
    val: f64,
    grad: [f64; 3],
    hess: [[f64; 3]; 3],
}

fn flow_term(c: &FlowCoeffs, from_end: bool, u: f64, w: f64, th: f64) -> Local {
    let (s, co) = th.sin_cos();
    let r = u * w * co;
    let i = u * w * s;
    let mut grad = [
        c.wr * w * co + c.wi * w * s,
        c.wr * u * co + c.wi * u * s,
        -c.wr * i + c.wi * r,
    ];
    let mut hess = [[0.0; 3]; 3];
    hess[0][1] = c.wr * co + c.wi * s;
    hess[0][2] = -c.wr * w * s + c.wi * w * co;
    hess[1][2] = -c.wr * u * s + c.wi * u * co;
    hess[2][2] = -c.wr * r - c.wi * i;
    hess[1][0] = hess[0][1];
    hess[2][0] = hess[0][2];
    hess[2][1] = hess[1][2];
    let e = if from_end { 0 } else { 1 };
    let ve = if from_end { u } else { w };
    grad[e] += 2.0 * c.sq * ve;
    hess[e][e] += 2.0 * c.sq;
    Local { val: c.sq * ve * ve + c.wr * r + c.wi * i, grad, hess }
}

/// Rows of `g(x) = 0` or `h(x) <= 0` with gradients as columns.
struct Rows {
    val: DVector<f64>,
    jac: DMatrix<f64>,
}

struct Problem<'a> {
    net: &'a Network,
    br: Vec<BranchData>,
    nb: usize,
    ng: usize,
    nx: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    f_scale: f64,
    slack: usize,
}

impl<'a> Problem<'a> {
    fn new(net: &'a Network, vb: &VariableBounds) -> Result<Self> {
        let nb = net.buses.len();
        let ng = net.generators.len();
        let nx = 2 * nb + 2 * ng;
        let mut br = Vec::with_capacity(net.branches.len());
        for (k, b) in net.branches.iter().enumerate() {
            let (f, t) = net.branch_ends(k);
            let a = branch_admittance(b)?;
            br.push(BranchData {
                f,
                t,
                p_fr: a.p_from(),
                q_fr: a.q_from(),
                p_to: a.p_to(),
                q_to: a.q_to(),
                rate_sq: b.has_thermal_limit().then(|| b.rate_a * b.rate_a),
                angle: (vb.theta[k].lo, vb.theta[k].hi),
            });
        }
        let mut lo = vec![f64::NEG_INFINITY; nx];
        let mut hi = vec![f64::INFINITY; nx];
        for i in 0..nb {
            lo[nb + i] = vb.v[i].lo;
            hi[nb + i] = vb.v[i].hi;
        }
        for (g, gen) in net.generators.iter().enumerate() {
            lo[2 * nb + g] = gen.pmin;
            hi[2 * nb + g] = gen.pmax;
            lo[2 * nb + ng + g] = gen.qmin;
            hi[2 * nb + ng + g] = gen.qmax;
        }
        let f_scale = 1.0
            / net.generators.iter().fold(1.0f64, |a, g| a.max(g.c1.abs() + 2.0 * g.c2 * g.pmax.abs().max(g.pmin.abs())));
        Ok(Problem { net, br, nb, ng, nx, lo, hi, f_scale, slack: net.slack_index() })
    }

    fn iva(&self, i: usize) -> usize {
        i
    }
    fn ivm(&self, i: usize) -> usize {
        self.nb + i
    }
    fn ipg(&self, g: usize) -> usize {
        2 * self.nb + g
    }
    fn iqg(&self, g: usize) -> usize {
        2 * self.nb + self.ng + g
    }

    /// Global `(index, sign)` lists for the local coordinates of branch `k`.
    fn local_map(&self, k: usize) -> [Vec<(usize, f64)>; 3] {
        let b = &self.br[k];
        [
            vec![(self.ivm(b.f), 1.0)],
            vec![(self.ivm(b.t), 1.0)],
            vec![(self.iva(b.f), 1.0), (self.iva(b.t), -1.0)],
        ]
    }

    fn local_args(&self, x: &[f64], k: usize) -> (f64, f64, f64) {
        let b = &self.br[k];
        (x[self.ivm(b.f)], x[self.ivm(b.t)], x[self.iva(b.f)] - x[self.iva(b.t)])
    }

    fn scatter_grad(map: &[Vec<(usize, f64)>; 3], l: &Local, wgt: f64, col: &mut [f64]) {
        for a in 0..3 {
            for &(ga, sa) in &map[a] {
                col[ga] += wgt * sa * l.grad[a];
            }
        }
    }

    fn scatter_hess(map: &[Vec<(usize, f64)>; 3], hess: &[[f64; 3]; 3], wgt: f64, out: &mut DMatrix<f64>) {
        if wgt == 0.0 {
            return;
        }
        for a in 0..3 {
            for b in 0..3 {
                let v = hess[a][b];
                if v == 0.0 {
                    continue;
                }
                for &(ga, sa) in &map[a] {
                    for &(gb, sb) in &map[b] {
                        out[(ga, gb)] += wgt * sa * sb * v;
                    }
                }
            }
        }
    }

    fn flows(&self, x: &[f64], k: usize) -> [Local; 4] {
        let b = &self.br[k];
        let (u, w, th) = self.local_args(x, k);
        [
            flow_term(&b.p_fr, true, u, w, th),
            flow_term(&b.q_fr, true, u, w, th),
            flow_term(&b.p_to, false, u, w, th),
            flow_term(&b.q_to, false, u, w, th),
        ]
    }

    fn cost(&self, x: &[f64]) -> f64 {
        self.net.generators.iter().enumerate().map(|(g, gen)| gen.cost(x[self.ipg(g)])).sum()
    }

    fn objective(&self, x: &[f64]) -> (f64, DVector<f64>) {
        let mut df = DVector::zeros(self.nx);
        for (g, gen) in self.net.generators.iter().enumerate() {
            df[self.ipg(g)] = self.f_scale * (2.0 * gen.c2 * x[self.ipg(g)] + gen.c1);
        }
        (self.f_scale * self.cost(x), df)
    }

    /// Indices pinned by equal bounds.
    fn fixed(&self) -> Vec<usize> {
        (0..self.nx).filter(|&i| self.hi[i] - self.lo[i] <= 1e-10).collect()
    }

    fn equalities(&self, x: &[f64]) -> Rows {
        let nb = self.nb;
        let fixed = self.fixed();
        let neq = 2 * nb + 1 + fixed.len();
        let mut val = DVector::zeros(neq);
        let mut jac = DMatrix::zeros(self.nx, neq);
        for (i, bus) in self.net.buses.iter().enumerate() {
            let v = x[self.ivm(i)];
            val[i] = -bus.pd - bus.gs * v * v;
            val[nb + i] = -bus.qd + bus.bs * v * v;
            jac[(self.ivm(i), i)] = -2.0 * bus.gs * v;
            jac[(self.ivm(i), nb + i)] = 2.0 * bus.bs * v;
        }
        for g in 0..self.ng {
            let i = self.net.gen_bus_index(g);
            val[i] += x[self.ipg(g)];
            val[nb + i] += x[self.iqg(g)];
            jac[(self.ipg(g), i)] = 1.0;
            jac[(self.iqg(g), nb + i)] = 1.0;
        }
        for k in 0..self.br.len() {
            let map = self.local_map(k);
            let [pf, qf, pt, qt] = self.flows(x, k);
            let (f, t) = (self.br[k].f, self.br[k].t);
            for (row, l) in [(f, &pf), (nb + f, &qf), (t, &pt), (nb + t, &qt)] {
                val[row] -= l.val;
                let mut col = jac.column_mut(row);
                Self::scatter_grad(&map, l, -1.0, col.as_mut_slice());
            }
        }
        let r = 2 * nb;
        val[r] = x[self.iva(self.slack)];
        jac[(self.iva(self.slack), r)] = 1.0;
        for (j, &i) in fixed.iter().enumerate() {
            val[r + 1 + j] = x[i] - self.lo[i];
            jac[(i, r + 1 + j)] = 1.0;
        }
        Rows { val, jac }
    }

    fn n_ineq(&self) -> usize {
        let thermal = self.br.iter().filter(|b| b.rate_sq.is_some()).count();
        let bounds = (0..self.nx)
            .filter(|&i| self.hi[i] - self.lo[i] > 1e-10)
            .map(|i| self.lo[i].is_finite() as usize + self.hi[i].is_finite() as usize)
            .sum::<usize>();
        2 * thermal + 2 * self.br.len() + bounds
    }

    fn inequalities(&self, x: &[f64]) -> Rows {
        let niq = self.n_ineq();
        let mut val = DVector::zeros(niq);
        let mut jac = DMatrix::zeros(self.nx, niq);
        let mut r = 0;
        for k in 0..self.br.len() {
            let Some(rate_sq) = self.br[k].rate_sq else { continue };
            let map = self.local_map(k);
            let [pf, qf, pt, qt] = self.flows(x, k);
            for (p, q) in [(&pf, &qf), (&pt, &qt)] {
                val[r] = p.val * p.val + q.val * q.val - rate_sq;
                let mut col = jac.column_mut(r);
                Self::scatter_grad(&map, p, 2.0 * p.val, col.as_mut_slice());
                Self::scatter_grad(&map, q, 2.0 * q.val, col.as_mut_slice());
                r += 1;
            }
        }
        for (k, b) in self.br.iter().enumerate() {
            let (_, _, th) = self.local_args(x, k);
            val[r] = th - b.angle.1;
            jac[(self.iva(b.f), r)] = 1.0;
            jac[(self.iva(b.t), r)] = -1.0;
            val[r + 1] = b.angle.0 - th;
            jac[(self.iva(b.f), r + 1)] = -1.0;
            jac[(self.iva(b.t), r + 1)] = 1.0;
            r += 2;
        }
        for i in 0..self.nx {
            if self.hi[i] - self.lo[i] <= 1e-10 {
                continue;
            }
            if self.hi[i].is_finite() {
                val[r] = x[i] - self.hi[i];
                jac[(i, r)] = 1.0;
                r += 1;
            }
            if self.lo[i].is_finite() {
                val[r] = self.lo[i] - x[i];
                jac[(i, r)] = -1.0;
                r += 1;
            }
        }
        Rows { val, jac }
    }

    /// Hessian of the Lagrangian `f + lam'g + mu'h`.
    fn lagrangian_hessian(&self, x: &[f64], lam: &DVector<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
        let nb = self.nb;
        let mut hm = DMatrix::zeros(self.nx, self.nx);
        for (g, gen) in self.net.generators.iter().enumerate() {
            hm[(self.ipg(g), self.ipg(g))] += self.f_scale * 2.0 * gen.c2;
        }
        for (i, bus) in self.net.buses.iter().enumerate() {
            hm[(self.ivm(i), self.ivm(i))] += -2.0 * bus.gs * lam[i] + 2.0 * bus.bs * lam[nb + i];
        }
        let mut r = 0;
        for k in 0..self.br.len() {
            let map = self.local_map(k);
            let flows = self.flows(x, k);
            let (f, t) = (self.br[k].f, self.br[k].t);
            for (l, row) in flows.iter().zip([f, nb + f, t, nb + t]) {
                Self::scatter_hess(&map, &l.hess, -lam[row], &mut hm);
            }
            if self.br[k].rate_sq.is_some() {
                for (p, q) in [(&flows[0], &flows[1]), (&flows[2], &flows[3])] {
                    // mu * 2 (grad p grad p' + p hess p + grad q grad q' + q hess q)
                    let mut h = [[0.0; 3]; 3];
                    for a in 0..3 {
                        for b in 0..3 {
                            h[a][b] = 2.0
                                * (p.grad[a] * p.grad[b] + p.val * p.hess[a][b] + q.grad[a] * q.grad[b] + q.val * q.hess[a][b]);
                        }
                    }
                    Self::scatter_hess(&map, &h, mu[r], &mut hm);
                    r += 1;
                }
            }
        }
        hm
    }

    fn start_point(&self, mode: StartMode, seed: Option<&AcPoint>) -> Vec<f64> {
        let mut x = vec![0.0; self.nx];
        let mid = |lo: f64, hi: f64| 0.5 * (lo + hi);
        let slack_va0 = self.net.buses[self.slack].va0;
        for (i, bus) in self.net.buses.iter().enumerate() {
            let (va, vm) = match (mode, seed) {
                (StartMode::Seeded, Some(s)) => (s.va[i], s.vm[i]),
                (StartMode::CaseValues, _) => (bus.va0 - slack_va0, bus.vm0),
                _ => (0.0, 1.0),
            };
            x[self.iva(i)] = va;
            x[self.ivm(i)] = vm;
        }
        for (g, gen) in self.net.generators.iter().enumerate() {
            let (p, q) = match (mode, seed) {
                (StartMode::Seeded, Some(s)) => (s.pg[g], s.qg[g]),
                (StartMode::CaseValues, _) => (gen.pg0, gen.qg0),
                _ => (mid(gen.pmin, gen.pmax), mid(gen.qmin, gen.qmax)),
            };
            x[self.ipg(g)] = p;
            x[self.iqg(g)] = q;
        }
        for i in 0..self.nx {
            if self.lo[i] <= self.hi[i] {
                x[i] = x[i].clamp(self.lo[i], self.hi[i]);
            }
        }
        x
    }

    fn point(&self, x: &[f64]) -> AcPoint {
        let nb = self.nb;
        let ng = self.ng;
        AcPoint {
            va: x[..nb].to_vec(),
            vm: x[nb..2 * nb].to_vec(),
            pg: x[2 * nb..2 * nb + ng].to_vec(),
            qg: x[2 * nb + ng..].to_vec(),
        }
    }

    fn violation(&self, x: &[f64]) -> f64 {
        let g = self.equalities(x).val.amax();
        let h = self.inequalities(x).val.iter().copied().fold(0.0f64, f64::max);
        g.max(h)
    }

    fn solve(&self, x0: Vec<f64>, cfg: &LocalConfig) -> AcSolution {
        let mut x = DVector::from_vec(x0);
        let (mut f, mut df) = self.objective(x.as_slice());
        let mut g = self.equalities(x.as_slice());
        let mut h = self.inequalities(x.as_slice());
        let (neq, niq) = (g.val.len(), h.val.len());
        let mut gamma = 1.0;
        let mut lam = DVector::zeros(neq);
        let mut z = DVector::from_element(niq, cfg.z0);
        let mut mu = z.clone();
        for i in 0..niq {
            if h.val[i] < -cfg.z0 {
                z[i] = -h.val[i];
            }
            if gamma / z[i] > cfg.z0 {
                mu[i] = gamma / z[i];
            }
        }
        let e = DVector::from_element(niq, 1.0);
        let mut lx = &df + &g.jac * &lam + &h.jac * &mu;
        let mut converged = false;
        let mut iters = 0;
        let fail = |x: &DVector<f64>, iters| AcSolution {
            status: Status::Numerical,
            objective: self.cost(x.as_slice()),
            point: self.point(x.as_slice()),
            max_violation: self.violation(x.as_slice()),
            iterations: iters,
        };
        for it in 0..cfg.max_iter {
            iters = it + 1;
            let lxx = self.lagrangian_hessian(x.as_slice(), &lam, &mu);
            let zinv = z.map(|v| 1.0 / v);
            let mut dh_zinv = h.jac.clone();
            for (j, mut c) in dh_zinv.column_iter_mut().enumerate() {
                c *= zinv[j];
            }
            let mut dh_zmu = dh_zinv.clone();
            for (j, mut c) in dh_zmu.column_iter_mut().enumerate() {
                c *= mu[j];
            }
            let m = lxx + &dh_zmu * h.jac.transpose();
            let n = &lx + &dh_zinv * (mu.component_mul(&h.val) + &e * gamma);
            let nx = self.nx;
            let mut kkt = DMatrix::zeros(nx + neq, nx + neq);
            kkt.view_mut((0, 0), (nx, nx)).copy_from(&m);
            kkt.view_mut((0, nx), (nx, neq)).copy_from(&g.jac);
            kkt.view_mut((nx, 0), (neq, nx)).copy_from(&g.jac.transpose());
            let mut rhs = DVector::zeros(nx + neq);
            rhs.rows_mut(0, nx).copy_from(&(-&n));
            rhs.rows_mut(nx, neq).copy_from(&(-&g.val));
            let Some(sol) = kkt.lu().solve(&rhs) else {
                log::debug!("local solve: singular KKT system at iteration {iters}");
                return fail(&x, iters);
            };
            if sol.iter().any(|v| !v.is_finite()) {
                return fail(&x, iters);
            }
            let dx = sol.rows(0, nx).into_owned();
            let dlam = sol.rows(nx, neq).into_owned();
            let dz = -&h.val - &z - h.jac.transpose() * &dx;
            let dmu = -&mu + zinv.component_mul(&(&e * gamma - mu.component_mul(&dz)));
            let step = |v: &DVector<f64>, dv: &DVector<f64>| {
                let mut a: f64 = 1.0;
                for i in 0..v.len() {
                    if dv[i] < 0.0 {
                        a = a.min(cfg.xi * v[i] / -dv[i]);
                    }
                }
                a
            };
            let alphap = step(&z, &dz);
            let alphad = step(&mu, &dmu);
            x += &dx * alphap;
            z += &dz * alphap;
            lam += &dlam * alphad;
            mu += &dmu * alphad;
            if niq > 0 {
                gamma = cfg.sigma * z.dot(&mu) / niq as f64;
            }
            let f0 = f;
            (f, df) = self.objective(x.as_slice());
            g = self.equalities(x.as_slice());
            h = self.inequalities(x.as_slice());
            lx = &df + &g.jac * &lam + &h.jac * &mu;
            let xn = x.amax();
            let znorm = if niq > 0 { z.amax() } else { 0.0 };
            let maxh = h.val.iter().copied().fold(0.0f64, f64::max);
            let feascond = g.val.amax().max(maxh) / (1.0 + xn.max(znorm));
            let gradcond = lx.amax() / (1.0 + lam.amax().max(if niq > 0 { mu.amax() } else { 0.0 }));
            let compcond = z.dot(&mu) / (1.0 + xn);
            let costcond = (f - f0).abs() / (1.0 + f0.abs());
            if !x.iter().all(|v| v.is_finite()) {
                return fail(&x, iters);
            }
            if feascond < cfg.feas_tol && gradcond < cfg.grad_tol && compcond < cfg.comp_tol && costcond < cfg.cost_tol {
                converged = true;
                break;
            }
        }
        let viol = self.violation(x.as_slice());
        let status = if converged && viol <= cfg.feas_tol {
            Status::Optimal
        } else if converged {
            Status::Numerical
        } else {
            Status::IterationLimit
        };
        AcSolution {
            status,
            objective: self.cost(x.as_slice()),
            point: self.point(x.as_slice()),
            max_violation: viol,
            iterations: iters,
        }
    }
}

/// Largest violation of the polar ACOPF constraints at `p`, with the
/// network's own limits.
pub fn ac_violation(net: &Network, p: &AcPoint) -> Result<f64> {
    let prob = Problem::new(net, &VariableBounds::from_network(net))?;
    let x: Vec<f64> = p.va.iter().chain(&p.vm).chain(&p.pg).chain(&p.qg).copied().collect();
    Ok(prob.violation(&x))
}

/// Locally optimal ACOPF point within `bounds`. On failure from the
/// configured start, retries once from the case values.
pub fn solve_local(net: &Network, bounds: &VariableBounds, start: Option<&AcPoint>, cfg: &LocalConfig) -> Result<AcSolution> {
    let prob = Problem::new(net, bounds)?;
    let mode = if start.is_some() { StartMode::Seeded } else { cfg.start };
    let first = prob.solve(prob.start_point(mode, start), cfg);
    if first.is_feasible() || mode == StartMode::CaseValues {
        return Ok(first);
    }
    log::debug!("local solve from {mode:?} ended with {:?}; retrying from case values", first.status);
    let second = prob.solve(prob.start_point(StartMode::CaseValues, None), cfg);
    Ok(if second.is_feasible() || second.max_violation < first.max_violation { second } else { first })
}

/// Shrinks `bounds` to the partitions selected by the binaries of `lower`.
///
/// A voltage partition bounds `vm` directly. A `sin` partition `[s1, s2]`
/// bounds the angle difference to `[asin s1, asin s2]`. A `cos` partition
/// `[c1, c2]` bounds `|theta|` to `[acos c2, acos c1]`, on the side of zero
/// where the relaxation placed the angle. Returns `None` when the induced
/// angle interval is empty.
pub fn restrict_bounds(
    bounds: &VariableBounds,
    lower: &Solution,
    qc: &QcModel,
    parts: &PartitionScheme,
) -> Option<VariableBounds> {
    let mut out = bounds.clone();
    let active = |var: PartitionVar, d: &Discretization| -> (f64, f64) {
        match qc.z.get(&var) {
            Some(z) if !z.is_empty() => {
                let p = (0..z.len()).max_by(|&a, &b| lower.value(z[a]).total_cmp(&lower.value(z[b]))).unwrap();
                d.partition(p)
            }
            _ => (d.lo(), d.hi()),
        }
    };
    for (&var, d) in parts {
        let (a, b) = active(var, d);
        match var {
            PartitionVar::Voltage(i) => {
                out.v[i].lo = out.v[i].lo.max(a);
                out.v[i].hi = out.v[i].hi.min(b);
            }
            PartitionVar::Sin(k) => {
                out.theta[k].lo = out.theta[k].lo.max(a.clamp(-1.0, 1.0).asin());
                out.theta[k].hi = out.theta[k].hi.min(b.clamp(-1.0, 1.0).asin());
            }
            PartitionVar::Cos(k) => {
                let (inner, outer) = (b.clamp(-1.0, 1.0).acos(), a.clamp(-1.0, 1.0).acos());
                let td = lower.value(qc.branches[k].td);
                let (lo, hi) = if inner <= 0.0 {
                    (-outer, outer)
                } else if td >= 0.0 {
                    (inner, outer)
                } else {
                    (-outer, -inner)
                };
                out.theta[k].lo = out.theta[k].lo.max(lo);
                out.theta[k].hi = out.theta[k].hi.min(hi);
            }
        }
    }
    let ok = out.v.iter().chain(&out.theta).all(|b| b.lo <= b.hi + 1e-12);
    if !ok {
        return None;
    }
    for b in out.v.iter_mut().chain(out.theta.iter_mut()) {
        if b.lo > b.hi {
            b.hi = b.lo;
        }
    }
    out.recompute_trig();
    Some(out)
}

/// Local solve restricted to the partitions active in `lower`, seeded at
/// the relaxation's voltages and dispatch.
pub fn solve_local_restricted(
    net: &Network,
    bounds: &VariableBounds,
    lower: &Solution,
    qc: &QcModel,
    parts: &PartitionScheme,
    cfg: &LocalConfig,
) -> Result<AcSolution> {
    let seed = AcPoint {
        va: qc.va.iter().map(|&v| lower.value(v)).collect(),
        vm: qc.vm.iter().map(|&v| lower.value(v)).collect(),
        pg: qc.pg.iter().map(|&v| lower.value(v)).collect(),
        qg: qc.qg.iter().map(|&v| lower.value(v)).collect(),
    };
    let Some(restricted) = restrict_bounds(bounds, lower, qc, parts) else {
        return Ok(AcSolution {
            status: Status::Infeasible,
            objective: f64::INFINITY,
            point: seed,
            max_violation: f64::INFINITY,
            iterations: 0,
        });
    };
    let prob = Problem::new(net, &restricted)?;
    let sol = prob.solve(prob.start_point(StartMode::Seeded, Some(&seed)), cfg);
    if sol.is_feasible() {
        return Ok(sol);
    }
    let retry = prob.solve(prob.start_point(StartMode::Flat, None), cfg);
    Ok(if retry.is_feasible() { retry } else { sol })
}
