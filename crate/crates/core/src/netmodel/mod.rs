//! Per-unit network model and MATPOWER case parsing.

mod admittance;
mod matpower;

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use serde::Serialize;

use crate::{Error, Result};

pub use admittance::{branch_admittance, AdmittanceRecord, FlowCoeffs};
pub use matpower::{parse_matpower, parse_matpower_file, write_matpower};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BusType {
    Pq,
    Pv,
    Slack,
}

impl BusType {
    fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            1 => Some(BusType::Pq),
            2 => Some(BusType::Pv),
            3 => Some(BusType::Slack),
            _ => None,
        }
    }

    fn code(self) -> i64 {
        match self {
            BusType::Pq => 1,
            BusType::Pv => 2,
            BusType::Slack => 3,
        }
    }
}

/// A bus with per-unit demand and shunt, angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bus {
    pub id: usize,
    pub bus_type: BusType,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    pub vmin: f64,
    pub vmax: f64,
    pub vm0: f64,
    pub va0: f64,
    pub base_kv: f64,
}

/// A line or transformer in the standard pi-model.
///
/// `rate_a` is `f64::INFINITY` when the case file carries no thermal limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub b_ch: f64,
    pub tap: f64,
    pub shift: f64,
    pub rate_a: f64,
    pub angmin: f64,
    pub angmax: f64,
}

impl Branch {
    /// Plain line with no charging, tap, thermal limit or angle limit.
    pub fn new(from_bus: usize, to_bus: usize, r: f64, x: f64) -> Self {
        Branch {
            from_bus,
            to_bus,
            r,
            x,
            b_ch: 0.0,
            tap: 1.0,
            shift: 0.0,
            rate_a: f64::INFINITY,
            angmin: -DEFAULT_ANGLE_LIMIT,
            angmax: DEFAULT_ANGLE_LIMIT,
        }
    }

    pub fn has_thermal_limit(&self) -> bool {
        self.rate_a.is_finite()
    }
}

/// Generator with cost coefficients in $/h for output in per-unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generator {
    pub bus: usize,
    pub pg0: f64,
    pub qg0: f64,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl Generator {
    /// Cost in $/h at per-unit output `pg`.
    pub fn cost(&self, pg: f64) -> f64 {
        self.c2 * pg * pg + self.c1 * pg + self.c0
    }
}

/// A validated, immutable per-unit network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    #[serde(skip)]
    bus_lookup: HashMap<usize, usize>,
    #[serde(skip)]
    branch_ends: Vec<(usize, usize)>,
    #[serde(skip)]
    gen_bus: Vec<usize>,
}

impl Network {
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        if !(base_mva > 0.0) {
            return Err(Error::Validation(format!("baseMVA must be positive, got {base_mva}")));
        }
        let mut bus_lookup = HashMap::with_capacity(buses.len());
        for (idx, bus) in buses.iter().enumerate() {
            if bus_lookup.insert(bus.id, idx).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", bus.id)));
            }
            if !(bus.vmin > 0.0 && bus.vmin <= bus.vmax) {
                return Err(Error::Validation(format!(
                    "bus {} has invalid voltage bounds [{}, {}]",
                    bus.id, bus.vmin, bus.vmax
                )));
            }
        }
        let slack_count = buses.iter().filter(|b| b.bus_type == BusType::Slack).count();
        if slack_count != 1 {
            return Err(Error::Validation(format!(
                "expected exactly one slack bus, found {slack_count}"
            )));
        }

        let lookup = |id: usize, what: &str| {
            bus_lookup
                .get(&id)
                .copied()
                .ok_or_else(|| Error::Validation(format!("{what} references unknown bus {id}")))
        };

        let mut branch_ends = Vec::with_capacity(branches.len());
        for br in &branches {
            let f = lookup(br.from_bus, "branch")?;
            let t = lookup(br.to_bus, "branch")?;
            if f == t {
                return Err(Error::Validation(format!("branch {}-{} is a self loop", br.from_bus, br.to_bus)));
            }
            if br.r * br.r + br.x * br.x <= 0.0 {
                return Err(Error::SingularImpedance { from: br.from_bus, to: br.to_bus });
            }
            if !(br.tap > 0.0) {
                return Err(Error::Validation(format!(
                    "branch {}-{} has non-positive tap {}",
                    br.from_bus, br.to_bus, br.tap
                )));
            }
            if !(br.angmin <= br.angmax) {
                return Err(Error::Validation(format!(
                    "branch {}-{} has angmin > angmax",
                    br.from_bus, br.to_bus
                )));
            }
            if br.angmin < -FRAC_PI_2 - 1e-12 || br.angmax > FRAC_PI_2 + 1e-12 {
                return Err(Error::UnsupportedBounds { lo: br.angmin, hi: br.angmax });
            }
            branch_ends.push((f, t));
        }

        let mut gen_bus = Vec::with_capacity(generators.len());
        for g in &generators {
            gen_bus.push(lookup(g.bus, "generator")?);
            if g.pmin > g.pmax || g.qmin > g.qmax {
                return Err(Error::Validation(format!("generator at bus {} has reversed limits", g.bus)));
            }
            if g.c2 < 0.0 {
                return Err(Error::Unsupported(format!(
                    "generator at bus {} has a concave cost (c2 < 0)",
                    g.bus
                )));
            }
        }

        let net = Network {
            name: name.into(),
            base_mva,
            buses,
            branches,
            generators,
            bus_lookup,
            branch_ends,
            gen_bus,
        };
        net.check_connected()?;
        Ok(net)
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.buses.len();
        if n == 0 {
            return Err(Error::Validation("network has no buses".into()));
        }
        let mut adj = vec![Vec::new(); n];
        for &(f, t) in &self.branch_ends {
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(idx) => Err(Error::Validation(format!(
                "bus {} is not connected to the rest of the network",
                self.buses[idx].id
            ))),
            None => Ok(()),
        }
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.bus_lookup.get(&id).copied()
    }

    /// Internal (from, to) bus indices of branch `k`.
    pub fn branch_ends(&self, k: usize) -> (usize, usize) {
        self.branch_ends[k]
    }

    /// Internal bus index of generator `g`.
    pub fn gen_bus_index(&self, g: usize) -> usize {
        self.gen_bus[g]
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.bus_type == BusType::Slack)
            .expect("validated network has a slack bus")
    }

    /// Generators attached to each bus, by internal index.
    pub fn gens_at_bus(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.buses.len()];
        for (g, &b) in self.gen_bus.iter().enumerate() {
            out[b].push(g);
        }
        out
    }

    /// Branch incidence: for each bus, the `(branch, is_from_end)` pairs touching it.
    pub fn incidence(&self) -> Vec<Vec<(usize, bool)>> {
        let mut out = vec![Vec::new(); self.buses.len()];
        for (k, &(f, t)) in self.branch_ends.iter().enumerate() {
            out[f].push((k, true));
            out[t].push((k, false));
        }
        out
    }

    pub fn total_demand(&self) -> (f64, f64) {
        self.buses.iter().fold((0.0, 0.0), |(p, q), b| (p + b.pd, q + b.qd))
    }

    /// Total generation cost in $/h.
    pub fn cost(&self, pg: &[f64]) -> f64 {
        self.generators.iter().zip(pg).map(|(g, &p)| g.cost(p)).sum()
    }
}

pub(crate) const DEFAULT_ANGLE_LIMIT: f64 = FRAC_PI_2;
