use serde::Serialize;

use super::Branch;
use crate::{Error, Result};

/// Series admittance and the transformer/charging data needed to write branch flows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmittanceRecord {
    pub g: f64,
    pub b: f64,
    pub tap: f64,
    pub shift: f64,
    /// Line-charging susceptance at each end (half of the total).
    pub b_fr: f64,
    pub b_to: f64,
}

/// Coefficients of one flow component in the lifted voltage products:
/// `flow = sq * W_end + wr * Re(W_ft) + wi * Im(W_ft)`, where `W_end` is the
/// squared magnitude at the flow's own end and `W_ft = V_f conj(V_t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowCoeffs {
    pub sq: f64,
    pub wr: f64,
    pub wi: f64,
}

impl FlowCoeffs {
    pub fn eval(&self, w_end: f64, wr: f64, wi: f64) -> f64 {
        self.sq * w_end + self.wr * wr + self.wi * wi
    }
}

pub fn branch_admittance(branch: &Branch) -> Result<AdmittanceRecord> {
    let den = branch.r * branch.r + branch.x * branch.x;
    if den <= 0.0 {
        return Err(Error::SingularImpedance { from: branch.from_bus, to: branch.to_bus });
    }
    Ok(AdmittanceRecord {
        g: branch.r / den,
        b: -branch.x / den,
        tap: branch.tap,
        shift: branch.shift,
        b_fr: branch.b_ch / 2.0,
        b_to: branch.b_ch / 2.0,
    })
}

impl AdmittanceRecord {
    fn tap_parts(&self) -> (f64, f64, f64) {
        let tr = self.tap * self.shift.cos();
        let ti = self.tap * self.shift.sin();
        (tr, ti, self.tap * self.tap)
    }

    pub fn p_from(&self) -> FlowCoeffs {
        let (tr, ti, tm) = self.tap_parts();
        let (g, b) = (self.g, self.b);
        FlowCoeffs { sq: g / tm, wr: (-g * tr + b * ti) / tm, wi: (-b * tr - g * ti) / tm }
    }

    pub fn q_from(&self) -> FlowCoeffs {
        let (tr, ti, tm) = self.tap_parts();
        let (g, b) = (self.g, self.b);
        FlowCoeffs { sq: -(b + self.b_fr) / tm, wr: (b * tr + g * ti) / tm, wi: (-g * tr + b * ti) / tm }
    }

    pub fn p_to(&self) -> FlowCoeffs {
        let (tr, ti, tm) = self.tap_parts();
        let (g, b) = (self.g, self.b);
        FlowCoeffs { sq: g, wr: -(g * tr + b * ti) / tm, wi: (b * tr - g * ti) / tm }
    }

    pub fn q_to(&self) -> FlowCoeffs {
        let (tr, ti, tm) = self.tap_parts();
        let (g, b) = (self.g, self.b);
        FlowCoeffs { sq: -(b + self.b_to), wr: (b * tr - g * ti) / tm, wi: (g * tr + b * ti) / tm }
    }

    /// Squared tap magnitude; the from-end series voltage is `V_f / tap`.
    pub fn tap_sq(&self) -> f64 {
        self.tap * self.tap
    }
}
