use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use acopf_gopt::amp::{relative_gap, table_gap, AmpIteration, AmpStatus};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct QcBounds {
    pub conv: Option<f64>,
    pub rmc: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub local: f64,
    pub qc: f64,
    pub obbt: f64,
    pub amp: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub trilinear: Option<String>,
    pub delta: Option<usize>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub time_limit: Option<f64>,
    pub obbt_rounds: Option<usize>,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub case: String,
    pub buses: usize,
    pub branches: usize,
    pub generators: usize,
    /// Objective of the best AC-feasible point, $/h.
    pub ac_objective: f64,
    pub qc_bound: QcBounds,
    pub obbt_bound: Option<f64>,
    pub obbt_rounds: Option<usize>,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// `100 (ub - lb) / |lb|`.
    pub gap: f64,
    /// `100 (ub - lb) / |ub|`.
    pub table_gap: f64,
    pub amp_status: Option<AmpStatus>,
    pub trace: Vec<AmpIteration>,
    pub times: Timings,
    pub config: ConfigEcho,
}

impl RunReport {
    pub fn set_bounds(&mut self, ub: f64, lb: f64) {
        self.upper_bound = ub;
        self.lower_bound = lb;
        self.gap = 100.0 * relative_gap(ub, lb);
        self.table_gap = 100.0 * table_gap(ub, lb);
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {}: ub {:.2} lb {:.2} gap {:.2}% (table gap {:.2}%)",
            self.command, self.case, self.upper_bound, self.lower_bound, self.gap, self.table_gap
        )
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }

    /// Appends one row, writing the header first if the file is empty.
    pub fn append_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if f.metadata()?.len() == 0 {
            writeln!(f, "case,command,ac_objective,lower_bound,gap_percent,table_gap_percent,total_seconds")?;
        }
        let t = &self.times;
        writeln!(
            f,
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2}",
            self.case,
            self.command,
            self.ac_objective,
            self.lower_bound,
            self.gap,
            self.table_gap,
            t.local + t.qc + t.obbt + t.amp
        )
    }
}
