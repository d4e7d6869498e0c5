//! Reader and writer for MATPOWER `.m` case files (version 2 column layout).

use std::fmt::Write as _;
use std::path::Path;

use super::{Branch, Bus, BusType, Generator, Network, DEFAULT_ANGLE_LIMIT};
use crate::{Error, Result};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

pub fn parse_matpower_file(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut net = parse_matpower(&text)?;
    if net.name.is_empty() {
        net.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(net)
}

/// Parses MATPOWER case text into a per-unit [`Network`].
///
/// Out-of-service buses, generators and branches are dropped. Angles are
/// converted to radians; angle-difference limits of `0/0` or beyond +/-360
/// degrees are replaced by +/-pi/2.
pub fn parse_matpower(text: &str) -> Result<Network> {
    let clean = strip_comments(text);
    let name = function_name(&clean).unwrap_or_default();
    let base_mva = scalar(&clean, "baseMVA")?.ok_or(Error::MissingMatrix("baseMVA"))?;
    let bus_rows = matrix(&clean, "bus")?.ok_or(Error::MissingMatrix("bus"))?;
    let gen_rows = matrix(&clean, "gen")?.ok_or(Error::MissingMatrix("gen"))?;
    let branch_rows = matrix(&clean, "branch")?.ok_or(Error::MissingMatrix("branch"))?;
    let cost_rows = matrix(&clean, "gencost")?.ok_or(Error::MissingMatrix("gencost"))?;

    check_width(&bus_rows, BUS_COLS, "bus")?;
    check_width(&gen_rows, GEN_COLS, "gen")?;
    check_width(&branch_rows, BRANCH_COLS, "branch")?;
    if cost_rows.len() < gen_rows.len() {
        return Err(Error::Parse(format!(
            "gencost has {} rows but there are {} generators",
            cost_rows.len(),
            gen_rows.len()
        )));
    }

    let mut buses = Vec::with_capacity(bus_rows.len());
    for row in &bus_rows {
        if row[1] as i64 == 4 {
            continue;
        }
        let bus_type = BusType::from_code(row[1])
            .ok_or_else(|| Error::Parse(format!("bus {} has unknown type {}", row[0], row[1])))?;
        buses.push(Bus {
            id: as_id(row[0], "bus")?,
            bus_type,
            pd: row[2] / base_mva,
            qd: row[3] / base_mva,
            gs: row[4] / base_mva,
            bs: row[5] / base_mva,
            vm0: row[7],
            va0: row[8].to_radians(),
            base_kv: row[9],
            vmax: row[11],
            vmin: row[12],
        });
    }
    let live_bus = |id: usize| buses.iter().any(|b| b.id == id);

    let mut generators = Vec::with_capacity(gen_rows.len());
    for (row, cost) in gen_rows.iter().zip(&cost_rows) {
        if row[7] <= 0.0 {
            continue;
        }
        let bus = as_id(row[0], "gen")?;
        if !live_bus(bus) {
            // Generators on isolated buses are out of service.
            if bus_rows.iter().any(|r| r[0] as usize == bus) {
                continue;
            }
        }
        let (c2, c1, c0) = cost_coefficients(cost)?;
        generators.push(Generator {
            bus,
            pg0: row[1] / base_mva,
            qg0: row[2] / base_mva,
            qmax: row[3] / base_mva,
            qmin: row[4] / base_mva,
            pmax: row[8] / base_mva,
            pmin: row[9] / base_mva,
            c2: c2 * base_mva * base_mva,
            c1: c1 * base_mva,
            c0,
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for row in &branch_rows {
        if row[10] <= 0.0 {
            continue;
        }
        let (angmin, angmax) = if row.len() >= 13 {
            angle_limits(row[11], row[12])
        } else {
            (-DEFAULT_ANGLE_LIMIT, DEFAULT_ANGLE_LIMIT)
        };
        branches.push(Branch {
            from_bus: as_id(row[0], "branch")?,
            to_bus: as_id(row[1], "branch")?,
            r: row[2],
            x: row[3],
            b_ch: row[4],
            rate_a: if row[5] > 0.0 { row[5] / base_mva } else { f64::INFINITY },
            tap: if row[8] == 0.0 { 1.0 } else { row[8] },
            shift: row[9].to_radians(),
            angmin,
            angmax,
        });
    }

    Network::new(name, base_mva, buses, branches, generators)
}

fn angle_limits(min_deg: f64, max_deg: f64) -> (f64, f64) {
    if min_deg == 0.0 && max_deg == 0.0 {
        return (-DEFAULT_ANGLE_LIMIT, DEFAULT_ANGLE_LIMIT);
    }
    let lo = if min_deg <= -360.0 { -DEFAULT_ANGLE_LIMIT } else { min_deg.to_radians() };
    let hi = if max_deg >= 360.0 { DEFAULT_ANGLE_LIMIT } else { max_deg.to_radians() };
    (lo, hi)
}

/// Returns (c2, c1, c0) in raw MW units.
fn cost_coefficients(row: &[f64]) -> Result<(f64, f64, f64)> {
    if row.len() < 4 {
        return Err(Error::Parse("gencost row is too short".into()));
    }
    match row[0] as i64 {
        2 => {}
        1 => return Err(Error::Unsupported("piecewise-linear generator costs".into())),
        m => return Err(Error::Parse(format!("unknown gencost model {m}"))),
    }
    let n = row[3] as usize;
    if row.len() < 4 + n {
        return Err(Error::Parse(format!("gencost row declares {n} coefficients but has fewer")));
    }
    let coeffs = &row[4..4 + n];
    // Highest degree first.
    if n > 3 && coeffs[..n - 3].iter().any(|&c| c != 0.0) {
        return Err(Error::Unsupported(format!(
            "polynomial cost of degree {} (only up to quadratic is supported)",
            n - 1
        )));
    }
    let at = |deg: usize| if deg < n { coeffs[n - 1 - deg] } else { 0.0 };
    Ok((at(2), at(1), at(0)))
}

fn as_id(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Parse(format!("{what} row has invalid bus number {v}")))
    }
}

fn check_width(rows: &[Vec<f64>], need: usize, name: &str) -> Result<()> {
    match rows.iter().position(|r| r.len() < need) {
        Some(i) => Err(Error::Parse(format!(
            "{name} row {} has {} columns, expected at least {need}",
            i + 1,
            rows[i].len()
        ))),
        None => Ok(()),
    }
}

fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let mut in_quote = false;
        for ch in line.chars() {
            match ch {
                '\'' => in_quote = !in_quote,
                '%' if !in_quote => break,
                _ => {}
            }
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

fn function_name(text: &str) -> Option<String> {
    let line = text.lines().find(|l| l.trim_start().starts_with("function"))?;
    let rhs = line.split('=').nth(1)?;
    Some(rhs.trim().trim_end_matches(';').trim().to_string())
}

/// Locates `mpc.<name> =` and returns the text after the equals sign.
fn assignment<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    let key = format!("mpc.{name}");
    let mut search = 0;
    while let Some(pos) = text[search..].find(&key) {
        let start = search + pos + key.len();
        let rest = text[start..].trim_start();
        if let Some(stripped) = rest.strip_prefix('=') {
            return Some(stripped);
        }
        search = start;
    }
    None
}

fn scalar(text: &str, name: &str) -> Result<Option<f64>> {
    let Some(rhs) = assignment(text, name) else { return Ok(None) };
    let end = rhs.find(|c| c == ';' || c == '\n').unwrap_or(rhs.len());
    let token = rhs[..end].trim();
    token
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse(format!("cannot parse mpc.{name} value `{token}`")))
}

fn matrix(text: &str, name: &str) -> Result<Option<Vec<Vec<f64>>>> {
    let Some(rhs) = assignment(text, name) else { return Ok(None) };
    let open = rhs
        .find('[')
        .ok_or_else(|| Error::Parse(format!("mpc.{name} is not a matrix literal")))?;
    let close = rhs[open..]
        .find(']')
        .ok_or_else(|| Error::Parse(format!("mpc.{name} matrix is not terminated")))?;
    let body = &rhs[open + 1..open + close];
    let mut rows = Vec::new();
    for raw in body.split(|c| c == ';' || c == '\n') {
        let cells: Vec<&str> = raw
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if cells.is_empty() {
            continue;
        }
        let row = cells
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("mpc.{name}: cannot parse number `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Some(rows))
}

/// Writes a network back to MATPOWER text in MW/degree units.
///
/// Parsing the output reproduces the network field by field.
pub fn write_matpower(net: &Network) -> String {
    let base = net.base_mva;
    let mut s = String::new();
    let name = if net.name.is_empty() { "case" } else { &net.name };
    let _ = writeln!(s, "function mpc = {name}");
    let _ = writeln!(s, "mpc.version = '2';");
    let _ = writeln!(s, "mpc.baseMVA = {:?};", base);
    let _ = writeln!(s, "\n%% bus data\nmpc.bus = [");
    for b in &net.buses {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t1\t{:?}\t{:?}\t{:?}\t1\t{:?}\t{:?};",
            b.id,
            b.bus_type.code(),
            b.pd * base,
            b.qd * base,
            b.gs * base,
            b.bs * base,
            b.vm0,
            b.va0.to_degrees(),
            b.base_kv,
            b.vmax,
            b.vmin
        );
    }
    let _ = writeln!(s, "];\n\n%% generator data\nmpc.gen = [");
    for g in &net.generators {
        let _ = writeln!(
            s,
            "\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t1.0\t{:?}\t1\t{:?}\t{:?};",
            g.bus,
            g.pg0 * base,
            g.qg0 * base,
            g.qmax * base,
            g.qmin * base,
            base,
            g.pmax * base,
            g.pmin * base
        );
    }
    let _ = writeln!(s, "];\n\n%% generator cost data\nmpc.gencost = [");
    for g in &net.generators {
        let _ = writeln!(
            s,
            "\t2\t0\t0\t3\t{:?}\t{:?}\t{:?};",
            g.c2 / (base * base),
            g.c1 / base,
            g.c0
        );
    }
    let _ = writeln!(s, "];\n\n%% branch data\nmpc.branch = [");
    for br in &net.branches {
        let rate = if br.rate_a.is_finite() { br.rate_a * base } else { 0.0 };
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t1\t{:?}\t{:?};",
            br.from_bus,
            br.to_bus,
            br.r,
            br.x,
            br.b_ch,
            rate,
            rate,
            rate,
            br.tap,
            br.shift.to_degrees(),
            br.angmin.to_degrees(),
            br.angmax.to_degrees()
        );
    }
    let _ = writeln!(s, "];");
    s
}
