//! Acceptance runner: one PASS/FAIL line per check, non-zero exit on any
//! failure. Long global runs are included; expect several minutes.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

use acopf_gopt::amp::{amp_run, table_gap, tighten_bounds, AmpConfig, ObbtConfig};
use acopf_gopt::envelopes::{mccormick, trilinear_extreme_points, trilinear_lambda_hull, trilinear_recursive_mccormick, EnvelopeBlock, Interval};
use acopf_gopt::localsolver::{solve_local, LocalConfig};
use acopf_gopt::model_ir::{ConstraintId, LinExpr, ModelIR, Objective, VarId};
use acopf_gopt::piecewise::{partition_vars, piecewise_trilinear, Discretization};
use acopf_gopt::qcbuilder::{build_pqc, build_qc_with, PartitionScheme, PartitionVar, TrilinearRelaxation, VariableBounds};
use acopf_gopt::solver::{solve_continuous, solve_mixed_binary, SolveConfig, Status};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LOCAL_REL_TOL: f64 = 1e-3;
const LOCAL_TIME: f64 = 10.0;
const ROOT_TIME: f64 = 60.0;
const SOUND_SAMPLES: usize = 10_000;
const SOUND_TOL: f64 = 1e-9;
const DOMINANCE_BOXES: usize = 1_000;
const EXACT_TOL: f64 = 1e-9;
/// Interior-point objectives are compared at this relative accuracy.
const LP_TOL: f64 = 1e-6;
const ENUM_REL_TOL: f64 = 1e-6;
const MONOTONE_TOL: f64 = 1e-6;
const CHAINS: usize = 20;

struct Report {
    failed: usize,
    total: usize,
}

impl Report {
    fn check(&mut self, criterion: u32, pass: bool, what: impl AsRef<str>) {
        self.total += 1;
        if !pass {
            self.failed += 1;
        }
        println!("[{}] {criterion}: {}", if pass { "PASS" } else { "FAIL" }, what.as_ref());
    }
}

fn local_objective(name: &str) -> (f64, f64) {
    let net = load(name);
    let t = Instant::now();
    let s = solve_local(&net, &VariableBounds::from_network(&net), None, &LocalConfig::default()).unwrap();
    assert!(s.is_feasible(), "{name}: no feasible local point");
    (s.objective, t.elapsed().as_secs_f64())
}

fn root_gap(name: &str, ub: f64, tri: TrilinearRelaxation) -> (f64, f64) {
    let net = load(name);
    let t = Instant::now();
    let qc = build_qc_with(&net, &VariableBounds::from_network(&net), tri).unwrap();
    let s = solve_continuous(&qc.model, &SolveConfig::default());
    assert_eq!(s.status, Status::Optimal, "{name} {tri:?}");
    (100.0 * table_gap(ub, s.objective), t.elapsed().as_secs_f64())
}

fn criteria_1_to_3(r: &mut Report) {
    let refs = [("nesta_case3_lmbd", 5812.64), ("nesta_case5_pjm", 17551.90), ("nesta_case30_ieee", 204.97)];
    let mut ubs = Vec::new();
    for (name, reference) in refs {
        let (obj, secs) = local_objective(name);
        let rel = (obj - reference).abs() / reference;
        r.check(1, rel <= LOCAL_REL_TOL && secs < LOCAL_TIME, format!("local {name}: {obj:.4} (reference {reference}, rel {rel:.1e}) in {secs:.3} s"));
        ubs.push(obj);
    }
    let windows = [(0.66, 1.27), (14.54 - 1.0, 14.54 + 1.0), (15.20 - 1.0, 15.20 + 1.0)];
    let mut conv = Vec::new();
    for ((name, _), (&ub, (lo, hi))) in refs.iter().zip(ubs.iter().zip(windows)) {
        let (gap, secs) = root_gap(name, ub, TrilinearRelaxation::Hull);
        r.check(2, (lo..=hi).contains(&gap) && secs < ROOT_TIME, format!("root QC gap {name}: {gap:.3}% in [{lo:.2}, {hi:.2}] in {secs:.3} s"));
        conv.push(gap);
    }
    let (rmc3, _) = root_gap(refs[0].0, ubs[0], TrilinearRelaxation::RecursiveMcCormick);
    r.check(3, (rmc3 - 1.21).abs() <= 0.3 && rmc3 >= conv[0], format!("recursive McCormick gap nesta_case3_lmbd: {rmc3:.3}% (1.21 +/- 0.3), hull {:.3}%", conv[0]));
    let (rmc30, _) = root_gap(refs[2].0, ubs[2], TrilinearRelaxation::RecursiveMcCormick);
    r.check(3, rmc30 >= conv[2], format!("recursive McCormick gap nesta_case30_ieee: {rmc30:.3}% >= hull {:.3}%", conv[2]));
}

fn amp_check(r: &mut Report, criterion: u32, name: &str, delta: usize, alpha: f64, epsilon: f64, limit: f64) {
    let net = load(name);
    let cfg = AmpConfig { delta, alpha, epsilon, time_limit: Some(limit), ..Default::default() };
    let t = Instant::now();
    let out = amp_run(&net, &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let gap = out.gap();
    r.check(
        criterion,
        gap < epsilon && secs <= limit,
        format!(
            "AMP {name} (delta {delta}, alpha {alpha}): gap {:.4}% (target < {:.2}%), lb {:.4}, ub {:.4}, {} iterations, {:?} in {secs:.1} s",
            100.0 * gap,
            100.0 * epsilon,
            out.lower_bound,
            out.upper.objective,
            out.trace.iterations.len(),
            out.status
        ),
    );
}

fn criteria_4_and_5(r: &mut Report) {
    amp_check(r, 4, "nesta_case3_lmbd", 16, 1.0, 1e-4, 300.0);
    amp_check(r, 4, "nesta_case5_pjm", 6, 1.0, 1e-3, 1800.0);
    for alpha in [0.2, 0.4, 0.6, 0.8, 1.0] {
        amp_check(r, 5, "nesta_case3_lmbd", 16, alpha, 1e-4, 300.0);
    }
}

fn random_box(rng: &mut impl Rng, lo: f64, hi: f64) -> Interval {
    loop {
        let (a, b) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        if (a - b).abs() > 1e-6 {
            return iv(a.min(b), a.max(b));
        }
    }
}

fn random_points(rng: &mut impl Rng, lo: f64, hi: f64) -> Discretization {
    let b = random_box(rng, lo, hi);
    let mut pts = vec![b.lo, b.hi];
    for _ in 0..rng.gen_range(0..4) {
        let p = rng.gen_range(b.lo..b.hi);
        if pts.iter().all(|q| (q - p).abs() > 1e-4) {
            pts.push(p);
        }
    }
    pts.sort_by(f64::total_cmp);
    Discretization::new(pts).unwrap()
}

fn in_box(rng: &mut impl Rng, b: Interval) -> f64 {
    rng.gen_range(b.lo..=b.hi)
}

fn criterion_6(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut run = |label: &str, f: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
        let worst = (0..SOUND_SAMPLES).map(|_| f(&mut rng)).fold(f64::NEG_INFINITY, f64::max);
        r.check(6, worst <= SOUND_TOL, format!("{label}: worst violation {worst:.2e} over {SOUND_SAMPLES} samples"));
    };
    run("quadratic", &mut |g| {
        let b = random_box(g, -2.0, 2.0);
        quad_violation(b, in_box(g, b))
    });
    run("cosine", &mut |g| {
        let b = random_box(g, -FRAC_PI_2, FRAC_PI_2);
        cos_violation(b, in_box(g, b))
    });
    run("sine, interval straddling zero", &mut |g| {
        let b = iv(g.gen_range(-FRAC_PI_2..0.0), g.gen_range(0.0..FRAC_PI_2));
        sin_violation(b, in_box(g, b))
    });
    run("sine, negative interval", &mut |g| {
        let b = random_box(g, -FRAC_PI_2, -1e-3);
        sin_violation(b, in_box(g, b))
    });
    run("sine, positive interval", &mut |g| {
        let b = random_box(g, 1e-3, FRAC_PI_2);
        sin_violation(b, in_box(g, b))
    });
    let tri_box = |g: &mut ChaCha8Rng| [random_box(g, -1.5, 1.5), random_box(g, -1.5, 1.5), random_box(g, -1.0, 1.0)];
    run("trilinear hull", &mut |g| {
        let b = tri_box(g);
        let x = b.map(|bi| in_box(g, bi));
        hull_violation(b, x)
    });
    run("recursive McCormick", &mut |g| {
        let b = tri_box(g);
        let x = b.map(|bi| in_box(g, bi));
        rmc_violation(b, x)
    });
    run("piecewise trilinear", &mut |g| {
        let d = [random_points(g, 0.8, 1.2), random_points(g, 0.8, 1.2), random_points(g, -1.0, 1.0)];
        let x = [0, 1, 2].map(|i| g.gen_range(d[i].lo()..=d[i].hi()));
        pw_trilinear_violation(d, x)
    });
    run("piecewise quadratic", &mut |g| {
        let d = random_points(g, -1.5, 1.5);
        let x = g.gen_range(d.lo()..=d.hi());
        pw_quadratic_violation(d, x)
    });
}

/// Minimizes `c . (x1, x2, x3, xhat)` over a trilinear relaxation.
fn tri_lp(b: [Interval; 3], c: [f64; 4], hull: bool) -> f64 {
    let mut m = ModelIR::new();
    let x = [0, 1, 2].map(|i| m.add_continuous(format!("x{i}"), b[i].lo, b[i].hi).unwrap());
    let p = b[0].mul(&b[1]).mul(&b[2]);
    let xhat = m.add_continuous("xhat", p.lo, p.hi).unwrap();
    if hull {
        trilinear_lambda_hull(&mut m, "h", x, xhat, &trilinear_extreme_points(b[0], b[1], b[2])).unwrap();
    } else {
        trilinear_recursive_mccormick(&mut m, "r", x, xhat, b).unwrap();
    }
    let vars = [x[0], x[1], x[2], xhat];
    m.set_objective(Objective::linear(vars.iter().zip(c).fold(LinExpr::new(), |e, (&v, a)| e.term(v, a)))).unwrap();
    let s = solve_continuous(&m, &SolveConfig::default());
    assert_eq!(s.status, Status::Optimal);
    s.objective
}

fn criterion_7(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut contain, mut range, mut lp, mut hull_exact) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut strict = 0;
    for _ in 0..DOMINANCE_BOXES {
        let b = [random_box(&mut rng, -1.5, 1.5), random_box(&mut rng, -1.5, 1.5), random_box(&mut rng, -1.0, 1.0)];
        // Every hull vertex lies in recursive McCormick, hence the hull does.
        let eps = trilinear_extreme_points(b[0], b[1], b[2]);
        for v in eps.points {
            contain = contain.max(rmc_violation(b, v));
        }
        // Exact ranges of xhat at a random point.
        let x = b.map(|bi| in_box(&mut rng, bi));
        let (h_lo, h_hi, _) = hull_range_exact(b, x).unwrap();
        let (r_lo, r_hi) = rmc_range(b, x);
        range = range.max(r_lo - h_lo).max(h_hi - r_hi);
        if r_lo < h_lo - 1e-6 || r_hi > h_hi + 1e-6 {
            strict += 1;
        }
        // Paired LPs along a random direction; the hull optimum is also
        // checked against the best vertex.
        let c = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
        let (h, m) = (tri_lp(b, c, true), tri_lp(b, c, false));
        let scale = 1.0 + h.abs();
        lp = lp.max((m - h) / scale);
        let vertex = (0..8)
            .map(|k| c[0] * eps.points[k][0] + c[1] * eps.points[k][1] + c[2] * eps.points[k][2] + c[3] * eps.values[k])
            .fold(f64::INFINITY, f64::min);
        hull_exact = hull_exact.max((h - vertex).abs() / scale);
    }
    r.check(7, contain <= EXACT_TOL, format!("hull vertices inside recursive McCormick on {DOMINANCE_BOXES} boxes: worst violation {contain:.2e}"));
    r.check(7, range <= EXACT_TOL, format!("exact xhat range of the hull inside recursive McCormick: worst excess {range:.2e}; strictly tighter on {strict} of {DOMINANCE_BOXES} points"));
    r.check(7, lp <= LP_TOL && hull_exact <= LP_TOL, format!("paired LPs: recursive McCormick optimum never above the hull (worst {lp:.2e}); hull LP vs vertex enumeration {hull_exact:.2e}"));

    let mut worst = 0.0f64;
    let mut lp_worst = 0.0f64;
    for i in 0..DOMINANCE_BOXES {
        let b1 = random_box(&mut rng, -1.5, 1.5);
        let b2 = random_box(&mut rng, -1.5, 1.5);
        let x = [in_box(&mut rng, b1), in_box(&mut rng, b2)];
        let (h_lo, h_hi, _) = hull_range_exact([b1, b2, iv(1.0, 2.0)], [x[0], x[1], 1.0]).unwrap();
        let (m_lo, m_hi) = mccormick_range(b1, b2, x[0], x[1]);
        worst = worst.max((h_lo - m_lo).abs()).max((h_hi - m_hi).abs());
        if i < 100 {
            lp_worst = lp_worst.max(bilinear_lp_gap(b1, b2, &mut rng));
        }
    }
    r.check(7, worst <= EXACT_TOL, format!("hull with x3 = 1 equals McCormick of x1 x2: worst range difference {worst:.2e}"));
    r.check(7, lp_worst <= LP_TOL, format!("hull with a fixed unit factor vs McCormick model, 100 paired LPs: worst {lp_worst:.2e}"));

    let (ok, detail) = index_sets();
    r.check(7, ok, detail);
}

/// Optimum of a random direction over the hull model with `x3` fixed at 1
/// against the single McCormick model.
fn bilinear_lp_gap(b1: Interval, b2: Interval, rng: &mut impl Rng) -> f64 {
    let c = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
    let solve = |hull: bool| {
        let mut m = ModelIR::new();
        let x1 = m.add_continuous("x1", b1.lo, b1.hi).unwrap();
        let x2 = m.add_continuous("x2", b2.lo, b2.hi).unwrap();
        let p = b1.mul(&b2);
        let w = m.add_continuous("w", p.lo, p.hi).unwrap();
        if hull {
            let x3 = m.add_continuous("x3", 1.0, 1.0).unwrap();
            let eps = trilinear_extreme_points(b1, b2, Interval::point(1.0));
            trilinear_lambda_hull(&mut m, "h", [x1, x2, x3], w, &eps).unwrap();
        } else {
            mccormick(&mut m, &mut EnvelopeBlock::default(), x1, x2, w, b1, b2).unwrap();
        }
        let obj = LinExpr::var(x1).scaled(c[0]).term(x2, c[1]).term(w, c[2]);
        m.set_objective(Objective::linear(obj)).unwrap();
        let s = solve_continuous(&m, &SolveConfig::default());
        assert_eq!(s.status, Status::Optimal);
        s.objective
    };
    let (h, m) = (solve(true), solve(false));
    (h - m).abs() / (1.0 + m.abs())
}

/// Reads the adjacency rows of a two-partition trilinear block back out of
/// the model and compares them with the expected index sets.
fn index_sets() -> (bool, String) {
    let mut m = ModelIR::new();
    let x: Vec<VarId> = (0..3).map(|i| m.add_continuous(format!("x{i}"), 0.0, 2.0).unwrap()).collect();
    let xhat = m.add_continuous("xhat", 0.0, 8.0).unwrap();
    let parts: Vec<_> = (0..3)
        .map(|i| partition_vars(&mut m, &format!("x{i}"), x[i], Discretization::new(vec![0.0, 1.0, 2.0]).unwrap()).unwrap())
        .collect();
    let blk = piecewise_trilinear(&mut m, "t", [&parts[0], &parts[1], &parts[2]], xhat).unwrap();
    let lam_index = |v: VarId| blk.lambda.iter().position(|&l| l == v).map(|p| p + 1);
    let mut rows: Vec<(BTreeSet<(usize, usize)>, BTreeSet<usize>)> = Vec::new();
    for &id in &blk.constraints {
        let ConstraintId::Linear(i) = id else { continue };
        let row = &m.linear_constraints()[i];
        let zs: BTreeSet<(usize, usize)> = row
            .expr
            .terms
            .iter()
            .filter_map(|&(v, _)| parts.iter().enumerate().find_map(|(d, p)| p.z.iter().position(|&z| z == v).map(|j| (d + 1, j + 1))))
            .collect();
        if zs.is_empty() {
            continue;
        }
        let ks = row.expr.terms.iter().filter_map(|&(v, _)| lam_index(v)).collect();
        rows.push((zs, ks));
    }
    let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<usize>>();
    let zset = |v: &[(usize, usize)]| v.iter().copied().collect::<BTreeSet<(usize, usize)>>();
    // z_{2,1} covers the points with i2 = 1, so it holds 19 = (1, 1, 3) and not
    // 9, which is (1, 3, 1).
    let expected = vec![
        (zset(&[(1, 1)]), set(&[1, 2, 3, 10, 11, 12, 19, 20, 21])),
        (zset(&[(1, 2)]), set(&[7, 8, 9, 16, 17, 18, 25, 26, 27])),
        (zset(&[(2, 1)]), set(&[1, 4, 7, 10, 13, 16, 19, 22, 25])),
        (zset(&[(2, 2)]), set(&[3, 6, 9, 12, 15, 18, 21, 24, 27])),
        (zset(&[(1, 1), (1, 2)]), set(&[4, 5, 6, 13, 14, 15, 22, 23, 24])),
        (zset(&[(2, 1), (2, 2)]), set(&[2, 5, 8, 11, 14, 17, 20, 23, 26])),
        (zset(&[(3, 1)]), (1..=9).collect()),
        (zset(&[(3, 1), (3, 2)]), (10..=18).collect()),
        (zset(&[(3, 2)]), (19..=27).collect()),
    ];
    let missing: Vec<_> = expected.iter().filter(|e| !rows.contains(e)).collect();
    let ok = missing.is_empty() && rows.len() == expected.len();
    (ok, format!("two-partition adjacency rows: {} found, {} expected, {} missing (z_2,1 = {{1,4,...,25}})", rows.len(), expected.len(), missing.len()))
}

fn pqc_enumeration(net: &acopf_gopt::Network, scheme: &PartitionScheme) -> (f64, f64, usize) {
    let bounds = VariableBounds::from_network(net);
    let qc = build_pqc(net, &bounds, scheme).unwrap();
    let cfg = SolveConfig { opt_tol: 1e-9, ..Default::default() };
    let bb = solve_mixed_binary(&qc.model, &cfg);
    assert_eq!(bb.status, Status::Optimal);
    let groups: Vec<Vec<VarId>> = qc.z.values().filter(|z| !z.is_empty()).cloned().collect();
    (bb.objective, enumerate_one_hot(&qc.model, &groups, &cfg), qc.model.binaries().len())
}

fn criterion_8(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = SolveConfig { opt_tol: 1e-9, ..Default::default() };
    let (mut worst, mut count) = (0.0f64, 0);
    while count < 200 {
        let points = [0.8, 0.8, -0.5].map(|lo| {
            let hi = if lo < 0.0 { 0.5 } else { 1.2 };
            let mut p: Vec<f64> = (0..rng.gen_range(0..5)).map(|_| lo + (hi - lo) * rng.gen_range(1..20) as f64 / 20.0).collect();
            p.push(lo);
            p.push(hi);
            p.sort_by(f64::total_cmp);
            p.dedup();
            p
        });
        let spec = PiecewiseSpec { points, objective: [0; 5].map(|_| rng.gen_range(-1.0..1.0)), rhs: rng.gen_range(1.2..2.4) };
        if spec.binaries() > 12 {
            continue;
        }
        count += 1;
        let (m, groups) = spec.build();
        let bb = solve_mixed_binary(&m, &cfg);
        let en = enumerate_one_hot(&m, &groups, &cfg);
        worst = worst.max((bb.objective - en).abs() / en.abs().max(1.0));
    }
    r.check(8, worst <= ENUM_REL_TOL, format!("branch and bound vs enumeration on {count} random piecewise models: worst relative difference {worst:.2e}"));

    for name in ["nesta_case3_lmbd", "nesta_case5_pjm"] {
        let net = load(name);
        let bounds = VariableBounds::from_network(&net);
        let all = PartitionVar::all(&net);
        let mut worst = 0.0f64;
        let mut largest = 0;
        for _ in 0..5 {
            let mut scheme = PartitionScheme::new();
            while scheme.values().map(|d| d.n_partitions()).sum::<usize>() < 9 {
                let v = all[rng.gen_range(0..all.len())];
                let b = bounds.interval(v);
                if b.width() < 1e-6 || scheme.contains_key(&v) {
                    continue;
                }
                let mut pts = vec![b.lo, b.lo + b.width() * rng.gen_range(0.2..0.45), b.lo + b.width() * rng.gen_range(0.55..0.8), b.hi];
                pts.sort_by(f64::total_cmp);
                scheme.insert(v, Discretization::new(pts).unwrap());
            }
            let (bb, en, bins) = pqc_enumeration(&net, &scheme);
            largest = largest.max(bins);
            worst = worst.max((bb - en).abs() / en.abs());
        }
        r.check(8, worst <= ENUM_REL_TOL, format!("branch and bound vs enumeration on 5 partitioned {name} models (up to {largest} binaries): worst relative difference {worst:.2e}"));
    }
}

fn criterion_9(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for name in SMALL_CASES {
        let net = load(name);
        let mut worst = 0.0f64;
        for _ in 0..CHAINS {
            let chain = refinement_chain(&net, &mut rng, 3, 3);
            for w in chain.windows(2) {
                worst = worst.max((w[0] - w[1]) / w[0].abs());
            }
        }
        r.check(9, worst <= MONOTONE_TOL, format!("{CHAINS} refinement chains on {name}: largest relative bound decrease {worst:.2e}"));
    }
    for name in SMALL_CASES {
        let net = load(name);
        let base = VariableBounds::from_network(&net);
        let inc = solve_local(&net, &base, None, &LocalConfig::default()).unwrap();
        let out = tighten_bounds(&net, &base, inc.objective, &ObbtConfig::default(), &SolveConfig::default()).unwrap();
        let v_ok = out.bounds.v.iter().zip(&inc.point.vm).all(|(b, &v)| b.contains(v));
        let t_ok = out.bounds.theta.iter().enumerate().all(|(k, b)| b.contains(inc.point.theta(&net, k)));
        let shrink: f64 = out.bounds.theta.iter().zip(&base.theta).map(|(a, b)| a.width() / b.width()).sum::<f64>() / base.theta.len() as f64;
        r.check(9, v_ok && t_ok, format!("OBBT on {name} keeps the incumbent ({} sweeps, mean angle box {:.1}% of original)", out.rounds, 100.0 * shrink));
    }
}

fn main() {
    let mut r = Report { failed: 0, total: 0 };
    let t = Instant::now();
    criteria_1_to_3(&mut r);
    criterion_6(&mut r);
    criterion_7(&mut r);
    criterion_8(&mut r);
    criterion_9(&mut r);
    criteria_4_and_5(&mut r);
    println!("acceptance: {} of {} checks passed in {:.1} s", r.total - r.failed, r.total, t.elapsed().as_secs_f64());
    if r.failed > 0 {
        std::process::exit(1);
    }
}
