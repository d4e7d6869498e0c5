use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use acopf_gopt::amp::{amp_run, tighten_bounds, AmpConfig, ObbtConfig};
use acopf_gopt::localsolver::{solve_local, AcSolution, LocalConfig};
use acopf_gopt::netmodel::parse_matpower_file;
use acopf_gopt::qcbuilder::{build_qc, build_qc_with, TrilinearRelaxation, VariableBounds};
use acopf_gopt::solver::{solve_continuous, SolveConfig, Status};
use acopf_gopt::{Error, Network};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod report;

use report::{ConfigEcho, QcBounds, RunReport, Timings, SCHEMA_VERSION};

const EXIT_INPUT: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "acopf-gopt", version, about = "Bounds and global optimization for AC optimal power flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Local solution and root QC relaxation.
    Qc {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Trilinear::Hull)]
        trilinear: Trilinear,
    },
    /// QC relaxation after optimization-based bound tightening.
    Obbt {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        obbt_rounds: usize,
    },
    /// Full adaptive partitioning pipeline.
    Amp {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        delta: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, default_value_t = 10)]
        obbt_rounds: usize,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// MATPOWER case file.
    case: PathBuf,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Reserved; has no numeric effect.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for bound tightening.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append a CSV row here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Trilinear {
    Hull,
    Rmc,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_)
            | Error::MissingMatrix(_)
            | Error::Validation(_)
            | Error::Unsupported(_)
            | Error::SingularImpedance { .. }
            | Error::UnsupportedBounds { .. }
            | Error::Io(_) => {
                Failure::Input(e.to_string())
            }
            other => Failure::Solver(other.to_string()),
        }
    }
}

fn case_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn load(path: &Path) -> Result<Network, Failure> {
    if !path.is_file() {
        return Err(Failure::Input(format!("case file not found: {}", path.display())));
    }
    parse_matpower_file(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn local(net: &Network, times: &mut Timings) -> Result<AcSolution, Failure> {
    let t = Instant::now();
    let s = solve_local(net, &VariableBounds::from_network(net), None, &LocalConfig::default())?;
    times.local = t.elapsed().as_secs_f64();
    if !s.is_feasible() {
        return Err(Failure::Solver(format!(
            "local solve ended with {:?} (violation {:.2e})",
            s.status, s.max_violation
        )));
    }
    Ok(s)
}

fn relaxation_bound(
    net: &Network,
    bounds: &VariableBounds,
    tri: TrilinearRelaxation,
    cfg: &SolveConfig,
) -> Result<f64, Failure> {
    let qc = build_qc_with(net, bounds, tri)?;
    let s = solve_continuous(&qc.model, cfg);
    if s.status != Status::Optimal {
        return Err(Failure::Solver(format!("relaxation solve ended with {:?}", s.status)));
    }
    Ok(s.objective)
}

fn new_report(command: &str, common: &Common, net: &Network, config: ConfigEcho) -> RunReport {
    RunReport {
        schema_version: SCHEMA_VERSION,
        command: command.to_string(),
        case: case_name(&common.case),
        buses: net.buses.len(),
        branches: net.branches.len(),
        generators: net.generators.len(),
        ac_objective: f64::NAN,
        qc_bound: QcBounds { conv: None, rmc: None },
        obbt_bound: None,
        obbt_rounds: None,
        lower_bound: f64::NAN,
        upper_bound: f64::NAN,
        gap: f64::NAN,
        table_gap: f64::NAN,
        amp_status: None,
        trace: Vec::new(),
        times: Timings::default(),
        config,
    }
}

fn echo(common: &Common) -> ConfigEcho {
    ConfigEcho {
        trilinear: None,
        delta: None,
        alpha: None,
        epsilon: None,
        time_limit: common.time_limit,
        obbt_rounds: None,
        seed: common.seed,
        threads: common.threads,
    }
}

fn solver_config(common: &Common) -> SolveConfig {
    SolveConfig { time_limit: common.time_limit, ..Default::default() }
}

fn obbt_config(common: &Common, rounds: usize) -> ObbtConfig {
    ObbtConfig { max_rounds: rounds, threads: Some(common.threads.max(1)), ..Default::default() }
}

fn run(cmd: &Command) -> Result<(RunReport, &Common), Failure> {
    match cmd {
        Command::Qc { common, trilinear } => {
            let net = load(&common.case)?;
            let tri = match trilinear {
                Trilinear::Hull => TrilinearRelaxation::Hull,
                Trilinear::Rmc => TrilinearRelaxation::RecursiveMcCormick,
            };
            let mut rep = new_report(
                "qc",
                common,
                &net,
                ConfigEcho { trilinear: Some(format!("{trilinear:?}").to_lowercase()), ..echo(common) },
            );
            let ac = local(&net, &mut rep.times)?;
            let t = Instant::now();
            let bound = relaxation_bound(&net, &VariableBounds::from_network(&net), tri, &solver_config(common))?;
            rep.times.qc = t.elapsed().as_secs_f64();
            match tri {
                TrilinearRelaxation::Hull => rep.qc_bound.conv = Some(bound),
                TrilinearRelaxation::RecursiveMcCormick => rep.qc_bound.rmc = Some(bound),
            }
            rep.ac_objective = ac.objective;
            rep.set_bounds(ac.objective, bound);
            Ok((rep, common))
        }
        Command::Obbt { common, obbt_rounds } => {
            let net = load(&common.case)?;
            let mut rep =
                new_report("obbt", common, &net, ConfigEcho { obbt_rounds: Some(*obbt_rounds), ..echo(common) });
            let ac = local(&net, &mut rep.times)?;
            let cfg = solver_config(common);
            let base = VariableBounds::from_network(&net);
            let t = Instant::now();
            let root = relaxation_bound(&net, &base, TrilinearRelaxation::Hull, &cfg)?;
            rep.times.qc = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let out = tighten_bounds(&net, &base, ac.objective, &obbt_config(common, *obbt_rounds), &cfg)?;
            let qc = build_qc(&net, &out.bounds)?;
            let s = solve_continuous(&qc.model, &cfg);
            rep.times.obbt = t.elapsed().as_secs_f64();
            if s.status != Status::Optimal {
                return Err(Failure::Solver(format!("tightened relaxation ended with {:?}", s.status)));
            }
            rep.ac_objective = ac.objective;
            rep.qc_bound.conv = Some(root);
            rep.obbt_bound = Some(s.objective);
            rep.obbt_rounds = Some(out.rounds);
            rep.set_bounds(ac.objective, s.objective.max(root).min(ac.objective));
            Ok((rep, common))
        }
        Command::Amp { common, delta, alpha, epsilon, obbt_rounds } => {
            let net = load(&common.case)?;
            let mut rep = new_report(
                "amp",
                common,
                &net,
                ConfigEcho {
                    delta: Some(*delta),
                    alpha: Some(*alpha),
                    epsilon: Some(*epsilon),
                    obbt_rounds: Some(*obbt_rounds),
                    ..echo(common)
                },
            );
            let cfg = AmpConfig {
                delta: *delta,
                alpha: *alpha,
                epsilon: *epsilon,
                time_limit: common.time_limit,
                obbt: obbt_config(common, *obbt_rounds),
                ..Default::default()
            };
            cfg.validate().map_err(|e| Failure::Input(e.to_string()))?;
            let out = amp_run(&net, &cfg)?;
            rep.ac_objective = out.upper.objective;
            rep.qc_bound.conv = Some(out.root_bound);
            rep.obbt_bound = out.obbt_bound;
            rep.obbt_rounds = Some(out.obbt_rounds);
            rep.amp_status = Some(out.status);
            rep.times = Timings {
                local: out.times.local,
                qc: out.times.root,
                obbt: out.times.obbt,
                amp: out.times.partitioning,
            };
            rep.set_bounds(out.upper.objective, out.lower_bound);
            rep.trace = out.trace.iterations;
            Ok((rep, common))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli.command) {
        Ok((rep, common)) => {
            println!("{}", rep.summary());
            if let Some(path) = &common.out {
                if let Err(e) = rep.write_json(path) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(EXIT_INPUT);
                }
            } else {
                match serde_json::to_string_pretty(&rep) {
                    Ok(s) => println!("{s}"),
                    Err(e) => eprintln!("error: {e}"),
                }
            }
            if let Some(path) = &common.csv {
                if let Err(e) = rep.append_csv(path) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(EXIT_INPUT);
                }
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}
