//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::diagnostics::{
    chain_rule_check, conjugate_oracle, edb_residual, fenchel_young_survey, stress_control_survey, tau_refinement_study,
    DiagnosticsReport, SurveySpec,
};
use crate::io::{refinement_to_csv, serialize_trajectory, RunSummary};
use crate::minimizing_movements::{RunFailure, Trajectory};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIAGNOSTIC_FAILURE: i32 = 1;
pub const EXIT_CONFIG_ERROR: i32 = 2;
pub const EXIT_SOLVER_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vpmm", version, about = "Minimizing-movement viscoplasticity solver and verification suite")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario; writes the trajectory CSV and a summary JSON.
    Run(Common),
    /// Run a scenario and certify it; exits 0 iff every check passes.
    Check(Common),
    /// Run at N, 2N, 4N, ... steps and tabulate Cauchy differences.
    StudyTau {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Survey the Mandel-stress control ratio of the configured material.
    SurveyStress(Common),
    /// Compare the closed-form dual dissipation with brute-force maximization.
    OracleConjugate(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file, or the name of a reference scenario.
    #[arg(long)]
    pub config: String,
    #[arg(long, allow_negative_numbers = true)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Solver(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::SchemaMismatch { .. } | Error::Malformed { .. } => Failure::Config(e.to_string()),
            Error::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let cfg = RunConfig::load(&common.config)?.with_overrides(common.eta, common.steps)?;
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    Ok((cfg, dir))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn execute(cfg: &RunConfig) -> Result<Trajectory, Failure> {
    cfg.execute().map_err(|RunFailure { error, .. }| Failure::from(error))
}

/// Certificates of one trajectory: per-step Fenchel gaps and comparison
/// slack, EDI on every prefix, and for η > 0 the chain rule and balance.
pub fn check_report(cfg: &RunConfig, traj: &Trajectory) -> crate::Result<DiagnosticsReport> {
    let system = cfg.system()?;
    let mut report = DiagnosticsReport::new();
    let n = traj.last_index();
    let steps = format!("steps 1..={n}");
    let rel = |v: f64, e: f64| v / (1.0 + e.abs());
    let recs = &traj.records[1..];
    let gap = recs.iter().map(|r| rel(r.fenchel_gap, r.energy)).fold(0.0, f64::max);
    report.upper("fenchel_gap", "discrete flow rule as a Fenchel equality", gap, 1e-6, steps.clone());
    let slack = recs.iter().map(|r| rel(r.comparison_slack, r.energy)).fold(0.0, f64::min);
    report.lower("comparison_slack", "incremental comparison inequality", slack, -1e-10, steps.clone());
    let edi = traj.edi_prefix_residuals().into_iter().fold(f64::NEG_INFINITY, f64::max);
    report.upper("edi_prefix_residual", "energy-dissipation inequality", edi, cfg.edi_tolerance(traj), "all prefixes");
    let min_det = traj.records.iter().map(|r| r.min_det_p).fold(f64::INFINITY, f64::min);
    report.lower("min_det_P", "plastic strain stays in GL+", min_det, f64::MIN_POSITIVE, "all nodes and steps");

    let chain = chain_rule_check(traj, &system, cfg.eta);
    let scope = format!("{} interior steps, {} excluded for yield switches", chain.defects.len(), chain.excluded.len());
    if chain.guaranteed {
        report.upper("chain_rule_defect", "chain rule for the regularized energy", chain.max_defect, 1e-3, scope);
        let scale = 1.0 + traj.records[0].energy.abs();
        report
            .upper("edb_residual", "energy-dissipation balance", edb_residual(traj), 1e-3 * scale, "all prefixes")
            .note = Some("balance holds exactly only as the time step tends to zero".into());
    } else {
        report.upper("chain_rule_defect", "chain rule", chain.max_defect, f64::MAX, scope).note = Some(chain.label);
    }
    Ok(report)
}

fn cmd_run(common: &Common) -> Result<i32, Failure> {
    let (cfg, dir) = load(common)?;
    let (traj, failure) = match cfg.execute() {
        Ok(t) => (t, None),
        Err(RunFailure { error, partial: Some(t) }) => (t, Some(error)),
        Err(RunFailure { error, .. }) => return Err(error.into()),
    };
    serialize_trajectory(&traj, &dir.join(format!("{}.csv", cfg.name)))?;
    println!("wrote {}", dir.join(format!("{}.csv", cfg.name)).display());
    let summary = RunSummary::new(&cfg.name, &traj, cfg.edi_tolerance(&traj), failure.as_ref().map(Error::to_string));
    write(&dir.join(format!("{}.json", cfg.name)), &summary.to_json())?;
    match failure {
        Some(e) => Err(Failure::Solver(e.to_string())),
        None => Ok(EXIT_OK),
    }
}

fn verdict(report: &DiagnosticsReport) -> i32 {
    print!("{}", report.to_table());
    if report.all_passed() {
        EXIT_OK
    } else {
        EXIT_DIAGNOSTIC_FAILURE
    }
}

fn cmd_check(common: &Common) -> Result<i32, Failure> {
    let (cfg, dir) = load(common)?;
    let traj = execute(&cfg)?;
    let report = check_report(&cfg, &traj)?;
    write(&dir.join(format!("{}_check.json", cfg.name)), &report.to_json())?;
    Ok(verdict(&report))
}

fn cmd_study(common: &Common, levels: usize) -> Result<i32, Failure> {
    if levels < 3 {
        return Err(Failure::Config("study-tau needs at least 3 levels".into()));
    }
    let (cfg, dir) = load(common)?;
    let mesh = cfg.mesh()?;
    let runner = |n: usize| cfg.clone().with_overrides(None, Some(n)).map_err(RunFailure::from)?.execute();
    let table = tau_refinement_study(cfg.time.n_steps, levels, mesh.nodal_weights(), cfg.exponents.p, runner)
        .map_err(|f| Failure::from(f.error))?;
    let text = refinement_to_csv(&table);
    print!("{text}");
    write(&dir.join(format!("{}_tau.csv", cfg.name)), &text)?;
    Ok(if table.monotone_decrease { EXIT_OK } else { EXIT_DIAGNOSTIC_FAILURE })
}

fn cmd_survey(common: &Common) -> Result<i32, Failure> {
    let (cfg, dir) = load(common)?;
    let spec = SurveySpec { seed: cfg.seed, ..SurveySpec::standard(cfg.dim) };
    let survey = stress_control_survey(&cfg.elastic, cfg.exponents.q_f, &spec);
    let mut report = DiagnosticsReport::new();
    let scope = format!("{} states", survey.samples.len());
    report.upper("mandel_ratio", "multiplicative stress control", survey.max_ratio, survey.bound, scope.clone());
    report.upper("variation_c5", "stress variation under N near I", survey.c5, f64::MAX, scope).note =
        Some("empirical constant; finiteness is the check".into());
    write(&dir.join(format!("{}_stress.json", cfg.name)), &report.to_json())?;
    Ok(verdict(&report))
}

fn cmd_conjugate(common: &Common) -> Result<i32, Failure> {
    let (cfg, dir) = load(common)?;
    let dp = cfg.material().dissipation;
    let tol = if dp.p == 2.0 { 1e-8 } else { 1e-6 };
    let mut report = DiagnosticsReport::new();
    let err = conjugate_oracle(&dp, 100, cfg.seed, cfg.dim);
    report.upper("conjugate_error", "closed-form dual dissipation", err, tol, "100 samples");
    let (min_gap, eq) = fenchel_young_survey(&dp, 10_000, cfg.seed, cfg.dim);
    report.lower("fenchel_young_gap", "Fenchel-Young inequality", min_gap, -1e-12, "10000 pairs");
    report.upper("fenchel_young_equality", "Fenchel-Young equality on the subdifferential", eq, 1e-10, "10000 pairs");
    write(&dir.join(format!("{}_conjugate.json", cfg.name)), &report.to_json())?;
    Ok(verdict(&report))
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG_ERROR } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Check(c) => cmd_check(c),
        Command::StudyTau { common, levels } => cmd_study(common, *levels),
        Command::SurveyStress(c) => cmd_survey(c),
        Command::OracleConjugate(c) => cmd_conjugate(c),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG_ERROR
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG_ERROR
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            EXIT_SOLVER_FAILURE
        }
    }
}
