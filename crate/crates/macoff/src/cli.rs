//! Command-line entry points: solve one scenario, run an experiment sweep,
//! or run the verification audit. The `macoff` binary is a thin wrapper
//! around [`run`].

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::audit::{run_audit, AuditConfig};
use crate::binary::{self, RoundingMode};
use crate::error::SolveError;
use crate::fullma;
use crate::model::{local_energy_dvs, Scenario, UserEnergy};
use crate::sim::{self, ExperimentSpec, RunOptions, SchemeSpec, SolverKind};
use crate::tdma;

const EXIT_AUDIT_FAILED: u8 = 1;
const EXIT_INVALID_INPUT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_SOLVER_STALL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "macoff",
    about = "Minimum-energy uplink resource allocation for computational offloading",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario file with one scheme.
    Solve(SolveArgs),
    /// Run an experiment sweep and write rows + summary CSV.
    Sweep(SweepArgs),
    /// Run the brute-force verification suites.
    Audit(AuditArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Scheme, e.g. fullma-greedy, tdma-partial, no-offloading.
    #[arg(long)]
    scheme: SchemeSpec,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized rounding.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short, default_value_t = false)]
    quiet: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment spec JSON file.
    #[arg(long)]
    spec: PathBuf,
    /// Rows CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Summary CSV path; defaults to <out stem>_summary.csv.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = auto); overrides MACOFF_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Record wall-clock times (makes the CSV non-reproducible).
    #[arg(long, default_value_t = false)]
    timing: bool,
    #[arg(long, short, default_value_t = false)]
    quiet: bool,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Instances per suite; 0 is a no-op.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Perturb solver outputs to exercise the failure path.
    #[arg(long, hide = true, default_value_t = 0.0)]
    inject_perturbation: f64,
    #[arg(long, short, default_value_t = false)]
    quiet: bool,
}

/// Parses `argv` and runs the selected command.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version through this path as well
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INVALID_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Audit(args) => cmd_audit(args),
    }
}

fn fail(code: u8, kind: &str, message: String) -> ExitCode {
    println!(
        "{}",
        serde_json::json!({ "error": kind, "message": message })
    );
    ExitCode::from(code)
}

fn error_exit(e: SolveError) -> ExitCode {
    let (code, kind) = match &e {
        SolveError::InfeasibleUser { .. } | SolveError::Infeasible(_) => {
            (EXIT_INFEASIBLE, "infeasible")
        }
        SolveError::SolverStall { .. } => (EXIT_SOLVER_STALL, "solver-stall"),
        _ => (EXIT_INVALID_INPUT, "invalid-input"),
    };
    fail(code, kind, e.to_string())
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct SolveOutput {
    scheme: String,
    seed: u64,
    config_digest: String,
    offload_set: Vec<usize>,
    iterations: usize,
    allocation: crate::model::Allocation,
    energy: crate::model::EnergyReport,
}

fn cmd_solve(args: SolveArgs) -> ExitCode {
    let raw = match fs::read(&args.scenario) {
        Ok(raw) => raw,
        Err(e) => return fail(EXIT_INVALID_INPUT, "invalid-input", e.to_string()),
    };
    let scenario: Scenario = match serde_json::from_slice(&raw) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INVALID_INPUT, "invalid-input", e.to_string()),
    };
    if let Err(e) = scenario.validate() {
        return error_exit(e);
    }
    let digest = sha256_hex(&raw);
    let _ = &scenario.users;
    let params = &scenario.params;

    let solved: Result<(crate::model::Allocation, crate::model::EnergyReport, usize), SolveError> =
        match args.scheme.apply_equal_latency(&scenario) {
            Ok(scenario_eq) => {
                let users = &scenario_eq.users;
                match args.scheme.solver {
                    SolverKind::NoOffloading => {
                        let per_user: Vec<UserEnergy> = users
                            .iter()
                            .map(|u| UserEnergy {
                                transmit: 0.0,
                                local: local_energy_dvs(u, 0.0),
                            })
                            .collect();
                        Ok((
                            crate::model::Allocation::all_local(users.len()),
                            crate::model::EnergyReport::from_per_user(per_user),
                            0,
                        ))
                    }
                    SolverKind::FullMaGreedy | SolverKind::TdmaGreedy => {
                        let (d, trace) =
                            binary::greedy_binary(users, params, base(args.scheme.solver));
                        Ok((d.allocation, d.energy, trace.iterations.len()))
                    }
                    SolverKind::FullMaExhaustive | SolverKind::TdmaExhaustive => {
                        binary::exhaustive_binary(users, params, base(args.scheme.solver))
                            .map(|d| (d.allocation, d.energy, 0))
                    }
                    SolverKind::FullMaRounding | SolverKind::TdmaRounding => {
                        let d = binary::rounding_binary(
                            users,
                            params,
                            base(args.scheme.solver),
                            RoundingMode::Deterministic,
                            args.seed,
                        );
                        Ok((d.allocation, d.energy, 0))
                    }
                    SolverKind::FullMaRandomizedRounding | SolverKind::TdmaRandomizedRounding => {
                        let d = binary::rounding_binary(
                            users,
                            params,
                            base(args.scheme.solver),
                            RoundingMode::Randomized {
                                draws: users.len().saturating_sub(1),
                            },
                            args.seed,
                        );
                        Ok((d.allocation, d.energy, 0))
                    }
                    SolverKind::FullMaComplete | SolverKind::TdmaComplete => {
                        let set: Vec<usize> = (0..users.len()).collect();
                        binary::solve_complete(base(args.scheme.solver), &set, users, params)
                            .map(|(a, e)| (a, e, 0))
                    }
                    SolverKind::FullMaPartial => {
                        fullma::partial::solve_partial_fullma(users, params, None)
                            .map(|s| (s.allocation, s.energy, s.outer_iterations))
                    }
                    SolverKind::TdmaPartial => {
                        tdma::partial::solve_partial_tdma_detailed(users, params)
                            .map(|s| (s.allocation, s.energy, s.newton_iterations))
                    }
                }
            }
            Err(e) => Err(e),
        };

    let (allocation, energy, iterations) = match solved {
        Ok(t) => t,
        Err(e) => return error_exit(e),
    };
    let offload_set: Vec<usize> = allocation
        .users
        .iter()
        .enumerate()
        .filter(|(_, u)| u.gamma > 0.0)
        .map(|(k, _)| k)
        .collect();
    let output = SolveOutput {
        scheme: args.scheme.label(),
        seed: args.seed,
        config_digest: digest,
        offload_set,
        iterations,
        allocation,
        energy: energy.clone(),
    };
    let text = serde_json::to_string_pretty(&output).expect("serializable output");
    match &args.out {
        Some(path) => {
            if let Err(e) = fs::write(path, text) {
                return fail(EXIT_INVALID_INPUT, "invalid-input", e.to_string());
            }
            if !args.quiet {
                println!(
                    "{} total={:.6e} J tx={:.6e} J local={:.6e} J -> {}",
                    args.scheme.label(),
                    energy.total,
                    energy.transmit_total,
                    energy.local_total,
                    path.display()
                );
            }
        }
        None => println!("{text}"),
    }
    ExitCode::SUCCESS
}

trait EqualLatencyExt {
    fn apply_equal_latency(&self, scenario: &Scenario) -> Result<Scenario, SolveError>;
}

impl EqualLatencyExt for SchemeSpec {
    fn apply_equal_latency(&self, scenario: &Scenario) -> Result<Scenario, SolveError> {
        let mut out = scenario.clone();
        if self.equal_latency {
            let min_latency = out
                .users
                .iter()
                .map(|u| u.latency)
                .fold(f64::INFINITY, f64::min);
            for u in &mut out.users {
                u.latency = min_latency;
            }
        }
        Ok(out)
    }
}

fn base(kind: SolverKind) -> binary::Scheme {
    match kind {
        SolverKind::FullMaGreedy
        | SolverKind::FullMaExhaustive
        | SolverKind::FullMaRounding
        | SolverKind::FullMaRandomizedRounding
        | SolverKind::FullMaComplete
        | SolverKind::FullMaPartial => binary::Scheme::FullMa,
        _ => binary::Scheme::Tdma,
    }
}

fn cmd_sweep(args: SweepArgs) -> ExitCode {
    let raw = match fs::read(&args.spec) {
        Ok(raw) => raw,
        Err(e) => return fail(EXIT_INVALID_INPUT, "invalid-input", e.to_string()),
    };
    let mut spec: ExperimentSpec = match serde_json::from_slice(&raw) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INVALID_INPUT, "invalid-input", e.to_string()),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let canonical = serde_json::to_vec(&spec).expect("spec reserializes");
    let digest = sha256_hex(&canonical);
    let metadata = format!(
        "experiment={} seed={} config_digest={}",
        spec.id, spec.seed, digest
    );

    let opts = RunOptions {
        threads: args.threads,
        timing: args.timing,
    };
    let rows = match sim::run_experiment(&spec, &opts) {
        Ok(rows) => rows,
        Err(e) => return error_exit(e),
    };
    let summary = sim::summarize(&rows);

    if let Err(e) = fs::write(&args.out, sim::rows_to_csv(&rows, &metadata)) {
        return fail(EXIT_INVALID_INPUT, "invalid-input", e.to_string());
    }
    let summary_path = args.summary.clone().unwrap_or_else(|| {
        let stem = args
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sweep".into());
        args.out.with_file_name(format!("{stem}_summary.csv"))
    });
    if let Err(e) = fs::write(&summary_path, sim::summary_to_csv(&summary, &metadata)) {
        return fail(EXIT_INVALID_INPUT, "invalid-input", e.to_string());
    }
    let failed: usize = summary.iter().map(|s| s.n_failed).sum();
    if !args.quiet {
        println!(
            "{} rows, {} failed; rows -> {}, summary -> {}",
            rows.len(),
            failed,
            args.out.display(),
            summary_path.display()
        );
    }
    ExitCode::SUCCESS
}

fn cmd_audit(args: AuditArgs) -> ExitCode {
    let config = AuditConfig {
        seed: args.seed,
        instances: args.instances,
        perturbation: args.inject_perturbation,
    };
    let report = match run_audit(&config) {
        Ok(r) => r,
        Err(e) => return error_exit(e),
    };
    if !args.quiet {
        for check in &report.checks {
            println!(
                "{} {:<26} {}",
                if check.pass { "PASS" } else { "FAIL" },
                check.name,
                check.detail
            );
        }
    }
    if let Some(path) = &args.out {
        let text = serde_json::to_string_pretty(&report).expect("serializable report");
        if let Err(e) = fs::write(path, text) {
            return fail(EXIT_INVALID_INPUT, "invalid-input", e.to_string());
        }
    }
    if report.pass {
        if !args.quiet {
            println!("audit: all {} checks passed", report.checks.len());
        }
        ExitCode::SUCCESS
    } else {
        let failed = report.checks.iter().filter(|c| !c.pass).count();
        println!("audit: {failed} of {} checks failed", report.checks.len());
        ExitCode::from(EXIT_AUDIT_FAILED)
    }
}
