//! Monte-Carlo experiment harness: sweeps task scale or user count over
//! seeded channel realizations, runs a set of schemes on paired draws, and
//! emits deterministic CSV.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binary::{self, RoundingMode, Scheme};
use crate::error::{Result, SolveError};
use crate::fullma;
use crate::model::{
    generate_scenario, local_energy_dvs, CellConfig, Scenario, ScenarioConfig, SystemParams,
    TaskTemplate,
};
use crate::tdma;

/// Deterministic per-realization stream seed (splitmix64 of seed ^ index).
pub fn derive_stream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Solver selection for one experiment scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    FullMaGreedy,
    FullMaExhaustive,
    FullMaRounding,
    FullMaRandomizedRounding,
    FullMaComplete,
    FullMaPartial,
    TdmaGreedy,
    TdmaExhaustive,
    TdmaRounding,
    TdmaRandomizedRounding,
    TdmaComplete,
    TdmaPartial,
    NoOffloading,
}

impl SolverKind {
    fn name(self) -> &'static str {
        match self {
            SolverKind::FullMaGreedy => "fullma-greedy",
            SolverKind::FullMaExhaustive => "fullma-exhaustive",
            SolverKind::FullMaRounding => "fullma-rounding",
            SolverKind::FullMaRandomizedRounding => "fullma-randomized-rounding",
            SolverKind::FullMaComplete => "fullma-complete",
            SolverKind::FullMaPartial => "fullma-partial",
            SolverKind::TdmaGreedy => "tdma-greedy",
            SolverKind::TdmaExhaustive => "tdma-exhaustive",
            SolverKind::TdmaRounding => "tdma-rounding",
            SolverKind::TdmaRandomizedRounding => "tdma-randomized-rounding",
            SolverKind::TdmaComplete => "tdma-complete",
            SolverKind::TdmaPartial => "tdma-partial",
            SolverKind::NoOffloading => "no-offloading",
        }
    }
}

/// A solver plus the equal-latency ablation flag. In equal-latency mode
/// every deadline is replaced by the smallest one before solving.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemeSpec {
    pub solver: SolverKind,
    pub equal_latency: bool,
}

impl SchemeSpec {
    pub fn label(&self) -> String {
        if self.equal_latency {
            format!("{}-eqlat", self.solver.name())
        } else {
            self.solver.name().to_string()
        }
    }
}

impl fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl FromStr for SchemeSpec {
    type Err = SolveError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let (base, equal_latency) = match lower.strip_suffix("-eqlat") {
            Some(b) => (b.to_string(), true),
            None => (lower, false),
        };
        // accept an explicit "binary" infix, e.g. fullma-binary-greedy
        let base = base.replace("-binary-", "-");
        let solver = match base.as_str() {
            "fullma-greedy" => SolverKind::FullMaGreedy,
            "fullma-exhaustive" | "fullma-optimal" => SolverKind::FullMaExhaustive,
            "fullma-rounding" => SolverKind::FullMaRounding,
            "fullma-randomized-rounding" => SolverKind::FullMaRandomizedRounding,
            "fullma-complete" => SolverKind::FullMaComplete,
            "fullma-partial" => SolverKind::FullMaPartial,
            "tdma-greedy" => SolverKind::TdmaGreedy,
            "tdma-exhaustive" | "tdma-optimal" => SolverKind::TdmaExhaustive,
            "tdma-rounding" => SolverKind::TdmaRounding,
            "tdma-randomized-rounding" => SolverKind::TdmaRandomizedRounding,
            "tdma-complete" => SolverKind::TdmaComplete,
            "tdma-partial" => SolverKind::TdmaPartial,
            "no-offloading" | "local" => SolverKind::NoOffloading,
            other => {
                return Err(SolveError::InvalidInput(format!(
                    "unknown scheme '{other}'"
                )))
            }
        };
        Ok(SchemeSpec {
            solver,
            equal_latency,
        })
    }
}

impl Serialize for SchemeSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for SchemeSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    /// Scale factor on every task's bit count.
    TaskScale,
    /// Number of users; templates are cycled.
    UserCount,
}

/// Description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub schemes: Vec<SchemeSpec>,
    pub sweep: SweepVariable,
    pub sweep_values: Vec<f64>,
    pub n_realizations: usize,
    pub seed: u64,
    #[serde(default)]
    pub cell: CellConfig,
    #[serde(default)]
    pub params: SystemParams,
    pub tasks: Vec<TaskTemplate>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(SolveError::InvalidInput("no schemes selected".into()));
        }
        if self.n_realizations == 0 {
            return Err(SolveError::InvalidInput(
                "need at least one realization".into(),
            ));
        }
        if self.sweep_values.is_empty() {
            return Err(SolveError::InvalidInput("empty sweep".into()));
        }
        if !self.sweep_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(SolveError::InvalidInput(
                "sweep values must be strictly increasing".into(),
            ));
        }
        if self.sweep == SweepVariable::UserCount {
            for &v in &self.sweep_values {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(SolveError::InvalidInput(format!(
                        "user counts must be positive integers, got {v}"
                    )));
                }
            }
        } else {
            for &v in &self.sweep_values {
                if !(v > 0.0) {
                    return Err(SolveError::InvalidInput(format!(
                        "task scales must be positive, got {v}"
                    )));
                }
            }
        }
        ScenarioConfig {
            params: self.params,
            cell: self.cell,
            tasks: self.tasks.clone(),
        }
        .validate()
    }

    fn scenario_for(&self, sweep_value: f64, realization: usize) -> Result<Scenario> {
        let (n_users, tasks) = match self.sweep {
            SweepVariable::TaskScale => (
                self.tasks.len(),
                self.tasks
                    .iter()
                    .map(|t| TaskTemplate {
                        bits: t.bits * sweep_value,
                        ..*t
                    })
                    .collect::<Vec<_>>(),
            ),
            SweepVariable::UserCount => (sweep_value as usize, self.tasks.clone()),
        };
        let config = ScenarioConfig {
            params: self.params,
            cell: self.cell,
            tasks,
        };
        generate_scenario(
            n_users,
            &config,
            derive_stream_seed(self.seed, realization as u64),
        )
    }
}

/// One (scheme, sweep value, realization) outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub scheme: String,
    pub sweep_value: f64,
    pub realization: usize,
    pub energy_total: f64,
    pub energy_tx: f64,
    pub energy_local: f64,
    pub per_user_energy: Vec<f64>,
    /// Offload fraction per user (1/0 for binary decisions).
    pub offload: Vec<f64>,
    pub iterations: usize,
    pub wall_ms: f64,
    pub error: Option<String>,
}

/// Execution options independent of the experiment definition.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Worker threads; 0 picks the rayon default. Overrides MACOFF_THREADS.
    pub threads: Option<usize>,
    /// Record wall-clock times. Off by default so identical configurations
    /// produce byte-identical CSV.
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            threads: None,
            timing: false,
        }
    }
}

fn thread_count(opts: &RunOptions) -> usize {
    match opts.threads {
        Some(n) => n,
        None => std::env::var("MACOFF_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0),
    }
}

fn solve_one(
    scheme: SchemeSpec,
    scheme_idx: usize,
    scenario: &Scenario,
    timing: bool,
) -> (f64, ResultRowBody) {
    let mut users = scenario.users.clone();
    if scheme.equal_latency {
        let min_latency = users
            .iter()
            .map(|u| u.latency)
            .fold(f64::INFINITY, f64::min);
        for u in &mut users {
            u.latency = min_latency;
        }
    }
    let params = &scenario.params;
    let start = Instant::now();
    let outcome: Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize)> = (|| {
        match scheme.solver {
            SolverKind::NoOffloading => {
                let locals: Vec<f64> = users.iter().map(|u| local_energy_dvs(u, 0.0)).collect();
                let zeros = vec![0.0; users.len()];
                Ok((zeros.clone(), locals, zeros, 0))
            }
            SolverKind::FullMaGreedy | SolverKind::TdmaGreedy => {
                let sch = base_scheme(scheme.solver);
                let (decision, trace) = binary::greedy_binary(&users, params, sch);
                Ok((
                    decision.energy.per_user.iter().map(|e| e.transmit).collect(),
                    decision.energy.per_user.iter().map(|e| e.local).collect(),
                    decision.allocation.users.iter().map(|u| u.gamma).collect(),
                    trace.iterations.len(),
                ))
            }
            SolverKind::FullMaExhaustive | SolverKind::TdmaExhaustive => {
                let sch = base_scheme(scheme.solver);
                let decision = binary::exhaustive_binary(&users, params, sch)?;
                Ok((
                    decision.energy.per_user.iter().map(|e| e.transmit).collect(),
                    decision.energy.per_user.iter().map(|e| e.local).collect(),
                    decision.allocation.users.iter().map(|u| u.gamma).collect(),
                    0,
                ))
            }
            SolverKind::FullMaRounding | SolverKind::TdmaRounding => {
                let sch = base_scheme(scheme.solver);
                let decision = binary::rounding_binary(
                    &users,
                    params,
                    sch,
                    RoundingMode::Deterministic,
                    0,
                );
                Ok((
                    decision.energy.per_user.iter().map(|e| e.transmit).collect(),
                    decision.energy.per_user.iter().map(|e| e.local).collect(),
                    decision.allocation.users.iter().map(|u| u.gamma).collect(),
                    0,
                ))
            }
            SolverKind::FullMaRandomizedRounding | SolverKind::TdmaRandomizedRounding => {
                let sch = base_scheme(scheme.solver);
                let draws = users.len().saturating_sub(1);
                let seed =
                    derive_stream_seed(scenario.seed, 0x0F0F_0000 ^ (scheme_idx as u64 + 1));
                let decision = binary::rounding_binary(
                    &users,
                    params,
                    sch,
                    RoundingMode::Randomized { draws },
                    seed,
                );
                Ok((
                    decision.energy.per_user.iter().map(|e| e.transmit).collect(),
                    decision.energy.per_user.iter().map(|e| e.local).collect(),
                    decision.allocation.users.iter().map(|u| u.gamma).collect(),
                    0,
                ))
            }
            SolverKind::FullMaComplete | SolverKind::TdmaComplete => {
                let sch = base_scheme(scheme.solver);
                let set: Vec<usize> = (0..users.len()).collect();
                let (allocation, report) = binary::solve_complete(sch, &set, &users, params)?;
                Ok((
                    report.per_user.iter().map(|e| e.transmit).collect(),
                    report.per_user.iter().map(|e| e.local).collect(),
                    allocation.users.iter().map(|u| u.gamma).collect(),
                    0,
                ))
            }
            SolverKind::FullMaPartial => {
                let sol = fullma::partial::solve_partial_fullma(&users, params, None)?;
                Ok((
                    sol.energy.per_user.iter().map(|e| e.transmit).collect(),
                    sol.energy.per_user.iter().map(|e| e.local).collect(),
                    sol.allocation.users.iter().map(|u| u.gamma).collect(),
                    sol.outer_iterations,
                ))
            }
            SolverKind::TdmaPartial => {
                let sol = tdma::partial::solve_partial_tdma_detailed(&users, params)?;
                Ok((
                    sol.energy.per_user.iter().map(|e| e.transmit).collect(),
                    sol.energy.per_user.iter().map(|e| e.local).collect(),
                    sol.allocation.users.iter().map(|u| u.gamma).collect(),
                    sol.newton_iterations,
                ))
            }
        }
    })();
    let wall_ms = if timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    match outcome {
        Ok((tx, local, gamma, iterations)) => (
            wall_ms,
            ResultRowBody {
                energy_tx: tx.iter().sum(),
                energy_local: local.iter().sum(),
                per_user_energy: tx.iter().zip(&local).map(|(a, b)| a + b).collect(),
                offload: gamma,
                iterations,
                error: None,
            },
        ),
        Err(e) => (
            wall_ms,
            ResultRowBody {
                energy_tx: f64::NAN,
                energy_local: f64::NAN,
                per_user_energy: Vec::new(),
                offload: Vec::new(),
                iterations: 0,
                error: Some(e.to_string()),
            },
        ),
    }
}

fn base_scheme(kind: SolverKind) -> Scheme {
    match kind {
        SolverKind::FullMaGreedy
        | SolverKind::FullMaExhaustive
        | SolverKind::FullMaRounding
        | SolverKind::FullMaRandomizedRounding
        | SolverKind::FullMaComplete
        | SolverKind::FullMaPartial => Scheme::FullMa,
        _ => Scheme::Tdma,
    }
}

struct ResultRowBody {
    energy_tx: f64,
    energy_local: f64,
    per_user_energy: Vec<f64>,
    offload: Vec<f64>,
    iterations: usize,
    error: Option<String>,
}

/// Runs every (sweep value, realization, scheme) combination. All schemes
/// of one realization share the same channel draw, so comparisons are
/// paired. Realizations run in parallel; the output order and content are
/// independent of the thread count.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.sweep_values.len())
        .flat_map(|sv| (0..spec.n_realizations).map(move |r| (sv, r)))
        .collect();

    let run_jobs = |jobs: &[(usize, usize)]| -> Result<Vec<Vec<ResultRow>>> {
        jobs.par_iter()
            .map(|&(sv_idx, realization)| {
                let sweep_value = spec.sweep_values[sv_idx];
                let scenario = spec.scenario_for(sweep_value, realization)?;
                let mut rows = Vec::with_capacity(spec.schemes.len());
                for (scheme_idx, &scheme) in spec.schemes.iter().enumerate() {
                    let (wall_ms, body) = solve_one(scheme, scheme_idx, &scenario, opts.timing);
                    rows.push(ResultRow {
                        experiment: spec.id.clone(),
                        scheme: scheme.label(),
                        sweep_value,
                        realization,
                        energy_total: body.energy_tx + body.energy_local,
                        energy_tx: body.energy_tx,
                        energy_local: body.energy_local,
                        per_user_energy: body.per_user_energy,
                        offload: body.offload,
                        iterations: body.iterations,
                        wall_ms,
                        error: body.error,
                    });
                }
                Ok(rows)
            })
            .collect()
    };

    let threads = thread_count(opts);
    let nested: Vec<Vec<ResultRow>> = if threads == 0 {
        run_jobs(&jobs)?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| SolveError::InvalidInput(format!("thread pool: {e}")))?;
        pool.install(|| run_jobs(&jobs))?
    };
    Ok(nested.into_iter().flatten().collect())
}

/// Aggregate statistics per (scheme, sweep value).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub scheme: String,
    pub sweep_value: f64,
    pub n: usize,
    pub n_failed: usize,
    pub energy_mean: f64,
    pub energy_stderr: f64,
    pub energy_min: f64,
    pub energy_max: f64,
    pub wall_ms_mean: f64,
    pub iterations_mean: f64,
}

/// Groups rows by (scheme, sweep value), preserving first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for row in rows {
        let key = (row.scheme.clone(), row.sweep_value);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.iter()
        .map(|(scheme, sweep_value)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| &r.scheme == scheme && r.sweep_value == *sweep_value)
                .collect();
            let ok: Vec<&&ResultRow> = group.iter().filter(|r| r.error.is_none()).collect();
            let n = group.len();
            let n_failed = n - ok.len();
            let energies: Vec<f64> = ok.iter().map(|r| r.energy_total).collect();
            let mean = if energies.is_empty() {
                f64::NAN
            } else {
                energies.iter().sum::<f64>() / energies.len() as f64
            };
            let stderr = if energies.len() < 2 {
                0.0
            } else {
                let var = energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
                    / (energies.len() - 1) as f64;
                (var / energies.len() as f64).sqrt()
            };
            SummaryRow {
                experiment: group[0].experiment.clone(),
                scheme: scheme.clone(),
                sweep_value: *sweep_value,
                n,
                n_failed,
                energy_mean: mean,
                energy_stderr: stderr,
                energy_min: energies.iter().copied().fold(f64::INFINITY, f64::min),
                energy_max: energies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                wall_ms_mean: if ok.is_empty() {
                    0.0
                } else {
                    ok.iter().map(|r| r.wall_ms).sum::<f64>() / ok.len() as f64
                },
                iterations_mean: if ok.is_empty() {
                    0.0
                } else {
                    ok.iter().map(|r| r.iterations as f64).sum::<f64>() / ok.len() as f64
                },
            }
        })
        .collect()
}

/// Rows CSV: one metadata comment line, a header, then one line per row.
pub fn rows_to_csv(rows: &[ResultRow], metadata: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {metadata}\n"));
    out.push_str("experiment,scheme,sweep,realization,energy_total,energy_tx,energy_local,wall_ms,iters\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.experiment,
            r.scheme,
            r.sweep_value,
            r.realization,
            r.energy_total,
            r.energy_tx,
            r.energy_local,
            r.wall_ms,
            r.iterations
        ));
    }
    out
}

/// Summary CSV with the same metadata line convention.
pub fn summary_to_csv(rows: &[SummaryRow], metadata: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {metadata}\n"));
    out.push_str(
        "experiment,scheme,sweep,n,n_failed,energy_mean,energy_stderr,energy_min,energy_max,wall_ms_mean,iters_mean\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.experiment,
            r.scheme,
            r.sweep_value,
            r.n,
            r.n_failed,
            r.energy_mean,
            r.energy_stderr,
            r.energy_min,
            r.energy_max,
            r.wall_ms_mean,
            r.iterations_mean
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_user_spec() -> ExperimentSpec {
        ExperimentSpec {
            id: "test".into(),
            schemes: vec![
                "fullma-greedy".parse().unwrap(),
                "no-offloading".parse().unwrap(),
            ],
            sweep: SweepVariable::TaskScale,
            sweep_values: vec![0.5, 1.0],
            n_realizations: 3,
            seed: 11,
            cell: CellConfig::default(),
            params: SystemParams::default(),
            tasks: vec![
                TaskTemplate { bits: 2e6, latency: 1.2, chip_constant: 1e-19, downlink_seconds: 0.2 },
                TaskTemplate { bits: 1e6, latency: 1.5, chip_constant: 1e-19, downlink_seconds: 0.2 },
                TaskTemplate { bits: 3e6, latency: 1.8, chip_constant: 1e-19, downlink_seconds: 0.2 },
                TaskTemplate { bits: 4e6, latency: 2.5, chip_constant: 1e-19, downlink_seconds: 0.2 },
            ],
        }
    }

    #[test]
    fn runs_are_reproducible_and_thread_invariant() {
        let spec = four_user_spec();
        let a = run_experiment(&spec, &RunOptions { threads: Some(1), timing: false }).unwrap();
        let b = run_experiment(&spec, &RunOptions { threads: Some(4), timing: false }).unwrap();
        let csv_a = rows_to_csv(&a, "m");
        let csv_b = rows_to_csv(&b, "m");
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn no_offloading_energy_is_channel_independent() {
        let spec = four_user_spec();
        let rows = run_experiment(&spec, &RunOptions::default()).unwrap();
        let expected_zeta1: f64 = spec
            .tasks
            .iter()
            .map(|t| t.chip_constant / (t.latency * t.latency) * t.bits.powi(3))
            .sum();
        for row in rows
            .iter()
            .filter(|r| r.scheme == "no-offloading" && r.sweep_value == 1.0)
        {
            assert!((row.energy_total - expected_zeta1).abs() < 1e-9 * expected_zeta1);
        }
    }

    #[test]
    fn summary_of_identical_rows_has_zero_stderr() {
        let spec = four_user_spec();
        let rows = run_experiment(&spec, &RunOptions::default()).unwrap();
        let summary = summarize(&rows);
        let nooff: Vec<&SummaryRow> = summary
            .iter()
            .filter(|s| s.scheme == "no-offloading")
            .collect();
        for s in nooff {
            assert!(s.energy_stderr < 1e-12 * s.energy_mean.max(1.0));
            assert_eq!(s.n, 3);
            assert_eq!(s.n_failed, 0);
        }
    }

    #[test]
    fn sweep_values_must_increase() {
        let mut spec = four_user_spec();
        spec.sweep_values = vec![1.0, 0.5];
        assert!(run_experiment(&spec, &RunOptions::default()).is_err());
    }

    #[test]
    fn scheme_labels_round_trip() {
        for label in [
            "fullma-greedy",
            "fullma-exhaustive",
            "tdma-partial-eqlat",
            "no-offloading",
        ] {
            let s: SchemeSpec = label.parse().unwrap();
            assert_eq!(s.label(), label);
        }
        let alias: SchemeSpec = "fullma-binary-greedy".parse().unwrap();
        assert_eq!(alias.label(), "fullma-greedy");
        assert!("warp-drive".parse::<SchemeSpec>().is_err());
    }
}
