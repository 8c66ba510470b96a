//! Orchestrates the brute-force verification suites: LP-oracle equivalence,
//! constraint-class tightness, grid-oracle comparisons, Hessian
//! positive-semidefiniteness, and quasi-convexity sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fullma::complete::{decode_order, optimal_powers, optimal_rates};
use crate::fullma::partial::{solve_partial_fullma, PartialInstance};
use crate::model::{
    effective_latencies, generate_scenario, CellConfig, Scenario, ScenarioConfig, SystemParams,
    TaskTemplate,
};
use crate::oracle;
use crate::sim::derive_stream_seed;
use crate::tdma::partial::{hessian_psd_check, solve_partial_tdma_detailed, TdmaPartialPoint};

/// Outcome of one verification suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

/// All suite outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

/// Instance counts and seeding for a run.
#[derive(Debug, Clone, Copy)]
pub struct AuditConfig {
    pub seed: u64,
    pub instances: usize,
    /// Relative perturbation injected into the closed-form powers before
    /// the oracle comparisons; non-zero values must make the audit fail.
    pub perturbation: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            seed: 1,
            instances: 100,
            perturbation: 0.0,
        }
    }
}

/// Standard heterogeneous task profile used by the audit instances.
pub fn reference_tasks() -> Vec<TaskTemplate> {
    vec![
        TaskTemplate { bits: 2e6, latency: 1.2, chip_constant: 1e-19, downlink_seconds: 0.2 },
        TaskTemplate { bits: 1e6, latency: 1.5, chip_constant: 1e-19, downlink_seconds: 0.2 },
        TaskTemplate { bits: 3e6, latency: 1.8, chip_constant: 1e-19, downlink_seconds: 0.2 },
        TaskTemplate { bits: 4e6, latency: 2.5, chip_constant: 1e-19, downlink_seconds: 0.2 },
    ]
}

/// A reference scenario with `k` users and random channels.
pub fn reference_scenario(k: usize, seed: u64) -> Scenario {
    let config = ScenarioConfig {
        params: SystemParams::default(),
        cell: CellConfig::default(),
        tasks: reference_tasks(),
    };
    generate_scenario(k, &config, seed).expect("reference config is valid")
}

/// Closed-form FullMA energies versus the LP vertex oracle, and the
/// constraint-class tightness structure, over shared random instances with
/// 2..=5 offloading users.
pub fn lp_and_tightness_checks(config: &AuditConfig) -> (CheckResult, CheckResult) {
    #[derive(Default)]
    struct Acc {
        max_rel_gap: f64,
        lp_failures: usize,
        tight_failures: usize,
        n: usize,
    }

    let results: Vec<(f64, bool, bool)> = (0..config.instances)
        .into_par_iter()
        .map(|i| {
            let k = 2 + (i % 4);
            let scenario = reference_scenario(k, derive_stream_seed(config.seed, i as u64));
            let set: Vec<usize> = (0..k).collect();
            let rates = optimal_rates(&set, &scenario.users, &scenario.params)
                .expect("reference budgets are positive");
            let order = decode_order(&set, &rates, &scenario.users, &scenario.params);
            let mut powers =
                optimal_powers(&set, &rates, &order, &scenario.users, &scenario.params)
                    .expect("aggregate rate is in range");
            for p in &mut powers {
                *p *= 1.0 + config.perturbation;
            }
            let closed_form: f64 = set
                .iter()
                .enumerate()
                .map(|(j, &u)| scenario.users[u].bits / rates[j] * powers[j])
                .sum();
            let (_, lp_obj) =
                oracle::lp_min_energy(&set, &rates, &scenario.users, &scenario.params)
                    .expect("LP oracle solves reference instances");
            let rel_gap = (closed_form - lp_obj).abs() / lp_obj;
            let lp_ok = rel_gap <= 1e-9;
            let counts = oracle::class_tightness_audit(
                &set,
                &rates,
                &powers,
                &scenario.users,
                &scenario.params,
            )
            .expect("audit size is in range");
            let tight_ok = counts.iter().all(|&c| c == 1);
            (rel_gap, lp_ok, tight_ok)
        })
        .collect();

    let mut acc = Acc::default();
    for (gap, lp_ok, tight_ok) in results {
        acc.n += 1;
        acc.max_rel_gap = acc.max_rel_gap.max(gap);
        if !lp_ok {
            acc.lp_failures += 1;
        }
        if !tight_ok {
            acc.tight_failures += 1;
        }
    }
    (
        CheckResult::new(
            "lp-oracle-equivalence",
            acc.lp_failures == 0,
            format!(
                "{} instances, max relative gap {:.3e}, {} failures",
                acc.n, acc.max_rel_gap, acc.lp_failures
            ),
        ),
        CheckResult::new(
            "class-tightness",
            acc.tight_failures == 0,
            format!(
                "{} instances, {} with a class count != 1",
                acc.n, acc.tight_failures
            ),
        ),
    )
}

/// TDMA solvers against the grid oracles at one and two users.
pub fn tdma_grid_checks(config: &AuditConfig) -> Result<Vec<CheckResult>> {
    let n = config.instances.min(20).max(1);
    let mut worst_complete = 0.0f64;
    let mut worst_partial = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for i in 0..n {
        for k in 1..=2usize {
            let scenario =
                reference_scenario(k, derive_stream_seed(config.seed ^ 0xD00D, (2 * i + k) as u64));
            let set: Vec<usize> = (0..k).collect();
            let complete =
                crate::tdma::complete::solve_complete_tdma_schedule(&set, &scenario.users, &scenario.params)?;
            let grid = oracle::grid_complete_tdma(&set, &scenario.users, &scenario.params, 100_000)?;
            worst_complete = worst_complete
                .max((complete.energy.total - grid.objective).abs() / grid.objective.max(1e-300));
            worst_kkt = worst_kkt.max(complete.kkt_residual);

            let partial = solve_partial_tdma_detailed(&scenario.users, &scenario.params)?;
            let pgrid = oracle::grid_partial_tdma(&scenario.users, &scenario.params, 100_000)?;
            worst_partial = worst_partial
                .max((partial.energy.total - pgrid.objective).abs() / pgrid.objective.max(1e-300));
            worst_kkt = worst_kkt.max(partial.kkt_residual);
        }
    }
    Ok(vec![
        CheckResult::new(
            "tdma-complete-vs-grid",
            worst_complete <= 1e-3,
            format!("{n} instances x K in {{1,2}}, worst relative gap {worst_complete:.3e}"),
        ),
        CheckResult::new(
            "tdma-partial-vs-grid",
            worst_partial <= 1e-3,
            format!("{n} instances x K in {{1,2}}, worst relative gap {worst_partial:.3e}"),
        ),
        CheckResult::new(
            "tdma-kkt-residual",
            worst_kkt <= 1e-8,
            format!("worst KKT residual {worst_kkt:.3e}"),
        ),
    ])
}

/// Coordinate-descent stationary points against the dense rate grid.
pub fn fullma_partial_grid_check(config: &AuditConfig) -> Result<CheckResult> {
    let n = config.instances.min(20).max(1);
    let mut worst = 0.0f64;
    for i in 0..n {
        for k in 1..=2usize {
            let scenario =
                reference_scenario(k, derive_stream_seed(config.seed ^ 0xF00D, (2 * i + k) as u64));
            let sol = solve_partial_fullma(&scenario.users, &scenario.params, None)?;
            let grid = oracle::grid_partial_fullma(&scenario.users, &scenario.params, 1001)?;
            worst = worst.max((sol.energy.total - grid.objective).abs() / grid.objective.max(1e-300));
        }
    }
    Ok(CheckResult::new(
        "fullma-partial-vs-grid",
        worst <= 5e-3,
        format!("{n} instances x K in {{1,2}}, worst relative gap {worst:.3e}"),
    ))
}

/// Random strictly feasible point of the TDMA split problem.
pub fn random_feasible_split_point(
    scenario: &Scenario,
    rng: &mut impl Rng,
) -> TdmaPartialPoint {
    let params = &scenario.params;
    let users = &scenario.users;
    let n = users.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let la = effective_latencies(&users[a], params).partial;
        let lb = effective_latencies(&users[b], params).partial;
        la.partial_cmp(&lb).unwrap().then(a.cmp(&b))
    });
    let mut durations = Vec::with_capacity(n);
    let mut offloaded = Vec::with_capacity(n);
    for &k in &order {
        let l_bar = effective_latencies(&users[k], params).partial;
        let scale_t: f64 = 0.2 + 0.8 * rng.random::<f64>();
        let scale_b: f64 = 0.2 + 0.8 * rng.random::<f64>();
        durations.push(scale_t * l_bar / (2.0 * (n as f64 + 1.0)) / params.symbol_interval);
        let bits_cap = if params.edge_seconds_per_bit > 0.0 {
            users[k].bits.min(l_bar / (4.0 * params.edge_seconds_per_bit))
        } else {
            users[k].bits
        };
        offloaded.push(scale_b * 0.5 * bits_cap);
    }
    TdmaPartialPoint {
        order,
        offloaded_bits: offloaded,
        durations,
    }
}

/// Hessian PSD structure at random feasible points of four-user instances.
pub fn hessian_psd_points_check(config: &AuditConfig) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xBEEF);
    let mut failures = 0usize;
    let mut worst_fd = 0.0f64;
    let mut worst_eig = 0.0f64;
    for i in 0..config.instances {
        let scenario = reference_scenario(4, derive_stream_seed(config.seed ^ 0xBEEF, i as u64));
        let point = random_feasible_split_point(&scenario, &mut rng);
        let report = hessian_psd_check(&point, &scenario.users, &scenario.params);
        if !report.pass {
            failures += 1;
        }
        let eig_rel = (-report.min_eigenvalue / report.eigen_scale).max(0.0);
        worst_eig = worst_eig.max(eig_rel);
        worst_fd = worst_fd.max(
            report
                .per_user
                .iter()
                .map(|u| u.fd_max_rel_err)
                .fold(0.0, f64::max),
        );
    }
    CheckResult::new(
        "hessian-psd",
        failures == 0,
        format!(
            "{} points, {} failures, worst eigenvalue deficit {:.3e}, worst FD mismatch {:.3e}",
            config.instances, failures, worst_eig, worst_fd
        ),
    )
}

/// Samples the derivative-factor structure of the rate subproblem: the
/// factor's analytic slope must be non-negative over the bracket, and the
/// factor-based derivative must match finite differences of the coordinate
/// objective.
pub fn quasiconvexity_check(
    config: &AuditConfig,
    grid_points: usize,
) -> Result<(CheckResult, CheckResult)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xFACE);
    let mut min_slope_rel = f64::INFINITY;
    let mut worst_fd = 0.0f64;
    let n = config.instances;
    for i in 0..n {
        let scenario = reference_scenario(4, derive_stream_seed(config.seed ^ 0xFACE, i as u64));
        let inst = PartialInstance::new(&scenario.users, &scenario.params)?;
        let k = inst.n_active();
        let rates: Vec<f64> = (0..k)
            .map(|j| {
                let hi = inst.brackets[j].hi.min(crate::fullma::partial::RATE_CAP);
                (0.1 + 0.8 * rng.random::<f64>()) * hi
            })
            .collect();
        let order = inst.sort_order(&rates);
        for pos in 0..k {
            let j = order[pos];
            let (lambda, omega) = inst.coordinate_weights(pos, &rates, &order);
            let hi = inst.brackets[j].hi.min(crate::fullma::partial::RATE_CAP);
            for g in 0..grid_points {
                let r = hi * (g as f64 + 0.5) / grid_points as f64;
                let slope = inst.rate_derivative_factor_slope(j, lambda, omega, r);
                let scale = inst.rate_derivative_factor_scale(j, lambda, omega, r);
                min_slope_rel = min_slope_rel.min(slope / scale);
            }
            // finite differences on a sparser grid
            for g in 0..25 {
                let r = hi * (g as f64 + 0.5) / 25.0;
                let h = 1e-6 * (1.0 + r);
                let f_plus = inst.coordinate_objective(j, lambda, omega, r + h);
                let f_minus = inst.coordinate_objective(j, lambda, omega, r - h);
                let fd = (f_plus - f_minus) / (2.0 * h);
                let tpb = scenario.params.symbol_interval
                    + scenario.params.edge_seconds_per_bit * r;
                let analytic = inst.rate_derivative_factor(j, lambda, omega, r) / (tpb * tpb);
                let scale = inst.rate_derivative_factor_scale(j, lambda, omega, r) / (tpb * tpb);
                let rel = (analytic - fd).abs() / scale.max(analytic.abs()).max(fd.abs());
                worst_fd = worst_fd.max(rel);
            }
        }
    }
    Ok((
        CheckResult::new(
            "rate-factor-monotone",
            min_slope_rel >= -1e-12,
            format!("{n} instances, minimum relative slope {min_slope_rel:.3e}"),
        ),
        CheckResult::new(
            "rate-derivative-vs-fd",
            worst_fd <= 1e-6,
            format!("{n} instances, worst relative mismatch {worst_fd:.3e}"),
        ),
    ))
}

/// Runs every suite.
pub fn run_audit(config: &AuditConfig) -> Result<AuditReport> {
    let mut checks = Vec::new();
    if config.instances == 0 {
        return Ok(AuditReport {
            checks,
            pass: true,
        });
    }
    let (lp, tight) = lp_and_tightness_checks(config);
    checks.push(lp);
    checks.push(tight);
    checks.extend(tdma_grid_checks(config)?);
    checks.push(fullma_partial_grid_check(config)?);
    checks.push(hessian_psd_points_check(config));
    let (mono, fd) = quasiconvexity_check(config, 10_000)?;
    checks.push(mono);
    checks.push(fd);
    let pass = checks.iter().all(|c| c.pass);
    Ok(AuditReport { checks, pass })
}
