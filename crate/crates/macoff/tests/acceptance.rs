//! Acceptance suite: one test per shipping criterion. Each test prints a
//! PASS line with its measured numbers (visible with `--nocapture`); the
//! harness result line per test is the pass/fail record.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use macoff::audit::{
    self, hessian_psd_points_check, lp_and_tightness_checks, quasiconvexity_check,
    reference_scenario, reference_tasks, AuditConfig,
};
use macoff::binary::{exhaustive_binary, greedy_binary, Scheme};
use macoff::fullma::complete::solve_complete_fullma;
use macoff::fullma::partial::solve_partial_fullma;
use macoff::model::{
    generate_scenario, local_energy_dvs, CellConfig, ScenarioConfig, SystemParams, TaskTemplate,
};
use macoff::oracle;
use macoff::sim::{derive_stream_seed, ExperimentSpec, SweepVariable};
use macoff::tdma::complete::solve_complete_tdma_schedule;
use macoff::tdma::partial::solve_partial_tdma_detailed;

fn dense_cell() -> CellConfig {
    CellConfig {
        radius_m: 300.0,
        min_radius_m: 1.0,
        path_loss_exponent: 3.7,
    }
}

/// 1. Closed-form powers against the LP vertex oracle: 500 instances with
/// 2..=5 offloading users, equality to 1e-9 relative, under 10 s.
#[test]
fn criterion_01_closed_form_matches_lp_oracle() {
    let start = Instant::now();
    let config = AuditConfig {
        seed: 0xABCD,
        instances: 500,
        perturbation: 0.0,
    };
    let (lp, _) = lp_and_tightness_checks(&config);
    let elapsed = start.elapsed();
    assert!(lp.pass, "{}", lp.detail);
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "LP comparison took {elapsed:?}, budget is 10 s"
    );
    println!("ACCEPTANCE 1 PASS: {} in {elapsed:.2?}", lp.detail);
}

/// 2. Vertex structure: exactly one tight capacity constraint per class on
/// the same instance family.
#[test]
fn criterion_02_one_tight_constraint_per_class() {
    let config = AuditConfig {
        seed: 0xABCD,
        instances: 500,
        perturbation: 0.0,
    };
    let (_, tight) = lp_and_tightness_checks(&config);
    assert!(tight.pass, "{}", tight.detail);
    println!("ACCEPTANCE 2 PASS: {}", tight.detail);
}

fn greedy_gaps(seed: u64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let scenario = reference_scenario(8, derive_stream_seed(seed, i as u64));
            let best = exhaustive_binary(&scenario.users, &scenario.params, Scheme::FullMa)
                .expect("K=8 is within the exhaustive guard");
            let (greedy, _) = greedy_binary(&scenario.users, &scenario.params, Scheme::FullMa);
            let all_local: f64 = scenario
                .users
                .iter()
                .map(|u| local_energy_dvs(u, 0.0))
                .sum();
            assert!(
                best.total_energy <= greedy.total_energy * (1.0 + 1e-12),
                "exhaustive above greedy on instance {i}"
            );
            assert!(
                greedy.total_energy <= all_local * (1.0 + 1e-12),
                "greedy above all-local on instance {i}"
            );
            ((greedy.total_energy - best.total_energy) / best.total_energy).max(0.0)
        })
        .collect()
}

/// 3. Greedy vs exhaustive on 100 random 8-user scenarios: ordering chain
/// plus a regression lock of the gap distribution.
#[test]
fn criterion_03_greedy_gap_locked_against_snapshot() {
    let gaps = greedy_gaps(0x6A9, 100);
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let max = gaps.iter().copied().fold(0.0f64, f64::max);

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots/greedy_gap_k8.json");
    if std::env::var_os("MACOFF_UPDATE_SNAPSHOTS").is_some() {
        let doc = serde_json::json!({ "seed": 0x6A9, "n": 100, "mean": mean, "max": max, "gaps": gaps });
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
        println!("ACCEPTANCE 3: snapshot rewritten at {}", path.display());
        return;
    }
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&path).expect("committed snapshot")).unwrap();
    let snap_gaps: Vec<f64> = doc["gaps"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(snap_gaps.len(), gaps.len());
    for (i, (a, b)) in gaps.iter().zip(&snap_gaps).enumerate() {
        assert!(
            (a - b).abs() <= 1e-9 + 1e-9 * b.abs(),
            "gap {i} drifted: {a} vs snapshot {b}"
        );
    }
    let snap_mean = doc["mean"].as_f64().unwrap();
    assert!((mean - snap_mean).abs() <= 1e-9 + 1e-9 * snap_mean.abs());
    println!(
        "ACCEPTANCE 3 PASS: mean relative gap {mean:.3e}, max {max:.3e}, matches snapshot"
    );
}

/// 4. Coordinate-descent convergence: 1000 instances over K in {2,4,8};
/// monotone steps, >= 99% within 10 outer iterations, all within 50.
#[test]
fn criterion_04_coordinate_descent_converges() {
    let mut over10 = 0usize;
    let mut n = 0usize;
    let mut worst = 0usize;
    for (block, &k) in [2usize, 4, 8].iter().enumerate() {
        for i in 0..334 {
            if n == 1000 {
                break;
            }
            let scenario =
                reference_scenario(k, derive_stream_seed(0xC0DE, (block * 1000 + i) as u64));
            let sol = solve_partial_fullma(&scenario.users, &scenario.params, None)
                .expect("reference instances are feasible");
            for w in sol.objective_steps.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0),
                    "objective increased within a sweep"
                );
            }
            assert!(sol.converged, "instance did not converge in 50 iterations");
            if sol.outer_iterations > 10 {
                over10 += 1;
            }
            worst = worst.max(sol.outer_iterations);
            n += 1;
        }
    }
    assert_eq!(n, 1000);
    assert!(
        (over10 as f64) <= 0.01 * n as f64,
        "{over10} of {n} instances needed more than 10 outer iterations"
    );
    println!(
        "ACCEPTANCE 4 PASS: {n} instances, worst {worst} outer iterations, {over10} over 10"
    );
}

/// 5. Rate-subproblem structure: the derivative factor's analytic slope is
/// non-negative on a dense grid, and the factor-based derivative matches
/// finite differences of the reduced objective.
#[test]
fn criterion_05_rate_factor_monotone_and_consistent() {
    let config = AuditConfig {
        seed: 0xFACE,
        instances: 100,
        perturbation: 0.0,
    };
    let (mono, fd) = quasiconvexity_check(&config, 10_000).expect("instances are feasible");
    assert!(mono.pass, "{}", mono.detail);
    assert!(fd.pass, "{}", fd.detail);
    println!("ACCEPTANCE 5 PASS: {}; {}", mono.detail, fd.detail);
}

/// 6. Split-problem Hessian structure at 100 random feasible points.
#[test]
fn criterion_06_hessian_psd() {
    let config = AuditConfig {
        seed: 0xBEEF,
        instances: 100,
        perturbation: 0.0,
    };
    let check = hessian_psd_points_check(&config);
    assert!(check.pass, "{}", check.detail);
    println!("ACCEPTANCE 6 PASS: {}", check.detail);
}

/// 7. Convex-solver correctness: grid-oracle agreement at one and two users
/// (0.1% objective) and KKT residuals at or below 1e-8 up to 32 users.
#[test]
fn criterion_07_tdma_solvers_match_grids_with_certified_kkt() {
    let mut worst_gap = 0.0f64;
    for i in 0..6u64 {
        for k in 1..=2usize {
            let scenario = reference_scenario(k, derive_stream_seed(0x7D0A, 10 * i + k as u64));
            let set: Vec<usize> = (0..k).collect();
            let complete =
                solve_complete_tdma_schedule(&set, &scenario.users, &scenario.params).unwrap();
            let grid =
                oracle::grid_complete_tdma(&set, &scenario.users, &scenario.params, 100_000)
                    .unwrap();
            worst_gap = worst_gap
                .max((complete.energy.total - grid.objective).abs() / grid.objective.max(1e-300));
            let partial = solve_partial_tdma_detailed(&scenario.users, &scenario.params).unwrap();
            let pgrid =
                oracle::grid_partial_tdma(&scenario.users, &scenario.params, 100_000).unwrap();
            worst_gap = worst_gap
                .max((partial.energy.total - pgrid.objective).abs() / pgrid.objective.max(1e-300));
        }
    }
    assert!(worst_gap <= 1e-3, "grid gap {worst_gap:.3e} above 0.1%");

    let mut worst_kkt = 0.0f64;
    for &k in &[2usize, 4, 8, 16, 32] {
        let scenario = reference_scenario(k, derive_stream_seed(0x7D0B, k as u64));
        let set: Vec<usize> = (0..k).collect();
        let complete =
            solve_complete_tdma_schedule(&set, &scenario.users, &scenario.params).unwrap();
        worst_kkt = worst_kkt.max(complete.kkt_residual);
        let partial = solve_partial_tdma_detailed(&scenario.users, &scenario.params).unwrap();
        worst_kkt = worst_kkt.max(partial.kkt_residual);
    }
    assert!(worst_kkt <= 1e-8, "KKT residual {worst_kkt:.3e} above 1e-8");
    println!(
        "ACCEPTANCE 7 PASS: worst grid gap {worst_gap:.3e}, worst KKT residual {worst_kkt:.3e}"
    );
}

/// 8. Scheme ordering. Divisible tasks: FullMA never above TDMA on paired
/// realizations of the four-user reference sweep, and the dense-cell means
/// keep the same order where offloading is common. Indivisible tasks:
/// greedy FullMA mean at or below greedy TDMA mean for 2..=10 users.
#[test]
fn criterion_08_fullma_orders_below_tdma() {
    // paired partial comparison over the reference profile and task scales
    let mut checked = 0usize;
    for &zeta in &[0.5, 1.0, 1.5, 2.0] {
        let tasks: Vec<TaskTemplate> = reference_tasks()
            .into_iter()
            .map(|t| TaskTemplate {
                bits: t.bits * zeta,
                ..t
            })
            .collect();
        let config = ScenarioConfig {
            params: SystemParams::default(),
            cell: CellConfig::default(),
            tasks,
        };
        for i in 0..100 {
            let s = generate_scenario(4, &config, derive_stream_seed(0x08A, i)).unwrap();
            let f = solve_partial_fullma(&s.users, &s.params, None).unwrap();
            let t = solve_partial_tdma_detailed(&s.users, &s.params).unwrap();
            assert!(
                f.energy.total <= t.energy.total + 1e-9 * t.energy.total.max(1.0),
                "FullMA {} above TDMA {} at zeta {zeta}, realization {i}",
                f.energy.total,
                t.energy.total
            );
            checked += 1;
        }
    }

    // dense cell: offloading engages; compare means per realization batch
    let dense = ScenarioConfig {
        params: SystemParams::default(),
        cell: dense_cell(),
        tasks: vec![TaskTemplate {
            bits: 4e6,
            latency: 2.0,
            chip_constant: 1e-19,
            downlink_seconds: 0.2,
        }],
    };
    let mut sum_f = 0.0;
    let mut sum_t = 0.0;
    for i in 0..100 {
        let s = generate_scenario(4, &dense, derive_stream_seed(0x08B, i)).unwrap();
        sum_f += solve_partial_fullma(&s.users, &s.params, None)
            .unwrap()
            .energy
            .total;
        sum_t += solve_partial_tdma_detailed(&s.users, &s.params)
            .unwrap()
            .energy
            .total;
    }
    assert!(
        sum_f <= sum_t * (1.0 + 1e-12),
        "dense-cell FullMA mean {sum_f} above TDMA mean {sum_t}"
    );

    // indivisible tasks on the uniform profile, 2..=10 users
    let uniform = ScenarioConfig {
        params: SystemParams::default(),
        cell: CellConfig::default(),
        tasks: vec![TaskTemplate {
            bits: 6e6,
            latency: 2.0,
            chip_constant: 1e-19,
            downlink_seconds: 0.2,
        }],
    };
    for k in 2..=10usize {
        let mut mean_f = 0.0;
        let mut mean_t = 0.0;
        for i in 0..30u64 {
            let s =
                generate_scenario(k, &uniform, derive_stream_seed(0x08C, k as u64 * 100 + i))
                    .unwrap();
            let (df, _) = greedy_binary(&s.users, &s.params, Scheme::FullMa);
            let (dt, _) = greedy_binary(&s.users, &s.params, Scheme::Tdma);
            mean_f += df.total_energy / 30.0;
            mean_t += dt.total_energy / 30.0;
        }
        assert!(
            mean_f <= mean_t * (1.0 + 1e-12),
            "greedy FullMA mean {mean_f} above TDMA mean {mean_t} at K={k}"
        );
    }
    println!(
        "ACCEPTANCE 8 PASS: {checked} paired partial realizations ordered, dense-cell means {sum_f:.4} <= {sum_t:.4}, greedy means ordered for K=2..=10"
    );
}

/// 9. Heterogeneous-latency benefit: forcing every deadline to the minimum
/// never lowers the optimal binary energy, per realization; the mean ratio
/// is reported.
#[test]
fn criterion_09_equal_latency_costs_more() {
    let mut ratio_sum = 0.0;
    let mut greedy_violations = 0usize;
    for i in 0..100u64 {
        let scenario = reference_scenario(4, derive_stream_seed(0x09A, i));
        let het = exhaustive_binary(&scenario.users, &scenario.params, Scheme::FullMa).unwrap();
        let mut eq_users = scenario.users.clone();
        let lmin = eq_users
            .iter()
            .map(|u| u.latency)
            .fold(f64::INFINITY, f64::min);
        for u in &mut eq_users {
            u.latency = lmin;
        }
        let eq = exhaustive_binary(&eq_users, &scenario.params, Scheme::FullMa).unwrap();
        assert!(
            eq.total_energy >= het.total_energy * (1.0 - 1e-12),
            "equal-latency energy {} below heterogeneous {} on realization {i}",
            eq.total_energy,
            het.total_energy
        );
        ratio_sum += eq.total_energy / het.total_energy;

        let (ghet, _) = greedy_binary(&scenario.users, &scenario.params, Scheme::FullMa);
        let (geq, _) = greedy_binary(&eq_users, &scenario.params, Scheme::FullMa);
        if geq.total_energy < ghet.total_energy * (1.0 - 1e-12) {
            greedy_violations += 1;
        }
    }
    let mean_ratio = ratio_sum / 100.0;
    assert!(mean_ratio > 1.0, "mean ratio {mean_ratio} not above 1");
    assert_eq!(greedy_violations, 0, "greedy ordering violated");
    println!("ACCEPTANCE 9 PASS: mean equal/heterogeneous energy ratio {mean_ratio:.4}");
}

/// 10. Complexity shape: the closed-form solve at 100k users stays under
/// half a second and scales like K log K within a factor of three.
#[test]
fn criterion_10_closed_form_scales_loglinearly() {
    // small tasks keep the aggregate rate inside the power domain
    let config = ScenarioConfig {
        params: SystemParams::default(),
        cell: CellConfig::default(),
        tasks: vec![TaskTemplate {
            bits: 1e3,
            latency: 2.0,
            chip_constant: 1e-19,
            downlink_seconds: 0.2,
        }],
    };
    let mut normalized = Vec::new();
    let mut time_at_100k = 0.0;
    for &k in &[1_000usize, 10_000, 100_000] {
        let scenario = generate_scenario(k, &config, 0x10A).unwrap();
        let set: Vec<usize> = (0..k).collect();
        let mut best = f64::INFINITY;
        for _ in 0..7 {
            let start = Instant::now();
            let (allocation, energy) =
                solve_complete_fullma(&set, &scenario.users, &scenario.params).unwrap();
            let dt = start.elapsed().as_secs_f64();
            best = best.min(dt);
            assert!(energy.total.is_finite());
            assert_eq!(allocation.users.len(), k);
        }
        normalized.push(best / (k as f64 * (k as f64).ln()));
        if k == 100_000 {
            time_at_100k = best;
        }
    }
    assert!(
        time_at_100k < 0.5,
        "100k-user solve took {time_at_100k:.3} s"
    );
    let lo = normalized.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = normalized.iter().copied().fold(0.0f64, f64::max);
    assert!(
        hi / lo <= 3.0,
        "time does not fit c*K*log K within 3x: normalized {normalized:?}"
    );
    println!(
        "ACCEPTANCE 10 PASS: 100k users in {:.1} ms, K log K fit ratio {:.2}",
        time_at_100k * 1e3,
        hi / lo
    );
}

fn sweep_spec() -> ExperimentSpec {
    ExperimentSpec {
        id: "acceptance-sweep".into(),
        schemes: vec![
            "fullma-greedy".parse().unwrap(),
            "fullma-randomized-rounding".parse().unwrap(),
            "tdma-greedy".parse().unwrap(),
            "no-offloading".parse().unwrap(),
            "fullma-partial".parse().unwrap(),
        ],
        sweep: SweepVariable::TaskScale,
        sweep_values: vec![0.5, 1.0],
        n_realizations: 4,
        seed: 0x11A,
        cell: CellConfig {
            radius_m: 300.0,
            min_radius_m: 1.0,
            path_loss_exponent: 3.7,
        },
        params: SystemParams::default(),
        tasks: reference_tasks(),
    }
}

fn run_sweep(dir: &Path, label: &str, threads: &str) -> (Vec<u8>, Vec<u8>) {
    let spec_path = dir.join(format!("spec_{label}.json"));
    fs::write(&spec_path, serde_json::to_string_pretty(&sweep_spec()).unwrap()).unwrap();
    let rows = dir.join(format!("rows_{label}.csv"));
    let summary = dir.join(format!("summary_{label}.csv"));
    let status = Command::new(env!("CARGO_BIN_EXE_macoff"))
        .args([
            "sweep",
            "--spec",
            spec_path.to_str().unwrap(),
            "--out",
            rows.to_str().unwrap(),
            "--summary",
            summary.to_str().unwrap(),
            "--quiet",
        ])
        .env("MACOFF_THREADS", threads)
        .status()
        .expect("binary runs");
    assert!(status.success(), "sweep failed for {label}");
    (fs::read(&rows).unwrap(), fs::read(&summary).unwrap())
}

/// 11. Determinism: a seeded sweep emits byte-identical CSV across repeated
/// runs and across single- vs multi-threaded execution.
#[test]
fn criterion_11_sweep_csv_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (rows_a, summary_a) = run_sweep(dir.path(), "a", "1");
    let (rows_b, summary_b) = run_sweep(dir.path(), "b", "1");
    let (rows_c, summary_c) = run_sweep(dir.path(), "c", "4");
    assert_eq!(rows_a, rows_b, "repeated runs differ");
    assert_eq!(summary_a, summary_b, "repeated summaries differ");
    assert_eq!(rows_a, rows_c, "thread count changes the rows CSV");
    assert_eq!(summary_a, summary_c, "thread count changes the summary CSV");
    let text = String::from_utf8(rows_a).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("experiment,scheme,sweep,"));
    println!(
        "ACCEPTANCE 11 PASS: {} CSV bytes identical across runs and thread counts",
        text.len()
    );
}

/// Path helper shared by the snapshot machinery.
#[allow(dead_code)]
fn snapshot_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots")
}
