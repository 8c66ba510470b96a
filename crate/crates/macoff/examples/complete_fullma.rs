//! Closed-form allocation for a set of completely offloading users on the
//! multiple-access channel: minimum feasible rates, the decode order from
//! the sorted cost coefficients, and the telescoping vertex powers. The
//! result is cross-checked against the brute-force LP vertex oracle.
//!
//! Run with: cargo run --example complete_fullma

use macoff::fullma::complete::{decode_order, optimal_powers, optimal_rates, solve_complete_fullma};
use macoff::model::{effective_latencies, generate_scenario, CellConfig, ScenarioConfig, SystemParams, TaskTemplate};
use macoff::oracle::lp_min_energy;

fn main() {
    let config = ScenarioConfig {
        params: SystemParams::default(),
        cell: CellConfig::default(),
        tasks: vec![
            TaskTemplate { bits: 2e6, latency: 1.2, chip_constant: 1e-19, downlink_seconds: 0.2 },
            TaskTemplate { bits: 1e6, latency: 1.5, chip_constant: 1e-19, downlink_seconds: 0.2 },
            TaskTemplate { bits: 3e6, latency: 1.8, chip_constant: 1e-19, downlink_seconds: 0.2 },
            TaskTemplate { bits: 4e6, latency: 2.5, chip_constant: 1e-19, downlink_seconds: 0.2 },
        ],
    };
    let scenario = generate_scenario(4, &config, 42).expect("valid configuration");
    let users = &scenario.users;
    let params = &scenario.params;
    let set: Vec<usize> = (0..users.len()).collect();

    println!("user  bits        budget[s]  alpha");
    for (k, u) in users.iter().enumerate() {
        println!(
            "{k:>4}  {:>10.0}  {:>9.4}  {:>12.4e}",
            u.bits,
            effective_latencies(u, params).complete,
            u.alpha(params)
        );
    }

    let rates = optimal_rates(&set, users, params).expect("all budgets positive");
    let order = decode_order(&set, &rates, users, params);
    let powers = optimal_powers(&set, &rates, &order, users, params).expect("rates in range");
    println!("\ndecode order (first entry decoded last): {:?}", order.users);
    println!("user  rate[b/use]  power[J/use]");
    for (i, k) in set.iter().enumerate() {
        println!("{k:>4}  {:>11.4}  {:>12.6e}", rates[i], powers[i]);
    }

    let (_, energy) = solve_complete_fullma(&set, users, params).unwrap();
    let (_, lp_objective) = lp_min_energy(&set, &rates, users, params).unwrap();
    println!("\ntotal transmit energy: {:.9} J", energy.total);
    println!("LP vertex oracle:      {:.9} J", lp_objective);
    println!(
        "relative gap:          {:.3e}",
        (energy.total - lp_objective).abs() / lp_objective
    );
}
