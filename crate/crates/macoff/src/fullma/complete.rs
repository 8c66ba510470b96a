//! Closed-form optimal resource allocation for a set of completely
//! offloading users sharing the Gaussian multiple-access channel.
//!
//! Each offloading user transmits at the minimum rate that meets its
//! deadline, R = T_s*B/L~ where L~ is the complete-offloading latency
//! budget. The decode order follows the per-user cost coefficient
//! B/(alpha*R) sorted non-increasingly, and the powers come from the
//! telescoping vertex of the capacity-region polymatroid: walking the order,
//! P = ((2^R - 1)/alpha) * 2^(sum of rates of earlier positions).

use std::f64::consts::LN_2;

use crate::error::{Result, SolveError};
use crate::model::{
    effective_latencies, Allocation, EnergyReport, SystemParams, UserAllocation, UserEnergy,
    UserTask,
};

/// Rates above this aggregate level would push powers past double range.
pub const MAX_SUM_RATE: f64 = 1000.0;

/// Decode order for a set of offloading users.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOrder {
    /// User indices sorted by non-increasing cost coefficient. The user at
    /// position 0 is decoded last (sees no interference); the user at the
    /// final position is decoded first, treating everyone else as noise.
    pub users: Vec<usize>,
    /// Cost coefficient B/(alpha*R) per position.
    pub cost: Vec<f64>,
}

/// Minimum feasible rate per user of `offload_set`, parallel to the set.
///
/// Fails with `InfeasibleUser` if any member's complete-offloading budget is
/// not positive.
pub fn optimal_rates(
    offload_set: &[usize],
    users: &[UserTask],
    params: &SystemParams,
) -> Result<Vec<f64>> {
    offload_set
        .iter()
        .map(|&k| {
            let budget = effective_latencies(&users[k], params).complete;
            if budget > 0.0 {
                Ok(params.symbol_interval * users[k].bits / budget)
            } else {
                Err(SolveError::InfeasibleUser {
                    user: k,
                    latency: budget,
                })
            }
        })
        .collect()
}

/// Sorts the offload set by non-increasing cost coefficient B/(alpha*R).
/// Ties are broken by ascending user index so the order is deterministic
/// under any input permutation.
pub fn decode_order(
    offload_set: &[usize],
    rates: &[f64],
    users: &[UserTask],
    params: &SystemParams,
) -> DecodeOrder {
    let mut entries: Vec<(usize, f64)> = offload_set
        .iter()
        .zip(rates)
        .map(|(&k, &r)| (k, users[k].bits / (users[k].alpha(params) * r)))
        .collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    DecodeOrder {
        users: entries.iter().map(|e| e.0).collect(),
        cost: entries.iter().map(|e| e.1).collect(),
    }
}

/// Optimal powers for the given rates and decode order, parallel to
/// `offload_set`. The exponent of the interference factor is accumulated as
/// a running sum of rates to bound floating-point error growth.
pub fn optimal_powers(
    offload_set: &[usize],
    rates: &[f64],
    order: &DecodeOrder,
    users: &[UserTask],
    params: &SystemParams,
) -> Result<Vec<f64>> {
    let sum_rate: f64 = rates.iter().sum();
    if sum_rate > MAX_SUM_RATE {
        return Err(SolveError::OverflowDomain { sum_rate });
    }
    let mut position = vec![usize::MAX; users.len()];
    for (i, &k) in offload_set.iter().enumerate() {
        position[k] = i;
    }
    let mut powers = vec![0.0; offload_set.len()];
    let mut rate_acc: f64 = 0.0;
    for &user in &order.users {
        let i = position[user];
        let rate = rates[i];
        powers[i] = (rate * LN_2).exp_m1() / users[user].alpha(params) * rate_acc.exp2();
        rate_acc += rate;
    }
    Ok(powers)
}

/// Full pipeline for a non-empty offload set: rates, decode order, powers,
/// and the transmission-energy report for the set. Local energies of users
/// outside the set are accounted for by the binary-offloading layer.
pub fn solve_complete_fullma(
    offload_set: &[usize],
    users: &[UserTask],
    params: &SystemParams,
) -> Result<(Allocation, EnergyReport)> {
    if offload_set.is_empty() {
        return Err(SolveError::InvalidInput("empty offload set".into()));
    }
    let rates = optimal_rates(offload_set, users, params)?;
    let order = decode_order(offload_set, &rates, users, params);
    let powers = optimal_powers(offload_set, &rates, &order, users, params)?;

    let mut order_position = vec![usize::MAX; users.len()];
    for (pos, &u) in order.users.iter().enumerate() {
        order_position[u] = pos;
    }
    let mut allocation = Allocation::all_local(users.len());
    let mut energies = vec![UserEnergy::default(); users.len()];
    for (i, &k) in offload_set.iter().enumerate() {
        allocation.users[k] = UserAllocation {
            rate: rates[i],
            power: powers[i],
            gamma: 1.0,
            order_index: Some(order_position[k]),
        };
        energies[k].transmit = users[k].bits / rates[i] * powers[i];
    }
    Ok((allocation, EnergyReport::from_per_user(energies)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::effective_latencies;

    fn params() -> SystemParams {
        SystemParams {
            symbol_interval: 1e-6,
            sigma2: 1.0,
            edge_seconds_per_bit: 0.0,
        }
    }

    fn user_with(bits: f64, latency: f64, h2: f64) -> UserTask {
        UserTask {
            bits,
            latency,
            chip_constant: 1e-19,
            downlink_seconds: 0.0,
            h2,
        }
    }

    #[test]
    fn rates_are_bits_over_budget() {
        let p = params();
        let users = vec![user_with(2e6, 1.0, 1.0), user_with(1e6, 1.0, 1.0)];
        let rates = optimal_rates(&[0, 1], &users, &p).unwrap();
        assert_eq!(rates, vec![2.0, 1.0]);
    }

    #[test]
    fn zero_budget_user_is_infeasible() {
        let p = params();
        let users = vec![user_with(1.0, 0.0, 1.0)];
        match optimal_rates(&[0], &users, &p) {
            Err(SolveError::InfeasibleUser { user: 0, .. }) => {}
            other => panic!("expected InfeasibleUser, got {other:?}"),
        }
    }

    #[test]
    fn order_puts_largest_cost_first() {
        let p = params();
        // cost = B/(alpha*R); with alpha=4, B=2e6, R=2 the cost is 2.5e5
        let users = vec![user_with(2e6, 1.0, 4.0), user_with(1e6, 1.0, 10.0)];
        let rates = optimal_rates(&[0, 1], &users, &p).unwrap();
        let order = decode_order(&[0, 1], &rates, &users, &p);
        assert!((order.cost[0] - 2.5e5).abs() < 1e-6);
        assert_eq!(order.users, vec![0, 1]);
    }

    #[test]
    fn equal_costs_break_ties_by_user_index() {
        let p = params();
        let users = vec![user_with(1e6, 1.0, 2.0), user_with(1e6, 1.0, 2.0)];
        let rates = vec![1.0, 1.0];
        let order = decode_order(&[1, 0], &rates[..], &users, &p);
        assert_eq!(order.users, vec![0, 1]);
    }

    #[test]
    fn two_user_powers_match_the_telescoping_vertex() {
        let p = params();
        let users = vec![user_with(1.0, 1.0, 1.0), user_with(1.0, 1.0, 1.0)];
        let rates = vec![1.0, 2.0];
        // costs: 1/1 = 1.0 vs 1/2 = 0.5, so user 0 is decoded last
        let order = decode_order(&[0, 1], &rates, &users, &p);
        assert_eq!(order.users, vec![0, 1]);
        let powers = optimal_powers(&[0, 1], &rates, &order, &users, &p).unwrap();
        assert!((powers[0] - 1.0).abs() < 1e-12);
        assert!((powers[1] - 6.0).abs() < 1e-12);
        // the all-user capacity constraint holds with equality
        let lhs = (rates[0] + rates[1]).exp2();
        let rhs = 1.0 + powers[0] + powers[1];
        assert!((lhs - rhs).abs() < 1e-9 * lhs);
    }

    #[test]
    fn single_user_power_is_interference_free() {
        let p = params();
        let users = vec![user_with(1e6, 1.0, 1.0)];
        let (allocation, energy) = solve_complete_fullma(&[0], &users, &p).unwrap();
        assert!((allocation.users[0].rate - 1.0).abs() < 1e-12);
        assert!((allocation.users[0].power - 1.0).abs() < 1e-12);
        assert!((energy.total - 1e6).abs() < 1e-3);
        assert_eq!(allocation.users[0].order_index, Some(0));
    }

    #[test]
    fn aggregate_rate_guard_trips() {
        let p = params();
        let users = vec![user_with(2e9, 1.0, 1.0)];
        match solve_complete_fullma(&[0], &users, &p) {
            Err(SolveError::OverflowDomain { .. }) => {}
            other => panic!("expected OverflowDomain, got {other:?}"),
        }
    }

    #[test]
    fn input_permutation_does_not_change_the_solution() {
        let p = SystemParams {
            symbol_interval: 1e-6,
            sigma2: 1e-13,
            edge_seconds_per_bit: 1e-8,
        };
        let users = vec![
            user_with(2e6, 1.2, 3e-10),
            user_with(1e6, 1.5, 8e-11),
            user_with(3e6, 1.8, 5e-10),
            user_with(4e6, 2.5, 1.2e-10),
        ];
        let (a1, e1) = solve_complete_fullma(&[0, 1, 2, 3], &users, &p).unwrap();
        let (a2, e2) = solve_complete_fullma(&[3, 1, 0, 2], &users, &p).unwrap();
        assert_eq!(a1, a2);
        assert!((e1.total - e2.total).abs() <= 1e-12 * e1.total);
    }

    #[test]
    fn rates_are_minimal_feasible() {
        let p = SystemParams {
            symbol_interval: 1e-6,
            sigma2: 1e-13,
            edge_seconds_per_bit: 1e-8,
        };
        let users = vec![user_with(2e6, 1.2, 3e-10), user_with(4e6, 2.5, 1.2e-10)];
        let rates = optimal_rates(&[0, 1], &users, &p).unwrap();
        for (i, &k) in [0usize, 1].iter().enumerate() {
            let budget = effective_latencies(&users[k], &p).complete;
            // any epsilon reduction violates the latency constraint
            let reduced = rates[i] * (1.0 - 1e-12);
            assert!(p.symbol_interval * users[k].bits / reduced > budget);
        }
    }
}
