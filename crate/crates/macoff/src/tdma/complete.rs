//! Optimal rate/power allocation for completely offloading users under
//! TDMA. In the transmit-duration variables t_k = T_s*B_k/R_k the cumulative
//! latency constraints are linear and the energy objective
//! sum (t_k/(T_s*alpha_k))(2^(T_s*B_k/t_k) - 1) stays convex, so the problem
//! is solved by the shared log-barrier Newton kernel.

use std::f64::consts::LN_2;

use nalgebra::DMatrix;

use crate::error::{Result, SolveError};
use crate::model::{
    effective_latencies, Allocation, EnergyReport, SystemParams, UserAllocation, UserEnergy,
    UserTask,
};
use crate::tdma::barrier::{self, BarrierOptions, LinearConstraint, SmoothObjective};

/// Minimum power for a target rate over an interference-free channel:
/// (2^R - 1)/alpha.
pub fn tdma_power(rate: f64, alpha: f64) -> f64 {
    if rate <= 0.0 {
        0.0
    } else {
        (rate * LN_2).exp_m1() / alpha
    }
}

/// Transmit schedule: who transmits when, for how long.
#[derive(Debug, Clone, PartialEq)]
pub struct TdmaSchedule {
    /// User indices in transmission order (ascending latency budget,
    /// ties by index).
    pub order: Vec<usize>,
    /// Transmit duration in seconds, parallel to `order`.
    pub durations: Vec<f64>,
}

/// Solution with solver diagnostics.
#[derive(Debug, Clone)]
pub struct TdmaCompleteSolution {
    pub schedule: TdmaSchedule,
    pub allocation: Allocation,
    pub energy: EnergyReport,
    pub kkt_residual: f64,
    pub newton_iterations: usize,
}

struct DurationObjective {
    /// T_s * B per scheduled user.
    bit_seconds: Vec<f64>,
    alpha: Vec<f64>,
    symbol_interval: f64,
}

impl DurationObjective {
    fn term(&self, k: usize, t: f64) -> f64 {
        let exponent = self.bit_seconds[k] / t;
        if !(t > 0.0) || exponent > 1020.0 {
            return f64::INFINITY;
        }
        t / (self.symbol_interval * self.alpha[k]) * (exponent * LN_2).exp_m1()
    }
}

impl SmoothObjective for DurationObjective {
    fn dim(&self) -> usize {
        self.bit_seconds.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        (0..x.len()).map(|k| self.term(k, x[k])).sum()
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        for k in 0..x.len() {
            let c = self.bit_seconds[k];
            let t = x[k];
            let e = (c / t).exp2();
            grad[k] = (e * (1.0 - c * LN_2 / t) - 1.0) / (self.symbol_interval * self.alpha[k]);
        }
    }

    fn add_hessian(&self, x: &[f64], hess: &mut DMatrix<f64>) {
        for k in 0..x.len() {
            let c = self.bit_seconds[k];
            let t = x[k];
            let e = (c / t).exp2();
            hess[(k, k)] +=
                e * (c * LN_2) * (c * LN_2) / (t * t * t) / (self.symbol_interval * self.alpha[k]);
        }
    }
}

/// Users of `offload_set` sorted by ascending complete-offloading budget.
/// Errors when any member has a non-positive budget.
fn sorted_budgets(
    offload_set: &[usize],
    users: &[UserTask],
    params: &SystemParams,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut order = offload_set.to_vec();
    order.sort_by(|&a, &b| {
        let la = effective_latencies(&users[a], params).complete;
        let lb = effective_latencies(&users[b], params).complete;
        la.partial_cmp(&lb).unwrap().then(a.cmp(&b))
    });
    let budgets: Vec<f64> = order
        .iter()
        .map(|&k| effective_latencies(&users[k], params).complete)
        .collect();
    if let Some(pos) = budgets.iter().position(|&b| b <= 0.0) {
        return Err(SolveError::Infeasible(format!(
            "user {} has non-positive transmission budget {}",
            order[pos], budgets[pos]
        )));
    }
    Ok((order, budgets))
}

/// Strictly feasible start: half the budget gap to the previous user, with a
/// floor that keeps every duration positive even under equal budgets.
fn initial_durations(budgets: &[f64]) -> Vec<f64> {
    let n = budgets.len();
    let mut t = Vec::with_capacity(n);
    let mut prev = 0.0;
    for &b in budgets {
        let gap = (b - prev) / 2.0;
        let floor = b / (2.0 * (n as f64 + 1.0));
        t.push(gap.max(floor));
        prev = b;
    }
    t
}

pub fn solve_complete_tdma_schedule(
    offload_set: &[usize],
    users: &[UserTask],
    params: &SystemParams,
) -> Result<TdmaCompleteSolution> {
    if offload_set.is_empty() {
        return Err(SolveError::InvalidInput("empty offload set".into()));
    }
    let (order, budgets) = sorted_budgets(offload_set, users, params)?;
    let n = order.len();

    let (durations, kkt_residual, newton_iterations) = if n == 1 {
        // The energy term decreases in t, so the single constraint binds.
        (vec![budgets[0]], 0.0, 0)
    } else {
        let objective = DurationObjective {
            bit_seconds: order
                .iter()
                .map(|&k| params.symbol_interval * users[k].bits)
                .collect(),
            alpha: order.iter().map(|&k| users[k].alpha(params)).collect(),
            symbol_interval: params.symbol_interval,
        };
        let mut constraints = Vec::with_capacity(2 * n);
        for k in 0..n {
            constraints.push(LinearConstraint {
                coeffs: (0..=k).map(|i| (i, 1.0)).collect(),
                rhs: budgets[k],
            });
        }
        for k in 0..n {
            constraints.push(LinearConstraint {
                coeffs: vec![(k, -1.0)],
                rhs: 0.0,
            });
        }
        let sol = barrier::minimize(
            &objective,
            &constraints,
            initial_durations(&budgets),
            BarrierOptions::for_users(n),
        )?;
        (sol.x, sol.kkt_residual, sol.newton_iterations)
    };

    let mut allocation = Allocation::all_local(users.len());
    let mut energies = vec![UserEnergy::default(); users.len()];
    for (pos, (&k, &t)) in order.iter().zip(&durations).enumerate() {
        let rate = params.symbol_interval * users[k].bits / t;
        let alpha = users[k].alpha(params);
        let power = tdma_power(rate, alpha);
        allocation.users[k] = UserAllocation {
            rate,
            power,
            gamma: 1.0,
            order_index: Some(pos),
        };
        energies[k].transmit = users[k].bits / rate * power;
    }
    Ok(TdmaCompleteSolution {
        schedule: TdmaSchedule {
            order,
            durations,
        },
        allocation,
        energy: EnergyReport::from_per_user(energies),
        kkt_residual,
        newton_iterations,
    })
}

/// Transmission-energy-optimal allocation for a set of completely
/// offloading users under TDMA. Local energies of users outside the set are
/// accounted for by the binary-offloading layer.
pub fn solve_complete_tdma(
    offload_set: &[usize],
    users: &[UserTask],
    params: &SystemParams,
) -> Result<(Allocation, EnergyReport)> {
    let sol = solve_complete_tdma_schedule(offload_set, users, params)?;
    Ok((sol.allocation, sol.energy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    fn params() -> SystemParams {
        SystemParams {
            symbol_interval: 1e-6,
            sigma2: 1e-13,
            edge_seconds_per_bit: 1e-8,
        }
    }

    fn user_with(bits: f64, latency: f64, h2: f64) -> UserTask {
        UserTask {
            bits,
            latency,
            chip_constant: 1e-19,
            downlink_seconds: 0.2,
            h2,
        }
    }

    #[test]
    fn power_formula() {
        assert!((tdma_power(3.0, 7.0) - 1.0).abs() < 1e-15);
        assert_eq!(tdma_power(0.0, 3.0), 0.0);
        assert!((tdma_power(1.0, 2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_user_uses_its_whole_budget() {
        let p = params();
        let users = vec![user_with(2e6, 1.5, 2e-10)];
        let sol = solve_complete_tdma_schedule(&[0], &users, &p).unwrap();
        let budget = effective_latencies(&users[0], &p).complete;
        assert_eq!(sol.schedule.durations, vec![budget]);
        let expected_rate = p.symbol_interval * 2e6 / budget;
        assert!((sol.allocation.users[0].rate - expected_rate).abs() < 1e-12);
    }

    #[test]
    fn infeasible_budget_errors() {
        let p = params();
        let users = vec![user_with(2e6, 0.2, 2e-10)];
        assert!(matches!(
            solve_complete_tdma(&[0], &users, &p),
            Err(SolveError::Infeasible(_))
        ));
    }

    #[test]
    fn two_user_solution_matches_the_grid_oracle() {
        let p = params();
        let users = vec![user_with(2e6, 1.4, 3e-10), user_with(3e6, 2.1, 1.5e-10)];
        let sol = solve_complete_tdma_schedule(&[0, 1], &users, &p).unwrap();
        let grid = oracle::grid_complete_tdma(&[0, 1], &users, &p, 100_000).unwrap();
        let rel = (sol.energy.total - grid.objective).abs() / grid.objective;
        assert!(rel < 1e-3, "solver {} vs grid {}", sol.energy.total, grid.objective);
        assert!(sol.kkt_residual <= 1e-8, "kkt = {}", sol.kkt_residual);
    }

    #[test]
    fn cumulative_constraints_hold_and_one_is_tight() {
        let p = params();
        let users = vec![
            user_with(2e6, 1.2, 3e-10),
            user_with(1e6, 1.5, 8e-11),
            user_with(3e6, 1.8, 5e-10),
            user_with(4e6, 2.5, 1.2e-10),
        ];
        let sol = solve_complete_tdma_schedule(&[0, 1, 2, 3], &users, &p).unwrap();
        let mut cumulative = 0.0;
        let mut any_tight = false;
        for (pos, &k) in sol.schedule.order.iter().enumerate() {
            cumulative += sol.schedule.durations[pos];
            let budget = effective_latencies(&users[k], &p).complete;
            assert!(cumulative <= budget * (1.0 + 1e-9));
            if cumulative >= budget * (1.0 - 1e-4) {
                any_tight = true;
            }
        }
        assert!(any_tight, "no cumulative constraint is near-tight");
    }
}
