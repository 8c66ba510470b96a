//! Jointly convex partial offloading under TDMA in the variables
//! (offloaded bits B', transmit duration t), plus the positive-
//! semidefiniteness check of the objective Hessian.
//!
//! Durations are measured in channel uses here: the energy term is
//! t*(2^(B'/t)-1)/alpha while the cumulative latency constraints carry the
//! symbol interval, sum_{i<=k} T_s*t_i + delta_c*B'_k <= Lbar_k.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, SolveError};
use crate::model::{
    effective_latencies, local_energy_dvs, Allocation, EnergyReport, SystemParams, UserAllocation,
    UserEnergy, UserTask,
};
use crate::tdma::barrier::{self, BarrierOptions, LinearConstraint, SmoothObjective};
use crate::tdma::complete::tdma_power;

/// A feasible point of the TDMA partial-offloading program.
#[derive(Debug, Clone, PartialEq)]
pub struct TdmaPartialPoint {
    /// Users in schedule order (ascending partial budget, ties by index).
    pub order: Vec<usize>,
    /// Offloaded bits per scheduled user.
    pub offloaded_bits: Vec<f64>,
    /// Transmit duration in channel uses per scheduled user.
    pub durations: Vec<f64>,
}

/// Solution with solver diagnostics.
#[derive(Debug, Clone)]
pub struct TdmaPartialSolution {
    pub point: TdmaPartialPoint,
    pub allocation: Allocation,
    pub energy: EnergyReport,
    pub kkt_residual: f64,
    pub newton_iterations: usize,
}

struct SplitObjective {
    /// Task bits per scheduled user.
    bits: Vec<f64>,
    alpha: Vec<f64>,
    /// M/L^2 per scheduled user.
    chip_over_l2: Vec<f64>,
}

impl SplitObjective {
    fn n(&self) -> usize {
        self.bits.len()
    }
}

impl SmoothObjective for SplitObjective {
    fn dim(&self) -> usize {
        2 * self.n()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.n();
        let mut total = 0.0;
        for k in 0..n {
            let (t, b) = (x[k], x[n + k]);
            let local = self.chip_over_l2[k] * (self.bits[k] - b).powi(3);
            if !(t > 0.0) {
                return f64::INFINITY;
            }
            let u = b / t;
            if u > 1020.0 {
                return f64::INFINITY;
            }
            total += t * (u * LN_2).exp_m1() / self.alpha[k] + local;
        }
        total
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let n = self.n();
        for k in 0..n {
            let (t, b) = (x[k], x[n + k]);
            let u = b / t;
            let e = u.exp2();
            grad[k] = (e - 1.0 - LN_2 * u * e) / self.alpha[k];
            grad[n + k] =
                LN_2 * e / self.alpha[k] - 3.0 * self.chip_over_l2[k] * (self.bits[k] - b).powi(2);
        }
    }

    fn add_hessian(&self, x: &[f64], hess: &mut DMatrix<f64>) {
        let n = self.n();
        for k in 0..n {
            let (t, b) = (x[k], x[n + k]);
            let u = b / t;
            let e = u.exp2();
            let ln2sq = LN_2 * LN_2;
            hess[(k, k)] += ln2sq * u * u / t * e / self.alpha[k];
            hess[(n + k, n + k)] +=
                ln2sq / t * e / self.alpha[k] + 6.0 * self.chip_over_l2[k] * (self.bits[k] - b);
            let cross = -ln2sq * u / t * e / self.alpha[k];
            hess[(k, n + k)] += cross;
            hess[(n + k, k)] += cross;
        }
    }
}

fn schedule_order(users: &[UserTask], params: &SystemParams) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut order: Vec<usize> = (0..users.len()).collect();
    order.sort_by(|&a, &b| {
        let la = effective_latencies(&users[a], params).partial;
        let lb = effective_latencies(&users[b], params).partial;
        la.partial_cmp(&lb).unwrap().then(a.cmp(&b))
    });
    let budgets: Vec<f64> = order
        .iter()
        .map(|&k| effective_latencies(&users[k], params).partial)
        .collect();
    if let Some(pos) = budgets.iter().position(|&b| b <= 0.0) {
        return Err(SolveError::Infeasible(format!(
            "user {} has non-positive transmission budget {}",
            order[pos], budgets[pos]
        )));
    }
    Ok((order, budgets))
}

/// Globally optimal split and schedule for all users. Requires every user's
/// partial budget Lbar to be positive.
pub fn solve_partial_tdma_detailed(
    users: &[UserTask],
    params: &SystemParams,
) -> Result<TdmaPartialSolution> {
    if users.is_empty() {
        return Err(SolveError::InvalidInput("no users".into()));
    }
    let (order, budgets) = schedule_order(users, params)?;
    let n = order.len();
    let ts = params.symbol_interval;
    let dc = params.edge_seconds_per_bit;

    let objective = SplitObjective {
        bits: order.iter().map(|&k| users[k].bits).collect(),
        alpha: order.iter().map(|&k| users[k].alpha(params)).collect(),
        chip_over_l2: order
            .iter()
            .map(|&k| users[k].chip_constant / (users[k].latency * users[k].latency))
            .collect(),
    };

    let mut constraints = Vec::with_capacity(4 * n);
    for k in 0..n {
        let mut coeffs: Vec<(usize, f64)> = (0..=k).map(|i| (i, ts)).collect();
        if dc > 0.0 {
            coeffs.push((n + k, dc));
        }
        constraints.push(LinearConstraint {
            coeffs,
            rhs: budgets[k],
        });
    }
    for k in 0..n {
        constraints.push(LinearConstraint {
            coeffs: vec![(n + k, 1.0)],
            rhs: objective.bits[k],
        });
        constraints.push(LinearConstraint {
            coeffs: vec![(n + k, -1.0)],
            rhs: 0.0,
        });
        constraints.push(LinearConstraint {
            coeffs: vec![(k, -1.0)],
            rhs: 0.0,
        });
    }

    // strictly feasible start: durations fill half of each budget, bits stay
    // clear of both the box and the latency constraints
    let mut x0 = vec![0.0; 2 * n];
    for k in 0..n {
        x0[k] = budgets[k] / (2.0 * (n as f64 + 1.0)) / ts;
        let bits_cap = if dc > 0.0 {
            objective.bits[k].min(budgets[k] / (4.0 * dc))
        } else {
            objective.bits[k]
        };
        x0[n + k] = 0.5 * bits_cap;
    }

    let sol = barrier::minimize(
        &objective,
        &constraints,
        x0,
        BarrierOptions::for_users(n),
    )?;

    let durations: Vec<f64> = sol.x[..n].to_vec();
    let offloaded: Vec<f64> = sol.x[n..].to_vec();
    let mut allocation = Allocation::all_local(users.len());
    let mut energies = vec![UserEnergy::default(); users.len()];
    for pos in 0..n {
        let k = order[pos];
        let gamma_raw = offloaded[pos] / users[k].bits;
        let (gamma, rate, power, tx) = if gamma_raw < 1e-12 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            let rate = offloaded[pos] / durations[pos];
            let power = tdma_power(rate, users[k].alpha(params));
            let tx = durations[pos] * ((rate * LN_2).exp_m1()) / users[k].alpha(params);
            (gamma_raw.min(1.0), rate, power, tx)
        };
        allocation.users[k] = UserAllocation {
            rate,
            power,
            gamma,
            order_index: Some(pos),
        };
        energies[k] = UserEnergy {
            transmit: tx,
            local: local_energy_dvs(&users[k], gamma),
        };
    }
    Ok(TdmaPartialSolution {
        point: TdmaPartialPoint {
            order,
            offloaded_bits: offloaded,
            durations,
        },
        allocation,
        energy: EnergyReport::from_per_user(energies),
        kkt_residual: sol.kkt_residual,
        newton_iterations: sol.newton_iterations,
    })
}

/// Optimal split and schedule for all users under TDMA.
pub fn solve_partial_tdma(
    users: &[UserTask],
    params: &SystemParams,
) -> Result<(Allocation, EnergyReport)> {
    let sol = solve_partial_tdma_detailed(users, params)?;
    Ok((sol.allocation, sol.energy))
}

// ---------------------------------------------------------------------------
// Hessian positive-semidefiniteness check
// ---------------------------------------------------------------------------

/// Analytic second derivatives of one user's objective term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianBlocks {
    /// d2f/dt2
    pub tt: f64,
    /// d2f/dB'2
    pub bb: f64,
    /// d2f/dt dB'
    pub tb: f64,
}

/// Per-user outcome of the PSD check.
#[derive(Debug, Clone)]
pub struct HessianUserCheck {
    pub user: usize,
    pub blocks: HessianBlocks,
    pub determinant: f64,
    pub determinant_ok: bool,
    /// Largest relative disagreement between the analytic second
    /// derivatives and centered finite differences.
    pub fd_max_rel_err: f64,
}

/// Outcome of the full PSD check at one feasible point.
#[derive(Debug, Clone)]
pub struct HessianReport {
    pub per_user: Vec<HessianUserCheck>,
    pub min_eigenvalue: f64,
    pub eigen_scale: f64,
    pub h11_ok: bool,
    pub determinants_ok: bool,
    pub eigen_ok: bool,
    pub fd_ok: bool,
    pub pass: bool,
}

fn blocks_at(user: &UserTask, params: &SystemParams, t: f64, b: f64) -> HessianBlocks {
    let alpha = user.alpha(params);
    let m_over_l2 = user.chip_constant / (user.latency * user.latency);
    let u = b / t;
    let e = u.exp2();
    let ln2sq = LN_2 * LN_2;
    HessianBlocks {
        tt: ln2sq * u * u / t * e / alpha,
        bb: ln2sq / t * e / alpha + 6.0 * m_over_l2 * (user.bits - b),
        tb: -ln2sq * u / t * e / alpha,
    }
}

/// One user's objective term, extended analytically to small negative B' so
/// centered differences remain valid at the B' = 0 boundary.
fn term_value(user: &UserTask, params: &SystemParams, t: f64, b: f64) -> f64 {
    let alpha = user.alpha(params);
    let m_over_l2 = user.chip_constant / (user.latency * user.latency);
    t * ((b / t) * LN_2).exp_m1() / alpha + m_over_l2 * (user.bits - b).powi(3)
}

/// Verifies the convexity structure of the objective at a feasible point:
/// positive duration curvatures, non-negative per-user determinants, a
/// non-negative spectrum of the assembled 2K x 2K Hessian, and agreement of
/// the analytic second derivatives with centered finite differences.
pub fn hessian_psd_check(
    point: &TdmaPartialPoint,
    users: &[UserTask],
    params: &SystemParams,
) -> HessianReport {
    let n = point.order.len();
    let mut per_user = Vec::with_capacity(n);
    let mut h11_ok = true;
    let mut determinants_ok = true;
    let mut fd_ok = true;
    let mut hess = DMatrix::zeros(2 * n, 2 * n);

    for pos in 0..n {
        let k = point.order[pos];
        let user = &users[k];
        let (t, b) = (point.durations[pos], point.offloaded_bits[pos]);
        let blocks = blocks_at(user, params, t, b);
        if b > 0.0 && !(blocks.tt > 0.0) {
            h11_ok = false;
        }
        let det = blocks.tt * blocks.bb - blocks.tb * blocks.tb;
        let det_scale = blocks.tt.abs() * blocks.bb.abs() + blocks.tb * blocks.tb + 1e-300;
        let determinant_ok = det >= -1e-12 * det_scale;
        determinants_ok &= determinant_ok;

        // centered finite differences of the single-user term; steps are
        // relative to the natural variable scales
        let ht = t * 1e-4;
        let hb = b.abs().max(1e-3 * user.bits) * 1.6e-4;
        let f = |tt: f64, bb: f64| term_value(user, params, tt, bb);
        let f0 = f(t, b);
        let fd_tt = (f(t + ht, b) - 2.0 * f0 + f(t - ht, b)) / (ht * ht);
        let fd_bb = (f(t, b + hb) - 2.0 * f0 + f(t, b - hb)) / (hb * hb);
        let fd_tb = (f(t + ht, b + hb) - f(t + ht, b - hb) - f(t - ht, b + hb)
            + f(t - ht, b - hb))
            / (4.0 * ht * hb);
        // a difference is only meaningful above the cancellation noise of
        // the function values involved
        let rel = |an: f64, fd: f64, noise: f64| -> f64 {
            let scale = an.abs().max(fd.abs());
            if scale <= 64.0 * noise {
                0.0
            } else {
                (an - fd).abs() / scale
            }
        };
        let eps = f64::EPSILON * f0.abs().max(1e-300);
        let fd_max_rel_err = rel(blocks.tt, fd_tt, eps / (ht * ht))
            .max(rel(blocks.bb, fd_bb, eps / (hb * hb)))
            .max(rel(blocks.tb, fd_tb, eps / (ht * hb)));
        fd_ok &= fd_max_rel_err <= 1e-5;

        hess[(pos, pos)] = blocks.tt;
        hess[(n + pos, n + pos)] = blocks.bb;
        hess[(pos, n + pos)] = blocks.tb;
        hess[(n + pos, pos)] = blocks.tb;

        per_user.push(HessianUserCheck {
            user: k,
            blocks,
            determinant: det,
            determinant_ok,
            fd_max_rel_err,
        });
    }

    let eigen_scale = hess
        .iter()
        .fold(1e-300f64, |a, &v| a.max(v.abs()));
    let eigen = SymmetricEigen::new(hess);
    let min_eigenvalue = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let eigen_ok = min_eigenvalue >= -1e-10 * eigen_scale;

    HessianReport {
        per_user,
        min_eigenvalue,
        eigen_scale,
        h11_ok,
        determinants_ok,
        eigen_ok,
        fd_ok,
        pass: h11_ok && determinants_ok && eigen_ok && fd_ok,
    }
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
    fn zero_chip_constant_keeps_everything_local() {
        let p = params();
        let mut u = user_with(4e6, 2.0, 2e-10);
        u.chip_constant = 0.0;
        let sol = solve_partial_tdma_detailed(&[u], &p).unwrap();
        assert!(
            sol.allocation.users[0].gamma < 1e-4,
            "gamma = {}",
            sol.allocation.users[0].gamma
        );
        assert!(sol.energy.total < 1e-6, "total = {}", sol.energy.total);
    }

    #[test]
    fn single_user_matches_the_grid_oracle() {
        let p = params();
        let users = vec![user_with(4e6, 2.0, 2e-10)];
        let sol = solve_partial_tdma_detailed(&users, &p).unwrap();
        let grid = oracle::grid_partial_tdma(&users, &p, 100_000).unwrap();
        let rel = (sol.energy.total - grid.objective).abs() / grid.objective.max(1e-300);
        assert!(
            rel < 1e-3,
            "solver {} vs grid {}",
            sol.energy.total,
            grid.objective
        );
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn infeasible_budget_errors() {
        let p = params();
        let users = vec![user_with(4e6, 0.1, 2e-10)];
        assert!(matches!(
            solve_partial_tdma(&users, &p),
            Err(SolveError::Infeasible(_))
        ));
    }

    #[test]
    fn psd_check_passes_at_the_solution() {
        let p = params();
        let users = vec![user_with(4e6, 2.0, 2e-10), user_with(2e6, 1.5, 8e-11)];
        let sol = solve_partial_tdma_detailed(&users, &p).unwrap();
        let report = hessian_psd_check(&sol.point, &users, &p);
        assert!(report.pass, "report: {report:?}");
    }

    #[test]
    fn psd_check_degenerates_gracefully_at_zero_bits() {
        let p = params();
        let users = vec![user_with(4e6, 2.0, 2e-10)];
        let point = TdmaPartialPoint {
            order: vec![0],
            offloaded_bits: vec![0.0],
            durations: vec![1e5],
        };
        let report = hessian_psd_check(&point, &users, &p);
        assert_eq!(report.per_user[0].blocks.tt, 0.0);
        assert!(report.pass, "report: {report:?}");
    }
}
