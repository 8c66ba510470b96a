//! Log-barrier Newton solver for small dense convex programs with linear
//! inequality constraints. One kernel serves both TDMA problems through
//! objective adapters.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Result, SolveError};

/// A single linear inequality: sum of coeff*x <= rhs.
#[derive(Debug, Clone)]
pub(crate) struct LinearConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearConstraint {
    fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * x[i]).sum()
    }

    /// rhs - coeffs.x with compensated summation. Near-active constraints
    /// cancel almost completely, and the barrier gradient needs the slack
    /// accurate relative to itself, not to the summands.
    fn slack(&self, x: &[f64]) -> f64 {
        let mut sum = self.rhs;
        let mut comp = 0.0;
        for &(i, c) in &self.coeffs {
            let p = -(c * x[i]);
            let p_err = (-c).mul_add(x[i], -p);
            let t = sum + p;
            let shifted = t - sum;
            comp += (sum - (t - shifted)) + (p - shifted) + p_err;
            sum = t;
        }
        sum + comp
    }
}

/// Smooth convex objective over an open domain; `value` returns infinity
/// outside the domain so the line search rejects such trial points.
pub(crate) trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    /// Adds the objective Hessian into `hess` (which arrives zeroed).
    fn add_hessian(&self, x: &[f64], hess: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BarrierOptions {
    /// Barrier weight reduction per stage.
    pub mu_reduction: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Backtracking shrink factor.
    pub backtrack: f64,
    /// Scale of the duality-gap stopping rule: stop once
    /// m * mu <= gap_user_scale * 1e-10 * max(1, |f|).
    pub gap_user_scale: f64,
    pub max_newton_per_stage: usize,
    pub max_total_newton: usize,
}

impl BarrierOptions {
    /// Defaults tuned for problems with `n_users` users.
    pub fn for_users(n_users: usize) -> Self {
        BarrierOptions {
            mu_reduction: 10.0,
            armijo_c: 1e-4,
            backtrack: 0.5,
            gap_user_scale: n_users.max(1) as f64,
            max_newton_per_stage: 200,
            max_total_newton: 8000,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Relative KKT residual: max of the stationarity residual (scaled by
    /// the gradient magnitude) and the complementarity gap (scaled by the
    /// objective magnitude).
    pub kkt_residual: f64,
    pub newton_iterations: usize,
}

/// Minimizes `obj` subject to `constraints` from the strictly feasible
/// start `x0`.
pub(crate) fn minimize(
    obj: &dyn SmoothObjective,
    constraints: &[LinearConstraint],
    x0: Vec<f64>,
    opts: BarrierOptions,
) -> Result<BarrierSolution> {
    let n = obj.dim();
    let m = constraints.len();
    debug_assert_eq!(x0.len(), n);
    for (j, c) in constraints.iter().enumerate() {
        if c.slack(&x0) <= 0.0 {
            return Err(SolveError::InvalidInput(format!(
                "start point violates constraint {j} (slack {})",
                c.slack(&x0)
            )));
        }
    }
    let f0 = obj.value(&x0);
    if !f0.is_finite() {
        return Err(SolveError::InvalidInput(
            "objective is not finite at the start point".into(),
        ));
    }

    let mut x = x0;
    let mut f_x: f64;
    let mut mu = (f0.abs().max(1.0)) / m as f64;
    let mut total_newton = 0usize;
    let mut stages = 0usize;

    let barrier_value = |x: &[f64], mu: f64| -> f64 {
        let f = obj.value(x);
        if !f.is_finite() {
            return f64::INFINITY;
        }
        let mut b = 0.0;
        for c in constraints {
            let s = c.slack(x);
            if s <= 0.0 {
                return f64::INFINITY;
            }
            b -= s.ln();
        }
        f + mu * b
    };

    let mut grad = vec![0.0; n];
    loop {
        stages += 1;
        // Newton on the barrier at this mu
        let mut stage_iters = 0usize;
        let mut best_decrement = f64::INFINITY;
        let mut stagnant = 0usize;
        loop {
            if stage_iters >= opts.max_newton_per_stage || total_newton >= opts.max_total_newton {
                return Err(SolveError::SolverStall {
                    iterations: total_newton,
                });
            }
            stage_iters += 1;
            total_newton += 1;

            grad.iter_mut().for_each(|g| *g = 0.0);
            obj.gradient(&x, &mut grad);
            let grad_obj_inf = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            let mut hess = DMatrix::zeros(n, n);
            obj.add_hessian(&x, &mut hess);
            for c in constraints {
                let s = c.slack(&x);
                let gw = mu / s;
                let hw = mu / (s * s);
                for &(i, ci) in &c.coeffs {
                    grad[i] += gw * ci;
                    for &(l, cl) in &c.coeffs {
                        hess[(i, l)] += hw * ci * cl;
                    }
                }
            }
            // the barrier gradient at the central point is the KKT
            // stationarity residual with multipliers mu/s
            let stationarity_inf = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            if stationarity_inf <= 1e-10 * grad_obj_inf.max(1.0) {
                break;
            }

            let g_vec = DVector::from_column_slice(&grad);
            let mut ridge = 0.0;
            let direction = loop {
                let h_try = if ridge > 0.0 {
                    let mut h = hess.clone();
                    for i in 0..n {
                        h[(i, i)] += ridge;
                    }
                    h
                } else {
                    hess.clone()
                };
                match Cholesky::new(h_try) {
                    Some(chol) => break chol.solve(&(-&g_vec)),
                    None => {
                        let diag_scale = (0..n).map(|i| hess[(i, i)].abs()).fold(1e-300, f64::max);
                        ridge = if ridge == 0.0 { 1e-12 * diag_scale } else { ridge * 100.0 };
                        if ridge > 1e6 * diag_scale {
                            return Err(SolveError::SolverStall {
                                iterations: total_newton,
                            });
                        }
                    }
                }
            };
            let d: Vec<f64> = direction.iter().copied().collect();
            let slope: f64 = grad.iter().zip(&d).map(|(g, di)| g * di).sum();
            let decrement = -slope;
            let phi_x = barrier_value(&x, mu);
            if std::env::var_os("MACOFF_BARRIER_TRACE").is_some() {
                eprintln!(
                    "stage {stages} mu {mu:.3e} iter {stage_iters} phi {phi_x:.6e} decrement {decrement:.3e} stat {stationarity_inf:.3e}"
                );
            }
            if decrement <= 1e-13 * phi_x.abs().max(1.0) {
                break; // stage centered
            }
            // steps at the floating-point resolution stop making progress
            if decrement >= 0.99 * best_decrement {
                stagnant += 1;
                if stagnant >= 10 {
                    break;
                }
            } else {
                stagnant = 0;
                best_decrement = decrement;
            }

            // step to boundary, then backtrack under Armijo
            let mut theta: f64 = 1.0;
            for c in constraints {
                let along: f64 = c.coeffs.iter().map(|&(i, ci)| ci * d[i]).sum();
                if along > 0.0 {
                    theta = theta.min(0.99 * c.slack(&x) / along);
                }
            }
            let mut accepted = false;
            let mut trial = vec![0.0; n];
            while theta > 1e-18 {
                for i in 0..n {
                    trial[i] = x[i] + theta * d[i];
                }
                let phi_t = barrier_value(&trial, mu);
                if phi_t <= phi_x + opts.armijo_c * theta * slope {
                    if trial == x {
                        // step is below the floating-point resolution of x
                        accepted = false;
                    } else {
                        x.copy_from_slice(&trial);
                        accepted = true;
                    }
                    break;
                }
                theta *= opts.backtrack;
            }
            if !accepted {
                // no representable step along a descent direction at this mu
                break;
            }
            let _ = grad_obj_inf;
        }

        f_x = obj.value(&x);
        let gap_tol = 1e-10 * opts.gap_user_scale * f_x.abs().max(1.0);
        if m as f64 * mu <= gap_tol {
            break;
        }
        mu /= opts.mu_reduction;
        if stages > 120 {
            return Err(SolveError::SolverStall {
                iterations: total_newton,
            });
        }
    }

    // KKT certificate. The raw barrier multipliers mu/s_j cannot witness
    // stationarity below roughly lambda*ulp(x)/s, so the multipliers of the
    // near-active constraints are refined by least squares before the
    // residual is measured.
    grad.iter_mut().for_each(|g| *g = 0.0);
    obj.gradient(&x, &mut grad);
    let grad_scale = grad.iter().fold(1.0f64, |a, g| a.max(g.abs()));
    let mut multipliers: Vec<f64> = constraints.iter().map(|c| mu / c.slack(&x)).collect();
    let lambda_max = multipliers.iter().fold(0.0f64, |a, &l| a.max(l));
    let mut active: Vec<usize> = (0..m)
        .filter(|&j| multipliers[j] >= 1e-8 * lambda_max)
        .collect();
    // Non-negative least squares on the near-active rows by active-set
    // descent: solve, drop the most negative multiplier, repeat.
    while !active.is_empty() && active.len() <= n {
        let k = active.len();
        let mut ata = DMatrix::zeros(k, k);
        let mut atb = DVector::zeros(k);
        for (r, &j) in active.iter().enumerate() {
            for (c2, &l) in active.iter().enumerate() {
                let mut acc = 0.0;
                for &(i, ci) in &constraints[j].coeffs {
                    for &(i2, cl) in &constraints[l].coeffs {
                        if i == i2 {
                            acc += ci * cl;
                        }
                    }
                }
                ata[(r, c2)] = acc;
            }
            let mut acc = 0.0;
            for &(i, ci) in &constraints[j].coeffs {
                acc += ci * grad[i];
            }
            atb[r] = -acc;
        }
        let ridge = 1e-14 * (0..k).map(|i| ata[(i, i)]).fold(0.0f64, f64::max);
        for i in 0..k {
            ata[(i, i)] += ridge;
        }
        let Some(chol) = Cholesky::new(ata) else { break };
        let refined = chol.solve(&atb);
        let (worst, worst_val) = refined
            .iter()
            .enumerate()
            .fold((0usize, f64::INFINITY), |acc, (i, &v)| {
                if v < acc.1 {
                    (i, v)
                } else {
                    acc
                }
            });
        if worst_val >= 0.0 {
            for (r, &j) in active.iter().enumerate() {
                multipliers[j] = refined[r];
            }
            break;
        }
        active.remove(worst);
    }
    let mut stationarity = grad.clone();
    let mut comp_gap = 0.0;
    for (j, c) in constraints.iter().enumerate() {
        for &(i, ci) in &c.coeffs {
            stationarity[i] += multipliers[j] * ci;
        }
        comp_gap += multipliers[j] * c.slack(&x);
    }
    let stat_rel = stationarity.iter().fold(0.0f64, |a, r| a.max(r.abs())) / grad_scale;
    let comp_rel = comp_gap / f_x.abs().max(1.0);
    Ok(BarrierSolution {
        objective: f_x,
        kkt_residual: stat_rel.max(comp_rel),
        newton_iterations: total_newton,
        x,
    })
}
