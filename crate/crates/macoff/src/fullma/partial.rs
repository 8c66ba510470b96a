//! Stationary-point solver for partial offloading over the multiple-access
//! channel. The offloaded fraction and the powers have closed forms in the
//! rates, which leaves a coordinate-descent search over the rates; each
//! coordinate subproblem is quasi-convex and is solved by bisection on the
//! sign of the derivative factor.

use std::f64::consts::LN_2;

use crate::error::{Result, SolveError};
use crate::model::{
    effective_latencies, local_energy_dvs, Allocation, EnergyReport, SystemParams, UserAllocation,
    UserEnergy, UserTask,
};

/// Rate ceiling used when the fraction constraint never binds.
pub const RATE_CAP: f64 = 60.0;

/// Feasible rate interval of one user, from the fraction constraint
/// 0 <= gamma(R) <= 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBracket {
    pub lo: f64,
    pub hi: f64,
    /// True when gamma stays below 1 for every rate and `hi` is the cap.
    pub capped: bool,
}

/// Rate interval over which the offloaded fraction stays in [0,1]:
/// hi = T_s*B/(Lbar - delta_c*B) when that denominator is positive,
/// otherwise the fraction never reaches 1 and the interval is capped.
pub fn rate_bracket(user: &UserTask, params: &SystemParams) -> Result<RateBracket> {
    let l_bar = effective_latencies(user, params).partial;
    if l_bar <= 0.0 {
        return Err(SolveError::InfeasibleUser {
            user: usize::MAX,
            latency: l_bar,
        });
    }
    let denom = l_bar - params.edge_seconds_per_bit * user.bits;
    if denom > 0.0 {
        Ok(RateBracket {
            lo: 0.0,
            hi: params.symbol_interval * user.bits / denom,
            capped: false,
        })
    } else {
        Ok(RateBracket {
            lo: 0.0,
            hi: RATE_CAP,
            capped: true,
        })
    }
}

/// Fraction of the task offloaded when transmitting at `rate` and using the
/// whole latency budget: gamma = Lbar*R/(B*(T_s + delta_c*R)). Clamps
/// roundoff within 1e-12 and rejects anything further outside [0,1].
pub fn gamma_opt(rate: f64, user: &UserTask, params: &SystemParams) -> Result<f64> {
    let l_bar = effective_latencies(user, params).partial;
    let gamma = l_bar * rate / (user.bits * (params.symbol_interval + params.edge_seconds_per_bit * rate));
    if !(-1e-12..=1.0 + 1e-12).contains(&gamma) {
        return Err(SolveError::OutOfBracket { gamma });
    }
    Ok(gamma.clamp(0.0, 1.0))
}

/// Precomputed per-user data for the rate search. Users whose partial
/// budget is not positive are fixed to local execution and excluded from
/// the channel.
#[derive(Debug, Clone)]
pub struct PartialInstance {
    /// Global indices of users taking part in the channel.
    pub active: Vec<usize>,
    alpha: Vec<f64>,
    l_bar: Vec<f64>,
    bits: Vec<f64>,
    chip_over_l2: Vec<f64>,
    pub brackets: Vec<RateBracket>,
    /// Users fixed to gamma = 0.
    pub excluded: Vec<usize>,
    excluded_local: f64,
    symbol_interval: f64,
    edge_seconds_per_bit: f64,
}

impl PartialInstance {
    /// Builds the instance; errors if no user can transmit at all.
    pub fn new(users: &[UserTask], params: &SystemParams) -> Result<Self> {
        let mut active = Vec::new();
        let mut excluded = Vec::new();
        let mut excluded_local = 0.0;
        for (k, user) in users.iter().enumerate() {
            if effective_latencies(user, params).partial > 0.0 {
                active.push(k);
            } else {
                excluded.push(k);
                excluded_local += local_energy_dvs(user, 0.0);
            }
        }
        if active.is_empty() {
            return Err(SolveError::Infeasible(
                "no user has a positive transmission budget".into(),
            ));
        }
        let brackets = active
            .iter()
            .map(|&k| rate_bracket(&users[k], params))
            .collect::<Result<Vec<_>>>()?;
        Ok(PartialInstance {
            alpha: active.iter().map(|&k| users[k].alpha(params)).collect(),
            l_bar: active
                .iter()
                .map(|&k| effective_latencies(&users[k], params).partial)
                .collect(),
            bits: active.iter().map(|&k| users[k].bits).collect(),
            chip_over_l2: active
                .iter()
                .map(|&k| users[k].chip_constant / (users[k].latency * users[k].latency))
                .collect(),
            brackets,
            active,
            excluded,
            excluded_local,
            symbol_interval: params.symbol_interval,
            edge_seconds_per_bit: params.edge_seconds_per_bit,
        })
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    fn time_per_bit(&self, i: usize, rate: f64) -> f64 {
        let _ = i;
        self.symbol_interval + self.edge_seconds_per_bit * rate
    }

    /// gamma for active user `i` at `rate`.
    pub fn fraction(&self, i: usize, rate: f64) -> f64 {
        (self.l_bar[i] * rate / (self.bits[i] * self.time_per_bit(i, rate))).clamp(0.0, 1.0)
    }

    /// Per-user transmit factor (2^R - 1) * Lbar/(alpha*(T_s + delta_c*R)),
    /// the energy the user would pay if decoded last.
    fn base_energy(&self, i: usize, rate: f64) -> f64 {
        self.l_bar[i] / (self.alpha[i] * self.time_per_bit(i, rate)) * (rate * LN_2).exp_m1()
    }

    fn local_energy(&self, i: usize, rate: f64) -> f64 {
        let retained = self.bits[i] - self.l_bar[i] * rate / self.time_per_bit(i, rate);
        self.chip_over_l2[i] * retained.max(0.0).powi(3)
    }

    /// Decode order: active-list positions sorted by non-increasing
    /// Lbar/(alpha*(T_s + delta_c*R)), ties by ascending user index. The
    /// position at the front is decoded last.
    pub fn sort_order(&self, rates: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_active()).collect();
        let key: Vec<f64> = (0..self.n_active())
            .map(|i| self.l_bar[i] / (self.alpha[i] * self.time_per_bit(i, rates[i])))
            .collect();
        order.sort_by(|&a, &b| {
            key[b]
                .partial_cmp(&key[a])
                .unwrap()
                .then(self.active[a].cmp(&self.active[b]))
        });
        order
    }

    /// Total transmit energy for the given rates under the given order.
    pub fn transmit_energy(&self, rates: &[f64], order: &[usize]) -> f64 {
        let mut rate_acc: f64 = 0.0;
        let mut total = 0.0;
        for &i in order {
            total += self.base_energy(i, rates[i]) * rate_acc.exp2();
            rate_acc += rates[i];
        }
        total
    }

    /// Full objective: transmit energy plus every user's local energy.
    pub fn objective(&self, rates: &[f64], order: &[usize]) -> f64 {
        let locals: f64 = (0..self.n_active())
            .map(|i| self.local_energy(i, rates[i]))
            .sum();
        self.transmit_energy(rates, order) + locals + self.excluded_local
    }

    /// Closed-form powers for the given rates and order, parallel to the
    /// active list.
    pub fn powers(&self, rates: &[f64], order: &[usize]) -> Vec<f64> {
        let mut powers = vec![0.0; self.n_active()];
        let mut rate_acc: f64 = 0.0;
        for &i in order {
            powers[i] = (rates[i] * LN_2).exp_m1() / self.alpha[i] * rate_acc.exp2();
            rate_acc += rates[i];
        }
        powers
    }

    /// Weights of the coordinate subproblem at position `pos` of `order`:
    /// the interference factor of the user's own term and the accumulated
    /// sensitivity of later-position terms to this user's rate.
    pub fn coordinate_weights(&self, pos: usize, rates: &[f64], order: &[usize]) -> (f64, f64) {
        let i = order[pos];
        let mut before: f64 = 0.0;
        for &j in &order[..pos] {
            before += rates[j];
        }
        let lambda = self.l_bar[i] / self.alpha[i] * before.exp2();
        let mut omega = 0.0;
        let mut acc = before;
        for &j in &order[pos + 1..] {
            omega += self.base_energy(j, rates[j]) * acc.exp2();
            acc += rates[j];
        }
        (lambda, omega)
    }

    /// Objective restricted to one coordinate (dropping terms independent
    /// of it): lambda*(2^R-1)/(T_s+delta_c*R) + omega*2^R + local(R).
    pub fn coordinate_objective(&self, i: usize, lambda: f64, omega: f64, rate: f64) -> f64 {
        lambda / self.time_per_bit(i, rate) * (rate * LN_2).exp_m1()
            + omega * rate.exp2()
            + self.local_energy(i, rate)
    }

    /// Derivative factor of the coordinate objective: df/dR equals
    /// `rate_derivative_factor / (T_s + delta_c*R)^2` and the factor is
    /// non-decreasing over the bracket.
    pub fn rate_derivative_factor(&self, i: usize, lambda: f64, omega: f64, rate: f64) -> f64 {
        let ts = self.symbol_interval;
        let dc = self.edge_seconds_per_bit;
        let tpb = self.time_per_bit(i, rate);
        let e = rate.exp2();
        let retained = self.bits[i] - self.l_bar[i] * rate / tpb;
        lambda * (LN_2 * tpb * e - dc * (e - 1.0)) + omega * LN_2 * tpb * tpb * e
            - 3.0 * self.l_bar[i] * ts * self.chip_over_l2[i] * retained * retained
    }

    /// Analytic slope of the derivative factor; non-negative on the bracket.
    pub fn rate_derivative_factor_slope(
        &self,
        i: usize,
        lambda: f64,
        omega: f64,
        rate: f64,
    ) -> f64 {
        let ts = self.symbol_interval;
        let dc = self.edge_seconds_per_bit;
        let tpb = self.time_per_bit(i, rate);
        let e = rate.exp2();
        let retained = self.bits[i] - self.l_bar[i] * rate / tpb;
        lambda * LN_2 * LN_2 * tpb * e
            + omega * LN_2 * (LN_2 * tpb * tpb + 2.0 * dc * tpb) * e
            + 6.0 * self.l_bar[i] * ts * self.chip_over_l2[i] * retained * self.l_bar[i] * ts
                / (tpb * tpb)
    }

    /// Magnitude scale of the derivative factor at `rate`, for relative
    /// stopping and comparison tests.
    pub fn rate_derivative_factor_scale(&self, i: usize, lambda: f64, omega: f64, rate: f64) -> f64 {
        let ts = self.symbol_interval;
        let dc = self.edge_seconds_per_bit;
        let tpb = self.time_per_bit(i, rate);
        let e = if rate < 1020.0 { rate.exp2() } else { f64::MAX };
        (lambda * (LN_2 * tpb * e + dc * (e - 1.0)))
            + omega * LN_2 * tpb * tpb * e
            + 3.0 * self.l_bar[i] * ts * self.chip_over_l2[i] * self.bits[i] * self.bits[i]
            + 1e-300
    }

    /// Minimizes the coordinate objective over the bracket by bisection on
    /// the sign of the derivative factor, falling back to an endpoint when
    /// the factor clearly keeps one sign. An endpoint value inside the
    /// cancellation noise of the factor's terms does not decide the sign;
    /// bisection resolves those cusps where the terms separate.
    pub fn line_search_rate(&self, i: usize, lambda: f64, omega: f64) -> f64 {
        let bracket = self.brackets[i];
        let (mut lo, mut hi) = (bracket.lo, bracket.hi);
        let f_lo = self.rate_derivative_factor(i, lambda, omega, lo);
        let noise_lo =
            64.0 * f64::EPSILON * self.rate_derivative_factor_scale(i, lambda, omega, lo);
        if f_lo >= noise_lo {
            return lo;
        }
        let f_hi = self.rate_derivative_factor(i, lambda, omega, hi);
        if f_hi.is_finite() {
            let noise_hi =
                64.0 * f64::EPSILON * self.rate_derivative_factor_scale(i, lambda, omega, hi);
            if f_hi <= -noise_hi {
                return hi;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let f_mid = self.rate_derivative_factor(i, lambda, omega, mid);
            if !f_mid.is_finite() || f_mid > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-14 * hi.max(1e-300) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Solution of the partial-offloading search.
#[derive(Debug, Clone)]
pub struct PartialSolution {
    pub allocation: Allocation,
    pub energy: EnergyReport,
    /// Outer iterations executed, counting the iteration that detected
    /// convergence.
    pub outer_iterations: usize,
    pub converged: bool,
    /// Objective after every accepted coordinate step.
    pub objective_steps: Vec<f64>,
    /// Objective after every outer iteration.
    pub objective_sweeps: Vec<f64>,
    /// Decode order as global user indices (front decoded last).
    pub decode_order: Vec<usize>,
}

impl PartialSolution {
    /// Per-sweep objective trace as CSV.
    pub fn sweep_trace_csv(&self) -> String {
        let mut out = String::from("sweep,objective\n");
        for (i, obj) in self.objective_sweeps.iter().enumerate() {
            out.push_str(&format!("{i},{obj}\n"));
        }
        out
    }
}

const MAX_OUTER: usize = 50;
const REL_DECREASE_TOL: f64 = 1e-8;

fn monotone_tol(scale: f64) -> f64 {
    1e-10 * scale.abs().max(1.0)
}

/// Coordinate descent over the rates with closed-form fractions and powers.
/// `init_rates` (parallel to the instance's active users) overrides the
/// default bracket-midpoint start.
pub fn solve_partial_fullma(
    users: &[UserTask],
    params: &SystemParams,
    init_rates: Option<&[f64]>,
) -> Result<PartialSolution> {
    let inst = PartialInstance::new(users, params)?;
    let n = inst.n_active();
    let mut rates: Vec<f64> = match init_rates {
        Some(r) => {
            if r.len() != n {
                return Err(SolveError::InvalidInput(format!(
                    "expected {n} initial rates, got {}",
                    r.len()
                )));
            }
            r.iter()
                .zip(&inst.brackets)
                .map(|(&v, b)| v.clamp(b.lo, b.hi))
                .collect()
        }
        None => inst
            .brackets
            .iter()
            .map(|b| b.hi.min(RATE_CAP) / 2.0)
            .collect(),
    };

    let mut order = inst.sort_order(&rates);
    let mut objective = inst.objective(&rates, &order);
    let mut steps = vec![objective];
    let mut sweeps = vec![objective];
    let mut outer = 0;
    let mut converged = false;

    while outer < MAX_OUTER {
        outer += 1;
        let sweep_start = objective;

        // re-sorting re-optimizes the decode order for the current rates
        let resorted = inst.sort_order(&rates);
        let resorted_obj = inst.objective(&rates, &resorted);
        if resorted_obj > objective + monotone_tol(objective) {
            return Err(SolveError::NonMonotone {
                increase: resorted_obj - objective,
            });
        }
        order = resorted;
        objective = resorted_obj;

        for pos in 0..n {
            let i = order[pos];
            let (lambda, omega) = inst.coordinate_weights(pos, &rates, &order);
            let candidate = inst.line_search_rate(i, lambda, omega);
            let cur = inst.coordinate_objective(i, lambda, omega, rates[i]);
            let new = inst.coordinate_objective(i, lambda, omega, candidate);
            if new <= cur {
                rates[i] = candidate;
            }
            let stepped = inst.objective(&rates, &order);
            if stepped > objective + monotone_tol(objective) {
                return Err(SolveError::NonMonotone {
                    increase: stepped - objective,
                });
            }
            objective = stepped;
            steps.push(objective);
        }
        sweeps.push(objective);

        if sweep_start - objective < REL_DECREASE_TOL * sweep_start.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    // recover fractions, powers, and energies at the final rates
    let powers = inst.powers(&rates, &order);
    let mut allocation = Allocation::all_local(users.len());
    let mut energies = vec![UserEnergy::default(); users.len()];
    for (pos, &i) in order.iter().enumerate() {
        let k = inst.active[i];
        let gamma = gamma_opt(rates[i], &users[k], params)?;
        let channel_uses = if rates[i] > 0.0 {
            gamma * users[k].bits / rates[i]
        } else {
            0.0
        };
        allocation.users[k] = UserAllocation {
            rate: rates[i],
            power: powers[i],
            gamma,
            order_index: Some(pos),
        };
        energies[k] = UserEnergy {
            transmit: channel_uses * powers[i],
            local: local_energy_dvs(&users[k], gamma),
        };
    }
    for &k in &inst.excluded {
        energies[k].local = local_energy_dvs(&users[k], 0.0);
    }
    Ok(PartialSolution {
        allocation,
        energy: EnergyReport::from_per_user(energies),
        outer_iterations: outer,
        converged,
        objective_steps: steps,
        objective_sweeps: sweeps,
        decode_order: order.iter().map(|&i| inst.active[i]).collect(),
    })
}
