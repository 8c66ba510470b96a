//! Independent brute-force verifiers. Everything here recomputes objectives
//! and constraints directly from the problem data so that it shares no code
//! path with the solvers it checks.

use crate::error::{Result, SolveError};
use crate::model::{effective_latencies, SystemParams, UserTask};

/// Hard cap for the vertex-enumeration LP.
pub const LP_MAX_USERS: usize = 5;
/// Hard cap for the tightness audit (2^K subset enumeration).
pub const AUDIT_MAX_USERS: usize = 12;

/// The power feasibility region of the multiple-access channel for fixed
/// rates: one linear constraint per non-empty user subset,
/// sum_{i in N} alpha_i P_i >= 2^(sum_{i in N} R_i) - 1, plus P >= 0.
#[derive(Debug, Clone)]
pub struct PowerPolytope {
    /// Number of users (variables).
    pub dim: usize,
    /// Dense coefficient row per subset mask (index = mask - 1).
    pub rows: Vec<[f64; LP_MAX_USERS]>,
    /// Right-hand side per subset mask.
    pub rhs: Vec<f64>,
}

impl PowerPolytope {
    pub fn new(
        offload_set: &[usize],
        rates: &[f64],
        users: &[UserTask],
        params: &SystemParams,
    ) -> Result<Self> {
        let dim = offload_set.len();
        if dim == 0 || dim > LP_MAX_USERS {
            return Err(SolveError::TooLarge(format!(
                "vertex enumeration supports 1..={LP_MAX_USERS} users, got {dim}"
            )));
        }
        let alpha: Vec<f64> = offload_set.iter().map(|&k| users[k].alpha(params)).collect();
        let n_masks = (1usize << dim) - 1;
        let mut rows = Vec::with_capacity(n_masks);
        let mut rhs = Vec::with_capacity(n_masks);
        for mask in 1..=n_masks {
            let mut row = [0.0; LP_MAX_USERS];
            let mut rate_sum = 0.0;
            for i in 0..dim {
                if mask & (1 << i) != 0 {
                    row[i] = alpha[i];
                    rate_sum += rates[i];
                }
            }
            rows.push(row);
            rhs.push(rate_sum.exp2() - 1.0);
        }
        Ok(PowerPolytope { dim, rows, rhs })
    }

    /// Relative slack of every subset constraint at `powers`; negative slack
    /// means violation.
    pub fn min_relative_slack(&self, powers: &[f64]) -> f64 {
        let mut worst = f64::INFINITY;
        for (row, &rhs) in self.rows.iter().zip(&self.rhs) {
            let lhs: f64 = (0..self.dim).map(|i| row[i] * powers[i]).sum();
            let scale = 1.0 + rhs;
            worst = worst.min((lhs - rhs) / scale);
        }
        worst
    }
}

/// Minimizes sum B_i/R_i * P_i over the power polytope by enumerating every
/// candidate vertex: each choice of `dim` constraints from the subset
/// constraints and the non-negativity facets. Returns the optimal powers
/// (parallel to `offload_set`) and the objective.
pub fn lp_min_energy(
    offload_set: &[usize],
    rates: &[f64],
    users: &[UserTask],
    params: &SystemParams,
) -> Result<(Vec<f64>, f64)> {
    let polytope = PowerPolytope::new(offload_set, rates, users, params)?;
    let dim = polytope.dim;
    let cost: Vec<f64> = offload_set
        .iter()
        .zip(rates)
        .map(|(&k, &r)| users[k].bits / r)
        .collect();

    // Constraint list: subset constraints first, then P_i >= 0 facets.
    let n_subset = polytope.rows.len();
    let n_total = n_subset + dim;

    let mut search = BasisSearch {
        polytope: &polytope,
        cost: &cost,
        dim,
        n_subset,
        n_total,
        echelon: [[0.0; LP_MAX_USERS + 1]; LP_MAX_USERS],
        pivot_col: [usize::MAX; LP_MAX_USERS],
        best: None,
    };
    search.descend(0, 0);

    match search.best {
        Some((point, obj)) => Ok((point[..dim].to_vec(), obj)),
        None => Err(SolveError::Degenerate),
    }
}

/// Depth-first enumeration of constraint bases with incremental row-echelon
/// elimination: each chosen row is reduced against the pivots above it once,
/// and subtrees rooted at a linearly dependent row are skipped outright.
struct BasisSearch<'a> {
    polytope: &'a PowerPolytope,
    cost: &'a [f64],
    dim: usize,
    n_subset: usize,
    n_total: usize,
    /// Reduced rows, columns 0..dim hold coefficients, column dim the rhs.
    echelon: [[f64; LP_MAX_USERS + 1]; LP_MAX_USERS],
    pivot_col: [usize; LP_MAX_USERS],
    best: Option<([f64; LP_MAX_USERS], f64)>,
}

impl BasisSearch<'_> {
    fn descend(&mut self, start: usize, depth: usize) {
        if depth == self.dim {
            self.visit_leaf();
            return;
        }
        for c in start..=(self.n_total - (self.dim - depth)) {
            // load row c into the work slot
            let mut w = [0.0f64; LP_MAX_USERS + 1];
            if c < self.n_subset {
                w[..self.dim].copy_from_slice(&self.polytope.rows[c][..self.dim]);
                w[self.dim] = self.polytope.rhs[c];
            } else {
                w[c - self.n_subset] = 1.0;
            }
            // eliminate against pivots above
            for j in 0..depth {
                let p = self.pivot_col[j];
                let factor = w[p] / self.echelon[j][p];
                if factor != 0.0 {
                    for col in 0..=self.dim {
                        w[col] -= factor * self.echelon[j][col];
                    }
                    w[p] = 0.0;
                }
            }
            // pick the largest remaining column as pivot
            let mut piv = usize::MAX;
            let mut piv_abs = 0.0f64;
            for col in 0..self.dim {
                if !self.pivot_col[..depth].contains(&col) {
                    let v = w[col].abs();
                    if v > piv_abs {
                        piv = col;
                        piv_abs = v;
                    }
                }
            }
            if piv == usize::MAX || piv_abs < 1e-300 {
                continue; // row dependent on the pivots above: subtree is singular
            }
            self.echelon[depth] = w;
            self.pivot_col[depth] = piv;
            self.descend(c + 1, depth + 1);
        }
        self.pivot_col[depth] = usize::MAX;
    }

    fn visit_leaf(&mut self) {
        // back-substitution in reverse depth order; the last row holds only
        // its own pivot column
        let dim = self.dim;
        let mut x = [0.0f64; LP_MAX_USERS];
        let mut solved = [false; LP_MAX_USERS];
        for j in (0..dim).rev() {
            let p = self.pivot_col[j];
            let mut acc = self.echelon[j][dim];
            for col in 0..dim {
                if col != p && solved[col] {
                    acc -= self.echelon[j][col] * x[col];
                }
            }
            x[p] = acc / self.echelon[j][p];
            solved[p] = true;
        }
        if !x[..dim].iter().all(|v| v.is_finite()) {
            return;
        }
        if is_feasible(self.polytope, &x, dim) {
            let obj: f64 = (0..dim).map(|i| self.cost[i] * x[i]).sum();
            let better = match &self.best {
                Some((_, cur)) => obj < *cur,
                None => true,
            };
            if better {
                self.best = Some((x, obj));
            }
        }
    }
}

fn is_feasible(polytope: &PowerPolytope, point: &[f64; LP_MAX_USERS], dim: usize) -> bool {
    let p_scale = 1.0 + point[..dim].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..dim {
        if point[i] < -1e-9 * p_scale {
            return false;
        }
    }
    // walk the subset constraints from the largest right-hand side down;
    // infeasible candidates usually fail there first
    for (row, &rhs) in polytope.rows.iter().zip(&polytope.rhs).rev() {
        let lhs: f64 = (0..dim).map(|i| row[i] * point[i]).sum();
        if lhs < rhs - 1e-9 * (1.0 + rhs) {
            return false;
        }
    }
    true
}

/// Number of capacity constraints per class (constraints involving exactly
/// `class` users, 1-indexed) that hold with equality at the given powers.
pub fn class_tightness_audit(
    offload_set: &[usize],
    rates: &[f64],
    powers: &[f64],
    users: &[UserTask],
    params: &SystemParams,
) -> Result<Vec<usize>> {
    let dim = offload_set.len();
    if dim == 0 || dim > AUDIT_MAX_USERS {
        return Err(SolveError::TooLarge(format!(
            "tightness audit supports 1..={AUDIT_MAX_USERS} users, got {dim}"
        )));
    }
    let alpha: Vec<f64> = offload_set.iter().map(|&k| users[k].alpha(params)).collect();
    let mut counts = vec![0usize; dim];
    for mask in 1usize..(1 << dim) {
        let mut rate_sum = 0.0;
        let mut power_sum = 0.0;
        for i in 0..dim {
            if mask & (1 << i) != 0 {
                rate_sum += rates[i];
                power_sum += alpha[i] * powers[i];
            }
        }
        let lhs = rate_sum.exp2();
        let rhs = 1.0 + power_sum;
        if (rhs - lhs).abs() <= 1e-9 * lhs {
            counts[mask.count_ones() as usize - 1] += 1;
        }
    }
    Ok(counts)
}

// ---------------------------------------------------------------------------
// Grid search oracles for the partial and TDMA problems
// ---------------------------------------------------------------------------

/// Result of a grid search: the best point and its objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMinimum {
    pub point: Vec<f64>,
    pub objective: f64,
}

/// Lattice search with window refinement. Each round evaluates a full
/// lattice of `points` per axis over the current window, then shrinks the
/// window around the incumbent (clamped to the original box). `f` returns
/// `f64::INFINITY` for infeasible points.
fn zoom_grid_min(
    f: &mut dyn FnMut(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    points: usize,
    rounds: usize,
) -> GridMinimum {
    let dim = lo.len();
    assert!(points >= 2);
    let mut win_lo = lo.to_vec();
    let mut win_hi = hi.to_vec();
    let mut best_x = vec![0.0; dim];
    for d in 0..dim {
        best_x[d] = 0.5 * (lo[d] + hi[d]);
    }
    let mut best_f = f64::INFINITY;

    let mut x = vec![0.0; dim];
    let mut idx = vec![0usize; dim];
    for _round in 0..rounds {
        let step: Vec<f64> = (0..dim)
            .map(|d| (win_hi[d] - win_lo[d]) / (points - 1) as f64)
            .collect();
        idx.iter_mut().for_each(|i| *i = 0);
        loop {
            for d in 0..dim {
                x[d] = win_lo[d] + step[d] * idx[d] as f64;
            }
            let v = f(&x);
            if v < best_f {
                best_f = v;
                best_x.copy_from_slice(&x);
            }
            // odometer increment
            let mut d = 0;
            loop {
                idx[d] += 1;
                if idx[d] < points {
                    break;
                }
                idx[d] = 0;
                d += 1;
                if d == dim {
                    break;
                }
            }
            if d == dim {
                break;
            }
        }
        // shrink the window to +/- 2.5 cells around the incumbent
        for d in 0..dim {
            let half = 2.5 * step[d];
            win_lo[d] = (best_x[d] - half).max(lo[d]);
            win_hi[d] = (best_x[d] + half).min(hi[d]);
            if win_hi[d] <= win_lo[d] {
                win_hi[d] = win_lo[d] + step[d] * 1e-6;
            }
        }
    }
    GridMinimum {
        point: best_x,
        objective: best_f,
    }
}

/// Picks lattice size and refinement rounds so the effective per-axis
/// resolution reaches at least `resolution`.
fn plan_grid(dim: usize, resolution: usize) -> (usize, usize) {
    let points = match dim {
        1 => 2001,
        2 => 201,
        _ => 61,
    };
    let shrink = (points - 1) as f64 / 5.0;
    let mut rounds = 1;
    let mut effective = (points - 1) as f64;
    while effective < resolution as f64 && rounds < 12 {
        effective *= shrink;
        rounds += 1;
    }
    (points, rounds)
}

/// Brute-force minimum of the TDMA complete-offloading problem for one or
/// two users, searching over per-user transmit durations in seconds.
pub fn grid_complete_tdma(
    offload_set: &[usize],
    users: &[UserTask],
    params: &SystemParams,
    resolution: usize,
) -> Result<GridMinimum> {
    if offload_set.is_empty() || offload_set.len() > 2 {
        return Err(SolveError::TooLarge(
            "TDMA complete grid oracle supports 1 or 2 users".into(),
        ));
    }
    let mut set = offload_set.to_vec();
    set.sort_by(|&a, &b| {
        let la = effective_latencies(&users[a], params).complete;
        let lb = effective_latencies(&users[b], params).complete;
        la.partial_cmp(&lb).unwrap().then(a.cmp(&b))
    });
    let budget: Vec<f64> = set
        .iter()
        .map(|&k| effective_latencies(&users[k], params).complete)
        .collect();
    if budget.iter().any(|&b| b <= 0.0) {
        return Err(SolveError::Infeasible(
            "a user has no transmission budget".into(),
        ));
    }
    let ts = params.symbol_interval;
    let term = |k: usize, t: f64| -> f64 {
        // (t / (T_s alpha)) (2^(T_s B / t) - 1)
        let alpha = users[set[k]].alpha(params);
        let exponent = ts * users[set[k]].bits / t;
        if exponent > 1020.0 {
            return f64::INFINITY;
        }
        t / (ts * alpha) * (exponent.exp2() - 1.0)
    };

    let (points, rounds) = plan_grid(1, resolution);
    if set.len() == 1 {
        let lo = [budget[0] * 1e-6];
        let hi = [budget[0]];
        let mut f = |x: &[f64]| term(0, x[0]);
        Ok(zoom_grid_min(&mut f, &lo, &hi, points, rounds))
    } else {
        // The objective strictly decreases in t_2, so the second cumulative
        // constraint binds at any optimum: t_2 = budget_2 - t_1.
        let lo = [budget[0] * 1e-6];
        let hi = [budget[0]];
        let mut f = |x: &[f64]| {
            let t1 = x[0];
            let t2 = budget[1] - t1;
            if t2 <= 0.0 {
                return f64::INFINITY;
            }
            term(0, t1) + term(1, t2)
        };
        Ok(zoom_grid_min(&mut f, &lo, &hi, points, rounds))
    }
}

/// Brute-force minimum of the FullMA partial-offloading problem for one or
/// two users: a dense lattice over the rate brackets; the offloaded fraction
/// and powers are recovered in closed form at every lattice point, and for
/// two users both decode orders are evaluated.
pub fn grid_partial_fullma(
    users: &[UserTask],
    params: &SystemParams,
    resolution: usize,
) -> Result<GridMinimum> {
    if users.is_empty() || users.len() > 2 {
        return Err(SolveError::TooLarge(
            "FullMA partial grid oracle supports 1 or 2 users".into(),
        ));
    }
    let ts = params.symbol_interval;
    let dc = params.edge_seconds_per_bit;
    let l_bar: Vec<f64> = users
        .iter()
        .map(|u| effective_latencies(u, params).partial)
        .collect();
    if l_bar.iter().any(|&l| l <= 0.0) {
        return Err(SolveError::Infeasible(
            "a user has no transmission budget".into(),
        ));
    }
    // upper rate limit: gamma(R) <= 1
    let r_hi: Vec<f64> = users
        .iter()
        .zip(&l_bar)
        .map(|(u, &lb)| {
            let denom = lb - dc * u.bits;
            if denom > 0.0 {
                ts * u.bits / denom
            } else {
                60.0
            }
        })
        .collect();
    // per-user transmit factor (2^R - 1) * L_bar / (alpha (T_s + dc R)) and
    // local residual energy
    let tx = |k: usize, r: f64| -> f64 {
        l_bar[k] / (users[k].alpha(params) * (ts + dc * r)) * (r.exp2() - 1.0)
    };
    let local = |k: usize, r: f64| -> f64 {
        let retained = users[k].bits - l_bar[k] * r / (ts + dc * r);
        users[k].chip_constant / (users[k].latency * users[k].latency)
            * retained.max(0.0).powi(3)
    };

    if users.len() == 1 {
        let (points, rounds) = plan_grid(1, resolution);
        let mut f = |x: &[f64]| tx(0, x[0]) + local(0, x[0]);
        Ok(zoom_grid_min(&mut f, &[0.0], &[r_hi[0]], points, rounds))
    } else {
        let points = resolution.clamp(101, 2001);
        let mut f = |x: &[f64]| {
            let (r0, r1) = (x[0], x[1]);
            let (e0, e1) = (tx(0, r0), tx(1, r1));
            // both decode orders; the later-decoded user pays no
            // interference factor
            let order_a = e0 + e1 * r0.exp2();
            let order_b = e1 + e0 * r1.exp2();
            order_a.min(order_b) + local(0, r0) + local(1, r1)
        };
        Ok(zoom_grid_min(
            &mut f,
            &[0.0, 0.0],
            &[r_hi[0], r_hi[1]],
            points,
            1,
        ))
    }
}

/// Brute-force minimum of the TDMA partial-offloading problem for one or two
/// users, searching over offloaded bits and transmit durations (durations in
/// channel uses). For two users the trailing user's cumulative constraint is
/// binding (the objective strictly decreases in its duration), which reduces
/// the search to three dimensions.
pub fn grid_partial_tdma(
    users: &[UserTask],
    params: &SystemParams,
    resolution: usize,
) -> Result<GridMinimum> {
    if users.is_empty() || users.len() > 2 {
        return Err(SolveError::TooLarge(
            "TDMA partial grid oracle supports 1 or 2 users".into(),
        ));
    }
    let ts = params.symbol_interval;
    let dc = params.edge_seconds_per_bit;
    let mut order: Vec<usize> = (0..users.len()).collect();
    order.sort_by(|&a, &b| {
        let la = effective_latencies(&users[a], params).partial;
        let lb = effective_latencies(&users[b], params).partial;
        la.partial_cmp(&lb).unwrap().then(a.cmp(&b))
    });
    let l_bar: Vec<f64> = order
        .iter()
        .map(|&k| effective_latencies(&users[k], params).partial)
        .collect();
    if l_bar.iter().any(|&l| l <= 0.0) {
        return Err(SolveError::Infeasible(
            "a user has no transmission budget".into(),
        ));
    }
    let term = |k: usize, bits: f64, t: f64| -> f64 {
        let u = &users[order[k]];
        let local = u.chip_constant / (u.latency * u.latency) * (u.bits - bits).powi(3);
        if bits <= 0.0 {
            return local;
        }
        let exponent = bits / t;
        if exponent > 1020.0 {
            return f64::INFINITY;
        }
        t * (exponent.exp2() - 1.0) / u.alpha(params) + local
    };

    if users.len() == 1 {
        let (points, rounds) = plan_grid(2, resolution.min(100_000));
        let b_max = users[order[0]].bits;
        let t_max = l_bar[0] / ts;
        let mut f = |x: &[f64]| {
            let (bits, t) = (x[0], x[1]);
            if ts * t + dc * bits > l_bar[0] {
                return f64::INFINITY;
            }
            term(0, bits, t)
        };
        Ok(zoom_grid_min(
            &mut f,
            &[0.0, t_max * 1e-9],
            &[b_max, t_max],
            points,
            rounds,
        ))
    } else {
        let (points, rounds) = plan_grid(3, resolution);
        let b0_max = users[order[0]].bits;
        let b1_max = users[order[1]].bits;
        let t0_max = l_bar[0] / ts;
        let mut f = |x: &[f64]| {
            let (b0, b1, t0) = (x[0], x[1], x[2]);
            if ts * t0 + dc * b0 > l_bar[0] {
                return f64::INFINITY;
            }
            let t1 = (l_bar[1] - dc * b1) / ts - t0;
            if t1 <= 0.0 {
                return f64::INFINITY;
            }
            term(0, b0, t0) + term(1, b1, t1)
        };
        Ok(zoom_grid_min(
            &mut f,
            &[0.0, 0.0, t0_max * 1e-9],
            &[b0_max, b1_max, t0_max],
            points,
            rounds,
        ))
    }
}
