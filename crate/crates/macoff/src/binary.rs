//! Offloading-set selection for indivisible tasks: pruned greedy search,
//! exhaustive enumeration, and (randomized) rounding of the divisible
//! solution. All three work over either multiple-access scheme through the
//! complete-offloading solvers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolveError};
use crate::fullma;
use crate::model::{
    effective_latencies, local_energy_dvs, Allocation, EnergyReport, SystemParams, UserEnergy,
    UserTask,
};
use crate::tdma;

/// Guard for the exhaustive subset enumeration.
pub const EXHAUSTIVE_MAX_USERS: usize = 20;

/// Multiple-access scheme used by the complete-offloading subproblems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    FullMa,
    Tdma,
}

/// Transmission-energy-optimal allocation for one offload set under the
/// chosen scheme.
pub fn solve_complete(
    scheme: Scheme,
    offload_set: &[usize],
    users: &[UserTask],
    params: &SystemParams,
) -> Result<(Allocation, EnergyReport)> {
    match scheme {
        Scheme::FullMa => fullma::complete::solve_complete_fullma(offload_set, users, params),
        Scheme::Tdma => tdma::complete::solve_complete_tdma(offload_set, users, params),
    }
}

/// A binary offloading decision with its full energy accounting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OffloadDecision {
    /// Users that offload completely, ascending.
    pub offload_set: Vec<usize>,
    /// Users that compute locally, ascending.
    pub local_set: Vec<usize>,
    pub allocation: Allocation,
    /// Transmit energy of the offload set plus DVS local energy of the rest.
    pub total_energy: f64,
    pub energy: EnergyReport,
}

/// One explored candidate during a greedy round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateEval {
    pub user: usize,
    /// Transmit energy of the current set plus this user.
    pub offload_energy: f64,
    /// Offload energy plus local energy of everyone else.
    pub system_energy: f64,
}

/// One greedy round: exploration, pruning, selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GreedyIteration {
    pub candidates: Vec<CandidateEval>,
    /// Users removed this round because offloading them costs more than
    /// their local execution.
    pub pruned: Vec<usize>,
    pub selected: Option<usize>,
    /// Transmit energy of the offload set after the selection.
    pub offload_energy: f64,
    /// Total system energy after the selection.
    pub system_energy: f64,
}

/// Audit trail of a greedy run; serializable for offline inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GreedyTrace {
    /// Users excluded up front because they cannot meet their deadline.
    pub infeasible: Vec<usize>,
    pub iterations: Vec<GreedyIteration>,
}

fn local_energies(users: &[UserTask]) -> Vec<f64> {
    users.iter().map(|u| local_energy_dvs(u, 0.0)).collect()
}

fn decision_from_set(
    scheme: Scheme,
    offload_set: &[usize],
    users: &[UserTask],
    params: &SystemParams,
) -> Result<OffloadDecision> {
    let local_set: Vec<usize> = (0..users.len())
        .filter(|k| !offload_set.contains(k))
        .collect();
    if offload_set.is_empty() {
        let per_user: Vec<UserEnergy> = users
            .iter()
            .map(|u| UserEnergy {
                transmit: 0.0,
                local: local_energy_dvs(u, 0.0),
            })
            .collect();
        let energy = EnergyReport::from_per_user(per_user);
        return Ok(OffloadDecision {
            offload_set: Vec::new(),
            local_set,
            allocation: Allocation::all_local(users.len()),
            total_energy: energy.total,
            energy,
        });
    }
    let (allocation, tx_report) = solve_complete(scheme, offload_set, users, params)?;
    let mut per_user = tx_report.per_user;
    for &k in &local_set {
        per_user[k].local = local_energy_dvs(&users[k], 0.0);
    }
    let energy = EnergyReport::from_per_user(per_user);
    Ok(OffloadDecision {
        offload_set: offload_set.to_vec(),
        local_set,
        allocation,
        total_energy: energy.total,
        energy,
    })
}

/// Greedy search: each round solves the complete-offloading problem for
/// every undecided user added to the incumbent set, prunes users whose
/// offloading would cost more than their local execution, and admits the
/// user with the largest energy reduction. Never fails: at worst everyone
/// computes locally.
pub fn greedy_binary(
    users: &[UserTask],
    params: &SystemParams,
    scheme: Scheme,
) -> (OffloadDecision, GreedyTrace) {
    let e_loc = local_energies(users);
    let mut undecided: Vec<usize> = (0..users.len())
        .filter(|&k| effective_latencies(&users[k], params).complete > 0.0)
        .collect();
    let infeasible: Vec<usize> = (0..users.len())
        .filter(|&k| effective_latencies(&users[k], params).complete <= 0.0)
        .collect();
    let mut offload_set: Vec<usize> = Vec::new();
    let mut offload_energy = 0.0;
    let mut iterations = Vec::new();

    while !undecided.is_empty() {
        let mut candidates = Vec::with_capacity(undecided.len());
        for &k in &undecided {
            let mut set = offload_set.clone();
            set.push(k);
            set.sort_unstable();
            let e_off = match solve_complete(scheme, &set, users, params) {
                Ok((_, report)) => report.transmit_total,
                Err(_) => f64::INFINITY,
            };
            let locals: f64 = (0..users.len())
                .filter(|j| !set.contains(j))
                .map(|j| e_loc[j])
                .sum();
            candidates.push(CandidateEval {
                user: k,
                offload_energy: e_off,
                system_energy: e_off + locals,
            });
        }
        // prune: offloading k cannot beat computing k locally
        let pruned: Vec<usize> = candidates
            .iter()
            .filter(|c| offload_energy + e_loc[c.user] <= c.offload_energy)
            .map(|c| c.user)
            .collect();
        undecided.retain(|k| !pruned.contains(k));

        if undecided.is_empty() {
            iterations.push(GreedyIteration {
                candidates,
                pruned,
                selected: None,
                offload_energy,
                system_energy: offload_energy
                    + (0..users.len())
                        .filter(|j| !offload_set.contains(j))
                        .map(|j| e_loc[j])
                        .sum::<f64>(),
            });
            break;
        }

        // largest reduction, ties to the smallest user index
        let mut best: Option<(f64, usize, f64)> = None;
        for c in &candidates {
            if !undecided.contains(&c.user) {
                continue;
            }
            let reduction = offload_energy + e_loc[c.user] - c.offload_energy;
            match best {
                Some((r, _, _)) if reduction <= r => {}
                _ => best = Some((reduction, c.user, c.offload_energy)),
            }
        }
        let (_, chosen, chosen_energy) = best.expect("undecided set is non-empty");
        offload_set.push(chosen);
        offload_set.sort_unstable();
        undecided.retain(|&k| k != chosen);
        offload_energy = chosen_energy;
        iterations.push(GreedyIteration {
            candidates,
            pruned,
            selected: Some(chosen),
            offload_energy,
            system_energy: offload_energy
                + (0..users.len())
                    .filter(|j| !offload_set.contains(j))
                    .map(|j| e_loc[j])
                    .sum::<f64>(),
        });
    }

    let decision = decision_from_set(scheme, &offload_set, users, params)
        .expect("the selected set was solvable during exploration");
    (
        decision,
        GreedyTrace {
            infeasible,
            iterations,
        },
    )
}

/// Exhaustive search over every subset of the feasible users. Ties go to
/// the smaller offload set, then lexicographically.
pub fn exhaustive_binary(
    users: &[UserTask],
    params: &SystemParams,
    scheme: Scheme,
) -> Result<OffloadDecision> {
    if users.len() > EXHAUSTIVE_MAX_USERS {
        return Err(SolveError::TooLarge(format!(
            "exhaustive search is limited to {EXHAUSTIVE_MAX_USERS} users, got {}",
            users.len()
        )));
    }
    let feasible: Vec<usize> = (0..users.len())
        .filter(|&k| effective_latencies(&users[k], params).complete > 0.0)
        .collect();
    let e_loc = local_energies(users);
    let all_local_total: f64 = e_loc.iter().sum();

    let mut best_set: Vec<usize> = Vec::new();
    let mut best_total = all_local_total;
    for mask in 1u64..(1 << feasible.len()) {
        let set: Vec<usize> = feasible
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &k)| k)
            .collect();
        let e_off = match solve_complete(scheme, &set, users, params) {
            Ok((_, report)) => report.transmit_total,
            Err(_) => continue,
        };
        let total: f64 = e_off
            + (0..users.len())
                .filter(|j| !set.contains(j))
                .map(|j| e_loc[j])
                .sum::<f64>();
        let better = total < best_total
            || (total == best_total
                && (set.len() < best_set.len()
                    || (set.len() == best_set.len() && set < best_set)));
        if better {
            best_total = total;
            best_set = set;
        }
    }
    decision_from_set(scheme, &best_set, users, params)
}

/// How to round the divisible-task solution into an offload set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundingMode {
    /// Offload every user whose optimal fraction is at least one half.
    Deterministic,
    /// Evaluate the deterministic set plus `draws` sets sampled from
    /// independent Bernoulli(fraction) draws, and keep the best.
    Randomized { draws: usize },
}

/// Offload fractions of the divisible problem, solved per scheme on the
/// users that can transmit at all; everyone else gets fraction zero.
fn partial_fractions(users: &[UserTask], params: &SystemParams, scheme: Scheme) -> Vec<f64> {
    let transmittable: Vec<usize> = (0..users.len())
        .filter(|&k| effective_latencies(&users[k], params).partial > 0.0)
        .collect();
    let mut fractions = vec![0.0; users.len()];
    if transmittable.is_empty() {
        return fractions;
    }
    let sub: Vec<UserTask> = transmittable.iter().map(|&k| users[k]).collect();
    let allocation = match scheme {
        Scheme::FullMa => fullma::partial::solve_partial_fullma(&sub, params, None)
            .map(|s| s.allocation)
            .ok(),
        Scheme::Tdma => tdma::partial::solve_partial_tdma(&sub, params)
            .map(|(a, _)| a)
            .ok(),
    };
    if let Some(allocation) = allocation {
        for (i, &k) in transmittable.iter().enumerate() {
            fractions[k] = allocation.users[i].gamma;
        }
    }
    fractions
}

/// Chooses the offload set by rounding the divisible-task fractions.
/// Randomized mode always includes the deterministic candidate, so it can
/// only improve on it. Users that cannot completely offload are forced
/// local in every candidate.
pub fn rounding_binary(
    users: &[UserTask],
    params: &SystemParams,
    scheme: Scheme,
    mode: RoundingMode,
    seed: u64,
) -> OffloadDecision {
    let fractions = partial_fractions(users, params, scheme);
    let feasible: Vec<bool> = (0..users.len())
        .map(|k| effective_latencies(&users[k], params).complete > 0.0)
        .collect();

    let deterministic: Vec<usize> = (0..users.len())
        .filter(|&k| feasible[k] && fractions[k] >= 0.5)
        .collect();
    let mut candidates = vec![deterministic];
    if let RoundingMode::Randomized { draws } = mode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..draws {
            let set: Vec<usize> = (0..users.len())
                .filter(|&k| feasible[k] && rng.random::<f64>() < fractions[k])
                .collect();
            candidates.push(set);
        }
    }

    let mut best: Option<OffloadDecision> = None;
    for set in candidates {
        if let Ok(decision) = decision_from_set(scheme, &set, users, params) {
            let better = match &best {
                Some(cur) => decision.total_energy < cur.total_energy,
                None => true,
            };
            if better {
                best = Some(decision);
            }
        }
    }
    best.expect("the all-local candidate always evaluates")
}
