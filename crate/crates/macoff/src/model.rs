//! Core domain types: system constants, per-user task parameters, derived
//! latency budgets, DVS local energy, allocations, energy accounting, and
//! seeded scenario generation for the macro-cell channel model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolveError};

/// Shared constants of the uplink system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Symbol interval in seconds per channel use.
    #[serde(rename = "T_s")]
    pub symbol_interval: f64,
    /// Receiver noise variance, linear scale.
    pub sigma2: f64,
    /// Seconds needed to process one bit at the access point.
    #[serde(rename = "delta_c")]
    pub edge_seconds_per_bit: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_interval > 0.0) {
            return Err(SolveError::InvalidInput(format!(
                "symbol interval must be positive, got {}",
                self.symbol_interval
            )));
        }
        if !(self.sigma2 > 0.0) {
            return Err(SolveError::InvalidInput(format!(
                "noise variance must be positive, got {}",
                self.sigma2
            )));
        }
        if !(self.edge_seconds_per_bit >= 0.0) {
            return Err(SolveError::InvalidInput(format!(
                "edge processing time must be non-negative, got {}",
                self.edge_seconds_per_bit
            )));
        }
        Ok(())
    }
}

impl Default for SystemParams {
    /// 1 MHz symbol rate, -130 dBm noise, 10 ns/bit edge processing.
    fn default() -> Self {
        SystemParams {
            symbol_interval: 1e-6,
            sigma2: 1e-13,
            edge_seconds_per_bit: 1e-8,
        }
    }
}

/// Per-user task and channel data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserTask {
    /// Task description length in bits.
    #[serde(rename = "B")]
    pub bits: f64,
    /// Maximum allowable latency in seconds.
    #[serde(rename = "L")]
    pub latency: f64,
    /// Chip constant of the DVS energy model, joule*s^2/bit^3.
    #[serde(rename = "M")]
    pub chip_constant: f64,
    /// Time for the access point to return the result, seconds.
    #[serde(rename = "t_DL")]
    pub downlink_seconds: f64,
    /// Channel power gain |h|^2, linear scale.
    pub h2: f64,
}

impl UserTask {
    /// Channel gain per unit power, |h|^2 / sigma^2.
    pub fn alpha(&self, params: &SystemParams) -> f64 {
        self.h2 / params.sigma2
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.bits > 0.0
            && self.latency > 0.0
            && self.chip_constant >= 0.0
            && self.downlink_seconds >= 0.0
            && self.h2 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SolveError::InvalidInput(format!(
                "invalid user task: {self:?}"
            )))
        }
    }
}

/// Latency budgets left for uplink transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveLatencies {
    /// Budget when the whole task is offloaded: L - delta_c*B - t_DL.
    pub complete: f64,
    /// Budget when the task may be split: L - t_DL.
    pub partial: f64,
}

/// Uplink budgets for one user. Values are returned as computed; a
/// non-positive `complete` budget means the user cannot fully offload and is
/// interpreted by the solvers, not clamped here.
pub fn effective_latencies(user: &UserTask, params: &SystemParams) -> EffectiveLatencies {
    let partial = user.latency - user.downlink_seconds;
    let complete = partial - params.edge_seconds_per_bit * user.bits;
    EffectiveLatencies { complete, partial }
}

/// Minimum local computation energy under dynamic voltage scaling when a
/// fraction `gamma` of the task is offloaded: (M/L^2)*((1-gamma)*B)^3.
pub fn local_energy_dvs(user: &UserTask, gamma: f64) -> f64 {
    if gamma >= 1.0 {
        return 0.0;
    }
    let retained = (1.0 - gamma) * user.bits;
    user.chip_constant / (user.latency * user.latency) * retained * retained * retained
}

/// One user's share of a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserAllocation {
    /// Transmission rate in bits per channel use; 0 when not transmitting.
    pub rate: f64,
    /// Transmission power in energy per channel use; 0 when not transmitting.
    pub power: f64,
    /// Fraction of the task offloaded, in [0,1].
    pub gamma: f64,
    /// Position in the decode order (FullMA: position 0 is decoded last,
    /// the highest position first) or in the transmit schedule (TDMA:
    /// position 0 transmits first). `None` for users that do not transmit.
    pub order_index: Option<usize>,
}

impl UserAllocation {
    pub fn local() -> Self {
        UserAllocation {
            rate: 0.0,
            power: 0.0,
            gamma: 0.0,
            order_index: None,
        }
    }
}

/// A complete solution for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Parallel to the scenario's user list.
    pub users: Vec<UserAllocation>,
    pub feasible: bool,
}

impl Allocation {
    pub fn all_local(n: usize) -> Self {
        Allocation {
            users: vec![UserAllocation::local(); n],
            feasible: true,
        }
    }
}

/// Energy split for one user.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UserEnergy {
    /// Uplink transmission energy, joules.
    pub transmit: f64,
    /// Local computation energy, joules.
    pub local: f64,
}

/// Energy accounting for a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub per_user: Vec<UserEnergy>,
    pub transmit_total: f64,
    pub local_total: f64,
    pub total: f64,
}

impl EnergyReport {
    pub fn from_per_user(per_user: Vec<UserEnergy>) -> Self {
        let transmit_total: f64 = per_user.iter().map(|e| e.transmit).sum();
        let local_total: f64 = per_user.iter().map(|e| e.local).sum();
        EnergyReport {
            transmit_total,
            local_total,
            total: transmit_total + local_total,
            per_user,
        }
    }
}

/// A full problem instance with generation provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub params: SystemParams,
    pub users: Vec<UserTask>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.users.is_empty() {
            return Err(SolveError::InvalidInput(
                "scenario must contain at least one user".into(),
            ));
        }
        for user in &self.users {
            user.validate()?;
        }
        Ok(())
    }
}

/// Geometry of the cell over which users are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    /// Cell radius in meters.
    pub radius_m: f64,
    /// Exclusion radius; draws closer than this are rejected to keep the
    /// path loss bounded.
    #[serde(default = "default_min_radius")]
    pub min_radius_m: f64,
    /// Path-loss exponent.
    pub path_loss_exponent: f64,
}

fn default_min_radius() -> f64 {
    1.0
}

impl Default for CellConfig {
    /// 1 km macro cell with path-loss exponent 3.7.
    fn default() -> Self {
        CellConfig {
            radius_m: 1000.0,
            min_radius_m: 1.0,
            path_loss_exponent: 3.7,
        }
    }
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_m > 0.0) {
            return Err(SolveError::InvalidInput(format!(
                "cell radius must be positive, got {}",
                self.radius_m
            )));
        }
        if !(self.path_loss_exponent > 0.0) {
            return Err(SolveError::InvalidInput(format!(
                "path-loss exponent must be positive, got {}",
                self.path_loss_exponent
            )));
        }
        if !(self.min_radius_m > 0.0 && self.min_radius_m < self.radius_m) {
            return Err(SolveError::InvalidInput(format!(
                "exclusion radius {} must lie inside the cell radius {}",
                self.min_radius_m, self.radius_m
            )));
        }
        Ok(())
    }
}

/// Task parameters without channel state; the channel is drawn per user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskTemplate {
    #[serde(rename = "B")]
    pub bits: f64,
    #[serde(rename = "L")]
    pub latency: f64,
    #[serde(rename = "M")]
    pub chip_constant: f64,
    #[serde(rename = "t_DL")]
    pub downlink_seconds: f64,
}

impl TaskTemplate {
    pub fn with_gain(&self, h2: f64) -> UserTask {
        UserTask {
            bits: self.bits,
            latency: self.latency,
            chip_constant: self.chip_constant,
            downlink_seconds: self.downlink_seconds,
            h2,
        }
    }
}

/// Everything needed to draw a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub params: SystemParams,
    pub cell: CellConfig,
    /// Per-user task templates, cycled when fewer templates than users are
    /// given.
    pub tasks: Vec<TaskTemplate>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.cell.validate()?;
        if self.tasks.is_empty() {
            return Err(SolveError::InvalidInput(
                "at least one task template is required".into(),
            ));
        }
        for t in &self.tasks {
            if !(t.bits > 0.0 && t.latency > 0.0 && t.chip_constant >= 0.0 && t.downlink_seconds >= 0.0)
            {
                return Err(SolveError::InvalidInput(format!(
                    "invalid task template: {t:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws `n_users` users uniformly over the cell disk (rejecting draws inside
/// the exclusion radius) with Rayleigh small-scale fading, i.e.
/// h2 = d^(-exponent) * |g|^2 where |g|^2 is unit-mean exponential.
/// Deterministic for a given seed.
pub fn generate_scenario(n_users: usize, config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    if n_users == 0 {
        return Err(SolveError::InvalidInput(
            "scenario needs at least one user".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = Vec::with_capacity(n_users);
    for i in 0..n_users {
        let d = sample_disk_radius(&mut rng, &config.cell);
        let g2 = sample_unit_exponential(&mut rng);
        let h2 = d.powf(-config.cell.path_loss_exponent) * g2;
        users.push(config.tasks[i % config.tasks.len()].with_gain(h2));
    }
    Ok(Scenario {
        params: config.params,
        users,
        seed,
    })
}

/// Radial coordinate of a point uniform on the disk, conditioned on lying
/// outside the exclusion radius.
fn sample_disk_radius(rng: &mut impl Rng, cell: &CellConfig) -> f64 {
    loop {
        let u: f64 = rng.random();
        let r = cell.radius_m * u.sqrt();
        if r >= cell.min_radius_m {
            return r;
        }
    }
}

/// Unit-mean exponential variate by inverse transform; |g|^2 for a
/// unit-variance complex Gaussian g.
fn sample_unit_exponential(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random();
    -(-u).ln_1p()
}
