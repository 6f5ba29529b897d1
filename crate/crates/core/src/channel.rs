//! Channel realizations and the per-slot performance vector.
//!
//! Users sit in a ring around the base station. Large-scale gain follows a
//! pure power law normalized to 1 at the cell edge; small-scale fading is
//! Rayleigh, so power gains are `beta_i * Exp(1)`. Utilities are Shannon
//! rates truncated at `gamma_max`, with a max-min power split for pairs
//! decoded by successive interference cancellation.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::rng::{self, SimRng};
use crate::scheduler::{enumerate_virtual_users, VirtualUserCatalog};

/// Large-scale gain at the outer radius. Power calibration is relative to it.
pub const BETA_EDGE: f64 = 1.0;

/// Iteration cap for the power-split bisection.
pub const NOMA_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellConfig {
    pub n: usize,
    pub inner_radius_m: f64,
    pub outer_radius_m: f64,
    pub edge_snr_db: f64,
    pub path_loss_exponent: f64,
    pub noise_power: f64,
    /// Spectral efficiency cap (bps/Hz).
    pub gamma_max: f64,
    /// Seed for user placement.
    pub rng_seed: u64,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            n: 4,
            inner_radius_m: 20.0,
            outer_radius_m: 100.0,
            edge_snr_db: 10.0,
            path_loss_exponent: 3.76,
            noise_power: 1.0,
            gamma_max: 6.0,
            rng_seed: 2019,
        }
    }
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(config_err("cell.n must be at least 1"));
        }
        if !(self.inner_radius_m > 0.0 && self.inner_radius_m < self.outer_radius_m) {
            return Err(config_err(format!(
                "cell radii must satisfy 0 < inner < outer (got {} and {})",
                self.inner_radius_m, self.outer_radius_m
            )));
        }
        if !(self.gamma_max > 0.0) {
            return Err(config_err("gamma_max must be positive"));
        }
        if !(self.noise_power > 0.0) {
            return Err(config_err("noise_power must be positive"));
        }
        if !self.edge_snr_db.is_finite() || !self.path_loss_exponent.is_finite() {
            return Err(config_err("edge_snr_db and path_loss_exponent must be finite"));
        }
        Ok(())
    }

    /// Transmit power giving the configured mean SNR to a lone user at the edge.
    pub fn transmit_power(&self) -> f64 {
        calibrate_power(self.edge_snr_db, self.noise_power, BETA_EDGE)
    }
}

/// Power `p` with `p * beta_edge * E|G|^2 / sigma2 = 10^(snr_db / 10)` and `E|G|^2 = 1`.
pub fn calibrate_power(edge_snr_db: f64, noise_power: f64, beta_edge: f64) -> f64 {
    10f64.powf(edge_snr_db / 10.0) * noise_power / beta_edge
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserChannelParams {
    pub beta: f64,
    pub position: (f64, f64),
}

impl UserChannelParams {
    pub fn distance(&self) -> f64 {
        self.position.0.hypot(self.position.1)
    }
}

/// Drops `cell.n` users uniformly by area in the ring.
pub fn place_users(cell: &CellConfig, rng: &mut impl Rng) -> Result<Vec<UserChannelParams>> {
    cell.validate()?;
    let (a2, b2) = (cell.inner_radius_m.powi(2), cell.outer_radius_m.powi(2));
    Ok((0..cell.n)
        .map(|_| {
            let u: f64 = rng.random();
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let d = (a2 + u * (b2 - a2)).sqrt();
            let beta = (d / cell.outer_radius_m).powf(-cell.path_loss_exponent) * BETA_EDGE;
            UserChannelParams { beta, position: (d * theta.cos(), d * theta.sin()) }
        })
        .collect())
}

/// Instantaneous power gains `|H_{i,t}|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotGains {
    pub g: Vec<f64>,
}

pub fn sample_slot_gains(params: &[UserChannelParams], rng: &mut impl Rng) -> SlotGains {
    let mut g = vec![0.0; params.len()];
    sample_slot_gains_into(params, rng, &mut g);
    SlotGains { g }
}

#[inline]
pub fn sample_slot_gains_into(params: &[UserChannelParams], rng: &mut impl Rng, out: &mut [f64]) {
    for (g, p) in out.iter_mut().zip(params) {
        let e: f64 = Exp1.sample(rng);
        *g = p.beta * e;
    }
}

/// Truncated Shannon rate `min(log2(1 + p g / sigma2), gamma_max)`.
#[inline]
pub fn oma_rate(gain: f64, p: f64, sigma2: f64, gamma_max: f64) -> f64 {
    ((p * gain / sigma2).ln_1p() / std::f64::consts::LN_2).min(gamma_max)
}

/// Outcome of the max-min power split for a superposed pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NomaPairRate {
    /// Truncated strong rate plus truncated weak rate.
    pub sum_rate: f64,
    /// Power assigned to the strong user.
    pub power_strong: f64,
    /// Rates before truncation.
    pub rate_strong: f64,
    pub rate_weak: f64,
}

/// Rates of a two-user superposition with the power fraction `x` on the
/// strong user. `a` and `b` are the full-power SNRs of the strong and weak
/// user. The strong user cancels the weak user's signal first.
#[inline]
pub fn noma_rates(x: f64, a: f64, b: f64) -> (f64, f64) {
    let rate_s = (x * a).ln_1p() / std::f64::consts::LN_2;
    let rate_w = ((1.0 - x) * b / (x * b + 1.0)).ln_1p() / std::f64::consts::LN_2;
    (rate_s, rate_w)
}

/// Power fraction on the strong user maximizing `min(rate_s, rate_w)`.
///
/// The strong rate increases and the weak rate decreases in the fraction, so
/// the optimum equalizes the two SINRs. Bisection runs on the sign of
/// `x a (x b + 1) - (1 - x) b`, which is negative at 0 and positive at 1,
/// until the bracket collapses to adjacent floats (well below 1e-9).
pub fn max_min_fraction(a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..NOMA_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f = mid * a * (mid * b + 1.0) - (1.0 - mid) * b;
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Max-min two-user downlink rate. Callers pass `gain_strong >= gain_weak`.
pub fn noma_pair_rate(gain_strong: f64, gain_weak: f64, p: f64, sigma2: f64, gamma_max: f64) -> NomaPairRate {
    debug_assert!(gain_strong >= gain_weak && gain_weak >= 0.0);
    if gain_weak <= 0.0 {
        let r = (p * gain_strong / sigma2).ln_1p() / std::f64::consts::LN_2;
        return NomaPairRate {
            sum_rate: r.min(gamma_max),
            power_strong: p,
            rate_strong: r,
            rate_weak: 0.0,
        };
    }
    let a = p * gain_strong / sigma2;
    let b = p * gain_weak / sigma2;
    let x = max_min_fraction(a, b);
    let (rate_s, rate_w) = noma_rates(x, a, b);
    NomaPairRate {
        sum_rate: rate_s.min(gamma_max) + rate_w.min(gamma_max),
        power_strong: x * p,
        rate_strong: rate_s,
        rate_weak: rate_w,
    }
}

/// Per-virtual-user utilities for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceSample {
    pub r: Vec<f64>,
    pub slot_index: u64,
}

/// Maps gains to utilities: OMA rates for singletons, max-min NOMA sum
/// rates for pairs.
pub fn performance_vector(
    gains: &SlotGains,
    catalog: &VirtualUserCatalog,
    p: f64,
    sigma2: f64,
    gamma_max: f64,
) -> PerformanceSample {
    let mut r = vec![0.0; catalog.len()];
    fill_performance(&gains.g, catalog, p, sigma2, gamma_max, &mut r);
    PerformanceSample { r, slot_index: 0 }
}

#[inline]
pub fn fill_performance(
    g: &[f64],
    catalog: &VirtualUserCatalog,
    p: f64,
    sigma2: f64,
    gamma_max: f64,
    out: &mut [f64],
) {
    assert!(catalog.n_max() <= 2, "at most two users per virtual user are supported");
    for (j, r) in out.iter_mut().enumerate() {
        *r = match *catalog.members(j) {
            [i] => oma_rate(g[i], p, sigma2, gamma_max),
            [i, k] => {
                // strong = larger gain, ties to the lower index (i < k)
                let (s, w) = if g[i] >= g[k] { (i, k) } else { (k, i) };
                noma_pair_rate(g[s], g[w], p, sigma2, gamma_max).sum_rate
            }
            _ => unreachable!(),
        };
    }
}

/// Analytic utility distributions with closed-form quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticKind {
    Uniform01,
    Exponential { mean: f64 },
}

impl SyntheticKind {
    pub fn parse(name: &str, mean: f64) -> Result<Self> {
        let kind = match name {
            "uniform01" => Self::Uniform01,
            "exponential" => Self::Exponential { mean },
            other => return Err(config_err(format!("unknown synthetic sampler `{other}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Exponential { mean } if !(mean > 0.0 && mean.is_finite()) => {
                Err(config_err("exponential sampler needs a positive mean"))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Self::Uniform01 => rng.random(),
            Self::Exponential { mean } => {
                let e: f64 = Exp1.sample(rng);
                mean * e
            }
        }
    }
}

/// Stream of i.i.d. synthetic performance samples for single-user slots.
pub struct SyntheticSampler<'a, R> {
    kind: SyntheticKind,
    n: usize,
    rng: &'a mut R,
    t: u64,
}

pub fn synthetic_sampler<R: Rng>(kind: SyntheticKind, n: usize, rng: &mut R) -> Result<SyntheticSampler<'_, R>> {
    if n == 0 {
        return Err(config_err("synthetic sampler needs n >= 1"));
    }
    kind.validate()?;
    Ok(SyntheticSampler { kind, n, rng, t: 0 })
}

impl<R: Rng> Iterator for SyntheticSampler<'_, R> {
    type Item = PerformanceSample;

    fn next(&mut self) -> Option<PerformanceSample> {
        self.t += 1;
        let r = (0..self.n).map(|_| self.kind.draw(self.rng)).collect();
        Some(PerformanceSample { r, slot_index: self.t })
    }
}

/// Serializable description of a sampling environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentSpec {
    Channel { cell: CellConfig, n_max: usize },
    Synthetic { sampler: SyntheticKind, n: usize },
}

impl EnvironmentSpec {
    pub fn n(&self) -> usize {
        match self {
            Self::Channel { cell, .. } => cell.n,
            Self::Synthetic { n, .. } => *n,
        }
    }

    pub fn n_max(&self) -> usize {
        match self {
            Self::Channel { n_max, .. } => *n_max,
            Self::Synthetic { .. } => 1,
        }
    }

    /// Builds the environment; channel users are placed from `cell.rng_seed`.
    pub fn build(&self) -> Result<Environment> {
        match self {
            Self::Channel { cell, n_max } => {
                let mut placement_rng = rng::stream(cell.rng_seed, rng::STREAM_PLACEMENT);
                let users = place_users(cell, &mut placement_rng)?;
                ChannelModel::new(cell.clone(), users, *n_max).map(Environment::Channel)
            }
            Self::Synthetic { sampler, n } => {
                sampler.validate()?;
                Ok(Environment::Synthetic { kind: *sampler, catalog: enumerate_virtual_users(*n, 1)? })
            }
        }
    }
}

/// Placed users plus the rate model.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub cell: CellConfig,
    pub users: Vec<UserChannelParams>,
    pub catalog: VirtualUserCatalog,
    pub power: f64,
}

impl ChannelModel {
    pub fn new(cell: CellConfig, users: Vec<UserChannelParams>, n_max: usize) -> Result<Self> {
        cell.validate()?;
        if users.len() != cell.n {
            return Err(config_err("user list length differs from cell.n"));
        }
        if n_max > 2 {
            return Err(config_err("virtual users of more than two users are not supported"));
        }
        let catalog = enumerate_virtual_users(cell.n, n_max)?;
        let power = cell.transmit_power();
        Ok(Self { cell, users, catalog, power })
    }
}

/// A stationary source of performance vectors.
#[derive(Debug, Clone)]
pub enum Environment {
    Channel(ChannelModel),
    Synthetic { kind: SyntheticKind, catalog: VirtualUserCatalog },
}

impl Environment {
    pub fn catalog(&self) -> &VirtualUserCatalog {
        match self {
            Self::Channel(m) => &m.catalog,
            Self::Synthetic { catalog, .. } => catalog,
        }
    }

    pub fn n(&self) -> usize {
        self.catalog().n()
    }

    /// Per-slot scratch space for [`Environment::sample_into`].
    pub fn scratch(&self) -> Vec<f64> {
        vec![0.0; self.n()]
    }

    /// Draws one fresh performance vector into `r` (length `m`).
    #[inline]
    pub fn sample_into(&self, rng: &mut SimRng, scratch: &mut [f64], r: &mut [f64]) {
        match self {
            Self::Channel(m) => {
                sample_slot_gains_into(&m.users, rng, scratch);
                fill_performance(scratch, &m.catalog, m.power, m.cell.noise_power, m.cell.gamma_max, r);
            }
            Self::Synthetic { kind, .. } => {
                for v in r.iter_mut() {
                    *v = kind.draw(rng);
                }
            }
        }
    }
}
