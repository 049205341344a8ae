//! Network geometry, large-scale propagation and second-order channel
//! statistics.
//!
//! Every `(UE (l,k), BS j)` pair gets a [`ChannelStatistics`] entry holding the
//! LoS mean `h̄ = √(β K̄)·a(θ)`, the NLoS covariance `R = β(1−K̄)·Σ(θ)` and
//! `R̄ = R + h̄h̄ᴴ`, where `K̄ = K/(K+1)` and `Σ` is the Gaussian local
//! scattering correlation of a half-wavelength ULA.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::steering_vector;
use crate::error::{Error, Result};
use crate::linalg::{c, clip_psd, CMat, CVec, C64};
use crate::rng;

/// Relative eigenvalue tolerance below which negative eigenvalues count as
/// rounding noise.
pub const PSD_TOLERANCE: f64 = 1e-10;

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Distance-dependent pathloss and Rician factor:
/// `β_dB = intercept − slope·log10(d)` and `K = 10^(k_intercept + k_slope·d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationModel {
    pub pathloss_intercept_db: f64,
    pub pathloss_slope_db: f64,
    pub rician_intercept: f64,
    pub rician_slope_per_m: f64,
}

impl Default for PropagationModel {
    fn default() -> Self {
        Self {
            pathloss_intercept_db: -30.5,
            pathloss_slope_db: 36.7,
            rician_intercept: 1.3,
            rician_slope_per_m: -0.003,
        }
    }
}

impl PropagationModel {
    pub fn large_scale_fading(&self, distance_m: f64) -> Result<f64> {
        check_distance(distance_m)?;
        let db = self.pathloss_intercept_db - self.pathloss_slope_db * distance_m.log10();
        Ok(10f64.powf(db / 10.0))
    }

    pub fn rician_factor(&self, distance_m: f64) -> Result<f64> {
        check_distance(distance_m)?;
        Ok(10f64.powf(self.rician_intercept + self.rician_slope_per_m * distance_m))
    }
}

fn check_distance(distance_m: f64) -> Result<()> {
    if distance_m > 0.0 && distance_m.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("distance must be positive, got {distance_m}")))
    }
}

/// Linear large-scale gain β at `distance_m` under the default propagation model.
pub fn large_scale_fading(distance_m: f64) -> Result<f64> {
    PropagationModel::default().large_scale_fading(distance_m)
}

/// Linear Rician K-factor at `distance_m` under the default propagation model.
pub fn rician_factor(distance_m: f64) -> Result<f64> {
    PropagationModel::default().rician_factor(distance_m)
}

/// `K̄ = K/(K+1)`, with `K = ∞` mapped to 1.
pub fn los_fraction(k_factor: f64) -> f64 {
    if k_factor.is_infinite() {
        1.0
    } else {
        k_factor / (k_factor + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// L
    pub cells: usize,
    /// K
    pub ues_per_cell: usize,
    /// M
    pub antennas: usize,
    /// τ_p, in symbols.
    pub pilot_len: usize,
    /// τ_c, in symbols.
    pub coherence_len: usize,
    /// Uplink pilot power p̃, watts.
    pub pilot_power: f64,
    /// Per-BS downlink budget ρ_d, watts.
    pub downlink_power: f64,
    /// σ², watts.
    pub noise_power: f64,
    pub area_side: f64,
    pub min_distance: f64,
    /// Angular standard deviation of the local scattering model, radians.
    pub angular_spread: f64,
    pub propagation: PropagationModel,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            cells: 4,
            ues_per_cell: 5,
            antennas: 100,
            pilot_len: 5,
            coherence_len: 200,
            pilot_power: dbm_to_watts(23.0),
            downlink_power: 1.0,
            noise_power: dbm_to_watts(-96.0),
            area_side: 1000.0,
            min_distance: 35.0,
            angular_spread: 30f64.to_radians(),
            propagation: PropagationModel::default(),
            seed: 0,
        }
    }
}

impl SystemConfig {
    /// Small network used for fast runs: L = 2, M = 16, K = 2.
    pub fn desk() -> Self {
        Self {
            cells: 2,
            ues_per_cell: 2,
            antennas: 16,
            pilot_len: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.cells == 0 || self.ues_per_cell == 0 || self.antennas == 0 {
            return fail("cells, ues_per_cell and antennas must be at least 1".into());
        }
        if self.pilot_len < self.ues_per_cell {
            return fail(format!(
                "pilot_len ({}) must be at least ues_per_cell ({})",
                self.pilot_len, self.ues_per_cell
            ));
        }
        if self.coherence_len <= self.pilot_len {
            return fail(format!(
                "coherence_len ({}) must exceed pilot_len ({})",
                self.coherence_len, self.pilot_len
            ));
        }
        for (name, v) in [
            ("pilot_power", self.pilot_power),
            ("downlink_power", self.downlink_power),
            ("noise_power", self.noise_power),
            ("area_side", self.area_side),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.min_distance >= 0.0 && self.min_distance.is_finite()) {
            return fail(format!("min_distance must be non-negative, got {}", self.min_distance));
        }
        if !(self.angular_spread >= 0.0 && self.angular_spread.is_finite()) {
            return fail(format!("angular_spread must be non-negative, got {}", self.angular_spread));
        }
        Ok(())
    }

    /// (τ_c − τ_p)/τ_c
    pub fn prelog(&self) -> f64 {
        (self.coherence_len as f64 - self.pilot_len as f64) / self.coherence_len as f64
    }

    pub fn num_ues(&self) -> usize {
        self.cells * self.ues_per_cell
    }
}

/// BS and UE positions in meters. UE `(l, k)` is stored at `l*K + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub cells: usize,
    pub ues_per_cell: usize,
    pub bs_positions: Vec<[f64; 2]>,
    pub ue_positions: Vec<[f64; 2]>,
}

impl Scenario {
    pub fn ue(&self, l: usize, k: usize) -> [f64; 2] {
        self.ue_positions[l * self.ues_per_cell + k]
    }

    pub fn distance(&self, l: usize, k: usize, j: usize) -> f64 {
        let u = self.ue(l, k);
        let b = self.bs_positions[j];
        (u[0] - b[0]).hypot(u[1] - b[1])
    }

    /// Nominal angle of UE `(l,k)` as seen from BS `j`, radians.
    pub fn angle(&self, l: usize, k: usize, j: usize) -> f64 {
        let u = self.ue(l, k);
        let b = self.bs_positions[j];
        (u[1] - b[1]).atan2(u[0] - b[0])
    }

    /// Line-oriented `key = value` dump, readable by [`Scenario::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "cells = {}", self.cells);
        let _ = writeln!(out, "ues_per_cell = {}", self.ues_per_cell);
        for (j, p) in self.bs_positions.iter().enumerate() {
            let _ = writeln!(out, "bs.{j} = {},{}", p[0], p[1]);
        }
        for (i, p) in self.ue_positions.iter().enumerate() {
            let (l, k) = (i / self.ues_per_cell, i % self.ues_per_cell);
            let _ = writeln!(out, "ue.{l}.{k} = {},{}", p[0], p[1]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { path: "<scenario>".into(), line, msg };
        let mut cells = None;
        let mut ues = None;
        let mut bs: Vec<(usize, [f64; 2])> = Vec::new();
        let mut ue: Vec<(usize, usize, [f64; 2])> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr(n + 1, format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let point = |v: &str| -> Result<[f64; 2]> {
                let (x, y) = v.split_once(',').ok_or_else(|| perr(n + 1, "expected `x,y`".into()))?;
                let x = x.trim().parse().map_err(|e| perr(n + 1, format!("{e}")))?;
                let y = y.trim().parse().map_err(|e| perr(n + 1, format!("{e}")))?;
                Ok([x, y])
            };
            let index = |s: &str| -> Result<usize> { s.parse().map_err(|e| perr(n + 1, format!("{e}"))) };
            let parts: Vec<&str> = key.split('.').collect();
            match parts.as_slice() {
                ["cells"] => cells = Some(index(value)?),
                ["ues_per_cell"] => ues = Some(index(value)?),
                ["bs", j] => bs.push((index(j)?, point(value)?)),
                ["ue", l, k] => ue.push((index(l)?, index(k)?, point(value)?)),
                _ => return Err(perr(n + 1, format!("unknown key `{key}`"))),
            }
        }
        let cells = cells.ok_or_else(|| perr(0, "missing `cells`".into()))?;
        let ues_per_cell = ues.ok_or_else(|| perr(0, "missing `ues_per_cell`".into()))?;
        let mut bs_positions = vec![None; cells];
        for (j, p) in bs {
            *bs_positions
                .get_mut(j)
                .ok_or_else(|| perr(0, format!("bs index {j} out of range")))? = Some(p);
        }
        let mut ue_positions = vec![None; cells * ues_per_cell];
        for (l, k, p) in ue {
            if l >= cells || k >= ues_per_cell {
                return Err(perr(0, format!("ue index ({l},{k}) out of range")));
            }
            ue_positions[l * ues_per_cell + k] = Some(p);
        }
        let bs_positions: Option<Vec<_>> = bs_positions.into_iter().collect();
        let ue_positions: Option<Vec<_>> = ue_positions.into_iter().collect();
        Ok(Self {
            cells,
            ues_per_cell,
            bs_positions: bs_positions.ok_or_else(|| perr(0, "missing BS position".into()))?,
            ue_positions: ue_positions.ok_or_else(|| perr(0, "missing UE position".into()))?,
        })
    }
}

/// Places the BSs at the centers of a regular grid of cells covering the
/// square area and drops `K` UEs uniformly in each cell, rejecting positions
/// closer than `min_distance` to any BS.
pub fn generate_network(config: &SystemConfig) -> Result<Scenario> {
    config.validate()?;
    let cols = (config.cells as f64).sqrt().ceil() as usize;
    let rows = config.cells.div_ceil(cols);
    let width = config.area_side / cols as f64;
    let height = config.area_side / rows as f64;
    let bs_positions: Vec<[f64; 2]> = (0..config.cells)
        .map(|l| {
            let (col, row) = (l % cols, l / cols);
            [(col as f64 + 0.5) * width, (row as f64 + 0.5) * height]
        })
        .collect();

    let mut rng = rng::stream(config.seed, rng::DOMAIN_GEOMETRY, 0);
    let mut ue_positions = Vec::with_capacity(config.num_ues());
    for l in 0..config.cells {
        let (x0, y0) = ((l % cols) as f64 * width, (l / cols) as f64 * height);
        for k in 0..config.ues_per_cell {
            let mut placed = None;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let p = [x0 + rng.random::<f64>() * width, y0 + rng.random::<f64>() * height];
                let clear = bs_positions
                    .iter()
                    .all(|b| (p[0] - b[0]).hypot(p[1] - b[1]) >= config.min_distance);
                if clear {
                    placed = Some(p);
                    break;
                }
            }
            let p = placed.ok_or_else(|| {
                Error::ScenarioInfeasible(format!(
                    "could not place UE ({l},{k}) at least {} m from every BS in a {}x{} m cell",
                    config.min_distance, width, height
                ))
            })?;
            ue_positions.push(p);
        }
    }
    Ok(Scenario {
        cells: config.cells,
        ues_per_cell: config.ues_per_cell,
        bs_positions,
        ue_positions,
    })
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=n {
                let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Width of the angular integration window, in standard deviations.
const SCATTERING_WINDOW_SIGMAS: f64 = 8.0;
const GL_ORDER: usize = 16;

/// Gaussian local scattering correlation matrix of an `M`-antenna
/// half-wavelength ULA,
/// `[Σ]_{m,n} = ∫ e^{iπ(m−n) sin(θ+δ)} N(δ; 0, asd²) dδ`,
/// evaluated with composite Gauss-Legendre quadrature and normalized to
/// `trace(Σ) = M`.
pub fn build_correlation_matrix(nominal_angle: f64, asd: f64, antennas: usize) -> Result<CMat> {
    correlation_with_sqrt(nominal_angle, asd, antennas).map(|(m, _)| m)
}

/// [`build_correlation_matrix`] together with its Hermitian square root.
pub fn correlation_with_sqrt(nominal_angle: f64, asd: f64, antennas: usize) -> Result<(CMat, CMat)> {
    if antennas == 0 {
        return Err(Error::Domain("antenna count must be at least 1".into()));
    }
    if !(asd >= 0.0 && asd.is_finite()) {
        return Err(Error::Domain(format!("angular spread must be non-negative, got {asd}")));
    }
    if asd == 0.0 {
        let a = steering_vector(nominal_angle, antennas);
        let sigma = &a * a.adjoint();
        let sqrt = &sigma * c(1.0 / (antennas as f64).sqrt());
        return Ok((sigma, sqrt));
    }

    let half_width = SCATTERING_WINDOW_SIGMAS * asd;
    // One full phase rotation per panel at the largest antenna separation.
    let panels = ((2.0 * half_width * (antennas as f64 - 1.0) / 2.0).ceil() as usize).max(16);
    let (nodes, weights) = gauss_legendre(GL_ORDER);
    let panel_width = 2.0 * half_width / panels as f64;
    let norm = 1.0 / (asd * (2.0 * PI).sqrt());

    let mut first_col = vec![C64::new(0.0, 0.0); antennas];
    for p in 0..panels {
        let center = -half_width + (p as f64 + 0.5) * panel_width;
        for (x, w) in nodes.iter().zip(&weights) {
            let delta = center + 0.5 * panel_width * x;
            let density = w * 0.5 * panel_width * norm * (-0.5 * (delta / asd).powi(2)).exp();
            let step = C64::from_polar(1.0, PI * (nominal_angle + delta).sin());
            let mut phase = C64::new(density, 0.0);
            for entry in first_col.iter_mut() {
                *entry += phase;
                phase *= step;
            }
        }
    }
    let sigma = CMat::from_fn(antennas, antennas, |m, n| {
        if m >= n {
            first_col[m - n]
        } else {
            first_col[n - m].conj()
        }
    });
    let (psd, sqrt) = clip_psd(&sigma, PSD_TOLERANCE)?;
    let scale = antennas as f64 / crate::linalg::real_trace(&psd);
    Ok((psd * c(scale), sqrt * c(scale.sqrt())))
}

/// Closed-form small-angle approximation of the local scattering model,
/// `[Σ]_{m,n} = e^{iπ(m−n) sin θ} · e^{−(asd²/2)(π(m−n) cos θ)²}`.
pub fn local_scattering_small_angle(nominal_angle: f64, asd: f64, antennas: usize) -> CMat {
    CMat::from_fn(antennas, antennas, |m, n| {
        let d = m as f64 - n as f64;
        let damp = (-0.5 * asd * asd * (PI * d * nominal_angle.cos()).powi(2)).exp();
        C64::from_polar(damp, PI * d * nominal_angle.sin())
    })
}

/// Second-order statistics of one UE–BS channel.
#[derive(Debug, Clone)]
pub struct ChannelStatistics {
    /// h̄ = √(β K̄)·a(θ)
    pub los_mean: CVec,
    /// R = β(1−K̄)·Σ
    pub nlos_cov: CMat,
    /// Hermitian square root of `nlos_cov`.
    pub nlos_sqrt: CMat,
    /// R̄ = R + h̄h̄ᴴ
    pub full_cov: CMat,
    pub beta: f64,
    pub k_factor: f64,
}

impl ChannelStatistics {
    pub fn new(beta: f64, k_factor: f64, angle: f64, asd: f64, antennas: usize) -> Result<Self> {
        let kbar = los_fraction(k_factor);
        let (sigma, sigma_sqrt) = correlation_with_sqrt(angle, asd, antennas)?;
        let los_mean = steering_vector(angle, antennas) * c((beta * kbar).sqrt());
        let nlos_scale = beta * (1.0 - kbar);
        let nlos_cov = sigma * c(nlos_scale);
        let nlos_sqrt = sigma_sqrt * c(nlos_scale.sqrt());
        let full_cov = &nlos_cov + &los_mean * los_mean.adjoint();
        Ok(Self { los_mean, nlos_cov, nlos_sqrt, full_cov, beta, k_factor })
    }

    pub fn antennas(&self) -> usize {
        self.los_mean.len()
    }
}

/// Statistics for every `(l, k, j)`; UE `(l,k)` to BS `j` sits at
/// `(l*K + k)*L + j`.
#[derive(Debug, Clone)]
pub struct StatisticsSet {
    pub cells: usize,
    pub ues_per_cell: usize,
    pub antennas: usize,
    pub entries: Vec<ChannelStatistics>,
}

impl StatisticsSet {
    pub fn index(&self, l: usize, k: usize, j: usize) -> usize {
        (l * self.ues_per_cell + k) * self.cells + j
    }

    pub fn get(&self, l: usize, k: usize, j: usize) -> &ChannelStatistics {
        &self.entries[self.index(l, k, j)]
    }
}

pub fn build_channel_statistics(scenario: &Scenario, config: &SystemConfig) -> Result<StatisticsSet> {
    let (cells, ues) = (scenario.cells, scenario.ues_per_cell);
    if cells != config.cells || ues != config.ues_per_cell {
        return Err(Error::Contract(format!(
            "scenario has {cells}x{ues} UEs, config expects {}x{}",
            config.cells, config.ues_per_cell
        )));
    }
    let entries = (0..cells * ues * cells)
        .into_par_iter()
        .map(|idx| {
            let (ue, j) = (idx / cells, idx % cells);
            let (l, k) = (ue / ues, ue % ues);
            let d = scenario.distance(l, k, j);
            let beta = config.propagation.large_scale_fading(d)?;
            let kf = config.propagation.rician_factor(d)?;
            ChannelStatistics::new(beta, kf, scenario.angle(l, k, j), config.angular_spread, config.antennas)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StatisticsSet { cells, ues_per_cell: ues, antennas: config.antennas, entries })
}
