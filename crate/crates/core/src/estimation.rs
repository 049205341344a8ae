//! Impaired uplink pilot phase and phase-unaware LMMSE channel estimation.
//!
//! UE `k` of every cell sends pilot `k` (τ_p = K). After correlating the
//! quantized BS signal with pilot `k`, BS `j` observes
//!
//! ```text
//! y_jk = A_a [ Σ_l α_d √p τ_p h_lk + Σ_{l',k'} h_l'k' (n̂_DAC + η̂_tu) + η̂_rb + z̄ ] + n̄_ADC
//! ```
//!
//! and estimates `h_lk^j = α_d τ_p √p R̄_lk^j A_a C_yy⁻¹ y_jk`.

use nalgebra::DVector;
use rand::Rng;

use crate::channels::ChannelRealization;
use crate::error::{Error, Result};
use crate::hardware::{BussgangMatrices, HardwareProfile};
use crate::linalg::{c, hermitian_part, inverse_hpd, scale_columns, scale_rows, CMat, CVec, C64};
use crate::rng::complex_normal;
use crate::scenario::{StatisticsSet, SystemConfig};

/// Pilot observations `y_jk`, indexed `j * K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    pub cells: usize,
    pub ues_per_cell: usize,
    pub y: Vec<CVec>,
}

impl PilotObservation {
    pub fn get(&self, j: usize, k: usize) -> &CVec {
        &self.y[j * self.ues_per_cell + k]
    }
}

fn check_dims(
    cells: usize,
    ues: usize,
    antennas: usize,
    config: &SystemConfig,
    bussgang: &BussgangMatrices,
) -> Result<()> {
    if cells != config.cells || ues != config.ues_per_cell || antennas != config.antennas {
        return Err(Error::Contract(format!(
            "dimensions L={cells}, K={ues}, M={antennas} do not match configuration L={}, K={}, M={}",
            config.cells, config.ues_per_cell, config.antennas
        )));
    }
    if bussgang.adc_gain.len() != antennas {
        return Err(Error::Contract(format!(
            "Bussgang matrices have {} antennas, expected {antennas}",
            bussgang.adc_gain.len()
        )));
    }
    Ok(())
}

/// Draws every `y_jk` for one channel realization. Distortion terms are
/// Gaussian with the conditional covariances given the realized channels.
pub fn simulate_pilot_reception<R: Rng + ?Sized>(
    realization: &ChannelRealization,
    profile: &HardwareProfile,
    bussgang: &BussgangMatrices,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<PilotObservation> {
    let (l_n, k_n, m) = (realization.cells, realization.ues_per_cell, realization.antennas());
    check_dims(l_n, k_n, m, config, bussgang)?;
    let tau = config.pilot_len as f64;
    let p = config.pilot_power;
    let alpha_d = bussgang.ue_dac_gain;
    let amp = alpha_d * p.sqrt();
    let kappa_rb2 = profile.kappa_rb * profile.kappa_rb;

    // UE-side DAC and transmit EVM noise, correlated with pilot k. These are
    // emitted once and received by every BS.
    let ue_var = tau * alpha_d * (1.0 - alpha_d + profile.kappa_tu * profile.kappa_tu) * p;
    let ue_noise: Vec<C64> = (0..l_n * k_n * k_n).map(|_| complex_normal(rng, ue_var)).collect();

    let mut y = Vec::with_capacity(l_n * k_n);
    for j in 0..l_n {
        // W̄^j = Σ_k' diag(|Σ_l' α_d √p h_l'k'|²) + Σ_l'k' (1 − α_d + κ_tu²) α_d p diag(|h_l'k'|²)
        let mut w_bar = DVector::<f64>::zeros(m);
        for kp in 0..k_n {
            let mut coherent = CVec::zeros(m);
            for lp in 0..l_n {
                let h = realization.get(lp, kp, j);
                coherent.axpy(c(amp), h, c(1.0));
                for (w, z) in w_bar.iter_mut().zip(h.iter()) {
                    *w += (1.0 - alpha_d + profile.kappa_tu * profile.kappa_tu) * alpha_d * p * z.norm_sqr();
                }
            }
            for (w, z) in w_bar.iter_mut().zip(coherent.iter()) {
                *w += z.norm_sqr();
            }
        }

        for k in 0..k_n {
            let mut analog = CVec::zeros(m);
            for l in 0..l_n {
                analog.axpy(c(amp * tau), realization.get(l, k, j), c(1.0));
            }
            for lp in 0..l_n {
                for kp in 0..k_n {
                    let e = ue_noise[(lp * k_n + kp) * k_n + k];
                    analog.axpy(e, realization.get(lp, kp, j), c(1.0));
                }
            }
            for i in 0..m {
                analog[i] += complex_normal(rng, tau * kappa_rb2 * w_bar[i]);
                analog[i] += complex_normal(rng, tau * config.noise_power);
            }
            let mut out = analog;
            for i in 0..m {
                let adc_var = tau * bussgang.adc_noise[i] * ((1.0 + kappa_rb2) * w_bar[i] + config.noise_power);
                out[i] = out[i] * bussgang.adc_gain[i] + complex_normal(rng, adc_var);
            }
            y.push(out);
        }
    }
    Ok(PilotObservation { cells: l_n, ues_per_cell: k_n, y })
}

/// Closed-form `C_yy` for every `(j, k)`, indexed `j * K + k`.
pub fn compute_cyy(
    stats: &StatisticsSet,
    profile: &HardwareProfile,
    bussgang: &BussgangMatrices,
    config: &SystemConfig,
) -> Result<Vec<CMat>> {
    let (l_n, k_n, m) = (stats.cells, stats.ues_per_cell, stats.antennas);
    check_dims(l_n, k_n, m, config, bussgang)?;
    let tau = config.pilot_len as f64;
    let p = config.pilot_power;
    let alpha_d = bussgang.ue_dac_gain;
    let kappa_tu2 = profile.kappa_tu * profile.kappa_tu;
    let kappa_rb2 = profile.kappa_rb * profile.kappa_rb;

    let mut out = Vec::with_capacity(l_n * k_n);
    for j in 0..l_n {
        let mut j_diag = DVector::<f64>::zeros(m);
        let mut ue_distortion = CMat::zeros(m, m);
        for lp in 0..l_n {
            for kp in 0..k_n {
                let r = &stats.get(lp, kp, j).full_cov;
                for i in 0..m {
                    j_diag[i] += (1.0 + kappa_tu2) * alpha_d * p * r[(i, i)].re;
                }
                ue_distortion += r * c(tau * alpha_d * (1.0 - alpha_d + kappa_tu2) * p);
            }
        }
        for k in 0..k_n {
            let mut inner = ue_distortion.clone();
            for lp in 0..l_n {
                inner += &stats.get(lp, k, j).full_cov * c(alpha_d * alpha_d * tau * tau * p);
            }
            for i in 0..m {
                inner[(i, i)] += c(tau * kappa_rb2 * j_diag[i] + tau * config.noise_power);
            }
            let mut cyy = scale_columns(&scale_rows(&inner, &bussgang.adc_gain), &bussgang.adc_gain);
            for i in 0..m {
                cyy[(i, i)] += c(tau * bussgang.adc_noise[i] * ((1.0 + kappa_rb2) * j_diag[i] + config.noise_power));
            }
            out.push(hermitian_part(&cyy));
        }
    }
    Ok(out)
}

/// Estimates `ĥ_lk^j`, indexed like [`StatisticsSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub cells: usize,
    pub ues_per_cell: usize,
    pub h_hat: Vec<CVec>,
}

impl ChannelEstimate {
    pub fn get(&self, l: usize, k: usize, j: usize) -> &CVec {
        &self.h_hat[(l * self.ues_per_cell + k) * self.cells + j]
    }
}

/// Precomputed LMMSE filters `F_lk^j = C_hy C_yy⁻¹` and own-cell error
/// covariances.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub cells: usize,
    pub ues_per_cell: usize,
    /// `C_yy`, indexed `j * K + k`.
    pub cyy: Vec<CMat>,
    /// `F_lk^j`, indexed like [`StatisticsSet`].
    pub filters: Vec<CMat>,
    /// `C_lk^l = R̄ − F C_hyᴴ`, indexed `l * K + k`.
    pub error_cov: Vec<CMat>,
}

impl Estimator {
    pub fn new(
        stats: &StatisticsSet,
        profile: &HardwareProfile,
        bussgang: &BussgangMatrices,
        config: &SystemConfig,
    ) -> Result<Self> {
        let cyy = compute_cyy(stats, profile, bussgang, config)?;
        let (l_n, k_n) = (stats.cells, stats.ues_per_cell);
        let scale = bussgang.ue_dac_gain * config.pilot_len as f64 * config.pilot_power.sqrt();
        let inverses = cyy.iter().map(inverse_hpd).collect::<Result<Vec<_>>>()?;
        let mut filters = Vec::with_capacity(stats.entries.len());
        let mut error_cov = Vec::with_capacity(l_n * k_n);
        for l in 0..l_n {
            for k in 0..k_n {
                for j in 0..l_n {
                    let r_bar = &stats.get(l, k, j).full_cov;
                    let c_hy = scale_columns(r_bar, &bussgang.adc_gain) * c(scale);
                    let filter = &c_hy * &inverses[j * k_n + k];
                    if j == l {
                        let err = r_bar - &filter * c_hy.adjoint();
                        error_cov.push(hermitian_part(&err));
                    }
                    filters.push(filter);
                }
            }
        }
        Ok(Self { cells: l_n, ues_per_cell: k_n, cyy, filters, error_cov })
    }

    pub fn filter(&self, l: usize, k: usize, j: usize) -> &CMat {
        &self.filters[(l * self.ues_per_cell + k) * self.cells + j]
    }

    pub fn error_covariance(&self, l: usize, k: usize) -> &CMat {
        &self.error_cov[l * self.ues_per_cell + k]
    }

    fn check(&self, obs: &PilotObservation) -> Result<()> {
        if obs.cells != self.cells || obs.ues_per_cell != self.ues_per_cell {
            return Err(Error::Contract("pilot observation does not match estimator dimensions".into()));
        }
        Ok(())
    }

    /// All estimates `ĥ_lk^j`.
    pub fn estimate(&self, obs: &PilotObservation) -> Result<ChannelEstimate> {
        self.check(obs)?;
        let mut h_hat = Vec::with_capacity(self.filters.len());
        for l in 0..self.cells {
            for k in 0..self.ues_per_cell {
                for j in 0..self.cells {
                    h_hat.push(self.filter(l, k, j) * obs.get(j, k));
                }
            }
        }
        Ok(ChannelEstimate { cells: self.cells, ues_per_cell: self.ues_per_cell, h_hat })
    }

    /// Own-cell estimates `ĥ_lk^l`, indexed `l * K + k`.
    pub fn estimate_own(&self, obs: &PilotObservation) -> Result<Vec<CVec>> {
        self.check(obs)?;
        let mut out = Vec::with_capacity(self.cells * self.ues_per_cell);
        for l in 0..self.cells {
            for k in 0..self.ues_per_cell {
                out.push(self.filter(l, k, l) * obs.get(l, k));
            }
        }
        Ok(out)
    }
}
