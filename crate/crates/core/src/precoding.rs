//! Local precoders built at each BS from its own-cell channel estimates.
//!
//! Downlink precoders are the normalized uplink combiners. All directions are
//! returned unnormalized; [`normalize_precoders`] turns the Monte-Carlo mean
//! of `‖v‖²` into the scaling `ω = 1/√E‖v‖²`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::Estimator;
use crate::hardware::{BussgangMatrices, HardwareProfile};
use crate::linalg::{c, hermitian_part, CMat, CVec};
use crate::scenario::{StatisticsSet, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrecoderKind {
    Mr,
    DuMmse,
    DaMmse,
}

impl PrecoderKind {
    pub const ALL: [PrecoderKind; 3] = [PrecoderKind::Mr, PrecoderKind::DuMmse, PrecoderKind::DaMmse];
}

impl fmt::Display for PrecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrecoderKind::Mr => "MR",
            PrecoderKind::DuMmse => "DU-MMSE",
            PrecoderKind::DaMmse => "DA-MMSE",
        })
    }
}

impl FromStr for PrecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MR" => Ok(PrecoderKind::Mr),
            "DU" | "DU-MMSE" | "DU_MMSE" => Ok(PrecoderKind::DuMmse),
            "DA" | "DA-MMSE" | "DA_MMSE" => Ok(PrecoderKind::DaMmse),
            other => Err(Error::Domain(format!("unknown precoder `{other}`"))),
        }
    }
}

/// Realization-independent parts of the precoder matrices of every BS.
#[derive(Debug, Clone)]
pub struct PrecoderDesign {
    pub kind: PrecoderKind,
    pub cells: usize,
    pub ues_per_cell: usize,
    pilot_power: f64,
    noise_power: f64,
    kappa_rb: f64,
    /// α̃_d = α_d (1 + κ_tu²)
    alpha_tilde: f64,
    ue_dac_gain: f64,
    adc_gain: DVector<f64>,
    /// Σ_i p C_li^l + Σ_{l'≠l} Σ_i p R̄_l'i^l + σ² I
    du_static: Vec<CMat>,
    /// Σ_i α̃ p C_li^l + Σ_{l'≠l} Σ_i α̃ p R̄_l'i^l + σ² I
    da_static: Vec<CMat>,
    /// Diagonal of the statistical part of Ŵ^l.
    w_static: Vec<DVector<f64>>,
}

impl PrecoderDesign {
    pub fn new(
        kind: PrecoderKind,
        stats: &StatisticsSet,
        estimator: &Estimator,
        profile: &HardwareProfile,
        bussgang: &BussgangMatrices,
        config: &SystemConfig,
    ) -> Result<Self> {
        let (l_n, k_n, m) = (stats.cells, stats.ues_per_cell, stats.antennas);
        let p = config.pilot_power;
        let alpha_tilde = bussgang.ue_dac_gain * (1.0 + profile.kappa_tu * profile.kappa_tu);
        let mut du_static = Vec::with_capacity(l_n);
        let mut da_static = Vec::with_capacity(l_n);
        let mut w_static = Vec::with_capacity(l_n);
        for l in 0..l_n {
            let mut stat = CMat::zeros(m, m);
            for lp in 0..l_n {
                for i in 0..k_n {
                    if lp == l {
                        stat += estimator.error_covariance(l, i);
                    } else {
                        stat += &stats.get(lp, i, l).full_cov;
                    }
                }
            }
            let diag = DVector::from_iterator(m, stat.diagonal().iter().map(|z| alpha_tilde * p * z.re));
            let mut du = &stat * c(p);
            let mut da = &stat * c(alpha_tilde * p);
            for i in 0..m {
                du[(i, i)] += c(config.noise_power);
                da[(i, i)] += c(config.noise_power);
            }
            du_static.push(hermitian_part(&du));
            da_static.push(hermitian_part(&da));
            w_static.push(diag);
        }
        Ok(Self {
            kind,
            cells: l_n,
            ues_per_cell: k_n,
            pilot_power: p,
            noise_power: config.noise_power,
            kappa_rb: profile.kappa_rb,
            alpha_tilde,
            ue_dac_gain: bussgang.ue_dac_gain,
            adc_gain: bussgang.adc_gain.clone(),
            du_static,
            da_static,
            w_static,
        })
    }

    fn own_block(&self, own: &[CVec], l: usize) -> Result<CMat> {
        if own.len() != self.cells * self.ues_per_cell {
            return Err(Error::Contract(format!(
                "expected {} own-cell estimates, got {}",
                self.cells * self.ues_per_cell,
                own.len()
            )));
        }
        Ok(CMat::from_columns(&own[l * self.ues_per_cell..(l + 1) * self.ues_per_cell]))
    }

    /// Unnormalized directions `v_lk` for one realization, indexed `l * K + k`.
    /// `own` holds the own-cell estimates `ĥ_lk^l` in the same order.
    pub fn directions(&self, own: &[CVec]) -> Result<Vec<CVec>> {
        let mut out = Vec::with_capacity(own.len());
        for l in 0..self.cells {
            let h = self.own_block(own, l)?;
            let v = match self.kind {
                PrecoderKind::Mr => h,
                PrecoderKind::DuMmse => self.du_matrix(l, &h),
                PrecoderKind::DaMmse => self.da_matrix(l, &h)?,
            };
            out.extend(v.column_iter().map(|col| col.into_owned()));
        }
        Ok(out)
    }

    fn du_matrix(&self, l: usize, h: &CMat) -> CMat {
        let z = &self.du_static[l] + h * h.adjoint() * c(self.pilot_power);
        solve(&z, h)
    }

    /// Ŵ^l (diagonal) and X = Σ α̃ p (ĥĥᴴ + C) + Σ α̃ p R̄ + κ_rb² Ŵ + σ² I.
    fn da_parts(&self, l: usize, h: &CMat) -> (DVector<f64>, CMat) {
        let scale = self.alpha_tilde * self.pilot_power;
        let mut w = self.w_static[l].clone();
        for col in h.column_iter() {
            for (wi, z) in w.iter_mut().zip(col.iter()) {
                *wi += scale * z.norm_sqr();
            }
        }
        let mut x = &self.da_static[l] + h * h.adjoint() * c(scale);
        let k2 = self.kappa_rb * self.kappa_rb;
        for i in 0..w.len() {
            x[(i, i)] += c(k2 * w[i]);
        }
        (w, x)
    }

    /// V̂⁻¹ Ĥ with V̂ = X A + (I − A) Ŝ, solved as A⁻¹ (X + (I − A) Ŝ A⁻¹)⁻¹ Ĥ
    /// so the system matrix stays Hermitian positive definite.
    fn da_matrix(&self, l: usize, h: &CMat) -> Result<CMat> {
        let (w, mut x) = self.da_parts(l, h);
        let k2 = self.kappa_rb * self.kappa_rb;
        for i in 0..w.len() {
            let a = self.adc_gain[i];
            if a <= 0.0 {
                return Err(Error::Numerical(format!("zero ADC gain at antenna {i}")));
            }
            let s = (1.0 + k2) * w[i] + self.noise_power;
            x[(i, i)] += c((1.0 - a) * s / a);
        }
        let mut u = solve(&x, h);
        for (i, mut row) in u.row_iter_mut().enumerate() {
            row.scale_mut(1.0 / self.adc_gain[i]);
        }
        Ok(u)
    }

    /// `(ã, B̃)` of the uplink SINR `|vᴴã|² / vᴴB̃v` for UE `(l, k)`.
    pub fn uplink_quotient(&self, own: &[CVec], l: usize, k: usize) -> Result<(CVec, CMat)> {
        let h = self.own_block(own, l)?;
        let (w, x) = self.da_parts(l, &h);
        let a = &self.adc_gain;
        let a_tilde = h.column(k).component_mul(&a.map(c)) * c(self.ue_dac_gain * self.pilot_power.sqrt());
        let mut b = x.clone();
        for i in 0..a.len() {
            for j in 0..a.len() {
                b[(i, j)] *= a[i] * a[j];
            }
        }
        let k2 = self.kappa_rb * self.kappa_rb;
        for i in 0..a.len() {
            let s = (1.0 + k2) * w[i] + self.noise_power;
            b[(i, i)] += c(a[i] * (1.0 - a[i]) * s);
        }
        b -= &a_tilde * a_tilde.adjoint();
        Ok((a_tilde, hermitian_part(&b)))
    }
}

/// Solves `Z V = H` for Hermitian PD `Z`, falling back to LU if the Cholesky
/// factorization is lost to rounding.
fn solve(z: &CMat, h: &CMat) -> CMat {
    match z.clone().cholesky() {
        Some(ch) => ch.solve(h),
        None => z.clone().lu().solve(h).unwrap_or_else(|| h.clone()),
    }
}

/// Uplink SINR `|vᴴã|² / vᴴB̃v`.
pub fn uplink_sinr(v: &CVec, a_tilde: &CVec, b_tilde: &CMat) -> f64 {
    let num = v.dotc(a_tilde).norm_sqr();
    let den = v.dotc(&(b_tilde * v)).re;
    num / den
}

/// `ω = 1/√(mean ‖v‖²)` from accumulated squared norms.
pub fn normalization(sum_sq_norms: &[f64], samples: usize) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::Degenerate("no precoder samples".into()));
    }
    sum_sq_norms
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mean = s / samples as f64;
            if mean > 0.0 && mean.is_finite() {
                Ok(1.0 / mean.sqrt())
            } else {
                Err(Error::Degenerate(format!("precoder {i} has zero mean norm")))
            }
        })
        .collect()
}

/// Normalization scalars from direction samples `samples[n][lk]`.
pub fn normalize_precoders(samples: &[Vec<CVec>]) -> Result<Vec<f64>> {
    let first = samples.first().ok_or_else(|| Error::Degenerate("no precoder samples".into()))?;
    let mut acc = vec![0.0; first.len()];
    for s in samples {
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v.norm_squared();
        }
    }
    normalization(&acc, samples.len())
}

/// Normalized precoders `w_lk = ω_lk v_lk` over a set of realizations.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    pub kind: PrecoderKind,
    /// `w[n][l * K + k]`
    pub w: Vec<Vec<CVec>>,
    pub omega: Vec<f64>,
}

impl PrecoderSet {
    pub fn from_directions(kind: PrecoderKind, directions: Vec<Vec<CVec>>) -> Result<Self> {
        let omega = normalize_precoders(&directions)?;
        let w = directions
            .into_iter()
            .map(|vs| vs.into_iter().zip(&omega).map(|(v, &o)| v * c(o)).collect())
            .collect();
        Ok(Self { kind, w, omega })
    }
}

/// MR precoders over realizations of own-cell estimates.
pub fn mr_precoder(estimates: &[Vec<CVec>]) -> Result<PrecoderSet> {
    PrecoderSet::from_directions(PrecoderKind::Mr, estimates.to_vec())
}

fn designed(design: &PrecoderDesign, estimates: &[Vec<CVec>]) -> Result<PrecoderSet> {
    let dirs = estimates.iter().map(|e| design.directions(e)).collect::<Result<Vec<_>>>()?;
    PrecoderSet::from_directions(design.kind, dirs)
}

pub fn du_mmse_precoder(
    estimates: &[Vec<CVec>],
    stats: &StatisticsSet,
    estimator: &Estimator,
    profile: &HardwareProfile,
    bussgang: &BussgangMatrices,
    config: &SystemConfig,
) -> Result<PrecoderSet> {
    let design = PrecoderDesign::new(PrecoderKind::DuMmse, stats, estimator, profile, bussgang, config)?;
    designed(&design, estimates)
}

pub fn da_mmse_precoder(
    estimates: &[Vec<CVec>],
    stats: &StatisticsSet,
    estimator: &Estimator,
    profile: &HardwareProfile,
    bussgang: &BussgangMatrices,
    config: &SystemConfig,
) -> Result<PrecoderSet> {
    let design = PrecoderDesign::new(PrecoderKind::DaMmse, stats, estimator, profile, bussgang, config)?;
    designed(&design, estimates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::sample_realization;
    use crate::estimation::simulate_pilot_reception;
    use crate::hardware::{build_bussgang_matrices, Resolution};
    use crate::linalg::{inverse_hpd, C64};
    use crate::rng::{complex_normal_vec, stream, DOMAIN_CHANNEL, DOMAIN_PILOT};
    use crate::scenario::{build_channel_statistics, generate_network};
    use rand::Rng;

    struct Setup {
        config: SystemConfig,
        stats: StatisticsSet,
        profile: HardwareProfile,
        bussgang: BussgangMatrices,
        estimator: Estimator,
    }

    fn setup(cells: usize, ues: usize, antennas: usize, profile: HardwareProfile) -> Setup {
        let config = SystemConfig { cells, ues_per_cell: ues, antennas, pilot_len: ues, ..SystemConfig::desk() };
        let scenario = generate_network(&config).unwrap();
        let stats = build_channel_statistics(&scenario, &config).unwrap();
        let bussgang = build_bussgang_matrices(&profile).unwrap();
        let estimator = Estimator::new(&stats, &profile, &bussgang, &config).unwrap();
        Setup { config, stats, profile, bussgang, estimator }
    }

    fn impaired(antennas: usize) -> HardwareProfile {
        HardwareProfile::dynamic(0.175, 0.1, Resolution::Bits(3), &[1, 2, 3, 4].map(Resolution::Bits), antennas)
    }

    fn own_estimates(s: &Setup, n: u64) -> Vec<CVec> {
        let real = sample_realization(&s.stats, &mut stream(1, DOMAIN_CHANNEL, n));
        let obs = simulate_pilot_reception(&real, &s.profile, &s.bussgang, &s.config, &mut stream(1, DOMAIN_PILOT, n)).unwrap();
        s.estimator.estimate_own(&obs).unwrap()
    }

    fn design(s: &Setup, kind: PrecoderKind) -> PrecoderDesign {
        PrecoderDesign::new(kind, &s.stats, &s.estimator, &s.profile, &s.bussgang, &s.config).unwrap()
    }

    fn cosine(a: &CVec, b: &CVec) -> f64 {
        a.dotc(b).norm() / (a.norm() * b.norm())
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("da".parse::<PrecoderKind>().unwrap(), PrecoderKind::DaMmse);
        assert_eq!("DU-MMSE".parse::<PrecoderKind>().unwrap(), PrecoderKind::DuMmse);
        assert_eq!(PrecoderKind::Mr.to_string(), "MR");
        assert!("ZF".parse::<PrecoderKind>().is_err());
    }

    #[test]
    fn mr_normalization_examples() {
        let h = CVec::from_vec(vec![C64::new(3.0, 0.0), C64::new(0.0, 4.0)]);
        let set = mr_precoder(&[vec![h.clone()]]).unwrap();
        assert!((&set.w[0][0] - &h / c(5.0)).norm() < 1e-15);
        let scaled = mr_precoder(&[vec![&h * c(7.0)]]).unwrap();
        assert!((&scaled.w[0][0] - &set.w[0][0]).norm() < 1e-15);

        let v = CVec::from_element(4, c(1.0));
        assert!((normalize_precoders(&[vec![v.clone()]]).unwrap()[0] - 0.5).abs() < 1e-15);
        let w = normalize_precoders(&[vec![&v * c(3.0)]]).unwrap()[0];
        assert!((w - 0.5 / 3.0).abs() < 1e-15);
        assert!(matches!(mr_precoder(&[vec![CVec::zeros(3)]]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn mr_normalized_power_and_analytic_mean() {
        let s = setup(2, 2, 8, impaired(8));
        let samples: Vec<Vec<CVec>> = (0..1000).map(|n| own_estimates(&s, n)).collect();
        let set = mr_precoder(&samples).unwrap();
        for lk in 0..4 {
            let mean: f64 = set.w.iter().map(|w| w[lk].norm_squared()).sum::<f64>() / 1000.0;
            assert!((mean - 1.0).abs() < 0.02);
        }
        let samples: Vec<Vec<CVec>> = (0..4000).map(|n| own_estimates(&s, n)).collect();
        let omega = normalize_precoders(&samples).unwrap();
        let f = s.estimator.filter(0, 1, 0);
        let cyy = &s.estimator.cyy[1];
        let analytic = crate::linalg::real_trace(&(f * cyy * f.adjoint()));
        assert!((1.0 / (omega[1] * omega[1]) / analytic - 1.0).abs() < 0.03);
    }

    #[test]
    fn du_single_ue_without_interference_is_matched_filter() {
        let s = setup(1, 1, 6, HardwareProfile::ideal(6));
        let d = design(&s, PrecoderKind::DuMmse);
        let own = own_estimates(&s, 0);
        let v = d.directions(&own).unwrap();
        // With K = 1 the inverse still has C and σ² I, so the direction is
        // (C + σ² I + p ĥĥᴴ)⁻¹ ĥ. Removing C leaves ĥ.
        let mut zero_err = d.clone();
        let mut noise_only = CMat::identity(6, 6);
        noise_only *= c(s.config.noise_power);
        zero_err.du_static[0] = noise_only;
        let v0 = zero_err.directions(&own).unwrap();
        assert!(cosine(&v0[0], &own[0]) > 1.0 - 1e-12);
        assert!(v[0].norm() > 0.0);
    }

    #[test]
    fn du_heavy_noise_tends_to_mr() {
        let mut s = setup(2, 2, 6, HardwareProfile::ideal(6));
        let own = own_estimates(&s, 2);
        s.config.noise_power = 1e3;
        let d = design(&s, PrecoderKind::DuMmse);
        let v = d.directions(&own).unwrap();
        for (a, b) in v.iter().zip(&own) {
            assert!(cosine(a, b) > 1.0 - 1e-9);
        }
    }

    #[test]
    fn da_collapses_to_du_under_ideal_hardware() {
        let s = setup(2, 3, 8, HardwareProfile::ideal(8));
        let du = design(&s, PrecoderKind::DuMmse);
        let da = design(&s, PrecoderKind::DaMmse);
        for n in 0..5 {
            let own = own_estimates(&s, n);
            let a = du.directions(&own).unwrap();
            let b = da.directions(&own).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!(cosine(x, y) >= 1.0 - 1e-6);
                assert!((x - y).norm() <= 1e-6 * x.norm());
            }
        }
    }

    #[test]
    fn rank_one_update_identity() {
        let mut rng = stream(11, 0, 0);
        for _ in 0..20 {
            let g = CMat::from_fn(5, 5, |_, _| crate::rng::complex_normal(&mut rng, 1.0));
            let a_mat = &g * g.adjoint() + CMat::identity(5, 5) * c(0.1);
            let a = complex_normal_vec(&mut rng, 5, 1.0);
            let lhs = inverse_hpd(&(&a_mat + &a * a.adjoint())).unwrap() * &a;
            let base = inverse_hpd(&a_mat).unwrap() * &a;
            let quad = a.dotc(&base).re;
            assert!((cosine(&lhs, &base) - 1.0).abs() < 1e-10);
            assert!((&lhs * c(1.0 + quad) - &base).norm() < 1e-9 * base.norm());
        }
    }

    #[test]
    fn da_direction_solves_uplink_rayleigh_quotient() {
        let s = setup(2, 2, 8, impaired(8));
        let da = design(&s, PrecoderKind::DaMmse);
        let du = design(&s, PrecoderKind::DuMmse);
        let mr = design(&s, PrecoderKind::Mr);
        let mut rng = stream(5, 0, 0);
        for n in 0..100 {
            let own = own_estimates(&s, n);
            let (v_da, v_du, v_mr) = (da.directions(&own).unwrap(), du.directions(&own).unwrap(), mr.directions(&own).unwrap());
            for lk in 0..4 {
                let (l, k) = (lk / 2, lk % 2);
                let (a, b) = da.uplink_quotient(&own, l, k).unwrap();
                let best = uplink_sinr(&v_da[lk], &a, &b);
                assert!(best >= uplink_sinr(&v_du[lk], &a, &b) * (1.0 - 1e-10));
                assert!(best >= uplink_sinr(&v_mr[lk], &a, &b) * (1.0 - 1e-10));
                // B̃⁻¹ ã is the unique maximizer direction.
                let direct = crate::linalg::solve_hpd_vec(&b, &a).unwrap();
                assert!(cosine(&direct, &v_da[lk]) > 1.0 - 1e-8);
                if n < 5 {
                    for _ in 0..100 {
                        let d = complex_normal_vec(&mut rng, 8, 1.0);
                        let step = 1e-3 * v_da[lk].norm() / d.norm() * rng.random::<f64>();
                        let perturbed = &v_da[lk] + d * c(step);
                        assert!(uplink_sinr(&perturbed, &a, &b) <= best * (1.0 + 1e-8));
                    }
                }
            }
        }
    }

    #[test]
    fn directions_are_scale_free_outputs() {
        let s = setup(2, 2, 4, impaired(4));
        let da = design(&s, PrecoderKind::DaMmse);
        assert!(matches!(da.directions(&[CVec::zeros(4)]), Err(Error::Contract(_))));
        let own = own_estimates(&s, 0);
        let set = da_mmse_precoder(&[own.clone(), own_estimates(&s, 1)], &s.stats, &s.estimator, &s.profile, &s.bussgang, &s.config)
            .unwrap();
        assert_eq!(set.kind, PrecoderKind::DaMmse);
        assert_eq!(set.omega.len(), 4);
        let du = du_mmse_precoder(&[own], &s.stats, &s.estimator, &s.profile, &s.bussgang, &s.config).unwrap();
        assert!(du.w[0].iter().all(|w| (w.norm() - 1.0).abs() < 1e-12));
    }
}
