//! Hardening-bound downlink SINR.
//!
//! UE `(l, k)` receives `y = α_a (Σ_r h_lkʳᴴ x_RFʳ + η_ru + n) + n_ADC`, where
//! BS `r` sends `x_r = Σ_k' w_rk' Σ_n γ_nk'ʳ s_nk'` through its DAC and
//! transmit RF chain. With `g_lk,k'ʳ = h_lkʳᴴ A_dʳ w_rk'ʳ`, the bound uses
//!
//! - `b_lkʳ = E{g_lk,kʳ}`
//! - `G_lkk'[r, r'] = E{g_lk,k'ʳ g_lk,k'ʳ'*}`
//! - `e_lkk'ʳ = E{Σ_i B_d,i |w_rk',i|² |h_lk,iʳ|²}` and `f` with `A_d` in place of `B_d`.
//!
//! The desired power is `N = α_a² |γ_lkᵀ b_lk|²`. The total received power is
//! `α_a [(1 + κ_ru²) Q + σ²]` with
//! `Q = Σ_{n,k'} γ_nk'ᵀ Re(G_lkk') γ_nk' + Σ_{r,k'} (e + κ_tb² f)_lkk'ʳ Σ_n (γ_nk'ʳ)²`.
//! `SINR = N / D` with `D` the total minus `N`. γ is real and nonnegative.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{sample_realization, ChannelRealization};
use crate::error::{Error, Result};
use crate::estimation::{simulate_pilot_reception, Estimator};
use crate::hardware::{build_bussgang_matrices, BussgangMatrices, HardwareProfile};
use crate::linalg::{CVec, C64};
use crate::precoding::{normalization, PrecoderDesign, PrecoderKind};
use crate::rng::{complex_normal, stream, uniform_phase, DOMAIN_CHANNEL, DOMAIN_DOWNLINK, DOMAIN_PILOT};
use crate::scenario::{build_channel_statistics, generate_network, Scenario, StatisticsSet, SystemConfig};

/// Realizations processed per parallel task. Partial sums are combined in
/// chunk order so the result does not depend on the thread count.
const CHUNK: usize = 32;

pub const MIN_MC_SAMPLES: usize = 100;

/// Data symbols sent per coherence block in the direct downlink simulation.
pub const ORACLE_SYMBOLS_PER_BLOCK: usize = 32;

/// Everything needed to draw channels, pilot observations and estimates.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: SystemConfig,
    pub profile: HardwareProfile,
    pub bussgang: BussgangMatrices,
    pub scenario: Scenario,
    pub stats: StatisticsSet,
    pub estimator: Estimator,
}

/// One joint draw of channels and own-cell estimates.
#[derive(Debug, Clone)]
pub struct Draw {
    pub channels: ChannelRealization,
    /// `ĥ_lk^l`, indexed `l * K + k`.
    pub own_estimates: Vec<CVec>,
}

impl Simulation {
    pub fn new(config: SystemConfig, profile: HardwareProfile, scenario: Scenario) -> Result<Self> {
        config.validate()?;
        profile.validate(config.antennas)?;
        let bussgang = build_bussgang_matrices(&profile)?;
        let stats = build_channel_statistics(&scenario, &config)?;
        let estimator = Estimator::new(&stats, &profile, &bussgang, &config)?;
        Ok(Self { config, profile, bussgang, scenario, stats, estimator })
    }

    /// Drops UEs with `config.seed` and builds the simulation.
    pub fn generate(config: SystemConfig, profile: HardwareProfile) -> Result<Self> {
        config.validate()?;
        let scenario = generate_network(&config)?;
        Self::new(config, profile, scenario)
    }

    /// Realization `n`: the same `n` always yields the same draw.
    pub fn draw(&self, n: u64) -> Result<Draw> {
        let seed = self.config.seed;
        let channels = sample_realization(&self.stats, &mut stream(seed, DOMAIN_CHANNEL, n));
        let obs = simulate_pilot_reception(
            &channels,
            &self.profile,
            &self.bussgang,
            &self.config,
            &mut stream(seed, DOMAIN_PILOT, n),
        )?;
        let own_estimates = self.estimator.estimate_own(&obs)?;
        Ok(Draw { channels, own_estimates })
    }

    pub fn design(&self, kind: PrecoderKind) -> Result<PrecoderDesign> {
        PrecoderDesign::new(kind, &self.stats, &self.estimator, &self.profile, &self.bussgang, &self.config)
    }
}

/// Monte-Carlo estimates of the statistical terms of the SINR bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrTerms {
    pub cells: usize,
    pub ues_per_cell: usize,
    pub samples: usize,
    /// `b_lkʳ` at `(l*K + k)*L + r`.
    pub b: Vec<C64>,
    /// `G_lkk'[r, r']` at `(((l*K + k)*K + k')*L + r)*L + r'`.
    pub gram: Vec<C64>,
    /// `e_lkk'ʳ` at `((l*K + k)*K + k')*L + r`.
    pub e: Vec<f64>,
    /// `f_lkk'ʳ`, indexed like `e`.
    pub f: Vec<f64>,
    /// UE ADC gains `α_a`, indexed `l*K + k`.
    pub alpha_a: Vec<f64>,
    pub kappa_ru: f64,
    pub kappa_tb: f64,
    pub sigma2: f64,
    /// Precoder normalization `ω_rk`, indexed `r*K + k`.
    pub omega: Vec<f64>,
}

impl SinrTerms {
    pub fn num_ues(&self) -> usize {
        self.cells * self.ues_per_cell
    }

    pub fn b_index(&self, lk: usize, r: usize) -> usize {
        lk * self.cells + r
    }

    pub fn gram_index(&self, lk: usize, kp: usize, r: usize, rp: usize) -> usize {
        ((lk * self.ues_per_cell + kp) * self.cells + r) * self.cells + rp
    }

    pub fn diag_index(&self, lk: usize, kp: usize, r: usize) -> usize {
        (lk * self.ues_per_cell + kp) * self.cells + r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Unnormalized running sums over realizations.
#[derive(Debug, Clone)]
struct TermSums {
    b: Vec<C64>,
    gram: Vec<C64>,
    e: Vec<f64>,
    f: Vec<f64>,
    norms: Vec<f64>,
}

impl TermSums {
    fn zeros(l_n: usize, k_n: usize) -> Self {
        let ues = l_n * k_n;
        Self {
            b: vec![C64::new(0.0, 0.0); ues * l_n],
            gram: vec![C64::new(0.0, 0.0); ues * k_n * l_n * l_n],
            e: vec![0.0; ues * k_n * l_n],
            f: vec![0.0; ues * k_n * l_n],
            norms: vec![0.0; ues],
        }
    }

    fn add(&mut self, other: &Self) {
        fn acc<T: Copy + std::ops::AddAssign>(a: &mut [T], b: &[T]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
        acc(&mut self.b, &other.b);
        acc(&mut self.gram, &other.gram);
        acc(&mut self.e, &other.e);
        acc(&mut self.f, &other.f);
        acc(&mut self.norms, &other.norms);
    }
}

/// `g_lk,k'ʳ` with the unnormalized directions, for every `lk`, `k'`, `r`,
/// plus the `e`/`f` sums. Shared by the term estimator and the oracle.
struct Projections {
    /// `((lk*K + k')*L + r)`
    g: Vec<C64>,
    e: Vec<f64>,
    f: Vec<f64>,
}

fn projections(draw: &Draw, dirs: &[CVec], bussgang: &BussgangMatrices, l_n: usize, k_n: usize) -> Projections {
    let m = dirs.first().map_or(0, |v| v.len());
    let a = &bussgang.dac_gain;
    let bn = &bussgang.dac_noise;
    let weighted: Vec<CVec> = dirs.iter().map(|v| CVec::from_fn(m, |i, _| v[i] * a[i])).collect();
    let sq: Vec<Vec<f64>> = dirs.iter().map(|v| v.iter().map(|z| z.norm_sqr()).collect()).collect();
    let n = l_n * k_n * k_n * l_n;
    let mut g = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    for l in 0..l_n {
        for k in 0..k_n {
            for kp in 0..k_n {
                for r in 0..l_n {
                    let h = draw.channels.get(l, k, r);
                    let rk = r * k_n + kp;
                    g.push(h.dotc(&weighted[rk]));
                    let (mut es, mut fs) = (0.0, 0.0);
                    for i in 0..m {
                        let p = h[i].norm_sqr() * sq[rk][i];
                        es += bn[i] * p;
                        fs += a[i] * p;
                    }
                    e.push(es);
                    f.push(fs);
                }
            }
        }
    }
    Projections { g, e, f }
}

fn accumulate_terms(sim: &Simulation, design: &PrecoderDesign, range: std::ops::Range<usize>) -> Result<TermSums> {
    let (l_n, k_n) = (sim.config.cells, sim.config.ues_per_cell);
    let mut sums = TermSums::zeros(l_n, k_n);
    for n in range {
        let draw = sim.draw(n as u64)?;
        let dirs = design.directions(&draw.own_estimates)?;
        for (s, v) in sums.norms.iter_mut().zip(&dirs) {
            *s += v.norm_squared();
        }
        let p = projections(&draw, &dirs, &sim.bussgang, l_n, k_n);
        for lk in 0..l_n * k_n {
            let k = lk % k_n;
            for kp in 0..k_n {
                let base = (lk * k_n + kp) * l_n;
                for r in 0..l_n {
                    sums.e[base + r] += p.e[base + r];
                    sums.f[base + r] += p.f[base + r];
                    if kp == k {
                        sums.b[lk * l_n + r] += p.g[base + r];
                    }
                    for rp in 0..l_n {
                        sums.gram[(base + r) * l_n + rp] += p.g[base + r] * p.g[base + rp].conj();
                    }
                }
            }
        }
    }
    Ok(sums)
}

fn chunked<T, F>(n_mc: usize, work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> Result<T> + Sync,
{
    let chunks = n_mc.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| work(c * CHUNK..((c + 1) * CHUNK).min(n_mc)))
        .collect()
}

/// Estimates `b`, `G`, `e`, `f` and the precoder normalization from the same
/// `n_mc` realizations.
pub fn estimate_sinr_terms(sim: &Simulation, kind: PrecoderKind, n_mc: usize) -> Result<SinrTerms> {
    if n_mc < MIN_MC_SAMPLES {
        return Err(Error::Domain(format!("at least {MIN_MC_SAMPLES} Monte-Carlo samples are required, got {n_mc}")));
    }
    let design = sim.design(kind)?;
    let (l_n, k_n) = (sim.config.cells, sim.config.ues_per_cell);
    let parts = chunked(n_mc, |range| accumulate_terms(sim, &design, range))?;
    let mut sums = TermSums::zeros(l_n, k_n);
    for p in &parts {
        sums.add(p);
    }
    let omega = normalization(&sums.norms, n_mc)?;
    let inv = 1.0 / n_mc as f64;

    let mut terms = SinrTerms {
        cells: l_n,
        ues_per_cell: k_n,
        samples: n_mc,
        b: sums.b,
        gram: sums.gram,
        e: sums.e,
        f: sums.f,
        alpha_a: vec![sim.bussgang.ue_adc_gain; l_n * k_n],
        kappa_ru: sim.profile.kappa_ru,
        kappa_tb: sim.profile.kappa_tb,
        sigma2: sim.config.noise_power,
        omega,
    };
    for lk in 0..l_n * k_n {
        let k = lk % k_n;
        for r in 0..l_n {
            let i = terms.b_index(lk, r);
            terms.b[i] *= inv * terms.omega[r * k_n + k];
        }
        for kp in 0..k_n {
            for r in 0..l_n {
                let wr = terms.omega[r * k_n + kp];
                let i = terms.diag_index(lk, kp, r);
                terms.e[i] *= inv * wr * wr;
                terms.f[i] *= inv * wr * wr;
                for rp in 0..l_n {
                    let i = terms.gram_index(lk, kp, r, rp);
                    terms.gram[i] *= inv * wr * terms.omega[rp * k_n + kp];
                }
            }
        }
    }
    Ok(terms)
}

/// LSFP coefficients `γ_lkʳ` at `(l*K + k)*L + r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsfpWeights {
    pub cells: usize,
    pub ues_per_cell: usize,
    pub gamma: Vec<f64>,
}

impl LsfpWeights {
    pub fn zeros(cells: usize, ues_per_cell: usize) -> Self {
        Self { cells, ues_per_cell, gamma: vec![0.0; cells * ues_per_cell * cells] }
    }

    pub fn index(&self, l: usize, k: usize, r: usize) -> usize {
        (l * self.ues_per_cell + k) * self.cells + r
    }

    pub fn get(&self, l: usize, k: usize, r: usize) -> f64 {
        self.gamma[self.index(l, k, r)]
    }

    pub fn set(&mut self, l: usize, k: usize, r: usize, value: f64) {
        let i = self.index(l, k, r);
        self.gamma[i] = value;
    }

    /// `Σ_{l,k} (γ_lkʳ)²` for BS `r`.
    pub fn bs_power(&self, r: usize) -> f64 {
        (0..self.cells * self.ues_per_cell).map(|lk| self.gamma[lk * self.cells + r].powi(2)).sum()
    }

    /// Largest `Σ_{l,k} (γ_lkʳ)² − ρ_d` over BSs; nonpositive when feasible.
    pub fn max_power_excess(&self, rho_d: f64) -> f64 {
        (0..self.cells).map(|r| self.bs_power(r) - rho_d).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_feasible(&self, rho_d: f64, tol: f64) -> bool {
        self.gamma.iter().all(|&g| g >= 0.0 && g.is_finite()) && self.max_power_excess(rho_d) <= tol * rho_d
    }
}

/// Single-layer precoding: `γ_lkˡ = √p_lk` and zero elsewhere. `powers` is
/// indexed `l*K + k`.
pub fn slp_weights(cells: usize, ues_per_cell: usize, powers: &[f64], rho_d: f64) -> Result<LsfpWeights> {
    if powers.len() != cells * ues_per_cell {
        return Err(Error::Contract(format!("expected {} powers, got {}", cells * ues_per_cell, powers.len())));
    }
    let mut w = LsfpWeights::zeros(cells, ues_per_cell);
    for l in 0..cells {
        let cell = &powers[l * ues_per_cell..(l + 1) * ues_per_cell];
        if cell.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Constraint(format!("negative or invalid power in cell {l}")));
        }
        let total: f64 = cell.iter().sum();
        if total > rho_d * (1.0 + 1e-12) {
            return Err(Error::Constraint(format!("cell {l} uses {total} W of a {rho_d} W budget")));
        }
        for (k, &p) in cell.iter().enumerate() {
            w.set(l, k, l, p.sqrt());
        }
    }
    Ok(w)
}

/// SLP with the budget split equally among the cell's UEs.
pub fn equal_power_slp(cells: usize, ues_per_cell: usize, rho_d: f64) -> LsfpWeights {
    let mut w = LsfpWeights::zeros(cells, ues_per_cell);
    let g = (rho_d / ues_per_cell as f64).sqrt();
    for l in 0..cells {
        for k in 0..ues_per_cell {
            w.set(l, k, l, g);
        }
    }
    w
}

/// Numerator `N_lk` and denominator `D_lk` for every UE.
pub fn sinr_parts(terms: &SinrTerms, weights: &LsfpWeights) -> Result<Vec<(f64, f64)>> {
    let (l_n, k_n) = (terms.cells, terms.ues_per_cell);
    if weights.cells != l_n || weights.ues_per_cell != k_n {
        return Err(Error::Contract("weights do not match the SINR terms".into()));
    }
    let g = &weights.gamma;
    let k_tb2 = terms.kappa_tb * terms.kappa_tb;
    let mut out = Vec::with_capacity(l_n * k_n);
    for lk in 0..l_n * k_n {
        let alpha = terms.alpha_a[lk];
        let mut s = C64::new(0.0, 0.0);
        for r in 0..l_n {
            s += terms.b[terms.b_index(lk, r)] * g[lk * l_n + r];
        }
        let num = alpha * alpha * s.norm_sqr();
        let mut q = 0.0;
        for kp in 0..k_n {
            for nn in 0..l_n {
                let gv = &g[(nn * k_n + kp) * l_n..(nn * k_n + kp + 1) * l_n];
                for r in 0..l_n {
                    let d = terms.e[terms.diag_index(lk, kp, r)] + k_tb2 * terms.f[terms.diag_index(lk, kp, r)];
                    q += d * gv[r] * gv[r];
                    for rp in 0..l_n {
                        q += terms.gram[terms.gram_index(lk, kp, r, rp)].re * gv[r] * gv[rp];
                    }
                }
            }
        }
        let total = alpha * ((1.0 + terms.kappa_ru * terms.kappa_ru) * q + terms.sigma2);
        out.push((num, total - num));
    }
    Ok(out)
}

/// Closed-form SINR of every UE, indexed `l*K + k`.
pub fn sinr_closed_form(terms: &SinrTerms, weights: &LsfpWeights) -> Result<Vec<f64>> {
    sinr_parts(terms, weights)?
        .into_iter()
        .enumerate()
        .map(|(i, (n, d))| {
            if d > 0.0 && d.is_finite() {
                Ok(n / d)
            } else {
                Err(Error::Numerical(format!("nonpositive SINR denominator {d:e} for UE {i}")))
            }
        })
        .collect()
}

/// Per-UE spectral efficiencies `prelog · log2(1 + SINR)`.
pub fn per_ue_se(terms: &SinrTerms, weights: &LsfpWeights, config: &SystemConfig) -> Result<Vec<f64>> {
    let prelog = config.prelog();
    Ok(sinr_closed_form(terms, weights)?.into_iter().map(|s| prelog * (1.0 + s).log2()).collect())
}

pub fn sum_se(terms: &SinrTerms, weights: &LsfpWeights, config: &SystemConfig) -> Result<f64> {
    Ok(per_ue_se(terms, weights, config)?.iter().sum())
}

#[derive(Debug, Clone)]
struct OracleSums {
    /// Σ y s_lk*
    corr: Vec<C64>,
    /// Σ |y|²
    power: Vec<f64>,
}

fn oracle_chunk(
    sim: &Simulation,
    design: &PrecoderDesign,
    omega: &[f64],
    weights: &LsfpWeights,
    symbols_on: bool,
    range: std::ops::Range<usize>,
) -> Result<OracleSums> {
    let (l_n, k_n, m) = (sim.config.cells, sim.config.ues_per_cell, sim.config.antennas);
    let ues = l_n * k_n;
    let bg = &sim.bussgang;
    let prof = &sim.profile;
    let k_tb2 = prof.kappa_tb * prof.kappa_tb;
    let k_ru2 = prof.kappa_ru * prof.kappa_ru;
    let alpha_a = bg.ue_adc_gain;
    let gamma = &weights.gamma;
    let sym_power = if symbols_on { 1.0 } else { 0.0 };
    let mut sums = OracleSums { corr: vec![C64::new(0.0, 0.0); ues], power: vec![0.0; ues] };

    for n in range {
        let draw = sim.draw(n as u64)?;
        let mut dirs = design.directions(&draw.own_estimates)?;
        for (v, &o) in dirs.iter_mut().zip(omega) {
            *v *= C64::new(o, 0.0);
        }

        // D^r = diag(E[x_r x_rᴴ | h]) and δ_lk = E[|Σ_r h_lkʳᴴ x_RFʳ|² | h].
        let d_diag: Vec<Vec<f64>> = (0..l_n)
            .map(|r| {
                let mut d = vec![0.0; m];
                for kp in 0..k_n {
                    let pow: f64 = (0..l_n).map(|nn| gamma[(nn * k_n + kp) * l_n + r].powi(2)).sum::<f64>() * sym_power;
                    for (di, z) in d.iter_mut().zip(dirs[r * k_n + kp].iter()) {
                        *di += z.norm_sqr() * pow;
                    }
                }
                d
            })
            .collect();
        let p = projections(&draw, &dirs, bg, l_n, k_n);
        let mut delta = vec![0.0; ues];
        for l in 0..l_n {
            for k in 0..k_n {
                let lk = l * k_n + k;
                for (r, d_r) in d_diag.iter().enumerate() {
                    let h = draw.channels.get(l, k, r);
                    for i in 0..m {
                        delta[lk] += (bg.dac_noise[i] + k_tb2 * bg.dac_gain[i]) * h[i].norm_sqr() * d_r[i];
                    }
                }
                for kp in 0..k_n {
                    let base = (lk * k_n + kp) * l_n;
                    for nn in 0..l_n {
                        let mut s = C64::new(0.0, 0.0);
                        for r in 0..l_n {
                            s += p.g[base + r] * gamma[(nn * k_n + kp) * l_n + r];
                        }
                        delta[lk] += s.norm_sqr() * sym_power;
                    }
                }
            }
        }

        let mut rng = stream(sim.config.seed, DOMAIN_DOWNLINK, n as u64);
        for _ in 0..ORACLE_SYMBOLS_PER_BLOCK {
            let symbols: Vec<C64> = (0..ues)
                .map(|_| if symbols_on { C64::from_polar(1.0, uniform_phase(&mut rng)) } else { C64::new(0.0, 0.0) })
                .collect();
            let mut x_rf = Vec::with_capacity(l_n);
            for r in 0..l_n {
                let mut x = CVec::zeros(m);
                for kp in 0..k_n {
                    let u: C64 = (0..l_n).map(|nn| symbols[nn * k_n + kp] * gamma[(nn * k_n + kp) * l_n + r]).sum();
                    x.axpy(u, &dirs[r * k_n + kp], C64::new(1.0, 0.0));
                }
                for i in 0..m {
                    let (a, d) = (bg.dac_gain[i], d_diag[r][i]);
                    x[i] = x[i] * a + complex_normal(&mut rng, bg.dac_noise[i] * d) + complex_normal(&mut rng, k_tb2 * a * d);
                }
                x_rf.push(x);
            }
            for l in 0..l_n {
                for k in 0..k_n {
                    let lk = l * k_n + k;
                    let u: C64 = (0..l_n).map(|r| draw.channels.get(l, k, r).dotc(&x_rf[r])).sum();
                    let y_rf =
                        u + complex_normal(&mut rng, k_ru2 * delta[lk]) + complex_normal(&mut rng, sim.config.noise_power);
                    let eps = (1.0 + k_ru2) * delta[lk] + sim.config.noise_power;
                    let y = y_rf * alpha_a + complex_normal(&mut rng, alpha_a * (1.0 - alpha_a) * eps);
                    sums.corr[lk] += y * symbols[lk].conj();
                    sums.power[lk] += y.norm_sqr();
                }
            }
        }
    }
    Ok(sums)
}

/// Empirical SINR from a direct simulation of the impaired downlink over
/// realizations `0..n_mc`, each carrying [`ORACLE_SYMBOLS_PER_BLOCK`] data
/// symbols: `|E{y s*}|² / (E|y|² − |E{y s*}|²)`.
/// `omega` is the precoder normalization, usually [`SinrTerms::omega`].
pub fn mc_validate_sinr(
    sim: &Simulation,
    kind: PrecoderKind,
    omega: &[f64],
    weights: &LsfpWeights,
    n_mc: usize,
) -> Result<Vec<f64>> {
    let (signal, total) = mc_received_powers(sim, kind, omega, weights, n_mc, true)?;
    Ok(signal.iter().zip(&total).map(|(s, t)| s / (t - s)).collect())
}

/// Desired and total received power per UE from the direct simulation. With
/// `symbols_on == false` every data symbol is zero.
pub fn mc_received_powers(
    sim: &Simulation,
    kind: PrecoderKind,
    omega: &[f64],
    weights: &LsfpWeights,
    n_mc: usize,
    symbols_on: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n_mc == 0 {
        return Err(Error::Domain("at least one Monte-Carlo sample is required".into()));
    }
    let design = sim.design(kind)?;
    let parts = chunked(n_mc, |range| oracle_chunk(sim, &design, omega, weights, symbols_on, range))?;
    let ues = sim.config.num_ues();
    let mut corr = vec![C64::new(0.0, 0.0); ues];
    let mut power = vec![0.0; ues];
    for part in &parts {
        for i in 0..ues {
            corr[i] += part.corr[i];
            power[i] += part.power[i];
        }
    }
    let inv = 1.0 / (n_mc * ORACLE_SYMBOLS_PER_BLOCK) as f64;
    let signal = corr.iter().map(|c| (c * inv).norm_sqr()).collect();
    let total = power.iter().map(|p| p * inv).collect();
    Ok((signal, total))
}

/// Random feasible LSFP weights: nonnegative, each BS block scaled to a
/// random fraction of the budget.
pub fn random_feasible_weights<R: Rng + ?Sized>(cells: usize, ues_per_cell: usize, rho_d: f64, rng: &mut R) -> LsfpWeights {
    let mut w = LsfpWeights::zeros(cells, ues_per_cell);
    for g in w.gamma.iter_mut() {
        *g = rng.random::<f64>();
    }
    for r in 0..cells {
        let p = w.bs_power(r);
        let target = rho_d * rng.random::<f64>();
        let s = if p > 0.0 { (target / p).sqrt() } else { 0.0 };
        for lk in 0..cells * ues_per_cell {
            w.gamma[lk * cells + r] *= s;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::Resolution;
    use crate::linalg::real_trace;

    fn desk(profile: HardwareProfile, cells: usize, ues: usize, antennas: usize, seed: u64) -> Simulation {
        let config = SystemConfig { cells, ues_per_cell: ues, antennas, pilot_len: ues, seed, ..SystemConfig::desk() };
        Simulation::generate(config, profile).unwrap()
    }

    fn impaired(antennas: usize) -> HardwareProfile {
        HardwareProfile::dynamic(0.1, 0.05, Resolution::Bits(4), &[2, 3, 4, 6].map(Resolution::Bits), antennas)
    }

    #[test]
    fn pure_los_mr_single_ue() {
        let mut config =
            SystemConfig { cells: 1, ues_per_cell: 1, antennas: 8, pilot_len: 1, area_side: 200.0, ..SystemConfig::desk() };
        config.propagation.rician_intercept = 60.0;
        config.propagation.rician_slope_per_m = 0.0;
        let sim = Simulation::generate(config, HardwareProfile::ideal(8)).unwrap();
        let terms = estimate_sinr_terms(&sim, PrecoderKind::Mr, 4000).unwrap();
        let f = sim.estimator.filter(0, 0, 0);
        let r_bar = &sim.stats.get(0, 0, 0).full_cov;
        let tau = sim.config.pilot_len as f64;
        let cross = real_trace(&(f * r_bar)) * sim.config.pilot_power.sqrt() * tau;
        let power = real_trace(&(f * &sim.estimator.cyy[0] * f.adjoint()));
        let expected = cross / power.sqrt();
        assert!((terms.b[0].re / expected - 1.0).abs() < 0.02);
        let los = sim.stats.get(0, 0, 0).los_mean.norm();
        assert!((terms.b[0].norm() / los - 1.0).abs() < 0.02);
    }

    #[test]
    fn gram_dominates_mean_square() {
        let sim = desk(impaired(8), 2, 2, 8, 3);
        let terms = estimate_sinr_terms(&sim, PrecoderKind::DaMmse, 200).unwrap();
        for lk in 0..4 {
            for r in 0..2 {
                let c = terms.gram[terms.gram_index(lk, lk % 2, r, r)];
                assert!(c.im.abs() <= 1e-12 * c.re);
                assert!(c.re >= terms.b[terms.b_index(lk, r)].norm_sqr() * (1.0 - 1e-12));
            }
        }
        let mut rng = stream(1, 0, 0);
        for _ in 0..50 {
            let w = random_feasible_weights(2, 2, 1.0, &mut rng);
            for lk in 0..4 {
                let kp = lk % 2;
                let mut q = 0.0;
                for nn in 0..2 {
                    for r in 0..2 {
                        for rp in 0..2 {
                            q += terms.gram[terms.gram_index(lk, kp, r, rp)].re
                                * w.gamma[(nn * 2 + kp) * 2 + r]
                                * w.gamma[(nn * 2 + kp) * 2 + rp];
                        }
                    }
                }
                assert!(q >= 0.0);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_sinr_and_se() {
        let sim = desk(impaired(4), 2, 2, 4, 1);
        let terms = estimate_sinr_terms(&sim, PrecoderKind::Mr, 100).unwrap();
        let zero = LsfpWeights::zeros(2, 2);
        assert!(sinr_closed_form(&terms, &zero).unwrap().iter().all(|&s| s == 0.0));
        assert_eq!(sum_se(&terms, &zero, &sim.config).unwrap(), 0.0);

        let w = equal_power_slp(2, 2, 1.0);
        let se = sum_se(&terms, &w, &sim.config).unwrap();
        assert!(se > 0.0);
        let mut no_data = sim.config.clone();
        no_data.coherence_len = no_data.pilot_len;
        assert_eq!(sum_se(&terms, &w, &no_data).unwrap(), 0.0);
        let quarter = SystemConfig { coherence_len: 4, pilot_len: 3, ..sim.config.clone() };
        let half = SystemConfig { coherence_len: 4, pilot_len: 2, ..sim.config.clone() };
        let a = sum_se(&terms, &w, &quarter).unwrap();
        let b = sum_se(&terms, &w, &half).unwrap();
        assert!((b / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_ue_sinr_grows_with_power() {
        let sim = desk(impaired(8), 1, 1, 8, 2);
        let terms = estimate_sinr_terms(&sim, PrecoderKind::DaMmse, 200).unwrap();
        let mut last = 0.0;
        for t in [0.01, 0.1, 0.3, 0.6, 1.0] {
            let w = slp_weights(1, 1, &[t], 1.0).unwrap();
            let s = sinr_closed_form(&terms, &w).unwrap()[0];
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn slp_examples() {
        let w = slp_weights(2, 2, &[0.5, 0.5, 0.25, 0.75], 1.0).unwrap();
        assert!(w.is_feasible(1.0, 1e-12));
        assert!((w.bs_power(0) - 1.0).abs() < 1e-15);
        assert_eq!(w.get(0, 0, 1), 0.0);
        let one = slp_weights(1, 1, &[1.0], 1.0).unwrap();
        assert_eq!(one.gamma, vec![1.0]);
        assert!(matches!(slp_weights(1, 2, &[0.8, 0.8], 1.0), Err(Error::Constraint(_))));
        assert!(equal_power_slp(3, 4, 2.0).is_feasible(2.0, 1e-12));
    }

    #[test]
    fn terms_are_deterministic() {
        let sim = desk(impaired(4), 2, 2, 4, 9);
        let a = estimate_sinr_terms(&sim, PrecoderKind::DuMmse, 150).unwrap();
        let b = estimate_sinr_terms(&sim, PrecoderKind::DuMmse, 150).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| estimate_sinr_terms(&sim, PrecoderKind::DuMmse, 150).unwrap());
        assert_eq!(a, c);
        let round = SinrTerms::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(round, a);
    }

    #[test]
    fn too_few_samples_rejected() {
        let sim = desk(impaired(4), 1, 1, 4, 0);
        assert!(matches!(estimate_sinr_terms(&sim, PrecoderKind::Mr, 10), Err(Error::Domain(_))));
    }

    #[test]
    fn oracle_matches_closed_form_single_cell() {
        let sim = desk(HardwareProfile::ideal(8), 1, 2, 8, 4);
        let terms = estimate_sinr_terms(&sim, PrecoderKind::Mr, 4000).unwrap();
        let w = slp_weights(1, 2, &[0.3, 0.7], 1.0).unwrap();
        let closed = sinr_closed_form(&terms, &w).unwrap();
        let oracle = mc_validate_sinr(&sim, PrecoderKind::Mr, &terms.omega, &w, 4000).unwrap();
        for (a, b) in closed.iter().zip(&oracle) {
            assert!((a / b - 1.0).abs() < 0.05, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_symbols_give_no_desired_power() {
        let sim = desk(impaired(4), 2, 1, 4, 5);
        let terms = estimate_sinr_terms(&sim, PrecoderKind::DaMmse, 100).unwrap();
        let w = equal_power_slp(2, 1, 1.0);
        let (signal, total) = mc_received_powers(&sim, PrecoderKind::DaMmse, &terms.omega, &w, 100, false).unwrap();
        assert!(signal.iter().all(|&s| s == 0.0));
        assert!(total.iter().all(|&t| t > 0.0));
    }

    #[test]
    fn ideal_hardware_has_no_impairment_terms() {
        let sim = desk(HardwareProfile::ideal(4), 2, 2, 4, 6);
        let terms = estimate_sinr_terms(&sim, PrecoderKind::Mr, 100).unwrap();
        assert!(terms.e.iter().all(|&e| e == 0.0));
        assert_eq!(terms.kappa_ru, 0.0);
        assert_eq!(terms.kappa_tb, 0.0);
        assert!(terms.alpha_a.iter().all(|&a| a == 1.0));
    }
}
