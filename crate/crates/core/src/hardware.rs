//! Converter and RF-chain impairments.
//!
//! Quantizers are Lloyd-Max (MMSE-optimal) for a unit-variance Gaussian input.
//! Their normalized MSE `ρ` gives the Bussgang gain `α = 1 − ρ`, and a
//! quantizer driven by a Gaussian of variance `σ²` behaves as
//! `q(y) = α·y + n` with `E|n|² = α(1−α)σ²` and `n` uncorrelated with `y`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CVec, C64};

pub const MAX_BITS: u8 = 15;

/// Converter resolution: a bit depth in `1..=15` or an ideal (unquantized)
/// converter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resolution {
    Bits(u8),
    Ideal,
}

impl Resolution {
    pub fn validate(self) -> Result<Self> {
        match self {
            Resolution::Bits(b) if !(1..=MAX_BITS).contains(&b) => {
                Err(Error::Domain(format!("unsupported resolution: {b} bits (expected 1..={MAX_BITS})")))
            }
            r => Ok(r),
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::Bits(b) => write!(f, "{b}"),
            Resolution::Ideal => f.write_str("ideal"),
        }
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ideal" | "inf" => Ok(Resolution::Ideal),
            t => {
                let b: u8 = t
                    .parse()
                    .map_err(|_| Error::Domain(format!("invalid resolution `{t}`")))?;
                Resolution::Bits(b).validate()
            }
        }
    }
}

/// Reproduction levels and decision thresholds of a Lloyd-Max quantizer for
/// a unit-variance Gaussian.
#[derive(Debug, Clone)]
pub struct LloydMaxCodebook {
    pub bits: u8,
    /// Ascending reproduction levels, `2^bits` of them.
    pub levels: Vec<f64>,
    /// Midpoints between consecutive levels.
    pub thresholds: Vec<f64>,
    /// Normalized mean squared error.
    pub mse: f64,
}

impl LloydMaxCodebook {
    /// Nearest reproduction level; inputs exactly on a threshold map upward.
    pub fn quantize(&self, x: f64) -> f64 {
        let cell = self.thresholds.partition_point(|&t| t <= x);
        self.levels[cell]
    }
}

fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    }
}

/// Upper tail probability P(X > x).
fn upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// P(a < X < b) computed from the tail on the side away from the mode.
fn interval_probability(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        upper_tail(-b) - upper_tail(-a)
    } else {
        1.0 - upper_tail(b) - upper_tail(-a)
    }
}

fn inverse_cdf(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 - upper_tail(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

struct CellMoments {
    centroid: Vec<f64>,
    d_lower: Vec<f64>,
    d_upper: Vec<f64>,
    prob: Vec<f64>,
    edges: Vec<f64>,
}

fn cell_moments(levels: &[f64]) -> CellMoments {
    let n = levels.len();
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(f64::NEG_INFINITY);
    edges.extend(levels.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    edges.push(f64::INFINITY);
    let mut centroid = vec![0.0; n];
    let mut d_lower = vec![0.0; n];
    let mut d_upper = vec![0.0; n];
    let mut prob = vec![0.0; n];
    for i in 0..n {
        let (a, b) = (edges[i], edges[i + 1]);
        let p = interval_probability(a, b);
        let (pa, pb) = (pdf(a), pdf(b));
        let cm = (pa - pb) / p;
        centroid[i] = cm;
        prob[i] = p;
        // ∂c/∂a = φ(a)(c − a)/P, ∂c/∂b = φ(b)(b − c)/P
        d_lower[i] = if a.is_finite() { pa * (cm - a) / p } else { 0.0 };
        d_upper[i] = if b.is_finite() { pb * (b - cm) / p } else { 0.0 };
    }
    CellMoments { centroid, d_lower, d_upper, prob, edges }
}

/// Thomas algorithm for a tridiagonal system.
fn solve_tridiagonal(lower: &[f64], main: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = main.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { upper[0] / main[0] } else { 0.0 };
    d[0] = rhs[0] / main[0];
    for i in 1..n {
        let m = main[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves the Lloyd-Max fixed point `y_i = E[X | t_{i-1} < X < t_i]`,
/// `t_i = (y_i + y_{i+1})/2` by damped Newton iteration on the tridiagonal
/// Jacobian, starting from the companded (Panter-Dite) codebook.
fn design_codebook(bits: u8) -> Result<LloydMaxCodebook> {
    let n = 1usize << bits;
    let mut levels: Vec<f64> = (0..n)
        .map(|i| 3f64.sqrt() * inverse_cdf((i as f64 + 0.5) / n as f64))
        .collect();

    let residual = |levels: &[f64], m: &CellMoments| -> Vec<f64> {
        levels.iter().zip(&m.centroid).map(|(y, c)| y - c).collect()
    };
    let mut moments = cell_moments(&levels);
    let mut f = residual(&levels, &moments);
    for _ in 0..200 {
        let norm = max_abs(&f);
        if norm < 1e-13 {
            break;
        }
        let main: Vec<f64> = (0..n).map(|i| 1.0 - 0.5 * (moments.d_lower[i] + moments.d_upper[i])).collect();
        let lower: Vec<f64> = (0..n).map(|i| -0.5 * moments.d_lower[i]).collect();
        let upper: Vec<f64> = (0..n).map(|i| -0.5 * moments.d_upper[i]).collect();
        let step = solve_tridiagonal(&lower, &main, &upper, &f);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = levels.iter().zip(&step).map(|(y, s)| y - t * s).collect();
            let ordered = trial.windows(2).all(|w| w[0] < w[1]);
            if ordered {
                let tm = cell_moments(&trial);
                let tf = residual(&trial, &tm);
                if max_abs(&tf) < norm {
                    levels = trial;
                    moments = tm;
                    f = tf;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if max_abs(&f) > 1e-9 {
        return Err(Error::Numerical(format!(
            "Lloyd-Max design for {bits} bits did not converge (residual {:e})",
            max_abs(&f)
        )));
    }
    // E[(X − q)²] = 1 − Σ_i [2 y_i (φ(a_i) − φ(b_i)) − y_i² P_i]
    let gain: f64 = (0..n)
        .map(|i| {
            let (a, b) = (moments.edges[i], moments.edges[i + 1]);
            2.0 * levels[i] * (pdf(a) - pdf(b)) - levels[i] * levels[i] * moments.prob[i]
        })
        .sum();
    let thresholds = levels.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    Ok(LloydMaxCodebook { bits, levels, thresholds, mse: 1.0 - gain })
}

static CODEBOOKS: [OnceLock<LloydMaxCodebook>; MAX_BITS as usize] = [const { OnceLock::new() }; MAX_BITS as usize];

/// Lloyd-Max codebook for `bits`, designed on first use and cached.
pub fn codebook(bits: u8) -> Result<&'static LloydMaxCodebook> {
    Resolution::Bits(bits).validate()?;
    let slot = &CODEBOOKS[bits as usize - 1];
    if let Some(cb) = slot.get() {
        return Ok(cb);
    }
    let designed = design_codebook(bits)?;
    Ok(slot.get_or_init(|| designed))
}

/// Normalized MSE `ρ` of the Lloyd-Max quantizer; 0 for an ideal converter.
pub fn distortion_factor(res: Resolution) -> Result<f64> {
    match res.validate()? {
        Resolution::Ideal => Ok(0.0),
        Resolution::Bits(b) => Ok(codebook(b)?.mse),
    }
}

/// Bussgang gain `α = 1 − ρ`.
pub fn bussgang_gain(res: Resolution) -> Result<f64> {
    Ok(1.0 - distortion_factor(res)?)
}

/// Quantizes a real sample that has already been normalized to unit variance.
pub fn lloyd_max_quantize(x: f64, res: Resolution) -> Result<f64> {
    match res.validate()? {
        Resolution::Ideal => Ok(x),
        Resolution::Bits(b) => Ok(codebook(b)?.quantize(x)),
    }
}

/// Quantizes a complex sample of known total variance, treating I and Q as
/// independent real quantizers each driven at variance `variance/2`.
pub fn quantize_complex(z: C64, variance: f64, res: Resolution) -> Result<C64> {
    match res.validate()? {
        Resolution::Ideal => Ok(z),
        Resolution::Bits(b) => {
            if variance <= 0.0 {
                return Ok(C64::new(0.0, 0.0));
            }
            let cb = codebook(b)?;
            let s = (0.5 * variance).sqrt();
            Ok(C64::new(cb.quantize(z.re / s) * s, cb.quantize(z.im / s) * s))
        }
    }
}

/// CSV table `bits,rho,alpha` for resolutions `1..=max_bits`.
pub fn distortion_table_csv(max_bits: u8) -> Result<String> {
    let mut out = String::from("bits,rho,alpha\n");
    for b in 1..=max_bits {
        let rho = distortion_factor(Resolution::Bits(b))?;
        out.push_str(&format!("{b},{rho:.10e},{:.10e}\n", 1.0 - rho));
    }
    Ok(out)
}

/// Error-vector-magnitude factors and converter resolutions of BSs and UEs.
/// Every BS uses the same per-antenna resolution lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub kappa_tb: f64,
    pub kappa_rb: f64,
    pub kappa_tu: f64,
    pub kappa_ru: f64,
    pub bs_adc_bits: Vec<Resolution>,
    pub bs_dac_bits: Vec<Resolution>,
    pub ue_adc_bits: Resolution,
    pub ue_dac_bits: Resolution,
}

impl HardwareProfile {
    pub fn ideal(antennas: usize) -> Self {
        Self::uniform(0.0, 0.0, Resolution::Ideal, Resolution::Ideal, antennas)
    }

    /// Same EVM on the transmit and receive side of each device, one
    /// resolution at every BS antenna.
    pub fn uniform(kappa_bs: f64, kappa_ue: f64, ue_bits: Resolution, bs_bits: Resolution, antennas: usize) -> Self {
        Self::dynamic(kappa_bs, kappa_ue, ue_bits, &[bs_bits], antennas)
    }

    /// BS antennas split into equal contiguous blocks, one per entry of
    /// `bs_bits`.
    pub fn dynamic(kappa_bs: f64, kappa_ue: f64, ue_bits: Resolution, bs_bits: &[Resolution], antennas: usize) -> Self {
        let per_antenna = dynamic_resolution(bs_bits, antennas);
        Self {
            kappa_tb: kappa_bs,
            kappa_rb: kappa_bs,
            kappa_tu: kappa_ue,
            kappa_ru: kappa_ue,
            bs_adc_bits: per_antenna.clone(),
            bs_dac_bits: per_antenna,
            ue_adc_bits: ue_bits,
            ue_dac_bits: ue_bits,
        }
    }

    pub fn validate(&self, antennas: usize) -> Result<()> {
        for (name, k) in [
            ("kappa_tb", self.kappa_tb),
            ("kappa_rb", self.kappa_rb),
            ("kappa_tu", self.kappa_tu),
            ("kappa_ru", self.kappa_ru),
        ] {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {k}")));
            }
        }
        if self.bs_adc_bits.len() != antennas || self.bs_dac_bits.len() != antennas {
            return Err(Error::Contract(format!(
                "BS resolution lists have lengths {}/{}, expected {antennas}",
                self.bs_adc_bits.len(),
                self.bs_dac_bits.len()
            )));
        }
        for r in self.bs_adc_bits.iter().chain(&self.bs_dac_bits).chain([&self.ue_adc_bits, &self.ue_dac_bits]) {
            r.validate()?;
        }
        Ok(())
    }

    pub fn is_ideal(&self) -> bool {
        [self.kappa_tb, self.kappa_rb, self.kappa_tu, self.kappa_ru].iter().all(|&k| k == 0.0)
            && self
                .bs_adc_bits
                .iter()
                .chain(&self.bs_dac_bits)
                .chain([&self.ue_adc_bits, &self.ue_dac_bits])
                .all(|r| *r == Resolution::Ideal)
    }
}

/// Assigns `bits[i]` to the i-th of `bits.len()` contiguous, equal-size
/// antenna blocks. Leftover antennas go to the leading blocks.
pub fn dynamic_resolution(bits: &[Resolution], antennas: usize) -> Vec<Resolution> {
    if bits.is_empty() {
        return vec![Resolution::Ideal; antennas];
    }
    (0..antennas).map(|m| bits[m * bits.len() / antennas]).collect()
}

/// Diagonal Bussgang gain/noise matrices of the BS converters plus the UE
/// scalars. `B = A(I − A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BussgangMatrices {
    /// diag(A_a)
    pub adc_gain: DVector<f64>,
    /// diag(B_a)
    pub adc_noise: DVector<f64>,
    /// diag(A_d)
    pub dac_gain: DVector<f64>,
    /// diag(B_d)
    pub dac_noise: DVector<f64>,
    /// α_d of the UE DAC (pilot transmission).
    pub ue_dac_gain: f64,
    /// α_a of the UE ADC (data reception).
    pub ue_adc_gain: f64,
}

fn gains(bits: &[Resolution]) -> Result<(DVector<f64>, DVector<f64>)> {
    let a = bits.iter().map(|&r| bussgang_gain(r)).collect::<Result<Vec<_>>>()?;
    let gain = DVector::from_vec(a);
    let noise = gain.map(|a| a * (1.0 - a));
    Ok((gain, noise))
}

pub fn build_bussgang_matrices(profile: &HardwareProfile) -> Result<BussgangMatrices> {
    let (adc_gain, adc_noise) = gains(&profile.bs_adc_bits)?;
    let (dac_gain, dac_noise) = gains(&profile.bs_dac_bits)?;
    Ok(BussgangMatrices {
        adc_gain,
        adc_noise,
        dac_gain,
        dac_noise,
        ue_dac_gain: bussgang_gain(profile.ue_dac_bits)?,
        ue_adc_gain: bussgang_gain(profile.ue_adc_bits)?,
    })
}

/// Diagonal of the sample second moment `mean(x xᴴ)`.
pub fn conditional_diag_covariance(samples: &[CVec]) -> Result<DVector<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Domain("at least one sample is required".into()))?;
    let mut acc = DVector::<f64>::zeros(first.len());
    for s in samples {
        if s.len() != acc.len() {
            return Err(Error::Contract(format!("sample length {} != {}", s.len(), acc.len())));
        }
        for (a, z) in acc.iter_mut().zip(s.iter()) {
            *a += z.norm_sqr();
        }
    }
    Ok(acc / samples.len() as f64)
}

/// `diag(E[x xᴴ | w])` for `x = Σ_k w_k v_k` with independent zero-mean
/// streams of power `powers[k]`.
pub fn precoded_diag_covariance(precoders: &[CVec], powers: &[f64]) -> DVector<f64> {
    let m = precoders.first().map_or(0, |w| w.len());
    let mut acc = DVector::<f64>::zeros(m);
    for (w, &p) in precoders.iter().zip(powers) {
        for (a, z) in acc.iter_mut().zip(w.iter()) {
            *a += p * z.norm_sqr();
        }
    }
    acc
}
