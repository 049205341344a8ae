//! Minorization-maximization of the sum SE over the LSFP coefficients.
//!
//! Each SINR is a ratio `N/D` of quadratics in γ. At an expansion point γ_t
//! the ratio is bounded below by `2z√N − z²D` with `z = √N_t/D_t`. Then `√N`
//! is replaced by its tangent (a lower bound, since `√N = α|bᵀγ|` is convex),
//! and the `−N` inside `D` by the tangent of `N`, which upper-bounds `D`. The
//! positive part of `D` stays exact. The resulting surrogate is concave,
//! touches the objective at γ_t and has the same gradient there.

use std::time::Instant;

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::performance::{LsfpWeights, SinrTerms};

/// Lemma-1 bound `A/B ≥ 2y√A − y²B`, tight at the expansion point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioBound {
    pub y: f64,
}

impl RatioBound {
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        2.0 * self.y * a.max(0.0).sqrt() - self.y * self.y * b
    }
}

pub fn ratio_surrogate(a: f64, b: f64) -> Result<RatioBound> {
    if !(b > 0.0) {
        return Err(Error::Domain(format!("ratio denominator must be positive, got {b}")));
    }
    if !(a >= 0.0) {
        return Err(Error::Domain(format!("ratio numerator must be non-negative, got {a}")));
    }
    Ok(RatioBound { y: a.sqrt() / b })
}

/// Affine minorant `g1(γ) = cᵀγ` of `|bᵀγ|` that is tight at γ_t.
#[derive(Debug, Clone, PartialEq)]
pub struct NormLinearization {
    pub coef: Vec<f64>,
}

impl NormLinearization {
    pub fn eval(&self, gamma: &[f64]) -> f64 {
        self.coef.iter().zip(gamma).map(|(c, g)| c * g).sum()
    }
}

pub fn linearize_norm(b: &[C64], gamma_t: &[f64]) -> NormLinearization {
    let s: C64 = b.iter().zip(gamma_t).map(|(b, g)| b * g).sum();
    let mag = s.norm();
    let phase = if mag > 0.0 {
        s.conj() / mag
    } else {
        debug!("linearizing |bᵀγ| at a zero of the norm, using a subgradient");
        C64::new(1.0, 0.0)
    };
    NormLinearization { coef: b.iter().map(|b| (phase * b).re).collect() }
}

/// `g2(x, y) = x_t y + y_t x − x_t y_t`, the tangent plane of `x·y` at
/// `(x_t, y_t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductLinearization {
    pub x_t: f64,
    pub y_t: f64,
}

impl ProductLinearization {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.x_t * y + self.y_t * x - self.x_t * self.y_t
    }
}

pub fn linearize_product(x_t: f64, y_t: f64) -> ProductLinearization {
    ProductLinearization { x_t, y_t }
}

/// Per-UE quadratic data of the sum-SE objective.
#[derive(Debug, Clone)]
struct UeTerms {
    alpha: f64,
    /// α (1 + κ_ru²)
    c1: f64,
    b: Vec<C64>,
    /// Re(b bᴴ), row-major L×L.
    p: Vec<f64>,
    /// Re(G_lkk') + diag(e + κ_tb² f) per k', row-major L×L.
    h: Vec<Vec<f64>>,
}

/// Sum-SE objective `prelog · Σ log2(1 + N/D)` over γ laid out like
/// [`LsfpWeights::gamma`].
#[derive(Debug, Clone)]
pub struct SeProblem {
    pub cells: usize,
    pub ues_per_cell: usize,
    pub prelog: f64,
    pub rho_d: f64,
    sigma2: f64,
    ues: Vec<UeTerms>,
}

impl SeProblem {
    pub fn new(terms: &SinrTerms, prelog: f64, rho_d: f64) -> Result<Self> {
        if !(rho_d > 0.0) {
            return Err(Error::Domain(format!("power budget must be positive, got {rho_d}")));
        }
        let (l_n, k_n) = (terms.cells, terms.ues_per_cell);
        let k_tb2 = terms.kappa_tb * terms.kappa_tb;
        let mut ues = Vec::with_capacity(l_n * k_n);
        for lk in 0..l_n * k_n {
            let alpha = terms.alpha_a[lk];
            let b: Vec<C64> = (0..l_n).map(|r| terms.b[terms.b_index(lk, r)]).collect();
            let mut p = vec![0.0; l_n * l_n];
            for r in 0..l_n {
                for rp in 0..l_n {
                    p[r * l_n + rp] = (b[r] * b[rp].conj()).re;
                }
            }
            let h = (0..k_n)
                .map(|kp| {
                    let mut m = vec![0.0; l_n * l_n];
                    for r in 0..l_n {
                        for rp in 0..l_n {
                            m[r * l_n + rp] = terms.gram[terms.gram_index(lk, kp, r, rp)].re;
                        }
                        let i = terms.diag_index(lk, kp, r);
                        m[r * l_n + r] += terms.e[i] + k_tb2 * terms.f[i];
                    }
                    m
                })
                .collect();
            ues.push(UeTerms { alpha, c1: alpha * (1.0 + terms.kappa_ru * terms.kappa_ru), b, p, h });
        }
        Ok(Self { cells: l_n, ues_per_cell: k_n, prelog, rho_d, sigma2: terms.sigma2, ues })
    }

    pub fn dim(&self) -> usize {
        self.cells * self.ues_per_cell * self.cells
    }

    fn block<'a>(&self, gamma: &'a [f64], lk: usize) -> &'a [f64] {
        &gamma[lk * self.cells..(lk + 1) * self.cells]
    }

    fn quad(m: &[f64], x: &[f64]) -> f64 {
        let l = x.len();
        let mut s = 0.0;
        for r in 0..l {
            for rp in 0..l {
                s += m[r * l + rp] * x[r] * x[rp];
            }
        }
        s
    }

    fn mat_vec_add(m: &[f64], x: &[f64], scale: f64, out: &mut [f64]) {
        let l = x.len();
        for r in 0..l {
            let mut s = 0.0;
            for rp in 0..l {
                s += m[r * l + rp] * x[rp];
            }
            out[r] += scale * s;
        }
    }

    /// `Q_lk(γ)`: interference-plus-distortion quadratic of UE `lk`.
    fn q(&self, ue: &UeTerms, gamma: &[f64]) -> f64 {
        let (l_n, k_n) = (self.cells, self.ues_per_cell);
        let mut q = 0.0;
        for n in 0..l_n {
            for kp in 0..k_n {
                q += Self::quad(&ue.h[kp], self.block(gamma, n * k_n + kp));
            }
        }
        q
    }

    fn add_q_grad(&self, ue: &UeTerms, gamma: &[f64], scale: f64, grad: &mut [f64]) {
        let (l_n, k_n) = (self.cells, self.ues_per_cell);
        for n in 0..l_n {
            for kp in 0..k_n {
                let nk = n * k_n + kp;
                Self::mat_vec_add(&ue.h[kp], self.block(gamma, nk), 2.0 * scale, &mut grad[nk * l_n..(nk + 1) * l_n]);
            }
        }
    }

    /// `(N_lk, D_lk)` per UE.
    pub fn parts(&self, gamma: &[f64]) -> Vec<(f64, f64)> {
        self.ues
            .iter()
            .enumerate()
            .map(|(lk, ue)| {
                let n = ue.alpha * ue.alpha * Self::quad(&ue.p, self.block(gamma, lk));
                let d = ue.c1 * self.q(ue, gamma) + ue.alpha * self.sigma2 - n;
                (n, d)
            })
            .collect()
    }

    pub fn value(&self, gamma: &[f64]) -> f64 {
        self.prelog * self.parts(gamma).iter().map(|(n, d)| (1.0 + n / d).log2()).sum::<f64>()
    }

    pub fn gradient(&self, gamma: &[f64]) -> Vec<f64> {
        let l_n = self.cells;
        let mut grad = vec![0.0; self.dim()];
        let parts = self.parts(gamma);
        let ln2 = std::f64::consts::LN_2;
        for (lk, (ue, &(n, d))) in self.ues.iter().zip(&parts).enumerate() {
            // ∂ log2(1 + N/D) = (D ∇N − N ∇D) / (ln2 · D (D + N)), ∇D = c1 ∇Q − ∇N
            let w = self.prelog / (ln2 * d * (d + n));
            let mut grad_n = vec![0.0; l_n];
            Self::mat_vec_add(&ue.p, self.block(gamma, lk), 2.0 * ue.alpha * ue.alpha, &mut grad_n);
            for r in 0..l_n {
                grad[lk * l_n + r] += w * (d + n) * grad_n[r];
            }
            self.add_q_grad(ue, gamma, -w * n * ue.c1, &mut grad);
        }
        grad
    }

    /// Euclidean projection onto `{γ ≥ 0, Σ_{l,k} (γ_lkʳ)² ≤ ρ_d ∀r}`:
    /// clip to the orthant, then shrink each violated BS block onto its sphere.
    pub fn project(&self, gamma: &mut [f64]) {
        for g in gamma.iter_mut() {
            *g = g.max(0.0);
        }
        let l_n = self.cells;
        let ues = self.cells * self.ues_per_cell;
        for r in 0..l_n {
            let p: f64 = (0..ues).map(|lk| gamma[lk * l_n + r].powi(2)).sum();
            if p > self.rho_d {
                let s = (self.rho_d / p).sqrt();
                for lk in 0..ues {
                    gamma[lk * l_n + r] *= s;
                }
            }
        }
    }

    pub fn weights(&self, gamma: Vec<f64>) -> LsfpWeights {
        LsfpWeights { cells: self.cells, ues_per_cell: self.ues_per_cell, gamma }
    }
}

/// Per-UE linearization data of the surrogate.
#[derive(Debug, Clone)]
struct UeSurrogate {
    z: f64,
    g1: NormLinearization,
    /// Affine `Ñ(γ) = coefᵀγ_lk + constant`, built from `g2` on every
    /// product `γʳ γʳ'` of `N`.
    n_coef: Vec<f64>,
    n_const: f64,
}

/// Concave minorant `f̆(γ; γ_t)` of the sum SE.
#[derive(Debug, Clone)]
pub struct Surrogate<'a> {
    pub problem: &'a SeProblem,
    pub gamma_t: Vec<f64>,
    ues: Vec<UeSurrogate>,
}

impl Surrogate<'_> {
    /// Multipliers `z_lk = √N_lk(γ_t)/D_lk(γ_t)`.
    pub fn multipliers(&self) -> Vec<f64> {
        self.ues.iter().map(|u| u.z).collect()
    }

    fn phi(&self, gamma: &[f64]) -> Vec<f64> {
        let pr = self.problem;
        pr.ues
            .iter()
            .zip(&self.ues)
            .enumerate()
            .map(|(lk, (ue, s))| {
                let x = pr.block(gamma, lk);
                let n_tilde: f64 = s.n_coef.iter().zip(x).map(|(c, g)| c * g).sum::<f64>() + s.n_const;
                let d_tilde = ue.c1 * pr.q(ue, gamma) + ue.alpha * pr.sigma2 - n_tilde;
                2.0 * s.z * ue.alpha * s.g1.eval(x) - s.z * s.z * d_tilde
            })
            .collect()
    }

    /// Surrogate value; `−∞` outside the domain of the logarithms.
    pub fn value(&self, gamma: &[f64]) -> f64 {
        let mut total = 0.0;
        for phi in self.phi(gamma) {
            if phi <= -1.0 {
                return f64::NEG_INFINITY;
            }
            total += (1.0 + phi).log2();
        }
        self.problem.prelog * total
    }

    pub fn gradient(&self, gamma: &[f64]) -> Vec<f64> {
        let pr = self.problem;
        let l_n = pr.cells;
        let mut grad = vec![0.0; pr.dim()];
        let phis = self.phi(gamma);
        for (lk, ((ue, s), phi)) in pr.ues.iter().zip(&self.ues).zip(phis).enumerate() {
            let w = pr.prelog / (std::f64::consts::LN_2 * (1.0 + phi));
            for r in 0..l_n {
                grad[lk * l_n + r] += w * (2.0 * s.z * ue.alpha * s.g1.coef[r] + s.z * s.z * s.n_coef[r]);
            }
            pr.add_q_grad(ue, gamma, -w * s.z * s.z * ue.c1, &mut grad);
        }
        grad
    }
}

/// Builds `f̆(·; γ_t)` and checks tangency at γ_t.
pub fn build_surrogate<'a>(problem: &'a SeProblem, gamma_t: &[f64]) -> Result<Surrogate<'a>> {
    if gamma_t.len() != problem.dim() {
        return Err(Error::Contract(format!("γ has length {}, expected {}", gamma_t.len(), problem.dim())));
    }
    let l_n = problem.cells;
    let parts = problem.parts(gamma_t);
    let mut ues = Vec::with_capacity(parts.len());
    for (lk, (ue, &(n, d))) in problem.ues.iter().zip(&parts).enumerate() {
        let bound = ratio_surrogate(n, d).map_err(|e| Error::Surrogate(format!("UE {lk}: {e}")))?;
        let x_t = problem.block(gamma_t, lk);
        let g1 = linearize_norm(&ue.b, x_t);
        let a2 = ue.alpha * ue.alpha;
        let mut n_coef = vec![0.0; l_n];
        let mut n_const = 0.0;
        for r in 0..l_n {
            for rp in 0..l_n {
                // N = α² Σ P_rr' γʳ γʳ'; each product is replaced by g2.
                let g2 = linearize_product(x_t[r], x_t[rp]);
                let c = a2 * ue.p[r * l_n + rp];
                n_coef[rp] += c * g2.x_t;
                n_coef[r] += c * g2.y_t;
                n_const -= c * g2.x_t * g2.y_t;
            }
        }
        ues.push(UeSurrogate { z: bound.y, g1, n_coef, n_const });
    }
    let s = Surrogate { problem, gamma_t: gamma_t.to_vec(), ues };
    let (f, fs) = (problem.value(gamma_t), s.value(gamma_t));
    if !((f - fs).abs() <= 1e-9 * f.abs().max(1.0)) {
        return Err(Error::Surrogate(format!("surrogate not tangent: f = {f}, f̆ = {fs}")));
    }
    Ok(s)
}

/// Outcome of the inner projected-gradient solve.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub gamma: Vec<f64>,
    pub value: f64,
    pub steps: usize,
    /// Projected-gradient norm at the returned point.
    pub stationarity: f64,
    /// Set when the line search stopped making progress far from a
    /// stationary point.
    pub line_search_failed: bool,
}

const STALL_STATIONARITY: f64 = 1e-6;

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Monotone spectral projected-gradient ascent with Barzilai-Borwein steps
/// and Armijo backtracking. `x0` must be feasible.
pub fn projected_gradient_ascent<F, G, P>(
    value: F,
    gradient: G,
    project: P,
    x0: &[f64],
    tol: f64,
    max_steps: usize,
) -> InnerResult
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
    P: Fn(&mut [f64]),
{
    let mut x = x0.to_vec();
    let mut fx = value(&x);
    let mut g = gradient(&x);
    let mut step = 1.0 / norm_inf(&g).max(1e-300);
    let stationarity = |x: &[f64], g: &[f64]| {
        let mut t: Vec<f64> = x.iter().zip(g).map(|(a, b)| a + b).collect();
        project(&mut t);
        norm_inf(&t.iter().zip(x).map(|(a, b)| a - b).collect::<Vec<_>>())
    };
    let mut pg = stationarity(&x, &g);
    let mut steps = 0;
    let mut failed = false;
    while steps < max_steps && pg > tol {
        let mut accepted = None;
        let mut s = step;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + s * b).collect();
            project(&mut trial);
            let ascent: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gi, (t, xi))| gi * (t - xi)).sum();
            let ft = value(&trial);
            if ft.is_finite() && ft >= fx + 1e-4 * ascent && ft > fx {
                accepted = Some((trial, ft));
                break;
            }
            s *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            failed = true;
            break;
        };
        let g_new = gradient(&x_new);
        let sk: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yk: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ss: f64 = sk.iter().map(|v| v * v).sum();
        let sy: f64 = sk.iter().zip(&yk).map(|(a, b)| a * b).sum();
        step = if sy < 0.0 { (ss / -sy).clamp(1e-12, 1e12) } else { (2.0 * s).min(1e12) };
        x = x_new;
        fx = f_new;
        g = g_new;
        pg = stationarity(&x, &g);
        steps += 1;
    }
    // A stall near stationarity just means the objective's rounding floor
    // was reached.
    let line_search_failed = failed && pg > STALL_STATIONARITY;
    if line_search_failed {
        warn!("line search stalled after {steps} steps (projected gradient {pg:e})");
    }
    InnerResult { gamma: x, value: fx, steps, stationarity: pg, line_search_failed }
}

/// Maximizes the surrogate over the feasible set, starting at its expansion
/// point.
pub fn solve_subproblem(surrogate: &Surrogate, tol: f64, max_steps: usize) -> InnerResult {
    let pr = surrogate.problem;
    projected_gradient_ascent(
        |x| surrogate.value(x),
        |x| surrogate.gradient(x),
        |x| pr.project(x),
        &surrogate.gamma_t,
        tol,
        max_steps,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmOptions {
    /// Stop when the MM map moves γ by at most `eps`.
    pub eps: f64,
    pub max_iters: usize,
    pub inner_tol: f64,
    pub inner_max_steps: usize,
}

impl Default for MmOptions {
    fn default() -> Self {
        Self { eps: 1e-4, max_iters: 50, inner_tol: 1e-9, inner_max_steps: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmTraceRow {
    pub iteration: usize,
    pub objective: f64,
    /// Largest per-BS `Σ γ² − ρ_d`; nonpositive when feasible.
    pub max_power_excess: f64,
    pub inner_steps: usize,
    /// `‖γ_{t+1} − γ_t‖` after extrapolation.
    pub step_norm: f64,
    /// `‖M(γ_t) − γ_t‖` for the plain MM map `M`; the stopping criterion.
    pub mm_residual: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MmTrace {
    pub rows: Vec<MmTraceRow>,
}

impl MmTrace {
    /// CSV without wall-clock times, so identical runs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,objective,max_power_excess,inner_steps,step_norm,mm_residual\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.12e},{:.6e},{},{:.6e},{:.6e}\n",
                r.iteration, r.objective, r.max_power_excess, r.inner_steps, r.step_norm, r.mm_residual
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MmResult {
    pub weights: LsfpWeights,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: MmTrace,
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Over-relaxes the step `origin → γ_mm`, doubling it while the true
/// objective keeps improving. Only improvements are accepted, so the MM
/// iterates stay monotone. Extrapolating from the previous iterate as well as
/// the current one damps the zigzag MM shows along flat ridges.
///
/// Coefficients are kept above a fraction of their MM value, so overshoot
/// never drives a positive coefficient to zero. `γ = 0` is a fixed point of
/// the MM map (a UE's `N` is quadratic in its coefficients) and a UE switched
/// off that way could never come back.
fn extrapolate(problem: &SeProblem, origin: &[f64], gamma_mm: Vec<f64>, obj_mm: f64) -> (Vec<f64>, f64) {
    let dir: Vec<f64> = gamma_mm.iter().zip(origin).map(|(a, b)| a - b).collect();
    let mut best_obj = obj_mm;
    let mut best = gamma_mm;
    let floor: Vec<f64> = best.iter().map(|m| EXTRAPOLATION_FLOOR * m).collect();
    let mut scale = 2.0;
    while scale <= MAX_OVERRELAXATION {
        let mut cand: Vec<f64> =
            origin.iter().zip(&dir).zip(&floor).map(|((g, d), f)| (g + scale * d).max(*f)).collect();
        problem.project(&mut cand);
        let obj = problem.value(&cand);
        if !(obj > best_obj) {
            break;
        }
        best = cand;
        best_obj = obj;
        scale *= 2.0;
    }
    (best, best_obj)
}

const MAX_OVERRELAXATION: f64 = 64.0;
const EXTRAPOLATION_FLOOR: f64 = 0.1;

pub fn mm_optimize(problem: &SeProblem, init: &LsfpWeights, options: &MmOptions) -> Result<MmResult> {
    mm_optimize_with(problem, init, options, |_, _| Ok(()))
}

/// Like [`mm_optimize`], calling `observer(iteration, surrogate)` at every
/// expansion point before the subproblem is solved.
pub fn mm_optimize_with<F>(problem: &SeProblem, init: &LsfpWeights, options: &MmOptions, mut observer: F) -> Result<MmResult>
where
    F: FnMut(usize, &Surrogate) -> Result<()>,
{
    if init.gamma.len() != problem.dim() {
        return Err(Error::Contract("initial weights do not match the problem".into()));
    }
    if !init.is_feasible(problem.rho_d, 1e-12) {
        return Err(Error::Constraint("initial weights are infeasible".into()));
    }
    let start = Instant::now();
    let mut gamma = init.gamma.clone();
    let mut previous: Option<Vec<f64>> = None;
    let mut objective = problem.value(&gamma);
    let mut trace = MmTrace::default();
    trace.rows.push(MmTraceRow {
        iteration: 0,
        objective,
        max_power_excess: init.max_power_excess(problem.rho_d),
        inner_steps: 0,
        step_norm: 0.0,
        mm_residual: f64::NAN,
        elapsed_s: start.elapsed().as_secs_f64(),
    });
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=options.max_iters {
        let surrogate = build_surrogate(problem, &gamma)?;
        observer(it, &surrogate)?;
        let inner = solve_subproblem(&surrogate, options.inner_tol, options.inner_max_steps);
        let mm_obj = problem.value(&inner.gamma);
        let mm_residual = l2_dist(&inner.gamma, &gamma);
        let (next, next_obj) = match &previous {
            Some(prev) => {
                let one = extrapolate(problem, &gamma, inner.gamma.clone(), mm_obj);
                let two = extrapolate(problem, prev, inner.gamma, mm_obj);
                if two.1 > one.1 { two } else { one }
            }
            None => extrapolate(problem, &gamma, inner.gamma, mm_obj),
        };
        if next_obj < objective - 1e-9 {
            return Err(Error::InvariantViolation(format!(
                "MM objective decreased from {objective} to {next_obj} at iteration {it}"
            )));
        }
        let w = problem.weights(next);
        trace.rows.push(MmTraceRow {
            iteration: it,
            objective: next_obj,
            max_power_excess: w.max_power_excess(problem.rho_d),
            inner_steps: inner.steps,
            step_norm: l2_dist(&w.gamma, &gamma),
            mm_residual,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
        previous = Some(std::mem::replace(&mut gamma, w.gamma));
        objective = next_obj;
        iterations = it;
        if mm_residual <= options.eps {
            converged = true;
            break;
        }
    }
    Ok(MmResult { weights: problem.weights(gamma), objective, iterations, converged, trace })
}
