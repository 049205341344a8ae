//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if a criterion outside `KNOWN_RED` fails.

use std::io::Write;
use std::time::Instant;

use lsfp_core::hardware::{bussgang_gain, quantize_complex, Resolution};
use lsfp_core::harness::{evaluate, ExperimentConfig, ExperimentResults, ImpairmentLevel, Scheme, PRESET_NAMES};
use lsfp_core::optimizer::{mm_optimize, mm_optimize_with, MmOptions, SeProblem};
use lsfp_core::performance::{
    equal_power_slp, estimate_sinr_terms, mc_validate_sinr, random_feasible_weights, sinr_closed_form, Simulation,
};
use lsfp_core::precoding::PrecoderKind;
use lsfp_core::rng::{complex_normal, stream};
use lsfp_core::scenario::SystemConfig;
use lsfp_core::{Error, C64};

/// Criteria that do not reproduce with this model; see the README.
const KNOWN_RED: &[usize] = &[8];

const SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn say(line: &str) {
    // Written straight to the handle so the lines survive output capture.
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
}

fn bussgang_consistency() -> Outcome {
    let n = 100_000;
    let variance = 3.0;
    let mut worst_gain: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for b in 1..=5u8 {
        let res = Resolution::Bits(b);
        let alpha = bussgang_gain(res).unwrap();
        let mut rng = stream(1000 + b as u64, 0, 0);
        let samples: Vec<C64> = (0..n).map(|_| complex_normal(&mut rng, variance)).collect();
        let q: Vec<C64> = samples.iter().map(|&z| quantize_complex(z, variance, res).unwrap()).collect();
        let cross: f64 = q.iter().zip(&samples).map(|(q, z)| (q * z.conj()).re).sum::<f64>();
        let power: f64 = samples.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let gain = cross / power;
        let dist = q.iter().zip(&samples).map(|(q, z)| (q - gain * z).norm_sqr()).sum::<f64>() / n as f64;
        let expected = alpha * (1.0 - alpha) * variance;
        worst_gain = worst_gain.max((gain - alpha).abs() / alpha);
        worst_var = worst_var.max((dist - expected).abs() / expected);
    }
    Outcome {
        pass: worst_gain < 0.02 && worst_var < 0.03,
        detail: format!("max gain error {:.3}%, max distortion variance error {:.3}%", 100.0 * worst_gain, 100.0 * worst_var),
    }
}

fn estimator_orthogonality() -> Outcome {
    let n = 10_000;
    let config = SystemConfig { seed: 3, ..SystemConfig::desk() };
    let profile = ImpairmentLevel::preset("high").unwrap().profile(config.antennas).unwrap();
    let sim = Simulation::generate(config.clone(), profile).unwrap();
    let (l_n, k_n, m) = (config.cells, config.ues_per_cell, config.antennas);
    let mut worst: f64 = 0.0;
    let mut cross = vec![vec![C64::new(0.0, 0.0); m * m]; l_n * k_n];
    let mut est_pow = vec![vec![0.0; m]; l_n * k_n];
    let mut err_pow = vec![vec![0.0; m]; l_n * k_n];
    for t in 0..n as u64 {
        let draw = sim.draw(t).unwrap();
        for l in 0..l_n {
            for k in 0..k_n {
                let lk = l * k_n + k;
                let h_hat = &draw.own_estimates[lk];
                let h_err = draw.channels.get(l, k, l) - h_hat;
                for a in 0..m {
                    est_pow[lk][a] += h_hat[a].norm_sqr();
                    err_pow[lk][a] += h_err[a].norm_sqr();
                    for b in 0..m {
                        cross[lk][a * m + b] += h_hat[a] * h_err[b].conj();
                    }
                }
            }
        }
    }
    for lk in 0..l_n * k_n {
        for a in 0..m {
            for b in 0..m {
                let scale = (est_pow[lk][a] * err_pow[lk][b]).sqrt();
                worst = worst.max(cross[lk][a * m + b].norm() / scale);
            }
        }
    }
    let bound = 5.0 / (n as f64).sqrt();
    Outcome {
        pass: worst < bound,
        detail: format!("max normalized |E[ĥ h̃ᴴ]| entry {worst:.4} (bound {bound:.4})"),
    }
}

fn closed_form_vs_oracle() -> Outcome {
    let n = 10_000;
    let config = SystemConfig { seed: 5, ..SystemConfig::desk() };
    let mut worst: f64 = 0.0;
    for preset in ["ideal", "moderate"] {
        let profile = ImpairmentLevel::preset(preset).unwrap().profile(config.antennas).unwrap();
        let sim = Simulation::generate(config.clone(), profile).unwrap();
        for kind in PrecoderKind::ALL {
            let terms = estimate_sinr_terms(&sim, kind, n).unwrap();
            let problem = SeProblem::new(&terms, config.prelog(), config.downlink_power).unwrap();
            let init = equal_power_slp(config.cells, config.ues_per_cell, config.downlink_power);
            let lsfp = mm_optimize(&problem, &init, &MmOptions::default()).unwrap().weights;
            for w in [&init, &lsfp] {
                let closed = sinr_closed_form(&terms, w).unwrap();
                let oracle = mc_validate_sinr(&sim, kind, &terms.omega, w, n).unwrap();
                for (c, o) in closed.iter().zip(&oracle) {
                    // UEs switched off by the optimizer have no SINR to compare.
                    if *c > 1e-6 {
                        worst = worst.max((c - o).abs() / o);
                    }
                }
            }
        }
    }
    Outcome { pass: worst < 0.05, detail: format!("max relative SINR deviation {:.2}%", 100.0 * worst) }
}

fn surrogate_validity() -> Outcome {
    let mut worst_tangent: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let mut minorization_violations = 0;
    let mut concavity_violations = 0;
    let mut expansions = 0;
    for (i, preset) in PRESET_NAMES.iter().enumerate() {
        for seed in 0..2 {
            let mut cfg = ExperimentConfig::desk();
            cfg.system.seed = seed;
            let profile = ImpairmentLevel::preset(preset).unwrap().profile(cfg.system.antennas).unwrap();
            let sim = Simulation::generate(cfg.system.clone(), profile).unwrap();
            let terms = estimate_sinr_terms(&sim, PrecoderKind::DaMmse, cfg.mc_samples).unwrap();
            let problem = SeProblem::new(&terms, cfg.system.prelog(), cfg.system.downlink_power).unwrap();
            let (l_n, k_n, rho) = (cfg.system.cells, cfg.system.ues_per_cell, cfg.system.downlink_power);
            let mut rng = stream(77 + 10 * i as u64 + seed, 0, 0);
            let init = equal_power_slp(l_n, k_n, rho);
            mm_optimize_with(&problem, &init, &MmOptions::default(), |_, s| {
                expansions += 1;
                let t = &s.gamma_t;
                worst_tangent = worst_tangent.max((s.value(t) - problem.value(t)).abs());
                let h = 1e-5;
                let fd: Vec<f64> = (0..t.len())
                    .map(|j| {
                        let (mut p, mut m) = (t.clone(), t.clone());
                        p[j] += h;
                        m[j] -= h;
                        (problem.value(&p) - problem.value(&m)) / (2.0 * h)
                    })
                    .collect();
                let g = s.gradient(t);
                let scale = fd.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                let err = g.iter().zip(&fd).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
                worst_grad = worst_grad.max(err / scale);
                for _ in 0..100 {
                    let x = random_feasible_weights(l_n, k_n, rho, &mut rng).gamma;
                    if s.value(&x) > problem.value(&x) + 1e-8 {
                        minorization_violations += 1;
                    }
                }
                for _ in 0..20 {
                    let a = random_feasible_weights(l_n, k_n, rho, &mut rng).gamma;
                    let b = random_feasible_weights(l_n, k_n, rho, &mut rng).gamma;
                    let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
                    let (fa, fb) = (s.value(&a), s.value(&b));
                    if fa.is_finite() && fb.is_finite() && s.value(&mid) < 0.5 * (fa + fb) - 1e-9 {
                        concavity_violations += 1;
                    }
                }
                Ok::<(), Error>(())
            })
            .unwrap();
        }
    }
    Outcome {
        pass: worst_tangent < 1e-9 && worst_grad < 1e-4 && minorization_violations == 0 && concavity_violations == 0,
        detail: format!(
            "{expansions} expansion points: max |f̆ − f| {worst_tangent:.1e}, max gradient error {worst_grad:.1e}, \
             {minorization_violations} minorization and {concavity_violations} concavity violations"
        ),
    }
}

/// Desk-scale runs for every preset and seed, shared by criteria 5 to 8.
struct Grid {
    runs: Vec<(String, u64, ExperimentResults)>,
    elapsed_s: f64,
}

fn desk_grid() -> Grid {
    let start = Instant::now();
    let mut runs = vec![];
    for preset in PRESET_NAMES {
        for seed in 0..SEEDS {
            let mut cfg = ExperimentConfig::desk();
            cfg.hardware = ImpairmentLevel::preset(preset).unwrap();
            cfg.system.seed = seed;
            runs.push((preset.to_string(), seed, evaluate(&cfg).unwrap()));
        }
    }
    Grid { runs, elapsed_s: start.elapsed().as_secs_f64() }
}

fn sum_se(r: &ExperimentResults, scheme: Scheme, kind: PrecoderKind) -> f64 {
    r.row(scheme, kind).expect("row present").sum_se
}

fn mm_monotone_feasible(grid: &Grid) -> Outcome {
    let (mut traces, mut decreases, mut infeasible, mut unconverged, mut max_iters) = (0, 0, 0, 0, 0);
    for (_, _, r) in &grid.runs {
        for (_, trace) in &r.traces {
            traces += 1;
            for pair in trace.rows.windows(2) {
                if pair[1].objective < pair[0].objective - 1e-9 {
                    decreases += 1;
                }
            }
            infeasible += trace.rows.iter().filter(|row| row.max_power_excess > 1e-12).count();
            let last = trace.rows.last().unwrap();
            max_iters = max_iters.max(last.iteration);
            if last.mm_residual.is_nan() || last.mm_residual > 1e-4 {
                unconverged += 1;
            }
        }
    }
    Outcome {
        pass: traces == 150 && decreases == 0 && infeasible == 0 && unconverged == 0,
        detail: format!(
            "{traces} MM runs: {decreases} decreases, {infeasible} infeasible iterates, {unconverged} unconverged, \
             at most {max_iters} iterations"
        ),
    }
}

fn da_du_collapse(grid: &Grid) -> Outcome {
    let mut worst: f64 = 0.0;
    for (preset, _, r) in &grid.runs {
        if preset == "ideal" {
            for scheme in Scheme::ALL {
                let (da, du) = (sum_se(r, scheme, PrecoderKind::DaMmse), sum_se(r, scheme, PrecoderKind::DuMmse));
                worst = worst.max((da - du).abs() / du);
            }
        }
    }
    Outcome { pass: worst < 0.01, detail: format!("max |DA − DU|/DU under ideal hardware {:.4}%", 100.0 * worst) }
}

fn da_gain_direction(grid: &Grid) -> Outcome {
    // Sum SE over all seeds per preset, LSFP scheme.
    let gains: Vec<f64> = PRESET_NAMES
        .iter()
        .map(|p| {
            let (mut da, mut du) = (0.0, 0.0);
            for (preset, _, r) in &grid.runs {
                if preset == p {
                    da += sum_se(r, Scheme::Lsfp, PrecoderKind::DaMmse);
                    du += sum_se(r, Scheme::Lsfp, PrecoderKind::DuMmse);
                }
            }
            da / du - 1.0
        })
        .collect();
    let monotone = gains.windows(2).all(|w| w[1] > w[0]);
    let positive = gains[1..].iter().all(|&g| g > 0.0) && gains[0] >= -1e-12;
    let severe = *gains.last().unwrap();
    let text: Vec<String> = PRESET_NAMES.iter().zip(&gains).map(|(p, g)| format!("{p} {:.2}%", 100.0 * g)).collect();
    Outcome {
        pass: monotone && positive && severe > 0.05,
        detail: format!("DA-over-DU LSFP gain: {}", text.join(", ")),
    }
}

fn lsfp_over_slp(grid: &Grid) -> Outcome {
    let mut nesting_violations = 0;
    for (_, _, r) in &grid.runs {
        for kind in PrecoderKind::ALL {
            if sum_se(r, Scheme::Lsfp, kind) < sum_se(r, Scheme::Slp, kind) - 1e-9 {
                nesting_violations += 1;
            }
        }
    }
    let gain = |r: &ExperimentResults, k| sum_se(r, Scheme::Lsfp, k) / sum_se(r, Scheme::Slp, k) - 1.0;
    let mut da_wins = 0;
    let mut pairs = vec![];
    for (preset, _, r) in &grid.runs {
        if preset == "ideal" {
            let (da, mr) = (gain(r, PrecoderKind::DaMmse), gain(r, PrecoderKind::Mr));
            if da > mr {
                da_wins += 1;
            }
            pairs.push(format!("{:.2}/{:.2}", 100.0 * da, 100.0 * mr));
        }
    }
    Outcome {
        pass: nesting_violations == 0 && da_wins >= 8,
        detail: format!(
            "LSFP < SLP in {nesting_violations} cases; ideal-hardware LSFP gain DA > MR in {da_wins}/10 seeds \
             (DA%/MR%: {})",
            pairs.join(" ")
        ),
    }
}

fn single_cell_grid_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for (preset, seed) in [("ideal", 0), ("ideal", 1), ("high", 2), ("severe", 3)] {
        let config = SystemConfig { cells: 1, seed, ..SystemConfig::desk() };
        let profile = ImpairmentLevel::preset(preset).unwrap().profile(config.antennas).unwrap();
        let sim = Simulation::generate(config.clone(), profile).unwrap();
        let terms = estimate_sinr_terms(&sim, PrecoderKind::DaMmse, 1000).unwrap();
        let problem = SeProblem::new(&terms, config.prelog(), config.downlink_power).unwrap();
        let init = equal_power_slp(1, 2, config.downlink_power);
        let mm = mm_optimize(&problem, &init, &MmOptions::default()).unwrap().objective;
        let steps = 1000;
        let mut best: f64 = 0.0;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let p = [i as f64 / steps as f64, j as f64 / steps as f64];
                best = best.max(problem.value(&[p[0].sqrt(), p[1].sqrt()]));
            }
        }
        worst = worst.max((best - mm) / best);
    }
    Outcome { pass: worst <= 0.01, detail: format!("max grid-over-MM shortfall {:.4}%", 100.0 * worst) }
}

fn timed(limit_s: Option<f64>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let t = start.elapsed().as_secs_f64();
    out.detail = format!("{} [{t:.1} s]", out.detail);
    if let Some(limit) = limit_s {
        if t > limit {
            out.pass = false;
            out.detail.push_str(&format!(" exceeds {limit} s"));
        }
    }
    out
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "Bussgang consistency", timed(Some(5.0), bussgang_consistency)),
        (2, "estimator orthogonality", timed(Some(30.0), estimator_orthogonality)),
        (3, "closed form vs simulation", timed(Some(120.0), closed_form_vs_oracle)),
        (4, "surrogate validity", timed(None, surrogate_validity)),
    ];
    let grid = desk_grid();
    say(&format!("desk grid: {} presets x {SEEDS} seeds in {:.1} s", PRESET_NAMES.len(), grid.elapsed_s));
    results.push((5, "MM monotonicity and feasibility", mm_monotone_feasible(&grid)));
    results.push((6, "DA = DU under ideal hardware", da_du_collapse(&grid)));
    results.push((7, "DA-over-DU gain direction", da_gain_direction(&grid)));
    results.push((8, "LSFP over SLP direction", lsfp_over_slp(&grid)));
    results.push((9, "single-cell grid oracle", timed(Some(60.0), single_cell_grid_oracle)));
    let mut unexpected = vec![];
    for (id, name, out) in &results {
        let status = if out.pass { "PASS" } else { "FAIL" };
        let note = if !out.pass && KNOWN_RED.contains(id) { " (known)" } else { "" };
        say(&format!("criterion {id} {status}{note}: {name}: {}", out.detail));
        if !out.pass && !KNOWN_RED.contains(id) {
            unexpected.push(*id);
        }
    }
    if !unexpected.is_empty() {
        say(&format!("unexpected failures: {unexpected:?}"));
        std::process::exit(1);
    }
}
