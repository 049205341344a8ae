//! Impairment presets, experiment configuration files and the experiment
//! runner that writes CSV results.
//!
//! Configuration files hold one `key = value` pair per line. Blank lines and
//! lines starting with `#` are ignored, and unknown keys are rejected.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{error, info};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hardware::{HardwareProfile, Resolution};
use crate::optimizer::{mm_optimize, MmOptions, MmTrace, SeProblem};
use crate::performance::{equal_power_slp, estimate_sinr_terms, per_ue_se, Simulation, SinrTerms, MIN_MC_SAMPLES};
use crate::precoding::PrecoderKind;
use crate::scenario::{dbm_to_watts, SystemConfig};

/// Reported bandwidth. SE values are per Hz; this is only written to metadata.
pub const BANDWIDTH_HZ: f64 = 20e6;

/// Aggregated impairment level: κ_bs drives both BS RF chains, κ_ue both UE
/// chains. `bs_bits` lists the resolutions of equal antenna blocks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpairmentLevel {
    pub name: String,
    pub kappa_bs: f64,
    pub kappa_ue: f64,
    pub ue_bits: Resolution,
    pub bs_bits: Vec<Resolution>,
}

pub const PRESET_NAMES: [&str; 5] = ["ideal", "low", "moderate", "high", "severe"];

impl ImpairmentLevel {
    pub fn preset(name: &str) -> Result<Self> {
        use Resolution::{Bits, Ideal};
        let (kappa_bs, kappa_ue, ue_bits, bs_bits) = match name {
            "ideal" => (0.0, 0.0, Ideal, vec![Ideal]),
            "low" => (0.01, 0.01, Bits(5), vec![Bits(3), Bits(4), Bits(5), Bits(6)]),
            "moderate" => (0.1, 0.05, Bits(4), vec![Bits(2), Bits(3), Bits(4), Bits(6)]),
            "high" => (0.175, 0.1, Bits(3), vec![Bits(1), Bits(2), Bits(3), Bits(4)]),
            "severe" => (0.15, 0.15, Bits(1), vec![Bits(1)]),
            other => return Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        };
        Ok(Self { name: name.to_string(), kappa_bs, kappa_ue, ue_bits, bs_bits })
    }

    pub fn profile(&self, antennas: usize) -> Result<HardwareProfile> {
        let p = HardwareProfile::dynamic(self.kappa_bs, self.kappa_ue, self.ue_bits, &self.bs_bits, antennas);
        p.validate(antennas)?;
        Ok(p)
    }

    fn is_named_preset(&self) -> bool {
        Self::preset(&self.name).is_ok_and(|p| &p == self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Scheme {
    /// Small-cell / local precoding: every BS serves only its own UEs.
    Slp,
    /// Large-scale fading precoding with MM-optimized coefficients.
    Lsfp,
}

impl Scheme {
    pub const ALL: [Scheme; 2] = [Scheme::Slp, Scheme::Lsfp];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Slp => "SLP",
            Scheme::Lsfp => "LSFP",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SLP" => Ok(Scheme::Slp),
            "LSFP" => Ok(Scheme::Lsfp),
            other => Err(Error::Domain(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub hardware: ImpairmentLevel,
    pub precoders: Vec<PrecoderKind>,
    pub schemes: Vec<Scheme>,
    pub mc_samples: usize,
    pub mm: MmOptions,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            hardware: ImpairmentLevel::preset("ideal").expect("builtin preset"),
            precoders: PrecoderKind::ALL.to_vec(),
            schemes: Scheme::ALL.to_vec(),
            mc_samples: 1000,
            mm: MmOptions::default(),
            output: PathBuf::from("results.csv"),
        }
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr<Err = Error>>(value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Domain("empty list".into()));
    }
    Ok(items)
}

fn parse_num<T: FromStr>(value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Domain(format!("`{value}`: {e}")))
}

impl ExperimentConfig {
    /// Desk-scale network: L = 2, M = 16, K = 2 and 500 Monte-Carlo samples.
    pub fn desk() -> Self {
        Self { system: SystemConfig::desk(), mc_samples: 500, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.hardware.profile(self.system.antennas)?;
        if self.mc_samples < MIN_MC_SAMPLES {
            return Err(Error::InvalidConfig(format!(
                "mc_samples must be at least {MIN_MC_SAMPLES}, got {}",
                self.mc_samples
            )));
        }
        if self.precoders.is_empty() || self.schemes.is_empty() {
            return Err(Error::InvalidConfig("at least one precoder and one scheme are required".into()));
        }
        if !(self.mm.eps > 0.0) || self.mm.max_iters == 0 {
            return Err(Error::InvalidConfig("mm_tol must be positive and mm_iters at least 1".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.system;
        match key {
            "preset" => {
                if value != "custom" {
                    self.hardware = ImpairmentLevel::preset(value)?;
                } else {
                    self.hardware.name = "custom".into();
                }
            }
            "kappa_bs" | "kappa_ue" | "ue_bits" | "bs_bits" => {
                let h = &mut self.hardware;
                match key {
                    "kappa_bs" => h.kappa_bs = parse_num(value)?,
                    "kappa_ue" => h.kappa_ue = parse_num(value)?,
                    "ue_bits" => h.ue_bits = value.parse()?,
                    _ => h.bs_bits = parse_list(value)?,
                }
                h.name = "custom".into();
            }
            "cells" => s.cells = parse_num(value)?,
            "ues_per_cell" => s.ues_per_cell = parse_num(value)?,
            "antennas" => s.antennas = parse_num(value)?,
            "pilot_len" => s.pilot_len = parse_num(value)?,
            "coherence_len" => s.coherence_len = parse_num(value)?,
            "pilot_power_w" => s.pilot_power = parse_num(value)?,
            "pilot_power_dbm" => s.pilot_power = dbm_to_watts(parse_num(value)?),
            "downlink_power_w" => s.downlink_power = parse_num(value)?,
            "downlink_power_dbm" => s.downlink_power = dbm_to_watts(parse_num(value)?),
            "noise_power_w" => s.noise_power = parse_num(value)?,
            "noise_power_dbm" => s.noise_power = dbm_to_watts(parse_num(value)?),
            "area_side" => s.area_side = parse_num(value)?,
            "min_distance" => s.min_distance = parse_num(value)?,
            "angular_spread_rad" => s.angular_spread = parse_num(value)?,
            "angular_spread_deg" => s.angular_spread = parse_num::<f64>(value)?.to_radians(),
            "pathloss_intercept_db" => s.propagation.pathloss_intercept_db = parse_num(value)?,
            "pathloss_slope_db" => s.propagation.pathloss_slope_db = parse_num(value)?,
            "rician_intercept" => s.propagation.rician_intercept = parse_num(value)?,
            "rician_slope_per_m" => s.propagation.rician_slope_per_m = parse_num(value)?,
            "seed" => s.seed = parse_num(value)?,
            "precoders" => self.precoders = parse_list(value)?,
            "schemes" => self.schemes = parse_list(value)?,
            "mc_samples" => self.mc_samples = parse_num(value)?,
            "mm_iters" => self.mm.max_iters = parse_num(value)?,
            "mm_tol" => self.mm.eps = parse_num(value)?,
            "mm_inner_tol" => self.mm.inner_tol = parse_num(value)?,
            "mm_inner_steps" => self.mm.inner_max_steps = parse_num(value)?,
            "output" => self.output = PathBuf::from(value),
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses configuration text on top of `self`. `path` only labels errors.
    pub fn apply_text(mut self, text: &str, path: &str) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { path: path.to_string(), line: i + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| parse_err("expected `key = value`".into()))?;
            self.set(key.trim(), value.trim()).map_err(|e| parse_err(e.to_string()))?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::default().apply_text(text, "<string>")
    }

    /// Serializes every setting. Floats use the shortest representation that
    /// parses back to the same value.
    pub fn to_text(&self) -> String {
        let s = &self.system;
        let h = &self.hardware;
        let mut lines = vec![];
        if h.is_named_preset() {
            lines.push(format!("preset = {}", h.name));
        } else {
            lines.push("preset = custom".into());
            lines.push(format!("kappa_bs = {:?}", h.kappa_bs));
            lines.push(format!("kappa_ue = {:?}", h.kappa_ue));
            lines.push(format!("ue_bits = {}", h.ue_bits));
            lines.push(format!("bs_bits = {}", join(&h.bs_bits)));
        }
        lines.extend([
            format!("cells = {}", s.cells),
            format!("ues_per_cell = {}", s.ues_per_cell),
            format!("antennas = {}", s.antennas),
            format!("pilot_len = {}", s.pilot_len),
            format!("coherence_len = {}", s.coherence_len),
            format!("pilot_power_w = {:?}", s.pilot_power),
            format!("downlink_power_w = {:?}", s.downlink_power),
            format!("noise_power_w = {:?}", s.noise_power),
            format!("area_side = {:?}", s.area_side),
            format!("min_distance = {:?}", s.min_distance),
            format!("angular_spread_rad = {:?}", s.angular_spread),
            format!("pathloss_intercept_db = {:?}", s.propagation.pathloss_intercept_db),
            format!("pathloss_slope_db = {:?}", s.propagation.pathloss_slope_db),
            format!("rician_intercept = {:?}", s.propagation.rician_intercept),
            format!("rician_slope_per_m = {:?}", s.propagation.rician_slope_per_m),
            format!("seed = {}", s.seed),
            format!("precoders = {}", join(&self.precoders)),
            format!("schemes = {}", join(&self.schemes)),
            format!("mc_samples = {}", self.mc_samples),
            format!("mm_iters = {}", self.mm.max_iters),
            format!("mm_tol = {:?}", self.mm.eps),
            format!("mm_inner_tol = {:?}", self.mm.inner_tol),
            format!("mm_inner_steps = {}", self.mm.inner_max_steps),
            format!("output = {}", self.output.display()),
        ]);
        lines.join("\n") + "\n"
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    ExperimentConfig::default().apply_text(&text, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub precoder: PrecoderKind,
    pub preset: String,
    pub seed: u64,
    /// Indexed `l*K + k`.
    pub per_ue_se: Vec<f64>,
    pub sum_se: f64,
    pub mm_iterations: usize,
    pub runtime_s: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub rows: Vec<ResultRow>,
    /// MM traces of the LSFP rows, keyed by precoder.
    pub traces: Vec<(PrecoderKind, MmTrace)>,
    /// Monte-Carlo SINR terms per precoder.
    pub terms: Vec<(PrecoderKind, SinrTerms)>,
}

impl ExperimentResults {
    pub fn row(&self, scheme: Scheme, precoder: PrecoderKind) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.precoder == precoder)
    }

    /// Result CSV. Runtime is left out so the bytes depend only on the inputs.
    pub fn to_csv(&self, config: &ExperimentConfig) -> String {
        let (l_n, k_n) = (config.system.cells, config.system.ues_per_cell);
        let mut header = vec!["scheme", "precoder", "preset", "seed", "sum_se", "mm_iterations"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        for l in 0..l_n {
            for k in 0..k_n {
                header.push(format!("se_l{l}_k{k}"));
            }
        }
        let mut out = header.join(",") + "\n";
        for r in &self.rows {
            let mut fields = vec![
                r.scheme.to_string(),
                r.precoder.to_string(),
                r.preset.clone(),
                r.seed.to_string(),
                format!("{:.10}", r.sum_se),
                r.mm_iterations.to_string(),
            ];
            fields.extend(r.per_ue_se.iter().map(|v| format!("{v:.10}")));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

fn combination(
    sim: &Simulation,
    terms: &SinrTerms,
    scheme: Scheme,
    config: &ExperimentConfig,
) -> Result<(Vec<f64>, usize, Option<MmTrace>)> {
    let sys = &sim.config;
    let init = equal_power_slp(sys.cells, sys.ues_per_cell, sys.downlink_power);
    match scheme {
        Scheme::Slp => Ok((per_ue_se(terms, &init, sys)?, 0, None)),
        Scheme::Lsfp => {
            let problem = SeProblem::new(terms, sys.prelog(), sys.downlink_power)?;
            let res = mm_optimize(&problem, &init, &config.mm)?;
            if !res.converged {
                info!("MM stopped after {} iterations without meeting mm_tol", res.iterations);
            }
            Ok((per_ue_se(terms, &res.weights, sys)?, res.iterations, Some(res.trace)))
        }
    }
}

/// Runs every (scheme, precoder) combination in memory. A failing combination
/// is logged and skipped.
pub fn evaluate(config: &ExperimentConfig) -> Result<ExperimentResults> {
    config.validate()?;
    let profile = config.hardware.profile(config.system.antennas)?;
    let sim = Simulation::generate(config.system.clone(), profile)?;
    let mut results = ExperimentResults { rows: vec![], traces: vec![], terms: vec![] };
    for &kind in &config.precoders {
        let start = Instant::now();
        let terms = match estimate_sinr_terms(&sim, kind, config.mc_samples) {
            Ok(t) => t,
            Err(e) => {
                error!("{kind}: SINR term estimation failed: {e}");
                continue;
            }
        };
        let terms_time = start.elapsed().as_secs_f64();
        for &scheme in &config.schemes {
            let start = Instant::now();
            match combination(&sim, &terms, scheme, config) {
                Ok((per_ue, iterations, trace)) => {
                    results.rows.push(ResultRow {
                        scheme,
                        precoder: kind,
                        preset: config.hardware.name.clone(),
                        seed: config.system.seed,
                        sum_se: per_ue.iter().sum(),
                        per_ue_se: per_ue,
                        mm_iterations: iterations,
                        runtime_s: terms_time + start.elapsed().as_secs_f64(),
                    });
                    if let Some(t) = trace {
                        results.traces.push((kind, t));
                    }
                }
                Err(e) => error!("{scheme}/{kind} failed: {e}"),
            }
        }
        results.terms.push((kind, terms));
    }
    if results.rows.is_empty() {
        return Err(Error::Model("every combination failed".into()));
    }
    Ok(results)
}

/// `results.csv` → `results.<suffix>`.
pub fn sibling_path(output: &Path, suffix: &str) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "results".into());
    output.with_file_name(format!("{stem}.{suffix}"))
}

fn trace_suffix(kind: PrecoderKind) -> &'static str {
    match kind {
        PrecoderKind::Mr => "trace.mr.csv",
        PrecoderKind::DuMmse => "trace.du-mmse.csv",
        PrecoderKind::DaMmse => "trace.da-mmse.csv",
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    bandwidth_hz: f64,
    coherence_len: usize,
    downlink_power_w: f64,
    /// Values not fixed by the system model that were chosen as defaults.
    assumed_defaults: Vec<&'static str>,
    runtimes_s: Vec<(String, f64)>,
    hardware: &'a ImpairmentLevel,
    config: String,
}

/// Runs the experiment and writes the CSV, a `.meta` JSON sidecar and one MM
/// trace file per LSFP row next to `config.output`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let results = evaluate(config)?;
    let out = &config.output;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, results.to_csv(config))?;
    for (kind, trace) in &results.traces {
        fs::write(sibling_path(out, trace_suffix(*kind)), trace.to_csv())?;
    }
    let defaults = ExperimentConfig::default().system;
    let mut assumed = vec![];
    if config.system.coherence_len == defaults.coherence_len {
        assumed.push("coherence_len");
    }
    if config.system.downlink_power == defaults.downlink_power {
        assumed.push("downlink_power_w");
    }
    let meta = Metadata {
        bandwidth_hz: BANDWIDTH_HZ,
        coherence_len: config.system.coherence_len,
        downlink_power_w: config.system.downlink_power,
        assumed_defaults: assumed,
        runtimes_s: results.rows.iter().map(|r| (format!("{}/{}", r.scheme, r.precoder), r.runtime_s)).collect(),
        hardware: &config.hardware,
        config: config.to_text(),
    };
    fs::write(sibling_path(out, "meta"), serde_json::to_string_pretty(&meta)?)?;
    Ok(results.rows)
}
