use std::fs;

use lsfp_core::harness::{evaluate, load_config, run_experiment, sibling_path, ExperimentConfig, ImpairmentLevel, Scheme};
use lsfp_core::precoding::PrecoderKind;

fn desk(preset: &str, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.hardware = ImpairmentLevel::preset(preset).unwrap();
    cfg.system.seed = seed;
    cfg
}

#[test]
fn identical_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = vec![];
    for name in ["a", "b"] {
        let mut cfg = desk("moderate", 11);
        cfg.output = dir.path().join(name).join("run.csv");
        run_experiment(&cfg).unwrap();
        let csv = fs::read(&cfg.output).unwrap();
        let trace = fs::read(sibling_path(&cfg.output, "trace.da-mmse.csv")).unwrap();
        assert!(sibling_path(&cfg.output, "meta").exists());
        outputs.push((csv, trace));
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(text.starts_with("scheme,precoder,preset,seed,sum_se,mm_iterations,se_l0_k0"));
}

#[test]
fn different_seeds_differ() {
    let a = evaluate(&desk("low", 1)).unwrap();
    let b = evaluate(&desk("low", 2)).unwrap();
    let cfg = desk("low", 1);
    assert_ne!(a.to_csv(&cfg), b.to_csv(&cfg));
}

#[test]
fn ideal_da_matches_du() {
    let mut cfg = desk("ideal", 0);
    cfg.precoders = vec![PrecoderKind::DaMmse, PrecoderKind::DuMmse];
    cfg.schemes = vec![Scheme::Lsfp];
    let res = evaluate(&cfg).unwrap();
    assert_eq!(res.rows.len(), 2);
    let (da, du) = (res.rows[0].sum_se, res.rows[1].sum_se);
    assert!((da / du - 1.0).abs() < 0.01);
}

#[test]
fn severe_lsfp_not_below_slp() {
    let mut cfg = desk("severe", 0);
    cfg.precoders = vec![PrecoderKind::DaMmse];
    let res = evaluate(&cfg).unwrap();
    let slp = res.row(Scheme::Slp, PrecoderKind::DaMmse).unwrap();
    let lsfp = res.row(Scheme::Lsfp, PrecoderKind::DaMmse).unwrap();
    assert!(lsfp.sum_se >= slp.sum_se);
    assert!(slp.per_ue_se.iter().chain(&lsfp.per_ue_se).all(|&s| s >= 0.0));
}

#[test]
fn config_file_drives_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.cfg");
    let out = dir.path().join("out.csv");
    fs::write(
        &path,
        format!(
            "# small run\npreset = high\ncells = 2\nues_per_cell = 2\nantennas = 8\npilot_len = 2\n\
             mc_samples = 200\nprecoders = MR\nschemes = SLP\noutput = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let cfg = load_config(&path).unwrap();
    assert_eq!(cfg.hardware.name, "high");
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].mm_iterations, 0);
    assert!(out.exists());
    assert!(!sibling_path(&out, "trace.mr.csv").exists());
}

#[test]
fn full_scale_defaults_complete() {
    let cfg = ExperimentConfig { precoders: vec![PrecoderKind::DaMmse], ..ExperimentConfig::default() };
    assert_eq!((cfg.system.cells, cfg.system.ues_per_cell, cfg.system.antennas), (4, 5, 100));
    let res = evaluate(&cfg).unwrap();
    assert_eq!(res.rows.len(), 2);
    let slp = res.row(Scheme::Slp, PrecoderKind::DaMmse).unwrap();
    let lsfp = res.row(Scheme::Lsfp, PrecoderKind::DaMmse).unwrap();
    assert_eq!(lsfp.per_ue_se.len(), 20);
    assert!(lsfp.sum_se >= slp.sum_se);
}
