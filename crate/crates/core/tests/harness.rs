use std::fs;
use std::process::Command;

use hermite_nls::galerkin::cutoff_multipliers;
use hermite_nls::harness::{run, write_outputs, ExperimentConfig, ExperimentKind, RunOutput};
use hermite_nls::hermite::{BasisTable, HermiteState};
use hermite_nls::norms::lp_norm;
use hermite_nls::random::{sample_half_convention, SampleSeed};

const KINDS: [ExperimentKind; 6] = [
    ExperimentKind::Sample,
    ExperimentKind::Evolve,
    ExperimentKind::DecayScan,
    ExperimentKind::Scatter,
    ExperimentKind::MeasureRatio,
    ExperimentKind::Diagnostics,
];

fn small_ratio(extra: &[&str]) -> ExperimentConfig {
    let mut ov: Vec<String> = vec![
        "experiment.ensemble=200".into(),
        "galerkin.truncation=4".into(),
        "measure_ratio.bootstrap=50".into(),
        "measure_ratio.times=[-0.3, 0.0, 0.2, 0.4]".into(),
    ];
    ov.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::defaults(ExperimentKind::MeasureRatio).with_overrides(&ov).unwrap()
}

fn series(out: &RunOutput, name: &str) -> Vec<f64> {
    out.summary[name].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
}

#[test]
fn configs_round_trip_through_toml() {
    for kind in KINDS {
        let cfg = ExperimentConfig::defaults(kind);
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.content_hash(), cfg.content_hash());
        cfg.validate().unwrap();
    }
    let a = ExperimentConfig::defaults(ExperimentKind::Sample);
    let b = a.with_overrides(&["experiment.seed=5".into()]).unwrap();
    assert_ne!(a.content_hash(), b.content_hash());
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    let base = "[experiment]\nkind = \"sample\"\n";
    assert!(ExperimentConfig::from_toml_str(base).is_ok());
    assert!(ExperimentConfig::from_toml_str(&format!("{base}[galerkin]\ntrunction = 4\n")).is_err());
    assert!(ExperimentConfig::from_toml_str(&format!("{base}[nonsense]\n")).is_err());
    assert!(ExperimentConfig::from_toml_str("[experiment]\nkind = \"warp\"\n").is_err());
    let cfg = ExperimentConfig::defaults(ExperimentKind::Sample);
    assert!(cfg.with_overrides(&["galerkin.nope=1".into()]).is_err());
    assert!(cfg.with_overrides(&["galerkin.truncation".into()]).is_err());
    assert!(cfg.with_overrides(&["galerkin.p=0.5".into()]).is_err());
    let mut bad = cfg.clone();
    bad.galerkin.truncation = 0;
    assert!(bad.validate().is_err());
}

#[test]
fn outputs_are_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for (k, threads) in [1usize, 3, 1].into_iter().enumerate() {
        let cfg = small_ratio(&[&format!("experiment.threads={threads}")]);
        let out = run(&cfg).unwrap();
        let d = dir.path().join(format!("run{k}"));
        write_outputs(&out, &cfg, &d).unwrap();
        for f in ["records.jsonl", "timeseries.csv", "summary.json", "config.toml", "metadata.json"] {
            assert!(d.join(f).exists(), "{f}");
        }
        bytes.push(fs::read(d.join("records.jsonl")).unwrap());
    }
    // the thread count is part of the configuration, so the hash differs
    // between runs; compare the records without it
    let strip = |b: &[u8]| -> Vec<serde_json::Value> {
        String::from_utf8_lossy(b)
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("config_hash");
                v
            })
            .collect()
    };
    assert_eq!(bytes[0], bytes[2]);
    assert_eq!(strip(&bytes[0]), strip(&bytes[1]));
}

#[test]
fn sample_records_are_deterministic_per_index() {
    let base = ExperimentConfig::defaults(ExperimentKind::Sample);
    let a = run(&base.with_overrides(&["experiment.ensemble=4".into()]).unwrap()).unwrap();
    let b = run(&base.with_overrides(&["experiment.ensemble=8".into()]).unwrap()).unwrap();
    let pick = |o: &RunOutput| -> Vec<(u64, f64)> {
        o.records
            .iter()
            .filter(|r| r.observable == "l2_norm" && r.sample.unwrap() < 4)
            .map(|r| (r.sample.unwrap(), r.value.unwrap()))
            .collect()
    };
    assert_eq!(pick(&a), pick(&b));
}

#[test]
fn ratio_estimates_are_ordered() {
    let small = run(&small_ratio(&["measure_ratio.radius=0.8"])).unwrap();
    let large = run(&small_ratio(&["measure_ratio.radius=1.6"])).unwrap();
    let (vs, vl, z) = (series(&small, "v_hat"), series(&large, "v_hat"), series(&small, "z_hat"));
    for k in 0..vs.len() {
        assert!(vs[k] <= vl[k] && vl[k] <= z[k]);
    }
    assert_eq!(series(&large, "z_hat"), z);
}

#[test]
fn linear_flow_keeps_full_space_ratio_at_one() {
    let out = run(&small_ratio(&["galerkin.nonlinear_scale=0.0", "measure_ratio.radius=1e9"])).unwrap();
    for v in series(&out, "v_hat") {
        assert!((v - 1.0).abs() < 1e-10, "V̂ = {v}");
    }
    assert!(out.all_passed());
}

#[test]
fn weight_at_time_zero_is_the_potential() {
    let cfg = small_ratio(&[]);
    let out = run(&cfg).unwrap();
    let g = cfg.galerkin.to_config();
    let basis = BasisTable::with_oversampling(g.n_modes, cfg.galerkin.oversampling).unwrap();
    let m = cutoff_multipliers(&g);
    let mut seen = 0;
    for r in out.records.iter().filter(|r| r.observable == "log_weight" && r.t == Some(0.0)) {
        let u0 = sample_half_convention(g.n_modes, SampleSeed::new(cfg.experiment.seed, r.sample.unwrap()));
        let su = HermiteState::new(u0.coeffs().iter().zip(&m).map(|(c, m)| c * m).collect()).unwrap();
        let want = -lp_norm(&su, g.p + 1.0, &basis).unwrap().powf(g.p + 1.0) / (g.p + 1.0);
        assert!((r.value.unwrap() - want).abs() < 1e-12 * want.abs().max(1.0));
        seen += 1;
    }
    assert_eq!(seen, cfg.experiment.ensemble);
}

#[test]
fn projection_losses_are_flagged_in_records() {
    let cfg = ExperimentConfig::defaults(ExperimentKind::Sample)
        .with_overrides(&["measure.beta=3.0".into(), "experiment.ensemble=4".into()])
        .unwrap();
    let out = run(&cfg).unwrap();
    let flagged = out.records.iter().filter(|r| r.flags.iter().any(|f| f == "projection_residual")).count();
    assert!(flagged > 0);
    assert!(out.summary["flagged"].as_u64().unwrap() > 0);
}

fn hnls(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hnls")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ok");
    let (code, stdout) = hnls(&["evolve", "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("PASS mass_drift"));
    let cfg = ExperimentConfig::from_toml_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(cfg.experiment.seed, 3);

    let (code, stdout) = hnls(&[
        "evolve",
        "--out",
        dir.path().join("strict").to_str().unwrap(),
        "--override",
        "evolve.mass_tolerance=1e-30",
    ]);
    assert_eq!(code, 1);
    assert!(stdout.contains("FAIL mass_drift"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[experiment]\nkind = \"evolve\"\nmystery = 1\n").unwrap();
    assert_eq!(hnls(&["evolve", "--config", bad.to_str().unwrap()]).0, 2);
    let other = dir.path().join("other.toml");
    fs::write(&other, "[experiment]\nkind = \"sample\"\n").unwrap();
    assert_eq!(hnls(&["evolve", "--config", other.to_str().unwrap()]).0, 2);
    assert_eq!(hnls(&["evolve", "--config", "/nonexistent/x.toml"]).0, 2);
    assert_eq!(hnls(&["sample", "--override", "galerkin.p=-1"]).0, 2);
}
