//! End-to-end acceptance run: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use hermite_nls::harness::{
    bound_slopes, liouville_sweep, mehler_sweep, run, ExperimentConfig, ExperimentKind, RunOutput,
};
use hermite_nls::hermite::{to_coeffs, to_grid, BasisTable, HermiteState, QuadratureGrid, C64};
use hermite_nls::lens::{free_propagate, lens_inverse, nls_side_norm};
use hermite_nls::random::{sample_mu0, SampleSeed};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn run_kind(kind: ExperimentKind, overrides: &[&str]) -> RunOutput {
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let cfg = ExperimentConfig::defaults(kind).with_overrides(&ov).expect("valid overrides");
    run(&cfg).expect("run completes")
}

/// All named checks present and passing.
fn checks_pass(out: &RunOutput, names: &[&str]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in names {
        match out.check(name) {
            Some(c) => {
                ok &= c.passed == Some(true);
                parts.push(format!("{name}={:.4e}", c.value));
            }
            None => {
                ok = false;
                parts.push(format!("{name}=missing"));
            }
        }
    }
    verdict(ok, parts.join(" "))
}

fn mehler() -> Verdict {
    let start = Instant::now();
    let sweep = mehler_sweep(&[0.3, 0.6, 0.9], 2000).unwrap();
    let elapsed = start.elapsed();
    let worst = sweep.iter().map(|s| s.1).fold(0.0, f64::max);
    verdict(
        worst < 1e-9 && elapsed < Duration::from_secs(10),
        format!("max error {worst:.3e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn spectral() -> Verdict {
    let basis = BasisTable::new(128, QuadratureGrid::gauss_hermite(512).unwrap());
    let gram = basis.gram_error();
    let u = sample_mu0(128, SampleSeed::new(0, 0));
    let back = to_coeffs(&to_grid(&u, &basis).unwrap(), &basis, 128).unwrap();
    let trip = back.sub(&u).l2_norm() / u.l2_norm();
    verdict(gram < 1e-10 && trip < 1e-10, format!("gram {gram:.3e}, round trip {trip:.3e}"))
}

fn eigenfunction_bounds() -> Verdict {
    let start = Instant::now();
    let b = bound_slopes(100, 2000, 12, 0.1).unwrap();
    let elapsed = start.elapsed();
    let ok = (b.l4_slope + 0.25).abs() <= 0.05
        && (b.linf_slope + 1.0 / 6.0).abs() <= 0.05
        && (b.weighted_slope + 0.35).abs() <= 0.05
        && elapsed < Duration::from_secs(120);
    verdict(
        ok,
        format!(
            "L4 {:.4}, Linf {:.4}, weighted L4 {:.4}, {:.1} s",
            b.l4_slope,
            b.linf_slope,
            b.weighted_slope,
            elapsed.as_secs_f64()
        ),
    )
}

fn conservation() -> Verdict {
    let pinned = [
        "galerkin.truncation=32",
        "galerkin.n_modes=128",
        "evolve.t0=0.0",
        "evolve.t1=0.7",
        "evolve.mass_tolerance=1e-8",
        "evolve.energy_tolerance=1e-6",
        "evolve.energy_law_tolerance=1e-4",
    ];
    let mut cubic: Vec<&str> = pinned.to_vec();
    cubic.push("galerkin.p=3.0");
    let mut quintic: Vec<&str> = pinned.to_vec();
    quintic.push("galerkin.p=5.0");
    let a = checks_pass(&run_kind(ExperimentKind::Evolve, &cubic), &["mass_drift", "energy_law"]);
    let b = checks_pass(&run_kind(ExperimentKind::Evolve, &quintic), &["mass_drift", "energy_drift"]);
    verdict(a.passed && b.passed, format!("p=3: {}; p=5: {}", a.detail, b.detail))
}

fn liouville() -> Verdict {
    let start = Instant::now();
    let sweep = liouville_sweep(0, 4).unwrap();
    let worst = sweep.iter().filter(|s| s.1.abs() <= 0.5).map(|s| s.2).fold(0.0, f64::max);
    let ps: Vec<f64> = sweep.iter().map(|s| s.0).collect();
    let covers = ps.contains(&3.0) && ps.contains(&5.0);
    verdict(
        worst < 1e-6 && covers,
        format!("max |det J − 1| {worst:.3e} over {} flows, {:.2} s", sweep.len(), start.elapsed().as_secs_f64()),
    )
}

fn measure_ratio() -> Verdict {
    let pinned = [
        "galerkin.truncation=8",
        "experiment.ensemble=10000",
        "measure_ratio.times=[0.0, 0.15, 0.3, 0.45, 0.6]",
        "measure_ratio.ball=\"l2\"",
        "measure_ratio.band_sigmas=2.0",
    ];
    let start = Instant::now();
    let mut cubic = pinned.to_vec();
    cubic.push("galerkin.p=3.0");
    let mut quintic = pinned.to_vec();
    quintic.push("galerkin.p=5.0");
    let a_out = run_kind(ExperimentKind::MeasureRatio, &cubic);
    let b_out = run_kind(ExperimentKind::MeasureRatio, &quintic);
    let a = checks_pass(&a_out, &["v_nonincreasing"]);
    let b = checks_pass(&b_out, &["v_constant"]);
    let mass = a_out.summary["inside_fraction"].as_f64().unwrap_or(f64::NAN);
    verdict(
        a.passed && b.passed && (mass - 0.5).abs() < 0.01 && start.elapsed() < Duration::from_secs(1800),
        format!("p=3: {}; p=5: {}; ball mass {mass:.4}; {:.0} s", a.detail, b.detail, start.elapsed().as_secs_f64()),
    )
}

fn decay() -> Verdict {
    let start = Instant::now();
    let out = run_kind(
        ExperimentKind::DecayScan,
        &[
            "galerkin.p=3.0",
            "galerkin.truncation=64",
            "experiment.ensemble=64",
            "decay.s_min=5.0",
            "decay.s_max=50.0",
            "decay.tolerance=0.1",
            "decay.control=true",
        ],
    );
    let v = checks_pass(&out, &["decay_exponent", "free_decay_exponent"]);
    verdict(
        v.passed && start.elapsed() < Duration::from_secs(3600),
        format!("{} (target 0.25), {:.0} s", v.detail, start.elapsed().as_secs_f64()),
    )
}

fn scattering() -> Verdict {
    let start = Instant::now();
    let out = run_kind(
        ExperimentKind::Scatter,
        &[
            "galerkin.p=5.0",
            "experiment.ensemble=32",
            "scatter.sigma=0.1",
            "scatter.gap=0.2",
            "scatter.n_checkpoints=8",
            "scatter.min_fraction=0.9",
        ],
    );
    let v = checks_pass(&out, &["cauchy_fraction", "residual_power"]);
    verdict(
        v.passed && start.elapsed() < Duration::from_secs(3600),
        format!("{}, {:.1} s", v.detail, start.elapsed().as_secs_f64()),
    )
}

fn tails() -> Verdict {
    let out = run_kind(
        ExperimentKind::Diagnostics,
        &[
            "diagnostics.mehler=false",
            "diagnostics.bounds=false",
            "diagnostics.liouville=false",
            "diagnostics.tails=true",
            "diagnostics.tail_samples=10000",
        ],
    );
    checks_pass(&out, &["besov_tail_curvature", "single_mode_tail"])
}

fn lens() -> Verdict {
    let basis = BasisTable::with_oversampling(48, 4).unwrap();
    let u = sample_mu0(48, SampleSeed::new(0, 1));
    let mut scaling: f64 = 0.0;
    for q in [2.0, 3.0, 4.0, 6.0] {
        for t in [-0.7, -0.3, 0.2, 0.5, 0.78] {
            let direct = lens_inverse(&u, t, &basis).unwrap().lp_norm(q);
            let via = nls_side_norm(&u, t, q, &basis).unwrap();
            scaling = scaling.max((direct - via).abs() / direct);
        }
    }
    let mut oracle: f64 = 0.0;
    let g = HermiteState::unit(48, 0);
    for s in [0.5, 3.0, 20.0] {
        let a = C64::new(1.0, 2.0 * s);
        let nls = free_propagate(&g, s, &basis).unwrap();
        for (y, v) in nls.y.iter().zip(&nls.values) {
            let want = PI.powf(-0.25) * (-(y * y) / (a * 2.0)).exp() / a.sqrt();
            oracle = oracle.max((v - want).norm());
        }
    }
    verdict(scaling < 1e-10 && oracle < 1e-8, format!("L^q scaling {scaling:.3e}, Gaussian oracle {oracle:.3e}"))
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 mehler identity", mehler),
        ("2 spectral layer", spectral),
        ("3 eigenfunction bounds", eigenfunction_bounds),
        ("4 conservation", conservation),
        ("5 liouville", liouville),
        ("6 measure evolution", measure_ratio),
        ("7 decay", decay),
        ("8 scattering", scattering),
        ("9 measure support", tails),
        ("10 lens identities", lens),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let v = f();
        println!("{} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        if !v.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
