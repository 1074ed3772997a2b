use serde_json::json;

use super::config::ExperimentConfig;
use super::records::{RecordContext, RunRecord};
use super::{median, par_samples, Check, RunOutput};
use crate::error::Result;
use crate::galerkin::{evolve, RecordSpec};
use crate::hermite::BasisTable;
use crate::norms::{besov_norm, block_masses, lp_norm, sobolev_norm, BesovSpec};
use crate::random::{sample_muq, MuqSample, SampleSeed};

/// Initial datum `index` of the configured measure on `basis.n_max()` modes.
pub(crate) fn draw_initial(
    cfg: &ExperimentConfig,
    n_modes: usize,
    basis: &BasisTable,
    index: u64,
) -> Result<MuqSample> {
    let q = cfg.measure.to_params()?;
    sample_muq(&q, n_modes, SampleSeed::new(cfg.experiment.seed, index), basis)
}

pub(crate) fn basis_for(cfg: &ExperimentConfig, n_modes: usize) -> Result<BasisTable> {
    BasisTable::with_oversampling(n_modes, cfg.galerkin.oversampling)
}

pub fn run_sample(cfg: &ExperimentConfig, ctx: &RecordContext) -> Result<RunOutput> {
    let n_modes = cfg.sample.n_modes.unwrap_or_else(|| cfg.galerkin.to_config().n_modes);
    let basis = basis_for(cfg, n_modes)?;
    let p = cfg.galerkin.p;
    let eps = cfg.diagnostics.sobolev_eps;

    let per_sample = par_samples(cfg.experiment.ensemble, |i| -> Result<Vec<RunRecord>> {
        let draw = draw_initial(cfg, n_modes, &basis, i)?;
        let u = &draw.state;
        let flags: Vec<String> =
            if draw.flagged { vec!["projection_residual".into()] } else { Vec::new() };
        let rec = |name: &str, v: f64| ctx.record(name, v).sample(i).flags(&flags);
        let mut out = vec![
            rec("l2_norm", u.l2_norm()),
            rec("sobolev_neg_eps", sobolev_norm(u, -eps)),
            rec("besov_b0_2_inf", besov_norm(u, BesovSpec::b0_2_inf(), &basis)?),
            rec("lp_norm", lp_norm(u, p + 1.0, &basis)?),
            rec("projection_residual", draw.residual),
        ];
        for (j, m) in block_masses(u).into_iter().enumerate() {
            out.push(rec("block_mass", m).mode(j));
        }
        if cfg.sample.coefficients {
            for (n, c) in u.coeffs().iter().enumerate() {
                out.push(rec("coeff_re", c.re).mode(n));
                out.push(rec("coeff_im", c.im).mode(n));
            }
        }
        Ok(out)
    });
    let mut records = Vec::new();
    for r in per_sample {
        records.extend(r?);
    }

    let m = cfg.experiment.ensemble as f64;
    let n_blocks = records.iter().filter(|r| r.observable == "block_mass").filter_map(|r| r.mode).max();
    let block_means: Vec<f64> = (0..n_blocks.map_or(0, |b| b + 1))
        .map(|j| {
            records
                .iter()
                .filter(|r| r.observable == "block_mass" && r.mode == Some(j))
                .filter_map(|r| r.value)
                .sum::<f64>()
                / m
        })
        .collect();
    let mass_mean = records
        .iter()
        .filter(|r| r.observable == "l2_norm")
        .filter_map(|r| r.value)
        .map(|v| v * v)
        .sum::<f64>()
        / m;
    let flagged = records.iter().filter(|r| r.observable == "l2_norm" && !r.flags.is_empty()).count();
    let summary = json!({
        "n_samples": cfg.experiment.ensemble,
        "n_modes": n_modes,
        "flagged": flagged,
        "mean_mass": mass_mean,
        "block_mass_means": block_means,
    });
    let checks = vec![Check::info(
        "flagged_samples",
        flagged as f64,
        format!("{flagged} of {} samples lost more than 1e-6 of their mass to projection", cfg.experiment.ensemble),
    )];
    Ok(RunOutput { records, summary, checks })
}

pub fn run_evolve(cfg: &ExperimentConfig, ctx: &RecordContext) -> Result<RunOutput> {
    let gcfg = cfg.galerkin.to_config();
    let basis = basis_for(cfg, gcfg.n_modes)?;
    let ev = &cfg.evolve;
    let spec = RecordSpec {
        fluctuation_sigma: Some(ev.fluctuation_sigma),
        ..RecordSpec::all()
    };
    let conserved = (gcfg.p - 5.0).abs() < 1e-12 || gcfg.nonlinear_scale == 0.0;

    struct One {
        records: Vec<RunRecord>,
        mass_drift: f64,
        energy_drift: f64,
        law_residual: f64,
        failed: bool,
    }

    let runs = par_samples(cfg.experiment.ensemble, |k| -> Result<One> {
        let i = ev.sample_index + k;
        let draw = draw_initial(cfg, gcfg.n_modes, &basis, i)?;
        let mut flags: Vec<String> = Vec::new();
        if draw.flagged {
            flags.push("projection_residual".into());
        }
        match evolve(&draw.state, ev.t0, ev.t1, &gcfg, &basis, &spec) {
            Err(e) => {
                flags.push("integration_error".into());
                log::warn!("sample {i}: {e}");
                let r = ctx.record("integration_error", f64::NAN).sample(i).flags(&flags);
                Ok(One {
                    records: vec![r],
                    mass_drift: f64::NAN,
                    energy_drift: f64::NAN,
                    law_residual: f64::NAN,
                    failed: true,
                })
            }
            Ok(tr) => {
                let mut records = Vec::new();
                for (k, &t) in tr.times.iter().enumerate() {
                    let rec = |name: &str, v: f64| ctx.record(name, v).sample(i).at_t(t).flags(&flags);
                    records.push(rec("mass", tr.mass[k]));
                    records.push(rec("energy", tr.energy[k]));
                    records.push(rec("energy_rhs", tr.energy_rhs[k]));
                    records.push(rec("truncated_lp", tr.truncated_lp[k]));
                    records.push(rec("fluctuation", tr.fluctuation[k]));
                }
                let m0 = tr.mass[0];
                let mass_drift = tr.mass.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max) / m0.max(1e-300);
                let e0 = tr.energy[0];
                let energy_drift =
                    tr.energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs().max(1e-300);
                // ΔE against the trapezoid integral of the predicted derivative
                let mut integral = 0.0;
                let mut law: f64 = 0.0;
                for k in 1..tr.times.len() {
                    let h = tr.times[k] - tr.times[k - 1];
                    integral += 0.5 * h * (tr.energy_rhs[k] + tr.energy_rhs[k - 1]);
                    let scale = tr.energy[k].abs().max(1.0);
                    law = law.max((tr.energy[k] - e0 - integral).abs() / scale);
                }
                let summary_rec = |name: &str, v: f64| ctx.record(name, v).sample(i).flags(&flags);
                records.push(summary_rec("mass_drift", mass_drift));
                records.push(summary_rec("energy_drift", energy_drift));
                records.push(summary_rec("energy_law_residual", law));
                Ok(One { records, mass_drift, energy_drift, law_residual: law, failed: false })
            }
        }
    });

    let mut records = Vec::new();
    let (mut md, mut ed, mut lr) = (Vec::new(), Vec::new(), Vec::new());
    let mut failed = 0;
    for r in runs {
        let r = r?;
        records.extend(r.records);
        if r.failed {
            failed += 1;
        } else {
            md.push(r.mass_drift);
            ed.push(r.energy_drift);
            lr.push(r.law_residual);
        }
    }
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let mut checks = vec![
        Check::pass_if(
            "integration",
            failed == 0,
            failed as f64,
            0.0,
            format!("{failed} of {} trajectories failed", cfg.experiment.ensemble),
        ),
        Check::pass_if(
            "mass_drift",
            max(&md) < ev.mass_tolerance,
            max(&md),
            ev.mass_tolerance,
            "largest relative mass drift".into(),
        ),
        Check::pass_if(
            "energy_law",
            max(&lr) < ev.energy_law_tolerance,
            max(&lr),
            ev.energy_law_tolerance,
            "|ΔE − ∫ predicted dE/dt| / max(1, |E|)".into(),
        ),
    ];
    if conserved {
        checks.push(Check::pass_if(
            "energy_drift",
            max(&ed) < ev.energy_tolerance,
            max(&ed),
            ev.energy_tolerance,
            "largest relative energy drift (energy is conserved here)".into(),
        ));
    } else {
        checks.push(Check::info("energy_drift", max(&ed), "energy is not conserved for p ≠ 5".into()));
    }
    let summary = json!({
        "n_samples": cfg.experiment.ensemble,
        "failed": failed,
        "p": gcfg.p,
        "truncation": gcfg.truncation,
        "n_modes": gcfg.n_modes,
        "t0": ev.t0,
        "t1": ev.t1,
        "median_mass_drift": median(&md),
        "median_energy_drift": median(&ed),
        "median_energy_law_residual": median(&lr),
    });
    Ok(RunOutput { records, summary, checks })
}
