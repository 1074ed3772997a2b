use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::config::{BallKind, ExperimentConfig};
use super::records::{RecordContext, RunRecord};
use super::sample::basis_for;
use super::{median, par_samples, Check, RunOutput};
use crate::error::{Error, Result};
use crate::galerkin::{evolve, RecordSpec, Stepper};
use crate::hermite::HermiteState;
use crate::norms::{lp_norm, sobolev_norm};
use crate::random::{sample_half_convention, SampleSeed};

/// Bootstrap resampling draws from this stream so they never collide with
/// sample streams.
const BOOTSTRAP_STREAM: u64 = u64::MAX;

/// Importance-weighted estimate of `ν_{N,t}(Φ_N(t,0)A)` at each time.
#[derive(Debug, Clone)]
pub struct RatioEstimate {
    pub t: f64,
    pub v_hat: f64,
    pub sigma: f64,
    /// Same estimator with `A` the whole space.
    pub z_hat: f64,
    pub ess: f64,
}

struct Sampled {
    norm: f64,
    /// `log w_k = ½‖√H u0‖² − 𝓔_N(t_k, u(t_k))`, aligned with the time grid.
    log_w: Option<Vec<f64>>,
}

fn run_times(
    u0: &HermiteState,
    times: &[f64],
    cfg: &ExperimentConfig,
    basis: &crate::hermite::BasisTable,
) -> Result<Vec<f64>> {
    let gcfg = cfg.galerkin.to_config();
    let mut stepper = Stepper::new(&gcfg, basis)?;
    let kinetic0 = 0.5 * sobolev_norm(u0, 1.0).powi(2);
    let mut out = vec![f64::NAN; times.len()];
    for sign in [1.0, -1.0] {
        let mine: Vec<f64> = times.iter().copied().filter(|&t| t * sign > 0.0).collect();
        if mine.is_empty() {
            continue;
        }
        let end = mine.iter().copied().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
        let traj = evolve(u0, 0.0, end, &gcfg, basis, &RecordSpec::checkpoints_only(mine))?;
        for (k, &t) in times.iter().enumerate() {
            if t * sign > 0.0 {
                let u = traj.state_at(t).expect("checkpoint recorded");
                out[k] = kinetic0 - stepper.energy(u.coeffs(), t);
            }
        }
    }
    for (k, &t) in times.iter().enumerate() {
        if t == 0.0 {
            out[k] = kinetic0 - stepper.energy(u0.coeffs(), 0.0);
        }
    }
    Ok(out)
}

fn estimate(w: &[Vec<f64>], inside: &[bool], k: usize, idx: &mut dyn Iterator<Item = usize>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in idx {
        if inside[i] {
            sum += w[i][k];
        }
        n += 1;
    }
    sum / n as f64
}

pub fn run_measure_ratio(cfg: &ExperimentConfig, ctx: &RecordContext) -> Result<RunOutput> {
    let gcfg = cfg.galerkin.to_config();
    let mr = &cfg.measure_ratio;
    if mr.times.is_empty() {
        return Err(Error::Config("measure_ratio.times is empty".into()));
    }
    let mut times = mr.times.clone();
    times.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap().then(a.partial_cmp(b).unwrap()));
    times.dedup();
    for &t in &times {
        crate::galerkin::check_window(0.0, t, &gcfg)?;
    }
    let basis = basis_for(cfg, gcfg.n_modes)?;
    let p = gcfg.p;

    let sampled: Vec<Sampled> = par_samples(cfg.experiment.ensemble, |i| -> Result<Sampled> {
        let u0 = sample_half_convention(gcfg.n_modes, SampleSeed::new(cfg.experiment.seed, i));
        let norm = match mr.ball {
            BallKind::L2 => u0.l2_norm(),
            BallKind::Lp => lp_norm(&u0, p + 1.0, &basis)?,
        };
        let log_w = match run_times(&u0, &times, cfg, &basis) {
            Ok(v) => Some(v),
            Err(Error::Integration { t, reason }) => {
                log::warn!("sample {i}: integration failed at t = {t}: {reason}");
                None
            }
            Err(e) => return Err(e),
        };
        Ok(Sampled { norm, log_w })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let m = sampled.len();
    let norms: Vec<f64> = sampled.iter().map(|s| s.norm).collect();
    let radius = match mr.radius {
        Some(r) => r,
        None => median(&norms).unwrap_or(0.0),
    };
    let flagged = sampled.iter().filter(|s| s.log_w.is_none()).count();

    let mut records: Vec<RunRecord> = Vec::new();
    for (i, s) in sampled.iter().enumerate() {
        let i = i as u64;
        let mut flags = Vec::new();
        if s.log_w.is_none() {
            flags.push("integration_error".to_string());
        }
        records.push(ctx.record("ball_norm", s.norm).sample(i).flags(&flags));
        if let Some(lw) = &s.log_w {
            for (&t, &l) in times.iter().zip(lw) {
                records.push(ctx.record("log_weight", l).sample(i).at_t(t));
            }
        }
    }

    // Flagged samples contribute zero weight but stay in the denominator, so
    // the estimate is a lower bound rather than silently renormalized.
    let w: Vec<Vec<f64>> = sampled
        .iter()
        .map(|s| match &s.log_w {
            Some(lw) => lw.iter().map(|l| l.exp()).collect(),
            None => vec![0.0; times.len()],
        })
        .collect();
    let inside: Vec<bool> = norms.iter().map(|&n| n <= radius).collect();
    let everything = vec![true; m];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed);
    rng.set_stream(BOOTSTRAP_STREAM);
    let resamples: Vec<Vec<usize>> =
        (0..mr.bootstrap).map(|_| (0..m).map(|_| rng.random_range(0..m)).collect()).collect();

    let mut est = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let v_hat = estimate(&w, &inside, k, &mut (0..m));
        let z_hat = estimate(&w, &everything, k, &mut (0..m));
        let boot: Vec<f64> = resamples
            .iter()
            .map(|idx| estimate(&w, &inside, k, &mut idx.iter().copied()))
            .collect();
        let mean = boot.iter().sum::<f64>() / boot.len().max(1) as f64;
        let sigma = if boot.len() > 1 {
            (boot.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (boot.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        let (s1, s2) = (0..m)
            .filter(|&i| inside[i])
            .fold((0.0, 0.0), |(a, b), i| (a + w[i][k], b + w[i][k] * w[i][k]));
        let ess = if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 };
        est.push(RatioEstimate { t, v_hat, sigma, z_hat, ess });
    }
    for e in &est {
        let rec = |name: &str, v: f64| ctx.record(name, v).at_t(e.t);
        records.push(rec("v_hat", e.v_hat));
        records.push(rec("v_hat_sigma", e.sigma));
        records.push(rec("z_hat", e.z_hat));
        records.push(rec("ess", e.ess));
    }

    let checks = ratio_checks(&est, p, mr.band_sigmas, mr.min_ess, flagged, m);
    let summary = json!({
        "p": p,
        "truncation": gcfg.truncation,
        "n_modes": gcfg.n_modes,
        "n_samples": m,
        "n_flagged": flagged,
        "reference_gaussian": "density ∝ exp(−½‖√H u‖²) on the active modes, E|c_n|² = 2/(2n+1); 𝓔_N uses the same ½ normalization",
        "ball": match mr.ball { BallKind::L2 => "l2", BallKind::Lp => "lp" },
        "radius": radius,
        "inside_fraction": inside.iter().filter(|&&b| b).count() as f64 / m as f64,
        "bootstrap": mr.bootstrap,
        "band_sigmas": mr.band_sigmas,
        "low_confidence": est.iter().any(|e| e.ess < mr.min_ess),
        "times": est.iter().map(|e| e.t).collect::<Vec<_>>(),
        "v_hat": est.iter().map(|e| e.v_hat).collect::<Vec<_>>(),
        "v_hat_sigma": est.iter().map(|e| e.sigma).collect::<Vec<_>>(),
        "z_hat": est.iter().map(|e| e.z_hat).collect::<Vec<_>>(),
        "ess": est.iter().map(|e| e.ess).collect::<Vec<_>>(),
    });
    Ok(RunOutput { records, summary, checks })
}

/// Monotonicity (or constancy at `p = 5`) within bands, the power-law bound
/// between same-sign time pairs, and `V̂ ≤ Ẑ`.
pub fn ratio_checks(
    est: &[RatioEstimate],
    p: f64,
    band: f64,
    min_ess: f64,
    flagged: usize,
    m: usize,
) -> Vec<Check> {
    let critical = (p - 5.0).abs() < 1e-12;
    let tol = |a: &RatioEstimate, b: &RatioEstimate| band * a.sigma.hypot(b.sigma) + 1e-12;
    let mut checks = Vec::new();

    // worst signed violation over consecutive |t| pairs of the same sign
    let mut worst: f64 = f64::NEG_INFINITY;
    for sign in [1.0, -1.0] {
        let seq: Vec<&RatioEstimate> =
            est.iter().filter(|e| e.t == 0.0 || e.t * sign > 0.0).collect();
        for pair in seq.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let excess = if critical {
                (b.v_hat - a.v_hat).abs()
            } else if p < 5.0 {
                b.v_hat - a.v_hat
            } else {
                a.v_hat - b.v_hat
            };
            worst = worst.max(excess - tol(a, b));
        }
    }
    let (name, what) = if critical {
        ("v_constant", "largest |ΔV̂| beyond the band")
    } else if p < 5.0 {
        ("v_nonincreasing", "largest increase of V̂ in |t| beyond the band")
    } else {
        ("v_nondecreasing", "largest decrease of V̂ in |t| beyond the band")
    };
    if worst.is_finite() {
        checks.push(Check::pass_if(name, worst <= 0.0, worst, 0.0, what.into()));
    }

    let mut worst_bound: f64 = f64::NEG_INFINITY;
    let mut pairs = 0;
    for a in est {
        for b in est {
            let same_side = a.t == 0.0 || a.t * b.t > 0.0;
            if !(same_side && a.t.abs() < b.t.abs()) {
                continue;
            }
            pairs += 1;
            let ratio = (2.0 * a.t).cos() / (2.0 * b.t).cos();
            let excess = if p <= 5.0 {
                a.v_hat.powf(ratio.powf(0.5 * (5.0 - p))) - b.v_hat
            } else {
                b.v_hat - a.v_hat.powf(ratio.powf(0.5 * (5.0 - p)))
            };
            worst_bound = worst_bound.max(excess - tol(a, b));
        }
    }
    if pairs > 0 {
        checks.push(Check::pass_if(
            "power_bound",
            worst_bound <= 0.0,
            worst_bound,
            0.0,
            format!("worst violation over {pairs} time pairs"),
        ));
    }
    let over = est.iter().map(|e| e.v_hat - e.z_hat).fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::pass_if("v_le_z", over <= 1e-15, over, 0.0, "max of V̂ − Ẑ".into()));
    let min_ess_seen = est.iter().map(|e| e.ess).fold(f64::INFINITY, f64::min);
    checks.push(Check::info(
        "effective_sample_size",
        min_ess_seen,
        format!(
            "smallest ESS; below {min_ess} marks the estimate low-confidence; {flagged} of {m} samples flagged"
        ),
    ));
    checks
}
