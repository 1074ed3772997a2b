//! Samplers for the Gaussian measures `μ_0`, `μ_N` and the four-parameter
//! family `μ_q`, the weighted densities `ν_t`, and empirical tail estimates.
//!
//! Every Gaussian draw is a pure function of `(master_seed, sample_index,
//! mode_index)`: the ChaCha stream is selected by the sample index and the
//! word position by the mode index, so samples can be generated in any order
//! on any number of threads.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Error, Result};
use crate::galerkin::cutoff_multipliers_for;
use crate::hermite::{lambda, to_coeffs, BasisTable, HermiteState, C64};
use crate::lens::t_of_s;
use crate::norms::grid_lp_norm;

/// Identifies one sample in a reproducible ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleSeed {
    pub master_seed: u64,
    pub sample_index: u64,
}

impl SampleSeed {
    pub fn new(master_seed: u64, sample_index: u64) -> Self {
        Self { master_seed, sample_index }
    }
}

/// Complex standard Gaussians `g_n` (`E|g_n|² = 1`) keyed by mode index.
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: SampleSeed) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.master_seed);
        rng.set_stream(seed.sample_index);
        Self { rng }
    }

    /// `g_mode`, using exactly four 32-bit words at a mode-dependent offset.
    pub fn complex_normal(&mut self, mode: usize) -> C64 {
        self.rng.set_word_pos(4 * mode as u128);
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        // u1 ∈ (0, 1], u2 ∈ [0, 1)
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let r = (-u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        C64::new(r * c, r * s)
    }
}

/// `c_n = scale · g_n / λ_n` for `n < n_modes`.
pub fn sample_gaussian(n_modes: usize, seed: SampleSeed, scale: f64) -> HermiteState {
    let mut stream = GaussianStream::new(seed);
    let coeffs = (0..n_modes.max(1))
        .map(|n| stream.complex_normal(n) * (scale / lambda(n)))
        .collect();
    HermiteState::from_vec_unchecked(coeffs)
}

/// A draw from `μ_0` truncated to `n_modes` modes (that is, from `μ_N`).
pub fn sample_mu0(n_modes: usize, seed: SampleSeed) -> HermiteState {
    sample_gaussian(n_modes, seed, 1.0)
}

/// The Gaussian with density `∝ exp(−½‖√H u‖²)`: `E|c_n|² = 2/λ_n²`.
pub fn sample_half_convention(n_modes: usize, seed: SampleSeed) -> HermiteState {
    sample_gaussian(n_modes, seed, std::f64::consts::SQRT_2)
}

/// `q = (s, α, β, θ)`: free-evolution time, homothety, dilation, translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureParams {
    pub s: f64,
    pub alpha: C64,
    pub beta: f64,
    pub theta: f64,
}

impl Default for MeasureParams {
    fn default() -> Self {
        Self { s: 0.0, alpha: C64::new(1.0, 0.0), beta: 1.0, theta: 0.0 }
    }
}

impl MeasureParams {
    pub fn new(s: f64, alpha: C64, beta: f64, theta: f64) -> Result<Self> {
        let q = Self { s, alpha, beta, theta };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(domain(format!("dilation β must be positive, got {}", self.beta)));
        }
        if self.alpha.norm() == 0.0 || !self.alpha.norm().is_finite() {
            return Err(domain("homothety α must be nonzero"));
        }
        if !self.s.is_finite() || !self.theta.is_finite() {
            return Err(domain("s and θ must be finite"));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }
}

/// Result of a `μ_q` draw: the projected state and the relative `L²` mass
/// that fell outside the retained modes.
#[derive(Debug, Clone)]
pub struct MuqSample {
    pub state: HermiteState,
    pub residual: f64,
    pub flagged: bool,
}

pub const DEFAULT_PROJECTION_TOLERANCE: f64 = 1e-6;

/// Draws `γ ~ μ_0` on `n_modes` modes and pushes it forward by
/// `e^{is∂²} ∘ M_α ∘ Λ_β ∘ τ_θ`, re-projecting onto the `basis.n_max()` modes
/// of `basis`.
pub fn sample_muq(
    q: &MeasureParams,
    n_modes: usize,
    seed: SampleSeed,
    basis: &BasisTable,
) -> Result<MuqSample> {
    q.validate()?;
    if n_modes > basis.n_max() {
        return Err(Error::Dimension { expected: basis.n_max(), got: n_modes });
    }
    let gamma = sample_mu0(n_modes, seed);
    let input_mass = gamma.mass();
    let n_out = basis.n_max();
    let nodes = basis.grid().nodes();
    let weights = basis.grid().weights();
    let mut state = gamma.resized(n_out);
    let mut lost = 0.0;

    let mut project = |values: Vec<C64>| -> Result<HermiteState> {
        let projected = to_coeffs(&values, basis, n_out)?;
        let grid_mass: f64 = values.iter().zip(weights).map(|(v, w)| w * v.norm_sqr()).sum();
        lost += (grid_mass - projected.mass()).max(0.0);
        Ok(projected)
    };

    if q.theta != 0.0 || q.beta != 1.0 {
        let points: Vec<f64> = nodes.iter().map(|x| q.beta * x - q.theta).collect();
        let root = q.beta.sqrt();
        let values = state.eval_at(&points).into_iter().map(|v| v * root).collect();
        state = project(values)?;
    }
    state = state.scaled(q.alpha);
    if q.s != 0.0 {
        let t = t_of_s(q.s);
        let c = (2.0 * t).cos();
        let sn = (2.0 * t).sin();
        let evolved = state.linear_flow(t);
        let points: Vec<f64> = nodes.iter().map(|x| x * c).collect();
        let values = evolved
            .eval_at(&points)
            .into_iter()
            .zip(nodes)
            .map(|(v, &y)| v * c.sqrt() * C64::from_polar(1.0, 0.5 * y * y * c * sn))
            .collect();
        state = project(values)?;
    }
    let scale = q.alpha.norm_sqr() * input_mass;
    let residual = if scale > 0.0 { lost / scale } else { 0.0 };
    Ok(MuqSample {
        state,
        residual,
        flagged: residual > DEFAULT_PROJECTION_TOLERANCE,
    })
}

/// Density of `ν_t` (or `ν_{N,t}` when `truncation = Some(N)`) against the
/// Gaussian reference: `exp(−cos^{(p−5)/2}(2t)/(p+1) · ‖v‖_{L^{p+1}}^{p+1})`.
pub fn nu_density(
    u: &HermiteState,
    t: f64,
    p: f64,
    truncation: Option<usize>,
    basis: &BasisTable,
) -> Result<f64> {
    if t.abs() >= PI / 4.0 {
        return Err(domain(format!("ν_t is defined for |t| < π/4, got {t}")));
    }
    if p <= 1.0 {
        return Err(domain("nonlinearity exponent must exceed 1"));
    }
    let v = match truncation {
        Some(n) => {
            let m = cutoff_multipliers_for(n, u.n_modes());
            let c = u.coeffs().iter().zip(&m).map(|(c, m)| c * m).collect();
            HermiteState::from_vec_unchecked(c)
        }
        None => u.clone(),
    };
    let values = crate::hermite::to_grid(&v, basis)?;
    let lp = grid_lp_norm(&values, basis.grid().weights(), p + 1.0);
    let coef = (2.0 * t).cos().powf(0.5 * (p - 5.0)) / (p + 1.0);
    Ok((-coef * lp.powf(p + 1.0)).exp())
}

/// Least-squares fit of `log P̂(F > K) ≈ a − c·K²`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailFit {
    pub curvature: f64,
    pub intercept: f64,
    pub std_err: f64,
    pub n_points: usize,
}

impl TailFit {
    /// One-sided 95% lower bound on the curvature.
    pub fn lower_95(&self) -> f64 {
        self.curvature - 1.645 * self.std_err
    }
}

#[derive(Debug, Clone)]
pub struct TailEstimate {
    pub thresholds: Vec<f64>,
    pub survival: Vec<f64>,
    pub hits: Vec<usize>,
    pub n_samples: usize,
    pub fit: Option<TailFit>,
}

/// Empirical survival function of scalar observations.
pub fn tail_estimate(values: &[f64], thresholds: &[f64]) -> Result<TailEstimate> {
    if values.is_empty() {
        return Err(Error::Empty("tail estimate needs at least one sample".into()));
    }
    let m = values.len();
    let hits: Vec<usize> =
        thresholds.iter().map(|&k| values.iter().filter(|&&v| v > k).count()).collect();
    let survival: Vec<f64> = hits.iter().map(|&h| h as f64 / m as f64).collect();

    // Central range only: P̂ ∈ [10/M, 0.5], which also excludes bins with
    // fewer than 10 hits.
    let lo = 10.0 / m as f64;
    let pts: Vec<(f64, f64)> = thresholds
        .iter()
        .zip(&survival)
        .filter(|(_, &p)| p >= lo && p <= 0.5 && p > 0.0)
        .map(|(&k, &p)| (-k * k, p.ln()))
        .collect();
    let fit = fit_line(&pts).map(|(slope, intercept, se)| TailFit {
        curvature: slope,
        intercept,
        std_err: se,
        n_points: pts.len(),
    });
    Ok(TailEstimate { thresholds: thresholds.to_vec(), survival, hits, n_samples: m, fit })
}

/// [`tail_estimate`] of a functional evaluated on each state.
pub fn tail_estimate_states<F>(
    samples: &[HermiteState],
    functional: F,
    thresholds: &[f64],
) -> Result<TailEstimate>
where
    F: Fn(&HermiteState) -> f64,
{
    let values: Vec<f64> = samples.iter().map(functional).collect();
    tail_estimate(&values, thresholds)
}

/// Ordinary least squares `y = a + b·x`; returns `(b, a, stderr(b))`.
pub(crate) fn fit_line(pts: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let n = pts.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let se = if n > 2 {
        let ssr: f64 = pts.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
        (ssr / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    Some((b, a, se))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_mode_keyed() {
        let s = SampleSeed::new(7, 3);
        assert_eq!(sample_mu0(32, s), sample_mu0(32, s));
        // the first modes do not depend on how many modes are drawn
        let short = sample_mu0(8, s);
        let long = sample_mu0(32, s);
        assert_eq!(short.coeffs(), &long.coeffs()[..8]);
        assert_ne!(sample_mu0(8, SampleSeed::new(7, 4)), short);
    }

    #[test]
    fn measure_params_validation() {
        assert!(MeasureParams::new(0.0, C64::new(1.0, 0.0), 0.0, 0.0).is_err());
        assert!(MeasureParams::new(0.0, C64::new(0.0, 0.0), 1.0, 0.0).is_err());
        assert!(MeasureParams::default().is_identity());
    }

    #[test]
    fn identity_and_homothety() {
        let basis = BasisTable::with_oversampling(24, 4).unwrap();
        let seed = SampleSeed::new(11, 0);
        let base = sample_mu0(16, seed).resized(24);
        let id = sample_muq(&MeasureParams::default(), 16, seed, &basis).unwrap();
        assert_eq!(id.state, base);
        assert_eq!(id.residual, 0.0);
        let q = MeasureParams::new(0.0, C64::new(2.0, 0.0), 1.0, 0.0).unwrap();
        let doubled = sample_muq(&q, 16, seed, &basis).unwrap();
        for (a, b) in doubled.state.coeffs().iter().zip(base.coeffs()) {
            assert_eq!(*a, b * 2.0);
        }
    }

    #[test]
    fn nu_density_basics() {
        let basis = BasisTable::with_oversampling(16, 4).unwrap();
        let zero = HermiteState::zeros(16);
        assert_eq!(nu_density(&zero, 0.3, 3.0, None, &basis).unwrap(), 1.0);
        assert!(nu_density(&zero, PI / 4.0, 3.0, None, &basis).is_err());
        let u = sample_mu0(16, SampleSeed::new(1, 1));
        let a = nu_density(&u, 0.0, 5.0, Some(6), &basis).unwrap();
        let b = nu_density(&u, 0.6, 5.0, Some(6), &basis).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn tail_of_zero_functional() {
        let est = tail_estimate(&vec![0.0; 2000], &[0.1, 0.5, 1.0]).unwrap();
        assert!(est.survival.iter().all(|&p| p == 0.0));
        assert!(est.fit.is_none());
        assert!(tail_estimate(&[], &[1.0]).is_err());
    }
}
