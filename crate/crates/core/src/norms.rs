//! Norm functionals: grid `L^p`, spectral Sobolev norms, harmonic-oscillator
//! Besov norms and a sampled space-time norm of the linear flow.

use crate::error::{domain, Result};
use crate::hermite::{lambda, to_grid_slice, BasisTable, HermiteState, C64};

/// `|z|^p` with `0^p = 0`.
#[inline]
pub(crate) fn abs_pow(z: C64, p: f64) -> f64 {
    let a = z.norm();
    if a == 0.0 {
        0.0
    } else {
        (p * a.ln()).exp()
    }
}

/// `(Σ_k w_k |v_k|^p)^{1/p}` for values already on the basis grid.
pub fn grid_lp_norm(values: &[C64], weights: &[f64], p: f64) -> f64 {
    let s: f64 = values.iter().zip(weights).map(|(v, w)| w * abs_pow(*v, p)).sum();
    s.powf(1.0 / p)
}

/// `‖u‖_{L^p}` by quadrature on the basis grid.
pub fn lp_norm(u: &HermiteState, p: f64, basis: &BasisTable) -> Result<f64> {
    if p < 1.0 {
        return Err(domain(format!("L^p norm needs p ≥ 1, got {p}")));
    }
    let values = crate::hermite::to_grid(u, basis)?;
    Ok(grid_lp_norm(&values, basis.grid().weights(), p))
}

/// `(Σ λ_n^{2σ} |c_n|²)^{1/2}`.
pub fn sobolev_norm(u: &HermiteState, sigma: f64) -> f64 {
    sobolev_norm_coeffs(u.coeffs(), sigma)
}

pub(crate) fn sobolev_norm_coeffs(coeffs: &[C64], sigma: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(n, c)| ((2 * n + 1) as f64).powf(sigma) * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// `‖H^{σ/2} u‖_{L^p}`.
pub fn weighted_sobolev_norm(
    u: &HermiteState,
    sigma: f64,
    p: f64,
    basis: &BasisTable,
) -> Result<f64> {
    if sigma < 0.0 {
        return Err(domain("weighted Sobolev norm needs σ ≥ 0"));
    }
    let lifted: Vec<C64> = u
        .coeffs()
        .iter()
        .enumerate()
        .map(|(n, c)| c * lambda(n).powf(sigma))
        .collect();
    lp_norm(&HermiteState::from_vec_unchecked(lifted), p, basis)
}

/// Dyadic block index: the `j` with `4^j ≤ 2n+1 < 4^{j+1}`,
/// i.e. `2^j ≤ λ_n < 2^{j+1}`.
pub fn block_index(n: usize) -> usize {
    let mut v = 2 * n + 1;
    let mut j = 0;
    while v >= 4 {
        v /= 4;
        j += 1;
    }
    j
}

/// Modes `[start, end)` of block `j`.
pub fn block_range(j: usize) -> (usize, usize) {
    let lo = 4usize.pow(j as u32);
    let hi = 4 * lo;
    // smallest n with 2n+1 ≥ lo, smallest n with 2n+1 ≥ hi
    (lo / 2, hi / 2)
}

/// Harmonic-oscillator Besov exponents `(σ, p, q)`; `q = ∞` allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesovSpec {
    pub sigma: f64,
    pub p: f64,
    pub q: f64,
}

impl BesovSpec {
    /// `B⁰_{2,∞}`.
    pub fn b0_2_inf() -> Self {
        Self { sigma: 0.0, p: 2.0, q: f64::INFINITY }
    }
}

/// Coefficient `L²` mass of each dyadic block.
pub fn block_masses(u: &HermiteState) -> Vec<f64> {
    let n = u.n_modes();
    let mut out = vec![0.0; block_index(n - 1) + 1];
    for (i, c) in u.coeffs().iter().enumerate() {
        out[block_index(i)] += c.norm_sqr();
    }
    out
}

/// `‖(2^{jσ} ‖Δ_j u‖_{L^p})_j‖_{ℓ^q}` with sharp spectral blocks `Δ_j`.
pub fn besov_norm(u: &HermiteState, spec: BesovSpec, basis: &BasisTable) -> Result<f64> {
    if spec.p < 1.0 || spec.q < 1.0 {
        return Err(domain("Besov norm needs p, q ≥ 1"));
    }
    let n = u.n_modes();
    let n_blocks = block_index(n - 1) + 1;
    let mut terms = Vec::with_capacity(n_blocks);
    for j in 0..n_blocks {
        let (lo, hi) = block_range(j);
        let hi = hi.min(n);
        let block_lp = if spec.p == 2.0 {
            u.coeffs()[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
        } else {
            if n > basis.n_max() {
                return Err(crate::error::Error::Dimension { expected: basis.n_max(), got: n });
            }
            let mut coeffs = vec![C64::new(0.0, 0.0); hi];
            coeffs[lo..hi].copy_from_slice(&u.coeffs()[lo..hi]);
            let values = to_grid_slice(&coeffs, basis);
            grid_lp_norm(&values, basis.grid().weights(), spec.p)
        };
        terms.push(2f64.powf(j as f64 * spec.sigma) * block_lp);
    }
    Ok(lq_combine(&terms, spec.q))
}

fn lq_combine(terms: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        terms.iter().copied().fold(0.0, f64::max)
    } else {
        terms.iter().map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// How the time samples of a space-time norm are reduced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeReduce {
    Sup,
    /// Discrete `L^q` in time by the trapezoid rule on the sample times.
    Lq(f64),
}

/// Default sample times: 257 equispaced points on `[−π, π]`.
pub fn default_time_grid() -> Vec<f64> {
    let n = 257;
    (0..n)
        .map(|i| -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64)
        .collect()
}

/// `‖ ‖e^{−itH} u0‖_{W^{σ,r}} ‖` reduced over `t_grid`.
pub fn linear_spacetime_norm(
    u0: &HermiteState,
    sigma: f64,
    r: f64,
    t_grid: &[f64],
    reduce: TimeReduce,
    basis: &BasisTable,
) -> Result<f64> {
    if t_grid.is_empty() {
        return Err(domain("space-time norm needs a nonempty time grid"));
    }
    let samples = t_grid
        .iter()
        .map(|&t| weighted_sobolev_norm(&u0.linear_flow(t), sigma, r, basis))
        .collect::<Result<Vec<f64>>>()?;
    Ok(match reduce {
        TimeReduce::Sup => samples.iter().copied().fold(0.0, f64::max),
        TimeReduce::Lq(q) => {
            if samples.len() == 1 {
                return Ok(samples[0]);
            }
            let mut acc = 0.0;
            for i in 1..samples.len() {
                let dt = (t_grid[i] - t_grid[i - 1]).abs();
                acc += 0.5 * dt * (samples[i].powf(q) + samples[i - 1].powf(q));
            }
            acc.powf(1.0 / q)
        }
    })
}
