//! Lens transform between NLS on the line (time `s`) and the harmonic
//! oscillator equation on `|t| < π/4`, exact free propagation through it,
//! and extraction of scattering profiles.
//!
//! `𝓛_t G(x) = cos^{−1/2}(2t) G(x/cos 2t) e^{−i x² tan(2t)/2}` with
//! `t(s) = arctan(2s)/2`. NLS-side functions are sampled on the dilated grid
//! `y_k = x_k / cos(2t)`, so going back and forth never interpolates.

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};
use crate::galerkin::Trajectory;
use crate::hermite::{to_grid, BasisTable, HermiteState, QuadratureGrid, C64};
use crate::norms::{lp_norm, sobolev_norm};
use crate::random::fit_line;

const QUARTER_PI: f64 = PI / 4.0;

pub fn t_of_s(s: f64) -> f64 {
    0.5 * (2.0 * s).atan()
}

pub fn s_of_t(t: f64) -> Result<f64> {
    check_t(t)?;
    Ok(0.5 * (2.0 * t).tan())
}

fn check_t(t: f64) -> Result<()> {
    if !(t.abs() < QUARTER_PI) {
        return Err(domain(format!("lens time {t} outside |t| < π/4")));
    }
    Ok(())
}

/// A point of the lens time map, `t = arctan(2s)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LensTime {
    pub t: f64,
    pub s: f64,
}

impl LensTime {
    pub fn from_s(s: f64) -> Self {
        Self { t: t_of_s(s), s }
    }

    pub fn from_t(t: f64) -> Result<Self> {
        Ok(Self { t, s: s_of_t(t)? })
    }
}

/// Samples of an NLS-side function on the dilated grid `y_k = x_k/cos(2t)`.
#[derive(Debug, Clone)]
pub struct NlsGrid {
    pub y: Vec<f64>,
    /// Quadrature weights for `∫ dy` on `y`.
    pub weights: Vec<f64>,
    pub values: Vec<C64>,
}

impl NlsGrid {
    pub fn lp_norm(&self, q: f64) -> f64 {
        crate::norms::grid_lp_norm(&self.values, &self.weights, q)
    }

    /// `‖|y|^σ U‖_{L²}`.
    pub fn weighted_l2(&self, sigma: f64) -> f64 {
        self.y
            .iter()
            .zip(&self.weights)
            .zip(&self.values)
            .map(|((y, w), v)| w * y.abs().powf(2.0 * sigma) * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `‖self − other‖_{L²}`; both must live on the same grid.
    pub fn l2_distance(&self, other: &NlsGrid) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::Dimension { expected: self.values.len(), got: other.values.len() });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .zip(&self.weights)
            .map(|((a, b), w)| w * (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt())
    }
}

/// `u = 𝓛_t U`, with `U` given on `x_k/cos(2t)` and `u` returned on `x_k`.
pub fn lens_forward(nls_values: &[C64], t: f64, grid: &QuadratureGrid) -> Result<Vec<C64>> {
    check_t(t)?;
    if nls_values.len() != grid.len() {
        return Err(Error::Dimension { expected: grid.len(), got: nls_values.len() });
    }
    let c = (2.0 * t).cos();
    let tn = (2.0 * t).tan();
    let amp = c.powf(-0.5);
    Ok(grid
        .nodes()
        .iter()
        .zip(nls_values)
        .map(|(&x, v)| v * amp * C64::from_polar(1.0, -0.5 * x * x * tn))
        .collect())
}

/// `U = 𝓛_t^{−1} u` sampled on `y_k = x_k/cos(2t)`:
/// `U(y) = cos^{1/2}(2t) u(y cos 2t) e^{i y² cos(2t) sin(2t)/2}`.
pub fn lens_inverse(u: &HermiteState, t: f64, basis: &BasisTable) -> Result<NlsGrid> {
    check_t(t)?;
    let values = to_grid(u, basis)?;
    Ok(lens_inverse_values(&values, t, basis.grid()))
}

fn lens_inverse_values(values: &[C64], t: f64, grid: &QuadratureGrid) -> NlsGrid {
    let c = (2.0 * t).cos();
    let sn = (2.0 * t).sin();
    let amp = c.sqrt();
    let y: Vec<f64> = grid.nodes().iter().map(|x| x / c).collect();
    let weights = grid.weights().iter().map(|w| w / c).collect();
    let values = y
        .iter()
        .zip(values)
        .map(|(&y, v)| v * amp * C64::from_polar(1.0, 0.5 * y * y * c * sn))
        .collect();
    NlsGrid { y, weights, values }
}

/// `e^{is∂²} u0 = 𝓛_{t(s)}^{−1} e^{−i t(s) H} u0`, on the grid dilated by
/// `1/cos(2t(s))`.
pub fn free_propagate(u0: &HermiteState, s: f64, basis: &BasisTable) -> Result<NlsGrid> {
    free_propagate_at_t(u0, t_of_s(s), basis)
}

fn free_propagate_at_t(u0: &HermiteState, t: f64, basis: &BasisTable) -> Result<NlsGrid> {
    lens_inverse(&u0.linear_flow(t), t, basis)
}

/// `‖U(s(t))‖_{L^q} = cos^{1/2 − 1/q}(2t) ‖u(t)‖_{L^q}`.
pub fn nls_side_norm(u: &HermiteState, t: f64, q: f64, basis: &BasisTable) -> Result<f64> {
    check_t(t)?;
    let c = (2.0 * t).cos();
    Ok(c.powf(0.5 - 1.0 / q) * lp_norm(u, q, basis)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyIncrement {
    pub t_prev: f64,
    pub t: f64,
    /// `‖v(t) − v(t_prev)‖_{𝓗^σ}`.
    pub increment: f64,
}

#[derive(Debug, Clone)]
pub struct ScatteringProfile {
    pub w_plus: HermiteState,
    pub cauchy: Vec<CauchyIncrement>,
    /// Fitted power of the increments against `π/4 − t`.
    pub cauchy_rate: Option<f64>,
    /// `(s_k, ‖U(s_k) − e^{is_k∂²}(u0 + W₊)‖_{L²})`.
    pub residuals: Vec<(f64, f64)>,
    /// Fitted power of the residuals against `s`.
    pub residual_power: Option<f64>,
    /// Set when the increments fail to decrease strictly.
    pub non_cauchy: bool,
}

pub const DEFAULT_CAUCHY_SIGMA: f64 = 0.1;

/// Geometric checkpoints `π/4 − 2^{−k}·gap`, `k = 1..=count`.
pub fn geometric_checkpoints(gap: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|k| QUARTER_PI - gap * 0.5f64.powi(k as i32)).collect()
}

/// Extracts `W₊ = e^{iπH/4} v(t_last)` from a trajectory started at `t = 0`
/// from `u0`, where `v(t) = u(t) − e^{−itH}u0`, together with the Cauchy
/// increments of `v` and the NLS-side residuals.
pub fn scattering_profile(
    traj: &Trajectory,
    u0: &HermiteState,
    sigma: f64,
    checkpoints: &[f64],
    basis: &BasisTable,
) -> Result<ScatteringProfile> {
    if checkpoints.is_empty() {
        return Err(Error::Empty("scattering profile needs checkpoints".into()));
    }
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(domain("checkpoints must increase toward π/4"));
    }
    let mut states = Vec::with_capacity(checkpoints.len());
    let mut fluct = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        check_t(t)?;
        let u = traj
            .state_at(t)
            .ok_or_else(|| domain(format!("trajectory has no state at checkpoint {t}")))?;
        fluct.push(u.sub(&u0.linear_flow(t)));
        states.push(u);
    }

    let cauchy: Vec<CauchyIncrement> = (1..checkpoints.len())
        .map(|k| CauchyIncrement {
            t_prev: checkpoints[k - 1],
            t: checkpoints[k],
            increment: sobolev_norm(&fluct[k].sub(&fluct[k - 1]), sigma),
        })
        .collect();
    let non_cauchy = cauchy.windows(2).any(|w| w[1].increment >= w[0].increment);
    let cauchy_pts: Vec<(f64, f64)> = cauchy
        .iter()
        .filter(|c| c.increment > 0.0)
        .map(|c| ((QUARTER_PI - c.t).ln(), c.increment.ln()))
        .collect();
    let cauchy_rate = fit_line(&cauchy_pts).map(|f| f.0);

    // W₊ = e^{iπH/4} v(t_last)
    let w_plus = fluct.last().unwrap().linear_flow(-QUARTER_PI);
    let asymptote = u0.add(&w_plus);

    let mut residuals = Vec::with_capacity(checkpoints.len());
    for (&t, u) in checkpoints.iter().zip(&states) {
        let nls = lens_inverse(u, t, basis)?;
        let free = free_propagate_at_t(&asymptote.resized(u.n_modes()), t, basis)?;
        residuals.push((0.5 * (2.0 * t).tan(), nls.l2_distance(&free)?));
    }
    let res_pts: Vec<(f64, f64)> = residuals
        .iter()
        .filter(|(s, r)| *s > 0.0 && *r > 0.0)
        .map(|(s, r)| (s.ln(), r.ln()))
        .collect();
    let residual_power = fit_line(&res_pts).map(|f| f.0);

    Ok(ScatteringProfile { w_plus, cauchy, cauchy_rate, residuals, residual_power, non_cauchy })
}
