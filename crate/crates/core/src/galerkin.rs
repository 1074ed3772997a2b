//! The truncated flow `Φ_N` of the harmonic-oscillator NLS
//!
//! `i∂_t u − Hu = cos^{(p−5)/2}(2t) S_N(|S_N u|^{p−1} S_N u)`, `|t| < π/4`,
//!
//! where `S_N` multiplies `c_n` by `χ((2n+1)/(2N+1))`. Time stepping is Strang
//! splitting: exact linear phases around a fourth-order Runge–Kutta substep
//! for the projected nonlinearity. Modes with zero multiplier only see the
//! phases, so they evolve exactly linearly.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{domain, Error, Result};
use crate::hermite::{
    apply_linear_phases, project_into, BasisTable, HermiteState, C64,
};
use crate::norms::{abs_pow, sobolev_norm_coeffs};

const QUARTER_PI: f64 = PI / 4.0;

/// Smooth profile `χ` with `χ = 1` on `[0, 1/2]` and `χ = 0` on `[1, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CutoffSpec;

impl CutoffSpec {
    /// `χ(r) = φ(2−2r) / (φ(2−2r) + φ(2r−1))` with `φ(x) = e^{−1/x}` for `x > 0`.
    pub fn chi(&self, r: f64) -> f64 {
        if r <= 0.5 {
            return 1.0;
        }
        if r >= 1.0 {
            return 0.0;
        }
        let phi = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
        let a = phi(2.0 - 2.0 * r);
        let b = phi(2.0 * r - 1.0);
        a / (a + b)
    }
}

/// `m_n = χ((2n+1)/(2N+1))` for `n < n_modes`.
pub fn cutoff_multipliers_for(truncation: usize, n_modes: usize) -> Vec<f64> {
    let chi = CutoffSpec;
    let denom = (2 * truncation + 1) as f64;
    (0..n_modes).map(|n| chi.chi((2 * n + 1) as f64 / denom)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinConfig {
    /// Nonlinearity exponent `p > 1`.
    pub p: f64,
    /// Truncation level `N` of `S_N`.
    pub truncation: usize,
    pub n_modes: usize,
    pub cutoff: CutoffSpec,
    /// Base step.
    pub dt0: f64,
    /// For `p < 5` the step is `min(dt0, c_dt·(π/4 − |t|))`.
    pub c_dt: f64,
    /// Closest approach to `±π/4` allowed for `p < 5`.
    pub stop_margin: f64,
    /// Multiplies the nonlinearity; `0` gives the linear flow.
    pub nonlinear_scale: f64,
}

impl GalerkinConfig {
    /// Defaults for truncation `N`: `N+1` modes (the span of `e_0..e_N`).
    pub fn new(p: f64, truncation: usize) -> Self {
        Self {
            p,
            truncation,
            n_modes: truncation + 1,
            cutoff: CutoffSpec,
            dt0: 1e-3,
            c_dt: 0.02,
            stop_margin: 1e-3,
            nonlinear_scale: 1.0,
        }
    }

    pub fn with_modes(mut self, n_modes: usize) -> Self {
        self.n_modes = n_modes;
        self
    }

    pub fn linear(mut self) -> Self {
        self.nonlinear_scale = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) || !self.p.is_finite() {
            return Err(domain(format!("nonlinearity exponent must exceed 1, got {}", self.p)));
        }
        if self.truncation == 0 || self.n_modes == 0 {
            return Err(domain("truncation and n_modes must be positive"));
        }
        if self.n_modes < self.truncation {
            return Err(domain(format!(
                "n_modes = {} does not contain all modes with nonzero cutoff (need ≥ N = {})",
                self.n_modes, self.truncation
            )));
        }
        if !(self.stop_margin > 0.0 && self.stop_margin < QUARTER_PI) {
            return Err(domain("stop margin must lie in (0, π/4)"));
        }
        if !(self.dt0 > 0.0) || !(self.c_dt > 0.0) {
            return Err(domain("step parameters must be positive"));
        }
        Ok(())
    }

    /// `scale · cos^{(p−5)/2}(2t)`.
    pub fn coupling(&self, t: f64) -> f64 {
        if self.nonlinear_scale == 0.0 {
            return 0.0;
        }
        self.nonlinear_scale * (2.0 * t).cos().powf(0.5 * (self.p - 5.0))
    }

    fn step_size(&self, t: f64) -> f64 {
        if self.p < 5.0 {
            self.dt0.min(self.c_dt * (QUARTER_PI - t.abs()))
        } else {
            self.dt0
        }
    }
}

pub fn cutoff_multipliers(cfg: &GalerkinConfig) -> Vec<f64> {
    cutoff_multipliers_for(cfg.truncation, cfg.n_modes)
}

fn check_time(t: f64) -> Result<()> {
    if !(t.abs() < QUARTER_PI) {
        return Err(domain(format!("time {t} outside the window |t| < π/4")));
    }
    Ok(())
}

fn check_basis(cfg: &GalerkinConfig, basis: &BasisTable) -> Result<()> {
    cfg.validate()?;
    if basis.n_max() < cfg.n_modes {
        return Err(Error::Dimension { expected: cfg.n_modes, got: basis.n_max() });
    }
    Ok(())
}

fn check_state(u: &HermiteState, cfg: &GalerkinConfig) -> Result<()> {
    if u.n_modes() != cfg.n_modes {
        return Err(Error::Dimension { expected: cfg.n_modes, got: u.n_modes() });
    }
    Ok(())
}

/// Evaluates the projected nonlinearity and its derivative on the active
/// modes, reusing grid buffers across calls.
pub(crate) struct Nonlinearity<'a> {
    basis: &'a BasisTable,
    mult: Vec<f64>,
    n_active: usize,
    p: f64,
    grid: Vec<C64>,
    aux: Vec<C64>,
}

impl<'a> Nonlinearity<'a> {
    pub(crate) fn new(cfg: &GalerkinConfig, basis: &'a BasisTable) -> Self {
        let mult = cutoff_multipliers(cfg);
        let n_active = mult.iter().rposition(|&m| m > 0.0).map_or(0, |i| i + 1);
        let m = basis.n_nodes();
        Self {
            basis,
            mult,
            n_active,
            p: cfg.p,
            grid: vec![C64::new(0.0, 0.0); m],
            aux: vec![C64::new(0.0, 0.0); m],
        }
    }

    pub(crate) fn n_active(&self) -> usize {
        self.n_active
    }

    /// `grid ← S_N u` on the nodes.
    fn synthesize(&mut self, c: &[C64]) {
        self.grid.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for n in 0..self.n_active {
            let a = c[n] * self.mult[n];
            if a == C64::new(0.0, 0.0) {
                continue;
            }
            for (z, e) in self.grid.iter_mut().zip(self.basis.row(n)) {
                *z += a * e;
            }
        }
    }

    fn synthesize_aux(&mut self, c: &[C64]) {
        self.aux.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for n in 0..self.n_active {
            let a = c[n] * self.mult[n];
            if a == C64::new(0.0, 0.0) {
                continue;
            }
            for (z, e) in self.aux.iter_mut().zip(self.basis.row(n)) {
                *z += a * e;
            }
        }
    }

    /// `out[n] = −i·g·m_n·⟨|S_N u|^{p−1} S_N u, e_n⟩` for active `n`.
    pub(crate) fn rhs(&mut self, c: &[C64], g: f64, out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        if g == 0.0 || self.n_active == 0 {
            return;
        }
        self.synthesize(c);
        let pm1 = self.p - 1.0;
        for (z, w) in self.grid.iter_mut().zip(self.basis.grid().weights()) {
            *z *= abs_pow(*z, pm1) * w;
        }
        self.finish(out, g);
    }

    /// Derivative of [`Self::rhs`] at `c` in direction `dc`.
    fn rhs_tangent(&mut self, c: &[C64], dc: &[C64], g: f64, out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        if g == 0.0 || self.n_active == 0 {
            return;
        }
        self.synthesize(c);
        self.synthesize_aux(dc);
        let p = self.p;
        for ((dz, z), w) in self.aux.iter_mut().zip(&self.grid).zip(self.basis.grid().weights()) {
            let a = z.norm();
            if a == 0.0 {
                *dz = C64::new(0.0, 0.0);
                continue;
            }
            // d(|w|^{p−1} w) = |w|^{p−1} dw + (p−1)|w|^{p−3} Re(w̄ dw) w
            let ap1 = a.powf(p - 1.0);
            let re = (z.conj() * *dz).re;
            *dz = (*dz * ap1 + *z * ((p - 1.0) * ap1 / (a * a) * re)) * w;
        }
        std::mem::swap(&mut self.grid, &mut self.aux);
        self.finish(out, g);
        std::mem::swap(&mut self.grid, &mut self.aux);
    }

    fn finish(&mut self, out: &mut [C64], g: f64) {
        project_into(&self.grid, self.basis, &mut out[..self.n_active]);
        let minus_i = C64::new(0.0, -1.0);
        for n in 0..self.n_active {
            out[n] *= minus_i * g * self.mult[n];
        }
    }

    /// `‖S_N u‖_{L^{p+1}}^{p+1}` by quadrature.
    pub(crate) fn potential(&mut self, c: &[C64]) -> f64 {
        if self.n_active == 0 {
            return 0.0;
        }
        self.synthesize(c);
        let q = self.p + 1.0;
        self.grid
            .iter()
            .zip(self.basis.grid().weights())
            .map(|(z, w)| w * abs_pow(*z, q))
            .sum()
    }

    /// One RK4 step of `ċ = rhs(c)` with frozen coupling `g`; only the first
    /// `n_active` entries change.
    fn rk4(&mut self, c: &mut [C64], g: f64, dt: f64, scratch: &mut Rk4Scratch) {
        let na = self.n_active;
        if na == 0 || g == 0.0 {
            return;
        }
        let Rk4Scratch { k1, k2, k3, k4, tmp } = scratch;
        self.rhs(&c[..na], g, k1);
        axpy_into(tmp, &c[..na], 0.5 * dt, k1);
        self.rhs(tmp, g, k2);
        axpy_into(tmp, &c[..na], 0.5 * dt, k2);
        self.rhs(tmp, g, k3);
        axpy_into(tmp, &c[..na], dt, k3);
        self.rhs(tmp, g, k4);
        for n in 0..na {
            c[n] += (k1[n] + (k2[n] + k3[n]) * 2.0 + k4[n]) * (dt / 6.0);
        }
    }
}

struct Rk4Scratch {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); n];
        Self { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }
}

fn axpy_into(out: &mut [C64], x: &[C64], a: f64, y: &[C64]) {
    for ((o, x), y) in out.iter_mut().zip(x).zip(y) {
        *o = x + y * a;
    }
}

/// `−i·cos^{(p−5)/2}(2t)·S_N(|S_N u|^{p−1} S_N u)` in coefficients.
pub fn nonlinear_rhs(
    u: &HermiteState,
    t: f64,
    cfg: &GalerkinConfig,
    basis: &BasisTable,
) -> Result<HermiteState> {
    check_basis(cfg, basis)?;
    check_state(u, cfg)?;
    check_time(t)?;
    let mut nl = Nonlinearity::new(cfg, basis);
    let mut out = vec![C64::new(0.0, 0.0); cfg.n_modes];
    nl.rhs(u.coeffs(), cfg.coupling(t), &mut out);
    Ok(HermiteState::from_vec_unchecked(out))
}

/// A reusable stepper for one trajectory.
pub struct Stepper<'a> {
    cfg: GalerkinConfig,
    nl: Nonlinearity<'a>,
    scratch: Rk4Scratch,
}

impl<'a> Stepper<'a> {
    pub fn new(cfg: &GalerkinConfig, basis: &'a BasisTable) -> Result<Self> {
        check_basis(cfg, basis)?;
        let nl = Nonlinearity::new(cfg, basis);
        let scratch = Rk4Scratch::new(nl.n_active());
        Ok(Self { cfg: cfg.clone(), nl, scratch })
    }

    pub fn config(&self) -> &GalerkinConfig {
        &self.cfg
    }

    /// Strang step from `t` to `t + dt` in place.
    pub fn step_in_place(&mut self, c: &mut [C64], t: f64, dt: f64) -> Result<()> {
        apply_linear_phases(c, 0.5 * dt);
        let g = self.cfg.coupling(t + 0.5 * dt);
        self.nl.rk4(c, g, dt, &mut self.scratch);
        apply_linear_phases(c, 0.5 * dt);
        if c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Integration {
                t: t + dt,
                reason: format!("non-finite coefficient after step dt = {dt:e}"),
            });
        }
        Ok(())
    }

    pub fn energy(&mut self, c: &[C64], t: f64) -> f64 {
        let kinetic = 0.5 * sobolev_norm_coeffs(c, 1.0).powi(2);
        let g = self.cfg.coupling(t);
        if g == 0.0 {
            return kinetic;
        }
        kinetic + g / (self.cfg.p + 1.0) * self.nl.potential(c)
    }

    pub fn energy_rhs(&mut self, c: &[C64], t: f64) -> f64 {
        let p = self.cfg.p;
        if self.cfg.nonlinear_scale == 0.0 || p == 5.0 {
            return 0.0;
        }
        let c2 = (2.0 * t).cos();
        self.cfg.nonlinear_scale * (5.0 - p) * (2.0 * t).sin() * c2.powf(0.5 * (p - 7.0))
            / (p + 1.0)
            * self.nl.potential(c)
    }

    /// `‖S_N u‖_{L^{p+1}}`.
    pub fn truncated_lp(&mut self, c: &[C64]) -> f64 {
        self.nl.potential(c).powf(1.0 / (self.cfg.p + 1.0))
    }
}

/// One Strang step of the truncated flow.
pub fn step(
    u: &HermiteState,
    t: f64,
    dt: f64,
    cfg: &GalerkinConfig,
    basis: &BasisTable,
) -> Result<HermiteState> {
    check_state(u, cfg)?;
    check_window(t, t + dt, cfg)?;
    let mut stepper = Stepper::new(cfg, basis)?;
    let mut c = u.coeffs().to_vec();
    stepper.step_in_place(&mut c, t, dt)?;
    Ok(HermiteState::from_vec_unchecked(c))
}

/// Admissible interval: inside `±(π/4 − stop_margin)` for `p < 5`, strictly
/// inside `±π/4` otherwise.
pub fn check_window(t0: f64, t1: f64, cfg: &GalerkinConfig) -> Result<()> {
    let limit = if cfg.p < 5.0 { QUARTER_PI - cfg.stop_margin } else { QUARTER_PI };
    for t in [t0, t1] {
        let ok = if cfg.p < 5.0 { t.abs() <= limit } else { t.abs() < limit };
        if !ok || !t.is_finite() {
            return Err(domain(format!(
                "time {t} outside the admissible window (limit {limit}) for p = {}",
                cfg.p
            )));
        }
    }
    Ok(())
}

/// What [`evolve`] records at every accepted step.
#[derive(Debug, Clone, Default)]
pub struct RecordSpec {
    pub states: bool,
    pub mass: bool,
    pub energy: bool,
    pub truncated_lp: bool,
    /// `𝓗^σ` norm of `v(t) = u(t) − e^{−i(t−t0)H}u0`.
    pub fluctuation_sigma: Option<f64>,
    /// Times the integrator lands on exactly; states there are always kept.
    pub checkpoints: Vec<f64>,
}

impl RecordSpec {
    pub fn all() -> Self {
        Self {
            states: false,
            mass: true,
            energy: true,
            truncated_lp: true,
            fluctuation_sigma: Some(0.0),
            checkpoints: Vec::new(),
        }
    }

    pub fn checkpoints_only(checkpoints: Vec<f64>) -> Self {
        Self { checkpoints, ..Self::default() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<HermiteState>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    /// `d𝓔_N/dt` predicted by the energy law, recorded with `energy`.
    pub energy_rhs: Vec<f64>,
    pub truncated_lp: Vec<f64>,
    pub fluctuation: Vec<f64>,
    pub checkpoint_states: Vec<(f64, HermiteState)>,
    pub final_state: Option<HermiteState>,
}

impl Trajectory {
    /// The recorded state at a checkpoint time.
    pub fn state_at(&self, t: f64) -> Option<&HermiteState> {
        self.checkpoint_states
            .iter()
            .find(|(tc, _)| (tc - t).abs() <= 1e-12 * t.abs().max(1.0))
            .map(|(_, s)| s)
    }

    pub fn final_state(&self) -> Option<&HermiteState> {
        self.final_state.as_ref()
    }
}

/// Integrates `Φ_N(t, t0) u0` for `t` from `t0` to `t1`.
pub fn evolve(
    u0: &HermiteState,
    t0: f64,
    t1: f64,
    cfg: &GalerkinConfig,
    basis: &BasisTable,
    record: &RecordSpec,
) -> Result<Trajectory> {
    check_state(u0, cfg)?;
    check_window(t0, t1, cfg)?;
    let mut stepper = Stepper::new(cfg, basis)?;
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };

    let mut stops: Vec<f64> = record
        .checkpoints
        .iter()
        .copied()
        .filter(|&s| (s - t0) * dir > 0.0 && (t1 - s) * dir >= 0.0)
        .collect();
    for &s in &record.checkpoints {
        check_window(s, s, cfg)?;
    }
    stops.sort_by(|a, b| (a * dir).partial_cmp(&(b * dir)).unwrap());
    stops.dedup();
    if stops.last().is_none_or(|&s| s != t1) {
        stops.push(t1);
    }
    let wants_checkpoint = |t: f64| record.checkpoints.contains(&t);

    let mut traj = Trajectory::default();
    let mut c = u0.coeffs().to_vec();
    let mass0 = u0.mass();
    let mut t = t0;
    observe(&mut traj, &mut stepper, &c, t, t0, u0, record);
    if wants_checkpoint(t0) {
        traj.checkpoint_states.push((t0, u0.clone()));
    }

    for &stop in &stops {
        while (stop - t) * dir > 0.0 {
            let mut h = cfg.step_size(t);
            let remaining = (stop - t).abs();
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            stepper.step_in_place(&mut c, t, dir * h)?;
            t = if last { stop } else { t + dir * h };
            let mass: f64 = c.iter().map(|z| z.norm_sqr()).sum();
            if mass > 1e6 * mass0.max(1e-300) {
                return Err(Error::Integration {
                    t,
                    reason: format!("mass grew from {mass0:e} to {mass:e}"),
                });
            }
            observe(&mut traj, &mut stepper, &c, t, t0, u0, record);
        }
        if wants_checkpoint(stop) {
            traj.checkpoint_states.push((stop, HermiteState::from_vec_unchecked(c.clone())));
        }
    }
    traj.final_state = Some(HermiteState::from_vec_unchecked(c));
    Ok(traj)
}

fn observe(
    traj: &mut Trajectory,
    stepper: &mut Stepper<'_>,
    c: &[C64],
    t: f64,
    t0: f64,
    u0: &HermiteState,
    record: &RecordSpec,
) {
    traj.times.push(t);
    if record.states {
        traj.states.push(HermiteState::from_vec_unchecked(c.to_vec()));
    }
    if record.mass {
        traj.mass.push(c.iter().map(|z| z.norm_sqr()).sum());
    }
    if record.energy {
        traj.energy.push(stepper.energy(c, t));
        traj.energy_rhs.push(stepper.energy_rhs(c, t));
    }
    if record.truncated_lp {
        traj.truncated_lp.push(stepper.truncated_lp(c));
    }
    if let Some(sigma) = record.fluctuation_sigma {
        let free = u0.linear_flow(t - t0);
        let diff: Vec<C64> = c.iter().zip(free.coeffs()).map(|(a, b)| a - b).collect();
        traj.fluctuation.push(sobolev_norm_coeffs(&diff, sigma));
    }
}

/// `𝓔_N(t, u) = ½‖√H u‖² + cos^{(p−5)/2}(2t)/(p+1)·‖S_N u‖_{L^{p+1}}^{p+1}`.
pub fn energy(u: &HermiteState, t: f64, cfg: &GalerkinConfig, basis: &BasisTable) -> Result<f64> {
    check_time(t)?;
    check_state(u, cfg)?;
    let mut stepper = Stepper::new(cfg, basis)?;
    Ok(stepper.energy(u.coeffs(), t))
}

/// `(5−p) sin(2t) cos^{(p−7)/2}(2t)/(p+1) · ‖S_N u‖_{L^{p+1}}^{p+1}`.
pub fn energy_derivative_rhs(
    u: &HermiteState,
    t: f64,
    cfg: &GalerkinConfig,
    basis: &BasisTable,
) -> Result<f64> {
    check_time(t)?;
    check_state(u, cfg)?;
    let mut stepper = Stepper::new(cfg, basis)?;
    Ok(stepper.energy_rhs(u.coeffs(), t))
}

/// Largest tangent-map dimension (real) accepted by [`jacobian_determinant`].
pub const MAX_TANGENT_DIM: usize = 32;

/// Determinant of the tangent map of `Φ_N(t1, t0)` on `E_N = span(e_0..e_N)`
/// at `u0`, obtained by stepping the variational equations with the flow.
pub fn jacobian_determinant(
    u0: &HermiteState,
    t0: f64,
    t1: f64,
    cfg: &GalerkinConfig,
    basis: &BasisTable,
) -> Result<f64> {
    check_state(u0, cfg)?;
    check_window(t0, t1, cfg)?;
    check_basis(cfg, basis)?;
    let n_t = (cfg.truncation + 1).min(cfg.n_modes);
    let dim = 2 * n_t;
    if dim > MAX_TANGENT_DIM {
        return Err(Error::Refused(format!(
            "tangent map of real dimension {dim} exceeds the cap of {MAX_TANGENT_DIM}"
        )));
    }
    if t1 == t0 {
        return Ok(1.0);
    }
    let mut nl = Nonlinearity::new(cfg, basis);
    let na = nl.n_active();
    let mut c = u0.coeffs()[..n_t].to_vec();
    // tangent[j] = image of the j-th real basis direction (re e_0, im e_0, re e_1, ...)
    let mut tangent: Vec<Vec<C64>> = (0..dim)
        .map(|j| {
            let mut v = vec![C64::new(0.0, 0.0); n_t];
            v[j / 2] = if j % 2 == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 1.0) };
            v
        })
        .collect();

    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let zero = C64::new(0.0, 0.0);
    let mut k = vec![vec![zero; na]; 4];
    let mut dk = vec![vec![vec![zero; na]; dim]; 4];
    let mut stage = vec![zero; na];
    let mut dstage = vec![zero; na];
    while (t1 - t) * dir > 0.0 {
        let mut h = cfg.step_size(t);
        let remaining = (t1 - t).abs();
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        let dt = dir * h;
        apply_linear_phases(&mut c, 0.5 * dt);
        tangent.iter_mut().for_each(|v| apply_linear_phases(v, 0.5 * dt));

        let g = cfg.coupling(t + 0.5 * dt);
        if na > 0 && g != 0.0 {
            let offsets = [0.0, 0.5, 0.5, 1.0];
            for s in 0..4 {
                for n in 0..na {
                    stage[n] = if s == 0 { c[n] } else { c[n] + k[s - 1][n] * (offsets[s] * dt) };
                }
                nl.rhs(&stage, g, &mut k[s]);
                for j in 0..dim {
                    for n in 0..na {
                        dstage[n] = if s == 0 {
                            tangent[j][n]
                        } else {
                            tangent[j][n] + dk[s - 1][j][n] * (offsets[s] * dt)
                        };
                    }
                    nl.rhs_tangent(&stage, &dstage, g, &mut dk[s][j]);
                }
            }
            for n in 0..na {
                c[n] += (k[0][n] + (k[1][n] + k[2][n]) * 2.0 + k[3][n]) * (dt / 6.0);
            }
            for j in 0..dim {
                for n in 0..na {
                    tangent[j][n] += (dk[0][j][n] + (dk[1][j][n] + dk[2][j][n]) * 2.0
                        + dk[3][j][n])
                        * (dt / 6.0);
                }
            }
        }

        apply_linear_phases(&mut c, 0.5 * dt);
        tangent.iter_mut().for_each(|v| apply_linear_phases(v, 0.5 * dt));
        t = if last { t1 } else { t + dt };
        if c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Integration { t, reason: "non-finite state in tangent flow".into() });
        }
    }

    let m = DMatrix::from_fn(dim, dim, |row, col| {
        let z = tangent[col][row / 2];
        if row % 2 == 0 {
            z.re
        } else {
            z.im
        }
    });
    Ok(m.determinant())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{sample_mu0, SampleSeed};

    #[test]
    fn chi_profile() {
        let chi = CutoffSpec;
        assert_eq!(chi.chi(0.0), 1.0);
        assert_eq!(chi.chi(0.5), 1.0);
        assert_eq!(chi.chi(1.0), 0.0);
        assert_eq!(chi.chi(3.0), 0.0);
        let mut prev = 1.0;
        for i in 0..=1000 {
            let v = chi.chi(0.5 + 0.5 * i as f64 / 1000.0);
            assert!((0.0..=1.0).contains(&v));
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn multipliers_match_support() {
        let cfg = GalerkinConfig::new(3.0, 10).with_modes(16);
        let m = cutoff_multipliers(&cfg);
        for (n, &v) in m.iter().enumerate() {
            let r = (2 * n + 1) as f64 / 21.0;
            if r <= 0.5 {
                assert_eq!(v, 1.0);
            }
            if n >= 10 {
                assert_eq!(v, 0.0);
            }
        }
        assert!(m.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn config_validation() {
        assert!(GalerkinConfig::new(1.0, 4).validate().is_err());
        assert!(GalerkinConfig::new(3.0, 8).with_modes(7).validate().is_err());
        assert!(GalerkinConfig::new(3.0, 8).with_modes(8).validate().is_ok());
    }

    #[test]
    fn rhs_vanishes_on_cut_modes_and_outside_window() {
        let cfg = GalerkinConfig::new(3.0, 4).with_modes(12);
        let basis = BasisTable::with_oversampling(12, 4).unwrap();
        let u = HermiteState::unit(12, 7);
        let r = nonlinear_rhs(&u, 0.2, &cfg, &basis).unwrap();
        assert!(r.coeffs().iter().all(|z| z.norm() == 0.0));
        assert!(nonlinear_rhs(&u, PI / 4.0, &cfg, &basis).is_err());
    }

    #[test]
    fn rhs_orthogonal_to_inactive_modes() {
        let cfg = GalerkinConfig::new(3.0, 6).with_modes(16);
        let basis = BasisTable::with_oversampling(16, 4).unwrap();
        let u = sample_mu0(16, SampleSeed::new(5, 2));
        let r = nonlinear_rhs(&u, 0.1, &cfg, &basis).unwrap();
        let m = cutoff_multipliers(&cfg);
        for (z, m) in r.coeffs().iter().zip(&m) {
            if *m == 0.0 {
                assert_eq!(z.norm(), 0.0);
            }
        }
        assert!(r.l2_norm() > 0.0);
    }

    #[test]
    fn energy_rhs_sign_flip() {
        let basis = BasisTable::with_oversampling(9, 4).unwrap();
        let u = sample_mu0(9, SampleSeed::new(3, 3));
        let lo = energy_derivative_rhs(&u, 0.3, &GalerkinConfig::new(3.0, 8), &basis).unwrap();
        let hi = energy_derivative_rhs(&u, 0.3, &GalerkinConfig::new(7.0, 8), &basis).unwrap();
        assert!(lo != 0.0);
        assert!(lo * hi < 0.0);
        assert_eq!(energy_derivative_rhs(&u, 0.0, &GalerkinConfig::new(3.0, 8), &basis).unwrap(), 0.0);
        assert_eq!(energy_derivative_rhs(&u, 0.4, &GalerkinConfig::new(5.0, 8), &basis).unwrap(), 0.0);
    }

    #[test]
    fn evolve_identity_and_window() {
        let cfg = GalerkinConfig::new(3.0, 6);
        let basis = BasisTable::with_oversampling(7, 4).unwrap();
        let u = sample_mu0(7, SampleSeed::new(1, 9));
        let tr = evolve(&u, 0.1, 0.1, &cfg, &basis, &RecordSpec::default()).unwrap();
        assert_eq!(tr.final_state().unwrap(), &u);
        assert!(evolve(&u, 0.0, 0.785, &cfg, &basis, &RecordSpec::default()).is_err());
    }

    #[test]
    fn tangent_dimension_cap() {
        let cfg = GalerkinConfig::new(3.0, 16);
        let basis = BasisTable::with_oversampling(17, 4).unwrap();
        let u = sample_mu0(17, SampleSeed::new(1, 1));
        assert!(matches!(
            jacobian_determinant(&u, 0.0, 0.1, &cfg, &basis),
            Err(Error::Refused(_))
        ));
        let small = GalerkinConfig::new(3.0, 2);
        let u = sample_mu0(3, SampleSeed::new(1, 1));
        assert_eq!(jacobian_determinant(&u, 0.2, 0.2, &small, &basis).unwrap(), 1.0);
    }
}
