//! Hermite functions, Gauss–Hermite quadrature and the coefficient/grid
//! transforms that every other module is built on.
//!
//! The normalized Hermite functions `e_n` are the eigenfunctions of
//! `H = -d²/dx² + x²` with `H e_n = (2n+1) e_n`. They are evaluated with the
//! normalized three-term recurrence, carrying a running log-scale so that
//! nodes far in the Gaussian tail (|x| ≳ 38, where `e_0` underflows) still
//! produce correct values for high `n`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};

pub type C64 = Complex64;

const RESCALE: f64 = 1e150;
const LN_RESCALE: f64 = 345.387_763_949_106_8; // 150·ln(10)

/// `π^{-1/4}`, the value of `e_0(0)`.
pub fn pi_quarter_inv() -> f64 {
    PI.powf(-0.25)
}

/// `λ_n = √(2n+1)`.
#[inline]
pub fn lambda(n: usize) -> f64 {
    ((2 * n + 1) as f64).sqrt()
}

/// Precomputed coefficients of `e_{k+1} = x·a_k·e_k − b_k·e_{k−1}`.
#[derive(Debug, Clone)]
pub struct HermiteRecurrence {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl HermiteRecurrence {
    pub fn new(n: usize) -> Self {
        let a = (0..n).map(|k| (2.0 / (k as f64 + 1.0)).sqrt()).collect();
        let b = (0..n).map(|k| (k as f64 / (k as f64 + 1.0)).sqrt()).collect();
        Self { a, b }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Visits `(n, e_n(x))` for `n < self.len()`.
    #[inline]
    pub fn for_each<F: FnMut(usize, f64)>(&self, x: f64, mut f: F) {
        let mut log_scale = -0.5 * x * x;
        let mut prev = 0.0;
        let mut cur = pi_quarter_inv();
        for k in 0..self.a.len() {
            f(k, scaled_value(cur, log_scale));
            let next = x * self.a[k] * cur - self.b[k] * prev;
            prev = cur;
            cur = next;
            if cur.abs() > RESCALE {
                cur /= RESCALE;
                prev /= RESCALE;
                log_scale += LN_RESCALE;
            }
        }
    }

    /// Fills `out[n] = e_n(x)` for `n < out.len()` (at most `self.len()`).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let n = out.len().min(self.len());
        let mut log_scale = -0.5 * x * x;
        let mut prev = 0.0;
        let mut cur = pi_quarter_inv();
        for k in 0..n {
            out[k] = scaled_value(cur, log_scale);
            let next = x * self.a[k] * cur - self.b[k] * prev;
            prev = cur;
            cur = next;
            if cur.abs() > RESCALE {
                cur /= RESCALE;
                prev /= RESCALE;
                log_scale += LN_RESCALE;
            }
        }
    }

    /// `Σ_{n<len} e_n(x)²` returned as `(mantissa, log_factor)` with the sum
    /// equal to `mantissa · exp(log_factor)`.
    fn christoffel_sum(&self, x: f64) -> (f64, f64) {
        let mut log_scale = -0.5 * x * x;
        let mut prev = 0.0;
        let mut cur = pi_quarter_inv();
        let mut sum = 0.0;
        for k in 0..self.a.len() {
            sum += cur * cur;
            let next = x * self.a[k] * cur - self.b[k] * prev;
            prev = cur;
            cur = next;
            if cur.abs() > RESCALE {
                cur /= RESCALE;
                prev /= RESCALE;
                sum /= RESCALE * RESCALE;
                log_scale += LN_RESCALE;
            }
        }
        (sum, 2.0 * log_scale)
    }
}

#[inline]
fn scaled_value(mantissa: f64, log_scale: f64) -> f64 {
    if mantissa == 0.0 {
        0.0
    } else if log_scale > -600.0 {
        mantissa * log_scale.exp()
    } else {
        mantissa.signum() * (mantissa.abs().ln() + log_scale).exp()
    }
}

/// `e_n(x)` for all `n < n_max` at a single point.
pub fn hermite_functions(x: f64, n_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_max];
    HermiteRecurrence::new(n_max).eval_into(x, &mut out);
    out
}

/// Gauss–Hermite rule with weights adjusted by `e^{x²}`, so that
/// `Σ w_k f(x_k) ≈ ∫ f(x) dx` for Gaussian-decaying `f`.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    raw_weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Nodes are the eigenvalues of the Jacobi matrix of the Hermite
    /// polynomials (Golub–Welsch). Weights come from the Christoffel function
    /// `1/Σ_{n<M} e_n(x_k)²`, which equals the Golub–Welsch weight times
    /// `e^{x_k²}` and avoids the underflow of the first eigenvector component.
    pub fn gauss_hermite(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Construction("Gauss–Hermite rule needs M ≥ 1".into()));
        }
        let mut diag = vec![0.0; m];
        let mut off: Vec<f64> = (0..m)
            .map(|i| if i + 1 < m { ((i + 1) as f64 / 2.0).sqrt() } else { 0.0 })
            .collect();
        tridiagonal_eigenvalues(&mut diag, &mut off)?;
        diag.sort_by(|a, b| a.partial_cmp(b).unwrap());

        // The Jacobi matrix has zero diagonal, so the spectrum is symmetric.
        let mut nodes = vec![0.0; m];
        for k in 0..m {
            nodes[k] = 0.5 * (diag[k] - diag[m - 1 - k]);
        }
        if m % 2 == 1 {
            nodes[m / 2] = 0.0;
        }

        let rec = HermiteRecurrence::new(m);
        let (weights, raw_weights): (Vec<f64>, Vec<f64>) = nodes
            .par_iter()
            .map(|&x| {
                let (mant, log_factor) = rec.christoffel_sum(x);
                let w = (-log_factor).exp() / mant;
                let raw = (-log_factor - x * x).exp() / mant;
                (w, raw)
            })
            .unzip();
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Construction(format!(
                "non-finite Gauss–Hermite weight for M = {m}"
            )));
        }
        Ok(Self { nodes, weights, raw_weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights of the rule for `∫ f(x) e^{-x²} dx`.
    pub fn raw_weights(&self) -> &[f64] {
        &self.raw_weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ_k w_k f(x_k)`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL with Wilkinson
/// shifts. `off[i]` couples rows `i` and `i+1`; the last entry is ignored.
/// On return `diag` holds the (unsorted) eigenvalues.
fn tridiagonal_eigenvalues(diag: &mut [f64], off: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if n <= 1 {
        return Ok(());
    }
    off[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Construction(format!(
                    "QL iteration did not converge for eigenvalue {l} of {n}"
                )));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

/// Hermite function values on a quadrature grid.
#[derive(Debug, Clone)]
pub struct BasisTable {
    grid: QuadratureGrid,
    n_max: usize,
    /// Row-major `n_max × M`: `values[n·M + k] = e_n(x_k)`.
    values: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl BasisTable {
    pub fn new(n_max: usize, grid: QuadratureGrid) -> Self {
        let m = grid.len();
        if m < 2 * n_max + 1 {
            log::warn!(
                "basis with n_max = {n_max} on {m} nodes: quadrature does not integrate all products exactly"
            );
        }
        let rec = HermiteRecurrence::new(n_max);
        let columns: Vec<Vec<f64>> = grid
            .nodes()
            .par_iter()
            .map(|&x| {
                let mut col = vec![0.0; n_max];
                rec.eval_into(x, &mut col);
                col
            })
            .collect();
        let mut values = vec![0.0; n_max * m];
        for (k, col) in columns.iter().enumerate() {
            for (n, v) in col.iter().enumerate() {
                values[n * m + k] = *v;
            }
        }
        let eigenvalues = (0..n_max).map(lambda).collect();
        Self { grid, n_max, values, eigenvalues }
    }

    /// Basis with `M = oversample·n_max` Gauss–Hermite nodes.
    pub fn with_oversampling(n_max: usize, oversample: usize) -> Result<Self> {
        let grid = QuadratureGrid::gauss_hermite((oversample * n_max).max(1))?;
        Ok(Self::new(n_max, grid))
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    #[inline]
    pub fn row(&self, n: usize) -> &[f64] {
        let m = self.grid.len();
        &self.values[n * m..(n + 1) * m]
    }

    #[inline]
    pub fn value(&self, n: usize, k: usize) -> f64 {
        self.values[n * self.grid.len() + k]
    }

    /// `max_{m,n} |Σ_k w_k e_m(x_k) e_n(x_k) − δ_{mn}|`.
    pub fn gram_error(&self) -> f64 {
        let w = self.grid.weights();
        (0..self.n_max)
            .into_par_iter()
            .map(|a| {
                let ra = self.row(a);
                let mut worst: f64 = 0.0;
                for b in 0..=a {
                    let rb = self.row(b);
                    let g: f64 = ra.iter().zip(rb).zip(w).map(|((x, y), w)| x * y * w).sum();
                    let target = if a == b { 1.0 } else { 0.0 };
                    worst = worst.max((g - target).abs());
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// A function represented by its coefficients in the Hermite basis.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteState {
    coeffs: Vec<C64>,
}

impl HermiteState {
    pub fn new(coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(domain("a Hermite state needs at least one mode"));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(domain("non-finite Hermite coefficient"));
        }
        Ok(Self { coeffs })
    }

    pub(crate) fn from_vec_unchecked(coeffs: Vec<C64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(n_modes: usize) -> Self {
        Self { coeffs: vec![C64::new(0.0, 0.0); n_modes.max(1)] }
    }

    /// The single mode `e_k` in an `n_modes`-dimensional state.
    pub fn unit(n_modes: usize, k: usize) -> Self {
        let mut s = Self::zeros(n_modes.max(k + 1));
        s.coeffs[k] = C64::new(1.0, 0.0);
        s
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<C64> {
        self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// `Σ |c_n|²`.
    pub fn mass(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.mass().sqrt()
    }

    /// Truncates or zero-pads to `n_modes`.
    pub fn resized(&self, n_modes: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(n_modes.max(1), C64::new(0.0, 0.0));
        Self { coeffs }
    }

    pub fn scaled(&self, alpha: C64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * alpha).collect() }
    }

    /// Componentwise `self − other` after padding to the longer length.
    pub fn sub(&self, other: &Self) -> Self {
        let n = self.n_modes().max(other.n_modes());
        let zero = C64::new(0.0, 0.0);
        let coeffs = (0..n)
            .map(|i| {
                self.coeffs.get(i).copied().unwrap_or(zero)
                    - other.coeffs.get(i).copied().unwrap_or(zero)
            })
            .collect();
        Self { coeffs }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.sub(&other.scaled(C64::new(-1.0, 0.0)))
    }

    /// Exact linear flow `e^{−itH}`: `c_n ↦ e^{−i(2n+1)t} c_n`.
    pub fn linear_flow(&self, t: f64) -> Self {
        let mut out = self.clone();
        apply_linear_phases(&mut out.coeffs, t);
        out
    }

    /// Pointwise evaluation `Σ c_n e_n(y)` at arbitrary points.
    pub fn eval_at(&self, points: &[f64]) -> Vec<C64> {
        let rec = HermiteRecurrence::new(self.n_modes());
        points
            .par_iter()
            .map(|&y| {
                let mut acc = C64::new(0.0, 0.0);
                rec.for_each(y, |n, e| acc += self.coeffs[n] * e);
                acc
            })
            .collect()
    }
}

pub(crate) fn apply_linear_phases(coeffs: &mut [C64], t: f64) {
    for (n, c) in coeffs.iter_mut().enumerate() {
        let phase = -((2 * n + 1) as f64) * t;
        *c *= C64::from_polar(1.0, phase);
    }
}

/// Grid values `Σ_n c_n e_n(x_k)`.
pub fn to_grid(u: &HermiteState, basis: &BasisTable) -> Result<Vec<C64>> {
    if u.n_modes() > basis.n_max() {
        return Err(Error::Dimension { expected: basis.n_max(), got: u.n_modes() });
    }
    Ok(to_grid_slice(u.coeffs(), basis))
}

pub(crate) fn to_grid_slice(coeffs: &[C64], basis: &BasisTable) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); basis.n_nodes()];
    for (n, c) in coeffs.iter().enumerate() {
        if *c == C64::new(0.0, 0.0) {
            continue;
        }
        for (o, e) in out.iter_mut().zip(basis.row(n)) {
            *o += c * e;
        }
    }
    out
}

/// Quadrature projection `c_n = Σ_k w_k v_k e_n(x_k)` for `n < n_modes`.
pub fn to_coeffs(values: &[C64], basis: &BasisTable, n_modes: usize) -> Result<HermiteState> {
    if values.len() != basis.n_nodes() {
        return Err(Error::Dimension { expected: basis.n_nodes(), got: values.len() });
    }
    if n_modes > basis.n_max() || n_modes == 0 {
        return Err(Error::Dimension { expected: basis.n_max(), got: n_modes });
    }
    let weighted: Vec<C64> =
        values.iter().zip(basis.grid().weights()).map(|(v, w)| v * w).collect();
    let mut coeffs = vec![C64::new(0.0, 0.0); n_modes];
    project_into(&weighted, basis, &mut coeffs);
    Ok(HermiteState { coeffs })
}

/// `out[n] = Σ_k weighted_k e_n(x_k)`, for already weight-multiplied values.
pub(crate) fn project_into(weighted: &[C64], basis: &BasisTable, out: &mut [C64]) {
    for (n, o) in out.iter_mut().enumerate() {
        let row = basis.row(n);
        let mut re = 0.0;
        let mut im = 0.0;
        for (v, e) in weighted.iter().zip(row) {
            re += v.re * e;
            im += v.im * e;
        }
        *o = C64::new(re, im);
    }
}

/// Closed-form Mehler kernel `Σ_n α^n e_n(x) e_n(y)` for `0 ≤ α < 1`.
pub fn mehler_kernel(x: f64, y: f64, alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(domain(format!("Mehler kernel needs 0 ≤ α < 1, got {alpha}")));
    }
    let sum = x + y;
    let diff = x - y;
    let expo = -(1.0 - alpha) / (1.0 + alpha) * sum * sum / 4.0
        - (1.0 + alpha) / (1.0 - alpha) * diff * diff / 4.0;
    Ok(expo.exp() / (PI * (1.0 - alpha * alpha)).sqrt())
}

/// Truncated series `Σ_{n<n_terms} α^n e_n(x) e_n(y)`.
pub fn mehler_series(x: f64, y: f64, alpha: f64, n_terms: usize) -> f64 {
    let ex = hermite_functions(x, n_terms);
    let ey = hermite_functions(y, n_terms);
    let mut pow = 1.0;
    let mut acc = 0.0;
    for (a, b) in ex.iter().zip(&ey) {
        acc += pow * a * b;
        pow *= alpha;
    }
    acc
}

/// Which eigenfunction norm [`eigenfunction_bound_scan`] computes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundKind {
    L4,
    Linf,
    /// `‖e_n / |x|^γ‖_{L⁴}` with `γ < 1/4`.
    WeightedL4 { gamma: f64 },
}

/// Quadrature norms of `e_n` for every `n` in `n_list`.
///
/// The node at `x = 0` (odd `M`) is dropped for the weighted kind; the bias
/// this introduces vanishes as `M` grows.
pub fn eigenfunction_bound_scan(
    kind: BoundKind,
    n_list: &[usize],
    grid: &QuadratureGrid,
) -> Result<Vec<(usize, f64)>> {
    if let BoundKind::WeightedL4 { gamma } = kind {
        if gamma >= 0.25 {
            return Err(domain(format!("weighted L⁴ scan needs γ < 1/4, got {gamma}")));
        }
    }
    if n_list.is_empty() {
        return Ok(Vec::new());
    }
    let n_top = *n_list.iter().max().unwrap();
    if grid.len() < 4 * n_top {
        log::warn!(
            "eigenfunction scan up to n = {n_top} on {} nodes: oscillations under-resolved",
            grid.len()
        );
    }
    // slot[n] = position of n in n_list, for quick lookup inside the recurrence
    let mut slot = vec![usize::MAX; n_top + 1];
    for (i, &n) in n_list.iter().enumerate() {
        slot[n] = i;
    }
    let rec = HermiteRecurrence::new(n_top + 1);
    let len = n_list.len();
    let acc = grid
        .nodes()
        .par_iter()
        .zip(grid.weights().par_iter())
        .fold(
            || vec![0.0; len],
            |mut acc, (&x, &w)| {
                let weight = match kind {
                    BoundKind::WeightedL4 { gamma } => {
                        if x.abs() < 1e-300 {
                            return acc;
                        }
                        w * x.abs().powf(-4.0 * gamma)
                    }
                    _ => w,
                };
                rec.for_each(x, |n, e| {
                    let i = slot[n];
                    if i != usize::MAX {
                        match kind {
                            BoundKind::Linf => acc[i] = f64::max(acc[i], e.abs()),
                            _ => acc[i] += weight * e.powi(4),
                        }
                    }
                });
                acc
            },
        )
        .reduce(
            || vec![0.0; len],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = match kind {
                        BoundKind::Linf => x.max(y),
                        _ => *x + y,
                    };
                }
                a
            },
        );
    Ok(n_list
        .iter()
        .zip(acc)
        .map(|(&n, v)| match kind {
            BoundKind::Linf => (n, v),
            _ => (n, v.powf(0.25)),
        })
        .collect())
}
