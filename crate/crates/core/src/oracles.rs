//! Reference values that do not go through the discrete schemes: closed forms,
//! adaptive quadrature of the defining integral, the Mittag-Leffler function and
//! separable eigenmode solutions of the fractional heat equation.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fracops::{gamma, gamma_unchecked, ln_gamma, FracError, FractionalOrder};
use crate::geometry::{BoundaryKind, DomainGeometry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Frac(#[from] FracError),
    #[error("power-rule exponent {0} must be positive")]
    NonPositiveBeta(f64),
    #[error("need t > a (got t = {t}, a = {a})")]
    BadInterval { t: f64, a: f64 },
    #[error("quadrature tolerance {0} must be positive")]
    BadTolerance(f64),
    #[error("adaptive quadrature did not converge after {intervals} subintervals (error estimate {estimate:e})")]
    Divergence { intervals: usize, estimate: f64 },
    #[error("Mittag-Leffler argument {z} outside the supported range z ≤ 30")]
    MittagLefflerRange { z: f64 },
    #[error("derivative of `{name}` disagrees with finite differences at t = {t}: {analytic} vs {numeric}")]
    DerivativeMismatch {
        name: String,
        t: f64,
        analytic: f64,
        numeric: f64,
    },
    #[error("parameter `{name}` = {value} out of range")]
    BadParameter { name: &'static str, value: f64 },
    #[error("eigenmode needs a nonzero wavenumber")]
    ZeroMode,
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar function of time paired with its exact derivative.
#[derive(Clone)]
pub struct SmoothFunction1D {
    name: String,
    f: ScalarFn,
    df: ScalarFn,
}

impl fmt::Debug for SmoothFunction1D {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("SmoothFunction1D")
            .field("name", &self.name)
            .finish()
    }
}

impl SmoothFunction1D {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            df: Arc::new(df),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        (self.df)(t)
    }

    /// Compares `f'` with central differences at `samples` random points of
    /// `[0.05 T, T]`, relative tolerance `1e-6`.
    pub fn check_derivative(
        &self,
        horizon: f64,
        samples: usize,
        seed: u64,
    ) -> Result<(), OracleError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let t = rng.gen_range(0.05 * horizon..=horizon);
            let h = 1e-5 * t.max(1e-3);
            let numeric = (self.value(t + h) - self.value(t - h)) / (2.0 * h);
            let analytic = self.derivative(t);
            if (numeric - analytic).abs() > 1e-6 * analytic.abs().max(1.0) {
                return Err(OracleError::DerivativeMismatch {
                    name: self.name.clone(),
                    t,
                    analytic,
                    numeric,
                });
            }
        }
        Ok(())
    }
}

/// Ten smooth test functions on `[0, ∞)` with closed-form derivatives.
pub fn smooth_catalog() -> Vec<SmoothFunction1D> {
    vec![
        SmoothFunction1D::new("t", |t| t, |_| 1.0),
        SmoothFunction1D::new("t^2", |t| t * t, |t| 2.0 * t),
        SmoothFunction1D::new("t^3 - t", |t| t * t * t - t, |t| 3.0 * t * t - 1.0),
        SmoothFunction1D::new("t^1.5", |t: f64| t.powf(1.5), |t: f64| 1.5 * t.sqrt()),
        SmoothFunction1D::new("sin t", f64::sin, f64::cos),
        SmoothFunction1D::new(
            "cos 2t",
            |t: f64| (2.0 * t).cos(),
            |t: f64| -2.0 * (2.0 * t).sin(),
        ),
        SmoothFunction1D::new("exp t", f64::exp, f64::exp),
        SmoothFunction1D::new(
            "exp(-2t)",
            |t: f64| (-2.0 * t).exp(),
            |t: f64| -2.0 * (-2.0 * t).exp(),
        ),
        SmoothFunction1D::new("ln(1+t)", f64::ln_1p, |t| 1.0 / (1.0 + t)),
        SmoothFunction1D::new(
            "1/(1+t^2)",
            |t| 1.0 / (1.0 + t * t),
            |t| -2.0 * t / (1.0 + t * t).powi(2),
        ),
    ]
}

/// Caputo derivative of `(t - a)^β`: `Γ(β+1)/Γ(β-α+1) (t-a)^{β-α}`.
pub fn power_rule_caputo(
    order: FractionalOrder,
    beta: f64,
    t: f64,
    a: f64,
) -> Result<f64, OracleError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(OracleError::NonPositiveBeta(beta));
    }
    if !(t > a) {
        return Err(OracleError::BadInterval { t, a });
    }
    let alpha = order.alpha();
    let ratio = if beta + 1.0 <= 171.0 {
        gamma(beta + 1.0)? / gamma(beta - alpha + 1.0)?
    } else {
        (ln_gamma(beta + 1.0)? - ln_gamma(beta - alpha + 1.0)?).exp()
    };
    Ok(ratio * (t - a).powf(beta - alpha))
}

/// `1/Γ(1-α) ∫_0^t f'(s)(t-s)^{-α} ds` by adaptive Gauss-Kronrod quadrature.
///
/// The substitution `s = t - σ^{1/(1-α)}` turns the weakly singular kernel into
/// the constant `1/(1-α)`, leaving `f'(t - σ^{1/(1-α)})` on `[0, t^{1-α}]`.
pub fn caputo_quadrature(
    f: &SmoothFunction1D,
    order: FractionalOrder,
    t: f64,
    tol: f64,
) -> Result<f64, OracleError> {
    if order.is_classical() {
        return Err(FracError::ClassicalOrder.into());
    }
    if !(t > 0.0) {
        return Err(FracError::NonPositiveTime(t).into());
    }
    if !(tol > 0.0) {
        return Err(OracleError::BadTolerance(tol));
    }
    let alpha = order.alpha();
    let e = 1.0 / (1.0 - alpha);
    let upper = t.powf(1.0 - alpha);
    let integrand = |sigma: f64| f.derivative((t - sigma.powf(e)).max(0.0));
    let g = gamma_unchecked(1.0 - alpha);
    // Tolerance on the integral in the substituted variable, rescaled to the result.
    let value = integrate(integrand, 0.0, upper, tol * g * (1.0 - alpha), 0.0, 4000)?;
    Ok(value * e / g)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Weights of the embedded 7-point Gauss rule on GK_NODES[1], [3], [5], [7].
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kronrod = K15_WEIGHTS[7] * f(c);
    let mut gauss = G7_WEIGHTS[3] * f(c);
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let pair = f(c - x) + f(c + x);
        kronrod += K15_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive G7-K15 quadrature on `[a, b]`.
///
/// Bisects the subinterval with the largest error estimate until the summed
/// estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<f64, OracleError> {
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gk15(&f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        if parts.len() >= max_intervals || !err.is_finite() {
            return Err(OracleError::Divergence {
                intervals: parts.len(),
                estimate: err,
            });
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(OracleError::Divergence {
                intervals: parts.len() + 1,
                estimate: err,
            });
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// Mittag-Leffler function `E_α(z) = Σ_k z^k / Γ(αk + 1)` for real `z ≤ 30`.
///
/// * `α = 1`: `exp(z)`.
/// * `-1 ≤ z ≤ 30`: the power series with compensated summation. Terms are
///   bounded by `max(1, |z|^k/Γ(αk+1))`, so there is no cancellation for
///   `z ≥ -1`.
/// * `z < -1`: the Laplace-type representation
///   `E_α(-x) = sin(απ) x / (πα) ∫_0^∞ e^{-v^{1/α}} / (v² + 2vx cos(απ) + x²) dv`,
///   which is positive and cancellation-free; for large `x` the series would
///   lose every significant digit.
pub fn mittag_leffler(order: FractionalOrder, z: f64) -> Result<f64, OracleError> {
    if !(z <= 30.0) {
        return Err(OracleError::MittagLefflerRange { z });
    }
    if order.is_classical() {
        return Ok(z.exp());
    }
    if z == 0.0 {
        return Ok(1.0);
    }
    if z >= -1.0 {
        ml_series(order.alpha(), z)
    } else {
        ml_laplace(order.alpha(), -z)
    }
}

fn ml_series(alpha: f64, z: f64) -> Result<f64, OracleError> {
    let ln_abs = z.abs().ln();
    let mut sum = 1.0;
    let mut comp = 0.0;
    let mut prev = f64::INFINITY;
    for k in 1..100_000usize {
        let kf = k as f64;
        let mag = (kf * ln_abs - ln_gamma(alpha * kf + 1.0)?).exp();
        let term = if z < 0.0 && k % 2 == 1 { -mag } else { mag };
        // Neumaier summation.
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
        if mag < prev && mag <= 1e-17 * (sum + comp).abs() {
            return Ok(sum + comp);
        }
        prev = mag;
    }
    Err(OracleError::Divergence {
        intervals: 100_000,
        estimate: prev,
    })
}

fn ml_laplace(alpha: f64, x: f64) -> Result<f64, OracleError> {
    let (s, c) = (alpha * PI).sin_cos();
    let inv = 1.0 / alpha;
    // (v + x cos)² + (x sin)² avoids cancellation near the peak when α → 1.
    let integrand = |v: f64| (-v.powf(inv)).exp() / ((v + x * c).powi(2) + (x * s).powi(2));
    // e^{-v^{1/α}} underflows beyond v = 745^α.
    let v_max = 745f64.powf(alpha);
    // For α > 1/2 the denominator has a sharp minimum at v = -x cos(απ).
    let peak = (-x * c).clamp(0.0, v_max);
    let mut total = 0.0;
    for (lo, hi) in [(0.0, peak), (peak, v_max)] {
        if hi > lo {
            total += integrate(integrand, lo, hi, 0.0, 1e-14, 20_000)?;
        }
    }
    Ok(s * x / (PI * alpha) * total)
}

/// Separable Laplacian eigenfunction on an interval or rectangle:
/// products of `sin(kπx/L)` (Dirichlet) or `cos(kπx/L)` (Neumann).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenMode {
    geometry: DomainGeometry,
    wavenumbers: [u32; 2],
    boundary: BoundaryKind,
}

impl EigenMode {
    pub fn new(
        geometry: DomainGeometry,
        wavenumbers: [u32; 2],
        boundary: BoundaryKind,
    ) -> Result<Self, OracleError> {
        let active = &wavenumbers[..geometry.dim()];
        match boundary {
            BoundaryKind::DirichletStrong if active.contains(&0) => {
                return Err(OracleError::ZeroMode)
            }
            BoundaryKind::NeumannViscosity if active.iter().all(|&k| k == 0) => {
                return Err(OracleError::ZeroMode)
            }
            _ => {}
        }
        Ok(Self {
            geometry,
            wavenumbers,
            boundary,
        })
    }

    /// Lowest Dirichlet mode `Π sin(πx_i/L_i)`.
    pub fn dirichlet_fundamental(geometry: DomainGeometry) -> Self {
        Self {
            geometry,
            wavenumbers: [1, 1],
            boundary: BoundaryKind::DirichletStrong,
        }
    }

    pub fn boundary(&self) -> BoundaryKind {
        self.boundary
    }

    pub fn geometry(&self) -> &DomainGeometry {
        &self.geometry
    }

    fn freq(&self, axis: usize) -> f64 {
        self.wavenumbers[axis] as f64 * PI / self.geometry.length(axis)
    }

    pub fn eigenvalue(&self) -> f64 {
        (0..self.geometry.dim()).map(|a| self.freq(a).powi(2)).sum()
    }

    pub fn phi(&self, x: [f64; 2]) -> f64 {
        (0..self.geometry.dim())
            .map(|a| {
                let arg = self.freq(a) * x[a];
                match self.boundary {
                    BoundaryKind::DirichletStrong => arg.sin(),
                    BoundaryKind::NeumannViscosity => arg.cos(),
                }
            })
            .product()
    }
}

/// `E_α(-λ t^α) φ(x)`, the solution of `∂_t^α u - Δu = 0` started from `φ`.
pub fn exact_eigen_solution(
    mode: &EigenMode,
    order: FractionalOrder,
    t: f64,
    x: [f64; 2],
) -> Result<f64, OracleError> {
    if !(t >= 0.0) {
        return Err(OracleError::BadParameter {
            name: "t",
            value: t,
        });
    }
    let phi = mode.phi(x);
    if t == 0.0 {
        return Ok(phi);
    }
    let z = -mode.eigenvalue() * t.powf(order.alpha());
    Ok(mittag_leffler(order, z)? * phi)
}

/// Truncated power barrier `ψ_λ(t) = a/(2λ^α) (t - T + λ)^α` on `[T-λ, T]`, zero before.
pub fn psi_lambda(a: f64, lam: f64, order: FractionalOrder, horizon: f64, t: f64) -> f64 {
    let alpha = order.alpha();
    let s = t - horizon + lam;
    if s <= 0.0 {
        0.0
    } else {
        a / (2.0 * lam.powf(alpha)) * s.powf(alpha)
    }
}

/// Closed form of `K_(0,λ)[ψ_λ](T) = a/(2λ^α) (Γ(1+α) - 1/Γ(1-α))`.
pub fn psi_lambda_kernel_value(
    a: f64,
    lam: f64,
    order: FractionalOrder,
) -> Result<f64, OracleError> {
    if order.is_classical() {
        return Err(FracError::ClassicalOrder.into());
    }
    if !(a > 0.0) {
        return Err(OracleError::BadParameter {
            name: "a",
            value: a,
        });
    }
    if !(lam > 0.0) {
        return Err(OracleError::BadParameter {
            name: "lambda",
            value: lam,
        });
    }
    let alpha = order.alpha();
    Ok(a / (2.0 * lam.powf(alpha)) * psi_bracket(order))
}

/// `Γ(1+α) - 1/Γ(1-α)`, positive on `(0, 1)`.
pub fn psi_bracket(order: FractionalOrder) -> f64 {
    let alpha = order.alpha();
    gamma_unchecked(1.0 + alpha) - 1.0 / gamma_unchecked(1.0 - alpha)
}
