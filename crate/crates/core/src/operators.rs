//! Degenerate elliptic nonlinearities `F(t, x, w, p, X)` and their monotone
//! finite-difference discretizations.
//!
//! Conventions:
//!
//! * `Laplacian { diffusion: a }`: `F = -a tr X`.
//! * `Pucci { theta_minus, theta_plus }`: `F = -M⁻(X)` with
//!   `M⁻(X) = θ⁻ Σ_{λ>0} λ + θ⁺ Σ_{λ<0} λ = min_{θ⁻I ≤ A ≤ θ⁺I} tr(AX)` over the
//!   eigenvalues `λ` of `X`. For `θ = (1, 2)` and `X = diag(1, -1)` this is `1`.
//! * `Eikonal { speed: c }`: `F = c |p|`.
//! * `Bellman { controls }`: `F = max_k (-Σ_i a_ki X_ii + b_k·p + c_k w - f_k)`,
//!   diagonal diffusions only so the upwind stencil stays monotone.
//! * `ReactionShifted { base, gamma }`: `F_base + γ w`.
//!
//! All catalog entries are independent of `(t, x)`, which makes the uniform
//! continuity requirements near the boundary and the modulus condition on
//! `F(y, Y) - F(x, X)` hold trivially. Only degenerate ellipticity and
//! monotonicity in `w` are sample-checked at runtime.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fracops::{gamma_unchecked, TimeOrder};
use crate::geometry::DomainGeometry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("Hessian is not symmetric: X[0][1] = {0}, X[1][0] = {1}")]
    NonSymmetric(f64, f64),
    #[error("dimension mismatch: gradient has {grad} entries, Hessian is {hess}×{hess}")]
    Shape { grad: usize, hess: usize },
    #[error("invalid operator parameter: {0}")]
    BadParameter(String),
    #[error("two-dimensional Pucci stencil needs equal spacings (got {0} and {1})")]
    AnisotropicPucci(f64, f64),
}

/// Symmetric `d × d` matrix, `d ∈ {1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymMatrix {
    dim: usize,
    xx: f64,
    xy: f64,
    yy: f64,
}

impl SymMatrix {
    pub fn scalar(xx: f64) -> Self {
        Self {
            dim: 1,
            xx,
            xy: 0.0,
            yy: 0.0,
        }
    }

    pub fn new2(xx: f64, xy: f64, yy: f64) -> Self {
        Self { dim: 2, xx, xy, yy }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            xx: 0.0,
            xy: 0.0,
            yy: 0.0,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, OperatorError> {
        match rows.len() {
            1 if rows[0].len() == 1 => Ok(Self::scalar(rows[0][0])),
            2 if rows[0].len() == 2 && rows[1].len() == 2 => {
                let (a, b) = (rows[0][1], rows[1][0]);
                if (a - b).abs() > 1e-14 * (1.0 + a.abs().max(b.abs())) {
                    return Err(OperatorError::NonSymmetric(a, b));
                }
                Ok(Self::new2(rows[0][0], 0.5 * (a + b), rows[1][1]))
            }
            n => Err(OperatorError::Shape { grad: n, hess: n }),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diag(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.xx
        } else {
            self.yy
        }
    }

    pub fn off_diag(&self) -> f64 {
        self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Eigenvalues; only the first `dim` entries are meaningful.
    pub fn eigenvalues(&self) -> [f64; 2] {
        if self.dim == 1 {
            return [self.xx, 0.0];
        }
        let mean = 0.5 * (self.xx + self.yy);
        let r = (0.5 * (self.xx - self.yy)).hypot(self.xy);
        [mean + r, mean - r]
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            xx: self.xx + other.xx,
            xy: self.xy + other.xy,
            yy: self.yy + other.yy,
        }
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            xx: s * self.xx,
            xy: s * self.xy,
            yy: s * self.yy,
        }
    }
}

/// One linear operator of a Bellman family, `-Σ a_i X_ii + b·p + c w - f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearControl {
    pub diffusion: [f64; 2],
    #[serde(default)]
    pub drift: [f64; 2],
    #[serde(default)]
    pub reaction: f64,
    #[serde(default)]
    pub source: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EllipticOperator {
    Laplacian {
        diffusion: f64,
    },
    Pucci {
        theta_minus: f64,
        theta_plus: f64,
    },
    Eikonal {
        speed: f64,
    },
    Bellman {
        controls: Vec<LinearControl>,
    },
    ReactionShifted {
        base: Box<EllipticOperator>,
        gamma: f64,
    },
}

/// Lipschitz constants of `F` in `p` (Euclidean norm), `X` (operator norm) and `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorBounds {
    pub lip_p: f64,
    pub lip_x: f64,
    pub lip_w: f64,
}

impl EllipticOperator {
    pub fn laplacian() -> Self {
        EllipticOperator::Laplacian { diffusion: 1.0 }
    }

    pub fn name(&self) -> String {
        match self {
            EllipticOperator::Laplacian { .. } => "laplacian".into(),
            EllipticOperator::Pucci { .. } => "pucci".into(),
            EllipticOperator::Eikonal { .. } => "eikonal".into(),
            EllipticOperator::Bellman { .. } => "bellman".into(),
            EllipticOperator::ReactionShifted { base, .. } => format!("{}+reaction", base.name()),
        }
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        let bad = |msg: String| Err(OperatorError::BadParameter(msg));
        match self {
            EllipticOperator::Laplacian { diffusion }
                if !(*diffusion >= 0.0 && diffusion.is_finite()) =>
            {
                bad(format!("laplacian diffusion {diffusion} must be ≥ 0"))
            }
            EllipticOperator::Pucci {
                theta_minus,
                theta_plus,
            } if !(*theta_minus > 0.0 && theta_minus <= theta_plus && theta_plus.is_finite()) => {
                bad(format!(
                    "pucci needs 0 < θ⁻ ≤ θ⁺ (got {theta_minus}, {theta_plus})"
                ))
            }
            EllipticOperator::Eikonal { speed } if !(*speed >= 0.0 && speed.is_finite()) => {
                bad(format!("eikonal speed {speed} must be ≥ 0"))
            }
            EllipticOperator::Bellman { controls } => {
                if controls.is_empty() {
                    return bad("bellman needs at least one control".into());
                }
                for (k, c) in controls.iter().enumerate() {
                    let finite = c
                        .diffusion
                        .iter()
                        .chain(&c.drift)
                        .chain([&c.reaction, &c.source])
                        .all(|v| v.is_finite());
                    if !finite || c.diffusion.iter().any(|a| *a < 0.0) || c.reaction < 0.0 {
                        return bad(format!(
                            "bellman control {k} needs finite data, diffusion ≥ 0 and reaction ≥ 0"
                        ));
                    }
                }
                Ok(())
            }
            EllipticOperator::ReactionShifted { base, gamma } => {
                if !(*gamma >= 0.0 && gamma.is_finite()) {
                    return bad(format!("reaction shift {gamma} must be ≥ 0"));
                }
                base.validate()
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64, x: [f64; 2], w: f64, p: [f64; 2], m: &SymMatrix) -> f64 {
        let dim = m.dim();
        match self {
            EllipticOperator::Laplacian { diffusion } => -diffusion * m.trace(),
            EllipticOperator::Pucci {
                theta_minus,
                theta_plus,
            } => {
                let ev = m.eigenvalues();
                let lower: f64 = ev[..dim]
                    .iter()
                    .map(|&l| {
                        if l > 0.0 {
                            theta_minus * l
                        } else {
                            theta_plus * l
                        }
                    })
                    .sum();
                -lower
            }
            EllipticOperator::Eikonal { speed } => {
                speed * p[..dim].iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            EllipticOperator::Bellman { controls } => controls
                .iter()
                .map(|c| {
                    (0..dim)
                        .map(|a| -c.diffusion[a] * m.diag(a) + c.drift[a] * p[a])
                        .sum::<f64>()
                        + c.reaction * w
                        - c.source
                })
                .fold(f64::NEG_INFINITY, f64::max),
            EllipticOperator::ReactionShifted { base, gamma } => {
                base.eval(t, x, w, p, m) + gamma * w
            }
        }
    }

    pub fn bounds(&self) -> OperatorBounds {
        match self {
            EllipticOperator::Laplacian { diffusion } => OperatorBounds {
                lip_p: 0.0,
                lip_x: 2.0 * diffusion,
                lip_w: 0.0,
            },
            EllipticOperator::Pucci { theta_plus, .. } => OperatorBounds {
                lip_p: 0.0,
                lip_x: 2.0 * theta_plus,
                lip_w: 0.0,
            },
            EllipticOperator::Eikonal { speed } => OperatorBounds {
                lip_p: *speed,
                lip_x: 0.0,
                lip_w: 0.0,
            },
            EllipticOperator::Bellman { controls } => {
                let mut b = OperatorBounds {
                    lip_p: 0.0,
                    lip_x: 0.0,
                    lip_w: 0.0,
                };
                for c in controls {
                    b.lip_p = b.lip_p.max(c.drift[0].hypot(c.drift[1]));
                    b.lip_x = b.lip_x.max(c.diffusion[0] + c.diffusion[1]);
                    b.lip_w = b.lip_w.max(c.reaction);
                }
                b
            }
            EllipticOperator::ReactionShifted { base, gamma } => {
                let mut b = base.bounds();
                b.lip_w += gamma;
                b
            }
        }
    }

    /// `F(t, x, 0, 0, 0) = 0`, so `u ≡ 0` solves the homogeneous problem.
    pub fn annihilates_zero(&self) -> bool {
        self.eval(0.0, [0.0; 2], 0.0, [0.0; 2], &SymMatrix::zero(2)) == 0.0
    }
}

/// Anything that can be evaluated like an [`EllipticOperator`]; lets the
/// structure checks run on deliberately broken fixtures.
pub trait Nonlinearity: Sync {
    fn eval(&self, t: f64, x: [f64; 2], w: f64, p: [f64; 2], m: &SymMatrix) -> f64;
}

impl Nonlinearity for EllipticOperator {
    fn eval(&self, t: f64, x: [f64; 2], w: f64, p: [f64; 2], m: &SymMatrix) -> f64 {
        EllipticOperator::eval(self, t, x, w, p, m)
    }
}

/// Operators that violate the structure conditions, for exercising the checks.
pub mod fixtures {
    use super::{Nonlinearity, SymMatrix};

    /// `F = +tr X`: increasing in `X`.
    pub struct AntiLaplacian;

    impl Nonlinearity for AntiLaplacian {
        fn eval(&self, _t: f64, _x: [f64; 2], _w: f64, _p: [f64; 2], m: &SymMatrix) -> f64 {
            m.trace()
        }
    }

    /// `F = -tr X - w`: decreasing in `w`.
    pub struct AntiReaction;

    impl Nonlinearity for AntiReaction {
        fn eval(&self, _t: f64, _x: [f64; 2], w: f64, _p: [f64; 2], m: &SymMatrix) -> f64 {
            -m.trace() - w
        }
    }
}

/// Checked entry point: shapes and symmetry are validated, dimension is `p.len()`.
pub fn eval_operator(
    op: &EllipticOperator,
    t: f64,
    x: &[f64],
    w: f64,
    p: &[f64],
    hess: &[Vec<f64>],
) -> Result<f64, OperatorError> {
    let m = SymMatrix::from_rows(hess)?;
    if p.len() != m.dim() {
        return Err(OperatorError::Shape {
            grad: p.len(),
            hess: m.dim(),
        });
    }
    let mut pp = [0.0; 2];
    pp[..p.len()].copy_from_slice(p);
    let mut xx = [0.0; 2];
    for (d, s) in xx.iter_mut().zip(x) {
        *d = *s;
    }
    Ok(op.eval(t, xx, w, pp, &m))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureViolation {
    pub sample: usize,
    pub t: f64,
    pub x: [f64; 2],
    pub w: f64,
    pub p: [f64; 2],
    /// Value that should be the smaller one.
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    pub samples: usize,
    pub violations: Vec<StructureViolation>,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Sample {
    t: f64,
    x: [f64; 2],
    w: f64,
    p: [f64; 2],
    m: SymMatrix,
}

fn random_sample(rng: &mut ChaCha8Rng, dim: usize) -> Sample {
    let t = rng.gen_range(0.0..1.0);
    let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
    let w = rng.gen_range(-2.0..2.0);
    let mut p = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
    let m = if dim == 1 {
        p[1] = 0.0;
        SymMatrix::scalar(rng.gen_range(-3.0..3.0))
    } else {
        SymMatrix::new2(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        )
    };
    Sample { t, x, w, p, m }
}

/// Samples `X ≤ Y = X + P Pᵀ` and flags `F(.., Y) > F(.., X) + 1e-12`.
pub fn check_degenerate_ellipticity(
    f: &dyn Nonlinearity,
    dim: usize,
    samples: usize,
    seed: u64,
) -> StructureReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    for sample in 0..samples {
        let s = random_sample(&mut rng, dim);
        let y = if dim == 1 {
            let q: f64 = rng.gen_range(-2.0..2.0);
            s.m.add(&SymMatrix::scalar(q * q))
        } else {
            let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
            // P Pᵀ for P = [[q0, q1], [q2, q3]].
            let ppt = SymMatrix::new2(
                q[0] * q[0] + q[1] * q[1],
                q[0] * q[2] + q[1] * q[3],
                q[2] * q[2] + q[3] * q[3],
            );
            s.m.add(&ppt)
        };
        let fx = f.eval(s.t, s.x, s.w, s.p, &s.m);
        let fy = f.eval(s.t, s.x, s.w, s.p, &y);
        if fy > fx + 1e-12 {
            violations.push(StructureViolation {
                sample,
                t: s.t,
                x: s.x,
                w: s.w,
                p: s.p,
                lhs: fy,
                rhs: fx,
            });
        }
    }
    StructureReport {
        samples,
        violations,
    }
}

/// Samples `w₁ ≥ w₂` and flags `F(.., w₁, ..) < F(.., w₂, ..) - 1e-12`.
pub fn check_proper(
    f: &dyn Nonlinearity,
    dim: usize,
    samples: usize,
    seed: u64,
) -> StructureReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    for sample in 0..samples {
        let s = random_sample(&mut rng, dim);
        let w1 = s.w + rng.gen_range(0.0..2.0);
        let f1 = f.eval(s.t, s.x, w1, s.p, &s.m);
        let f2 = f.eval(s.t, s.x, s.w, s.p, &s.m);
        if f1 < f2 - 1e-12 {
            violations.push(StructureViolation {
                sample,
                t: s.t,
                x: s.x,
                w: s.w,
                p: s.p,
                lhs: f2,
                rhs: f1,
            });
        }
    }
    StructureReport {
        samples,
        violations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StencilOptions {
    /// Lax-Friedrichs viscosity for eikonal terms; defaults to the speed.
    pub eikonal_viscosity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Kernel {
    Laplacian { a: f64 },
    Pucci { lo: f64, hi: f64 },
    Eikonal { c: f64, theta: f64 },
    Bellman { controls: Vec<LinearControl> },
}

/// Finite-difference residual `S(t, x, u_i, neighbours)` of an operator on a grid.
///
/// Neighbour values are passed in the order of [`offsets`](Self::offsets). In
/// two dimensions the axis neighbours come first: `x-, x+, y-, y+`; the Pucci
/// stencil appends `(-,-), (+,+), (-,+), (+,-)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneStencil {
    op: EllipticOperator,
    geometry: DomainGeometry,
    h: [f64; 2],
    kernel: Kernel,
    reaction: f64,
    offsets: Vec<[isize; 2]>,
}

const AXIS_1D: [[isize; 2]; 2] = [[-1, 0], [1, 0]];
const AXIS_2D: [[isize; 2]; 4] = [[-1, 0], [1, 0], [0, -1], [0, 1]];
const DIAGONALS: [[isize; 2]; 4] = [[-1, -1], [1, 1], [-1, 1], [1, -1]];

pub fn build_monotone_stencil(
    op: &EllipticOperator,
    geometry: &DomainGeometry,
) -> Result<MonotoneStencil, OperatorError> {
    build_monotone_stencil_with(op, geometry, StencilOptions::default())
}

pub fn build_monotone_stencil_with(
    op: &EllipticOperator,
    geometry: &DomainGeometry,
    opts: StencilOptions,
) -> Result<MonotoneStencil, OperatorError> {
    op.validate()?;
    let dim = geometry.dim();
    let h = [
        geometry.spacing(0),
        if dim == 2 { geometry.spacing(1) } else { 1.0 },
    ];
    let mut reaction = 0.0;
    let mut base = op;
    while let EllipticOperator::ReactionShifted { base: b, gamma } = base {
        reaction += gamma;
        base = b;
    }
    let kernel = match base {
        EllipticOperator::Laplacian { diffusion } => Kernel::Laplacian { a: *diffusion },
        EllipticOperator::Pucci {
            theta_minus,
            theta_plus,
        } => {
            if dim == 2 && (h[0] - h[1]).abs() > 1e-12 * h[0] {
                return Err(OperatorError::AnisotropicPucci(h[0], h[1]));
            }
            Kernel::Pucci {
                lo: *theta_minus,
                hi: *theta_plus,
            }
        }
        EllipticOperator::Eikonal { speed } => Kernel::Eikonal {
            c: *speed,
            theta: opts.eikonal_viscosity.unwrap_or(*speed),
        },
        EllipticOperator::Bellman { controls } => Kernel::Bellman {
            controls: controls.clone(),
        },
        EllipticOperator::ReactionShifted { .. } => {
            unreachable!("reaction shifts are peeled above")
        }
    };
    let mut offsets: Vec<[isize; 2]> = if dim == 1 {
        AXIS_1D.to_vec()
    } else {
        AXIS_2D.to_vec()
    };
    if dim == 2 && matches!(kernel, Kernel::Pucci { .. }) {
        offsets.extend_from_slice(&DIAGONALS);
    }
    Ok(MonotoneStencil {
        op: op.clone(),
        geometry: *geometry,
        h,
        kernel,
        reaction,
        offsets,
    })
}

impl MonotoneStencil {
    pub fn operator(&self) -> &EllipticOperator {
        &self.op
    }

    pub fn geometry(&self) -> &DomainGeometry {
        &self.geometry
    }

    pub fn offsets(&self) -> &[[isize; 2]] {
        &self.offsets
    }

    fn dim(&self) -> usize {
        self.geometry.dim()
    }

    /// Truncation order in `h` on smooth data.
    pub fn consistency_order(&self) -> u32 {
        match &self.kernel {
            Kernel::Eikonal { .. } => 1,
            Kernel::Bellman { controls } if controls.iter().any(|c| c.drift != [0.0, 0.0]) => 1,
            _ => 2,
        }
    }

    /// Neighbour values of `node`; off-grid neighbours are mirrored when
    /// `reflect` is set and reported as `None` otherwise.
    pub fn gather(
        &self,
        values: &[f64],
        node: usize,
        reflect: bool,
        out: &mut Vec<f64>,
    ) -> Option<()> {
        out.clear();
        for off in &self.offsets {
            out.push(values[self.geometry.neighbor(node, *off, reflect)?]);
        }
        Some(())
    }

    /// Residual at a node with centre value `u`.
    pub fn residual(&self, t: f64, x: [f64; 2], u: f64, nb: &[f64]) -> f64 {
        let _ = (t, x);
        self.evaluate(u, nb, None).0
    }

    /// Residual, its derivative in `u` and (into `dnb`) in each neighbour value,
    /// taken along the active branch of the max.
    pub fn linearize(
        &self,
        t: f64,
        x: [f64; 2],
        u: f64,
        nb: &[f64],
        dnb: &mut [f64],
    ) -> (f64, f64) {
        let _ = (t, x);
        self.evaluate(u, nb, Some(dnb))
    }

    /// Residual of a sampled grid function at `node`.
    pub fn apply(&self, values: &[f64], t: f64, node: usize, reflect: bool) -> Option<f64> {
        let mut nb = Vec::with_capacity(self.offsets.len());
        self.gather(values, node, reflect, &mut nb)?;
        Some(self.residual(t, self.geometry.coords(node), values[node], &nb))
    }

    fn second_diff(&self, u: f64, nb: &[f64], axis: usize) -> f64 {
        (nb[2 * axis] - 2.0 * u + nb[2 * axis + 1]) / (self.h[axis] * self.h[axis])
    }

    fn evaluate(&self, u: f64, nb: &[f64], mut dnb: Option<&mut [f64]>) -> (f64, f64) {
        let dim = self.dim();
        if let Some(d) = dnb.as_deref_mut() {
            d.iter_mut().for_each(|v| *v = 0.0);
        }
        let (mut s, mut du) = match &self.kernel {
            Kernel::Laplacian { a } => {
                let mut s = 0.0;
                let mut du = 0.0;
                for axis in 0..dim {
                    let h2 = self.h[axis] * self.h[axis];
                    s -= a * self.second_diff(u, nb, axis);
                    du += 2.0 * a / h2;
                    if let Some(d) = dnb.as_deref_mut() {
                        d[2 * axis] = -a / h2;
                        d[2 * axis + 1] = -a / h2;
                    }
                }
                (s, du)
            }
            Kernel::Pucci { lo, hi } => self.pucci(*lo, *hi, u, nb, dnb.as_deref_mut()),
            Kernel::Eikonal { c, theta } => {
                let mut p2 = 0.0;
                let mut p = [0.0; 2];
                for axis in 0..dim {
                    p[axis] = (nb[2 * axis + 1] - nb[2 * axis]) / (2.0 * self.h[axis]);
                    p2 += p[axis] * p[axis];
                }
                let norm = p2.sqrt();
                let mut s = c * norm;
                let mut du = 0.0;
                for axis in 0..dim {
                    let h = self.h[axis];
                    s -= theta * (nb[2 * axis + 1] - 2.0 * u + nb[2 * axis]) / (2.0 * h);
                    du += theta / h;
                    if let Some(d) = dnb.as_deref_mut() {
                        let g = if norm > 0.0 {
                            c * p[axis] / norm / (2.0 * h)
                        } else {
                            0.0
                        };
                        d[2 * axis + 1] = g - theta / (2.0 * h);
                        d[2 * axis] = -g - theta / (2.0 * h);
                    }
                }
                (s, du)
            }
            Kernel::Bellman { controls } => {
                let mut best = f64::NEG_INFINITY;
                let mut best_k = 0;
                for (k, ctl) in controls.iter().enumerate() {
                    let v = self.bellman_branch(ctl, u, nb, None).0;
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                self.bellman_branch(&controls[best_k], u, nb, dnb.as_deref_mut())
            }
        };
        s += self.reaction * u;
        du += self.reaction;
        (s, du)
    }

    fn bellman_branch(
        &self,
        ctl: &LinearControl,
        u: f64,
        nb: &[f64],
        mut dnb: Option<&mut [f64]>,
    ) -> (f64, f64) {
        let mut s = ctl.reaction * u - ctl.source;
        let mut du = ctl.reaction;
        for axis in 0..self.dim() {
            let h = self.h[axis];
            let a = ctl.diffusion[axis];
            s -= a * self.second_diff(u, nb, axis);
            du += 2.0 * a / (h * h);
            let b = ctl.drift[axis];
            let (lo_c, hi_c) = if b >= 0.0 {
                s += b * (u - nb[2 * axis]) / h;
                du += b / h;
                (-b / h, 0.0)
            } else {
                s += b * (nb[2 * axis + 1] - u) / h;
                du -= b / h;
                (0.0, b / h)
            };
            if let Some(d) = dnb.as_deref_mut() {
                d[2 * axis] = -a / (h * h) + lo_c;
                d[2 * axis + 1] = -a / (h * h) + hi_c;
            }
        }
        (s, du)
    }

    /// `max` over policies `-(a₁ E₁ + a₂ E₂)`, `aᵢ ∈ {θ⁻, θ⁺}`, with `(E₁, E₂)` the
    /// second differences along the axes or along the diagonals.
    fn pucci(&self, lo: f64, hi: f64, u: f64, nb: &[f64], dnb: Option<&mut [f64]>) -> (f64, f64) {
        let pick = |e: f64| if -lo * e >= -hi * e { lo } else { hi };
        if self.dim() == 1 {
            let e = self.second_diff(u, nb, 0);
            let a = pick(e);
            let h2 = self.h[0] * self.h[0];
            if let Some(d) = dnb {
                d[0] = -a / h2;
                d[1] = -a / h2;
            }
            return (-a * e, 2.0 * a / h2);
        }
        let h2 = self.h[0] * self.h[0];
        let axis_e = [self.second_diff(u, nb, 0), self.second_diff(u, nb, 1)];
        let diag_e = [
            (nb[4] + nb[5] - 2.0 * u) / (2.0 * h2),
            (nb[6] + nb[7] - 2.0 * u) / (2.0 * h2),
        ];
        let axis_a = [pick(axis_e[0]), pick(axis_e[1])];
        let diag_a = [pick(diag_e[0]), pick(diag_e[1])];
        let axis_v = -(axis_a[0] * axis_e[0] + axis_a[1] * axis_e[1]);
        let diag_v = -(diag_a[0] * diag_e[0] + diag_a[1] * diag_e[1]);
        if axis_v >= diag_v {
            if let Some(d) = dnb {
                d.iter_mut().for_each(|v| *v = 0.0);
                d[0] = -axis_a[0] / h2;
                d[1] = -axis_a[0] / h2;
                d[2] = -axis_a[1] / h2;
                d[3] = -axis_a[1] / h2;
            }
            (axis_v, 2.0 * (axis_a[0] + axis_a[1]) / h2)
        } else {
            if let Some(d) = dnb {
                d.iter_mut().for_each(|v| *v = 0.0);
                d[4] = -diag_a[0] / (2.0 * h2);
                d[5] = -diag_a[0] / (2.0 * h2);
                d[6] = -diag_a[1] / (2.0 * h2);
                d[7] = -diag_a[1] / (2.0 * h2);
            }
            (diag_v, (diag_a[0] + diag_a[1]) / h2)
        }
    }

    /// Upper bound of `∂S/∂u_i` over all states: the quantity the explicit
    /// step must dominate.
    pub fn diagonal_bound(&self) -> f64 {
        let dim = self.dim();
        let inv2: f64 = (0..dim).map(|a| 1.0 / (self.h[a] * self.h[a])).sum();
        let base = match &self.kernel {
            Kernel::Laplacian { a } => 2.0 * a * inv2,
            Kernel::Pucci { hi, .. } => 2.0 * hi * inv2,
            Kernel::Eikonal { theta, .. } => (0..dim).map(|a| theta / self.h[a]).sum(),
            Kernel::Bellman { controls } => controls
                .iter()
                .map(|c| {
                    (0..dim)
                        .map(|a| {
                            2.0 * c.diffusion[a] / (self.h[a] * self.h[a])
                                + c.drift[a].abs() / self.h[a]
                        })
                        .sum::<f64>()
                        + c.reaction
                })
                .fold(0.0, f64::max),
        };
        base + self.reaction
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityViolation {
    pub trial: usize,
    pub neighbour: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub trials: usize,
    pub violations: Vec<MonotonicityViolation>,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Raises one random neighbour value per trial and flags any increase of the residual.
pub fn check_monotonicity(
    stencil: &MonotoneStencil,
    trials: usize,
    seed: u64,
) -> MonotonicityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = stencil.offsets().len();
    let mut violations = Vec::new();
    let mut nb = vec![0.0; k];
    for trial in 0..trials {
        let u = rng.gen_range(-1.0..1.0);
        nb.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let t = rng.gen_range(0.0..1.0);
        let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let before = stencil.residual(t, x, u, &nb);
        let j = rng.gen_range(0..k);
        nb[j] += rng.gen_range(1e-3..1.0);
        let after = stencil.residual(t, x, u, &nb);
        if after > before + 1e-12 * (1.0 + before.abs()) {
            violations.push(MonotonicityViolation {
                trial,
                neighbour: j,
                before,
                after,
            });
        }
    }
    MonotonicityReport { trials, violations }
}

/// Largest explicit time step that keeps the explicit march monotone, with its derivation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CflBound {
    pub tau_max: f64,
    pub diagonal_bound: f64,
    pub derivation: String,
}

/// The explicit update `b₀ uⁿ = (b₀ - b₁) uⁿ⁻¹ - S(uⁿ⁻¹) + Σ_{k≥2} (b_{k-1} - b_k) uⁿ⁻ᵏ + …`
/// has non-negative coefficients iff `b₀ - b₁ ≥ D`, `D` the stencil's
/// [`diagonal_bound`](MonotoneStencil::diagonal_bound). For a single order,
/// `b₀ - b₁ = (2 - 2^{1-α}) / (Γ(2-α) τ^α)`, so
/// `τ ≤ ((2 - 2^{1-α}) / (Γ(2-α) D))^{1/α}`; at `α = 1` this is `τ ≤ 1/D`.
/// Multi-term sums are solved for `τ` by bisection.
pub fn cfl_bound(stencil: &MonotoneStencil, order: &TimeOrder) -> CflBound {
    let d = stencil.diagonal_bound();
    if d <= 0.0 {
        return CflBound {
            tau_max: f64::INFINITY,
            diagonal_bound: d,
            derivation: "stencil has no diagonal dependence; every τ is monotone".into(),
        };
    }
    let gap = |tau: f64| -> f64 {
        let w = order.l1_weights(tau, 2);
        w[0] - w[1]
    };
    let tau_max = match order {
        TimeOrder::Single(o) => {
            let alpha = o.alpha();
            let num = 2.0 - 2f64.powf(1.0 - alpha);
            let g = if o.is_classical() {
                1.0
            } else {
                gamma_unchecked(2.0 - alpha)
            };
            (num / (g * d)).powf(1.0 / alpha)
        }
        TimeOrder::Multi(_) => {
            // gap(τ) is decreasing in τ; bracket then bisect in log space.
            let mut lo = 1e-300f64;
            let mut hi = 1.0f64;
            while gap(hi) >= d {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = (lo * hi).sqrt();
                if gap(mid) >= d {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
    };
    let derivation = format!(
        "explicit step is monotone iff b0 - b1 >= D with D = sup dS/du_i = {d:.6e}; this holds for tau <= {tau_max:.6e}"
    );
    CflBound {
        tau_max,
        diagonal_bound: d,
        derivation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracops::{FractionalOrder, MultiTermOrder};

    fn catalog() -> Vec<EllipticOperator> {
        vec![
            EllipticOperator::laplacian(),
            EllipticOperator::Pucci {
                theta_minus: 1.0,
                theta_plus: 2.0,
            },
            EllipticOperator::Eikonal { speed: 1.0 },
            EllipticOperator::Bellman {
                controls: vec![
                    LinearControl {
                        diffusion: [1.0, 0.5],
                        drift: [0.3, -0.2],
                        reaction: 0.0,
                        source: 0.0,
                    },
                    LinearControl {
                        diffusion: [0.2, 1.0],
                        drift: [-0.5, 0.1],
                        reaction: 1.0,
                        source: 0.0,
                    },
                ],
            },
            EllipticOperator::ReactionShifted {
                base: Box::new(EllipticOperator::Eikonal { speed: 2.0 }),
                gamma: 0.5,
            },
        ]
    }

    #[test]
    fn laplacian_and_pucci_values() {
        let lap = EllipticOperator::laplacian();
        let zero = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(
            eval_operator(&lap, 0.0, &[0.0, 0.0], 0.0, &[0.0, 0.0], &zero).unwrap(),
            0.0
        );
        assert_eq!(
            eval_operator(&lap, 0.0, &[0.0, 0.0], 0.0, &[0.0, 0.0], &id).unwrap(),
            -2.0
        );
        let pucci = EllipticOperator::Pucci {
            theta_minus: 1.0,
            theta_plus: 2.0,
        };
        let x = vec![vec![1.0, 0.0], vec![0.0, -1.0]];
        assert_eq!(
            eval_operator(&pucci, 0.0, &[0.0, 0.0], 0.0, &[0.0, 0.0], &x).unwrap(),
            1.0
        );
        // Rotating the same spectrum leaves the value unchanged.
        let r = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(
            (eval_operator(&pucci, 0.0, &[0.0, 0.0], 0.0, &[0.0, 0.0], &r).unwrap() - 1.0).abs()
                < 1e-15
        );
    }

    #[test]
    fn eval_operator_rejects_bad_input() {
        let lap = EllipticOperator::laplacian();
        let skew = vec![vec![0.0, 1.0], vec![-1.0, 0.0]];
        assert!(matches!(
            eval_operator(&lap, 0.0, &[0.0, 0.0], 0.0, &[0.0, 0.0], &skew),
            Err(OperatorError::NonSymmetric(..))
        ));
        assert!(eval_operator(
            &lap,
            0.0,
            &[0.0],
            0.0,
            &[0.0],
            &[vec![1.0, 0.0], vec![0.0, 1.0]]
        )
        .is_err());
    }

    #[test]
    fn validation() {
        assert!(EllipticOperator::Pucci {
            theta_minus: 2.0,
            theta_plus: 1.0
        }
        .validate()
        .is_err());
        assert!(EllipticOperator::Bellman { controls: vec![] }
            .validate()
            .is_err());
        assert!(EllipticOperator::ReactionShifted {
            base: Box::new(EllipticOperator::laplacian()),
            gamma: -1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn catalog_structure_checks() {
        for op in catalog() {
            for dim in [1, 2] {
                assert!(
                    check_degenerate_ellipticity(&op, dim, 1000, 7).passed(),
                    "{}",
                    op.name()
                );
                assert!(check_proper(&op, dim, 1000, 8).passed(), "{}", op.name());
            }
        }
    }

    #[test]
    fn fixtures_are_caught() {
        assert!(!check_degenerate_ellipticity(&fixtures::AntiLaplacian, 2, 200, 1).passed());
        assert!(!check_proper(&fixtures::AntiReaction, 1, 200, 1).passed());
    }

    #[test]
    fn stencils_are_monotone() {
        let g1 = DomainGeometry::interval(1.0, 10).unwrap();
        let g2 = DomainGeometry::rectangle([1.0, 1.0], [8, 8]).unwrap();
        for op in catalog() {
            for g in [g1, g2] {
                let s = build_monotone_stencil(&op, &g).unwrap();
                assert!(
                    check_monotonicity(&s, 1000, 3).passed(),
                    "{} dim {}",
                    op.name(),
                    g.dim()
                );
            }
        }
    }

    #[test]
    fn central_eikonal_is_not_monotone() {
        let g = DomainGeometry::interval(1.0, 10).unwrap();
        let s = build_monotone_stencil_with(
            &EllipticOperator::Eikonal { speed: 1.0 },
            &g,
            StencilOptions {
                eikonal_viscosity: Some(0.0),
            },
        )
        .unwrap();
        assert!(!check_monotonicity(&s, 1000, 3).passed());
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        let g = DomainGeometry::interval(1.0, 16).unwrap();
        let s = build_monotone_stencil(&EllipticOperator::laplacian(), &g).unwrap();
        let u = g.sample(|x| x[0] * x[0]);
        for node in g.interior_nodes() {
            assert!((s.apply(&u, 0.5, node, false).unwrap() + 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn eikonal_on_distance_profile() {
        let g = DomainGeometry::interval(1.0, 100).unwrap();
        let s = build_monotone_stencil(&EllipticOperator::Eikonal { speed: 1.0 }, &g).unwrap();
        let u = g.sample(|x| (x[0] - 0.505).abs());
        for node in g.interior_nodes() {
            let x = g.coords(node)[0];
            if (x - 0.505).abs() > 0.02 {
                assert!((s.apply(&u, 0.0, node, false).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }

    fn consistency_error(op: &EllipticOperator, cells: usize, dim: usize) -> f64 {
        // Hessian diagonal in the axis basis so the 2D Pucci stencil is consistent.
        let phi = |x: [f64; 2]| {
            (1.3 * x[0]).sin()
                + 0.7 * x[0] * x[0]
                + if dim == 2 {
                    (0.9 * x[1]).cos() - 0.4 * x[1] * x[1]
                } else {
                    0.0
                }
        };
        let grad = |x: [f64; 2]| {
            [
                1.3 * (1.3 * x[0]).cos() + 1.4 * x[0],
                if dim == 2 {
                    -0.9 * (0.9 * x[1]).sin() - 0.8 * x[1]
                } else {
                    0.0
                },
            ]
        };
        let hess = |x: [f64; 2]| {
            let xx = -1.69 * (1.3 * x[0]).sin() + 1.4;
            if dim == 2 {
                SymMatrix::new2(xx, 0.0, -0.81 * (0.9 * x[1]).cos() - 0.8)
            } else {
                SymMatrix::scalar(xx)
            }
        };
        let g = if dim == 1 {
            DomainGeometry::interval(1.0, cells).unwrap()
        } else {
            DomainGeometry::rectangle([1.0, 1.0], [cells, cells]).unwrap()
        };
        let s = build_monotone_stencil(op, &g).unwrap();
        let u = g.sample(phi);
        g.interior_nodes()
            .into_iter()
            .map(|n| {
                let x = g.coords(n);
                let exact = op.eval(0.0, x, u[n], grad(x), &hess(x));
                (s.apply(&u, 0.0, n, false).unwrap() - exact).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn stencil_consistency_rates() {
        for op in catalog() {
            for dim in [1, 2] {
                let e1 = consistency_error(&op, 32, dim);
                let e2 = consistency_error(&op, 64, dim);
                let e3 = consistency_error(&op, 128, dim);
                let r1 = (e1 / e2).log2();
                let r2 = (e2 / e3).log2();
                let s = build_monotone_stencil(&op, &DomainGeometry::interval(1.0, 4).unwrap())
                    .unwrap();
                let want = s.consistency_order() as f64;
                assert!(
                    r1 > want - 0.3 && r2 > want - 0.3,
                    "{} dim {dim}: rates {r1:.2} {r2:.2}",
                    op.name()
                );
            }
        }
    }

    #[test]
    fn cfl_examples() {
        let g = DomainGeometry::interval(1.0, 100).unwrap();
        let s = build_monotone_stencil(&EllipticOperator::laplacian(), &g).unwrap();
        let h = 0.01;
        let c1 = cfl_bound(&s, &TimeOrder::Single(FractionalOrder::classical()));
        assert!((c1.tau_max - h * h / 2.0).abs() < 1e-18);
        let c5 = cfl_bound(&s, &TimeOrder::Single(FractionalOrder::new(0.5).unwrap()));
        let want = ((2.0 - 2f64.sqrt()) / (0.886_226_925_452_758 * 2.0 / (h * h))).powi(2);
        assert!(((c5.tau_max - want) / want).abs() < 1e-12);
        // Multi-term with one unit term reproduces the single-order bound.
        let m = TimeOrder::Multi(MultiTermOrder::single(FractionalOrder::new(0.5).unwrap()));
        assert!(((cfl_bound(&s, &m).tau_max - want) / want).abs() < 1e-9);
    }

    #[test]
    fn cfl_eikonal_scales_like_h_to_one_over_alpha() {
        let o = TimeOrder::Single(FractionalOrder::new(0.5).unwrap());
        let op = EllipticOperator::Eikonal { speed: 1.0 };
        let t1 = cfl_bound(
            &build_monotone_stencil(&op, &DomainGeometry::interval(1.0, 50).unwrap()).unwrap(),
            &o,
        )
        .tau_max;
        let t2 = cfl_bound(
            &build_monotone_stencil(&op, &DomainGeometry::interval(1.0, 100).unwrap()).unwrap(),
            &o,
        )
        .tau_max;
        assert!(((t1 / t2) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let g = DomainGeometry::rectangle([1.0, 1.0], [6, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for op in catalog() {
            let s = build_monotone_stencil(&op, &g).unwrap();
            let k = s.offsets().len();
            for _ in 0..50 {
                let u: f64 = rng.gen_range(-1.0..1.0);
                let nb: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut d = vec![0.0; k];
                let (r, du) = s.linearize(0.0, [0.5, 0.5], u, &nb, &mut d);
                assert_eq!(r, s.residual(0.0, [0.5, 0.5], u, &nb));
                let eps = 1e-7;
                let fd = (s.residual(0.0, [0.5, 0.5], u + eps, &nb) - r) / eps;
                assert!(
                    (fd - du).abs() < 1e-3 * (1.0 + du.abs()),
                    "{}: {fd} vs {du}",
                    op.name()
                );
                assert!(du <= s.diagonal_bound() * (1.0 + 1e-12));
            }
        }
    }
}
