//! Time marching for `∂_t^α u + F = 0` with the L1 history sum and a monotone
//! spatial stencil, explicit sub/supersolution barriers, and the discrete
//! Perron iteration.
//!
//! At step `n` the discrete equation at an active node `i` is
//!
//! ```text
//! b₀ (uⁿ_i − uⁿ⁻¹_i) + Σ_{k=1}^{n-1} b_k (uⁿ⁻ᵏ_i − uⁿ⁻ᵏ⁻¹_i) + S_i(u) = 0,
//! ```
//!
//! with `S` evaluated at `uⁿ` (implicit) or `uⁿ⁻¹` (explicit). Dirichlet runs
//! keep boundary nodes at zero; Neumann runs treat every node as active and
//! close the stencil with mirrored ghost values.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::geometry::BoundaryKind;

use crate::fracops::{gamma_unchecked, FracError, TimeGrid, TimeOrder};
use crate::geometry::{DomainGeometry, GeometryError, GridFunction};
use crate::linalg::{BandedMatrix, LinalgError};
use crate::operators::{
    build_monotone_stencil_with, cfl_bound, CflBound, EllipticOperator, MonotoneStencil,
    OperatorError, StencilOptions,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Frac(#[from] FracError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("initial data has {got} values, the grid has {expected} nodes")]
    InitialLength { expected: usize, got: usize },
    #[error("initial data is not finite at node {0}")]
    InitialNonFinite(usize),
    #[error("Dirichlet initial data must vanish on the boundary; node {node} has {value:e}")]
    InitialBoundary { node: usize, value: f64 },
    #[error("explicit step tau = {tau:e} exceeds the monotone bound {tau_max:e}")]
    Cfl { tau: f64, tau_max: f64 },
    #[error("implicit step {step} did not converge in {iterations} iterations (scaled residual {residual:e}); trace {trace:?}")]
    NoConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },
    #[error("{0}")]
    Barrier(String),
    #[error("barriers are not ordered: lower - upper = {gap:e} at step {step}, node {node}")]
    UnorderedBarriers { step: usize, node: usize, gap: f64 },
    #[error("Perron iteration at step {step} exhausted {sweeps} sweeps (last update {update:e})")]
    PerronBudget {
        step: usize,
        sweeps: usize,
        update: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepping {
    Explicit,
    #[serde(alias = "implicit")]
    ImplicitFixedPoint,
}

/// Nonlinear solve settings for implicit steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Newton stops once `max_i |G_i| / ∂G_i/∂u_i ≤ tol · max(1, ‖u‖∞)`.
    pub tol: f64,
    /// A step that ends above this scaled residual is an error.
    pub accept: f64,
    pub max_iterations: usize,
    pub stencil: StencilOptions,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            accept: 1e-10,
            max_iterations: 60,
            stencil: StencilOptions::default(),
        }
    }
}

/// A fully specified initial-boundary value problem and its discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub geometry: DomainGeometry,
    pub time: TimeGrid,
    pub order: TimeOrder,
    pub operator: EllipticOperator,
    pub boundary: BoundaryKind,
    pub stepping: Stepping,
    pub settings: SolverSettings,
    initial: Vec<f64>,
}

impl ProblemSpec {
    /// Validates the data. Dirichlet initial values within `1e-12` of zero on
    /// the boundary are snapped to exactly zero.
    pub fn new(
        geometry: DomainGeometry,
        time: TimeGrid,
        order: impl Into<TimeOrder>,
        operator: EllipticOperator,
        initial: Vec<f64>,
        boundary: BoundaryKind,
        stepping: Stepping,
    ) -> Result<Self, SolverError> {
        operator.validate()?;
        let mut spec = Self {
            geometry,
            time,
            order: order.into(),
            operator,
            boundary,
            stepping,
            settings: SolverSettings::default(),
            initial: Vec::new(),
        };
        spec.set_initial(initial)?;
        Ok(spec)
    }

    /// Dirichlet problem on `[0, 1]` with `u₀ = sin(πx)` and the Laplacian.
    pub fn fractional_heat(
        alpha: f64,
        horizon: f64,
        nt: usize,
        nx: usize,
    ) -> Result<Self, SolverError> {
        let geometry = DomainGeometry::interval(1.0, nx)?;
        let u0 = geometry.sample(|x| (std::f64::consts::PI * x[0]).sin());
        Self::new(
            geometry,
            TimeGrid::new(horizon, nt)?,
            crate::fracops::FractionalOrder::new(alpha)?,
            EllipticOperator::laplacian(),
            u0,
            BoundaryKind::DirichletStrong,
            Stepping::ImplicitFixedPoint,
        )
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn set_initial(&mut self, mut initial: Vec<f64>) -> Result<(), SolverError> {
        let expected = self.geometry.node_count();
        if initial.len() != expected {
            return Err(SolverError::InitialLength {
                expected,
                got: initial.len(),
            });
        }
        if let Some(i) = initial.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::InitialNonFinite(i));
        }
        if self.boundary == BoundaryKind::DirichletStrong {
            for node in self.geometry.boundary_nodes() {
                if initial[node].abs() > 1e-12 {
                    return Err(SolverError::InitialBoundary {
                        node,
                        value: initial[node],
                    });
                }
                initial[node] = 0.0;
            }
        }
        self.initial = initial;
        Ok(())
    }

    pub fn with_initial(&self, initial: Vec<f64>) -> Result<Self, SolverError> {
        let mut spec = self.clone();
        spec.set_initial(initial)?;
        Ok(spec)
    }

    pub fn with_order(&self, order: impl Into<TimeOrder>) -> Self {
        let mut spec = self.clone();
        spec.order = order.into();
        spec
    }

    pub fn stencil(&self) -> Result<MonotoneStencil, SolverError> {
        Ok(build_monotone_stencil_with(
            &self.operator,
            &self.geometry,
            self.settings.stencil,
        )?)
    }

    /// Whether the stencil mirrors across the boundary.
    pub fn reflect(&self) -> bool {
        self.boundary == BoundaryKind::NeumannViscosity
    }

    /// Nodes carrying an equation: interior nodes (Dirichlet) or all nodes (Neumann).
    pub fn active_nodes(&self) -> Vec<usize> {
        match self.boundary {
            BoundaryKind::DirichletStrong => self.geometry.interior_nodes(),
            BoundaryKind::NeumannViscosity => (0..self.geometry.node_count()).collect(),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.order.l1_weights(self.time.tau(), self.time.steps())
    }
}

/// Viscosity-sense boundary residuals at Neumann boundary nodes for one step.
///
/// With `R` the scheme residual and `B` the one-sided outward normal
/// difference, `E_* = min(R, B)` and `E^* = max(R, B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryOperator {
    pub step: usize,
    /// `max_i E_*`; a discrete subsolution needs this `≤ 0`.
    pub max_lower: f64,
    /// `min_i E^*`; a discrete supersolution needs this `≥ 0`.
    pub min_upper: f64,
    /// `max_i |B_i|`, the normal-derivative defect of the ghost closure.
    pub max_normal: f64,
}

impl BoundaryOperator {
    /// Evaluates `(E_*, E^*)` at every boundary node of slice `n` of `u`.
    pub fn evaluate(
        spec: &ProblemSpec,
        stencil: &MonotoneStencil,
        u: &GridFunction,
        weights: &[f64],
        n: usize,
    ) -> Self {
        let geom = &spec.geometry;
        let mut out = Self {
            step: n,
            max_lower: f64::NEG_INFINITY,
            min_upper: f64::INFINITY,
            max_normal: 0.0,
        };
        for node in geom.boundary_nodes() {
            let r = node_residual(spec, stencil, u, weights, n, node);
            let b = normal_difference(geom, u.slice(n), node);
            out.max_lower = out.max_lower.max(r.min(b));
            out.min_upper = out.min_upper.min(r.max(b));
            out.max_normal = out.max_normal.max(b.abs());
        }
        out
    }
}

/// One-sided difference of `values` along the outward normal at a boundary node.
pub fn normal_difference(geom: &DomainGeometry, values: &[f64], node: usize) -> f64 {
    let Some(normal) = geom.outward_normal(node) else {
        return 0.0;
    };
    let ij = geom.multi_index(node);
    let mut acc = 0.0;
    for axis in 0..geom.dim() {
        if normal[axis] == 0.0 {
            continue;
        }
        let mut inward = ij;
        inward[axis] = if ij[axis] == 0 { 1 } else { ij[axis] - 1 };
        let other = geom.index(inward);
        acc += normal[axis].abs() * (values[node] - values[other]) / geom.spacing(axis);
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: GridFunction,
    /// `max_i |G_i|` after each step (index `n - 1` for step `n`).
    pub residuals: Vec<f64>,
    /// Newton iterations (implicit) or Perron sweeps per step; zeros for explicit.
    pub iterations: Vec<usize>,
    pub weights: Vec<f64>,
    pub order: TimeOrder,
    pub stepping: Stepping,
    pub cfl: Option<CflBound>,
    pub factorizations: usize,
    pub boundary_diagnostics: Vec<BoundaryOperator>,
    pub wall_time: Duration,
}

impl Solution {
    pub fn final_slice(&self) -> &[f64] {
        self.values.slice(self.values.time().steps())
    }
}

/// History sum `Σ_{k=1}^{n-1} b_k (uⁿ⁻ᵏ − uⁿ⁻ᵏ⁻¹)` at one node.
#[inline]
fn history_at(values: &[f64], nodes: usize, weights: &[f64], n: usize, node: usize) -> f64 {
    let mut acc = 0.0;
    for k in 1..n {
        acc += weights[k] * (values[(n - k) * nodes + node] - values[(n - k - 1) * nodes + node]);
    }
    acc
}

/// Discrete residual of the implicit scheme at `(t_n, node)` for a given grid function.
pub fn node_residual(
    spec: &ProblemSpec,
    stencil: &MonotoneStencil,
    u: &GridFunction,
    weights: &[f64],
    n: usize,
    node: usize,
) -> f64 {
    let m = spec.geometry.node_count();
    let values = u.values();
    let t = u.time().node(n);
    let mut caputo = weights[0] * (values[n * m + node] - values[(n - 1) * m + node]);
    caputo += history_at(values, m, weights, n, node);
    let s = stencil
        .apply(u.slice(n), t, node, spec.reflect())
        .expect("active node has all neighbours");
    caputo + s
}

/// Discrete L1 Caputo value `Σ_{k<n} b_k (uⁿ⁻ᵏ − uⁿ⁻ᵏ⁻¹)` at `(t_n, node)`.
pub fn discrete_caputo(u: &GridFunction, weights: &[f64], n: usize, node: usize) -> f64 {
    let m = u.geometry().node_count();
    let values = u.values();
    weights[0] * (values[n * m + node] - values[(n - 1) * m + node])
        + history_at(values, m, weights, n, node)
}

/// Implicit-scheme residuals of `u` at every step `n ≥ 1` and active node,
/// stored time-major as `(n - 1) · active.len() + k`.
pub fn discrete_residuals(spec: &ProblemSpec, u: &GridFunction) -> Result<Vec<f64>, SolverError> {
    let stencil = spec.stencil()?;
    let weights = spec.weights();
    let active = spec.active_nodes();
    let steps = spec.time.steps();
    let out = (1..=steps)
        .into_par_iter()
        .flat_map_iter(|n| {
            let stencil = &stencil;
            let weights = &weights;
            active
                .iter()
                .map(move |&node| node_residual(spec, stencil, u, weights, n, node))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(out)
}

/// Half-bandwidth of the Jacobian in node numbering.
fn jacobian_bandwidth(geom: &DomainGeometry, stencil: &MonotoneStencil) -> usize {
    let stride = if geom.dim() == 2 {
        geom.cells(1) + 1
    } else {
        1
    };
    stencil
        .offsets()
        .iter()
        .map(|o| (o[0] * stride as isize + o[1]).unsigned_abs())
        .max()
        .unwrap_or(0)
}

pub fn solve(spec: &ProblemSpec) -> Result<Solution, SolverError> {
    let start = Instant::now();
    let stencil = spec.stencil()?;
    let geom = spec.geometry;
    let m = geom.node_count();
    let steps = spec.time.steps();
    let weights = spec.weights();
    let mut values = vec![0.0; (steps + 1) * m];
    values[..m].copy_from_slice(&spec.initial);

    let mut residuals = Vec::with_capacity(steps);
    let mut iterations = Vec::with_capacity(steps);
    let mut cfl = None;
    let mut factorizations = 0;

    match spec.stepping {
        Stepping::Explicit => {
            let bound = cfl_bound(&stencil, &spec.order);
            let tau = spec.time.tau();
            if tau > bound.tau_max * (1.0 + 1e-12) {
                return Err(SolverError::Cfl {
                    tau,
                    tau_max: bound.tau_max,
                });
            }
            for n in 1..=steps {
                explicit_step(spec, &stencil, &weights, &mut values, n);
                residuals.push(0.0);
                iterations.push(0);
            }
            cfl = Some(bound);
        }
        Stepping::ImplicitFixedPoint => {
            let mut newton = Newton::new(spec, &stencil);
            for n in 1..=steps {
                let (iters, residual) = newton.step(&weights, &mut values, n)?;
                residuals.push(residual);
                iterations.push(iters);
            }
            factorizations = newton.factorizations;
        }
    }

    let mut solution = Solution {
        values: GridFunction::from_parts_unchecked(spec.time, geom, values),
        residuals,
        iterations,
        weights: weights.clone(),
        order: spec.order.clone(),
        stepping: spec.stepping,
        cfl,
        factorizations,
        boundary_diagnostics: Vec::new(),
        wall_time: Duration::ZERO,
    };
    if spec.boundary == BoundaryKind::NeumannViscosity {
        solution.boundary_diagnostics = (1..=steps)
            .map(|n| BoundaryOperator::evaluate(spec, &stencil, &solution.values, &weights, n))
            .collect();
    }
    solution.wall_time = start.elapsed();
    Ok(solution)
}

fn explicit_step(
    spec: &ProblemSpec,
    stencil: &MonotoneStencil,
    weights: &[f64],
    values: &mut [f64],
    n: usize,
) {
    let geom = &spec.geometry;
    let m = geom.node_count();
    let reflect = spec.reflect();
    let t = spec.time.node(n);
    let (past, rest) = values.split_at_mut(n * m);
    let prev = &past[(n - 1) * m..];
    let current = &mut rest[..m];
    let b0 = weights[0];
    current.par_iter_mut().enumerate().for_each(|(node, out)| {
        match stencil.apply(prev, t, node, reflect) {
            Some(s) if reflect || !geom.is_boundary(node) => {
                let hist = history_at(past, m, weights, n, node);
                *out = prev[node] - (hist + s) / b0;
            }
            _ => *out = 0.0,
        }
    });
}

/// Newton / policy iteration for the implicit step, with the banded LU
/// reused while the Jacobian is unchanged.
struct Newton<'a> {
    spec: &'a ProblemSpec,
    stencil: &'a MonotoneStencil,
    jac: BandedMatrix,
    lu: Option<(Vec<f64>, BandedMatrix)>,
    g: Vec<f64>,
    diag: Vec<f64>,
    hist: Vec<f64>,
    trial: Vec<f64>,
    factorizations: usize,
}

impl<'a> Newton<'a> {
    fn new(spec: &'a ProblemSpec, stencil: &'a MonotoneStencil) -> Self {
        let m = spec.geometry.node_count();
        let bw = jacobian_bandwidth(&spec.geometry, stencil);
        Self {
            spec,
            stencil,
            jac: BandedMatrix::zeros(m, bw),
            lu: None,
            g: vec![0.0; m],
            diag: vec![0.0; m],
            hist: vec![0.0; m],
            trial: vec![0.0; m],
            factorizations: 0,
        }
    }

    /// Residual `G` (and, if `assemble`, the Jacobian) at `u`; returns the
    /// scaled residual `max |G_i| / ∂G_i/∂u_i`.
    fn evaluate(&mut self, b0: f64, prev: &[f64], u: &[f64], t: f64, assemble: bool) -> f64 {
        let spec = self.spec;
        let stencil = self.stencil;
        let geom = &spec.geometry;
        let reflect = spec.reflect();
        let bw = self.jac.half_bandwidth();
        let width = 2 * bw + 1;
        let k = stencil.offsets().len();
        let hist = &self.hist;
        let rows = self.jac.band_mut().par_chunks_mut(width);
        let work = self
            .g
            .par_iter_mut()
            .zip(self.diag.par_iter_mut())
            .zip(rows)
            .enumerate();
        work.for_each_init(
            || (Vec::with_capacity(k), vec![0.0; k]),
            |(nb, dnb), (node, ((g, d), row))| {
                if assemble {
                    row.iter_mut().for_each(|v| *v = 0.0);
                }
                if !reflect && geom.is_boundary(node) {
                    *g = u[node];
                    *d = 1.0;
                    if assemble {
                        row[bw] = 1.0;
                    }
                    return;
                }
                stencil
                    .gather(u, node, reflect, nb)
                    .expect("active node has all neighbours");
                let x = geom.coords(node);
                let (s, ds) = stencil.linearize(t, x, u[node], nb, dnb);
                *g = b0 * (u[node] - prev[node]) + hist[node] + s;
                *d = b0 + ds;
                if assemble {
                    row[bw] += b0 + ds;
                    for (off, dv) in stencil.offsets().iter().zip(dnb.iter()) {
                        if *dv == 0.0 {
                            continue;
                        }
                        let j = geom.neighbor(node, *off, reflect).expect("gathered above");
                        row[j + bw - node] += dv;
                    }
                }
            },
        );
        self.g
            .iter()
            .zip(&self.diag)
            .map(|(g, d)| (g / d).abs())
            .fold(0.0, f64::max)
    }

    fn step(
        &mut self,
        weights: &[f64],
        values: &mut [f64],
        n: usize,
    ) -> Result<(usize, f64), SolverError> {
        let spec = self.spec;
        let m = spec.geometry.node_count();
        let t = spec.time.node(n);
        let b0 = weights[0];
        let (past, rest) = values.split_at_mut(n * m);
        let prev = &past[(n - 1) * m..];
        let u = &mut rest[..m];
        self.hist
            .par_iter_mut()
            .enumerate()
            .for_each(|(node, h)| *h = history_at(past, m, weights, n, node));
        u.copy_from_slice(prev);

        let mut trace = Vec::new();
        let mut scaled = self.evaluate(b0, prev, u, t, true);
        trace.push(scaled);
        let mut iterations = 0;
        while iterations < spec.settings.max_iterations {
            let scale = u.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            if scaled <= spec.settings.tol * scale {
                break;
            }
            iterations += 1;
            let reuse = matches!(&self.lu, Some((raw, _)) if raw.as_slice() == self.jac.band());
            if !reuse {
                let mut lu = self.jac.clone();
                lu.factorize()?;
                self.lu = Some((self.jac.band().to_vec(), lu));
                self.factorizations += 1;
            }
            let lu = &self.lu.as_ref().expect("factorized above").1;
            let mut delta: Vec<f64> = self.g.iter().map(|g| -g).collect();
            lu.solve_factored(&mut delta);

            // Backtrack on the scaled residual; piecewise-linear operators
            // accept the full step.
            let mut lambda = 1.0;
            loop {
                for ((tr, ui), di) in self.trial.iter_mut().zip(u.iter()).zip(&delta) {
                    *tr = ui + lambda * di;
                }
                let trial = std::mem::take(&mut self.trial);
                let next = self.evaluate(b0, prev, &trial, t, true);
                self.trial = trial;
                if next <= scaled || lambda < 1e-6 {
                    u.copy_from_slice(&self.trial);
                    scaled = next;
                    break;
                }
                lambda *= 0.5;
            }
            trace.push(scaled);
        }
        let scale = u.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if scaled > spec.settings.accept * scale {
            return Err(SolverError::NoConvergence {
                step: n,
                iterations,
                residual: scaled,
                trace,
            });
        }
        let raw = self.g.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        Ok((iterations, raw))
    }
}

/// Rounding allowance when checking `lower ≤ upper`; both may touch `u₀` at `t = 0`.
const ORDER_SLACK: f64 = 1e-12;

/// Sampling density and ε ladder for the barrier families.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierOptions {
    pub eps_ladder: Vec<f64>,
    /// Number of anchor times `s` for boundary-anchored members.
    pub time_anchors: usize,
    /// Target number of anchors per axis for the spatial sub-lattices.
    pub space_anchors: usize,
    /// Exterior-sphere radius; defaults to a quarter of the shortest side.
    pub sphere_radius: Option<f64>,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            eps_ladder: vec![1e-1, 1e-2, 1e-3],
            time_anchors: 8,
            space_anchors: 24,
            sphere_radius: None,
        }
    }
}

/// One member of a barrier family, `sign = -1` for lower and `+1` for upper.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BarrierMember {
    /// `sign (ε + C₁ (ρ₁(t) + C ρ̂(x)))`, `ρ̂ = r^{-p} − |x − z|^{-p}`.
    BoundaryAnchored {
        sign: f64,
        s: f64,
        anchor: usize,
        eps: f64,
        c1: f64,
        c: f64,
        p: f64,
        center: [f64; 2],
        radius: f64,
        alpha: f64,
        horizon: f64,
    },
    /// `u₀(y) + sign (ε + K t^α/Γ(1+α) + C₂ |x − y|²/(2d))`.
    InitialAnchored {
        sign: f64,
        anchor: usize,
        level: f64,
        eps: f64,
        c2: f64,
        k: f64,
        y: [f64; 2],
        alpha: f64,
        dim: usize,
    },
}

fn rho1(alpha: f64, s: f64, horizon: f64, t: f64) -> f64 {
    let g = gamma_unchecked(2.0 + alpha);
    (alpha * t.powf(1.0 + alpha) - (1.0 + alpha) * s * t.powf(alpha) + s.powf(1.0 + alpha))
        / (g * horizon)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn sphere_profile(x: [f64; 2], z: [f64; 2], r: f64, p: f64) -> f64 {
    r.powf(-p) - dist(x, z).powf(-p)
}

impl BarrierMember {
    pub fn value(&self, t: f64, x: [f64; 2]) -> f64 {
        match *self {
            BarrierMember::BoundaryAnchored {
                sign,
                s,
                eps,
                c1,
                c,
                p,
                center,
                radius,
                alpha,
                horizon,
                ..
            } => {
                sign * (eps
                    + c1 * (rho1(alpha, s, horizon, t) + c * sphere_profile(x, center, radius, p)))
            }
            BarrierMember::InitialAnchored {
                sign,
                level,
                eps,
                c2,
                k,
                y,
                alpha,
                dim,
                ..
            } => {
                let tpart = t.powf(alpha) / gamma_unchecked(1.0 + alpha);
                let q = dist(x, y).powi(2) / (2.0 * dim as f64);
                level + sign * (eps + k * tpart + c2 * q)
            }
        }
    }
}

/// Constants chosen for a barrier pair, for logging.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierReport {
    pub lower_members: usize,
    pub upper_members: usize,
    /// Branches that could not be certified for this operator, with the reason.
    pub skipped: Vec<String>,
    pub max_c1: f64,
    pub max_c2: f64,
    pub max_k: f64,
    pub exponent: Option<f64>,
    pub sphere_radius: Option<f64>,
    /// Neumann constants `M` and `C`.
    pub m: Option<f64>,
    pub c: Option<f64>,
    /// `max` of the implicit-scheme residual of the lower barrier (≤ 0 for a discrete subsolution).
    pub lower_residual: f64,
    /// `min` of the implicit-scheme residual of the upper barrier (≥ 0 for a discrete supersolution).
    pub upper_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Barriers {
    pub lower: GridFunction,
    pub upper: GridFunction,
    pub members: Vec<BarrierMember>,
    pub report: BarrierReport,
}

/// Discrete L1 values `Σ_{k<n} b_k (f_{n-k} − f_{n-k-1})` for every `n ≥ 1`.
fn discrete_caputo_series(weights: &[f64], f: &[f64]) -> Vec<f64> {
    (1..f.len())
        .map(|n| (0..n).map(|k| weights[k] * (f[n - k] - f[n - k - 1])).sum())
        .collect()
}

/// Stencil residual at `node` of the spatial profile `prof`, re-levelled so
/// the centre value is `level`. Valid because every catalog stencil depends
/// on neighbour differences plus a reaction term in the centre value.
fn residual_at_level(
    stencil: &MonotoneStencil,
    prof: &[f64],
    node: usize,
    level: f64,
    reflect: bool,
    nb: &mut Vec<f64>,
) -> f64 {
    stencil
        .gather(prof, node, reflect, nb)
        .expect("active node has all neighbours");
    let shift = level - prof[node];
    nb.iter_mut().for_each(|v| *v += shift);
    let x = stencil.geometry().coords(node);
    stencil.residual(0.0, x, level, nb)
}

/// Evenly spaced subset of `items` with at most `target` entries.
fn sub_lattice(items: &[usize], target: usize) -> Vec<usize> {
    if items.len() <= target.max(1) {
        return items.to_vec();
    }
    let stride = items.len().div_ceil(target.max(1));
    items.iter().copied().step_by(stride).collect()
}

fn positively_homogeneous(op: &EllipticOperator) -> bool {
    match op {
        EllipticOperator::Bellman { controls } => controls.iter().all(|c| c.source == 0.0),
        EllipticOperator::ReactionShifted { base, .. } => positively_homogeneous(base),
        _ => true,
    }
}

fn spatial_anchors(geom: &DomainGeometry, nodes: &[usize], target: usize) -> Vec<usize> {
    if geom.dim() == 1 {
        return sub_lattice(nodes, target);
    }
    let stride = [
        geom.cells(0).div_ceil(target.max(1)).max(1),
        geom.cells(1).div_ceil(target.max(1)).max(1),
    ];
    nodes
        .iter()
        .copied()
        .filter(|&n| {
            let ij = geom.multi_index(n);
            let on_line = |a: usize| ij[a] % stride[a] == 0 || ij[a] == geom.cells(a);
            let boundary = geom.is_boundary(n);
            (on_line(0) && on_line(1)) || (boundary && (on_line(0) || on_line(1)))
        })
        .collect()
}

/// Sub- and supersolution families for the Dirichlet problem, maximized
/// (minimized) nodewise over sampled anchors and the ε ladder.
///
/// Every constant is chosen against the discrete scheme, so the results are
/// discrete sub/supersolutions and sandwich the [`solve`] output exactly.
pub fn build_barriers_dirichlet(
    spec: &ProblemSpec,
    opts: &BarrierOptions,
) -> Result<Barriers, SolverError> {
    if spec.boundary != BoundaryKind::DirichletStrong {
        return Err(SolverError::Barrier(
            "Dirichlet barriers need a dirichlet_strong problem".into(),
        ));
    }
    if opts.eps_ladder.is_empty() || opts.eps_ladder.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(SolverError::Barrier(
            "the epsilon ladder must be non-empty and positive".into(),
        ));
    }
    let stencil = spec.stencil()?;
    let geom = spec.geometry;
    let time = spec.time;
    let weights = spec.weights();
    let alpha = spec.order.max_alpha();
    let dim = geom.dim();
    let u0 = spec.initial();
    let interior = geom.interior_nodes();
    let mut skipped = Vec::new();
    let mut members = Vec::new();
    let mut nb = Vec::new();

    let tpart: Vec<f64> = (0..time.len())
        .map(|n| time.node(n).powf(alpha) / gamma_unchecked(1.0 + alpha))
        .collect();
    let ell = discrete_caputo_series(&weights, &tpart)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if !(ell > 0.0) {
        return Err(SolverError::Barrier(format!(
            "discrete Caputo of t^a/Gamma(1+a) is not positive ({ell:e})"
        )));
    }

    // Initial-anchored members.
    let hi0 = u0
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let lo0 = u0.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let all: Vec<usize> = (0..geom.node_count()).collect();
    for &y in &spatial_anchors(&geom, &all, opts.space_anchors) {
        let yx = geom.coords(y);
        let q: Vec<f64> = geom.sample(|x| dist(x, yx).powi(2) / (2.0 * dim as f64));
        for &eps in &opts.eps_ladder {
            for sign in [-1.0, 1.0] {
                let mut c2 = 0.0f64;
                for (node, &qv) in q.iter().enumerate() {
                    if qv > 0.0 {
                        c2 = c2.max((sign * (u0[node] - u0[y]) - eps) / qv);
                    }
                }
                let prof: Vec<f64> = q.iter().map(|v| sign * c2 * v).collect();
                let level = if sign < 0.0 { hi0 } else { lo0 };
                let worst = interior
                    .iter()
                    .map(|&node| {
                        -sign * residual_at_level(&stencil, &prof, node, level, false, &mut nb)
                    })
                    .fold(0.0, f64::max);
                members.push(BarrierMember::InitialAnchored {
                    sign,
                    anchor: y,
                    level: u0[y],
                    eps,
                    c2,
                    k: worst / ell,
                    y: yx,
                    alpha,
                    dim,
                });
            }
        }
    }

    // Boundary-anchored members on exterior spheres.
    let mut exponent = None;
    let radius = opts.sphere_radius.unwrap_or_else(|| {
        0.25 * (0..dim)
            .map(|a| geom.length(a))
            .fold(f64::INFINITY, f64::min)
    });
    if !positively_homogeneous(&spec.operator) {
        skipped.push("boundary-anchored branch: operator has a source term and is not positively homogeneous".into());
    } else {
        let anchors_y = spatial_anchors(&geom, &geom.boundary_nodes(), opts.space_anchors);
        let steps = time.steps();
        let anchors_s: Vec<f64> = (1..=opts.time_anchors.max(1))
            .map(|j| {
                time.node(
                    (j * steps)
                        .div_ceil(opts.time_anchors.max(1))
                        .clamp(1, steps),
                )
            })
            .collect();
        for sign in [-1.0, 1.0] {
            let side = if sign < 0.0 { "lower" } else { "upper" };
            let mut certified = 0;
            for &y in &anchors_y {
                let n_y = geom.outward_normal(y).expect("boundary node has a normal");
                let yx = geom.coords(y);
                let z = [yx[0] + radius * n_y[0], yx[1] + radius * n_y[1]];
                // Smallest exponent whose profile has a strict sign under the stencil.
                let mut found = None;
                for extra in 0..=8 {
                    let p = (dim + extra) as f64;
                    let prof: Vec<f64> = geom.sample(|x| sign * sphere_profile(x, z, radius, p));
                    let worst = interior
                        .iter()
                        .map(|&node| {
                            -sign * residual_at_level(&stencil, &prof, node, 0.0, false, &mut nb)
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                    if worst < 0.0 {
                        found = Some((p, -worst));
                        break;
                    }
                }
                let Some((p, margin)) = found else {
                    continue;
                };
                exponent = Some(exponent.map_or(p, |e: f64| e.max(p)));
                certified += 1;
                for &s in &anchors_s {
                    let r1: Vec<f64> = (0..time.len())
                        .map(|n| rho1(alpha, s, time.horizon(), time.node(n)))
                        .collect();
                    let mu = discrete_caputo_series(&weights, &r1)
                        .into_iter()
                        .fold(f64::INFINITY, f64::min);
                    let c = (-mu).max(1.0) / margin;
                    for &eps in &opts.eps_ladder {
                        let mut c1 = 0.0f64;
                        for (node, &u) in u0.iter().enumerate() {
                            let base = r1[0] + c * sphere_profile(geom.coords(node), z, radius, p);
                            if base > 0.0 {
                                c1 = c1.max((sign * u - eps) / base);
                            }
                        }
                        members.push(BarrierMember::BoundaryAnchored {
                            sign,
                            s,
                            anchor: y,
                            eps,
                            c1,
                            c,
                            p,
                            center: z,
                            radius,
                            alpha,
                            horizon: time.horizon(),
                        });
                    }
                }
            }
            if certified == 0 {
                skipped.push(format!("boundary-anchored {side} branch: no exterior-sphere profile has a strict sign under this operator"));
            }
        }
    }

    let (lower, upper) = assemble_envelopes(spec, &members)?;
    let mut report = summarize(&members, skipped, exponent, Some(radius));
    check_residual_signs(spec, &lower, &upper, &mut report)?;
    Ok(Barriers {
        lower,
        upper,
        members,
        report,
    })
}

fn assemble_envelopes(
    spec: &ProblemSpec,
    members: &[BarrierMember],
) -> Result<(GridFunction, GridFunction), SolverError> {
    let geom = spec.geometry;
    let time = spec.time;
    let m = geom.node_count();
    let mut lower = vec![f64::NEG_INFINITY; time.len() * m];
    let mut upper = vec![f64::INFINITY; time.len() * m];
    lower
        .par_chunks_mut(m)
        .zip(upper.par_chunks_mut(m))
        .enumerate()
        .for_each(|(n, (lo, up))| {
            let t = time.node(n);
            for member in members {
                let lower_side = match member {
                    BarrierMember::BoundaryAnchored { sign, .. }
                    | BarrierMember::InitialAnchored { sign, .. } => *sign < 0.0,
                };
                for node in 0..m {
                    let v = member.value(t, geom.coords(node));
                    if lower_side {
                        lo[node] = lo[node].max(v);
                    } else {
                        up[node] = up[node].min(v);
                    }
                }
            }
            if n == 0 {
                // Members dominate the data only up to rounding at t = 0.
                for (node, &u0) in spec.initial.iter().enumerate() {
                    lo[node] = lo[node].min(u0);
                    up[node] = up[node].max(u0);
                }
            }
        });
    Ok((
        GridFunction::new(time, geom, lower)?,
        GridFunction::new(time, geom, upper)?,
    ))
}

fn summarize(
    members: &[BarrierMember],
    skipped: Vec<String>,
    exponent: Option<f64>,
    radius: Option<f64>,
) -> BarrierReport {
    let mut report = BarrierReport {
        lower_members: 0,
        upper_members: 0,
        skipped,
        max_c1: 0.0,
        max_c2: 0.0,
        max_k: 0.0,
        exponent,
        sphere_radius: radius,
        m: None,
        c: None,
        lower_residual: f64::NAN,
        upper_residual: f64::NAN,
    };
    for member in members {
        let sign = match member {
            BarrierMember::BoundaryAnchored { sign, c1, .. } => {
                report.max_c1 = report.max_c1.max(*c1);
                *sign
            }
            BarrierMember::InitialAnchored { sign, c2, k, .. } => {
                report.max_c2 = report.max_c2.max(*c2);
                report.max_k = report.max_k.max(*k);
                *sign
            }
        };
        if sign < 0.0 {
            report.lower_members += 1;
        } else {
            report.upper_members += 1;
        }
    }
    report
}

fn check_residual_signs(
    spec: &ProblemSpec,
    lower: &GridFunction,
    upper: &GridFunction,
    report: &mut BarrierReport,
) -> Result<(), SolverError> {
    let m = spec.geometry.node_count();
    for n in 0..spec.time.len() {
        for node in 0..m {
            let gap = lower.at(n, node) - upper.at(n, node);
            if gap > ORDER_SLACK * (1.0 + upper.at(n, node).abs()) {
                return Err(SolverError::UnorderedBarriers { step: n, node, gap });
            }
        }
    }
    report.lower_residual = discrete_residuals(spec, lower)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    report.upper_residual = discrete_residuals(spec, upper)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(())
}

/// Smooth profile along one axis of length `l`: equal to the distance to the
/// nearer end within `l/4` of it, quadratic cap in the middle.
fn axis_profile(x: f64, l: f64) -> f64 {
    let d = x.min(l - x).max(0.0);
    let a = 0.25 * l;
    if d <= a {
        d
    } else {
        d - (d - a).powi(2) / (2.0 * a)
    }
}

/// Smoothed distance `D₁(x) + D₂(y)`; its outward normal derivative is `-1`
/// on every face.
pub fn smooth_distance(geom: &DomainGeometry, x: [f64; 2]) -> f64 {
    (0..geom.dim())
        .map(|a| axis_profile(x[a], geom.length(a)))
        .sum()
}

/// `lower = −M − C t^α/Γ(1+α) + d(x)`, `upper = −lower`, with `d` the smoothed
/// distance. `C` is chosen so both are discrete sub/supersolutions of the
/// ghost-closed scheme.
pub fn build_barriers_neumann(spec: &ProblemSpec) -> Result<Barriers, SolverError> {
    if spec.boundary != BoundaryKind::NeumannViscosity {
        return Err(SolverError::Barrier(
            "Neumann barriers need a neumann_viscosity problem".into(),
        ));
    }
    let stencil = spec.stencil()?;
    let geom = spec.geometry;
    let time = spec.time;
    let weights = spec.weights();
    let alpha = spec.order.max_alpha();
    let d: Vec<f64> = geom.sample(|x| smooth_distance(&geom, x));
    let max_d = d.iter().copied().fold(0.0, f64::max);
    let m_const = spec.initial().iter().fold(0.0f64, |a, v| a.max(v.abs())) + max_d;

    let tpart: Vec<f64> = (0..time.len())
        .map(|n| time.node(n).powf(alpha) / gamma_unchecked(1.0 + alpha))
        .collect();
    let ell = discrete_caputo_series(&weights, &tpart)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let mut nb = Vec::new();
    let neg_d: Vec<f64> = d.iter().map(|v| -v).collect();
    let mut worst = 0.0f64;
    for node in 0..geom.node_count() {
        worst = worst.max(residual_at_level(&stencil, &d, node, 0.0, true, &mut nb));
        worst = worst.max(-residual_at_level(
            &stencil, &neg_d, node, 0.0, true, &mut nb,
        ));
    }
    let c = worst / ell;

    let m = geom.node_count();
    let mut lower = Vec::with_capacity(time.len() * m);
    for tp in &tpart {
        lower.extend(d.iter().map(|dv| -m_const - c * tp + dv));
    }
    let upper: Vec<f64> = lower.iter().map(|v| -v).collect();
    let lower = GridFunction::new(time, geom, lower)?;
    let upper = GridFunction::new(time, geom, upper)?;
    let mut report = summarize(&[], Vec::new(), None, None);
    report.m = Some(m_const);
    report.c = Some(c);
    check_residual_signs(spec, &lower, &upper, &mut report)?;
    Ok(Barriers {
        lower,
        upper,
        members: Vec::new(),
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerronOptions {
    /// Sweeps stop once the largest bump in a sweep is below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for PerronOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_sweeps: 500_000,
        }
    }
}

/// Perron iteration outcome: the solution plus a monotonicity audit.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronOutcome {
    pub solution: Solution,
    /// Bumps whose scalar root fell below the current value (never applied).
    pub refused_decreases: usize,
    /// Largest amount a root fell below the current value.
    pub max_refused: f64,
    /// Sweeps that changed at least one value, per step.
    pub changing_sweeps: Vec<usize>,
}

/// Scalar root of the increasing, piecewise-smooth `v ↦ G_i(v)` by safeguarded Newton.
fn bump_root(
    spec: &ProblemSpec,
    stencil: &MonotoneStencil,
    b0: f64,
    prev: f64,
    hist: f64,
    t: f64,
    node: usize,
    u: &[f64],
    nb: &mut Vec<f64>,
    dnb: &mut [f64],
) -> f64 {
    let geom = &spec.geometry;
    stencil
        .gather(u, node, spec.reflect(), nb)
        .expect("active node has all neighbours");
    let x = geom.coords(node);
    let g = |v: f64, dnb: &mut [f64]| {
        let (s, ds) = stencil.linearize(t, x, v, nb, dnb);
        (b0 * (v - prev) + hist + s, b0 + ds)
    };
    let mut v = u[node];
    for _ in 0..200 {
        let (gv, dg) = g(v, dnb);
        let step = gv / dg;
        v -= step;
        if step.abs() <= 1e-16 * (1.0 + v.abs()) {
            break;
        }
    }
    v
}

/// Discrete Perron method: starting from `lower`, each node is raised to the
/// root of its own equation (Gauss-Seidel order) until a sweep moves nothing
/// by more than `opts.tol`. Time levels are processed in order.
pub fn perron_iterate(
    spec: &ProblemSpec,
    lower: &GridFunction,
    upper: &GridFunction,
    opts: &PerronOptions,
) -> Result<PerronOutcome, SolverError> {
    let start = Instant::now();
    let stencil = spec.stencil()?;
    let geom = spec.geometry;
    let m = geom.node_count();
    let steps = spec.time.steps();
    for n in 0..=steps {
        for node in 0..m {
            let gap = lower.at(n, node) - upper.at(n, node);
            if gap > ORDER_SLACK * (1.0 + upper.at(n, node).abs()) {
                return Err(SolverError::UnorderedBarriers { step: n, node, gap });
            }
        }
    }
    let weights = spec.weights();
    let b0 = weights[0];
    let active = spec.active_nodes();
    let mut values = lower.values().to_vec();
    values[..m].copy_from_slice(spec.initial());
    if !spec.reflect() {
        for n in 1..=steps {
            for node in geom.boundary_nodes() {
                values[n * m + node] = 0.0;
            }
        }
    }
    let mut refused_decreases = 0;
    let mut max_refused = 0.0f64;
    let mut iterations = Vec::with_capacity(steps);
    let mut changing_sweeps = Vec::with_capacity(steps);
    let mut nb = Vec::new();
    let mut dnb = vec![0.0; stencil.offsets().len()];
    for n in 1..=steps {
        let t = spec.time.node(n);
        let (past, rest) = values.split_at_mut(n * m);
        let prev = &past[(n - 1) * m..];
        let u = &mut rest[..m];
        let hist: Vec<f64> = (0..m)
            .map(|node| history_at(past, m, &weights, n, node))
            .collect();
        let mut sweeps = 0;
        let mut changing = 0;
        loop {
            if sweeps == opts.max_sweeps {
                return Err(SolverError::PerronBudget {
                    step: n,
                    sweeps,
                    update: f64::NAN,
                });
            }
            sweeps += 1;
            let mut largest = 0.0f64;
            for &node in &active {
                let root = bump_root(
                    spec, &stencil, b0, prev[node], hist[node], t, node, u, &mut nb, &mut dnb,
                );
                let bump = root - u[node];
                if bump > 0.0 {
                    u[node] = root;
                    largest = largest.max(bump);
                } else if bump < 0.0 {
                    refused_decreases += 1;
                    max_refused = max_refused.max(-bump);
                }
            }
            if largest > 0.0 {
                changing += 1;
            }
            if largest < opts.tol {
                break;
            }
        }
        iterations.push(sweeps);
        changing_sweeps.push(changing);
    }
    let values = GridFunction::from_parts_unchecked(spec.time, geom, values);
    let residuals = (1..=steps)
        .map(|n| {
            active
                .iter()
                .map(|&node| node_residual(spec, &stencil, &values, &weights, n, node).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(PerronOutcome {
        solution: Solution {
            values,
            residuals,
            iterations,
            weights,
            order: spec.order.clone(),
            stepping: Stepping::ImplicitFixedPoint,
            cfl: None,
            factorizations: 0,
            boundary_diagnostics: Vec::new(),
            wall_time: start.elapsed(),
        },
        refused_decreases,
        max_refused,
        changing_sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracops::{FractionalOrder, MultiTermOrder};
    use crate::oracles::{exact_eigen_solution, EigenMode};
    use std::f64::consts::PI;

    fn heat(alpha: f64, nt: usize, nx: usize) -> ProblemSpec {
        ProblemSpec::fractional_heat(alpha, 0.1, nt, nx).unwrap()
    }

    #[test]
    fn zero_data_gives_zero() {
        let mut spec = heat(0.5, 20, 16);
        spec.set_initial(vec![0.0; 17]).unwrap();
        let sol = solve(&spec).unwrap();
        assert!(sol.values.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn initial_slice_is_exact_and_boundary_pinned() {
        let spec = heat(0.5, 10, 16);
        let sol = solve(&spec).unwrap();
        assert_eq!(sol.values.slice(0), spec.initial());
        for n in 0..=10 {
            assert_eq!(sol.values.at(n, 0), 0.0);
            assert_eq!(sol.values.at(n, 16), 0.0);
        }
    }

    #[test]
    fn dirichlet_boundary_data_rejected() {
        let geometry = DomainGeometry::interval(1.0, 8).unwrap();
        let err = ProblemSpec::new(
            geometry,
            TimeGrid::new(1.0, 4).unwrap(),
            FractionalOrder::new(0.5).unwrap(),
            EllipticOperator::laplacian(),
            vec![1.0; 9],
            BoundaryKind::DirichletStrong,
            Stepping::ImplicitFixedPoint,
        );
        assert!(matches!(
            err,
            Err(SolverError::InitialBoundary { node: 0, .. })
        ));
    }

    #[test]
    fn heat_matches_eigen_solution() {
        let spec = heat(0.5, 200, 100);
        let sol = solve(&spec).unwrap();
        let mode = EigenMode::dirichlet_fundamental(spec.geometry);
        let order = FractionalOrder::new(0.5).unwrap();
        let mid = 50;
        let exact = exact_eigen_solution(&mode, order, 0.1, [0.5, 0.0]).unwrap();
        assert!((sol.values.at(200, mid) - exact).abs() < 5e-3);
        assert!((exact - 0.1726).abs() < 1e-3);
        assert!(sol.residuals.iter().all(|r| *r <= 1e-10));
        // linear operator: one factorization for the whole run
        assert_eq!(sol.factorizations, 1);
    }

    #[test]
    fn neumann_cosine_mode() {
        let mut errs = Vec::new();
        for level in 0..3 {
            let (nt, nx) = (40 << level, 16 << level);
            let geometry = DomainGeometry::interval(1.0, nx).unwrap();
            let order = FractionalOrder::new(0.5).unwrap();
            let u0 = geometry.sample(|x| (PI * x[0]).cos());
            let spec = ProblemSpec::new(
                geometry,
                TimeGrid::new(0.1, nt).unwrap(),
                order,
                EllipticOperator::laplacian(),
                u0,
                BoundaryKind::NeumannViscosity,
                Stepping::ImplicitFixedPoint,
            )
            .unwrap();
            let sol = solve(&spec).unwrap();
            let mode = EigenMode::new(geometry, [1, 0], BoundaryKind::NeumannViscosity).unwrap();
            let err = (0..=nx)
                .map(|i| {
                    let x = geometry.coords(i);
                    (sol.values.at(nt, i) - exact_eigen_solution(&mode, order, 0.1, x).unwrap())
                        .abs()
                })
                .fold(0.0, f64::max);
            errs.push(err);
            let diag = sol.boundary_diagnostics.last().unwrap();
            assert!(diag.max_lower <= diag.min_upper + 1e-12 || diag.max_lower <= 1e-9);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 5e-3);
    }

    #[test]
    fn classical_order_is_backward_euler() {
        let spec = heat(1.0, 10, 8);
        let sol = solve(&spec).unwrap();
        let stencil = spec.stencil().unwrap();
        let tau = spec.time.tau();
        for n in 1..=10 {
            for i in 1..8 {
                let s = stencil.apply(sol.values.slice(n), 0.0, i, false).unwrap();
                let r = (sol.values.at(n, i) - sol.values.at(n - 1, i)) / tau + s;
                assert!(r.abs() < 1e-11, "{r}");
            }
        }
    }

    #[test]
    fn single_term_multi_is_bit_identical() {
        let spec = heat(0.4, 30, 20);
        let multi = spec.with_order(MultiTermOrder::single(FractionalOrder::new(0.4).unwrap()));
        assert!(matches!(multi.order, TimeOrder::Multi(_)));
        let a = solve(&spec).unwrap();
        let b = solve(&multi).unwrap();
        assert_eq!(a.values.values(), b.values.values());
    }

    #[test]
    fn explicit_respects_cfl() {
        let mut spec = heat(0.5, 50, 8);
        spec.stepping = Stepping::Explicit;
        assert!(matches!(solve(&spec), Err(SolverError::Cfl { .. })));
        let stencil = spec.stencil().unwrap();
        let bound = cfl_bound(&stencil, &spec.order);
        let nt = (0.1 / bound.tau_max).ceil() as usize + 1;
        spec.time = TimeGrid::new(0.1, nt).unwrap();
        let explicit = solve(&spec).unwrap();
        spec.stepping = Stepping::ImplicitFixedPoint;
        let implicit = solve(&spec).unwrap();
        let diff = explicit.values.max_abs_diff(&implicit.values);
        assert!(diff < 1e-2, "{diff} nt={nt}");
        assert!(explicit
            .values
            .values()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn nonlinear_operators_converge() {
        for op in [
            EllipticOperator::Pucci {
                theta_minus: 1.0,
                theta_plus: 2.0,
            },
            EllipticOperator::Eikonal { speed: 1.0 },
        ] {
            let geometry = DomainGeometry::rectangle([1.0, 1.0], [12, 12]).unwrap();
            let u0 = geometry.sample(|x| (PI * x[0]).sin() * (PI * x[1]).sin());
            let spec = ProblemSpec::new(
                geometry,
                TimeGrid::new(0.1, 10).unwrap(),
                FractionalOrder::new(0.6).unwrap(),
                op,
                u0,
                BoundaryKind::DirichletStrong,
                Stepping::ImplicitFixedPoint,
            )
            .unwrap();
            let sol = solve(&spec).unwrap();
            let res = discrete_residuals(&spec, &sol.values).unwrap();
            assert!(
                res.iter().all(|r| r.abs() < 1e-9),
                "{}",
                spec.operator.name()
            );
        }
    }

    #[test]
    fn dirichlet_barriers_sandwich() {
        let spec = heat(0.5, 40, 32);
        let b = build_barriers_dirichlet(&spec, &BarrierOptions::default()).unwrap();
        let sol = solve(&spec).unwrap();
        for n in 0..=40 {
            for i in 0..=32 {
                assert!(b.lower.at(n, i) <= sol.values.at(n, i) + 1e-12);
                assert!(sol.values.at(n, i) <= b.upper.at(n, i) + 1e-12);
            }
        }
        assert!(b.report.lower_residual <= 1e-9, "{:?}", b.report);
        assert!(b.report.upper_residual >= -1e-9, "{:?}", b.report);
        for member in &b.members {
            if let BarrierMember::BoundaryAnchored {
                sign,
                s,
                anchor,
                eps,
                ..
            } = member
            {
                let y = spec.geometry.coords(*anchor);
                assert!((member.value(*s, y) - sign * eps).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn neumann_barriers_sandwich() {
        let geometry = DomainGeometry::rectangle([1.0, 1.0], [10, 10]).unwrap();
        let u0 = geometry.sample(|x| (PI * x[0]).cos() * (PI * x[1]).cos());
        let spec = ProblemSpec::new(
            geometry,
            TimeGrid::new(0.2, 20).unwrap(),
            FractionalOrder::new(0.5).unwrap(),
            EllipticOperator::Pucci {
                theta_minus: 0.5,
                theta_plus: 1.0,
            },
            u0,
            BoundaryKind::NeumannViscosity,
            Stepping::ImplicitFixedPoint,
        )
        .unwrap();
        let b = build_barriers_neumann(&spec).unwrap();
        let sol = solve(&spec).unwrap();
        assert!(b
            .lower
            .values()
            .iter()
            .zip(sol.values.values())
            .all(|(l, u)| l <= u));
        assert!(sol
            .values
            .values()
            .iter()
            .zip(b.upper.values())
            .all(|(u, v)| u <= v));
        for node in geometry.boundary_nodes() {
            let d: Vec<f64> = geometry.sample(|x| smooth_distance(&geometry, x));
            let nd = normal_difference(&geometry, &d, node);
            assert!(nd < 0.0);
        }
    }

    #[test]
    fn perron_matches_solve() {
        let spec = heat(0.5, 20, 16);
        let b = build_barriers_dirichlet(&spec, &BarrierOptions::default()).unwrap();
        let out = perron_iterate(&spec, &b.lower, &b.upper, &PerronOptions::default()).unwrap();
        let sol = solve(&spec).unwrap();
        assert!(out.solution.values.max_abs_diff(&sol.values) < 1e-8);
        assert_eq!(out.refused_decreases, 0);
    }

    #[test]
    fn perron_from_solution_is_fixed() {
        let spec = heat(0.5, 10, 8);
        let sol = solve(&spec).unwrap();
        let upper = GridFunction::from_fn(spec.time, spec.geometry, |_, _| 10.0);
        let out = perron_iterate(
            &spec,
            &sol.values,
            &upper,
            &PerronOptions {
                tol: 1e-10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.solution.values.max_abs_diff(&sol.values) < 1e-10);
        assert!(out.solution.iterations.iter().all(|s| *s == 1));
    }
}
