//! Numerical checks of viscosity inequalities, the comparison principle and
//! the `α → 1` limit.
//!
//! A sampled test family can only falsify: a clean [`ViscosityReport`] means
//! no violation was found among the sampled touching points.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fracops::{gamma_unchecked, FractionalOrder, TimeOrder};
use crate::geometry::{DomainGeometry, GridFunction};
use crate::operators::SymMatrix;
use crate::solver::{discrete_caputo, solve, ProblemSpec, Solution, SolverError};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("grid functions live on different grids")]
    GridMismatch,
    #[error("tolerance must be positive and finite (got {0})")]
    BadTolerance(f64),
    #[error("test family is empty")]
    EmptyFamily,
    #[error("alpha list must be non-empty, inside (0, 1] and increasing (got {0:?})")]
    BadAlphas(Vec<f64>),
}

/// `φ(t, x) = a t + p·x + ½ xᵀ X x`. Only `∇φ` and `∇²φ` enter the checks;
/// the constant is fixed by the touching shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestQuadratic {
    pub a: f64,
    pub p: [f64; 2],
    pub hessian: SymMatrix,
}

impl TestQuadratic {
    pub fn value(&self, x: [f64; 2]) -> f64 {
        let h = &self.hessian;
        let quad = if h.dim() == 1 {
            h.diag(0) * x[0] * x[0]
        } else {
            h.diag(0) * x[0] * x[0] + 2.0 * h.off_diag() * x[0] * x[1] + h.diag(1) * x[1] * x[1]
        };
        self.p[0] * x[0] + self.p[1] * x[1] + 0.5 * quad
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let h = &self.hessian;
        if h.dim() == 1 {
            [self.p[0] + h.diag(0) * x[0], 0.0]
        } else {
            [
                self.p[0] + h.diag(0) * x[0] + h.off_diag() * x[1],
                self.p[1] + h.off_diag() * x[0] + h.diag(1) * x[1],
            ]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunctionFamily {
    dim: usize,
    members: Vec<TestQuadratic>,
}

impl TestFunctionFamily {
    /// The zero quadratic followed by `count` random members with gradient
    /// entries in `[-grad, grad]` and Hessian entries in `[-hess, hess]`.
    pub fn sampled(dim: usize, count: usize, grad: f64, hess: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut members = vec![TestQuadratic {
            a: 0.0,
            p: [0.0; 2],
            hessian: SymMatrix::zero(dim),
        }];
        for _ in 0..count {
            let mut p = [0.0; 2];
            for v in p.iter_mut().take(dim) {
                *v = rng.gen_range(-grad..=grad);
            }
            let hessian = if dim == 1 {
                SymMatrix::scalar(rng.gen_range(-hess..=hess))
            } else {
                SymMatrix::new2(
                    rng.gen_range(-hess..=hess),
                    rng.gen_range(-hess..=hess),
                    rng.gen_range(-hess..=hess),
                )
            };
            members.push(TestQuadratic {
                a: rng.gen_range(-1.0..=1.0),
                p,
                hessian,
            });
        }
        Self { dim, members }
    }

    pub fn from_members(dim: usize, mut members: Vec<TestQuadratic>) -> Self {
        let zero = TestQuadratic {
            a: 0.0,
            p: [0.0; 2],
            hessian: SymMatrix::zero(dim),
        };
        if !members.contains(&zero) {
            members.insert(0, zero);
        }
        Self { dim, members }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn members(&self) -> &[TestQuadratic] {
        &self.members
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Sub,
    Super,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TouchingPoint {
    pub member: usize,
    pub step: usize,
    pub node: usize,
    pub t: f64,
    pub x: [f64; 2],
    /// `Caputo[u] + F(t, x, u, ∇φ, ∇²φ)` with the Caputo part taken on `u`.
    pub residual: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViscosityReport {
    pub side: Side,
    pub tol: f64,
    pub members: usize,
    pub points: Vec<TouchingPoint>,
}

impl ViscosityReport {
    pub fn passed(&self) -> bool {
        self.points.iter().all(|p| p.passed)
    }

    pub fn violations(&self) -> impl Iterator<Item = &TouchingPoint> {
        self.points.iter().filter(|p| !p.passed)
    }

    /// Largest residual in the failing direction (`r` for sub, `-r` for super).
    pub fn worst(&self) -> f64 {
        let sign = match self.side {
            Side::Sub => 1.0,
            Side::Super => -1.0,
        };
        self.points
            .iter()
            .map(|p| sign * p.residual)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl fmt::Display for ViscosityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = match self.side {
            Side::Sub => "subsolution",
            Side::Super => "supersolution",
        };
        let bad = self.violations().count();
        if bad == 0 {
            write!(
                f,
                "{side}: no violation found in family ({} members, {} touching points, worst {:.3e}, tol {:.3e})",
                self.members,
                self.points.len(),
                self.worst(),
                self.tol
            )
        } else {
            write!(
                f,
                "{side}: {bad} of {} touching points violate tol {:.3e} (worst {:.3e})",
                self.points.len(),
                self.tol,
                self.worst()
            )
        }
    }
}

/// Nodes within one grid step (including diagonals).
fn window(geom: &DomainGeometry, node: usize) -> impl Iterator<Item = usize> + '_ {
    let offsets: &[[isize; 2]] = if geom.dim() == 1 {
        &[[-1, 0], [1, 0]]
    } else {
        &[
            [-1, -1],
            [-1, 0],
            [-1, 1],
            [0, -1],
            [0, 1],
            [1, -1],
            [1, 0],
            [1, 1],
        ]
    };
    offsets
        .iter()
        .filter_map(move |o| geom.neighbor(node, *o, false))
}

/// Touches `u` with every family member at every time level `t_n > 0`.
///
/// At each level the quadratic is shifted onto `u(t_n, ·)` at the interior
/// nodes where `u − φ` has a local maximum (sub) or minimum (super) over the
/// one-step window; there the residual uses the L1 Caputo value of `u`
/// itself and the derivatives of `φ`.
pub fn check_viscosity_residuals(
    u: &GridFunction,
    spec: &ProblemSpec,
    family: &TestFunctionFamily,
    side: Side,
    tol: f64,
) -> Result<ViscosityReport, VerifyError> {
    if !(tol.is_finite() && tol > 0.0) && tol != f64::INFINITY {
        return Err(VerifyError::BadTolerance(tol));
    }
    if family.members.is_empty() {
        return Err(VerifyError::EmptyFamily);
    }
    if u.geometry() != &spec.geometry || u.time() != &spec.time {
        return Err(VerifyError::GridMismatch);
    }
    let geom = spec.geometry;
    let time = spec.time;
    let weights = spec.weights();
    let interior = geom.interior_nodes();
    let coords: Vec<[f64; 2]> = (0..geom.node_count()).map(|n| geom.coords(n)).collect();
    let sign = match side {
        Side::Sub => 1.0,
        Side::Super => -1.0,
    };
    let points: Vec<TouchingPoint> = family
        .members
        .par_iter()
        .enumerate()
        .flat_map_iter(|(k, phi)| {
            let phi_vals: Vec<f64> = coords.iter().map(|x| phi.value(*x)).collect();
            let mut out = Vec::new();
            for n in 1..=time.steps() {
                let slice = u.slice(n);
                let w = |i: usize| sign * (slice[i] - phi_vals[i]);
                for &node in &interior {
                    let wi = w(node);
                    if window(&geom, node).any(|j| w(j) > wi) {
                        continue;
                    }
                    let x = coords[node];
                    let caputo = discrete_caputo(u, &weights, n, node);
                    let f = spec.operator.eval(
                        time.node(n),
                        x,
                        slice[node],
                        phi.gradient(x),
                        &phi.hessian,
                    );
                    let residual = caputo + f;
                    out.push(TouchingPoint {
                        member: k,
                        step: n,
                        node,
                        t: time.node(n),
                        x,
                        residual,
                        passed: sign * residual <= tol,
                    });
                }
            }
            out
        })
        .collect();
    Ok(ViscosityReport {
        side,
        tol,
        members: family.members.len(),
        points,
    })
}

/// `tol = C (τ^{2-α} + h^q)` with `q` the stencil's consistency order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToleranceModel {
    pub constant: f64,
    pub alpha: f64,
    pub space_order: u32,
}

impl ToleranceModel {
    pub fn for_spec(spec: &ProblemSpec, constant: f64) -> Result<Self, VerifyError> {
        Ok(Self {
            constant,
            alpha: spec.order.max_alpha(),
            space_order: spec.stencil()?.consistency_order(),
        })
    }

    pub fn scale(&self, spec: &ProblemSpec) -> f64 {
        let tau = spec.time.tau();
        let h = spec.geometry.max_spacing();
        tau.powf(2.0 - self.alpha) + h.powi(self.space_order as i32)
    }

    pub fn tol(&self, spec: &ProblemSpec) -> f64 {
        self.constant * self.scale(spec)
    }
}

fn halved(spec: &ProblemSpec) -> Result<ProblemSpec, VerifyError> {
    let g = spec.geometry;
    let coarse_geom = if g.dim() == 1 {
        DomainGeometry::interval(g.length(0), (g.cells(0) / 2).max(2))
    } else {
        DomainGeometry::rectangle(
            [g.length(0), g.length(1)],
            [(g.cells(0) / 2).max(2), (g.cells(1) / 2).max(2)],
        )
    }
    .map_err(SolverError::from)?;
    // Initial data is resampled by injection from the fine grid.
    let ratio = [
        g.cells(0) / coarse_geom.cells(0),
        if g.dim() == 2 {
            g.cells(1) / coarse_geom.cells(1)
        } else {
            1
        },
    ];
    let u0: Vec<f64> = (0..coarse_geom.node_count())
        .map(|n| {
            let ij = coarse_geom.multi_index(n);
            spec.initial()[g.index([ij[0] * ratio[0], ij[1] * ratio[1]])]
        })
        .collect();
    let time = crate::fracops::TimeGrid::new(spec.time.horizon(), (spec.time.steps() / 2).max(2))
        .map_err(SolverError::from)?;
    let mut coarse = ProblemSpec::new(
        coarse_geom,
        time,
        spec.order.clone(),
        spec.operator.clone(),
        u0,
        spec.boundary,
        spec.stepping,
    )?;
    coarse.settings = spec.settings;
    Ok(coarse)
}

/// Estimates `C` from a half-resolution calibration run: twice the worst
/// residual of the discrete solution on either side, relative to the scale,
/// and at least 1.
pub fn calibrate_tolerance(
    spec: &ProblemSpec,
    family: &TestFunctionFamily,
) -> Result<ToleranceModel, VerifyError> {
    let coarse = halved(spec)?;
    let sol = solve(&coarse)?;
    let sub = check_viscosity_residuals(&sol.values, &coarse, family, Side::Sub, f64::INFINITY)?;
    let sup = check_viscosity_residuals(&sol.values, &coarse, family, Side::Super, f64::INFINITY)?;
    let worst = sub.worst().max(sup.worst()).max(0.0);
    let base = ToleranceModel::for_spec(&coarse, 1.0)?;
    let constant = (2.0 * worst / base.scale(&coarse)).max(1.0);
    ToleranceModel::for_spec(spec, constant)
}

/// Where a comparison fails, with the jump term that explains it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonWitness {
    /// First node in time-major order with `u > v + tol`.
    pub step: usize,
    pub node: usize,
    pub t: f64,
    pub x: [f64; 2],
    pub gap: f64,
    /// Location and size of the global maximum of `u − v`.
    pub max_step: usize,
    pub max_node: usize,
    pub max_gap: f64,
    /// `J[u − v]` there: `Σ λ (w(t) − w(0)) / (t^α Γ(1−α))`, positive whenever
    /// the gap opened after `t = 0`.
    pub jump_term: f64,
    /// L1 Caputo value of `u − v` there; non-negative at a running maximum.
    pub discrete_caputo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonOutcome {
    /// `u ≤ v + tol` on `{t = 0}` and on boundary nodes.
    pub hypothesis: bool,
    /// `hypothesis ⇒ u ≤ v + tol everywhere`.
    pub holds: bool,
    pub witness: Option<ComparisonWitness>,
}

/// Checks the implication "ordered on the parabolic boundary ⇒ ordered
/// everywhere". A failed hypothesis makes the check hold vacuously.
pub fn check_comparison(
    u: &GridFunction,
    v: &GridFunction,
    order: &TimeOrder,
    tol: f64,
) -> Result<ComparisonOutcome, VerifyError> {
    if !u.same_grid(v) {
        return Err(VerifyError::GridMismatch);
    }
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(VerifyError::BadTolerance(tol));
    }
    let geom = *u.geometry();
    let time = *u.time();
    let m = geom.node_count();
    let boundary = geom.boundary_nodes();
    let hypothesis = (0..m).all(|i| u.at(0, i) <= v.at(0, i) + tol)
        && (1..time.len()).all(|n| boundary.iter().all(|&i| u.at(n, i) <= v.at(n, i) + tol));
    let first = (0..time.len())
        .flat_map(|n| (0..m).map(move |i| (n, i)))
        .find(|&(n, i)| u.at(n, i) > v.at(n, i) + tol);
    let Some((step, node)) = first else {
        return Ok(ComparisonOutcome {
            hypothesis,
            holds: true,
            witness: None,
        });
    };
    let (mut max_step, mut max_node, mut max_gap) = (0, 0, f64::NEG_INFINITY);
    for n in 0..time.len() {
        for i in 0..m {
            let g = u.at(n, i) - v.at(n, i);
            if g > max_gap {
                (max_step, max_node, max_gap) = (n, i, g);
            }
        }
    }
    let diff = GridFunction::new(
        time,
        geom,
        u.values()
            .iter()
            .zip(v.values())
            .map(|(a, b)| a - b)
            .collect(),
    )
    .map_err(SolverError::from)?;
    let (jump_term, caputo) = if max_step == 0 {
        (0.0, 0.0)
    } else {
        let t = time.node(max_step);
        let w0 = diff.at(0, max_node);
        let jump = order
            .terms()
            .iter()
            .map(|(lambda, o)| lambda * jump_coefficient(*o, t) * (max_gap - w0))
            .sum();
        let weights = order.l1_weights(time.tau(), time.steps());
        (jump, discrete_caputo(&diff, &weights, max_step, max_node))
    };
    Ok(ComparisonOutcome {
        hypothesis,
        holds: !hypothesis,
        witness: Some(ComparisonWitness {
            step,
            node,
            t: time.node(step),
            x: geom.coords(node),
            gap: u.at(step, node) - v.at(step, node),
            max_step,
            max_node,
            max_gap,
            jump_term,
            discrete_caputo: caputo,
        }),
    })
}

fn jump_coefficient(order: FractionalOrder, t: f64) -> f64 {
    if order.is_classical() {
        0.0
    } else {
        let a = order.alpha();
        1.0 / (t.powf(a) * gamma_unchecked(1.0 - a))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryMaximumReport {
    /// Space-time nodes `(n ≥ 1, i)` where `u` reaches its running maximum in time
    /// and its history is not constant.
    pub candidates: usize,
    pub checked: usize,
    pub violations: usize,
    pub min_caputo: f64,
}

/// The L1 Caputo value at a running maximum is a positive combination of
/// `uⁿ − uᵐ ≥ 0`, hence non-negative. Checks up to `samples` such nodes.
pub fn check_history_maximum_sign(
    u: &GridFunction,
    order: &TimeOrder,
    samples: usize,
    seed: u64,
) -> HistoryMaximumReport {
    let time = *u.time();
    let m = u.geometry().node_count();
    let weights = order.l1_weights(time.tau(), time.steps());
    let mut candidates = Vec::new();
    for i in 0..m {
        let mut running = u.at(0, i);
        let mut lowest = running;
        for n in 1..time.len() {
            let v = u.at(n, i);
            if v >= running && lowest < v {
                candidates.push((n, i));
            }
            running = running.max(v);
            lowest = lowest.min(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<(usize, usize)> = if candidates.len() <= samples {
        candidates.clone()
    } else {
        let mut idx = sample(&mut rng, candidates.len(), samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| candidates[k]).collect()
    };
    let mut report = HistoryMaximumReport {
        candidates: candidates.len(),
        checked: picked.len(),
        violations: 0,
        min_caputo: f64::INFINITY,
    };
    for (n, i) in picked {
        let c = discrete_caputo(u, &weights, n, i);
        report.min_caputo = report.min_caputo.min(c);
        if c < 0.0 {
            report.violations += 1;
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaLimitRow {
    pub alpha: f64,
    /// Space-time sup distance to the classical run.
    pub distance: f64,
    /// Sup distance at the final time.
    pub final_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaLimitTable {
    pub rows: Vec<AlphaLimitRow>,
}

impl AlphaLimitTable {
    /// Whether the distances of the last `k` rows are non-increasing.
    pub fn tail_non_increasing(&self, k: usize) -> bool {
        let start = self.rows.len().saturating_sub(k);
        self.rows[start..]
            .windows(2)
            .all(|w| w[1].distance <= w[0].distance)
    }
}

/// Solves `spec` at each `α` and measures the distance to the `α = 1` run
/// (computed here unless `reference` is given).
pub fn alpha_limit_study(
    spec: &ProblemSpec,
    alphas: &[f64],
    reference: Option<&Solution>,
) -> Result<AlphaLimitTable, VerifyError> {
    if alphas.is_empty()
        || alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0))
        || alphas.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(VerifyError::BadAlphas(alphas.to_vec()));
    }
    let owned;
    let reference = match reference {
        Some(r) => r,
        None => {
            owned = solve(&spec.with_order(FractionalOrder::classical()))?;
            &owned
        }
    };
    let runs: Vec<Result<Solution, SolverError>> = alphas
        .par_iter()
        .map(|&a| {
            let order = FractionalOrder::new(a)?;
            solve(&spec.with_order(order))
        })
        .collect();
    let last = spec.time.steps();
    let mut rows = Vec::with_capacity(alphas.len());
    for (&alpha, run) in alphas.iter().zip(runs) {
        let run = run?;
        if !run.values.same_grid(&reference.values) {
            return Err(VerifyError::GridMismatch);
        }
        let final_distance = run
            .values
            .slice(last)
            .iter()
            .zip(reference.values.slice(last))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        rows.push(AlphaLimitRow {
            alpha,
            distance: run.values.max_abs_diff(&reference.values),
            final_distance,
        });
    }
    Ok(AlphaLimitTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat(nt: usize, nx: usize) -> ProblemSpec {
        ProblemSpec::fractional_heat(0.5, 0.1, nt, nx).unwrap()
    }

    #[test]
    fn family_contains_zero() {
        let fam = TestFunctionFamily::sampled(2, 5, 1.0, 1.0, 3);
        assert_eq!(fam.members()[0].value([0.3, 0.7]), 0.0);
        assert_eq!(fam.members().len(), 6);
        let fam = TestFunctionFamily::from_members(1, vec![]);
        assert_eq!(fam.members().len(), 1);
    }

    #[test]
    fn discrete_solution_passes_both_sides() {
        let spec = heat(80, 40);
        let sol = solve(&spec).unwrap();
        let fam = TestFunctionFamily::sampled(1, 24, 4.0, 20.0, 1);
        let model = calibrate_tolerance(&spec, &fam).unwrap();
        let tol = model.tol(&spec);
        for side in [Side::Sub, Side::Super] {
            let rep = check_viscosity_residuals(&sol.values, &spec, &fam, side, tol).unwrap();
            assert!(rep.passed(), "{rep}");
            assert!(!rep.points.is_empty());
        }
    }

    #[test]
    fn spike_and_dip_are_caught() {
        let spec = heat(40, 20);
        let sol = solve(&spec).unwrap();
        let fam = TestFunctionFamily::sampled(1, 8, 1.0, 1.0, 2);
        let mut spiked = sol.values.clone();
        spiked.set(20, 10, spiked.at(20, 10) + 0.1);
        let rep = check_viscosity_residuals(&spiked, &spec, &fam, Side::Sub, 1e-3).unwrap();
        assert!(rep.violations().any(|p| p.step == 20 && p.node == 10));
        let mut dipped = sol.values.clone();
        dipped.set(20, 10, dipped.at(20, 10) - 0.1);
        let rep = check_viscosity_residuals(&dipped, &spec, &fam, Side::Super, 1e-3).unwrap();
        assert!(rep.violations().any(|p| p.step == 20 && p.node == 10));
    }

    #[test]
    fn comparison_reflexive_and_fixture() {
        let spec = heat(20, 16);
        let sol = solve(&spec).unwrap();
        let out = check_comparison(&sol.values, &sol.values, &spec.order, 0.0).unwrap();
        assert!(out.hypothesis && out.holds && out.witness.is_none());

        let mut v = sol.values.clone();
        for i in 1..16 {
            v.set(20, i, v.at(20, i) - 0.5);
        }
        let out = check_comparison(&sol.values, &v, &spec.order, 1e-12).unwrap();
        assert!(out.hypothesis && !out.holds);
        let w = out.witness.unwrap();
        assert_eq!((w.step, w.node), (20, 1));
        assert!(w.jump_term > 0.0 && w.discrete_caputo > 0.0);
    }

    #[test]
    fn history_maximum_sign_on_random_series() {
        let geom = DomainGeometry::interval(1.0, 4).unwrap();
        let time = crate::fracops::TimeGrid::new(1.0, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values: Vec<f64> = (0..51 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = GridFunction::new(time, geom, values).unwrap();
        let order = TimeOrder::from(FractionalOrder::new(0.3).unwrap());
        let rep = check_history_maximum_sign(&u, &order, 1000, 0);
        assert!(rep.checked > 0);
        assert_eq!(rep.violations, 0);
    }

    #[test]
    fn alpha_limit_entries() {
        let spec = heat(40, 16);
        let table = alpha_limit_study(&spec, &[0.9, 0.99, 1.0], None).unwrap();
        assert_eq!(table.rows[2].distance, 0.0);
        assert!(table.tail_non_increasing(3));

        let zero = spec.with_initial(vec![0.0; 17]).unwrap();
        let table = alpha_limit_study(&zero, &[0.5, 0.9], None).unwrap();
        assert!(table.rows.iter().all(|r| r.distance == 0.0));
        assert!(alpha_limit_study(&spec, &[0.9, 0.5], None).is_err());
    }
}
