//! Sup- and inf-convolutions of grid functions in space,
//!
//! ```text
//! f^ε(x) = max_{x'} f(x') - |x - x'|²/ε,     f_ε(x) = min_{x'} f(x') + |x - x'|²/ε,
//! ```
//!
//! with `x'` ranging over all grid nodes, boundary included.
//!
//! The fast path is the lower envelope of parabolas, one pass per axis. Both
//! it and the brute-force scan subtract the same tabulated penalties in the
//! same order (`y` first, then `x`), so they agree bit for bit.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::DomainGeometry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error("grid function has {got} values, geometry has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("value at node {0} is not finite")]
    NonFinite(usize),
    #[error("ε = {0} must be positive and finite")]
    BadEpsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeKind {
    Sup,
    Inf,
}

/// One finite value per node of a [`DomainGeometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGridFunction {
    geometry: DomainGeometry,
    values: Vec<f64>,
}

impl SpatialGridFunction {
    pub fn new(geometry: DomainGeometry, values: Vec<f64>) -> Result<Self, EnvelopeError> {
        if values.len() != geometry.node_count() {
            return Err(EnvelopeError::LengthMismatch {
                expected: geometry.node_count(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EnvelopeError::NonFinite(i));
        }
        Ok(Self { geometry, values })
    }

    pub fn from_fn(
        geometry: DomainGeometry,
        f: impl Fn([f64; 2]) -> f64,
    ) -> Result<Self, EnvelopeError> {
        Self::new(geometry, geometry.sample(f))
    }

    pub fn geometry(&self) -> &DomainGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn negated(&self) -> Self {
        Self {
            geometry: self.geometry,
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}

fn check_eps(eps: f64) -> Result<(), EnvelopeError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(EnvelopeError::BadEpsilon(eps))
    }
}

/// `pen[m] = (m h)² / ε` for `m = 0..=cells`.
fn penalty_table(geometry: &DomainGeometry, axis: usize, eps: f64) -> Vec<f64> {
    let h = geometry.spacing(axis);
    (0..=geometry.cells(axis))
        .map(|m| {
            let d = m as f64 * h;
            d * d / eps
        })
        .collect()
}

/// `f^ε` by the separable parabola-envelope algorithm.
pub fn sup_convolution(
    f: &SpatialGridFunction,
    eps: f64,
) -> Result<SpatialGridFunction, EnvelopeError> {
    check_eps(eps)?;
    let g = f.geometry;
    let mut values = f.values.clone();
    if g.dim() == 2 {
        let pen_y = penalty_table(&g, 1, eps);
        let ny = g.cells(1) + 1;
        values.par_chunks_mut(ny).for_each(|row| {
            let out = envelope_1d(row, &pen_y);
            row.copy_from_slice(&out);
        });
    }
    let pen_x = penalty_table(&g, 0, eps);
    let nx = g.cells(0) + 1;
    let stride = g.cells(1) + 1;
    let columns: Vec<Vec<f64>> = (0..stride)
        .into_par_iter()
        .map(|j| {
            let line: Vec<f64> = (0..nx).map(|i| values[i * stride + j]).collect();
            envelope_1d(&line, &pen_x)
        })
        .collect();
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            values[i * stride + j] = *v;
        }
    }
    Ok(SpatialGridFunction {
        geometry: g,
        values,
    })
}

/// `f_ε = -(-f)^ε`.
pub fn inf_convolution(
    f: &SpatialGridFunction,
    eps: f64,
) -> Result<SpatialGridFunction, EnvelopeError> {
    Ok(sup_convolution(&f.negated(), eps)?.negated())
}

/// `out[x] = max_q line[q] - pen[|x - q|]` in linear time.
///
/// The upper envelope of the parabolas `line[q] - c (x - q)²` is built with the
/// usual intersection test; each output then compares the envelope parabola
/// with its two envelope neighbours in floating point, so near-ties at
/// breakpoints resolve exactly as a direct scan would (smallest index wins).
fn envelope_1d(line: &[f64], pen: &[f64]) -> Vec<f64> {
    let n = line.len();
    if n == 1 {
        return line.to_vec();
    }
    // pen[m] = c m² with c = pen[1].
    let c = pen[1];
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    let mut starts: Vec<f64> = Vec::with_capacity(n);
    for q in 0..n {
        loop {
            match hull.last() {
                None => {
                    hull.push(q);
                    starts.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = crossing(line, c, p, q);
                    if s <= *starts.last().unwrap() {
                        hull.pop();
                        starts.pop();
                    } else {
                        hull.push(q);
                        starts.push(s);
                        break;
                    }
                }
            }
        }
    }
    let value = |q: usize, x: usize| line[q] - pen[q.abs_diff(x)];
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    for x in 0..n {
        while k + 1 < hull.len() && starts[k + 1] < x as f64 {
            k += 1;
        }
        let mut best_q = hull[k];
        let mut best = value(best_q, x);
        for nb in [k.wrapping_sub(1), k + 1] {
            if let Some(&q) = hull.get(nb) {
                let v = value(q, x);
                if v > best || (v == best && q < best_q) {
                    best = v;
                    best_q = q;
                }
            }
        }
        out.push(best);
    }
    out
}

/// Abscissa where parabola `q > p` overtakes parabola `p`.
fn crossing(line: &[f64], c: f64, p: usize, q: usize) -> f64 {
    let (pf, qf) = (p as f64, q as f64);
    0.5 * (pf + qf) - (line[q] - line[p]) / (2.0 * c * (qf - pf))
}

/// Direct `O(n²)` scan; the reference for [`sup_convolution`] and [`inf_convolution`].
pub fn envelope_brute(
    f: &SpatialGridFunction,
    eps: f64,
    kind: EnvelopeKind,
) -> Result<SpatialGridFunction, EnvelopeError> {
    check_eps(eps)?;
    match kind {
        EnvelopeKind::Sup => {
            let (values, _) = brute_sup(f, eps);
            Ok(SpatialGridFunction {
                geometry: f.geometry,
                values,
            })
        }
        EnvelopeKind::Inf => {
            let (values, _) = brute_sup(&f.negated(), eps);
            Ok(SpatialGridFunction {
                geometry: f.geometry,
                values,
            }
            .negated())
        }
    }
}

/// Maximizing node of `f(x') - |x - x'|²/ε` for every `x`, ties to the smallest index.
pub fn sup_argmax_brute(f: &SpatialGridFunction, eps: f64) -> Result<Vec<usize>, EnvelopeError> {
    check_eps(eps)?;
    Ok(brute_sup(f, eps).1)
}

fn brute_sup(f: &SpatialGridFunction, eps: f64) -> (Vec<f64>, Vec<usize>) {
    let g = f.geometry;
    let pen_x = penalty_table(&g, 0, eps);
    let pen_y = if g.dim() == 2 {
        penalty_table(&g, 1, eps)
    } else {
        vec![0.0]
    };
    let m = g.node_count();
    (0..m)
        .into_par_iter()
        .map(|x| {
            let [i, j] = g.multi_index(x);
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (q, fq) in f.values.iter().enumerate() {
                let [a, b] = g.multi_index(q);
                let v = if g.dim() == 2 {
                    (fq - pen_y[b.abs_diff(j)]) - pen_x[a.abs_diff(i)]
                } else {
                    fq - pen_x[a.abs_diff(i)]
                };
                if v > best {
                    best = v;
                    arg = q;
                }
            }
            (best, arg)
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize, lo: f64, hi: f64) -> DomainGeometry {
        // Shifted coordinates are irrelevant: only spacings enter the penalty.
        DomainGeometry::interval(hi - lo, n).unwrap()
    }

    #[test]
    fn constant_is_fixed() {
        let g = DomainGeometry::rectangle([1.0, 1.0], [7, 5]).unwrap();
        let f = SpatialGridFunction::new(g, vec![2.5; g.node_count()]).unwrap();
        assert_eq!(sup_convolution(&f, 0.1).unwrap().values(), f.values());
        assert_eq!(inf_convolution(&f, 0.1).unwrap().values(), f.values());
    }

    #[test]
    fn abs_value_at_origin() {
        let g = line(2000, -1.0, 1.0);
        let f = SpatialGridFunction::from_fn(g, |x| (x[0] - 1.0).abs()).unwrap();
        let eps = 0.1;
        let u = sup_convolution(&f, eps).unwrap();
        let mid = u.values()[1000];
        assert!((mid - eps / 4.0).abs() < 1e-5, "{mid}");
        assert_eq!(u, envelope_brute(&f, eps, EnvelopeKind::Sup).unwrap());
    }

    #[test]
    fn moreau_shrinkage_of_square() {
        let g = line(400, -2.0, 2.0);
        let f = SpatialGridFunction::from_fn(g, |x| (x[0] - 2.0).powi(2)).unwrap();
        let v = inf_convolution(&f, 2.0).unwrap();
        assert_eq!(v.values()[200], 0.0);
        // Continuous value x²/(1+ε); the grid minimizer is off by O(h).
        assert!((v.values()[300] - 1.0 / 3.0).abs() < 1e-4);
        assert_eq!(v, envelope_brute(&f, 2.0, EnvelopeKind::Inf).unwrap());
    }

    #[test]
    fn single_spike_cap() {
        let g = line(20, 0.0, 1.0);
        let mut vals = vec![0.0; 21];
        vals[10] = 1.0;
        let f = SpatialGridFunction::new(g, vals).unwrap();
        let eps = 0.5;
        let u = envelope_brute(&f, eps, EnvelopeKind::Sup).unwrap();
        for (i, v) in u.values().iter().enumerate() {
            let d = (i as f64 - 10.0) * 0.05;
            assert_eq!(*v, (1.0 - d * d / eps).max(0.0));
        }
        assert_eq!(u, sup_convolution(&f, eps).unwrap());
    }

    #[test]
    fn zero_and_bad_eps() {
        let g = DomainGeometry::rectangle([1.0, 2.0], [3, 4]).unwrap();
        let f = SpatialGridFunction::new(g, vec![0.0; g.node_count()]).unwrap();
        assert!(envelope_brute(&f, 0.3, EnvelopeKind::Sup)
            .unwrap()
            .values()
            .iter()
            .all(|v| *v == 0.0));
        assert!(sup_convolution(&f, 0.0).is_err());
        assert!(SpatialGridFunction::new(g, vec![f64::NAN; g.node_count()]).is_err());
        assert!(SpatialGridFunction::new(g, vec![0.0; 3]).is_err());
    }

    #[test]
    fn argmax_ties_break_low() {
        let g = line(4, 0.0, 1.0);
        let f = SpatialGridFunction::new(g, vec![1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        // Node 1 is equidistant from the two maxima.
        let arg = sup_argmax_brute(&f, 10.0).unwrap();
        assert_eq!(arg[1], 0);
    }

    fn random_function() -> impl Strategy<Value = (SpatialGridFunction, f64)> {
        (
            1usize..=2,
            1usize..14,
            1usize..14,
            0.01f64..2.0,
            any::<u64>(),
        )
            .prop_map(|(dim, nx, ny, eps, seed)| {
                use rand::{Rng, SeedableRng};
                let g = if dim == 1 {
                    DomainGeometry::interval(1.0, nx).unwrap()
                } else {
                    DomainGeometry::rectangle([1.0, 0.7], [nx, ny]).unwrap()
                };
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let vals = (0..g.node_count())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                (SpatialGridFunction::new(g, vals).unwrap(), eps)
            })
    }

    proptest! {
        #[test]
        fn fast_equals_brute((f, eps) in random_function()) {
            prop_assert_eq!(sup_convolution(&f, eps).unwrap(), envelope_brute(&f, eps, EnvelopeKind::Sup).unwrap());
            prop_assert_eq!(inf_convolution(&f, eps).unwrap(), envelope_brute(&f, eps, EnvelopeKind::Inf).unwrap());
        }

        #[test]
        fn ordering_and_duality((f, eps) in random_function()) {
            let u = sup_convolution(&f, eps).unwrap();
            let m = f.max_abs();
            for (a, b) in f.values().iter().zip(u.values()) {
                prop_assert!(a <= b && *b <= m);
            }
            let dual = sup_convolution(&f.negated(), eps).unwrap().negated();
            prop_assert_eq!(inf_convolution(&f, eps).unwrap(), dual);
        }
    }
}
