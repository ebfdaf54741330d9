//! Uniform tensor grids on an interval `[0, L]` or a rectangle `[0, L₁] × [0, L₂]`,
//! and real-valued functions on the space-time grid built from them.

use thiserror::Error;

use crate::fracops::{TimeGrid, TimeSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("domain length {0} must be positive and finite")]
    BadLength(f64),
    #[error("each axis needs at least {min} cells (got {got})")]
    TooFewCells { min: usize, got: usize },
    #[error("grid function has {got} values, grid expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("grid function value at index {0} is not finite")]
    NonFinite(usize),
}

/// How the homogeneous boundary condition is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// `u = 0` pinned at boundary nodes.
    DirichletStrong,
    /// `∂u/∂n = 0` in the viscosity sense, enforced through mirrored ghost nodes.
    NeumannViscosity,
}

/// Spatial grid with its boundary data: node coordinates, boundary flags,
/// outward unit normals and distance to the boundary.
///
/// Nodes are numbered x-major: in two dimensions node `(i, j)` has index
/// `i·(n_y + 1) + j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainGeometry {
    dim: usize,
    lengths: [f64; 2],
    cells: [usize; 2],
}

impl DomainGeometry {
    pub fn interval(length: f64, cells: usize) -> Result<Self, GeometryError> {
        check_axis(length, cells)?;
        Ok(Self {
            dim: 1,
            lengths: [length, 0.0],
            cells: [cells, 0],
        })
    }

    pub fn rectangle(lengths: [f64; 2], cells: [usize; 2]) -> Result<Self, GeometryError> {
        check_axis(lengths[0], cells[0])?;
        check_axis(lengths[1], cells[1])?;
        Ok(Self {
            dim: 2,
            lengths,
            cells,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.lengths[axis]
    }

    pub fn cells(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.cells[axis] as f64
    }

    /// Largest spacing over the axes.
    pub fn max_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    pub fn node_count(&self) -> usize {
        (self.cells[0] + 1) * (self.cells[1] + 1)
    }

    /// Same geometry with the cell counts scaled by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        let mut g = *self;
        g.cells[0] *= factor;
        if self.dim == 2 {
            g.cells[1] *= factor;
        }
        g
    }

    pub fn index(&self, ij: [usize; 2]) -> usize {
        ij[0] * (self.cells[1] + 1) + ij[1]
    }

    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        let stride = self.cells[1] + 1;
        [node / stride, node % stride]
    }

    pub fn coords(&self, node: usize) -> [f64; 2] {
        let [i, j] = self.multi_index(node);
        let x = self.lengths[0] * i as f64 / self.cells[0] as f64;
        let y = if self.dim == 2 {
            self.lengths[1] * j as f64 / self.cells[1] as f64
        } else {
            0.0
        };
        [x, y]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let ij = self.multi_index(node);
        (0..self.dim).any(|a| ij[a] == 0 || ij[a] == self.cells[a])
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&n| self.is_boundary(n))
            .collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&n| !self.is_boundary(n))
            .collect()
    }

    /// Outward unit normal at a boundary node; corners use the normalized sum
    /// of the two side normals.
    pub fn outward_normal(&self, node: usize) -> Option<[f64; 2]> {
        let ij = self.multi_index(node);
        let mut n = [0.0f64; 2];
        for a in 0..self.dim {
            if ij[a] == 0 {
                n[a] = -1.0;
            } else if ij[a] == self.cells[a] {
                n[a] = 1.0;
            }
        }
        let norm = (n[0] * n[0] + n[1] * n[1]).sqrt();
        if norm == 0.0 {
            None
        } else {
            Some([n[0] / norm, n[1] / norm])
        }
    }

    /// Euclidean distance from the node to the boundary; zero on boundary nodes.
    pub fn distance(&self, node: usize) -> f64 {
        self.distance_at(self.coords(node))
    }

    pub fn distance_at(&self, x: [f64; 2]) -> f64 {
        (0..self.dim)
            .map(|a| x[a].min(self.lengths[a] - x[a]))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }

    pub fn diameter(&self) -> f64 {
        (self.lengths[0].powi(2) + self.lengths[1].powi(2)).sqrt()
    }

    /// Node at `offset` from `node`. Off-grid positions return `None`, or with
    /// `reflect` the mirror image across the boundary (ghost-node closure).
    pub fn neighbor(&self, node: usize, offset: [isize; 2], reflect: bool) -> Option<usize> {
        let ij = self.multi_index(node);
        let mut out = [0usize; 2];
        for a in 0..2 {
            let n = self.cells[a] as isize;
            let mut k = ij[a] as isize + offset[a];
            if k < 0 || k > n {
                if !reflect || n == 0 {
                    return None;
                }
                k = if k < 0 { -k } else { 2 * n - k };
                if k < 0 || k > n {
                    return None;
                }
            }
            out[a] = k as usize;
        }
        Some(self.index(out))
    }

    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..self.node_count()).map(|n| f(self.coords(n))).collect()
    }
}

fn check_axis(length: f64, cells: usize) -> Result<(), GeometryError> {
    if !(length.is_finite() && length > 0.0) {
        return Err(GeometryError::BadLength(length));
    }
    if cells < 1 {
        return Err(GeometryError::TooFewCells { min: 1, got: cells });
    }
    Ok(())
}

/// Real values on `TimeGrid × DomainGeometry`, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    time: TimeGrid,
    geometry: DomainGeometry,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(
        time: TimeGrid,
        geometry: DomainGeometry,
        values: Vec<f64>,
    ) -> Result<Self, GeometryError> {
        let expected = time.len() * geometry.node_count();
        if values.len() != expected {
            return Err(GeometryError::LengthMismatch {
                expected,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        Ok(Self {
            time,
            geometry,
            values,
        })
    }

    pub fn from_fn(
        time: TimeGrid,
        geometry: DomainGeometry,
        f: impl Fn(f64, [f64; 2]) -> f64,
    ) -> Self {
        let nodes = geometry.node_count();
        let mut values = Vec::with_capacity(time.len() * nodes);
        for n in 0..time.len() {
            let t = time.node(n);
            values.extend((0..nodes).map(|k| f(t, geometry.coords(k))));
        }
        Self {
            time,
            geometry,
            values,
        }
    }

    pub(crate) fn from_parts_unchecked(
        time: TimeGrid,
        geometry: DomainGeometry,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(values.len(), time.len() * geometry.node_count());
        Self {
            time,
            geometry,
            values,
        }
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn geometry(&self) -> &DomainGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, n: usize, node: usize) -> f64 {
        self.values[n * self.geometry.node_count() + node]
    }

    pub fn set(&mut self, n: usize, node: usize, v: f64) {
        let k = n * self.geometry.node_count() + node;
        self.values[k] = v;
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        let m = self.geometry.node_count();
        &self.values[n * m..(n + 1) * m]
    }

    pub fn slice_mut(&mut self, n: usize) -> &mut [f64] {
        let m = self.geometry.node_count();
        &mut self.values[n * m..(n + 1) * m]
    }

    /// Time history at one spatial node.
    pub fn series_at(&self, node: usize) -> TimeSeries {
        let values = (0..self.time.len()).map(|n| self.at(n, node)).collect();
        TimeSeries::new(self.time, values).expect("grid function values are finite")
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.time == other.time && self.geometry == other.geometry
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_boundary_data() {
        let g = DomainGeometry::interval(2.0, 4).unwrap();
        assert_eq!(g.node_count(), 5);
        assert_eq!(g.boundary_nodes(), vec![0, 4]);
        assert_eq!(g.outward_normal(0), Some([-1.0, 0.0]));
        assert_eq!(g.outward_normal(4), Some([1.0, 0.0]));
        assert_eq!(g.outward_normal(2), None);
        assert_eq!(g.distance(0), 0.0);
        assert_eq!(g.distance(1), 0.5);
        assert_eq!(g.distance(2), 1.0);
    }

    #[test]
    fn rectangle_normals_are_unit() {
        let g = DomainGeometry::rectangle([1.0, 2.0], [4, 6]).unwrap();
        for node in g.boundary_nodes() {
            let n = g.outward_normal(node).unwrap();
            assert!(((n[0] * n[0] + n[1] * n[1]).sqrt() - 1.0).abs() < 1e-15);
            assert_eq!(g.distance(node), 0.0);
        }
        for node in g.interior_nodes() {
            assert!(g.distance(node) > 0.0);
        }
        let corner = g.index([4, 6]);
        let n = g.outward_normal(corner).unwrap();
        assert!((n[0] - n[1]).abs() < 1e-15 && n[0] > 0.0);
    }

    #[test]
    fn neighbors_reflect_at_boundary() {
        let g = DomainGeometry::rectangle([1.0, 1.0], [3, 3]).unwrap();
        let origin = g.index([0, 0]);
        assert_eq!(g.neighbor(origin, [-1, 0], false), None);
        assert_eq!(g.neighbor(origin, [-1, 0], true), Some(g.index([1, 0])));
        assert_eq!(g.neighbor(origin, [-1, -1], true), Some(g.index([1, 1])));
        let top = g.index([3, 3]);
        assert_eq!(g.neighbor(top, [1, 0], true), Some(g.index([2, 3])));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(DomainGeometry::interval(0.0, 4).is_err());
        assert!(DomainGeometry::interval(1.0, 0).is_err());
        assert!(DomainGeometry::rectangle([1.0, 1.0], [4, 0]).is_err());
    }

    #[test]
    fn grid_function_layout() {
        let t = TimeGrid::new(1.0, 2).unwrap();
        let g = DomainGeometry::interval(1.0, 2).unwrap();
        let f = GridFunction::from_fn(t, g, |t, x| t + 10.0 * x[0]);
        assert_eq!(f.at(2, 1), 1.0 + 5.0);
        assert_eq!(f.slice(1), &[0.5, 5.5, 10.5]);
        assert_eq!(f.series_at(2).values(), &[10.0, 10.5, 11.0]);
        assert!(GridFunction::new(t, g, vec![0.0; 8]).is_err());
    }
}
