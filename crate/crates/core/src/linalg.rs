//! Banded LU without pivoting.
//!
//! The implicit time step produces Jacobians that are diagonally dominant
//! M-matrices with bandwidth `n_y + 2`, for which elimination without pivoting
//! is stable.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("zero or non-finite pivot at row {0}")]
    SingularPivot(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    /// `n × n` zero matrix with half-bandwidth `bw`.
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (2 * bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.bw
    }

    /// Row-major band storage: row `i` holds columns `i - bw ..= i + bw` in a
    /// slice of length `2 bw + 1`, column `j` at position `j + bw - i`.
    pub fn band(&self) -> &[f64] {
        &self.data
    }

    pub fn band_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(
            i.abs_diff(j) <= self.bw,
            "({i}, {j}) outside band {}",
            self.bw
        );
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.slot(i, j);
        self.data[k] += v;
    }

    /// In-place Doolittle factorization; `L` (unit diagonal) and `U` share storage.
    pub fn factorize(&mut self) -> Result<(), LinalgError> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let pivot = self.data[self.slot(k, k)];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(LinalgError::SingularPivot(k));
            }
            let last = (k + bw + 1).min(n);
            for i in k + 1..last {
                let ik = self.slot(i, k);
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                for j in k + 1..last {
                    let kj = self.data[self.slot(k, j)];
                    let ij = self.slot(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = rhs` in place using a matrix already passed through [`factorize`](Self::factorize).
    pub fn solve_factored(&self, rhs: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut acc = rhs[i];
            for j in i.saturating_sub(bw)..i {
                acc -= self.data[self.slot(i, j)] * rhs[j];
            }
            rhs[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = rhs[i];
            for j in i + 1..(i + bw + 1).min(n) {
                acc -= self.data[self.slot(i, j)] * rhs[j];
            }
            rhs[i] = acc / self.data[self.slot(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve() {
        let n = 6;
        let mut a = BandedMatrix::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 4.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                a.add(i, i + 1, -1.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a.get(i, j) * x[j]).sum::<f64>())
            .collect();
        a.factorize().unwrap();
        a.solve_factored(&mut rhs);
        for (got, want) in rhs.iter().zip(&x) {
            assert!((got - want).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_pivot_reported() {
        let mut a = BandedMatrix::zeros(2, 1);
        a.add(1, 1, 1.0);
        assert_eq!(a.factorize(), Err(LinalgError::SingularPivot(0)));
    }
}
