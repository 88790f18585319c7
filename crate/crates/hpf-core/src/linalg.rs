//! Minimal dense linear algebra for the second-order learners.
//!
//! Dimensions here are small (a few to a few hundred), so plain row-major
//! `Vec<f64>` storage with textbook Cholesky routines is both fast enough and
//! easy to keep deterministic.

use serde::{Deserialize, Serialize};

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }

    /// A += scale * g gᵀ
    pub fn add_outer(&mut self, g: &[f64], scale: f64) {
        debug_assert_eq!(g.len(), self.n);
        for i in 0..self.n {
            let gi = g[i] * scale;
            let row = &mut self.data[i * self.n..(i + 1) * self.n];
            for (rj, &gj) in row.iter_mut().zip(g) {
                *rj += gi * gj;
            }
        }
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        self.data
            .chunks_exact(self.n)
            .map(|row| dot(row, x))
            .collect()
    }

    /// Lower-triangular Cholesky factor of `self + shift·I`.
    ///
    /// Returns `None` if a pivot drops below `1e-300` (matrix not positive
    /// definite at this shift).
    pub fn cholesky(&self, shift: f64) -> Option<CholeskyFactor> {
        let n = self.n;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.at(i, j) + if i == j { shift } else { 0.0 };
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if sum <= 1e-300 {
                        return None;
                    }
                    l[i * n + j] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(CholeskyFactor { n, l })
    }
}

/// Lower-triangular Cholesky factor L with A = L Lᵀ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_consistent(&self) -> bool {
        self.l.len() == self.n * self.n && self.l.iter().all(|v| v.is_finite())
    }

    /// Factor of `shift·I`.
    pub fn scaled_identity(n: usize, shift: f64) -> Self {
        let mut l = vec![0.0; n * n];
        let d = shift.sqrt();
        for i in 0..n {
            l[i * n + i] = d;
        }
        CholeskyFactor { n, l }
    }

    /// Solve (L Lᵀ) x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        // forward: L y = b
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }

    /// Rank-1 update: factor of (L Lᵀ + v vᵀ), in place (Givens-based, stable
    /// for updates as opposed to downdates).
    pub fn rank1_update(&mut self, v: &[f64]) {
        let n = self.n;
        debug_assert_eq!(v.len(), n);
        let mut work = v.to_vec();
        for k in 0..n {
            let lkk = self.l[k * n + k];
            let wk = work[k];
            let r = (lkk * lkk + wk * wk).sqrt();
            if r == 0.0 {
                continue;
            }
            let c = r / lkk;
            let s = wk / lkk;
            self.l[k * n + k] = r;
            for i in k + 1..n {
                let lik = (self.l[i * n + k] + s * work[i]) / c;
                work[i] = c * work[i] - s * lik;
                self.l[i * n + k] = lik;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += a * x
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Compensated (Kahan) summation; keeps long telescoping sums at a few ulps.
pub fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> SquareMatrix {
        // Build Σ gᵢgᵢᵀ + 0.1 I from a cheap deterministic stream.
        let mut a = SquareMatrix::zeros(n);
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for _ in 0..2 * n {
            let g: Vec<f64> = (0..n).map(|_| next()).collect();
            a.add_outer(&g, 1.0);
        }
        for i in 0..n {
            *a.at_mut(i, i) += 0.1;
        }
        a
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        let a = spd(8, 3);
        let chol = a.cholesky(0.0).unwrap();
        let b: Vec<f64> = (0..8).map(|i| (i as f64) - 3.5).collect();
        let x = chol.solve(&b);
        let ax = a.mul_vec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10, "residual too large: {u} vs {v}");
        }
    }

    #[test]
    fn rank1_update_matches_fresh_factorization() {
        let mut a = spd(6, 9);
        let chol0 = a.cholesky(1e-9).unwrap();
        let mut inc = chol0;
        let mut state = 77u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for _ in 0..10 {
            let g: Vec<f64> = (0..6).map(|_| next()).collect();
            a.add_outer(&g, 1.0);
            inc.rank1_update(&g);
        }
        let fresh = a.cholesky(1e-9).unwrap();
        let b = vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.25];
        let xi = inc.solve(&b);
        let xf = fresh.solve(&b);
        for (u, v) in xi.iter().zip(&xf) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn kahan_telescopes_tightly() {
        let t = 1000u64;
        let s = kahan_sum((1..t).map(|k| ((k + 1) as f64 / k as f64).ln()));
        assert!((s - (t as f64).ln()).abs() < 1e-13);
    }
}
