//! Banded LU with partial pivoting.
//!
//! Every system in this crate (Poisson solves, reduced active-set systems,
//! the optimality systems of the optimizer) couples a node only to its stencil
//! neighbours, so a dense band is all the storage we need.

use crate::error::{Error, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    // Row i holds columns i-kl ..= i+kl+ku; the extra kl slots absorb pivoting fill.
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i},{j}) outside band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    #[cfg(test)]
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, o) in out.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            *o = (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum();
        }
        out
    }

    /// Factor in place (LAPACK `gbtf2` ordering).
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut piv = vec![0usize; n];
        let mut lower = vec![0.0; n * kl.max(1)];
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for r in k + 1..=last_row {
                let v = self.data[self.slot(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= f64::EPSILON * scale * 1e-6 || best == 0.0 {
                return Err(Error::Singular { pivot: k });
            }
            piv[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    let a = self.slot(k, c);
                    let b = self.slot(p, c);
                    self.data.swap(a, b);
                }
            }
            let d = self.data[self.slot(k, k)];
            for r in k + 1..=last_row {
                let sr = self.slot(r, k);
                let f = self.data[sr] / d;
                self.data[sr] = 0.0;
                lower[k * kl + (r - k - 1)] = f;
                if f != 0.0 {
                    for c in k + 1..=last_col {
                        let src = self.data[self.slot(k, c)];
                        let dst = self.slot(r, c);
                        self.data[dst] -= f * src;
                    }
                }
            }
        }
        Ok(BandLu { a: self, piv, lower })
    }
}

/// Factorization produced by [`BandMatrix::factor`].
#[derive(Clone, Debug)]
pub struct BandLu {
    a: BandMatrix,
    piv: Vec<usize>,
    lower: Vec<f64>,
}

impl BandLu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let a = &self.a;
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        assert_eq!(x.len(), n);
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            if xk != 0.0 {
                for r in k + 1..=(k + kl).min(n - 1) {
                    x[r] -= self.lower[k * kl + (r - k - 1)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + kl + ku).min(n - 1);
            let mut s = x[k];
            for c in k + 1..=last_col {
                s -= a.data[a.slot(k, c)] * x[c];
            }
            x[k] = s / a.data[a.slot(k, k)];
        }
    }
}

/// `min ½ νᵀ M ν + qᵀ ν` over `ν >= 0` for a small symmetric positive definite
/// `M` (rows given as slices), by the Lawson-Hanson active-set method.
pub fn nonneg_qp(m: &[Vec<f64>], q: &[f64]) -> Result<Vec<f64>> {
    let n = q.len();
    let scale = m.iter().flatten().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let qs = q.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-13 * (qs + scale);
    let mut nu = vec![0.0; n];
    let mut free = vec![false; n];
    let solve_free = |free: &[bool]| -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let k = idx.len();
        let mut a = BandMatrix::zeros(k, k.saturating_sub(1), k.saturating_sub(1));
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                a.set(r, c, m[i][j]);
            }
        }
        let z = a.factor()?.solve(&idx.iter().map(|&i| -q[i]).collect::<Vec<_>>());
        let mut out = vec![0.0; n];
        for (r, &i) in idx.iter().enumerate() {
            out[i] = z[r];
        }
        Ok(out)
    };
    for _ in 0..3 * n + 10 {
        let grad: Vec<f64> = (0..n).map(|i| q[i] + (0..n).map(|j| m[i][j] * nu[j]).sum::<f64>()).collect();
        let Some(enter) = (0..n).filter(|&i| !free[i] && grad[i] < -tol).min_by(|&a, &b| grad[a].total_cmp(&grad[b]))
        else {
            return Ok(nu);
        };
        free[enter] = true;
        loop {
            let z = solve_free(&free)?;
            if (0..n).filter(|&i| free[i]).all(|i| z[i] > 0.0) {
                nu = z;
                break;
            }
            let step = (0..n)
                .filter(|&i| free[i] && z[i] <= 0.0)
                .map(|i| nu[i] / (nu[i] - z[i]))
                .fold(1.0_f64, f64::min);
            for i in 0..n {
                if free[i] {
                    nu[i] += step * (z[i] - nu[i]);
                    if nu[i] <= 0.0 || (z[i] <= 0.0 && nu[i] <= tol) {
                        nu[i] = 0.0;
                        free[i] = false;
                    }
                }
            }
            if !free.iter().any(|&f| f) {
                break;
            }
        }
    }
    Err(Error::NonConvergence { what: "nonnegative QP", iterations: 3 * n + 10 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut x = b.to_vec();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
            m.swap(k, p);
            x.swap(k, p);
            for r in k + 1..n {
                let f = m[r][k] / m[k][k];
                for c in k..n {
                    m[r][c] -= f * m[k][c];
                }
                x[r] -= f * x[k];
            }
        }
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|c| m[k][c] * x[c]).sum();
            x[k] = (x[k] - s) / m[k][k];
        }
        x
    }

    #[test]
    fn matches_dense_elimination_when_pivoting_is_forced() {
        let n = 9;
        let (kl, ku) = (2, 1);
        let mut band = BandMatrix::zeros(n, kl, ku);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // tiny diagonal makes the sub-diagonal the pivot
                let v = if i == j { 1e-3 } else { ((i * 7 + j * 3) % 5) as f64 - 2.2 };
                band.set(i, j, v);
                dense[i][j] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = band.clone().factor().unwrap().solve(&b);
        let xd = dense_solve(&dense, &b);
        for (u, v) in x.iter().zip(&xd) {
            assert!((u - v).abs() < 1e-10 * (1.0 + v.abs()), "{u} vs {v}");
        }
        let r = band.mul_vec(&x);
        for (u, v) in r.iter().zip(&b) {
            assert!((u - v).abs() < 1e-11);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut band = BandMatrix::zeros(3, 1, 1);
        band.set(0, 0, 1.0);
        band.set(1, 1, 0.0);
        band.set(2, 2, 1.0);
        assert!(matches!(band.factor(), Err(Error::Singular { .. })));
    }

    #[test]
    fn nonneg_qp_matches_kkt() {
        // optimum at ν = (0.5, 0, 0): grad = (0, 0.5+1, ...) >= 0
        let m = vec![vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 1.0], vec![0.0, 1.0, 2.0]];
        let q = vec![-1.0, 1.0, 0.5];
        let nu = nonneg_qp(&m, &q).unwrap();
        for i in 0..3 {
            let g: f64 = q[i] + (0..3).map(|j| m[i][j] * nu[j]).sum::<f64>();
            assert!(nu[i] >= 0.0 && g >= -1e-12 && (nu[i] * g).abs() < 1e-12, "{nu:?}");
        }
        assert!((nu[0] - 0.5).abs() < 1e-12);
    }
}
