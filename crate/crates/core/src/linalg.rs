//! Sparse storage and the direct/iterative solvers behind the φ-FEM system.

use crate::{Error, Result};

/// Square sparse matrix in compressed-row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the matrix from triplets, summing duplicates in input order.
    /// The result depends only on the triplet sequence, so a fixed
    /// assembly order gives a bitwise reproducible matrix.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; n + 1];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({i}, {j}) outside a {n}x{n} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("matrix entry ({i}, {j})")));
            }
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        // Bucket by row, stable with respect to input order.
        let mut next = counts.clone();
        let mut by_row = vec![(0usize, 0.0f64); triplets.len()];
        for &(i, j, v) in triplets {
            by_row[next[i]] = (j, v);
            next[i] += 1;
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..n {
            let row = &mut by_row[counts[i]..counts[i + 1]];
            row.sort_by_key(|&(j, _)| j); // stable: duplicates keep input order
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut acc = 0.0;
                while k < row.len() && row[k].0 == j {
                    acc += row[k].1;
                    k += 1;
                }
                indices.push(j);
                values.push(acc);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            n,
            indptr,
            indices,
            values,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = self.indptr[i]..self.indptr[i + 1];
        match self.indices[row.clone()].binary_search(&j) {
            Ok(k) => self.values[row.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.indptr[i]..self.indptr[i + 1])
                    .map(|k| self.values[k] * x[self.indices[k]])
                    .sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for k in self.indptr[i]..self.indptr[i + 1] {
                row[self.indices[k]] = self.values[k];
            }
        }
        d
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[k];
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖A x − b‖₂ / max(1, ‖b‖₂)`.
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    norm2(&r) / norm2(b).max(1.0)
}

/// LU factorization with partial pivoting of a banded matrix.
///
/// Row `i` of the working array holds columns `[i - kl, i + kl + ku]`; the
/// extra `kl` super-diagonals absorb fill from row interchanges. Multipliers
/// of step `k` are kept per step and never permuted afterwards, so the
/// forward solve interleaves interchanges and eliminations.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    rows: Vec<f64>,
    pivots: Vec<usize>,
    multipliers: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut rows = vec![0.0; n * width];
        // Column j of row i lives at slot j + kl - i.
        for i in 0..n {
            for k in a.indptr[i]..a.indptr[i + 1] {
                rows[i * width + a.indices[k] + kl - i] = a.values[k];
            }
        }
        let mut pivots = vec![0usize; n];
        let mut multipliers = vec![0.0; n * kl.max(1)];
        let scale = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * f64::EPSILON * 1e-3;

        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let slot = |i: usize, j: usize| i * width + j + kl - i;

            let mut p = k;
            let mut best = rows[slot(k, k)].abs();
            for i in k + 1..=last_row {
                let v = rows[slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(Error::Singular(format!("zero pivot at column {k}")));
            }
            pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    rows.swap(slot(k, j), slot(p, j));
                }
            }
            let pivot = rows[slot(k, k)];
            for i in k + 1..=last_row {
                let l = rows[slot(i, k)] / pivot;
                multipliers[k * kl + (i - k - 1)] = l;
                rows[slot(i, k)] = 0.0;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        rows[slot(i, j)] -= l * rows[slot(k, j)];
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            width,
            rows,
            pivots,
            multipliers,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, ku, width) = (self.n, self.kl, self.ku, self.width);
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            x.swap(k, p);
            let xk = x[k];
            for i in k + 1..=(k + kl).min(n.saturating_sub(1)) {
                x[i] -= self.multipliers[k * kl + (i - k - 1)] * xk;
            }
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..=(i + kl + ku).min(n - 1) {
                acc -= self.rows[i * width + j + kl - i] * x[j];
            }
            x[i] = acc / self.rows[i * width + kl];
        }
        x
    }
}

/// Restarted right-preconditioned GMRES.
pub fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    x0: Vec<f64>,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    tol: f64,
    restart: usize,
    max_restarts: usize,
) -> (Vec<f64>, f64) {
    let n = a.n;
    let bnorm = norm2(b).max(1.0);
    let mut x = x0;
    let mut res = relative_residual(a, &x, b);
    for _ in 0..max_restarts {
        if res <= tol {
            break;
        }
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let beta = norm2(&r);
        if beta == 0.0 {
            break;
        }
        let mut basis = vec![r.iter().map(|v| v / beta).collect::<Vec<f64>>()];
        let mut hess: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        let mut zs: Vec<Vec<f64>> = Vec::new();
        for j in 0..restart {
            let z = precond(&basis[j]);
            let mut w = a.matvec(&z);
            zs.push(z);
            let mut h = vec![0.0; j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij: f64 = w.iter().zip(v).map(|(p, q)| p * q).sum();
                h[i] = hij;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
            }
            h[j + 1] = norm2(&w);
            for i in 0..j {
                let t = cs[i] * h[i] + sn[i] * h[i + 1];
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
                h[i] = t;
            }
            let denom = (h[j] * h[j] + h[j + 1] * h[j + 1]).sqrt();
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (h[j] / denom, h[j + 1] / denom) };
            cs.push(c);
            sn.push(s);
            let next_w = h[j + 1];
            h[j] = c * h[j] + s * h[j + 1];
            h[j + 1] = 0.0;
            g.push(-s * g[j]);
            g[j] *= c;
            hess.push(h);
            if next_w == 0.0 || g[j + 1].abs() / bnorm <= tol * 0.1 || j + 1 == restart || j + 1 >= n {
                break;
            }
            basis.push(w.iter().map(|v| v / next_w).collect());
        }
        let m = hess.len();
        let mut y = vec![0.0; m];
        for i in (0..m).rev() {
            let mut acc = g[i];
            for k in i + 1..m {
                acc -= hess[k][i] * y[k];
            }
            y[i] = acc / hess[i][i];
        }
        for (yi, z) in y.iter().zip(&zs) {
            for (xk, zk) in x.iter_mut().zip(z) {
                *xk += yi * zk;
            }
        }
        res = relative_residual(a, &x, b);
    }
    (x, res)
}

/// Solves `A x = b` to relative residual `tol`: banded LU with iterative
/// refinement, then LU-preconditioned GMRES if refinement stalls. A singular
/// factorization falls back to unpreconditioned GMRES.
pub fn solve(a: &CsrMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    if b.len() != a.n {
        return Err(Error::ShapeMismatch(format!(
            "rhs of length {} for a {}x{} matrix",
            b.len(),
            a.n,
            a.n
        )));
    }
    if a.n == 0 {
        return Ok(Vec::new());
    }
    match BandedLu::factor(a) {
        Ok(lu) => {
            let mut x = lu.solve(b);
            let mut res = relative_residual(a, &x, b);
            for _ in 0..3 {
                if res <= tol {
                    break;
                }
                let ax = a.matvec(&x);
                let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
                let dx = lu.solve(&r);
                for (xi, d) in x.iter_mut().zip(&dx) {
                    *xi += d;
                }
                res = relative_residual(a, &x, b);
            }
            if res <= tol && x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
            let (x, res) = gmres(a, b, x, &|v| lu.solve(v), tol, 50, 20);
            if res <= tol {
                Ok(x)
            } else {
                Err(Error::SolverNonConvergence { residual: res })
            }
        }
        Err(_) => {
            let (x, res) = gmres(a, b, vec![0.0; a.n], &|v| v.to_vec(), tol, 200, 50);
            if res <= tol && x.iter().all(|v| v.is_finite()) {
                Ok(x)
            } else {
                Err(Error::SolverNonConvergence { residual: res })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                if rng.random::<f64>() < 0.7 || i == j {
                    t.push((i, j, rng.random::<f64>() * 2.0 - 1.0));
                }
            }
        }
        CsrMatrix::from_triplets(n, &t).unwrap()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, &[(0, 1, 1.0), (1, 0, 2.0), (0, 1, 0.5), (0, 0, 3.0)]).unwrap();
        assert_eq!(a.to_dense(), vec![vec![3.0, 1.5], vec![2.0, 0.0]]);
        assert_eq!(a.get(0, 1), 1.5);
        assert!(CsrMatrix::from_triplets(2, &[(2, 0, 1.0)]).is_err());
        assert!(CsrMatrix::from_triplets(2, &[(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn banded_lu_solves_nonsymmetric_systems() {
        for (n, kl, ku, seed) in [(1, 0, 0, 1), (12, 2, 3, 2), (60, 7, 4, 3), (200, 15, 15, 4)] {
            let a = random_banded(n, kl, ku, seed);
            let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let b = a.matvec(&x_true);
            let x = solve(&a, &b, 1e-10).unwrap();
            assert!(relative_residual(&a, &x, &b) <= 1e-12);
        }
    }

    #[test]
    fn pivoting_is_required_and_handled() {
        // Zero on the diagonal: no factorization without row interchange.
        let a = CsrMatrix::from_triplets(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 2.0), (2, 1, 3.0), (2, 2, 1.0)]).unwrap();
        let lu = BandedLu::factor(&a).unwrap();
        let x = lu.solve(&[1.0, 2.0, 3.0]);
        assert!(relative_residual(&a, &x, &[1.0, 2.0, 3.0]) < 1e-15);
    }

    #[test]
    fn singular_matrix_reported() {
        let a = CsrMatrix::from_triplets(3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 0, 1.0)]).unwrap();
        assert!(BandedLu::factor(&a).is_err());
        assert!(matches!(solve(&a, &[1.0, 1.0, 5.0], 1e-10), Err(Error::SolverNonConvergence { .. })));
    }

    #[test]
    fn gmres_converges_with_identity_preconditioner() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.5));
            }
        }
        let a = CsrMatrix::from_triplets(n, &t).unwrap();
        let b: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let (x, res) = gmres(&a, &b, vec![0.0; n], &|v| v.to_vec(), 1e-12, 30, 10);
        assert!(res <= 1e-12);
        assert!(relative_residual(&a, &x, &b) <= 1e-12);
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let a = random_banded(30, 3, 3, 9);
        let x = solve(&a, &vec![0.0; 30], 1e-10).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
