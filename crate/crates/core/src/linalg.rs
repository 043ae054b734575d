//! Dense complex matrices and the handful of decompositions the rest of the
//! crate is built on.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration and the Hermitian
//! eigensolver is a cyclic two-sided Jacobi iteration. Both sweep pivots in a
//! fixed order, so identical inputs give bit-identical outputs.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Jacobi sweeps allowed before giving up.
const MAX_SWEEPS: usize = 80;
/// Relative off-diagonal size below which a pivot is considered converged.
const JACOBI_TOL: f64 = 1e-15;
/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as rounding noise and set to 0.
pub const PSD_CLAMP: f64 = 1e-9;
pub const HERMITIAN_TOL: f64 = 1e-9;

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        CMatrix { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!("{} entries cannot fill a {rows}x{cols} matrix", data.len())));
        }
        Ok(CMatrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input (test helper).
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        CMatrix { rows: r, cols: c, data: rows.iter().flatten().copied().collect() }
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    /// Outer product `u vᴴ`.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |r, c| u[r] * v[c].conj())
    }

    /// Matrix whose columns are the given vectors (all of equal length).
    pub fn from_columns(cols: &[Vec<C64>]) -> Self {
        let n = cols.len();
        let m = cols.first().map_or(0, Vec::len);
        Self::from_fn(m, n, |r, c| cols[c][r])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[C64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self[(r, c)] = v;
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn conj(&self) -> Self {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn add(&self, other: &CMatrix) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &CMatrix) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &CMatrix, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::contract(format!("elementwise op on {:?} and {:?}", self.shape(), other.shape())));
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<Self> {
        matmul(self, other)
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.cols {
            return Err(Error::contract(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|r| self.row(r).iter().zip(v).map(|(&a, &b)| a * b).sum()).collect())
    }

    /// Copies the listed rows, in the listed order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.rows) {
            return Err(Error::contract(format!("row {bad} out of range for {} rows", self.rows)));
        }
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Ok(CMatrix { rows: rows.len(), cols: self.cols, data })
    }

    /// Keeps the first `n` columns.
    pub fn leading_columns(&self, n: usize) -> Self {
        let n = n.min(self.cols);
        Self::from_fn(self.rows, n, |r, c| self[(r, c)])
    }

    /// Copies the square block `[start, start + len)` on both axes.
    pub fn principal_block(&self, start: usize, len: usize) -> Self {
        Self::from_fn(len, len, |r, c| self[(start + r, start + c)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.max_abs().max(1.0);
        for r in 0..self.rows {
            for c in r..self.cols {
                if (self[(r, c)] - self[(c, r)].conj()).norm() > tol * scale {
                    return false;
                }
            }
        }
        true
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for z in self.row(r) {
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

pub fn matmul(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.cols != b.rows {
        return Err(Error::contract(format!("matmul of {}x{} by {}x{}", a.rows, a.cols, b.rows, b.cols)));
    }
    let mut out = CMatrix::zeros(a.rows, b.cols);
    for r in 0..a.rows {
        let out_row = &mut out.data[r * b.cols..(r + 1) * b.cols];
        for (k, &aik) in a.row(r).iter().enumerate() {
            if aik == ZERO {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

pub fn frobenius_norm(a: &CMatrix) -> f64 {
    a.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `xᴴ y`
pub fn inner(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Rotates a vector so its largest-magnitude entry (first one on ties) is
/// real and non-negative. Returns the unit phase that was divided out.
pub fn normalize_phase(v: &mut [C64]) -> C64 {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let m = z.norm();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    if best_mag <= 0.0 {
        return ONE;
    }
    let phase = v[best] / best_mag;
    let rot = phase.conj();
    for z in v.iter_mut() {
        *z *= rot;
    }
    v[best] = C64::new(best_mag, 0.0);
    phase
}

/// Thin singular value decomposition `A = U diag(S) Vᴴ`.
///
/// For an `m x n` input, `U` is `m x k`, `V` is `n x k` with `k = min(m, n)`,
/// and `S` is sorted descending. Each right singular vector has its
/// largest-magnitude entry made real-positive (the matching left vector is
/// rotated by the same phase), which pins down labels built from `V`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> CMatrix {
        let k = self.s.len();
        CMatrix::from_fn(self.u.rows(), self.v.rows(), |r, c| {
            (0..k).map(|i| self.u[(r, i)] * self.s[i] * self.v[(c, i)].conj()).sum()
        })
    }

    /// Numerical rank with relative threshold `tol` against the largest singular value.
    pub fn rank(&self, tol: f64) -> usize {
        let top = self.s.first().copied().unwrap_or(0.0);
        self.s.iter().filter(|&&s| s > tol * top && s > 0.0).count()
    }
}

pub fn svd(a: &CMatrix) -> Result<SvdResult> {
    if a.rows == 0 || a.cols == 0 {
        return Err(Error::contract("svd of an empty matrix"));
    }
    let mut out = if a.rows >= a.cols {
        jacobi_svd_tall(a)?
    } else {
        let t = jacobi_svd_tall(&a.adjoint())?;
        SvdResult { u: t.v, s: t.s, v: t.u }
    };
    for k in 0..out.s.len() {
        let mut col = out.v.column(k);
        let phase = normalize_phase(&mut col);
        out.v.set_column(k, &col);
        let rot = phase.conj();
        for r in 0..out.u.rows() {
            out.u[(r, k)] *= rot;
        }
    }
    Ok(out)
}

fn jacobi_svd_tall(a: &CMatrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    // Column-major working copies: w = A V, v accumulates the rotations.
    let mut w: Vec<Vec<C64>> = (0..n).map(|c| a.column(c)).collect();
    let mut v: Vec<Vec<C64>> = (0..n).map(|c| (0..n).map(|r| if r == c { ONE } else { ZERO }).collect()).collect();

    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha: f64 = w[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = w[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma = inner(&w[p], &w[q]);
                let g = gamma.norm();
                if g == 0.0 || g <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, p, q, c, s, phase);
                rotate_pair(&mut v, p, q, c, s, phase);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericFailure { what: "one-sided Jacobi SVD", iterations: sweeps });
    }

    let norms: Vec<f64> = w.iter().map(|col| vec_norm(col)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let top = norms[order[0]];

    let mut u_cols: Vec<Vec<C64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        let s = norms[i];
        if s > 0.0 && s > top * 1e-13 {
            u_cols.push(w[i].iter().map(|z| z / s).collect());
        } else {
            u_cols.push(vec![ZERO; m]);
            deficient.push(k);
        }
    }
    complete_orthonormal(&mut u_cols, &deficient);

    Ok(SvdResult {
        u: CMatrix::from_columns(&u_cols),
        s: order.iter().map(|&i| norms[i]).collect(),
        v: CMatrix::from_columns(&order.iter().map(|&i| v[i].clone()).collect::<Vec<_>>()),
    })
}

/// Applies the complex Jacobi rotation
/// `x_p <- c x_p - s e^{-iφ} x_q`, `x_q <- s e^{iφ} x_p + c x_q`.
fn rotate_pair(cols: &mut [Vec<C64>], p: usize, q: usize, c: f64, s: f64, phase: C64) {
    let (left, right) = cols.split_at_mut(q);
    let xp = &mut left[p];
    let xq = &mut right[0];
    let sp = phase * s;
    let sp_conj = sp.conj();
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (ap, bq) = (*a, *b);
        *a = ap * c - sp_conj * bq;
        *b = sp * ap + bq * c;
    }
}

/// Fills the listed (zero) columns with unit vectors orthogonal to all others.
fn complete_orthonormal(cols: &mut [Vec<C64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = cols[0].len();
    let mut basis = 0;
    for &k in missing {
        while basis < m {
            let mut cand = vec![ZERO; m];
            cand[basis] = ONE;
            basis += 1;
            for _ in 0..2 {
                for (j, other) in cols.iter().enumerate() {
                    if j == k {
                        continue;
                    }
                    let proj = inner(other, &cand);
                    for (c, o) in cand.iter_mut().zip(other) {
                        *c -= proj * o;
                    }
                }
            }
            let nrm = vec_norm(&cand);
            if nrm > 0.5 {
                cols[k] = cand.into_iter().map(|z| z / nrm).collect();
                break;
            }
        }
    }
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: CMatrix,
}

pub fn hermitian_eigen(a: &CMatrix) -> Result<HermitianEigen> {
    if !a.is_square() || a.rows == 0 {
        return Err(Error::contract(format!("eigendecomposition of a {}x{} matrix", a.rows, a.cols)));
    }
    if !a.is_hermitian(HERMITIAN_TOL) {
        return Err(Error::contract("matrix is not Hermitian"));
    }
    let n = a.rows;
    // Symmetrize so the iteration sees an exactly Hermitian matrix.
    let mut m = CMatrix::from_fn(n, n, |r, c| (a[(r, c)] + a[(c, r)].conj()) * 0.5);
    let mut vecs = CMatrix::identity(n);
    let total = frobenius_norm(&m);

    let mut converged = n == 1 || total == 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * total {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let g = apq.norm();
                if g == 0.0 {
                    continue;
                }
                let phase = apq / g;
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let theta = (aqq - app) / (2.0 * g);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // G = diag(1, e^{-iφ}) · [[c, s], [-s, c]] on the (p, q) plane.
                let gpp = C64::new(c, 0.0);
                let gpq = C64::new(s, 0.0);
                let gqp = -phase.conj() * s;
                let gqq = phase.conj() * c;
                // M <- M G
                for r in 0..n {
                    let (xp, xq) = (m[(r, p)], m[(r, q)]);
                    m[(r, p)] = xp * gpp + xq * gqp;
                    m[(r, q)] = xp * gpq + xq * gqq;
                }
                // M <- Gᴴ M
                for c2 in 0..n {
                    let (xp, xq) = (m[(p, c2)], m[(q, c2)]);
                    m[(p, c2)] = gpp.conj() * xp + gqp.conj() * xq;
                    m[(q, c2)] = gpq.conj() * xp + gqq.conj() * xq;
                }
                m[(p, q)] = ZERO;
                m[(q, p)] = ZERO;
                m[(p, p)] = C64::new(m[(p, p)].re, 0.0);
                m[(q, q)] = C64::new(m[(q, q)].re, 0.0);
                for r in 0..n {
                    let (xp, xq) = (vecs[(r, p)], vecs[(r, q)]);
                    vecs[(r, p)] = xp * gpp + xq * gqp;
                    vecs[(r, q)] = xp * gpq + xq * gqq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NumericFailure { what: "Hermitian Jacobi eigensolver", iterations: sweeps });
    }

    let diag: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));
    let cols: Vec<Vec<C64>> = order
        .iter()
        .map(|&i| {
            let mut col = vecs.column(i);
            normalize_phase(&mut col);
            col
        })
        .collect();
    Ok(HermitianEigen { values: order.iter().map(|&i| diag[i]).collect(), vectors: CMatrix::from_columns(&cols) })
}

/// `log2 det(A)` for Hermitian positive semi-definite `A`.
///
/// Eigenvalues in `[-1e-9, 0)` are clamped to zero; anything more negative is
/// rejected. A singular argument yields `-inf`; `I + PSD` never does.
pub fn logdet_hermitian_psd(a: &CMatrix) -> Result<f64> {
    let eig = hermitian_eigen(a)?;
    let scale = eig.values.first().map_or(1.0, |v| v.abs().max(1.0));
    let mut acc = 0.0;
    for &lambda in &eig.values {
        if lambda < -PSD_CLAMP * scale {
            return Err(Error::contract(format!("matrix is not positive semi-definite (eigenvalue {lambda:e})")));
        }
        acc += lambda.max(0.0).log2();
    }
    Ok(acc)
}

/// Dominant eigenpair of a Hermitian PSD matrix by power iteration.
///
/// Stops once `‖Av - λv‖ ≤ tol·‖A‖_F`. The returned vector has unit norm and
/// its largest-magnitude entry real-positive.
pub fn principal_eigvec_hermitian(a: &CMatrix, tol: f64, max_iter: usize) -> Result<(f64, Vec<C64>)> {
    if !a.is_square() || a.rows == 0 {
        return Err(Error::contract(format!("power iteration on a {}x{} matrix", a.rows, a.cols)));
    }
    if !a.is_hermitian(HERMITIAN_TOL) {
        return Err(Error::contract("matrix is not Hermitian"));
    }
    let n = a.rows;
    let norm_a = frobenius_norm(a);
    if norm_a == 0.0 {
        let mut e = vec![ZERO; n];
        e[0] = ONE;
        return Ok((0.0, e));
    }

    // Start from the largest column, which always has a component along the
    // dominant eigenvector of a non-zero PSD matrix.
    let start = (0..n)
        .map(|c| (c, vec_norm(&a.column(c))))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0;
    let mut v = a.column(start);
    let nv = vec_norm(&v);
    v.iter_mut().for_each(|z| *z /= nv);

    for _ in 0..max_iter {
        let w = a.mul_vec(&v)?;
        let lambda = inner(&v, &w).re;
        let resid = w.iter().zip(&v).map(|(wi, vi)| (wi - vi * lambda).norm_sqr()).sum::<f64>().sqrt();
        if resid <= tol * norm_a {
            normalize_phase(&mut v);
            return Ok((lambda, v));
        }
        let nw = vec_norm(&w);
        if nw == 0.0 {
            normalize_phase(&mut v);
            return Ok((0.0, v));
        }
        v = w.into_iter().map(|z| z / nw).collect();
    }
    Err(Error::NumericFailure { what: "power iteration", iterations: max_iter })
}
