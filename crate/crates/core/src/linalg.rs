//! Dense linear algebra kernels: Householder QR, Cholesky with jitter
//! escalation, pivoted (low-rank) Cholesky and a Jacobi eigensolver.

use thiserror::Error;

use crate::scalar::{axpy, dot, Real};

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("matrix is not positive definite even with jitter {jitter:e}")]
    JitterExhausted { jitter: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_columns(rows: usize, columns: &[Vec<T>]) -> Self {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            assert_eq!(c.len(), rows, "ragged columns");
            data.extend_from_slice(c);
        }
        Matrix { rows, cols: columns.len(), data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[c * self.rows + r] = v;
    }

    pub fn col(&self, c: usize) -> &[T] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [T] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    /// `self * x`
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows];
        for (c, &xc) in x.iter().enumerate().take(self.cols) {
            axpy(xc, self.col(c), &mut out);
        }
        out
    }

    /// `self^T * y`
    pub fn tr_mul_vec(&self, y: &[T]) -> Vec<T> {
        (0..self.cols).map(|c| dot(self.col(c), y)).collect()
    }

    /// Appends `sqrt(lambda) * I` below the matrix (ridge augmentation).
    pub fn ridge_augmented(&self, lambda: T) -> Self {
        let rows = self.rows + self.cols;
        let mut m = Matrix::zeros(rows, self.cols);
        let s = lambda.sqrt();
        for c in 0..self.cols {
            m.col_mut(c)[..self.rows].copy_from_slice(self.col(c));
            m.set(self.rows + c, c, s);
        }
        m
    }

    pub fn frobenius_sq(&self) -> T {
        dot(&self.data, &self.data)
    }
}

/// Householder QR factorization `A = QR` of a tall matrix, stored compactly.
#[derive(Debug, Clone)]
pub struct HouseholderQr<T> {
    qr: Matrix<T>,
    tau: Vec<T>,
    col_norms: Vec<T>,
}

impl<T: Real> HouseholderQr<T> {
    pub fn factor(a: Matrix<T>) -> Result<Self, LinalgError> {
        let (m, n) = (a.rows, a.cols);
        if m < n {
            return Err(LinalgError::Dimension(format!("QR needs rows >= cols, got {m}x{n}")));
        }
        let col_norms = (0..n).map(|c| dot(a.col(c), a.col(c)).sqrt()).collect();
        let mut qr = a;
        let mut tau = vec![T::zero(); n];
        for k in 0..n {
            let (head, tail) = qr.data.split_at_mut((k + 1) * m);
            let col = &mut head[k * m..];
            let x = &mut col[k..];
            let alpha = x[0];
            let xnorm_sq = dot(&x[1..], &x[1..]);
            if xnorm_sq == T::zero() {
                tau[k] = T::zero();
                continue;
            }
            let norm = (alpha * alpha + xnorm_sq).sqrt();
            let beta = if alpha >= T::zero() { -norm } else { norm };
            tau[k] = (beta - alpha) / beta;
            let scale = T::one() / (alpha - beta);
            for v in x[1..].iter_mut() {
                *v *= scale;
            }
            x[0] = beta;
            let v_tail = &x[1..];
            for j in 0..(n - k - 1) {
                let cj = &mut tail[j * m + k..(j + 1) * m];
                let w = tau[k] * (cj[0] + dot(v_tail, &cj[1..]));
                cj[0] -= w;
                axpy(-w, v_tail, &mut cj[1..]);
            }
        }
        Ok(HouseholderQr { qr, tau, col_norms })
    }

    pub fn rows(&self) -> usize {
        self.qr.rows
    }

    pub fn cols(&self) -> usize {
        self.qr.cols
    }

    /// Overwrites `y` with `Q^T y`.
    pub fn apply_qt(&self, y: &mut [T]) {
        let m = self.qr.rows;
        for k in 0..self.qr.cols {
            if self.tau[k] == T::zero() {
                continue;
            }
            let v_tail = &self.qr.col(k)[k + 1..m];
            let w = self.tau[k] * (y[k] + dot(v_tail, &y[k + 1..m]));
            y[k] -= w;
            axpy(-w, v_tail, &mut y[k + 1..m]);
        }
    }

    pub fn r(&self, i: usize, j: usize) -> T {
        self.qr.get(i, j)
    }

    /// Smallest `|R_kk| / ||a_k||` over columns: the sine of the angle between
    /// a column and the span of the ones before it.
    pub fn min_independence(&self) -> T {
        (0..self.qr.cols)
            .map(|k| {
                let n = self.col_norms[k];
                if n == T::zero() {
                    T::zero()
                } else {
                    self.qr.get(k, k).abs() / n
                }
            })
            .fold(T::infinity(), T::min)
    }

    /// Solves the leading `k x k` triangular system `R_k b = rhs[..k]`.
    pub fn solve_leading(&self, k: usize, rhs: &[T]) -> Vec<T> {
        let mut b = rhs[..k].to_vec();
        for i in (0..k).rev() {
            let mut s = b[i];
            for j in i + 1..k {
                s -= self.qr.get(i, j) * b[j];
            }
            b[i] = s / self.qr.get(i, i);
        }
        b
    }
}

/// Lower Cholesky factor stored row-major.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
    jitter: T,
}

impl<T: Real> Cholesky<T> {
    /// Factors a symmetric matrix given row-major; only the lower triangle is read.
    pub fn factor(n: usize, a: &[T]) -> Result<Self, LinalgError> {
        Self::factor_shifted(n, a, T::zero())
    }

    fn factor_shifted(n: usize, a: &[T], shift: T) -> Result<Self, LinalgError> {
        if a.len() != n * n {
            return Err(LinalgError::Dimension(format!("expected {} entries, got {}", n * n, a.len())));
        }
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (i * n, j * n);
                let s = a[ri + j] - dot(&l[ri..ri + j], &l[rj..rj + j]);
                if i == j {
                    let d = s + shift;
                    if !(d > T::zero()) {
                        return Err(LinalgError::NotPositiveDefinite { pivot: i });
                    }
                    l[ri + i] = d.sqrt();
                } else {
                    l[ri + j] = s / l[rj + j];
                }
            }
        }
        Ok(Cholesky { n, l, jitter: shift })
    }

    /// Tries a plain factorization, then escalates diagonal jitter from
    /// `1e-10` to `1e-6` (relative to the mean diagonal) by factors of ten.
    pub fn factor_with_jitter(n: usize, a: &[T]) -> Result<Self, LinalgError> {
        if let Ok(c) = Self::factor(n, a) {
            return Ok(c);
        }
        let mean_diag = (0..n).map(|i| a[i * n + i].abs()).sum::<T>() / T::of_usize(n.max(1));
        let scale = if mean_diag > T::zero() { mean_diag } else { T::one() };
        let mut rel = 1e-10;
        while rel <= 1e-6 * 1.000_001 {
            if let Ok(c) = Self::factor_shifted(n, a, scale * T::of(rel)) {
                return Ok(c);
            }
            rel *= 10.0;
        }
        Err(LinalgError::JitterExhausted { jitter: 1e-6 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Diagonal shift that was needed for the factorization to succeed.
    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn log_det(&self) -> T {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<T>() * T::of(2.0)
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let r = i * n;
            x[i] = (x[i] - dot(&self.l[r..r + i], &x[..i])) / self.l[r + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }
}

/// Low-rank factor `K ~= G G^T` from a diagonally pivoted Cholesky.
#[derive(Debug, Clone)]
pub struct LowRank<T> {
    /// Columns of `G`, each of length `n`, rows in the original order.
    pub columns: Vec<Vec<T>>,
    pub pivots: Vec<usize>,
    /// Largest residual diagonal entry left when the factorization stopped.
    pub residual: T,
}

/// Pivoted Cholesky of a positive semi-definite matrix accessed through its
/// diagonal and a column oracle. Stops once every residual diagonal entry is
/// `<= tol` or `max_rank` columns have been produced.
pub fn pivoted_cholesky<T: Real>(
    diag: &[T],
    mut column: impl FnMut(usize, &mut [T]),
    tol: T,
    max_rank: usize,
) -> LowRank<T> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut columns: Vec<Vec<T>> = Vec::new();
    let mut pivots = Vec::new();
    let mut used = vec![false; n];
    let mut buf = vec![T::zero(); n];
    loop {
        let mut best = None;
        let mut best_val = T::neg_infinity();
        for (i, &v) in d.iter().enumerate() {
            if !used[i] && v > best_val {
                best_val = v;
                best = Some(i);
            }
        }
        let Some(p) = best else { break };
        if best_val <= tol || columns.len() >= max_rank {
            return LowRank { columns, pivots, residual: best_val.max(T::zero()) };
        }
        column(p, &mut buf);
        for g in &columns {
            axpy(-g[p], g, &mut buf);
        }
        let piv = best_val.sqrt();
        let inv = T::one() / piv;
        let mut g = vec![T::zero(); n];
        for i in 0..n {
            if used[i] {
                continue;
            }
            let v = if i == p { piv } else { buf[i] * inv };
            g[i] = v;
            d[i] -= v * v;
        }
        used[p] = true;
        d[p] = T::zero();
        pivots.push(p);
        columns.push(g);
    }
    LowRank { columns, pivots, residual: T::zero() }
}

/// Eigen-decomposition of a symmetric matrix (row-major) by Householder
/// tridiagonalization and implicit QL iterations. Returns eigenvalues in
/// ascending order and the eigenvectors as columns of a row-major matrix.
pub fn symmetric_eigen<T: Real>(n: usize, a: &[T]) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n, "eigen input must be n x n");
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut v = a.to_vec();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(n, &mut v, &mut d, &mut e);
    tridiagonal_ql(n, &mut v, &mut d, &mut e);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = order.iter().map(|&i| d[i]).collect();
    let mut vecs = vec![T::zero(); n * n];
    for (c, &src) in order.iter().enumerate() {
        for r in 0..n {
            vecs[r * n + c] = v[r * n + src];
        }
    }
    (vals, vecs)
}

fn tridiagonalize<T: Real>(n: usize, v: &mut [T], d: &mut [T], e: &mut [T]) {
    for j in 0..n {
        d[j] = v[(n - 1) * n + j];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for &dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1) * n + j];
                v[i * n + j] = T::zero();
                v[j * n + i] = T::zero();
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in &mut e[..i] {
                *ej = T::zero();
            }
            for j in 0..i {
                f = d[j];
                v[j * n + i] = f;
                g = e[j] + v[j * n + j] * f;
                for k in j + 1..i {
                    g += v[k * n + j] * d[k];
                    e[k] += v[k * n + j] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[k * n + j] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1) * n + j];
                v[i * n + j] = T::zero();
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[(n - 1) * n + i] = v[i * n + i];
        v[i * n + i] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[k * n + i + 1] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g += v[k * n + i + 1] * v[k * n + j];
                }
                for k in 0..=i {
                    v[k * n + j] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[k * n + i + 1] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1) * n + j];
        v[(n - 1) * n + j] = T::zero();
    }
    v[(n - 1) * n + n - 1] = T::one();
    e[0] = T::zero();
}

fn tridiagonal_ql<T: Real>(n: usize, v: &mut [T], d: &mut [T], e: &mut [T]) {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    let eps = T::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            for _iter in 0..200 {
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (T::of(2.0) * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..n] {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let vk = &mut v[k * n..(k + 1) * n];
                        h = vk[i + 1];
                        vk[i + 1] = s * vk[i] + c * h;
                        vk[i] = c * vk[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
}

/// Cyclic Jacobi eigen-decomposition, same output layout as
/// [`symmetric_eigen`]. Slow but simple.
#[cfg(test)]
pub(crate) fn jacobi_eigen<T: Real>(n: usize, a: &[T]) -> (Vec<T>, Vec<T>) {
    let mut a = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let x = a[i * n + j] * a[i * n + j];
                total += x;
                if i != j {
                    off += x;
                }
            }
        }
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}
