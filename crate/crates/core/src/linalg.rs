//! Dense row-major matrices and the small set of kernels the solver needs.
//!
//! Summation order is part of the contract here: `dot`, `matvec_into`,
//! `vecmat_into` and `gemm_into` all accumulate over the inner index `k` in
//! ascending order with a single accumulator per output element. The batched
//! sweep engine relies on this to produce bit-identical results to the
//! per-replica reference path.

use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is singular (pivot {pivot} below tolerance)")]
    Singular { pivot: usize },
    #[error("least-squares system has {rows} rows but {cols} columns (needs rows >= cols)")]
    Underdetermined { rows: usize, cols: usize },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * x` as a fresh vector.
    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    pub fn matvec_into(&self, x: &[S], out: &mut [S]) {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        assert_eq!(out.len(), self.rows, "matvec output mismatch");
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    /// Row vector times matrix: `v * self`.
    pub fn vecmat(&self, v: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.cols];
        self.vecmat_into(v, &mut out);
        out
    }

    pub fn vecmat_into(&self, v: &[S], out: &mut [S]) {
        assert_eq!(v.len(), self.rows, "vecmat dimension mismatch");
        assert_eq!(out.len(), self.cols, "vecmat output mismatch");
        out.fill(S::zero());
        for (&vk, row) in v.iter().zip(self.data.chunks_exact(self.cols)) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o = vk.mul_add(a, *o);
            }
        }
    }

    /// Dense product `self * other`; reserved for desk-scale diagnostics.
    pub fn matmul(&self, other: &Mat<S>) -> Result<Mat<S>, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        gemm_into(self, &other.data, other.cols, &mut out.data);
        Ok(out)
    }
}

/// Fused-multiply-add dot product with the crate's shared reduction order:
/// four interleaved accumulator lanes over ascending `k`, combined as
/// `(l0 + l1) + (l2 + l3)`. `gemm_into` and `col_dots` accumulate the same
/// way, which is what makes batched and per-replica sweeps bit-identical.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 4];
    let q = a.len() / 4;
    let (a4, a_rem) = a.split_at(q * 4);
    let (b4, b_rem) = b.split_at(q * 4);
    for (ac, bc) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        for l in 0..4 {
            acc[l] = ac[l].mul_add(bc[l], acc[l]);
        }
    }
    for (l, (&x, &y)) in a_rem.iter().zip(b_rem.iter()).enumerate() {
        acc[l] = x.mul_add(y, acc[l]);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

pub fn scale<S: Scalar>(alpha: S, x: &mut [S]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub(crate) const GEMM_BLOCK: usize = 16;

/// `out = a * x` where `x` and `out` are row-major `a.cols() x ncols` and
/// `a.rows() x ncols` panels. Each output element is accumulated exactly like
/// a standalone `dot(row, column)`, so one column of a `gemm_into` equals the
/// corresponding `matvec_into` bit for bit.
pub fn gemm_into<S: Scalar>(a: &Mat<S>, x: &[S], ncols: usize, out: &mut [S]) {
    assert_eq!(x.len(), a.cols * ncols, "gemm input panel mismatch");
    assert_eq!(out.len(), a.rows * ncols, "gemm output panel mismatch");
    gemm_rows(&a.data, a.cols, x, ncols, out);
}

/// Row-slice gemm kernel: `arows` holds whole rows of the left factor. Lets
/// callers split the output into independent row blocks.
pub(crate) fn gemm_rows<S: Scalar>(arows: &[S], acols: usize, x: &[S], ncols: usize, out: &mut [S]) {
    debug_assert_eq!(arows.len() % acols, 0);
    debug_assert_eq!(out.len() / ncols, arows.len() / acols);
    let mut col = 0;
    while col < ncols {
        let nb = (ncols - col).min(GEMM_BLOCK);
        match nb {
            16 => gemm_panel::<S, 16>(arows, acols, x, ncols, col, out),
            12 => gemm_panel::<S, 12>(arows, acols, x, ncols, col, out),
            8 => gemm_panel::<S, 8>(arows, acols, x, ncols, col, out),
            6 => gemm_panel::<S, 6>(arows, acols, x, ncols, col, out),
            4 => gemm_panel::<S, 4>(arows, acols, x, ncols, col, out),
            3 => gemm_panel::<S, 3>(arows, acols, x, ncols, col, out),
            2 => gemm_panel::<S, 2>(arows, acols, x, ncols, col, out),
            1 => gemm_panel::<S, 1>(arows, acols, x, ncols, col, out),
            _ => gemm_panel_dyn(arows, acols, x, ncols, col, nb, out),
        }
        col += nb;
    }
}

/// Fixed-width column panel: the accumulators live in registers, the column
/// loop unrolls fully, and `k` runs in the shared four-lane reduction order.
/// Output rows are processed in pairs so each pass over the `x` panel feeds
/// two rows of results.
fn gemm_panel<S: Scalar, const NB: usize>(
    arows: &[S],
    acols: usize,
    x: &[S],
    ncols: usize,
    col: usize,
    out: &mut [S],
) {
    debug_assert!(col + NB <= ncols);
    debug_assert!(x.len() >= acols * ncols);
    let nrows = arows.len() / acols;
    let q = acols / 4;
    let rem = acols - q * 4;
    let xw = &x[col..];
    let mut i = 0;
    while i + 2 <= nrows {
        let a0 = &arows[i * acols..(i + 1) * acols];
        let a1 = &arows[(i + 1) * acols..(i + 2) * acols];
        let mut acc0 = [[S::zero(); NB]; 4];
        let mut acc1 = [[S::zero(); NB]; 4];
        for c in 0..q {
            for l in 0..4 {
                let k = c * 4 + l;
                // In-bounds: k < acols and col + NB <= ncols.
                let xr = unsafe { xw.get_unchecked(k * ncols..k * ncols + NB) };
                let (a0k, a1k) = unsafe { (*a0.get_unchecked(k), *a1.get_unchecked(k)) };
                for j in 0..NB {
                    acc0[l][j] = a0k.mul_add(xr[j], acc0[l][j]);
                    acc1[l][j] = a1k.mul_add(xr[j], acc1[l][j]);
                }
            }
        }
        for l in 0..rem {
            let k = q * 4 + l;
            let xr = unsafe { xw.get_unchecked(k * ncols..k * ncols + NB) };
            let (a0k, a1k) = unsafe { (*a0.get_unchecked(k), *a1.get_unchecked(k)) };
            for j in 0..NB {
                acc0[l][j] = a0k.mul_add(xr[j], acc0[l][j]);
                acc1[l][j] = a1k.mul_add(xr[j], acc1[l][j]);
            }
        }
        let o0 = i * ncols + col;
        let o1 = (i + 1) * ncols + col;
        for j in 0..NB {
            out[o0 + j] = (acc0[0][j] + acc0[1][j]) + (acc0[2][j] + acc0[3][j]);
            out[o1 + j] = (acc1[0][j] + acc1[1][j]) + (acc1[2][j] + acc1[3][j]);
        }
        i += 2;
    }
    if i < nrows {
        let a0 = &arows[i * acols..(i + 1) * acols];
        let mut acc0 = [[S::zero(); NB]; 4];
        for c in 0..q {
            for l in 0..4 {
                let k = c * 4 + l;
                let xr = unsafe { xw.get_unchecked(k * ncols..k * ncols + NB) };
                let a0k = unsafe { *a0.get_unchecked(k) };
                for j in 0..NB {
                    acc0[l][j] = a0k.mul_add(xr[j], acc0[l][j]);
                }
            }
        }
        for l in 0..rem {
            let k = q * 4 + l;
            let xr = unsafe { xw.get_unchecked(k * ncols..k * ncols + NB) };
            let a0k = unsafe { *a0.get_unchecked(k) };
            for j in 0..NB {
                acc0[l][j] = a0k.mul_add(xr[j], acc0[l][j]);
            }
        }
        let o0 = i * ncols + col;
        for j in 0..NB {
            out[o0 + j] = (acc0[0][j] + acc0[1][j]) + (acc0[2][j] + acc0[3][j]);
        }
    }
}

fn gemm_panel_dyn<S: Scalar>(
    arows: &[S],
    acols: usize,
    x: &[S],
    ncols: usize,
    col: usize,
    nb: usize,
    out: &mut [S],
) {
    let q = acols / 4;
    for (orow, arow) in out.chunks_exact_mut(ncols).zip(arows.chunks_exact(acols)) {
        let mut acc = [[S::zero(); GEMM_BLOCK]; 4];
        let (a4, a_rem) = arow.split_at(q * 4);
        let (x4, x_rem) = x.split_at(q * 4 * ncols);
        for (ac, xc) in a4.chunks_exact(4).zip(x4.chunks_exact(4 * ncols)) {
            for l in 0..4 {
                let xr = &xc[l * ncols + col..l * ncols + col + nb];
                let aik = ac[l];
                for j in 0..nb {
                    acc[l][j] = aik.mul_add(xr[j], acc[l][j]);
                }
            }
        }
        for (l, (&aik, xrow)) in a_rem.iter().zip(x_rem.chunks_exact(ncols)).enumerate() {
            let xr = &xrow[col..col + nb];
            for j in 0..nb {
                acc[l][j] = aik.mul_add(xr[j], acc[l][j]);
            }
        }
        for j in 0..nb {
            orow[col + j] = (acc[0][j] + acc[1][j]) + (acc[2][j] + acc[3][j]);
        }
    }
}

/// Column-wise dot products of two row-major panels: `out[j]` is the dot of
/// column `j` of `a` with column `j` of `b`, in the shared reduction order.
pub fn col_dots<S: Scalar>(a: &[S], b: &[S], ncols: usize, out: &mut [S]) {
    assert_eq!(a.len(), b.len(), "col_dots panel mismatch");
    assert_eq!(out.len(), ncols, "col_dots output mismatch");
    if ncols == 0 {
        return;
    }
    let nrows = a.len() / ncols;
    let q = nrows / 4;
    let mut col = 0;
    while col < ncols {
        let nb = (ncols - col).min(GEMM_BLOCK);
        let mut acc = [[S::zero(); GEMM_BLOCK]; 4];
        let (a4, a_rem) = a.split_at(q * 4 * ncols);
        let (b4, b_rem) = b.split_at(q * 4 * ncols);
        for (ac, bc) in a4.chunks_exact(4 * ncols).zip(b4.chunks_exact(4 * ncols)) {
            for l in 0..4 {
                let ar = &ac[l * ncols + col..l * ncols + col + nb];
                let br = &bc[l * ncols + col..l * ncols + col + nb];
                for j in 0..nb {
                    acc[l][j] = ar[j].mul_add(br[j], acc[l][j]);
                }
            }
        }
        for (l, (arow, brow)) in a_rem
            .chunks_exact(ncols)
            .zip(b_rem.chunks_exact(ncols))
            .enumerate()
        {
            let ar = &arow[col..col + nb];
            let br = &brow[col..col + nb];
            for j in 0..nb {
                acc[l][j] = ar[j].mul_add(br[j], acc[l][j]);
            }
        }
        for j in 0..nb {
            out[col + j] = (acc[0][j] + acc[1][j]) + (acc[2][j] + acc[3][j]);
        }
        col += nb;
    }
}

/// Solves `a * x = rhs` by Gaussian elimination with partial pivoting.
pub fn solve_dense<S: Scalar>(a: &Mat<S>, rhs: &[S]) -> Result<Vec<S>, LinalgError> {
    let n = a.rows;
    if a.cols != n || rhs.len() != n {
        return Err(LinalgError::Dimension("solve_dense needs a square system".into()));
    }
    let mut m = a.data.clone();
    let mut b = rhs.to_vec();
    for k in 0..n {
        let mut p = k;
        let mut best = m[k * n + k].abs();
        for i in k + 1..n {
            let v = m[i * n + k].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == S::zero() || !best.is_finite() {
            return Err(LinalgError::Singular { pivot: k });
        }
        if p != k {
            for j in 0..n {
                m.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let pivot = m[k * n + k];
        for i in k + 1..n {
            let f = m[i * n + k] / pivot;
            if f == S::zero() {
                continue;
            }
            m[i * n + k] = S::zero();
            for j in k + 1..n {
                let v = m[k * n + j];
                m[i * n + j] = m[i * n + j] - f * v;
            }
            b[i] = b[i] - f * b[k];
        }
    }
    let mut x = vec![S::zero(); n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s = s - m[k * n + j] * x[j];
        }
        x[k] = s / m[k * n + k];
    }
    Ok(x)
}

/// Result of a least-squares solve.
#[derive(Debug, Clone)]
pub struct Lstsq<S> {
    /// `cols x nrhs` solution panel.
    pub solution: Mat<S>,
    /// Numerical rank of the regressor at the tolerance used.
    pub rank: usize,
    /// Largest-singular-value estimate the rank tolerance was based on.
    pub sigma_max: S,
}

/// Minimizes `||a * x - b||_F` column-wise via Householder QR with column
/// pivoting. Rank is decided against `rank_rtol * sigma_max(a)`; directions
/// below the tolerance get a zero coefficient (basic solution).
pub fn lstsq<S: Scalar>(a: &Mat<S>, b: &Mat<S>, rank_rtol: S) -> Result<Lstsq<S>, LinalgError> {
    let (nrows, ncols) = (a.rows, a.cols);
    if nrows < ncols {
        return Err(LinalgError::Underdetermined { rows: nrows, cols: ncols });
    }
    if b.rows != nrows {
        return Err(LinalgError::Dimension(format!(
            "rhs has {} rows, regressor has {}",
            b.rows, nrows
        )));
    }
    let nrhs = b.cols;
    let mut r = a.data.clone();
    let mut q_t_b = b.data.clone();
    let mut piv: Vec<usize> = (0..ncols).collect();
    let mut col_norm2: Vec<S> = (0..ncols)
        .map(|j| (0..nrows).map(|i| r[i * ncols + j] * r[i * ncols + j]).sum())
        .collect();
    let col_norm2_init = col_norm2.clone();
    let mut house = vec![S::zero(); nrows];

    for k in 0..ncols {
        let mut jmax = k;
        for j in k + 1..ncols {
            if col_norm2[j] > col_norm2[jmax] {
                jmax = j;
            }
        }
        if jmax != k {
            for i in 0..nrows {
                r.swap(i * ncols + k, i * ncols + jmax);
            }
            piv.swap(k, jmax);
            col_norm2.swap(k, jmax);
        }

        // Householder reflector for column k, rows k..nrows.
        let mut norm2 = S::zero();
        for i in k..nrows {
            let v = r[i * ncols + k];
            norm2 += v * v;
        }
        let norm = norm2.sqrt();
        if norm > S::zero() {
            let x0 = r[k * ncols + k];
            let alpha = if x0 >= S::zero() { -norm } else { norm };
            house[k] = x0 - alpha;
            for i in k + 1..nrows {
                house[i] = r[i * ncols + k];
            }
            let vtv: S = (k..nrows).map(|i| house[i] * house[i]).sum();
            if vtv > S::zero() {
                let two = S::one() + S::one();
                let beta = two / vtv;
                for j in k..ncols {
                    let mut s = S::zero();
                    for i in k..nrows {
                        s += house[i] * r[i * ncols + j];
                    }
                    let f = beta * s;
                    for i in k..nrows {
                        r[i * ncols + j] = r[i * ncols + j] - f * house[i];
                    }
                }
                for j in 0..nrhs {
                    let mut s = S::zero();
                    for i in k..nrows {
                        s += house[i] * q_t_b[i * nrhs + j];
                    }
                    let f = beta * s;
                    for i in k..nrows {
                        q_t_b[i * nrhs + j] = q_t_b[i * nrhs + j] - f * house[i];
                    }
                }
            }
            r[k * ncols + k] = alpha;
            for i in k + 1..nrows {
                r[i * ncols + k] = S::zero();
            }
        }

        // Downdate remaining column norms; recompute when cancellation bites.
        for j in k + 1..ncols {
            let v = r[k * ncols + j];
            col_norm2[j] = col_norm2[j] - v * v;
            let guard = crate::scalar::<S>(1e-8) * col_norm2_init[piv[j]];
            if col_norm2[j] < guard {
                col_norm2[j] = (k + 1..nrows).map(|i| r[i * ncols + j] * r[i * ncols + j]).sum();
            }
        }
    }

    let sigma_max = sigma_max_estimate(a);
    let tol = rank_rtol * sigma_max;
    let mut rank = 0;
    for k in 0..ncols {
        if r[k * ncols + k].abs() > tol {
            rank += 1;
        } else {
            break;
        }
    }

    // Back-substitute the leading rank x rank triangle; zero the rest.
    let mut sol_piv = Mat::zeros(ncols, nrhs);
    for j in 0..nrhs {
        for k in (0..rank).rev() {
            let mut s = q_t_b[k * nrhs + j];
            for l in k + 1..rank {
                s = s - r[k * ncols + l] * sol_piv.data[l * nrhs + j];
            }
            sol_piv.data[k * nrhs + j] = s / r[k * ncols + k];
        }
    }
    let mut solution = Mat::zeros(ncols, nrhs);
    for k in 0..ncols {
        let target = piv[k];
        for j in 0..nrhs {
            solution.data[target * nrhs + j] = sol_piv.data[k * nrhs + j];
        }
    }
    Ok(Lstsq { solution, rank, sigma_max })
}

/// Largest singular value via power iteration on `a' * a`.
pub fn sigma_max_estimate<S: Scalar>(a: &Mat<S>) -> S {
    if a.rows == 0 || a.cols == 0 {
        return S::zero();
    }
    let n = a.cols;
    let mut v = vec![S::one() / scalar_sqrt(n); n];
    let mut av = vec![S::zero(); a.rows];
    let mut atav = vec![S::zero(); n];
    let mut lambda = S::zero();
    for _ in 0..40 {
        a.matvec_into(&v, &mut av);
        // a' * av accumulated row by row.
        atav.fill(S::zero());
        for (row, &w) in a.data.chunks_exact(n).zip(av.iter()) {
            for (o, &aij) in atav.iter_mut().zip(row) {
                *o += w * aij;
            }
        }
        let norm = dot(&atav, &atav).sqrt().sqrt(); // ||A'Av||^(1/2) ~ lambda scale guard
        let raw: S = dot(&v, &atav);
        lambda = raw.max(S::zero());
        let vnorm = dot(&atav, &atav).sqrt();
        if vnorm == S::zero() || !vnorm.is_finite() {
            return norm.max(S::zero()).sqrt();
        }
        for (vi, &a) in v.iter_mut().zip(atav.iter()) {
            *vi = a / vnorm;
        }
    }
    lambda.max(S::zero()).sqrt()
}

fn scalar_sqrt<S: Scalar>(n: usize) -> S {
    crate::scalar::<S>(n as f64).sqrt()
}
