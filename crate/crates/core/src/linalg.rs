//! Dense linear algebra kernel: matrix arithmetic, SVD, energy-based rank
//! truncation, and subspace projection.
//!
//! Matrices are row-major `f64`. Sizes here are small (representation
//! matrices are at most a few hundred rows by ~100 columns), so the SVD is
//! a plain one-sided Jacobi iteration: numerically robust, deterministic,
//! and free of external BLAS/LAPACK dependencies.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row-major dense matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self · other`, with an ikj loop order so the inner loop runs over
    /// contiguous rows of both the output and `other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "matmul shape mismatch: {}x{} . {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` where `other` is n×k and `self` is m×k.
    pub fn matmul_transb(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(Error::invalid(format!(
                "matmul_transb shape mismatch: {}x{} . ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        self.matmul(&other.transpose())
    }

    /// `selfᵀ · other` where `self` is k×m and `other` is k×n.
    pub fn matmul_transa(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::invalid(format!(
                "matmul_transa shape mismatch: ({}x{})^T . {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        let mut m = self.clone();
        for x in &mut m.data {
            *x *= s;
        }
        m
    }

    /// `self += alpha * other`; shapes must match.
    pub fn axpy(&mut self, alpha: f64, other: &DenseMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::invalid(format!(
                "axpy shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        let mut m = self.clone();
        m.axpy(-1.0, other)?;
        Ok(m)
    }

    /// Square root of the sum of squared entries; zero iff all-zero.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Thin SVD `m = u · diag(sigma) · vᵀ` with `r = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m×r, orthonormal columns.
    pub u: DenseMatrix,
    /// Nonincreasing, nonnegative, length r.
    pub sigma: Vec<f64>,
    /// n×r, orthonormal columns.
    pub v: DenseMatrix,
}

/// Per-layer orthonormal bases spanning the retained input subspaces.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    /// One `input_dim × k` matrix per layer, columns orthonormal.
    pub layers: Vec<DenseMatrix>,
}

impl SubspaceBasis {
    /// Check orthonormality (within 1e-10) and `k >= 1` for every layer.
    pub fn validate(&self) -> Result<()> {
        for (l, u) in self.layers.iter().enumerate() {
            if u.cols() == 0 {
                return Err(Error::invalid(format!("layer {l} basis has no columns")));
            }
            if u.cols() > u.rows() {
                return Err(Error::invalid(format!(
                    "layer {l} basis has more columns than rows"
                )));
            }
            let gram = u.matmul_transa(u)?;
            let eye = DenseMatrix::identity(u.cols());
            if gram.max_abs_diff(&eye) > 1e-10 {
                return Err(Error::invalid(format!(
                    "layer {l} basis columns are not orthonormal"
                )));
            }
        }
        Ok(())
    }
}

const JACOBI_MAX_SWEEPS: usize = 64;
const JACOBI_TOL: f64 = 1e-15;

/// One-sided Jacobi SVD.
///
/// Deterministic for a given input: fixed sweep order, and a sign
/// convention that makes the first nonzero entry of every `u` column
/// positive (adjusting `v` to compensate).
pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::invalid("svd requires at least one row and column"));
    }
    if !m.is_finite() {
        return Err(Error::invalid("svd input contains non-finite entries"));
    }
    if m.rows() < m.cols() {
        // A = UΣVᵀ  ⇔  Aᵀ = VΣUᵀ
        let t = svd(&m.transpose())?;
        return Ok(SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }

    let rows = m.rows();
    let cols = m.cols();
    // Column-major working copy: w[j] is the j-th column of m.
    let mut w: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols.saturating_sub(1) {
            for q in (p + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    alpha += w[p][i] * w[p][i];
                    beta += w[q][i] * w[q][i];
                    gamma += w[p][i] * w[q][i];
                }
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let wp = w[p][i];
                    let wq = w[q][i];
                    w[p][i] = c * wp - s * wq;
                    w[q][i] = s * wp + c * wq;
                }
                for i in 0..cols {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Singular values are the column norms; sort nonincreasing.
    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = w
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let tiny = f64::EPSILON * sigma.first().copied().unwrap_or(0.0).max(1.0);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for &j in &order {
        if norms[j] > tiny {
            u_cols.push(w[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(fill_orthonormal(&u_cols, rows));
        }
    }
    let v_cols: Vec<Vec<f64>> = order.iter().map(|&j| v[j].clone()).collect();

    let mut u = DenseMatrix::zeros(rows, cols);
    let mut vm = DenseMatrix::zeros(cols, cols);
    for j in 0..cols {
        // Sign convention: first nonzero entry of each u column positive.
        let flip = u_cols[j]
            .iter()
            .find(|x| **x != 0.0)
            .map_or(1.0, |x| x.signum());
        for i in 0..rows {
            u.set(i, j, flip * u_cols[j][i]);
        }
        for i in 0..cols {
            vm.set(i, j, flip * v_cols[j][i]);
        }
    }

    Ok(SvdResult { u, sigma, v: vm })
}

/// Deterministic completion of an orthonormal set: Gram-Schmidt a canonical
/// basis vector against the columns collected so far.
fn fill_orthonormal(existing: &[Vec<f64>], dim: usize) -> Vec<f64> {
    for axis in 0..dim {
        let mut cand = vec![0.0; dim];
        cand[axis] = 1.0;
        for col in existing {
            let dot: f64 = cand.iter().zip(col).map(|(a, b)| a * b).sum();
            for (c, e) in cand.iter_mut().zip(col) {
                *c -= dot * e;
            }
        }
        let norm: f64 = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.5 {
            for c in &mut cand {
                *c /= norm;
            }
            return cand;
        }
    }
    // Unreachable for dim > len(existing); keep a hard failure visible.
    panic!("could not complete orthonormal basis");
}

/// Smallest `k` with `Σ_{i<k} sigma[i]² >= epsilon · Σ sigma[i]²`.
///
/// The comparison carries a 1e-12 relative slack so that exact-fraction
/// thresholds (e.g. 4/5 against 0.8) resolve the way the arithmetic reads.
pub fn rank_for_energy(sigma: &[f64], epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    if sigma.is_empty() {
        return Err(Error::degenerate("empty singular value list"));
    }
    for pair in sigma.windows(2) {
        if pair[0] < pair[1] {
            return Err(Error::invalid("singular values must be nonincreasing"));
        }
    }
    if sigma.iter().any(|s| *s < 0.0) {
        return Err(Error::invalid("singular values must be nonnegative"));
    }
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(Error::degenerate("all singular values are zero"));
    }
    let mut prefix = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        prefix += s * s;
        if prefix >= epsilon * total - 1e-12 * total {
            return Ok(i + 1);
        }
    }
    Ok(sigma.len())
}

/// Orthogonal projection `U U ᵀ g` of `g` onto the column span of `basis`.
pub fn project(basis: &DenseMatrix, g: &[f64]) -> Result<Vec<f64>> {
    if g.len() != basis.rows() {
        return Err(Error::invalid(format!(
            "projection dimension mismatch: basis has {} rows, vector has {}",
            basis.rows(),
            g.len()
        )));
    }
    let k = basis.cols();
    let mut coeffs = vec![0.0; k];
    for (j, c) in coeffs.iter_mut().enumerate() {
        *c = (0..basis.rows()).map(|i| basis.get(i, j) * g[i]).sum();
    }
    let mut out = vec![0.0; g.len()];
    for j in 0..k {
        let c = coeffs[j];
        for (i, o) in out.iter_mut().enumerate() {
            *o += c * basis.get(i, j);
        }
    }
    Ok(out)
}

/// Concatenate matrices side by side; all inputs must share a row count.
pub fn concat_columns(mats: &[&DenseMatrix]) -> Result<DenseMatrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::invalid("concat_columns requires at least one matrix"))?;
    let rows = first.rows();
    if mats.iter().any(|m| m.rows() != rows) {
        return Err(Error::invalid("concat_columns row-count mismatch"));
    }
    let cols: usize = mats.iter().map(|m| m.cols()).sum();
    let mut out = DenseMatrix::zeros(rows, cols);
    for r in 0..rows {
        let out_row = out.row_mut(r);
        let mut offset = 0;
        for m in mats {
            out_row[offset..offset + m.cols()].copy_from_slice(m.row(r));
            offset += m.cols();
        }
    }
    Ok(out)
}
