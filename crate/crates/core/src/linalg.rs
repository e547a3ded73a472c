//! Dense matrix and tensor kernels.
//!
//! All tensors are flattened with the 1-based map
//! `δ(i₁, …, i_ℓ) = 1 + Σ_j n^{ℓ−j} (i_j − 1)`, i.e. indices are digits of a
//! base-`n` number with the first index most significant. [`FlatIndexMap`]
//! owns that convention; the Khatri–Rao routines and the cumulant tensors in
//! [`crate::cumulants`] both go through it so their flattenings agree.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Dense real matrix. Entries are addressed as `(row, col)`.
pub type RealMatrix = DMatrix<f64>;

/// The flattening bijection from `[n]^ℓ` to `[n^ℓ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatIndexMap {
    n: usize,
    ell: usize,
}

impl FlatIndexMap {
    pub fn new(n: usize, ell: usize) -> Result<Self> {
        if n == 0 || ell == 0 {
            return Err(Error::Domain(format!(
                "flat index map needs n ≥ 1 and ℓ ≥ 1 (got n={n}, ℓ={ell})"
            )));
        }
        n.checked_pow(ell as u32)
            .ok_or_else(|| Error::Domain(format!("n^ℓ overflows for n={n}, ℓ={ell}")))?;
        Ok(Self { n, ell })
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.ell
    }

    /// Number of flattened positions, `n^ℓ`.
    pub fn len(&self) -> usize {
        self.n.pow(self.ell as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// 1-based position of a 1-based index tuple.
    pub fn position(&self, indices: &[usize]) -> Result<usize> {
        if indices.len() != self.ell {
            return Err(Error::Domain(format!(
                "expected {} indices, got {}",
                self.ell,
                indices.len()
            )));
        }
        let mut pos = 0usize;
        for &i in indices {
            if i == 0 || i > self.n {
                return Err(Error::Domain(format!("index {i} outside [1, {}]", self.n)));
            }
            pos = pos * self.n + (i - 1);
        }
        Ok(pos + 1)
    }

    /// 0-based offset of a 0-based index tuple. Indices are not range checked.
    #[inline]
    pub fn offset(&self, indices: &[usize]) -> usize {
        indices.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Inverse of [`offset`](Self::offset): the 0-based tuple stored at `offset`.
    pub fn tuple_at(&self, mut offset: usize, out: &mut [usize]) {
        for slot in out.iter_mut().rev() {
            *slot = offset % self.n;
            offset /= self.n;
        }
    }

    /// Inverse of [`position`](Self::position), 1-based in and out.
    pub fn tuple(&self, position: usize) -> Result<Vec<usize>> {
        if position == 0 || position > self.len() {
            return Err(Error::Domain(format!(
                "position {position} outside [1, {}]",
                self.len()
            )));
        }
        let mut out = vec![0; self.ell];
        self.tuple_at(position - 1, &mut out);
        out.iter_mut().for_each(|i| *i += 1);
        Ok(out)
    }
}

/// 1-based flattening of a single index tuple.
pub fn flatten_index(indices: &[usize], n: usize) -> Result<usize> {
    FlatIndexMap::new(n, indices.len().max(1))?.position(indices)
}

/// Column-wise Khatri–Rao product `A ⊙ B`.
pub fn khatri_rao(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "khatri_rao column mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (n1, n2) = (a.nrows(), b.nrows());
    let mut out = RealMatrix::zeros(n1 * n2, a.ncols());
    for k in 0..a.ncols() {
        for i in 0..n1 {
            let aik = a[(i, k)];
            for j in 0..n2 {
                out[(i * n2 + j, k)] = aik * b[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Khatri–Rao power `A^{⊙ℓ}`; `ℓ = 1` returns a copy of `A`.
pub fn khatri_rao_power(a: &RealMatrix, ell: usize) -> Result<RealMatrix> {
    if ell == 0 {
        return Err(Error::Domain("Khatri–Rao power needs ℓ ≥ 1".into()));
    }
    let mut out = a.clone();
    for _ in 1..ell {
        out = khatri_rao(a, &out)?;
    }
    Ok(out)
}

/// The multilinear part of `A^{⊙2}`: rows indexed by pairs `i < j` in
/// lexicographic order, entry `A_{ik} A_{jk}`.
pub fn multilinear_kr_square(a: &RealMatrix) -> Result<RealMatrix> {
    let n = a.nrows();
    if n < 2 {
        return Err(Error::Shape(format!("multilinear square needs n ≥ 2, got {n}")));
    }
    let rows = n * (n - 1) / 2;
    let mut out = RealMatrix::zeros(rows, a.ncols());
    for k in 0..a.ncols() {
        let mut r = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                out[(r, k)] = a[(i, k)] * a[(j, k)];
                r += 1;
            }
        }
    }
    Ok(out)
}

/// Singular values in decreasing order.
pub fn singular_values(a: &RealMatrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// `σ_{min(rows, cols)}(A)`.
pub fn sigma_min(a: &RealMatrix) -> f64 {
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// `σ_k(A)` with 1-based `k` (decreasing order); zero past the rank bound.
pub fn sigma_k(a: &RealMatrix, k: usize) -> f64 {
    assert!(k >= 1, "singular values are 1-indexed");
    singular_values(a).get(k - 1).copied().unwrap_or(0.0)
}

/// Moore–Penrose pseudo-inverse through the SVD. Singular values below
/// `max(rows, cols) · σ_max · 1e-12` are treated as zero.
pub fn pseudo_inverse(a: &RealMatrix) -> RealMatrix {
    let (r, c) = a.shape();
    if a.is_empty() {
        return RealMatrix::zeros(c, r);
    }
    let svd = a.clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let cutoff = r.max(c) as f64 * smax * 1e-12;
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut out = RealMatrix::zeros(c, r);
    for (k, &sk) in s.iter().enumerate() {
        if sk <= cutoff || sk == 0.0 {
            continue;
        }
        let inv = 1.0 / sk;
        for i in 0..c {
            let vik = vt[(k, i)] * inv;
            if vik == 0.0 {
                continue;
            }
            for j in 0..r {
                out[(i, j)] += vik * u[(j, k)];
            }
        }
    }
    out
}

/// Eigendecomposition of a symmetric matrix with eigenpairs sorted by
/// decreasing eigenvalue. The input is symmetrized first.
pub fn symmetric_eigen_desc(m: &RealMatrix) -> (Vec<f64>, RealMatrix) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = RealMatrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Flips `v` so that its entry of largest magnitude is positive.
pub fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.neg_mut();
    }
}

/// Recovers `u` (unit norm, canonical sign) from the flattening of a tensor
/// close to `c · u^{⊗p}`.
pub fn rank1_deflatten(v: &[f64], n: usize, p: usize) -> Result<DVector<f64>> {
    if p < 2 {
        return Err(Error::Domain(format!("deflation order must be ≥ 2, got {p}")));
    }
    let expect = n
        .checked_pow(p as u32)
        .ok_or_else(|| Error::Domain("n^p overflows".into()))?;
    if v.len() != expect {
        return Err(Error::Shape(format!(
            "vector length {} is not n^p = {expect}",
            v.len()
        )));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::Degenerate("cannot deflate the zero vector".into()));
    }
    let mut u = if p == 2 {
        // Row i of the n×n reshaping holds entries δ(i, ·).
        let m = RealMatrix::from_row_slice(n, n, v);
        let (vals, vecs) = symmetric_eigen_desc(&m);
        // The scale c may be negative, so pick the dominant eigenvalue by magnitude.
        let first = vals[0].abs();
        let last = vals[n - 1].abs();
        let idx = if last > first { n - 1 } else { 0 };
        vecs.column(idx).into_owned()
    } else {
        let cols = expect / n;
        let m = RealMatrix::from_row_slice(n, cols, v);
        let svd = m.svd(true, false);
        let s = &svd.singular_values;
        let top = (0..s.len())
            .max_by(|&i, &j| s[i].total_cmp(&s[j]))
            .expect("nonempty");
        svd.u.expect("requested U").column(top).into_owned()
    };
    let norm = u.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate("deflation produced a zero vector".into()));
    }
    u /= norm;
    canonical_sign(&mut u);
    Ok(u)
}

/// Scales every column to unit Euclidean norm; zero columns are left alone.
pub fn normalize_columns(a: &RealMatrix) -> RealMatrix {
    let mut out = a.clone();
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    out
}

/// Flattened `u^{⊗p}` under the δ convention.
pub fn tensor_power_flat(u: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..p {
        let mut next = Vec::with_capacity(out.len() * u.len());
        for &x in &out {
            next.extend(u.iter().map(|&y| x * y));
        }
        out = next;
    }
    out
}

/// Row-major nested vectors, the layout used by every JSON interface.
pub fn matrix_to_rows(a: &RealMatrix) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<RealMatrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape("ragged matrix rows".into()));
    }
    Ok(RealMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Serde adapter storing a matrix as row-major nested arrays.
pub mod serde_rows {
    use super::{matrix_from_rows, matrix_to_rows, RealMatrix};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &RealMatrix, s: S) -> Result<S::Ok, S::Error> {
        matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RealMatrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
