//! Linear-system representation and the numerical linear-algebra substrate.
//!
//! A plant is a discrete-time LTI triple `(A, B, C)`:
//!
//! ```text
//! x(t+1) = A x(t) + B u(t)
//! y(t)   = C x(t) + e(t)
//! ```
//!
//! with `x ∈ R^n`, `u ∈ R^m`, `y ∈ R^p` and `e` the per-sensor attack signal.
//! This module provides zero-order-hold discretization, per-sensor
//! observability stacking, numerical rank/kernel computations and the
//! r-sparse observability test. Sensor indices are 1-based everywhere at the
//! public surface.
//!
//! All functions here are pure; they can be called concurrently without
//! synchronization.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::config::NumericConfig;
use crate::error::{Error, Result};

/// Discrete-time linear time-invariant system.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl LtiSystem {
    /// Builds a system, validating shapes and finiteness.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must be {}xm with m >= 1, got {}x{}",
                n,
                b.nrows(),
                b.ncols()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "C must be pxn with p >= 1 and n = {}, got {}x{}",
                n,
                c.nrows(),
                c.ncols()
            )));
        }
        for m in [&a, &b, &c] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(
                    "system matrices must have finite entries".into(),
                ));
            }
        }
        Ok(Self { a, b, c })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn sensor_count(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Row of `C` belonging to a 1-based sensor index.
    pub fn sensor_row(&self, sensor: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(1, self.state_dim());
        out.row_mut(0).copy_from(&self.c.row(sensor - 1));
        out
    }

    /// Rows of `C` for a sensor subset, stacked in subset order.
    pub fn output_rows(&self, subset: &SensorSubset) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut out = DMatrix::zeros(subset.len(), n);
        for (k, &i) in subset.indices().iter().enumerate() {
            out.row_mut(k).copy_from(&self.c.row(i - 1));
        }
        out
    }

    /// Per-sensor observability stack to the given depth.
    ///
    /// For each sensor `i` in the subset, in subset order, contributes the
    /// rows `C_i, C_i A, ..., C_i A^{depth-1}`; all rows of the first sensor
    /// come first, then the second, and so on.
    pub fn observability_matrix(&self, subset: &SensorSubset, depth: usize) -> DMatrix<f64> {
        assert!(depth >= 1, "observability depth must be at least 1");
        let n = self.state_dim();
        // C_sub * A^k for k = 0..depth, computed once for all sensors.
        let c_sub = self.output_rows(subset);
        let mut blocks = Vec::with_capacity(depth);
        blocks.push(c_sub.clone());
        for k in 1..depth {
            let next = &blocks[k - 1] * &self.a;
            blocks.push(next);
        }
        let mut out = DMatrix::zeros(subset.len() * depth, n);
        for (s, _) in subset.indices().iter().enumerate() {
            for (k, block) in blocks.iter().enumerate() {
                out.row_mut(s * depth + k).copy_from(&block.row(s));
            }
        }
        out
    }

    /// True iff every subset of `p - r` sensors keeps the pair observable.
    ///
    /// Evaluates all `C(p, p-r)` subsets at observability depth `n`.
    pub fn is_r_sparse_observable(&self, r: usize, cfg: &NumericConfig) -> Result<bool> {
        let p = self.sensor_count();
        let n = self.state_dim();
        if r >= p {
            return Err(Error::InvalidInput(format!(
                "sparse observability index r = {r} must be below the sensor count p = {p}"
            )));
        }
        for subset in sensor_combinations(p, p - r) {
            let obs = self.observability_matrix(&subset, n);
            if numerical_rank(&obs, cfg.tol_rank) < n {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `A^k` by repeated multiplication; exact enough for the small powers
    /// used here.
    pub fn a_power(&self, k: usize) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut out = DMatrix::identity(n, n);
        for _ in 0..k {
            out = &out * &self.a;
        }
        out
    }
}

/// Strictly increasing set of 1-based sensor indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SensorSubset {
    indices: Vec<usize>,
}

impl SensorSubset {
    /// Validates ordering, uniqueness and bounds (`1..=p`).
    pub fn new(indices: Vec<usize>, p: usize) -> Result<Self> {
        if indices.is_empty() || indices.len() > p {
            return Err(Error::InvalidInput(format!(
                "sensor subset must have between 1 and {p} indices"
            )));
        }
        let strictly_increasing = indices.windows(2).all(|w| w[0] < w[1]);
        if !strictly_increasing {
            return Err(Error::InvalidInput(
                "sensor indices must be strictly increasing".into(),
            ));
        }
        if indices[0] < 1 || *indices.last().unwrap() > p {
            return Err(Error::InvalidInput(format!(
                "sensor indices must lie within 1..={p}"
            )));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, sensor: usize) -> bool {
        self.indices.binary_search(&sensor).is_ok()
    }
}

impl std::fmt::Display for SensorSubset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{{}}}", self.indices.iter().join(","))
    }
}

/// All k-element sensor subsets of `{1..p}` in lexicographic order.
pub fn sensor_combinations(p: usize, k: usize) -> impl Iterator<Item = SensorSubset> {
    (1..=p)
        .combinations(k)
        .map(move |indices| SensorSubset { indices })
}

/// Orthonormal basis of a null space; `dim() == 0` means the trivial kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBasis {
    vectors: DMatrix<f64>,
}

impl KernelBasis {
    pub fn empty(n: usize) -> Self {
        Self {
            vectors: DMatrix::zeros(n, 0),
        }
    }

    /// Wraps columns already known to be orthonormal.
    pub fn from_orthonormal(vectors: DMatrix<f64>) -> Self {
        debug_assert!({
            let g = vectors.transpose() * &vectors;
            (g - DMatrix::identity(vectors.ncols(), vectors.ncols())).norm() < 1e-8
        });
        Self { vectors }
    }

    /// Basis columns as an `n x d` matrix.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.vectors.nrows()
    }

    /// Component of `x` orthogonal to the spanned subspace.
    pub fn orthogonal_component(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.dim() == 0 {
            return x.clone();
        }
        x - &self.vectors * (self.vectors.transpose() * x)
    }
}

/// Zero-order-hold discretization of a continuous-time pair `(Ac, Bc)`.
///
/// Computes the matrix exponential of the `(n+m) x (n+m)` augmented block
/// matrix `[[Ac, Bc], [0, 0]] * dt`; the top blocks are the exact sampled
/// pair `A = exp(Ac dt)`, `B = ∫_0^dt exp(Ac s) ds * Bc`.
pub fn zoh_discretize(
    ac: &DMatrix<f64>,
    bc: &DMatrix<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!(
            "sampling time must be positive and finite, got {dt}"
        )));
    }
    if ac.nrows() != ac.ncols() {
        return Err(Error::DimensionMismatch("Ac must be square".into()));
    }
    if bc.nrows() != ac.nrows() {
        return Err(Error::DimensionMismatch(
            "Bc must have as many rows as Ac".into(),
        ));
    }
    if ac.iter().chain(bc.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "continuous-time matrices must have finite entries".into(),
        ));
    }
    let n = ac.nrows();
    let m = bc.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(bc * dt));
    let exp = aug.exp();
    let a = exp.view((0, 0), (n, n)).into_owned();
    let b = exp.view((0, n), (n, m)).into_owned();
    Ok((a, b))
}

/// Number of singular values exceeding `tol_rank * max(1, sigma_max)`.
pub fn numerical_rank(m: &DMatrix<f64>, tol_rank: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let sigma_max = sv.max();
    let cut = tol_rank * sigma_max.max(1.0);
    sv.iter().filter(|&&s| s > cut).count()
}

/// Orthonormal basis of the numerical null space of `m`.
pub fn kernel_basis(m: &DMatrix<f64>, tol_rank: f64) -> KernelBasis {
    let n = m.ncols();
    if n == 0 {
        return KernelBasis::empty(0);
    }
    // Pad with zero rows so the thin SVD still exposes all n right singular
    // vectors when the matrix is wide.
    let work = if m.nrows() >= n {
        m.clone()
    } else {
        let mut padded = DMatrix::zeros(n, n);
        padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        padded
    };
    let svd = work.svd(false, true);
    let v_t = svd.v_t.expect("SVD requested with right singular vectors");
    let sigma_max = svd.singular_values.max();
    let cut = tol_rank * sigma_max.max(1.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
    let d = n - rank;
    let mut vectors = DMatrix::zeros(n, d);
    for k in 0..d {
        vectors
            .column_mut(k)
            .copy_from(&v_t.row(rank + k).transpose());
    }
    KernelBasis { vectors }
}

/// True iff `ker(m1) ⊆ ker(m2)`.
///
/// Uses the rank criterion: the kernels nest exactly when stacking `m2`
/// under `m1` does not increase the rank.
pub fn kernel_included(m1: &DMatrix<f64>, m2: &DMatrix<f64>, tol_rank: f64) -> Result<bool> {
    if m1.ncols() != m2.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "kernel inclusion needs equal column counts, got {} and {}",
            m1.ncols(),
            m2.ncols()
        )));
    }
    let stacked = stack_rows(&[m1.clone(), m2.clone()]);
    Ok(numerical_rank(&stacked, tol_rank) == numerical_rank(m1, tol_rank))
}

/// Orthonormal basis of the column span of `m` (columns may be dependent).
pub fn orthonormal_span(m: &DMatrix<f64>, tol_rank: f64) -> KernelBasis {
    if m.ncols() == 0 {
        return KernelBasis::empty(m.nrows());
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("SVD requested with left singular vectors");
    let sigma_max = svd.singular_values.max();
    let cut = tol_rank * sigma_max.max(1.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
    let mut vectors = DMatrix::zeros(m.nrows(), rank);
    for k in 0..rank {
        vectors.column_mut(k).copy_from(&u.column(k));
    }
    KernelBasis::from_orthonormal(vectors)
}

/// Vertical concatenation of equally wide matrices.
pub fn stack_rows(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    out
}
