//! Regular-grid tensor fields over pixels and their quadrature points.
//!
//! Fields are stored pixel-major, quadrature-point-minor, tensor-component
//! last, i.e. index `((iy*nx + ix)*nq + q)*ncomp + c`, so that a single
//! (q, c) plane is a strided view over the (ny, nx) pixel lattice that the
//! FFT machinery can gather cheaply.
//!
//! Symmetric rank-2 tensors use the Mandel convention `[t11, t22, √2·t12]`,
//! which makes tensor norms plain Euclidean vector norms and rank-4
//! contractions plain 3×3 matrix algebra. That matters because the trust
//! region radius is defined as a Euclidean norm in strain space.

use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Shape of a rectangular periodic cell discretized by a regular pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Quadrature points per pixel (1 for the Fourier basis, 2 for linear FE).
    pub nq: usize,
}

impl GridShape {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64, nq: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(HomogError::Grid(format!(
                "need at least 2 pixels per direction, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0) || !(ly > 0.0) {
            return Err(HomogError::Grid(format!(
                "cell edge lengths must be positive, got {lx}, {ly}"
            )));
        }
        if nq < 1 {
            return Err(HomogError::Grid("need at least 1 quadrature point".into()));
        }
        Ok(Self { nx, ny, lx, ly, nq })
    }

    #[inline]
    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn n_qp(&self) -> usize {
        self.n_pixels() * self.nq
    }

    /// Pixel size along x.
    #[inline]
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    /// Pixel size along y.
    #[inline]
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    #[inline]
    pub fn volume(&self) -> f64 {
        self.lx * self.ly
    }

    /// Uniform quadrature weight (equal-area elements on a regular grid).
    #[inline]
    pub fn qp_weight(&self) -> f64 {
        self.hx() * self.hy() / self.nq as f64
    }

    #[inline]
    pub fn pixel(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }
}

/// Tensor rank of a field; components per quadrature point in 2D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorRank {
    Scalar,
    Rank2,
    Rank4,
}

impl TensorRank {
    #[inline]
    pub fn ncomp(self) -> usize {
        match self {
            TensorRank::Scalar => 1,
            TensorRank::Rank2 => 3,
            TensorRank::Rank4 => 9,
        }
    }
}

/// Live/peak accounting of field allocations, used to assert the solver
/// memory contract (the trust-region driver may keep at most one extra
/// persistent field — the previous stress — over plain Newton-CG).
pub mod field_stats {
    use std::sync::atomic::{AtomicI64, Ordering};

    static LIVE: AtomicI64 = AtomicI64::new(0);
    static PEAK: AtomicI64 = AtomicI64::new(0);

    pub fn live() -> i64 {
        LIVE.load(Ordering::Relaxed)
    }

    pub fn peak() -> i64 {
        PEAK.load(Ordering::Relaxed)
    }

    /// Resets the peak to the current live count.
    pub fn reset_peak() {
        PEAK.store(LIVE.load(Ordering::Relaxed), Ordering::Relaxed);
    }

    pub(super) fn on_alloc() {
        let l = LIVE.fetch_add(1, Ordering::Relaxed) + 1;
        PEAK.fetch_max(l, Ordering::Relaxed);
    }

    pub(super) fn on_free() {
        LIVE.fetch_sub(1, Ordering::Relaxed);
    }
}

/// Tensor-valued field over all quadrature points of a grid.
#[derive(Debug, PartialEq)]
pub struct QPField {
    shape: GridShape,
    rank: TensorRank,
    data: Vec<f64>,
}

impl Clone for QPField {
    fn clone(&self) -> Self {
        field_stats::on_alloc();
        Self {
            shape: self.shape,
            rank: self.rank,
            data: self.data.clone(),
        }
    }
}

impl Drop for QPField {
    fn drop(&mut self) {
        field_stats::on_free();
    }
}

impl QPField {
    pub fn zeros(shape: GridShape, rank: TensorRank) -> Self {
        field_stats::on_alloc();
        Self {
            shape,
            rank,
            data: vec![0.0; shape.n_qp() * rank.ncomp()],
        }
    }

    /// Rank-2 field with the same Mandel value at every quadrature point.
    pub fn uniform_rank2(shape: GridShape, value: [f64; 3]) -> Self {
        let mut f = Self::zeros(shape, TensorRank::Rank2);
        for qp in f.data.chunks_exact_mut(3) {
            qp.copy_from_slice(&value);
        }
        f
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn rank(&self) -> TensorRank {
        self.rank
    }

    #[inline]
    pub fn ncomp(&self) -> usize {
        self.rank.ncomp()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Components of quadrature point `q` of pixel `(ix, iy)`.
    #[inline]
    pub fn at(&self, ix: usize, iy: usize, q: usize) -> &[f64] {
        let n = self.ncomp();
        let i = (self.shape.pixel(ix, iy) * self.shape.nq + q) * n;
        &self.data[i..i + n]
    }

    #[inline]
    pub fn at_mut(&mut self, ix: usize, iy: usize, q: usize) -> &mut [f64] {
        let n = self.ncomp();
        let i = (self.shape.pixel(ix, iy) * self.shape.nq + q) * n;
        &mut self.data[i..i + n]
    }

    /// Flat quadrature point index (pixel-major, qp-minor).
    #[inline]
    pub fn qp(&self, i: usize) -> &[f64] {
        let n = self.ncomp();
        &self.data[i * n..(i + 1) * n]
    }

    #[inline]
    pub fn qp_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.ncomp();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// Checks that `other` has identical shape and rank.
    pub fn check_same_layout(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape || self.rank != other.rank {
            return Err(HomogError::ShapeMismatch(format!(
                "{what}: {:?}/{:?} vs {:?}/{:?}",
                self.shape, self.rank, other.shape, other.rank
            )));
        }
        Ok(())
    }

    /// Quadrature-weight-averaged rank-2 tensor (weights are uniform).
    pub fn mean_rank2(&self) -> Result<[f64; 3]> {
        if self.rank != TensorRank::Rank2 {
            return Err(HomogError::ShapeMismatch(
                "mean_rank2 needs a rank-2 field".into(),
            ));
        }
        if !self.is_finite() {
            return Err(HomogError::NonFinite("field_mean input"));
        }
        let n = self.shape.n_qp() as f64;
        let mut m = [0.0; 3];
        for c in 0..3 {
            m[c] = pairwise_sum_strided(&self.data, c, 3) / n;
        }
        Ok(m)
    }

    /// Quadrature-weighted inner product Σ_qp w·(a:b); energy-valued when the
    /// arguments are stress and strain.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same_layout(other, "field_inner")?;
        Ok(self.shape.qp_weight() * dot_pairwise(&self.data, &other.data))
    }

    /// Plain Euclidean norm over all components (trust-region metric).
    pub fn norm(&self) -> f64 {
        dot_pairwise(&self.data, &self.data).sqrt()
    }

    /// Root-mean-square amplitude over quadrature-point components; grid-size
    /// independent residual measure.
    pub fn rms(&self) -> f64 {
        (dot_pairwise(&self.data, &self.data) / self.data.len() as f64).sqrt()
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert_eq!(self.data.len(), x.data.len());
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for s in self.data.iter_mut() {
            *s *= a;
        }
    }

    /// Adds a uniform rank-2 tensor to every quadrature point.
    pub fn add_uniform_rank2(&mut self, value: [f64; 3]) {
        debug_assert_eq!(self.rank, TensorRank::Rank2);
        for qp in self.data.chunks_exact_mut(3) {
            qp[0] += value[0];
            qp[1] += value[1];
            qp[2] += value[2];
        }
    }
}

/// Pairwise (cascade) summation of `a[offset + k*stride] * b[offset + k*stride]`
/// style products; deterministic and ~log(n)·eps accurate.
pub fn dot_pairwise(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    fn rec(a: &[f64], b: &[f64]) -> f64 {
        if a.len() <= 64 {
            let mut s = 0.0;
            for (x, y) in a.iter().zip(b) {
                s += x * y;
            }
            s
        } else {
            let mid = a.len() / 2;
            rec(&a[..mid], &b[..mid]) + rec(&a[mid..], &b[mid..])
        }
    }
    rec(a, b)
}

fn pairwise_sum_strided(a: &[f64], offset: usize, stride: usize) -> f64 {
    let n = a.len() / stride;
    fn rec(a: &[f64], offset: usize, stride: usize, lo: usize, hi: usize) -> f64 {
        if hi - lo <= 64 {
            let mut s = 0.0;
            for k in lo..hi {
                s += a[offset + k * stride];
            }
            s
        } else {
            let mid = (lo + hi) / 2;
            rec(a, offset, stride, lo, mid) + rec(a, offset, stride, mid, hi)
        }
    }
    rec(a, offset, stride, 0, n)
}

// ---------------------------------------------------------------------------
// Mandel notation helpers for symmetric 2x2 tensors and 3x3 rank-4 matrices.
// ---------------------------------------------------------------------------

/// `[t11, t22, √2·t12]` from a symmetric 2x2 tensor given as (t11, t22, t12).
#[inline]
pub fn mandel_from_tensor(t11: f64, t22: f64, t12: f64) -> [f64; 3] {
    [t11, t22, SQRT2 * t12]
}

/// (t11, t22, t12) from a Mandel vector.
#[inline]
pub fn tensor_from_mandel(m: &[f64; 3]) -> (f64, f64, f64) {
    (m[0], m[1], m[2] / SQRT2)
}

/// Frobenius norm of the tensor a Mandel vector represents; equals the
/// Euclidean norm of the vector.
#[inline]
pub fn mandel_norm(m: &[f64; 3]) -> f64 {
    (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt()
}

/// y = A·x for a rank-4 tensor stored as a row-major Mandel 3x3 matrix.
#[inline]
pub fn mandel_matvec(a: &[f64; 9], x: &[f64]) -> [f64; 3] {
    [
        a[0] * x[0] + a[1] * x[1] + a[2] * x[2],
        a[3] * x[0] + a[4] * x[1] + a[5] * x[2],
        a[6] * x[0] + a[7] * x[1] + a[8] * x[2],
    ]
}

/// Eigendecomposition of the symmetric 2x2 tensor behind a Mandel vector.
/// Returns `(l1, l2, (c, s))` where `l1 >= l2` and `(c, s)` is the unit
/// eigenvector of `l1`; the second eigenvector is `(-s, c)`.
pub fn eig_sym2(m: &[f64; 3]) -> (f64, f64, (f64, f64)) {
    let (a, d, b) = tensor_from_mandel(m);
    let tr_half = 0.5 * (a + d);
    let diff_half = 0.5 * (a - d);
    let rad = (diff_half * diff_half + b * b).sqrt();
    let l1 = tr_half + rad;
    let l2 = tr_half - rad;
    // Eigenvector of l1: (b, l1 - a) or (l1 - d, b), whichever is better
    // conditioned; degenerate tensors get the x axis.
    let (vx, vy) = if diff_half >= 0.0 {
        (diff_half + rad, b)
    } else {
        (b, rad - diff_half)
    };
    let n = (vx * vx + vy * vy).sqrt();
    if n > 0.0 {
        (l1, l2, (vx / n, vy / n))
    } else {
        (l1, l2, (1.0, 0.0))
    }
}

/// Plane-strain isotropic stiffness as a Mandel 3x3 matrix.
pub fn isotropic_stiffness(e: f64, nu: f64) -> [f64; 9] {
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    [
        lambda + 2.0 * mu,
        lambda,
        0.0,
        lambda,
        lambda + 2.0 * mu,
        0.0,
        0.0,
        0.0,
        2.0 * mu,
    ]
}
