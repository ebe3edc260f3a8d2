//! Discrete derivative operators and the compatibility projector.
//!
//! The projector maps an arbitrary rank-2 field to its nearest compatible
//! (symmetrized periodic gradient) field. It is block diagonal in Fourier
//! space: at each frequency the compatible strains are exactly
//! `sym(D̂_q ⊗ û)` for a displacement amplitude `û ∈ ℂ²`, where `D̂` is the
//! Fourier representation of the chosen discrete derivative. The per
//! frequency block is the orthogonal projector onto that subspace, expressed
//! in Mandel components stacked over quadrature points.
//!
//! Two derivative schemes are supported: the classical Fourier basis
//! (`D̂ = i·2π·k/l`, one quadrature point) and a linear finite element
//! discretization with two right triangles per pixel (one quadrature point
//! each), whose compact stencils eliminate the Gibbs ringing of the
//! trigonometric basis at sharp phase boundaries.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};
use crate::fft::{signed_freq, Fft2};
use crate::grid::{GridShape, QPField, TensorRank, SQRT2};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Discrete derivative basis used to build the projector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeScheme {
    /// Trigonometric basis, `D̂(k) = i·2π·k/l`, one quadrature point per pixel.
    Fourier,
    /// Linear triangular finite elements, two per pixel split along the
    /// main diagonal, one quadrature point each.
    LinearFe,
}

impl DerivativeScheme {
    #[inline]
    pub fn quad_points(self) -> usize {
        match self {
            DerivativeScheme::Fourier => 1,
            DerivativeScheme::LinearFe => 2,
        }
    }
}

/// Real-space stencil of one linear FE quadrature point: node offsets within
/// {0,1}² and the weight of each node value in the constant element gradient.
pub fn linear_fe_stencil(q: usize, alpha: usize, hx: f64, hy: f64) -> [(usize, usize, f64); 2] {
    // Lower triangle (q=0): nodes (0,0),(1,0),(1,1); upper (q=1): (0,0),(1,1),(0,1).
    match (q, alpha) {
        (0, 0) => [(0, 0, -1.0 / hx), (1, 0, 1.0 / hx)],
        (0, 1) => [(1, 0, -1.0 / hy), (1, 1, 1.0 / hy)],
        (1, 0) => [(0, 1, -1.0 / hx), (1, 1, 1.0 / hx)],
        (1, 1) => [(0, 0, -1.0 / hy), (0, 1, 1.0 / hy)],
        _ => unreachable!("2D linear FE has q in 0..2, alpha in 0..2"),
    }
}

/// Per-frequency derivative operator `D̂_{qα}(k)`.
pub struct DerivativeOperator {
    shape: GridShape,
    scheme: DerivativeScheme,
    /// Indexed `(freq * nq + q) * 2 + alpha`, freq index `ky*nx + kx`.
    dhat: Vec<Complex64>,
}

impl DerivativeOperator {
    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn scheme(&self) -> DerivativeScheme {
        self.scheme
    }

    #[inline]
    pub fn at(&self, freq: usize, q: usize, alpha: usize) -> Complex64 {
        self.dhat[(freq * self.shape.nq + q) * 2 + alpha]
    }
}

/// Builds `D̂` for the requested scheme on a grid whose `nq` must match the
/// scheme's quadrature point count.
pub fn build_derivative(scheme: DerivativeScheme, grid: GridShape) -> Result<DerivativeOperator> {
    if grid.nq != scheme.quad_points() {
        return Err(HomogError::Projection(format!(
            "scheme {:?} needs nq = {}, grid has nq = {}",
            scheme,
            scheme.quad_points(),
            grid.nq
        )));
    }
    let (nx, ny, nq) = (grid.nx, grid.ny, grid.nq);
    let mut dhat = vec![Complex64::default(); nx * ny * nq * 2];
    for ky in 0..ny {
        for kx in 0..nx {
            let freq = ky * nx + kx;
            match scheme {
                DerivativeScheme::Fourier => {
                    let k0 = signed_freq(kx, nx) as f64;
                    let k1 = signed_freq(ky, ny) as f64;
                    dhat[freq * 2] = Complex64::new(0.0, TWO_PI * k0 / grid.lx);
                    dhat[freq * 2 + 1] = Complex64::new(0.0, TWO_PI * k1 / grid.ly);
                }
                DerivativeScheme::LinearFe => {
                    for q in 0..nq {
                        for alpha in 0..2 {
                            let mut v = Complex64::default();
                            for (ox, oy, w) in linear_fe_stencil(q, alpha, grid.hx(), grid.hy()) {
                                // Gradient at pixel x gathers node values at
                                // x + o, hence the +i sign in the transform.
                                let phase = TWO_PI
                                    * (kx as f64 * ox as f64 / nx as f64
                                        + ky as f64 * oy as f64 / ny as f64);
                                v += w * Complex64::from_polar(1.0, phase);
                            }
                            dhat[(freq * nq + q) * 2 + alpha] = v;
                        }
                    }
                }
            }
        }
    }
    // Enforce exact conjugate symmetry D̂(-k) = conj(D̂(k)) so the projector
    // blocks inherit it bitwise and real fields stay real after application.
    for ky in 0..ny {
        for kx in 0..nx {
            let freq = ky * nx + kx;
            let mky = (ny - ky) % ny;
            let mkx = (nx - kx) % nx;
            let mirror = mky * nx + mkx;
            if mirror > freq {
                for j in 0..nq * 2 {
                    dhat[mirror * nq * 2 + j] = dhat[freq * nq * 2 + j].conj();
                }
            } else if mirror == freq && scheme == DerivativeScheme::LinearFe {
                // Self-conjugate frequency: the FE stencil transform is real
                // there; drop the sin(π·integer) roundoff dirt.
                for j in 0..nq * 2 {
                    dhat[freq * nq * 2 + j].im = 0.0;
                }
            }
        }
    }
    Ok(DerivativeOperator {
        shape: grid,
        scheme,
        dhat,
    })
}

/// Handling of the zero-frequency (mean) block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroFreqMode {
    /// Mean strain is prescribed: the projector annihilates the mean.
    StrainControl,
    /// Mean stress is prescribed: identity block, the mean strain becomes an
    /// unknown driven by the mean-stress residual.
    StressControl,
}

/// Per-frequency compatibility projector, stored as an orthonormal basis of
/// the compatible subspace at each frequency (the block is `V·V^H`).
pub struct ProjectionOperator {
    shape: GridShape,
    scheme: DerivativeScheme,
    mode: ZeroFreqMode,
    /// Stacked Mandel dimension, `3·nq`.
    m: usize,
    /// `(freq * 2 + col) * m + row`
    basis: Vec<Complex64>,
    ncols: Vec<u8>,
    fft: Fft2,
}

/// Work buffers for `ProjectionOperator::apply`; reuse across calls.
pub struct ProjScratch {
    planes: Vec<Complex64>,
    col: Vec<Complex64>,
}

impl ProjScratch {
    pub fn new(grid: GridShape) -> Self {
        Self {
            planes: vec![Complex64::default(); grid.n_pixels() * grid.nq * 3],
            col: vec![Complex64::default(); grid.ny],
        }
    }
}

/// Assembles the projector from a derivative operator.
pub fn build_projection(d: &DerivativeOperator, mode: ZeroFreqMode) -> Result<ProjectionOperator> {
    let grid = d.shape();
    let (nx, ny, nq) = (grid.nx, grid.ny, grid.nq);
    let m = 3 * nq;
    let nfreq = nx * ny;
    let mut basis = vec![Complex64::default(); nfreq * 2 * m];
    let mut ncols = vec![0u8; nfreq];

    let mut v1 = vec![Complex64::default(); m];
    let mut v2 = vec![Complex64::default(); m];
    for freq in 0..nfreq {
        if freq == 0 {
            continue; // handled by the zero-frequency mode
        }
        let mut ddot = 0.0;
        for q in 0..nq {
            let dx = d.at(freq, q, 0);
            let dy = d.at(freq, q, 1);
            ddot += dx.norm_sqr() + dy.norm_sqr();
            // Mandel components of sym(D̂_q ⊗ e_x) and sym(D̂_q ⊗ e_y).
            v1[q * 3] = dx;
            v1[q * 3 + 1] = Complex64::default();
            v1[q * 3 + 2] = dy / SQRT2;
            v2[q * 3] = Complex64::default();
            v2[q * 3 + 1] = dy;
            v2[q * 3 + 2] = dx / SQRT2;
        }
        if ddot == 0.0 {
            let kx = freq % nx;
            let ky = freq / nx;
            return Err(HomogError::Projection(format!(
                "degenerate derivative operator at k = ({kx}, {ky})"
            )));
        }
        let dscale = ddot.sqrt();

        let n1 = norm(&v1);
        let mut cols = 0;
        if n1 > 1e-14 * dscale {
            for r in 0..m {
                basis[(freq * 2) * m + r] = v1[r] / n1;
            }
            cols = 1;
        }
        if cols == 1 {
            // Orthogonalize v2 against u1, twice for stability.
            let v2_scale = norm(&v2);
            for _ in 0..2 {
                let mut h = Complex64::default();
                for r in 0..m {
                    h += basis[(freq * 2) * m + r].conj() * v2[r];
                }
                for r in 0..m {
                    let u = basis[(freq * 2) * m + r];
                    v2[r] -= h * u;
                }
            }
            let n2 = norm(&v2);
            if n2 > 1e-13 * v2_scale.max(dscale) {
                for r in 0..m {
                    basis[(freq * 2 + 1) * m + r] = v2[r] / n2;
                }
                cols = 2;
            }
        }
        ncols[freq] = cols;
    }

    Ok(ProjectionOperator {
        shape: grid,
        scheme: d.scheme(),
        mode,
        m,
        basis,
        ncols,
        fft: Fft2::new(nx, ny),
    })
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

impl ProjectionOperator {
    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn scheme(&self) -> DerivativeScheme {
        self.scheme
    }

    #[inline]
    pub fn mode(&self) -> ZeroFreqMode {
        self.mode
    }

    /// Dense m×m block at one frequency (row-major), for diagnostics and
    /// tests; `apply` never forms it.
    pub fn block(&self, freq: usize, mode: ZeroFreqMode) -> Vec<Complex64> {
        let m = self.m;
        let mut p = vec![Complex64::default(); m * m];
        if freq == 0 {
            if mode == ZeroFreqMode::StressControl {
                for r in 0..m {
                    p[r * m + r] = Complex64::new(1.0, 0.0);
                }
            }
            return p;
        }
        for col in 0..self.ncols[freq] as usize {
            let u = &self.basis[(freq * 2 + col) * m..(freq * 2 + col) * m + m];
            for r in 0..m {
                for c in 0..m {
                    p[r * m + c] += u[r] * u[c].conj();
                }
            }
        }
        p
    }

    /// Applies the projector with the stored zero-frequency mode.
    pub fn apply(&self, f: &QPField, scratch: &mut ProjScratch) -> Result<QPField> {
        self.apply_with_mode(f, self.mode, scratch)
    }

    /// Applies the projector with an explicit zero-frequency mode (used by
    /// strain-controlled probe solves on stress-controlled cells).
    pub fn apply_with_mode(
        &self,
        f: &QPField,
        mode: ZeroFreqMode,
        scratch: &mut ProjScratch,
    ) -> Result<QPField> {
        let (out, residue) = self.apply_with_residue(f, mode, scratch)?;
        let fnorm = f.norm();
        if residue > 1e-12 * fnorm + 1e-300 {
            return Err(HomogError::Projection(format!(
                "imaginary residue {residue:.3e} exceeds 1e-12 of the input norm {fnorm:.3e}"
            )));
        }
        Ok(out)
    }

    /// Projector application that also returns the Euclidean norm of the
    /// discarded imaginary part (the output of an exact projector applied to
    /// a real field is real; the residue measures accumulated roundoff).
    pub fn apply_with_residue(
        &self,
        f: &QPField,
        mode: ZeroFreqMode,
        scratch: &mut ProjScratch,
    ) -> Result<(QPField, f64)> {
        if f.shape() != self.shape || f.rank() != TensorRank::Rank2 {
            return Err(HomogError::ShapeMismatch(
                "apply_projection needs a rank-2 field on the operator grid".into(),
            ));
        }
        let grid = self.shape;
        let (nx, ny, nq) = (grid.nx, grid.ny, grid.nq);
        let npix = nx * ny;
        let m = self.m;
        let data = f.data();

        // Gather (q, c) planes and transform them.
        for p in 0..m {
            let (q, c) = (p / 3, p % 3);
            let plane = &mut scratch.planes[p * npix..(p + 1) * npix];
            for pix in 0..npix {
                plane[pix] = Complex64::new(data[(pix * nq + q) * 3 + c], 0.0);
            }
            self.fft.forward(plane, &mut scratch.col);
        }

        // Per-frequency block action y = V (V^H x).
        for freq in 0..npix {
            if freq == 0 {
                if mode == ZeroFreqMode::StrainControl {
                    for p in 0..m {
                        scratch.planes[p * npix] = Complex64::default();
                    }
                }
                continue; // StressControl keeps the mean untouched
            }
            let cols = self.ncols[freq] as usize;
            let mut coeff = [Complex64::default(); 2];
            for col in 0..cols {
                let u = &self.basis[(freq * 2 + col) * m..(freq * 2 + col) * m + m];
                let mut h = Complex64::default();
                for p in 0..m {
                    h += u[p].conj() * scratch.planes[p * npix + freq];
                }
                coeff[col] = h;
            }
            for p in 0..m {
                let mut y = Complex64::default();
                for col in 0..cols {
                    y += coeff[col] * self.basis[(freq * 2 + col) * m + p];
                }
                scratch.planes[p * npix + freq] = y;
            }
        }

        // Back to real space; collect the real part and report the discarded
        // imaginary residue.
        let mut out = QPField::zeros(grid, TensorRank::Rank2);
        let out_data = out.data_mut();
        let mut imag_sq = 0.0;
        for p in 0..m {
            let (q, c) = (p / 3, p % 3);
            let plane = &mut scratch.planes[p * npix..(p + 1) * npix];
            self.fft.inverse(plane, &mut scratch.col);
            for pix in 0..npix {
                out_data[(pix * nq + q) * 3 + c] = plane[pix].re;
                imag_sq += plane[pix].im * plane[pix].im;
            }
        }
        Ok((out, imag_sq.sqrt()))
    }

    /// Worst-case block algebra errors plus randomized field-level checks;
    /// serialized by the `--check-projector` CLI flag.
    pub fn self_check(&self, seed: u64) -> Result<ProjectorCheck> {
        let m = self.m;
        let mut max_idem = 0.0f64;
        let mut max_herm = 0.0f64;
        for freq in 0..self.shape.n_pixels() {
            let p = self.block(freq, self.mode);
            for r in 0..m {
                for c in 0..m {
                    let mut pp = Complex64::default();
                    for j in 0..m {
                        pp += p[r * m + j] * p[j * m + c];
                    }
                    max_idem = max_idem.max((pp - p[r * m + c]).norm());
                    max_herm = max_herm.max((p[r * m + c] - p[c * m + r].conj()).norm());
                }
            }
        }

        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut f = QPField::zeros(self.shape, TensorRank::Rank2);
        for v in f.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut scratch = ProjScratch::new(self.shape);
        let (gf, residue) = self.apply_with_residue(&f, self.mode, &mut scratch)?;
        let imag_residue_rel = residue / f.norm();
        let ggf = self.apply(&gf, &mut scratch)?;
        let mut diff = ggf.clone();
        diff.axpy(-1.0, &gf);
        let idem_rel = diff.norm() / f.norm();

        let mut g = QPField::zeros(self.shape, TensorRank::Rank2);
        for v in g.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let gg = self.apply(&g, &mut scratch)?;
        let lhs = gf.inner(&g)?;
        let rhs = f.inner(&gg)?;
        let selfadj_rel = (lhs - rhs).abs() / (f.norm() * g.norm() * self.shape.qp_weight());

        let zero_mean_rel = match self.mode {
            ZeroFreqMode::StrainControl => {
                let mean = gf.mean_rank2()?;
                crate::grid::mandel_norm(&mean) / f.norm()
            }
            ZeroFreqMode::StressControl => 0.0,
        };

        Ok(ProjectorCheck {
            scheme: self.scheme,
            mode: self.mode,
            nx: self.shape.nx,
            ny: self.shape.ny,
            max_block_idempotency_error: max_idem,
            max_block_hermiticity_error: max_herm,
            field_idempotency_rel: idem_rel,
            field_self_adjointness_rel: selfadj_rel,
            field_zero_mean_rel: zero_mean_rel,
            field_imag_residue_rel: imag_residue_rel,
        })
    }
}

/// Result of the projector self-test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectorCheck {
    pub scheme: DerivativeScheme,
    pub mode: ZeroFreqMode,
    pub nx: usize,
    pub ny: usize,
    pub max_block_idempotency_error: f64,
    pub max_block_hermiticity_error: f64,
    pub field_idempotency_rel: f64,
    pub field_self_adjointness_rel: f64,
    pub field_zero_mean_rel: f64,
    pub field_imag_residue_rel: f64,
}

/// Builds the grid for a scheme: callers give pixel counts and cell size, the
/// scheme dictates the quadrature layout.
pub fn grid_for_scheme(
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    scheme: DerivativeScheme,
) -> Result<GridShape> {
    GridShape::new(nx, ny, lx, ly, scheme.quad_points())
}
