//! Thin 2D complex FFT wrapper around rustfft.
//!
//! Convention: forward transform is unnormalized, the inverse carries the
//! 1/(nx·ny) factor. Planes are row-major `[iy][ix]`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    /// In-place forward transform of one row-major plane.
    /// `col` is scratch of length `ny`.
    pub fn forward(&self, plane: &mut [Complex64], col: &mut [Complex64]) {
        debug_assert_eq!(plane.len(), self.len());
        self.fwd_x.process(plane);
        self.columns(plane, col, &self.fwd_y);
    }

    /// In-place inverse transform with 1/(nx·ny) normalization.
    pub fn inverse(&self, plane: &mut [Complex64], col: &mut [Complex64]) {
        debug_assert_eq!(plane.len(), self.len());
        self.inv_x.process(plane);
        self.columns(plane, col, &self.inv_y);
        let scale = 1.0 / self.len() as f64;
        for v in plane.iter_mut() {
            *v *= scale;
        }
    }

    fn columns(&self, plane: &mut [Complex64], col: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(col.len(), self.ny);
        for ix in 0..self.nx {
            for iy in 0..self.ny {
                col[iy] = plane[iy * self.nx + ix];
            }
            fft.process(col);
            for iy in 0..self.ny {
                plane[iy * self.nx + ix] = col[iy];
            }
        }
    }
}

/// Signed integer frequency for DFT index `j` on a length-`n` grid,
/// numpy `fftfreq` style (Nyquist mapped to +n/2; the projector is
/// insensitive to that sign choice).
#[inline]
pub fn signed_freq(j: usize, n: usize) -> i64 {
    let j = j as i64;
    let n = n as i64;
    if j <= n / 2 {
        j
    } else {
        j - n
    }
}
