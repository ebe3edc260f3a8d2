//! Matrix-free trust-region subproblem solver: CG-Steihaug with an
//! orthogonality-reset safeguard against accumulated rounding error.
//!
//! The minimized model is `m(p) = -b·p + ½ p·A·p`, i.e. the solved system is
//! `A·p = b`. Exits: residual convergence, trust-region boundary, negative
//! curvature (boundary step along the current direction), iteration cap.
//! When two successive residuals lose orthogonality
//! (`|r_{j+1}·r_j|/‖r_{j+1}‖² > threshold`) the residual is recomputed from
//! scratch and the recurrence restarts with a gradient-descent direction.

use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};
use crate::grid::QPField;

/// Inner-product space operations the solver needs from its vectors.
pub trait InnerSpace: Clone {
    fn dot(&self, other: &Self) -> f64;
    /// `self += a·x`
    fn axpy(&mut self, a: f64, x: &Self);
    fn scale(&mut self, a: f64);
    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl InnerSpace for Vec<f64> {
    fn dot(&self, other: &Self) -> f64 {
        crate::grid::dot_pairwise(self, other)
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.iter_mut().zip(x) {
            *s += a * v;
        }
    }
    fn scale(&mut self, a: f64) {
        for s in self.iter_mut() {
            *s *= a;
        }
    }
}

impl InnerSpace for QPField {
    fn dot(&self, other: &Self) -> f64 {
        crate::grid::dot_pairwise(self.data(), other.data())
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        QPField::axpy(self, a, x);
    }
    fn scale(&mut self, a: f64) {
        QPField::scale(self, a);
    }
}

/// Residual tolerance: absolute on ‖r‖, or relative to ‖b‖ (grid robust).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgTolerance {
    Absolute(f64),
    RelativeToRhs(f64),
}

impl CgTolerance {
    fn resolve(self, bnorm: f64) -> f64 {
        match self {
            CgTolerance::Absolute(t) => t,
            CgTolerance::RelativeToRhs(t) => t * bnorm,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KrylovConfig {
    pub tol: CgTolerance,
    pub max_iter: usize,
    /// Orthogonality reset threshold; `None` disables the safeguard.
    pub reset_threshold: Option<f64>,
}

impl KrylovConfig {
    /// Grid-robust defaults for `n` unknowns: relative tolerance 1e-8,
    /// iteration cap `min(10·√n, n)`, reset threshold 0.2.
    pub fn default_for(n: usize) -> Self {
        Self {
            tol: CgTolerance::RelativeToRhs(1e-8),
            max_iter: default_max_iter(n),
            reset_threshold: Some(0.2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = match self.tol {
            CgTolerance::Absolute(t) | CgTolerance::RelativeToRhs(t) => t,
        };
        if !(t > 0.0) {
            return Err(HomogError::Krylov(format!(
                "tolerance must be positive, got {t}"
            )));
        }
        if self.max_iter < 1 {
            return Err(HomogError::Krylov("max_iter must be at least 1".into()));
        }
        if let Some(r) = self.reset_threshold {
            if !(0.1 < r && r < 0.9) {
                return Err(HomogError::Krylov(format!(
                    "reset threshold must lie in (0.1, 0.9), got {r}"
                )));
            }
        }
        Ok(())
    }
}

pub fn default_max_iter(n: usize) -> usize {
    ((10.0 * (n as f64).sqrt()).ceil() as usize).clamp(1, n.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    BoundaryHit,
    NegativeCurvature,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SubproblemResult<V> {
    pub p: V,
    pub termination: Termination,
    pub iterations: usize,
    pub resets: usize,
    /// Euclidean norm of the returned step.
    pub step_norm: f64,
    /// Final residual norm (meaningful for Converged / MaxIter).
    pub residual_norm: f64,
}

/// One row of the per-iteration trace (CSV-friendly).
#[derive(Debug, Clone, Serialize)]
pub struct CgTraceRow {
    pub iter: usize,
    pub residual_norm: f64,
    pub reset: bool,
    /// Model value m(p) after this iteration (tracked incrementally).
    pub model_value: f64,
}

/// CG-Steihaug on `A·p = b` within the ball `‖p‖ ≤ radius`.
///
/// `apply_a` must be linear and fixed for the duration of the solve; the
/// radius may be infinite (plain truncated CG), in which case a negative
/// curvature exit returns the current interior iterate.
pub fn cg_steihaug<V: InnerSpace>(
    mut apply_a: impl FnMut(&V) -> V,
    b: &V,
    radius: f64,
    cfg: &KrylovConfig,
    mut trace: Option<&mut Vec<CgTraceRow>>,
) -> Result<SubproblemResult<V>> {
    cfg.validate()?;
    if !(radius > 0.0) {
        return Err(HomogError::Krylov(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let bnorm = b.norm();
    if !bnorm.is_finite() {
        return Err(HomogError::Krylov("non-finite right-hand side".into()));
    }
    let tol = cfg.tol.resolve(bnorm);

    let zero = {
        let mut z = b.clone();
        z.scale(0.0);
        z
    };
    if bnorm <= tol {
        return Ok(SubproblemResult {
            p: zero,
            termination: Termination::Converged,
            iterations: 0,
            resets: 0,
            step_norm: 0.0,
            residual_norm: bnorm,
        });
    }

    // p: iterate, g: residual A·p - b, d: search direction.
    let mut p = zero;
    let mut g = {
        let mut g = b.clone();
        g.scale(-1.0);
        g
    };
    let mut d = b.clone();
    let mut gg = g.dot(&g);
    let mut resets = 0usize;
    let mut model = 0.0f64;

    for j in 0..cfg.max_iter {
        let ad = apply_a(&d);
        let dad = d.dot(&ad);
        if !dad.is_finite() {
            return Err(HomogError::Krylov(
                "operator produced non-finite output".into(),
            ));
        }

        let gd = g.dot(&d);
        if dad <= 0.0 {
            // Non-convex direction: minimize the model on the boundary.
            if radius.is_infinite() {
                return Ok(SubproblemResult {
                    step_norm: p.norm(),
                    residual_norm: gg.sqrt(),
                    p,
                    termination: Termination::NegativeCurvature,
                    iterations: j,
                    resets,
                });
            }
            let tau = boundary_tau(&p, &d, radius);
            p.axpy(tau, &d);
            return Ok(SubproblemResult {
                step_norm: p.norm(),
                residual_norm: f64::NAN,
                p,
                termination: Termination::NegativeCurvature,
                iterations: j,
                resets,
            });
        }

        let alpha = gg / dad;
        let mut p_next = p.clone();
        p_next.axpy(alpha, &d);
        if p_next.norm() >= radius {
            let tau = boundary_tau(&p, &d, radius);
            p.axpy(tau, &d);
            return Ok(SubproblemResult {
                step_norm: p.norm(),
                residual_norm: f64::NAN,
                p,
                termination: Termination::BoundaryHit,
                iterations: j,
                resets,
            });
        }
        p = p_next;
        model += alpha * gd + 0.5 * alpha * alpha * dad;

        // g_{j+1}·g_j is needed for the reset test; form it before the update.
        let ad_dot_g = ad.dot(&g);
        let cross = gg + alpha * ad_dot_g;
        g.axpy(alpha, &ad);
        let mut gg_new = g.dot(&g);

        let mut did_reset = false;
        if gg_new.sqrt() > tol {
            if let Some(threshold) = cfg.reset_threshold {
                if cross.abs() / gg_new > threshold {
                    // Successive residuals are insufficiently orthogonal:
                    // recompute the true residual and restart with β = 0.
                    g = apply_a(&p);
                    g.axpy(-1.0, b);
                    gg_new = g.dot(&g);
                    resets += 1;
                    did_reset = true;
                }
            }
        }

        if let Some(rows) = trace.as_deref_mut() {
            rows.push(CgTraceRow {
                iter: j,
                residual_norm: gg_new.sqrt(),
                reset: did_reset,
                model_value: model,
            });
        }

        if gg_new.sqrt() <= tol {
            return Ok(SubproblemResult {
                step_norm: p.norm(),
                residual_norm: gg_new.sqrt(),
                p,
                termination: Termination::Converged,
                iterations: j + 1,
                resets,
            });
        }

        let beta = if did_reset { 0.0 } else { gg_new / gg };
        d.scale(beta);
        d.axpy(-1.0, &g);
        gg = gg_new;
    }

    Ok(SubproblemResult {
        step_norm: p.norm(),
        residual_norm: gg.sqrt(),
        p,
        termination: Termination::MaxIter,
        iterations: cfg.max_iter,
        resets,
    })
}

/// Nonnegative root of `‖p + τ·d‖ = radius` advancing along `d`, via the
/// cancellation-free quadratic formula.
fn boundary_tau<V: InnerSpace>(p: &V, d: &V, radius: f64) -> f64 {
    let dd = d.dot(d);
    let pd = p.dot(d);
    let pp = p.dot(p);
    let c = pp - radius * radius;
    let disc = (pd * pd - dd * c).max(0.0).sqrt();
    // c <= 0 inside the ball, so the roots have opposite signs; pick the
    // nonnegative one without subtracting nearly-equal quantities.
    if pd <= 0.0 {
        (-pd + disc) / dd
    } else {
        -c / (pd + disc)
    }
}
