//! Nonlinear drivers for the cell problem: plain Newton-CG and the modified
//! trust-region Newton-CG whose acceptance test replaces the unavailable
//! strain energy with a first-order incremental approximation.
//!
//! The energy change over a trial step `p` is estimated by the trapezoid
//! contraction of the old and trial stress fields,
//! `ΔW̄ = ½(σ_prev + σ_trial):p`, which is third-order accurate in `‖p‖` and
//! exact for quadratic energies. The acceptance ratio `ρ̄ = ΔW̄/Δm` then
//! drives the standard shrink/expand radius update.

use serde::{Deserialize, Serialize};

use crate::cell::{BoundaryCondition, Cell, LoadIncrement, LoadProgram};
use crate::error::{HomogError, Result};
use crate::grid::{mandel_norm, QPField, TensorRank};
use crate::krylov::{
    cg_steihaug, default_max_iter, CgTolerance, CgTraceRow, InnerSpace, KrylovConfig, Termination,
};
use crate::projection::ProjScratch;

/// Trust-region Newton-CG configuration. Radius quantities live in the
/// Euclidean strain-space norm over all unknowns.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Equilibrium tolerance on the RMS of the projected stress residual
    /// (stress units; grid-size independent).
    pub eta_eq: f64,
    /// Relative step tolerance ‖δε‖/‖ε‖.
    pub eta_nr: f64,
    /// Acceptance threshold on ρ̄.
    pub eta_up: f64,
    /// Initial trust radius; `None` picks `0.1·√n·‖Δload‖` from the first
    /// increment.
    pub r0: Option<f64>,
    /// Radius cap; `None` picks `100·R0`.
    pub rmax: Option<f64>,
    pub shrink_trigger: f64,
    pub shrink_factor: f64,
    pub expand_trigger: f64,
    pub expand_factor: f64,
    pub max_newton: usize,
    /// Abort after this many consecutive rejections.
    pub max_consecutive_rejections: usize,
    pub cg_tol: CgTolerance,
    pub cg_max_iter: Option<usize>,
    pub cg_reset_threshold: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta_eq: 1e-10,
            eta_nr: 1e-10,
            eta_up: 0.0,
            r0: None,
            rmax: None,
            shrink_trigger: 0.25,
            shrink_factor: 0.25,
            expand_trigger: 0.75,
            expand_factor: 2.0,
            max_newton: 500,
            max_consecutive_rejections: 50,
            cg_tol: CgTolerance::RelativeToRhs(1e-8),
            cg_max_iter: None,
            cg_reset_threshold: Some(0.2),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_eq > 0.0 && self.eta_nr > 0.0) {
            return Err(HomogError::Solver("tolerances must be positive".into()));
        }
        if !(0.0 <= self.eta_up && self.eta_up < self.shrink_trigger) {
            return Err(HomogError::Solver(format!(
                "need 0 <= eta_up < shrink trigger, got {} vs {}",
                self.eta_up, self.shrink_trigger
            )));
        }
        if let (Some(r0), Some(rmax)) = (self.r0, self.rmax) {
            if !(0.0 < r0 && r0 <= rmax) {
                return Err(HomogError::Solver(format!(
                    "need 0 < R0 <= Rmax, got {r0}, {rmax}"
                )));
            }
        }
        if self.max_newton < 1 {
            return Err(HomogError::Solver("max_newton must be at least 1".into()));
        }
        Ok(())
    }
}

/// Shrink/expand rule of the trust radius given the acceptance ratio.
pub fn update_radius(rho_bar: f64, r: f64, step_norm: f64, rmax: f64, cfg: &SolverConfig) -> f64 {
    if rho_bar < cfg.shrink_trigger {
        r * cfg.shrink_factor
    } else if rho_bar > cfg.expand_trigger && step_norm >= r * (1.0 - 1e-10) {
        (r * cfg.expand_factor).min(rmax)
    } else {
        r
    }
}

/// First-order incremental energy change `ΔW̄ = ½(σ_prev + σ_trial):p`
/// summed with quadrature weights (energy units).
pub fn faief_delta(sigma_prev: &QPField, sigma_trial: &QPField, p: &QPField) -> Result<f64> {
    sigma_prev.check_same_layout(sigma_trial, "faief_delta")?;
    let mut avg = sigma_prev.clone();
    avg.axpy(1.0, sigma_trial);
    avg.scale(0.5);
    avg.inner(p)
}

/// Predicted model reduction `Δm = m(0) - m(p) = -σ:p - ½ p:B:p` (positive
/// for any Steihaug step); a negative value beyond round-off means the
/// operator and right-hand side are inconsistent.
pub fn model_decrease(
    sigma_prev: &QPField,
    mut apply_b: impl FnMut(&QPField) -> QPField,
    p: &QPField,
) -> Result<f64> {
    let sp = sigma_prev.inner(p)?;
    let bp = apply_b(p);
    let pbp = p.inner(&bp)?;
    let dm = -sp - 0.5 * pbp;
    let tol = 1e-12 * (sp.abs() + 0.5 * pbp.abs() + f64::MIN_POSITIVE);
    if dm < -tol {
        return Err(HomogError::Solver(format!(
            "negative predicted model reduction {dm:.3e} (operator inconsistency)"
        )));
    }
    Ok(dm.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveTermination {
    Converged,
    /// Newton-CG met negative curvature: the problem is not convex.
    Indefinite,
    MaxNewton,
    /// Too many consecutive trust-region rejections.
    Stagnation,
}

/// Outcome of one Newton trial (a Steihaug solve plus acceptance test).
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub load_step: usize,
    pub trial: usize,
    pub cg_iterations: usize,
    pub cg_resets: usize,
    pub cg_termination: Termination,
    pub step_norm: f64,
    pub radius_before: Option<f64>,
    pub radius_after: Option<f64>,
    pub delta_m: Option<f64>,
    pub delta_w_bar: Option<f64>,
    pub rho_bar: Option<f64>,
    pub accepted: bool,
    pub residual_after: Option<f64>,
}

/// Per-load-step solver summary.
#[derive(Debug, Clone, Serialize)]
pub struct LoadStepReport {
    pub step: usize,
    pub newton_trials: usize,
    pub accepted: usize,
    pub rejections: usize,
    pub cg_iters_total: usize,
    pub cg_resets_total: usize,
    pub final_residual_rms: f64,
    pub radius_history: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub solver: &'static str,
    pub termination: SolveTermination,
    pub converged: bool,
    pub steps: Vec<LoadStepReport>,
    pub newton_iters_total: usize,
    pub cg_iters_total: usize,
}

/// Optional detailed trace collected during a solve.
#[derive(Debug, Default)]
pub struct SolveTrace {
    pub trials: Vec<TrialRecord>,
    /// (load_step, trial, row) triples when CG tracing is on.
    pub cg_rows: Vec<(usize, usize, CgTraceRow)>,
    pub trace_cg: bool,
}

struct StepAccounting {
    trials: usize,
    accepted: usize,
    rejections: usize,
    cg_iters: usize,
    cg_resets: usize,
    radius_history: Vec<f64>,
}

impl StepAccounting {
    fn new() -> Self {
        Self {
            trials: 0,
            accepted: 0,
            rejections: 0,
            cg_iters: 0,
            cg_resets: 0,
            radius_history: Vec::new(),
        }
    }

    fn into_report(self, step: usize, residual: f64, converged: bool) -> LoadStepReport {
        LoadStepReport {
            step,
            newton_trials: self.trials,
            accepted: self.accepted,
            rejections: self.rejections,
            cg_iters_total: self.cg_iters,
            cg_resets_total: self.cg_resets,
            final_residual_rms: residual,
            radius_history: self.radius_history,
            converged,
        }
    }
}

fn mean_stress_target(cell: &Cell) -> Option<[f64; 3]> {
    match cell.bc() {
        BoundaryCondition::MeanStress { target } => Some(*target),
        BoundaryCondition::MeanStrain => None,
    }
}

/// `<σ - s·1, p>_w` where `s` is the mean-stress target (load potential
/// shift); `sum_p` are the component sums of `p` for the uniform part.
fn shifted_stress_dot(sigma: &QPField, p: &QPField, target: Option<[f64; 3]>) -> Result<f64> {
    let mut v = sigma.inner(p)?;
    if let Some(s) = target {
        let w = p.shape().qp_weight();
        let mut sum = [0.0; 3];
        for qp in p.data().chunks_exact(3) {
            sum[0] += qp[0];
            sum[1] += qp[1];
            sum[2] += qp[2];
        }
        v -= w * (s[0] * sum[0] + s[1] * sum[1] + s[2] * sum[2]);
    }
    Ok(v)
}

/// Streaming `<(σ_prev + σ_trial)/2 - s·1, p>_w` without allocating the
/// trial stress field.
fn faief_delta_streaming(cell: &Cell, p: &QPField, target: Option<[f64; 3]>) -> Result<f64> {
    let mut acc = 0.0;
    let sigma = cell.sigma();
    cell.visit_trial_stress(p, |i, st| {
        let sp = sigma.qp(i);
        let pi = p.qp(i);
        for c in 0..3 {
            acc += 0.5 * (sp[c] + st[c]) * pi[c];
        }
    });
    let mut v = acc * p.shape().qp_weight();
    if let Some(s) = target {
        let w = p.shape().qp_weight();
        let mut sum = [0.0; 3];
        for qp in p.data().chunks_exact(3) {
            sum[0] += qp[0];
            sum[1] += qp[1];
            sum[2] += qp[2];
        }
        v -= w * (s[0] * sum[0] + s[1] * sum[1] + s[2] * sum[2]);
    }
    Ok(v)
}

fn resolve_radii(cfg: &SolverConfig, n: usize, first: &LoadIncrement) -> Result<(f64, f64)> {
    let r0 = match cfg.r0 {
        Some(r) => r,
        None => {
            let char_norm = match first {
                LoadIncrement::MeanStrain(v) | LoadIncrement::Eigenstrain(v) => mandel_norm(v),
                LoadIncrement::MeanStress(_) => {
                    return Err(HomogError::Solver(
                        "automatic R0 needs a strain-like first increment; set r0 explicitly"
                            .into(),
                    ))
                }
            };
            if char_norm <= 0.0 {
                return Err(HomogError::Solver(
                    "cannot derive R0 from a zero first increment; set r0 explicitly".into(),
                ));
            }
            0.1 * (n as f64).sqrt() * char_norm
        }
    };
    let rmax = cfg.rmax.unwrap_or(100.0 * r0);
    if !(r0 > 0.0 && r0 <= rmax) {
        return Err(HomogError::Solver(format!(
            "need 0 < R0 <= Rmax, got {r0}, {rmax}"
        )));
    }
    Ok((r0, rmax))
}

fn krylov_config(cfg: &SolverConfig, n: usize) -> KrylovConfig {
    KrylovConfig {
        tol: cfg.cg_tol,
        max_iter: cfg.cg_max_iter.unwrap_or_else(|| default_max_iter(n)),
        reset_threshold: cfg.cg_reset_threshold,
    }
}

/// Modified trust-region Newton-CG over a load program.
///
/// Per increment: evaluate, assemble `b = -G:σ`, solve the subproblem within
/// the radius, measure `ρ̄ = ΔW̄/Δm`, update the radius, accept or reject,
/// and declare convergence on an interior accepted step with a small
/// residual or small relative step. The radius persists across increments.
pub fn trust_region_solve(
    cell: &mut Cell,
    program: &LoadProgram,
    cfg: &SolverConfig,
    mut trace: Option<&mut SolveTrace>,
) -> Result<ConvergenceReport> {
    cfg.validate()?;
    program.validate()?;
    let n = cell.n_unknowns();
    let (mut radius, rmax) = resolve_radii(cfg, n, &program.increments[0])?;
    let kcfg = krylov_config(cfg, n);
    let mut scratch = ProjScratch::new(cell.grid());

    let mut steps = Vec::new();
    let mut termination = SolveTermination::Converged;

    'program: for (si, inc) in program.increments.iter().enumerate() {
        cell.apply_increment(inc)?;
        cell.evaluate()?;
        let mut b = cell.assemble_rhs(&mut scratch)?;
        let mut residual = b.rms();
        let mut acct = StepAccounting::new();
        acct.radius_history.push(radius);

        if residual <= cfg.eta_eq {
            steps.push(acct.into_report(si, residual, true));
            continue;
        }

        let mut consecutive_rejections = 0usize;
        let mut step_converged = false;

        while acct.trials < cfg.max_newton {
            acct.trials += 1;
            let mut cg_rows = Vec::new();
            let want_rows = trace.as_ref().map(|t| t.trace_cg).unwrap_or(false);
            let sol = cg_steihaug(
                |d: &QPField| {
                    cell.apply_system(d, &mut scratch)
                        .expect("projection failed inside system action")
                },
                &b,
                radius,
                &kcfg,
                if want_rows { Some(&mut cg_rows) } else { None },
            )?;
            acct.cg_iters += sol.iterations;
            acct.cg_resets += sol.resets;
            let p = sol.p;
            let step_norm = sol.step_norm;

            let target = mean_stress_target(cell);
            let sp = shifted_stress_dot(cell.sigma(), &p, target)?;
            let mut bp = QPField::zeros(cell.grid(), TensorRank::Rank2);
            cell.apply_tangent(&p, &mut bp);
            let pbp = p.inner(&bp)?;
            let mut delta_m = -sp - 0.5 * pbp;
            let dm_tol = 1e-12 * (sp.abs() + 0.5 * pbp.abs() + f64::MIN_POSITIVE);
            if delta_m < -dm_tol {
                // A Steihaug step guarantees a nonnegative reduction of the
                // model it actually minimized, -b·p + ½ p·(G:B)·p. When the
                // unprojected form above disagrees, the step has leaked out
                // of the compatible range (noise amplification near a
                // converged state); fall back to the projected form and let
                // the ρ̄ test reject the trial. Only a disagreement of both
                // forms flags a genuinely inconsistent operator.
                let w = p.shape().qp_weight();
                let ap = cell.apply_system(&p, &mut scratch)?;
                let b_dot_p = b.dot(&p);
                let p_dot_ap = p.dot(&ap);
                let dm_proj = w * (b_dot_p - 0.5 * p_dot_ap);
                let proj_tol =
                    1e-12 * w * (b_dot_p.abs() + 0.5 * p_dot_ap.abs() + f64::MIN_POSITIVE);
                if dm_proj < -proj_tol {
                    return Err(HomogError::Solver(format!(
                        "negative predicted model reduction {delta_m:.3e} at step {si} (operator inconsistency)"
                    )));
                }
                delta_m = dm_proj;
            }
            let delta_w_bar = faief_delta_streaming(cell, &p, target)?;
            let rho_bar = if delta_m.abs() <= dm_tol {
                if delta_w_bar.abs() <= dm_tol.max(1e-300) {
                    1.0
                } else {
                    -delta_w_bar.signum() * f64::INFINITY
                }
            } else {
                -delta_w_bar / delta_m
            };

            let radius_before = radius;
            radius = update_radius(rho_bar, radius, step_norm, rmax, cfg);
            acct.radius_history.push(radius);

            let accepted = rho_bar > cfg.eta_up;
            let mut residual_after = None;
            if accepted {
                cell.eps.axpy(1.0, &p);
                let eps_norm = cell.eps.norm();
                cell.evaluate()?;
                cell.commit_state();
                b = cell.assemble_rhs(&mut scratch)?;
                residual = b.rms();
                residual_after = Some(residual);
                acct.accepted += 1;
                consecutive_rejections = 0;

                let interior =
                    sol.termination == Termination::Converged && step_norm < radius_before;
                let small_step = if eps_norm < 1e-14 {
                    false
                } else {
                    step_norm / eps_norm <= cfg.eta_nr
                };
                if interior && (residual <= cfg.eta_eq || small_step) {
                    step_converged = true;
                }
            } else {
                acct.rejections += 1;
                consecutive_rejections += 1;
            }

            if let Some(t) = trace.as_deref_mut() {
                t.trials.push(TrialRecord {
                    load_step: si,
                    trial: acct.trials - 1,
                    cg_iterations: sol.iterations,
                    cg_resets: sol.resets,
                    cg_termination: sol.termination,
                    step_norm,
                    radius_before: Some(radius_before),
                    radius_after: Some(radius),
                    delta_m: Some(delta_m),
                    delta_w_bar: Some(delta_w_bar),
                    rho_bar: Some(rho_bar),
                    accepted,
                    residual_after,
                });
                for row in cg_rows {
                    t.cg_rows.push((si, acct.trials - 1, row));
                }
            }

            if step_converged {
                break;
            }
            if consecutive_rejections >= cfg.max_consecutive_rejections {
                steps.push(acct.into_report(si, residual, false));
                termination = SolveTermination::Stagnation;
                break 'program;
            }
        }

        let converged = step_converged;
        steps.push(acct.into_report(si, residual, converged));
        if !converged {
            termination = SolveTermination::MaxNewton;
            break;
        }
    }

    let converged = termination == SolveTermination::Converged;
    Ok(ConvergenceReport {
        solver: "trust_region",
        termination,
        converged,
        newton_iters_total: steps.iter().map(|s| s.newton_trials).sum(),
        cg_iters_total: steps.iter().map(|s| s.cg_iters_total).sum(),
        steps,
    })
}

/// Plain Newton-CG: unconstrained CG, every step accepted, same convergence
/// tests. Negative curvature terminates the solve with `Indefinite` (the
/// expected failure mode on non-convex problems).
pub fn newton_cg_solve(
    cell: &mut Cell,
    program: &LoadProgram,
    cfg: &SolverConfig,
    mut trace: Option<&mut SolveTrace>,
) -> Result<ConvergenceReport> {
    cfg.validate()?;
    program.validate()?;
    let n = cell.n_unknowns();
    let kcfg = KrylovConfig {
        reset_threshold: None,
        ..krylov_config(cfg, n)
    };
    let mut scratch = ProjScratch::new(cell.grid());

    let mut steps = Vec::new();
    let mut termination = SolveTermination::Converged;

    'program: for (si, inc) in program.increments.iter().enumerate() {
        cell.apply_increment(inc)?;
        cell.evaluate()?;
        let mut b = cell.assemble_rhs(&mut scratch)?;
        let mut residual = b.rms();
        let mut acct = StepAccounting::new();

        if residual <= cfg.eta_eq {
            steps.push(acct.into_report(si, residual, true));
            continue;
        }

        let mut step_converged = false;
        while acct.trials < cfg.max_newton {
            acct.trials += 1;
            let sol = cg_steihaug(
                |d: &QPField| {
                    cell.apply_system(d, &mut scratch)
                        .expect("projection failed inside system action")
                },
                &b,
                f64::INFINITY,
                &kcfg,
                None,
            )?;
            acct.cg_iters += sol.iterations;
            if sol.termination == Termination::NegativeCurvature {
                if let Some(t) = trace.as_deref_mut() {
                    t.trials.push(TrialRecord {
                        load_step: si,
                        trial: acct.trials - 1,
                        cg_iterations: sol.iterations,
                        cg_resets: sol.resets,
                        cg_termination: sol.termination,
                        step_norm: sol.step_norm,
                        radius_before: None,
                        radius_after: None,
                        delta_m: None,
                        delta_w_bar: None,
                        rho_bar: None,
                        accepted: false,
                        residual_after: None,
                    });
                }
                steps.push(acct.into_report(si, residual, false));
                termination = SolveTermination::Indefinite;
                break 'program;
            }
            let p = sol.p;
            let step_norm = sol.step_norm;
            cell.eps.axpy(1.0, &p);
            let eps_norm = cell.eps.norm();
            cell.evaluate()?;
            cell.commit_state();
            b = cell.assemble_rhs(&mut scratch)?;
            residual = b.rms();
            acct.accepted += 1;

            if let Some(t) = trace.as_deref_mut() {
                t.trials.push(TrialRecord {
                    load_step: si,
                    trial: acct.trials - 1,
                    cg_iterations: sol.iterations,
                    cg_resets: sol.resets,
                    cg_termination: sol.termination,
                    step_norm,
                    radius_before: None,
                    radius_after: None,
                    delta_m: None,
                    delta_w_bar: None,
                    rho_bar: None,
                    accepted: true,
                    residual_after: Some(residual),
                });
            }

            let small_step = if eps_norm < 1e-14 {
                false
            } else {
                step_norm / eps_norm <= cfg.eta_nr
            };
            if residual <= cfg.eta_eq || small_step {
                step_converged = true;
                break;
            }
        }

        steps.push(acct.into_report(si, residual, step_converged));
        if !step_converged {
            termination = SolveTermination::MaxNewton;
            break;
        }
    }

    let converged = termination == SolveTermination::Converged;
    Ok(ConvergenceReport {
        solver: "newton_cg",
        termination,
        converged,
        newton_iters_total: steps.iter().map(|s| s.newton_trials).sum(),
        cg_iters_total: steps.iter().map(|s| s.cg_iters_total).sum(),
        steps,
    })
}
