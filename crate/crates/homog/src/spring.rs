//! Periodic three-node spring ring with one bilinear damage spring: the
//! smallest system with a tunable non-convex energy, used to compare plain
//! Newton-CG, the standard trust region (explicit energy) and the modified
//! trust region (incremental energy estimate) under identical
//! hyperparameters.
//!
//! Degrees of freedom are the spring stretches `(x0, x1)` of the damage
//! spring and the first elastic spring; the third stretch is eliminated by
//! the periodicity constraint `x0 + x1 + x2 = 3·x̄`. In these coordinates
//! the energy slice over `x0` shows its softening kink at `x0 = γ0`.

use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};
use crate::krylov::{cg_steihaug, CgTolerance, KrylovConfig, Termination};
use crate::solver::{update_radius, SolveTermination, SolverConfig};

/// Periodic ring of three springs; springs 1 and 2 are linear elastic with
/// stiffness `k`, spring 0 is bilinear damage with softening tangent `α·k`
/// past the stretch threshold `γ0` (force floored at zero once exhausted).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpringSystem {
    pub k: f64,
    pub alpha: f64,
    pub gamma0: f64,
    /// Imposed mean stretch per spring.
    pub xbar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpringMethod {
    NewtonCg,
    StandardTr,
    ModifiedTr,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpringSolveResult {
    pub method: SpringMethod,
    pub dof: [f64; 2],
    pub energy: f64,
    pub termination: SolveTermination,
    /// Accepted iterates including the initial point.
    pub trajectory: Vec<[f64; 2]>,
    pub newton_trials: usize,
}

impl SpringSystem {
    pub fn new(k: f64, alpha: f64, gamma0: f64, xbar: f64) -> Result<Self> {
        if !(k > 0.0 && gamma0 > 0.0) {
            return Err(HomogError::Material(
                "spring needs positive stiffness and threshold".into(),
            ));
        }
        Ok(Self {
            k,
            alpha,
            gamma0,
            xbar,
        })
    }

    /// Stretch at which the softening branch exhausts (force reaches zero);
    /// infinite for non-softening slopes.
    pub fn ultimate_stretch(&self) -> f64 {
        if self.alpha < 0.0 {
            self.gamma0 * (1.0 - 1.0 / self.alpha)
        } else {
            f64::INFINITY
        }
    }

    /// Energy, force and tangent of the damage spring at stretch `d`.
    fn damage_spring(&self, d: f64) -> (f64, f64, f64) {
        let (k, a, g0) = (self.k, self.alpha, self.gamma0);
        let du = self.ultimate_stretch();
        if d <= g0 {
            (0.5 * k * d * d, k * d, k)
        } else if d <= du {
            let e = 0.5 * k * g0 * g0 + k * g0 * (d - g0) + 0.5 * a * k * (d - g0) * (d - g0);
            (e, k * (g0 + a * (d - g0)), a * k)
        } else {
            let s = du - g0;
            let e = 0.5 * k * g0 * g0 + k * g0 * s + 0.5 * a * k * s * s;
            (e, 0.0, 0.0)
        }
    }

    #[inline]
    fn third_stretch(&self, dof: &[f64; 2]) -> f64 {
        3.0 * self.xbar - dof[0] - dof[1]
    }

    /// Energy, gradient and 2x2 tangent stiffness on the reduced space.
    pub fn eval(&self, dof: &[f64; 2]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let k = self.k;
        let x2 = self.third_stretch(dof);
        let (w0, f0, k0) = self.damage_spring(dof[0]);
        let w = w0 + 0.5 * k * dof[1] * dof[1] + 0.5 * k * x2 * x2;
        let f = [f0 - k * x2, k * dof[1] - k * x2];
        let h = [[k0 + k, k], [k, 2.0 * k]];
        (w, f, h)
    }

    pub fn energy(&self, dof: &[f64; 2]) -> f64 {
        self.eval(dof).0
    }

    /// Full 3x3 stiffness in node coordinates with the damage spring on its
    /// post-peak tangent `α·k` (eigenvalues `[0, 3k, (2α+1)k]`).
    pub fn post_peak_stiffness(&self) -> [[f64; 3]; 3] {
        let (k, a) = (self.k, self.alpha);
        [
            [(1.0 + a) * k, -k, -a * k],
            [-k, 2.0 * k, -k],
            [-a * k, -k, (1.0 + a) * k],
        ]
    }

    /// Energy landscape slice `W(x0, argmin_{x1} W)`; the conditional
    /// minimizer over the elastic stretches is `x1 = x2 = (3x̄ - x0)/2`.
    pub fn landscape_slice(&self, x0: f64) -> f64 {
        let r = (3.0 * self.xbar - x0) / 2.0;
        self.damage_spring(x0).0 + self.k * r * r
    }

    /// Uniform initial state: every spring at the mean stretch.
    pub fn initial_dof(&self) -> [f64; 2] {
        [self.xbar, self.xbar]
    }
}

fn resolve_spring_radii(sys: &SpringSystem, cfg: &SolverConfig) -> (f64, f64) {
    let r0 = cfg
        .r0
        .unwrap_or_else(|| 0.1 * sys.xbar.abs().max(sys.gamma0) * (2f64).sqrt());
    let rmax = cfg.rmax.unwrap_or(100.0 * r0);
    (r0, rmax)
}

/// Solves the spring equilibrium with the requested method. The two trust
/// region variants share every hyperparameter and differ only in the
/// acceptance ratio: explicit energy change for `StandardTr`, trapezoid
/// stress estimate for `ModifiedTr`.
pub fn spring_solve(
    sys: &SpringSystem,
    method: SpringMethod,
    cfg: &SolverConfig,
) -> Result<SpringSolveResult> {
    cfg.validate()?;
    let kcfg = KrylovConfig {
        tol: match cfg.cg_tol {
            CgTolerance::Absolute(t) => CgTolerance::Absolute(t),
            CgTolerance::RelativeToRhs(t) => CgTolerance::RelativeToRhs(t),
        },
        max_iter: cfg.cg_max_iter.unwrap_or(8),
        reset_threshold: match method {
            SpringMethod::NewtonCg => None,
            _ => cfg.cg_reset_threshold,
        },
    };
    let (mut radius, rmax) = resolve_spring_radii(sys, cfg);

    let mut dof = sys.initial_dof();
    let mut trajectory = vec![dof];
    let mut trials = 0usize;
    let mut termination = SolveTermination::MaxNewton;
    let mut consecutive_rejections = 0usize;

    while trials < cfg.max_newton {
        let (w, f, h) = sys.eval(&dof);
        let gradient_norm = (f[0] * f[0] + f[1] * f[1]).sqrt();
        if gradient_norm <= cfg.eta_eq {
            termination = SolveTermination::Converged;
            break;
        }
        trials += 1;
        let b = vec![-f[0], -f[1]];
        let apply_h = |x: &Vec<f64>| {
            vec![
                h[0][0] * x[0] + h[0][1] * x[1],
                h[1][0] * x[0] + h[1][1] * x[1],
            ]
        };
        let r_solve = match method {
            SpringMethod::NewtonCg => f64::INFINITY,
            _ => radius,
        };
        let sol = cg_steihaug(apply_h, &b, r_solve, &kcfg, None)?;
        if method == SpringMethod::NewtonCg && sol.termination == Termination::NegativeCurvature {
            termination = SolveTermination::Indefinite;
            break;
        }
        let p = [sol.p[0], sol.p[1]];
        let step_norm = sol.step_norm;
        let trial = [dof[0] + p[0], dof[1] + p[1]];

        let accepted = match method {
            SpringMethod::NewtonCg => true,
            _ => {
                let hp = apply_h(&sol.p);
                let delta_m = -(f[0] * p[0] + f[1] * p[1]) - 0.5 * (p[0] * hp[0] + p[1] * hp[1]);
                let actual_change = match method {
                    SpringMethod::StandardTr => sys.energy(&trial) - w,
                    SpringMethod::ModifiedTr => {
                        let ft = sys.eval(&trial).1;
                        0.5 * ((f[0] + ft[0]) * p[0] + (f[1] + ft[1]) * p[1])
                    }
                    SpringMethod::NewtonCg => unreachable!(),
                };
                let tol = 1e-14 * (w.abs() + delta_m.abs() + f64::MIN_POSITIVE);
                let rho = if delta_m.abs() <= tol {
                    if actual_change.abs() <= tol {
                        1.0
                    } else {
                        -actual_change.signum() * f64::INFINITY
                    }
                } else {
                    -actual_change / delta_m
                };
                radius = update_radius(rho, radius, step_norm, rmax, cfg);
                rho > cfg.eta_up
            }
        };

        if accepted {
            dof = trial;
            trajectory.push(dof);
            consecutive_rejections = 0;
            let dof_norm = (dof[0] * dof[0] + dof[1] * dof[1]).sqrt();
            let interior = sol.termination == Termination::Converged;
            let small_step = dof_norm >= 1e-14 && step_norm / dof_norm <= cfg.eta_nr;
            if interior && small_step {
                termination = SolveTermination::Converged;
                break;
            }
        } else {
            consecutive_rejections += 1;
            if consecutive_rejections >= cfg.max_consecutive_rejections {
                termination = SolveTermination::Stagnation;
                break;
            }
        }
    }

    // Final gradient check decides convergence when the loop ran out.
    let (w, f, _) = sys.eval(&dof);
    if termination == SolveTermination::MaxNewton
        && (f[0] * f[0] + f[1] * f[1]).sqrt() <= cfg.eta_eq
    {
        termination = SolveTermination::Converged;
    }
    Ok(SpringSolveResult {
        method,
        dof,
        energy: w,
        termination,
        trajectory,
        newton_trials: trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    fn paper_system(alpha: f64) -> SpringSystem {
        SpringSystem::new(1.0, alpha, 0.1, 0.11).unwrap()
    }

    fn tr_config() -> SolverConfig {
        SolverConfig {
            eta_eq: 1e-12,
            eta_nr: 1e-12,
            r0: Some(0.08),
            rmax: Some(2.0),
            max_newton: 200,
            cg_tol: CgTolerance::RelativeToRhs(1e-12),
            cg_max_iter: Some(4),
            ..Default::default()
        }
    }

    #[test]
    fn post_peak_eigenvalues_match_closed_form() {
        for alpha in [1.0, -0.5, -1.0, 0.3] {
            let sys = paper_system(alpha);
            let k = Matrix3::from_fn(|i, j| sys.post_peak_stiffness()[i][j]);
            let mut eig: Vec<f64> = k.symmetric_eigen().eigenvalues.iter().copied().collect();
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut want = [0.0, 3.0, 2.0 * alpha + 1.0];
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (got, w) in eig.iter().zip(want) {
                assert_relative_eq!(*got, w, epsilon = 1e-12);
            }
        }
        // Meta-stable boundary: third eigenvalue hits zero at α = −1/2.
        let sys = paper_system(-0.5);
        let k = Matrix3::from_fn(|i, j| sys.post_peak_stiffness()[i][j]);
        let eig = k.symmetric_eigen().eigenvalues;
        assert!(eig.iter().any(|l| l.abs() < 1e-12));
    }

    #[test]
    fn force_matches_finite_differences_of_energy() {
        let sys = paper_system(-0.7);
        let h = 1e-7;
        // Points away from the γ0 and ultimate-stretch kinks.
        for dof in [[0.05, 0.02], [0.13, -0.01], [0.35, 0.04]] {
            let (_, f, kmat) = sys.eval(&dof);
            for j in 0..2 {
                let mut dp = dof;
                let mut dm = dof;
                dp[j] += h;
                dm[j] -= h;
                let fd = (sys.energy(&dp) - sys.energy(&dm)) / (2.0 * h);
                assert_relative_eq!(f[j], fd, epsilon = 1e-8, max_relative = 1e-7);
                // Hessian row by differencing the force.
                let fp = sys.eval(&dp).1;
                let fm = sys.eval(&dm).1;
                for i in 0..2 {
                    let kfd = (fp[i] - fm[i]) / (2.0 * h);
                    assert_relative_eq!(kmat[i][j], kfd, epsilon = 1e-6, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn energy_force_tangent_are_consistent_across_branches() {
        let sys = paper_system(-0.5);
        // Continuity at the kinks.
        for x in [sys.gamma0, sys.ultimate_stretch()] {
            let below = sys.damage_spring(x - 1e-12);
            let above = sys.damage_spring(x + 1e-12);
            assert_relative_eq!(below.0, above.0, epsilon = 1e-11);
            assert_relative_eq!(below.1, above.1, epsilon = 1e-11);
        }
    }

    #[test]
    fn convex_case_all_methods_agree() {
        let sys = paper_system(1.0);
        let cfg = tr_config();
        let ncg = spring_solve(&sys, SpringMethod::NewtonCg, &cfg).unwrap();
        let std_tr = spring_solve(&sys, SpringMethod::StandardTr, &cfg).unwrap();
        let mod_tr = spring_solve(&sys, SpringMethod::ModifiedTr, &cfg).unwrap();
        assert_eq!(ncg.termination, SolveTermination::Converged);
        assert_eq!(std_tr.termination, SolveTermination::Converged);
        assert_eq!(mod_tr.termination, SolveTermination::Converged);
        for i in 0..2 {
            assert_relative_eq!(ncg.dof[i], std_tr.dof[i], epsilon = 1e-10);
            assert_relative_eq!(std_tr.dof[i], mod_tr.dof[i], epsilon = 1e-10);
        }
        // α = 1 makes the damage spring plain elastic: uniform solution.
        assert_relative_eq!(mod_tr.dof[0], 0.11, epsilon = 1e-10);
        assert_relative_eq!(mod_tr.dof[1], 0.11, epsilon = 1e-10);
    }

    #[test]
    fn concave_case_trust_regions_localize_newton_cg_fails() {
        let sys = paper_system(-1.0);
        let cfg = tr_config();
        let ncg = spring_solve(&sys, SpringMethod::NewtonCg, &cfg).unwrap();
        assert_eq!(ncg.termination, SolveTermination::Indefinite);

        let std_tr = spring_solve(&sys, SpringMethod::StandardTr, &cfg).unwrap();
        let mod_tr = spring_solve(&sys, SpringMethod::ModifiedTr, &cfg).unwrap();
        assert_eq!(std_tr.termination, SolveTermination::Converged);
        assert_eq!(mod_tr.termination, SolveTermination::Converged);
        for i in 0..2 {
            assert_relative_eq!(std_tr.dof[i], mod_tr.dof[i], epsilon = 1e-8);
        }
        // Localized minimizer: damage spring takes the whole stretch, the
        // elastic springs relax.
        assert_relative_eq!(mod_tr.dof[0], 0.33, epsilon = 1e-6);
        assert_relative_eq!(mod_tr.dof[1], 0.0, epsilon = 1e-6);
        // It is a stationary point with positive-semidefinite Hessian.
        let (_, f, _) = sys.eval(&mod_tr.dof);
        assert!((f[0] * f[0] + f[1] * f[1]).sqrt() <= 1e-10);
    }

    #[test]
    fn metastable_case_terminates_at_stationary_point() {
        let sys = paper_system(-0.5);
        let cfg = tr_config();
        let std_tr = spring_solve(&sys, SpringMethod::StandardTr, &cfg).unwrap();
        let mod_tr = spring_solve(&sys, SpringMethod::ModifiedTr, &cfg).unwrap();
        for r in [&std_tr, &mod_tr] {
            assert_eq!(r.termination, SolveTermination::Converged);
            let (_, f, _) = sys.eval(&r.dof);
            assert!((f[0] * f[0] + f[1] * f[1]).sqrt() <= 1e-10);
        }
        // The softening-branch tangent has a zero eigenvalue at α = −1/2:
        // det [[1+α, 1], [1, 2]]·k² = (2α+1)k² = 0.
        let h = [[(1.0 + sys.alpha) * sys.k, sys.k], [sys.k, 2.0 * sys.k]];
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        assert_relative_eq!(det, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn identical_hyperparameters_give_identical_iterate_sequences() {
        for alpha in [1.0, -0.5, -1.0] {
            let sys = paper_system(alpha);
            let cfg = tr_config();
            let std_tr = spring_solve(&sys, SpringMethod::StandardTr, &cfg).unwrap();
            let mod_tr = spring_solve(&sys, SpringMethod::ModifiedTr, &cfg).unwrap();
            assert_eq!(
                std_tr.trajectory.len(),
                mod_tr.trajectory.len(),
                "α = {alpha}: different trajectory lengths"
            );
            for (a, b) in std_tr.trajectory.iter().zip(&mod_tr.trajectory) {
                for i in 0..2 {
                    assert!(
                        (a[i] - b[i]).abs() <= 1e-10,
                        "α = {alpha}: iterates diverge ({a:?} vs {b:?})"
                    );
                }
            }
        }
    }

    #[test]
    fn landscape_slice_shape() {
        // Convex for α = 1 everywhere; concave kink at x0 = γ0 for α ≤ −1/2.
        let xs: Vec<f64> = (0..=400).map(|i| 0.0 + i as f64 * 0.001).collect();
        let second_diff = |sys: &SpringSystem, x: f64, h: f64| {
            (sys.landscape_slice(x + h) - 2.0 * sys.landscape_slice(x) + sys.landscape_slice(x - h))
                / (h * h)
        };
        let convex = paper_system(1.0);
        for &x in &xs {
            assert!(second_diff(&convex, x, 1e-4) >= -1e-8);
        }
        let concave = paper_system(-1.0);
        // Right of the kink the slice curvature is α·k + k/2 = −0.5.
        assert_relative_eq!(second_diff(&concave, 0.15, 1e-5), -0.5, max_relative = 1e-4);
        // Left of the kink it is k + k/2 = 1.5.
        assert_relative_eq!(second_diff(&concave, 0.05, 1e-5), 1.5, max_relative = 1e-4);
        // Meta-stable: flat to the right of the kink.
        let meta = paper_system(-0.5);
        assert_relative_eq!(second_diff(&meta, 0.15, 1e-5), 0.0, epsilon = 1e-6);
    }
}
