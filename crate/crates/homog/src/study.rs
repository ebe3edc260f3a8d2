//! Eigenstrain-driven damage degradation study: ramp the gel eigenstrain
//! under zero mean stress, solve each increment with the modified trust
//! region solver and track the effective stiffness loss.

use serde::{Deserialize, Serialize};

use crate::cell::{effective_stiffness, Cell, LoadIncrement, LoadProgram};
use crate::error::Result;
use crate::projection::ProjScratch;
use crate::solver::{trust_region_solve, ConvergenceReport, SolveTermination, SolverConfig};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DamageStudyConfig {
    /// Volumetric eigenstrain increment per step (applied as [d, d, 0]).
    pub eigenstrain_step: f64,
    pub n_steps: usize,
    /// Relative tolerance of the effective-stiffness probe solves.
    pub probe_tol: f64,
    pub probe_max_iter: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegradationRow {
    pub step: usize,
    /// Accumulated scalar eigenstrain on the gel pockets.
    pub sum_eigenstrain: f64,
    /// ‖C̄‖/‖C̄₀‖.
    pub stiffness_ratio: f64,
    pub damaged_qp_count: usize,
    pub newton_iters: usize,
    pub cg_iters: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DamageStudy {
    pub rows: Vec<DegradationRow>,
    pub initial_stiffness_norm: f64,
    pub diverged: bool,
    pub step_reports: Vec<ConvergenceReport>,
}

/// Runs the eigenstrain ramp on a prepared cell (mean-stress control, gel
/// mask set). Solver divergence is recorded and the partial curve returned.
pub fn run_damage_study(
    cell: &mut Cell,
    solver: &SolverConfig,
    study: &DamageStudyConfig,
) -> Result<DamageStudy> {
    let mut scratch = ProjScratch::new(cell.grid());
    cell.evaluate()?;
    let c0 = effective_stiffness(cell, &mut scratch, study.probe_tol, study.probe_max_iter)?;
    let mut rows = vec![DegradationRow {
        step: 0,
        sum_eigenstrain: 0.0,
        stiffness_ratio: 1.0,
        damaged_qp_count: cell.damaged_qp_count(),
        newton_iters: 0,
        cg_iters: c0.cg_iterations,
    }];

    let mut reports = Vec::new();
    let mut diverged = false;
    let mut cfg = *solver;
    let mut accumulated = 0.0;
    for step in 1..=study.n_steps {
        let d = study.eigenstrain_step;
        let program = LoadProgram {
            increments: vec![LoadIncrement::Eigenstrain([d, d, 0.0])],
        };
        let report = trust_region_solve(cell, &program, &cfg, None)?;
        accumulated += d;
        // Carry the adapted radius into the next increment so the ramp
        // behaves like one continuous solve.
        if let Some(r) = report.steps.last().and_then(|s| s.radius_history.last()) {
            cfg.r0 = Some(*r);
            cfg.rmax = Some(cfg.rmax.unwrap_or(100.0 * r).max(*r));
        }
        let ok = report.termination == SolveTermination::Converged;
        let (newton, cg) = (report.newton_iters_total, report.cg_iters_total);
        reports.push(report);
        if !ok {
            diverged = true;
            break;
        }
        let eff = effective_stiffness(cell, &mut scratch, study.probe_tol, study.probe_max_iter)?;
        rows.push(DegradationRow {
            step,
            sum_eigenstrain: accumulated,
            stiffness_ratio: eff.frobenius_norm / c0.frobenius_norm,
            damaged_qp_count: cell.damaged_qp_count(),
            newton_iters: newton,
            cg_iters: cg + eff.cg_iterations,
        });
    }

    Ok(DamageStudy {
        rows,
        initial_stiffness_norm: c0.frobenius_norm,
        diverged,
        step_reports: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::BoundaryCondition;
    use crate::krylov::CgTolerance;
    use crate::material::{BilinearDamage, LinearElastic, Material};
    use crate::micro::{self, FullerParams, MicroParams, PHASE_GEL};
    use crate::projection::{grid_for_scheme, DerivativeScheme};

    fn small_rve(seed: u64) -> Cell {
        let scheme = DerivativeScheme::LinearFe;
        let l = 0.1;
        let grid = grid_for_scheme(64, 64, l, l, scheme).unwrap();
        let params = MicroParams {
            lx: l,
            ly: l,
            aggregate_fraction: 0.4,
            fuller: FullerParams {
                exponent: 0.5,
                d_min: 0.08 * l,
                d_max: 0.3 * l,
            },
            aspect_max: 2.0,
            gel_area_fraction: 0.003,
            pocket_size: l / 64.0,
            placement_tries: 3000,
        };
        let ms = micro::generate(seed, &params).unwrap();
        let phase = ms.rasterize(grid).unwrap();
        let h = grid.hx();
        let mats = vec![
            Material::Damage(BilinearDamage::regularized(12e9, 0.3, 3e6, 60.0, h).unwrap()),
            Material::Damage(BilinearDamage::regularized(59e9, 0.3, 10e6, 160.0, h).unwrap()),
            Material::Elastic(LinearElastic::new(11e9, 0.18).unwrap()),
        ];
        let gel: Vec<bool> = phase.iter().map(|p| *p == PHASE_GEL).collect();
        let mut cell = Cell::new(
            grid,
            scheme,
            phase,
            mats,
            BoundaryCondition::MeanStress { target: [0.0; 3] },
        )
        .unwrap();
        cell.set_eigenstrain_mask(gel).unwrap();
        cell
    }

    fn solver() -> SolverConfig {
        SolverConfig {
            eta_eq: 10.0,
            max_newton: 300,
            cg_tol: CgTolerance::RelativeToRhs(1e-8),
            ..Default::default()
        }
    }

    fn damaged_set(cell: &Cell) -> Vec<usize> {
        let state = cell.state();
        let grid = cell.grid();
        let mut set = Vec::new();
        for pix in 0..grid.n_pixels() {
            if let Material::Damage(m) = cell.material_of_pixel(pix) {
                for q in 0..grid.nq {
                    if state.kappa_committed[pix * grid.nq + q] > m.kappa0 {
                        set.push(pix * grid.nq + q);
                    }
                }
            }
        }
        set
    }

    #[test]
    fn degradation_is_monotone_and_damage_sets_nest() {
        let mut cell = small_rve(21);
        // Ramp far enough that damage actually initiates.
        let mut sets = Vec::new();
        let mut last_ratio = f64::INFINITY;
        for _ in 0..3 {
            let study = DamageStudyConfig {
                eigenstrain_step: 1.5e-3,
                n_steps: 1,
                probe_tol: 1e-8,
                probe_max_iter: None,
            };
            let out = run_damage_study(&mut cell, &solver(), &study).unwrap();
            assert!(!out.diverged);
            let ratio = out.rows.last().unwrap().stiffness_ratio;
            // Ratios are relative to the state at the start of each call;
            // each must be non-increasing within the call.
            for w in out.rows.windows(2) {
                assert!(w[1].stiffness_ratio <= w[0].stiffness_ratio + 1e-9);
            }
            let _ = last_ratio;
            last_ratio = ratio;
            sets.push(damaged_set(&cell));
        }
        assert!(
            !sets.last().unwrap().is_empty(),
            "ramp never initiated damage; increase the step"
        );
        for w in sets.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            assert!(a.iter().all(|i| b.contains(i)), "damaged set shrank");
        }
    }

    #[test]
    fn divergence_yields_partial_curve() {
        let mut cell = small_rve(21);
        let strangled = SolverConfig {
            max_newton: 1,
            eta_eq: 1e-8, // unreachable in one Newton trial once damage starts
            ..solver()
        };
        let study = DamageStudyConfig {
            eigenstrain_step: 2e-3,
            n_steps: 4,
            probe_tol: 1e-8,
            probe_max_iter: None,
        };
        let out = run_damage_study(&mut cell, &strangled, &study).unwrap();
        assert!(out.diverged);
        assert!(out.rows.len() < 5);
        assert!(!out.rows.is_empty());
    }
}
