//! Memory contract of the trust-region driver, asserted via field
//! allocation accounting: over a solve it may keep at most one persistent
//! field (the previous stress) more than plain Newton-CG.
//!
//! This test lives in its own binary so no concurrently running test can
//! disturb the global counters.

use homog::cell::{BoundaryCondition, Cell, LoadProgram};
use homog::grid::field_stats;
use homog::krylov::CgTolerance;
use homog::material::{LinearElastic, Material};
use homog::projection::{grid_for_scheme, DerivativeScheme};
use homog::solver::{newton_cg_solve, trust_region_solve, SolverConfig};

fn inclusion_cell() -> Cell {
    let scheme = DerivativeScheme::LinearFe;
    let n = 24;
    let grid = grid_for_scheme(n, n, 1.0, 1.0, scheme).unwrap();
    let mats = vec![
        Material::Elastic(LinearElastic::new(1.0, 0.3).unwrap()),
        Material::Elastic(LinearElastic::new(0.1, 0.3).unwrap()),
    ];
    let mut phase = vec![0u8; grid.n_pixels()];
    for iy in 8..16 {
        for ix in 8..16 {
            phase[grid.pixel(ix, iy)] = 1;
        }
    }
    Cell::new(grid, scheme, phase, mats, BoundaryCondition::MeanStrain).unwrap()
}

#[test]
fn trust_region_keeps_at_most_one_extra_field() {
    let cfg = SolverConfig {
        eta_eq: 1e-12,
        cg_tol: CgTolerance::RelativeToRhs(1e-10),
        ..Default::default()
    };
    let program = LoadProgram::mean_strain_steps(&[[0.01, 0.005, 0.002]]);

    let mut cell = inclusion_cell();
    let base = field_stats::live();
    field_stats::reset_peak();
    let rep = newton_cg_solve(&mut cell, &program, &cfg, None).unwrap();
    assert!(rep.converged);
    let peak_ncg = field_stats::peak() - base;
    drop(cell);

    let mut cell = inclusion_cell();
    let base = field_stats::live();
    field_stats::reset_peak();
    let rep = trust_region_solve(&mut cell, &program, &cfg, None).unwrap();
    assert!(rep.converged);
    let peak_tr = field_stats::peak() - base;
    drop(cell);

    println!("peak fields above baseline: newton_cg {peak_ncg}, trust_region {peak_tr}");
    assert!(
        peak_tr <= peak_ncg + 1,
        "trust region held {peak_tr} fields vs newton_cg {peak_ncg}: breaks the one-extra-field contract"
    );
}
