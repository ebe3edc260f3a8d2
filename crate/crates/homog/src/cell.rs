//! The periodic cell problem: microstructure, boundary conditions,
//! matrix-free system action and effective stiffness extraction.
//!
//! A `Cell` owns the per-pixel phase map, the material table, the
//! compatibility projector and the current strain/stress/history fields. The
//! linearized equilibrium action `G:B:δε` is exposed as a matrix-free
//! operator for the Krylov solver; the right-hand side is `-G:σ`, with the
//! mean-stress residual entering through the identity zero-frequency block
//! under stress control.

use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};
use crate::grid::{mandel_matvec, GridShape, QPField, TensorRank};
use crate::krylov::{cg_steihaug, CgTolerance, KrylovConfig, Termination};
use crate::material::{evaluate, DamageState, Material};
use crate::projection::{
    build_derivative, build_projection, DerivativeScheme, ProjScratch, ProjectionOperator,
    ZeroFreqMode,
};

/// Macroscopic boundary condition of the cell problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BoundaryCondition {
    /// Mean strain is prescribed per load step.
    MeanStrain,
    /// Mean stress is prescribed; the mean strain is an unknown.
    MeanStress { target: [f64; 3] },
}

impl BoundaryCondition {
    pub fn zero_freq_mode(&self) -> ZeroFreqMode {
        match self {
            BoundaryCondition::MeanStrain => ZeroFreqMode::StrainControl,
            BoundaryCondition::MeanStress { .. } => ZeroFreqMode::StressControl,
        }
    }
}

/// One increment of the macroscopic load program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum LoadIncrement {
    /// Mean strain increment (Mandel).
    MeanStrain([f64; 3]),
    /// Mean stress target increment (Mandel).
    MeanStress([f64; 3]),
    /// Eigenstrain increment applied on the cell's eigenstrain mask (Mandel).
    Eigenstrain([f64; 3]),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoadProgram {
    pub increments: Vec<LoadIncrement>,
}

impl LoadProgram {
    pub fn mean_strain_steps(steps: &[[f64; 3]]) -> Self {
        Self {
            increments: steps
                .iter()
                .copied()
                .map(LoadIncrement::MeanStrain)
                .collect(),
        }
    }

    pub fn eigenstrain_ramp(step: [f64; 3], n: usize) -> Self {
        Self {
            increments: (0..n).map(|_| LoadIncrement::Eigenstrain(step)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.increments.is_empty() {
            return Err(HomogError::LoadProgram("empty load program".into()));
        }
        for inc in &self.increments {
            let v = match inc {
                LoadIncrement::MeanStrain(v)
                | LoadIncrement::MeanStress(v)
                | LoadIncrement::Eigenstrain(v) => v,
            };
            if !v.iter().all(|x| x.is_finite()) {
                return Err(HomogError::LoadProgram("non-finite increment".into()));
            }
        }
        Ok(())
    }
}

/// Periodic cell with phase map, materials, projector and state fields.
pub struct Cell {
    grid: GridShape,
    phase: Vec<u8>,
    materials: Vec<Material>,
    /// Pixels that receive eigenstrain increments (gel pockets).
    eig_mask: Vec<bool>,
    projection: ProjectionOperator,
    bc: BoundaryCondition,
    /// Total strain including the accumulated mean.
    pub eps: QPField,
    pub eps_eig: QPField,
    sigma: QPField,
    tangent: QPField,
    state: DamageState,
    evaluated: bool,
}

impl Cell {
    pub fn new(
        grid: GridShape,
        scheme: DerivativeScheme,
        phase: Vec<u8>,
        materials: Vec<Material>,
        bc: BoundaryCondition,
    ) -> Result<Self> {
        if phase.len() != grid.n_pixels() {
            return Err(HomogError::Grid(format!(
                "phase map has {} entries for {} pixels",
                phase.len(),
                grid.n_pixels()
            )));
        }
        if materials.is_empty() {
            return Err(HomogError::Material("no materials given".into()));
        }
        if let Some(bad) = phase.iter().find(|p| **p as usize >= materials.len()) {
            return Err(HomogError::Material(format!(
                "phase id {bad} has no material (table has {})",
                materials.len()
            )));
        }
        let d = build_derivative(scheme, grid)?;
        let projection = build_projection(&d, bc.zero_freq_mode())?;
        Ok(Self {
            grid,
            phase,
            materials,
            eig_mask: vec![false; grid.n_pixels()],
            projection,
            bc,
            eps: QPField::zeros(grid, TensorRank::Rank2),
            eps_eig: QPField::zeros(grid, TensorRank::Rank2),
            sigma: QPField::zeros(grid, TensorRank::Rank2),
            tangent: QPField::zeros(grid, TensorRank::Rank4),
            state: DamageState::new(grid.n_qp()),
            evaluated: false,
        })
    }

    /// Uniform single-material cell (homogeneous medium).
    pub fn homogeneous(
        grid: GridShape,
        scheme: DerivativeScheme,
        material: Material,
        bc: BoundaryCondition,
    ) -> Result<Self> {
        let n = grid.n_pixels();
        Self::new(grid, scheme, vec![0; n], vec![material], bc)
    }

    #[inline]
    pub fn grid(&self) -> GridShape {
        self.grid
    }

    #[inline]
    pub fn bc(&self) -> &BoundaryCondition {
        &self.bc
    }

    #[inline]
    pub fn projection(&self) -> &ProjectionOperator {
        &self.projection
    }

    #[inline]
    pub fn phase(&self) -> &[u8] {
        &self.phase
    }

    #[inline]
    pub fn sigma(&self) -> &QPField {
        &self.sigma
    }

    #[inline]
    pub fn state(&self) -> &DamageState {
        &self.state
    }

    /// Number of scalar unknowns of the strain field.
    #[inline]
    pub fn n_unknowns(&self) -> usize {
        self.grid.n_qp() * 3
    }

    pub fn set_eigenstrain_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.grid.n_pixels() {
            return Err(HomogError::Grid("eigenstrain mask size mismatch".into()));
        }
        self.eig_mask = mask;
        Ok(())
    }

    #[inline]
    pub fn material_of_pixel(&self, pix: usize) -> &Material {
        &self.materials[self.phase[pix] as usize]
    }

    /// Applies one load increment to the cell's driving quantities.
    pub fn apply_increment(&mut self, inc: &LoadIncrement) -> Result<()> {
        match inc {
            LoadIncrement::MeanStrain(de) => {
                if self.bc.zero_freq_mode() != ZeroFreqMode::StrainControl {
                    return Err(HomogError::LoadProgram(
                        "mean-strain increment on a stress-controlled cell".into(),
                    ));
                }
                self.eps.add_uniform_rank2(*de);
            }
            LoadIncrement::MeanStress(ds) => match &mut self.bc {
                BoundaryCondition::MeanStress { target } => {
                    for c in 0..3 {
                        target[c] += ds[c];
                    }
                }
                BoundaryCondition::MeanStrain => {
                    return Err(HomogError::LoadProgram(
                        "mean-stress increment on a strain-controlled cell".into(),
                    ));
                }
            },
            LoadIncrement::Eigenstrain(de) => {
                let nq = self.grid.nq;
                for pix in 0..self.grid.n_pixels() {
                    if self.eig_mask[pix] {
                        for q in 0..nq {
                            let qp = self.eps_eig.qp_mut(pix * nq + q);
                            qp[0] += de[0];
                            qp[1] += de[1];
                            qp[2] += de[2];
                        }
                    }
                }
            }
        }
        self.evaluated = false;
        Ok(())
    }

    /// Evaluates stress, tangent and trial history at `eps + eps_eig`.
    pub fn evaluate(&mut self) -> Result<()> {
        if !self.eps.is_finite() || !self.eps_eig.is_finite() {
            return Err(HomogError::NonFinite("cell strain fields"));
        }
        let nq = self.grid.nq;
        for pix in 0..self.grid.n_pixels() {
            let mat = &self.materials[self.phase[pix] as usize];
            for q in 0..nq {
                let i = pix * nq + q;
                let e = self.eps.qp(i);
                let ee = self.eps_eig.qp(i);
                let eval = [e[0] + ee[0], e[1] + ee[1], e[2] + ee[2]];
                let r = evaluate(mat, &eval, self.state.kappa_committed[i]);
                self.sigma.qp_mut(i).copy_from_slice(&r.sigma);
                self.tangent.qp_mut(i).copy_from_slice(&r.tangent);
                self.state.kappa_trial[i] = r.kappa_trial;
            }
        }
        self.evaluated = true;
        Ok(())
    }

    /// Advances the damage history to the last evaluated trial state.
    pub fn commit_state(&mut self) {
        self.state.commit();
    }

    /// Streams the trial stress at `eps + delta + eps_eig` (uncommitted
    /// history) into `visit(qp_index, sigma_trial)` without touching state.
    pub fn visit_trial_stress(&self, delta: &QPField, mut visit: impl FnMut(usize, &[f64; 3])) {
        let nq = self.grid.nq;
        for pix in 0..self.grid.n_pixels() {
            let mat = &self.materials[self.phase[pix] as usize];
            for q in 0..nq {
                let i = pix * nq + q;
                let e = self.eps.qp(i);
                let d = delta.qp(i);
                let ee = self.eps_eig.qp(i);
                let eval = [
                    e[0] + d[0] + ee[0],
                    e[1] + d[1] + ee[1],
                    e[2] + d[2] + ee[2],
                ];
                let r = evaluate(mat, &eval, self.state.kappa_committed[i]);
                visit(i, &r.sigma);
            }
        }
    }

    /// `b = -G:σ`, plus the mean-stress residual under stress control
    /// (the zero-frequency component of `b` becomes `σ̄_target - mean(σ)`).
    pub fn assemble_rhs(&self, scratch: &mut ProjScratch) -> Result<QPField> {
        debug_assert!(self.evaluated, "assemble_rhs needs a prior evaluate()");
        let mut b = self.projection.apply(&self.sigma, scratch)?;
        b.scale(-1.0);
        if let BoundaryCondition::MeanStress { target } = &self.bc {
            b.add_uniform_rank2(*target);
        }
        Ok(b)
    }

    /// Per-quadrature-point tangent action `B:d` (no projection).
    pub fn apply_tangent(&self, d: &QPField, out: &mut QPField) {
        debug_assert!(self.evaluated);
        for i in 0..self.grid.n_qp() {
            let t: &[f64] = self.tangent.qp(i);
            let x = d.qp(i);
            let y = mandel_matvec(t.try_into().expect("rank-4 qp slice"), x);
            out.qp_mut(i).copy_from_slice(&y);
        }
    }

    /// Matrix-free system action `G:B:dε` with the cell's own
    /// zero-frequency mode.
    pub fn apply_system(&self, d: &QPField, scratch: &mut ProjScratch) -> Result<QPField> {
        let mut bd = QPField::zeros(self.grid, TensorRank::Rank2);
        self.apply_tangent(d, &mut bd);
        self.projection.apply(&bd, scratch)
    }

    /// Quadrature points whose committed history exceeds the damage
    /// threshold of their material.
    pub fn damaged_qp_count(&self) -> usize {
        let nq = self.grid.nq;
        let mut count = 0;
        for pix in 0..self.grid.n_pixels() {
            if let Material::Damage(m) = self.materials[self.phase[pix] as usize] {
                for q in 0..nq {
                    if self.state.kappa_committed[pix * nq + q] > m.kappa0 {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    /// Committed damage as a scalar field (0 for elastic phases).
    pub fn damage_field(&self) -> QPField {
        let mut f = QPField::zeros(self.grid, TensorRank::Scalar);
        let nq = self.grid.nq;
        for pix in 0..self.grid.n_pixels() {
            if let Material::Damage(m) = self.materials[self.phase[pix] as usize] {
                for q in 0..nq {
                    let i = pix * nq + q;
                    f.qp_mut(i)[0] = m.damage_at(self.state.kappa_committed[i]);
                }
            }
        }
        f
    }

    /// Committed history measure as a scalar field.
    pub fn kappa_field(&self) -> QPField {
        let mut f = QPField::zeros(self.grid, TensorRank::Scalar);
        for i in 0..self.grid.n_qp() {
            f.qp_mut(i)[0] = self.state.kappa_committed[i];
        }
        f
    }

    pub fn mean_strain(&self) -> Result<[f64; 3]> {
        self.eps.mean_rank2()
    }

    pub fn mean_stress(&self) -> Result<[f64; 3]> {
        debug_assert!(self.evaluated);
        self.sigma.mean_rank2()
    }

    /// Secant (history-frozen) stiffness per quadrature point: damage held at
    /// its committed value, so the probe response is the elastic stiffness of
    /// the damaged material.
    fn secant_tangent(&self) -> Vec<[f64; 9]> {
        let nq = self.grid.nq;
        let mut out = vec![[0.0; 9]; self.grid.n_qp()];
        for pix in 0..self.grid.n_pixels() {
            let mat = &self.materials[self.phase[pix] as usize];
            for q in 0..nq {
                let i = pix * nq + q;
                out[i] = match mat {
                    Material::Elastic(m) => m.stiffness(),
                    Material::Damage(m) => {
                        let d = m.damage_at(self.state.kappa_committed[i]);
                        let c = m.stiffness();
                        let mut s = [0.0; 9];
                        for (k, v) in s.iter_mut().enumerate() {
                            *v = (1.0 - d) * c[k];
                        }
                        s
                    }
                };
            }
        }
        out
    }
}

/// Effective stiffness extracted from probe solves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveStiffness {
    /// Mandel 3x3 matrix, row major.
    pub c_bar: [f64; 9],
    pub frobenius_norm: f64,
    /// Total CG iterations spent on the three probe solves.
    pub cg_iterations: usize,
}

/// Homogenized stiffness at the current (frozen) damage state: for each of
/// the three Mandel unit mean-strain probes, solve the linearized cell
/// problem for the fluctuation response and average the stress.
pub fn effective_stiffness(
    cell: &Cell,
    scratch: &mut ProjScratch,
    tol: f64,
    max_iter: Option<usize>,
) -> Result<EffectiveStiffness> {
    let grid = cell.grid();
    let secant = cell.secant_tangent();
    let apply_secant = |d: &QPField, out: &mut QPField| {
        for i in 0..grid.n_qp() {
            let y = mandel_matvec(&secant[i], d.qp(i));
            out.qp_mut(i).copy_from_slice(&y);
        }
    };
    let cfg = KrylovConfig {
        tol: CgTolerance::RelativeToRhs(tol),
        max_iter: max_iter.unwrap_or_else(|| cell.n_unknowns().max(100)),
        reset_threshold: Some(0.2),
    };

    let mut c_bar = [0.0; 9];
    let mut cg_total = 0usize;
    let mut bd = QPField::zeros(grid, TensorRank::Rank2);
    for k in 0..3 {
        let mut probe = [0.0; 3];
        probe[k] = 1.0;
        let uniform = QPField::uniform_rank2(grid, probe);
        apply_secant(&uniform, &mut bd);
        let mut rhs =
            cell.projection()
                .apply_with_mode(&bd, ZeroFreqMode::StrainControl, scratch)?;
        rhs.scale(-1.0);

        let mut result = cg_steihaug(
            |d: &QPField| {
                let mut out = QPField::zeros(grid, TensorRank::Rank2);
                apply_secant(d, &mut out);
                cell.projection()
                    .apply_with_mode(&out, ZeroFreqMode::StrainControl, scratch)
                    .expect("projection failed inside probe solve")
            },
            &rhs,
            f64::INFINITY,
            &cfg,
            None,
        )?;
        match result.termination {
            Termination::Converged => {}
            t => {
                return Err(HomogError::Solver(format!(
                    "effective stiffness probe {k} did not converge ({t:?} after {} iterations)",
                    result.iterations
                )))
            }
        }
        cg_total += result.iterations;

        result.p.add_uniform_rank2(probe);
        apply_secant(&result.p, &mut bd);
        let col = bd.mean_rank2()?;
        for i in 0..3 {
            c_bar[i * 3 + k] = col[i];
        }
    }
    let frob = c_bar.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(EffectiveStiffness {
        c_bar,
        frobenius_norm: frob,
        cg_iterations: cg_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::isotropic_stiffness;
    use crate::material::LinearElastic;
    use crate::projection::grid_for_scheme;
    use approx::assert_relative_eq;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha12Rng;

    fn elastic(e: f64, nu: f64) -> Material {
        Material::Elastic(LinearElastic::new(e, nu).unwrap())
    }

    fn uniform_cell(nx: usize, ny: usize, scheme: DerivativeScheme) -> Cell {
        let grid = grid_for_scheme(nx, ny, 1.0, 1.0, scheme).unwrap();
        Cell::homogeneous(
            grid,
            scheme,
            elastic(1.0, 0.3),
            BoundaryCondition::MeanStrain,
        )
        .unwrap()
    }

    #[test]
    fn uniform_strain_on_uniform_cell_gives_zero_rhs() {
        for scheme in [DerivativeScheme::Fourier, DerivativeScheme::LinearFe] {
            let mut cell = uniform_cell(8, 8, scheme);
            cell.apply_increment(&LoadIncrement::MeanStrain([0.01, 0.02, -0.005]))
                .unwrap();
            cell.evaluate().unwrap();
            let mut scratch = ProjScratch::new(cell.grid());
            let b = cell.assemble_rhs(&mut scratch).unwrap();
            assert!(b.norm() < 1e-13, "{scheme:?}: {}", b.norm());
        }
    }

    #[test]
    fn rhs_matches_composition_oracle() {
        // Brute-force oracle: gather per-frequency vectors with a direct
        // O(N^2) DFT, multiply by the dense block, invert, negate.
        let scheme = DerivativeScheme::LinearFe;
        let grid = grid_for_scheme(4, 3, 1.0, 1.0, scheme).unwrap();
        let mut cell = Cell::homogeneous(
            grid,
            scheme,
            elastic(2.0, 0.25),
            BoundaryCondition::MeanStrain,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for v in cell.eps.data_mut() {
            *v = rng.gen_range(-0.01..0.01);
        }
        cell.evaluate().unwrap();
        let mut scratch = ProjScratch::new(grid);
        let b = cell.assemble_rhs(&mut scratch).unwrap();

        let (nx, ny, nq) = (grid.nx, grid.ny, grid.nq);
        let npix = nx * ny;
        let m = 3 * nq;
        let sigma = cell.sigma();
        // Forward DFT per (q, c) plane.
        let mut spec = vec![num_complex::Complex64::default(); npix * m];
        for ky in 0..ny {
            for kx in 0..nx {
                for p in 0..m {
                    let (q, c) = (p / 3, p % 3);
                    let mut s = num_complex::Complex64::default();
                    for iy in 0..ny {
                        for ix in 0..nx {
                            let phase = -2.0
                                * std::f64::consts::PI
                                * (kx as f64 * ix as f64 / nx as f64
                                    + ky as f64 * iy as f64 / ny as f64);
                            s += sigma.at(ix, iy, q)[c]
                                * num_complex::Complex64::from_polar(1.0, phase);
                        }
                    }
                    spec[(ky * nx + kx) * m + p] = s;
                }
            }
        }
        // Apply dense blocks.
        let mut proj = vec![num_complex::Complex64::default(); npix * m];
        for freq in 0..npix {
            let block = cell.projection().block(freq, ZeroFreqMode::StrainControl);
            for r in 0..m {
                let mut s = num_complex::Complex64::default();
                for c in 0..m {
                    s += block[r * m + c] * spec[freq * m + c];
                }
                proj[freq * m + r] = s;
            }
        }
        // Inverse DFT and compare.
        for iy in 0..ny {
            for ix in 0..nx {
                for p in 0..m {
                    let (q, c) = (p / 3, p % 3);
                    let mut s = num_complex::Complex64::default();
                    for ky in 0..ny {
                        for kx in 0..nx {
                            let phase = 2.0
                                * std::f64::consts::PI
                                * (kx as f64 * ix as f64 / nx as f64
                                    + ky as f64 * iy as f64 / ny as f64);
                            s += proj[(ky * nx + kx) * m + p]
                                * num_complex::Complex64::from_polar(1.0, phase);
                        }
                    }
                    let want = -s.re / npix as f64;
                    let got = b.at(ix, iy, q)[c];
                    assert_relative_eq!(got, want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn apply_system_is_linear_and_zero_on_zero() {
        let scheme = DerivativeScheme::LinearFe;
        let mut cell = uniform_cell(8, 8, scheme);
        cell.evaluate().unwrap();
        let grid = cell.grid();
        let mut scratch = ProjScratch::new(grid);
        let zero = QPField::zeros(grid, TensorRank::Rank2);
        assert_eq!(cell.apply_system(&zero, &mut scratch).unwrap().norm(), 0.0);

        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut x = QPField::zeros(grid, TensorRank::Rank2);
        let mut y = QPField::zeros(grid, TensorRank::Rank2);
        for v in x.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in y.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let (a, b) = (1.3, -0.7);
        let mut combo = x.clone();
        combo.scale(a);
        combo.axpy(b, &y);
        let lhs = cell.apply_system(&combo, &mut scratch).unwrap();
        let mut rhs = cell.apply_system(&x, &mut scratch).unwrap();
        rhs.scale(a);
        let fy = cell.apply_system(&y, &mut scratch).unwrap();
        rhs.axpy(b, &fy);
        let mut diff = lhs.clone();
        diff.axpy(-1.0, &rhs);
        assert!(diff.norm() <= 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn apply_system_on_uniform_medium_matches_block_algebra() {
        // On a homogeneous elastic medium the action on a compatible field
        // equals G-projected C:dε; verify per-frequency via dense blocks.
        let scheme = DerivativeScheme::Fourier;
        let mut cell = uniform_cell(6, 5, scheme);
        cell.evaluate().unwrap();
        let grid = cell.grid();
        let mut scratch = ProjScratch::new(grid);
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mut d = QPField::zeros(grid, TensorRank::Rank2);
        for v in d.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let got = cell.apply_system(&d, &mut scratch).unwrap();
        // Oracle: C:d then projector applied via the public API.
        let c = isotropic_stiffness(1.0, 0.3);
        let mut cd = QPField::zeros(grid, TensorRank::Rank2);
        for i in 0..grid.n_qp() {
            let y = mandel_matvec(&c, d.qp(i));
            cd.qp_mut(i).copy_from_slice(&y);
        }
        let want = cell.projection().apply(&cd, &mut scratch).unwrap();
        let mut diff = got.clone();
        diff.axpy(-1.0, &want);
        assert!(diff.norm() <= 1e-12 * want.norm().max(1e-30));
    }

    #[test]
    fn effective_stiffness_of_homogeneous_cell_is_the_material() {
        for scheme in [DerivativeScheme::Fourier, DerivativeScheme::LinearFe] {
            let mut cell = uniform_cell(8, 8, scheme);
            cell.evaluate().unwrap();
            let mut scratch = ProjScratch::new(cell.grid());
            let eff = effective_stiffness(&cell, &mut scratch, 1e-12, None).unwrap();
            let c = isotropic_stiffness(1.0, 0.3);
            for i in 0..9 {
                assert_relative_eq!(eff.c_bar[i], c[i], epsilon = 1e-10 * c[0]);
            }
        }
    }

    #[test]
    fn effective_stiffness_of_laminate_matches_closed_form() {
        // Two-phase laminate with layers normal to x. Exact homogenization:
        // σxx, σxy continuous; εyy common; phase strains solved from the
        // interface conditions, then averaged. Solved densely with nalgebra
        // as an independent oracle.
        let scheme = DerivativeScheme::LinearFe;
        let grid = grid_for_scheme(16, 4, 1.0, 1.0, scheme).unwrap();
        let mats = [elastic(1.0, 0.3), elastic(10.0, 0.2)];
        // Left half phase 0, right half phase 1 (layers normal to x).
        let mut phase = vec![0u8; grid.n_pixels()];
        for iy in 0..grid.ny {
            for ix in grid.nx / 2..grid.nx {
                phase[grid.pixel(ix, iy)] = 1;
            }
        }
        let mut cell = Cell::new(
            grid,
            scheme,
            phase,
            mats.to_vec(),
            BoundaryCondition::MeanStrain,
        )
        .unwrap();
        cell.evaluate().unwrap();
        let mut scratch = ProjScratch::new(grid);
        let eff = effective_stiffness(&cell, &mut scratch, 1e-12, Some(20000)).unwrap();

        // Oracle: per macroscopic probe E, unknowns are the phase-0 strain
        // (εxx0, εxy0) with phase-1 values determined by volume averaging;
        // equations: σxx and σxy continuity.
        let c0 = nalgebra::Matrix3::from_row_slice(&isotropic_stiffness(1.0, 0.3));
        let c1 = nalgebra::Matrix3::from_row_slice(&isotropic_stiffness(10.0, 0.2));
        let f0 = 0.5;
        let f1 = 0.5;
        let mut want = [0.0; 9];
        for k in 0..3 {
            let mut e_bar = nalgebra::Vector3::zeros();
            e_bar[k] = 1.0;
            // unknown x = [εxx0, εxy0]; εyy is uniform = e_bar[1].
            // ε1 = (e_bar - f0 ε0)/f1 componentwise for xx and xy.
            // Continuity: rows 0 (σxx) and 2 (σxy) of C0 ε0 = C1 ε1.
            let mut a = nalgebra::Matrix2::zeros();
            let mut rhs = nalgebra::Vector2::zeros();
            for (row_i, row) in [0usize, 2usize].iter().enumerate() {
                // coefficient of ε0_xx and ε0_xy
                a[(row_i, 0)] = c0[(*row, 0)] + c1[(*row, 0)] * f0 / f1;
                a[(row_i, 1)] = c0[(*row, 2)] + c1[(*row, 2)] * f0 / f1;
                // rhs: C1 acting on the known parts of ε1
                rhs[row_i] = c1[(*row, 0)] * e_bar[0] / f1
                    + c1[(*row, 1)] * e_bar[1]
                    + c1[(*row, 2)] * e_bar[2] / f1
                    - c0[(*row, 1)] * e_bar[1];
            }
            let x = a.lu().solve(&rhs).unwrap();
            let e0 = nalgebra::Vector3::new(x[0], e_bar[1], x[1]);
            let e1 = nalgebra::Vector3::new(
                (e_bar[0] - f0 * x[0]) / f1,
                e_bar[1],
                (e_bar[2] - f0 * x[1]) / f1,
            );
            let s = c0 * e0 * f0 + c1 * e1 * f1;
            for i in 0..3 {
                want[i * 3 + k] = s[i];
            }
        }
        for i in 0..9 {
            assert_relative_eq!(eff.c_bar[i], want[i], epsilon = 1e-8 * want[0].abs());
        }
        // Major symmetry for elastic states.
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(
                    eff.c_bar[i * 3 + j],
                    eff.c_bar[j * 3 + i],
                    epsilon = 1e-8 * want[0].abs()
                );
            }
        }
    }

    #[test]
    fn load_program_validation() {
        assert!(LoadProgram::default().validate().is_err());
        let p = LoadProgram::mean_strain_steps(&[[f64::NAN, 0.0, 0.0]]);
        assert!(p.validate().is_err());
        let mut cell = uniform_cell(4, 4, DerivativeScheme::Fourier);
        assert!(cell
            .apply_increment(&LoadIncrement::MeanStress([1.0, 0.0, 0.0]))
            .is_err());
    }

    #[test]
    fn eigenstrain_lands_only_on_masked_pixels() {
        let mut cell = uniform_cell(4, 4, DerivativeScheme::Fourier);
        let mut mask = vec![false; 16];
        mask[5] = true;
        cell.set_eigenstrain_mask(mask).unwrap();
        cell.apply_increment(&LoadIncrement::Eigenstrain([2e-4, 2e-4, 0.0]))
            .unwrap();
        for pix in 0..16 {
            let v = cell.eps_eig.qp(pix)[0];
            assert_eq!(v, if pix == 5 { 2e-4 } else { 0.0 });
        }
    }
}
