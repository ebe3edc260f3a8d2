//! Run configuration schema. JSON with unknown keys rejected; each
//! experiment owns one section and the presence of exactly that section is
//! validated before any compute. Lengths inside the microstructure section
//! are fractions of the cell edge so one configuration scales across grid
//! resolutions.

use serde::{Deserialize, Serialize};

use homog::cell::{BoundaryCondition, Cell};
use homog::krylov::CgTolerance;
use homog::material::{BilinearDamage, LinearElastic, Material};
use homog::micro::{FullerParams, MicroParams, PHASE_GEL};
use homog::projection::{grid_for_scheme, DerivativeScheme};
use homog::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Spring1d,
    Eshelby,
    DamageRve,
    ProjectorCheck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    /// Cell edge length in meters (square cell).
    pub l: f64,
    pub scheme: DerivativeScheme,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// RMS equilibrium tolerance, stress units.
    pub eta_eq: f64,
    #[serde(default = "default_eta_nr")]
    pub eta_nr: f64,
    #[serde(default)]
    pub eta_up: f64,
    #[serde(default)]
    pub r0: Option<f64>,
    #[serde(default)]
    pub rmax: Option<f64>,
    #[serde(default = "default_max_newton")]
    pub max_newton: usize,
    #[serde(default = "default_cg_tol_rel")]
    pub cg_tol_rel: f64,
    #[serde(default)]
    pub cg_max_iter: Option<usize>,
    #[serde(default = "default_reset")]
    pub reset_threshold: Option<f64>,
}

fn default_eta_nr() -> f64 {
    1e-9
}
fn default_max_newton() -> usize {
    500
}
fn default_cg_tol_rel() -> f64 {
    1e-8
}
fn default_reset() -> Option<f64> {
    Some(0.2)
}

impl SolverSection {
    pub fn to_solver_config(&self) -> SolverConfig {
        SolverConfig {
            eta_eq: self.eta_eq,
            eta_nr: self.eta_nr,
            eta_up: self.eta_up,
            r0: self.r0,
            rmax: self.rmax,
            max_newton: self.max_newton,
            cg_tol: CgTolerance::RelativeToRhs(self.cg_tol_rel),
            cg_max_iter: self.cg_max_iter,
            cg_reset_threshold: self.reset_threshold,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpringSection {
    pub k: f64,
    pub gamma0: f64,
    pub xbar: f64,
    pub alphas: Vec<f64>,
    #[serde(default = "default_landscape")]
    pub landscape: LandscapeSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeSection {
    pub x0_min: f64,
    pub x0_max: f64,
    pub points: usize,
}

fn default_landscape() -> LandscapeSection {
    LandscapeSection {
        x0_min: 0.0,
        x0_max: 0.45,
        points: 400,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EshelbySection {
    /// Inclusion-to-matrix Young modulus ratio.
    pub contrast: f64,
    pub matrix_e: f64,
    pub nu: f64,
    /// Inclusion radius as a fraction of the cell edge.
    pub radius_frac: f64,
    pub mean_strain: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamagePhase {
    pub e: f64,
    pub nu: f64,
    pub ft0: f64,
    pub gc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticPhase {
    pub e: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialsSection {
    pub matrix: DamagePhase,
    pub aggregate: DamagePhase,
    pub gel: ElasticPhase,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroSection {
    pub aggregate_fraction: f64,
    #[serde(default = "default_fuller_exponent")]
    pub fuller_exponent: f64,
    pub d_min_frac: f64,
    pub d_max_frac: f64,
    #[serde(default = "default_aspect_max")]
    pub aspect_max: f64,
    pub gel_area_fraction: f64,
    /// Gel pocket edge as a fraction of the cell edge; must divide 1.
    pub pocket_size_frac: f64,
    #[serde(default = "default_tries")]
    pub placement_tries: usize,
}

fn default_fuller_exponent() -> f64 {
    0.5
}
fn default_aspect_max() -> f64 {
    2.0
}
fn default_tries() -> usize {
    3000
}

impl MicroSection {
    pub fn to_micro_params(&self, l: f64) -> MicroParams {
        MicroParams {
            lx: l,
            ly: l,
            aggregate_fraction: self.aggregate_fraction,
            fuller: FullerParams {
                exponent: self.fuller_exponent,
                d_min: self.d_min_frac * l,
                d_max: self.d_max_frac * l,
            },
            aspect_max: self.aspect_max,
            gel_area_fraction: self.gel_area_fraction,
            pocket_size: self.pocket_size_frac * l,
            placement_tries: self.placement_tries,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamageSection {
    pub materials: MaterialsSection,
    pub micro: MicroSection,
    pub eigenstrain_step: f64,
    pub n_steps: usize,
    #[serde(default = "default_probe_tol")]
    pub probe_tol: f64,
    /// Ensemble member seeds; falls back to the run seed when empty.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub write_vtk: bool,
}

fn default_probe_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub solver: Option<SolverSection>,
    #[serde(default)]
    pub spring: Option<SpringSection>,
    #[serde(default)]
    pub eshelby: Option<EshelbySection>,
    #[serde(default)]
    pub damage: Option<DamageSection>,
}

fn default_seed() -> u64 {
    0
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(format!(
                    "experiment {:?} requires the `{what}` section",
                    self.experiment
                ))
            }
        };
        match self.experiment {
            Experiment::Spring1d => {
                need(self.spring.is_some(), "spring")?;
                need(self.solver.is_some(), "solver")?;
            }
            Experiment::Eshelby => {
                need(self.eshelby.is_some(), "eshelby")?;
                need(self.grid.is_some(), "grid")?;
                need(self.solver.is_some(), "solver")?;
            }
            Experiment::DamageRve => {
                need(self.damage.is_some(), "damage")?;
                need(self.grid.is_some(), "grid")?;
                need(self.solver.is_some(), "solver")?;
            }
            Experiment::ProjectorCheck => {
                need(self.grid.is_some(), "grid")?;
            }
        }
        if let Some(g) = &self.grid {
            if g.n < 2 || !(g.l > 0.0) {
                return Err("grid needs n >= 2 and l > 0".into());
            }
        }
        Ok(())
    }
}

/// Builds the Eshelby two-phase cell: a soft circular inclusion centered in
/// the cell, phase decided at pixel centers.
pub fn build_eshelby_cell(grid_cfg: &GridConfig, es: &EshelbySection) -> Result<Cell, String> {
    let grid = grid_for_scheme(
        grid_cfg.n,
        grid_cfg.n,
        grid_cfg.l,
        grid_cfg.l,
        grid_cfg.scheme,
    )
    .map_err(|e| e.to_string())?;
    let mats = vec![
        Material::Elastic(LinearElastic::new(es.matrix_e, es.nu).map_err(|e| e.to_string())?),
        Material::Elastic(
            LinearElastic::new(es.contrast * es.matrix_e, es.nu).map_err(|e| e.to_string())?,
        ),
    ];
    let mut phase = vec![0u8; grid.n_pixels()];
    let r = es.radius_frac * grid_cfg.l;
    let c = 0.5 * grid_cfg.l;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let dx = (ix as f64 + 0.5) * grid.hx() - c;
            let dy = (iy as f64 + 0.5) * grid.hy() - c;
            if dx * dx + dy * dy < r * r {
                phase[grid.pixel(ix, iy)] = 1;
            }
        }
    }
    Cell::new(
        grid,
        grid_cfg.scheme,
        phase,
        mats,
        BoundaryCondition::MeanStrain,
    )
    .map_err(|e| e.to_string())
}

/// Builds one damage RVE member: generates and rasterizes the
/// microstructure, regularizes the damage materials with the actual pixel
/// size and wires up the gel mask under zero-mean-stress control.
pub fn build_damage_cell(
    grid_cfg: &GridConfig,
    dmg: &DamageSection,
    seed: u64,
) -> Result<(Cell, homog::micro::Microstructure), String> {
    let grid = grid_for_scheme(
        grid_cfg.n,
        grid_cfg.n,
        grid_cfg.l,
        grid_cfg.l,
        grid_cfg.scheme,
    )
    .map_err(|e| e.to_string())?;
    let params = dmg.micro.to_micro_params(grid_cfg.l);
    let ms = homog::micro::generate(seed, &params).map_err(|e| e.to_string())?;
    let phase = ms.rasterize(grid).map_err(|e| e.to_string())?;
    let h = grid.hx();
    let m = &dmg.materials;
    let mats = vec![
        Material::Damage(
            BilinearDamage::regularized(m.matrix.e, m.matrix.nu, m.matrix.ft0, m.matrix.gc, h)
                .map_err(|e| e.to_string())?,
        ),
        Material::Damage(
            BilinearDamage::regularized(
                m.aggregate.e,
                m.aggregate.nu,
                m.aggregate.ft0,
                m.aggregate.gc,
                h,
            )
            .map_err(|e| e.to_string())?,
        ),
        Material::Elastic(LinearElastic::new(m.gel.e, m.gel.nu).map_err(|e| e.to_string())?),
    ];
    let gel_mask: Vec<bool> = phase.iter().map(|p| *p == PHASE_GEL).collect();
    let mut cell = Cell::new(
        grid,
        grid_cfg.scheme,
        phase,
        mats,
        BoundaryCondition::MeanStress { target: [0.0; 3] },
    )
    .map_err(|e| e.to_string())?;
    cell.set_eigenstrain_mask(gel_mask)
        .map_err(|e| e.to_string())?;
    Ok((cell, ms))
}
