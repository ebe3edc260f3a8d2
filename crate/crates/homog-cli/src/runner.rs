//! Experiment execution: builds cells from the configuration, drives the
//! solvers, and writes manifests, CSV/NPY/VTK artifacts and reports.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use homog::cell::LoadProgram;
use homog::grid::QPField;
use homog::io as hio;
use homog::projection::{build_derivative, build_projection, grid_for_scheme, ZeroFreqMode};
use homog::solver::{
    newton_cg_solve, trust_region_solve, ConvergenceReport, SolveTermination, SolveTrace,
    SolverConfig,
};
use homog::spring::{spring_solve, SpringMethod, SpringSolveResult, SpringSystem};
use homog::study::{run_damage_study, DamageStudyConfig, DegradationRow};

use crate::config::{build_damage_cell, build_eshelby_cell, Experiment, RunConfig, SpringSection};

pub struct RunFlags {
    pub out: PathBuf,
    pub trace: bool,
    pub check_projector: bool,
    pub seed_override: Option<u64>,
}

#[derive(Debug)]
pub enum RunError {
    Config(String),
    Io(String),
    Internal(String),
}

impl RunError {
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Io(_) => "io",
            RunError::Internal(_) => "internal",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            RunError::Config(m) | RunError::Io(m) | RunError::Internal(m) => m,
        }
    }
}

fn io_err<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Io(e.to_string())
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: Experiment,
    seed: u64,
    config_file: String,
    config_sha256: String,
    /// Effective configuration (seed override applied); enough to
    /// reproduce the run byte for byte.
    config: &'a RunConfig,
    crate_version: &'a str,
    wall_time_s: f64,
    diverged: bool,
    outputs: Vec<String>,
}

/// Executes the configured experiment; returns the process exit code
/// (0 success, 2 solver divergence).
pub fn run(config_path: &Path, flags: &RunFlags) -> Result<i32, RunError> {
    let started = Instant::now();
    let raw = std::fs::read(config_path)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let text = String::from_utf8(raw.clone())
        .map_err(|e| RunError::Config(format!("config is not UTF-8: {e}")))?;
    let mut cfg = RunConfig::from_json(&text).map_err(RunError::Config)?;
    if let Some(seed) = flags.seed_override {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&flags.out).map_err(io_err)?;

    let mut outputs: Vec<String> = Vec::new();
    if flags.check_projector {
        if let Some(g) = &cfg.grid {
            let grid = grid_for_scheme(g.n, g.n, g.l, g.l, g.scheme)
                .map_err(|e| RunError::Internal(e.to_string()))?;
            let d =
                build_derivative(g.scheme, grid).map_err(|e| RunError::Internal(e.to_string()))?;
            let p = build_projection(&d, ZeroFreqMode::StrainControl)
                .map_err(|e| RunError::Internal(e.to_string()))?;
            let check = p
                .self_check(cfg.seed)
                .map_err(|e| RunError::Internal(e.to_string()))?;
            write_json(&flags.out.join("projector_check.json"), &check)?;
            outputs.push("projector_check.json".into());
        }
    }

    let diverged = match cfg.experiment {
        Experiment::Spring1d => run_spring(&cfg, flags, &mut outputs)?,
        Experiment::Eshelby => run_eshelby(&cfg, flags, &mut outputs)?,
        Experiment::DamageRve => run_damage(&cfg, flags, &mut outputs)?,
        Experiment::ProjectorCheck => {
            let g = cfg.grid.as_ref().unwrap();
            let grid = grid_for_scheme(g.n, g.n, g.l, g.l, g.scheme)
                .map_err(|e| RunError::Internal(e.to_string()))?;
            let d =
                build_derivative(g.scheme, grid).map_err(|e| RunError::Internal(e.to_string()))?;
            let p = build_projection(&d, ZeroFreqMode::StrainControl)
                .map_err(|e| RunError::Internal(e.to_string()))?;
            let check = p
                .self_check(cfg.seed)
                .map_err(|e| RunError::Internal(e.to_string()))?;
            write_json(&flags.out.join("projector_check.json"), &check)?;
            outputs.push("projector_check.json".into());
            false
        }
    };

    let manifest = Manifest {
        experiment: cfg.experiment,
        seed: cfg.seed,
        config_file: config_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        config_sha256: hex_digest(&raw),
        config: &cfg,
        crate_version: env!("CARGO_PKG_VERSION"),
        wall_time_s: started.elapsed().as_secs_f64(),
        diverged,
        outputs,
    };
    write_json(&flags.out.join("manifest.json"), &manifest)?;
    Ok(if diverged { 2 } else { 0 })
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| RunError::Internal(e.to_string()))?;
    std::fs::write(path, text).map_err(io_err)
}

/// Tag an alpha value for filenames: 1 -> "1", -0.5 -> "m0p5".
pub fn alpha_tag(alpha: f64) -> String {
    let mut s = format!("{alpha}");
    s = s.replace('-', "m").replace('.', "p");
    s
}

#[derive(Serialize)]
struct SpringMethodReport {
    method: SpringMethod,
    termination: SolveTermination,
    dof: [f64; 2],
    energy: f64,
    newton_trials: usize,
}

#[derive(Serialize)]
struct SpringAlphaReport {
    alpha: f64,
    methods: Vec<SpringMethodReport>,
}

fn run_spring(
    cfg: &RunConfig,
    flags: &RunFlags,
    outputs: &mut Vec<String>,
) -> Result<bool, RunError> {
    let sp: &SpringSection = cfg.spring.as_ref().unwrap();
    let scfg = cfg.solver.as_ref().unwrap().to_solver_config();
    let mut diverged = false;
    let mut reports = Vec::new();
    for &alpha in &sp.alphas {
        let sys = SpringSystem::new(sp.k, alpha, sp.gamma0, sp.xbar)
            .map_err(|e| RunError::Config(e.to_string()))?;
        let tag = alpha_tag(alpha);

        // Landscape slice.
        let mut csv = String::from("x0,w\n");
        for i in 0..=sp.landscape.points {
            let x0 = sp.landscape.x0_min
                + (sp.landscape.x0_max - sp.landscape.x0_min) * i as f64
                    / sp.landscape.points as f64;
            csv.push_str(&format!("{},{}\n", x0, sys.landscape_slice(x0)));
        }
        let name = format!("landscape_alpha_{tag}.csv");
        std::fs::write(flags.out.join(&name), csv).map_err(io_err)?;
        outputs.push(name);

        let mut methods = Vec::new();
        for method in [
            SpringMethod::NewtonCg,
            SpringMethod::StandardTr,
            SpringMethod::ModifiedTr,
        ] {
            let r: SpringSolveResult =
                spring_solve(&sys, method, &scfg).map_err(|e| RunError::Internal(e.to_string()))?;
            let mname = match method {
                SpringMethod::NewtonCg => "newton_cg",
                SpringMethod::StandardTr => "standard_tr",
                SpringMethod::ModifiedTr => "modified_tr",
            };
            let mut csv = String::from("iter,x0,x1,w\n");
            for (i, d) in r.trajectory.iter().enumerate() {
                csv.push_str(&format!("{},{},{},{}\n", i, d[0], d[1], sys.energy(d)));
            }
            let name = format!("trajectory_{mname}_alpha_{tag}.csv");
            std::fs::write(flags.out.join(&name), csv).map_err(io_err)?;
            outputs.push(name);

            // Only the trust-region solvers are expected to reach a
            // minimizer on the non-convex cases.
            if method != SpringMethod::NewtonCg && r.termination != SolveTermination::Converged {
                diverged = true;
            }
            methods.push(SpringMethodReport {
                method,
                termination: r.termination,
                dof: r.dof,
                energy: r.energy,
                newton_trials: r.newton_trials,
            });
        }
        reports.push(SpringAlphaReport { alpha, methods });
    }
    write_json(&flags.out.join("spring_report.json"), &reports)?;
    outputs.push("spring_report.json".into());
    Ok(diverged)
}

#[derive(Serialize)]
struct EshelbyReport {
    rel_field_diff: f64,
    newton_cg: ConvergenceReport,
    trust_region: ConvergenceReport,
}

fn write_trial_trace(path: &Path, trace: &SolveTrace) -> Result<(), RunError> {
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    writeln!(
        f,
        "load_step,trial,cg_iterations,cg_resets,cg_termination,step_norm,radius_before,radius_after,delta_m,delta_w_bar,rho_bar,accepted,residual_after"
    )
    .map_err(io_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for t in &trace.trials {
        writeln!(
            f,
            "{},{},{},{},{:?},{},{},{},{},{},{},{},{}",
            t.load_step,
            t.trial,
            t.cg_iterations,
            t.cg_resets,
            t.cg_termination,
            t.step_norm,
            opt(t.radius_before),
            opt(t.radius_after),
            opt(t.delta_m),
            opt(t.delta_w_bar),
            opt(t.rho_bar),
            t.accepted,
            opt(t.residual_after)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn write_cg_trace(path: &Path, trace: &SolveTrace) -> Result<(), RunError> {
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    writeln!(f, "load_step,trial,iter,residual_norm,reset,model_value").map_err(io_err)?;
    for (step, trial, row) in &trace.cg_rows {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            step, trial, row.iter, row.residual_norm, row.reset as u8, row.model_value
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn run_eshelby(
    cfg: &RunConfig,
    flags: &RunFlags,
    outputs: &mut Vec<String>,
) -> Result<bool, RunError> {
    let g = cfg.grid.as_ref().unwrap();
    let es = cfg.eshelby.as_ref().unwrap();
    let scfg = cfg.solver.as_ref().unwrap().to_solver_config();
    let program = LoadProgram::mean_strain_steps(&[es.mean_strain]);

    let mut cell_ncg = build_eshelby_cell(g, es).map_err(RunError::Config)?;
    let rep_ncg = newton_cg_solve(&mut cell_ncg, &program, &scfg, None)
        .map_err(|e| RunError::Internal(e.to_string()))?;

    let mut cell_tr = build_eshelby_cell(g, es).map_err(RunError::Config)?;
    let mut trace = SolveTrace {
        trace_cg: flags.trace,
        ..Default::default()
    };
    let rep_tr = trust_region_solve(&mut cell_tr, &program, &scfg, Some(&mut trace))
        .map_err(|e| RunError::Internal(e.to_string()))?;
    if flags.trace {
        write_trial_trace(&flags.out.join("trace_trust_region.csv"), &trace)?;
        write_cg_trace(&flags.out.join("cg_trust_region.csv"), &trace)?;
        outputs.push("trace_trust_region.csv".into());
        outputs.push("cg_trust_region.csv".into());
    }

    let diverged = !(rep_ncg.converged && rep_tr.converged);

    hio::write_field_with_sidecar(&flags.out, "eps_newton_cg", &cell_ncg.eps, "strain")
        .map_err(|e| RunError::Io(e.to_string()))?;
    hio::write_field_with_sidecar(&flags.out, "eps_trust_region", &cell_tr.eps, "strain")
        .map_err(|e| RunError::Io(e.to_string()))?;
    outputs.extend(
        [
            "eps_newton_cg.npy",
            "eps_newton_cg.json",
            "eps_trust_region.npy",
            "eps_trust_region.json",
        ]
        .map(String::from),
    );

    let mut diff = cell_ncg.eps.clone();
    diff.axpy(-1.0, &cell_tr.eps);
    let rel = diff.norm() / cell_ncg.eps.norm().max(1e-300);

    // Shear strain along three horizontal cuts: the inclusion center line
    // and half a radius below/above it.
    let grid = cell_ncg.grid();
    let n = grid.ny;
    let r_pix = es.radius_frac * n as f64;
    let center = n / 2;
    let rows = [
        ("center", center),
        ("minus_r2", center - (r_pix / 2.0).round() as usize),
        ("plus_r2", center + (r_pix / 2.0).round() as usize),
    ];
    let eps_xy = |f: &QPField, ix: usize, iy: usize| {
        let mut v = 0.0;
        for q in 0..grid.nq {
            v += f.at(ix, iy, q)[2] / homog::grid::SQRT2;
        }
        v / grid.nq as f64
    };
    let mut csv = String::from("x,cut,eps_xy_newton_cg,eps_xy_trust_region\n");
    for (name, iy) in rows {
        for ix in 0..grid.nx {
            let x = (ix as f64 + 0.5) * grid.hx();
            csv.push_str(&format!(
                "{},{},{},{}\n",
                x,
                name,
                eps_xy(&cell_ncg.eps, ix, iy),
                eps_xy(&cell_tr.eps, ix, iy)
            ));
        }
    }
    std::fs::write(flags.out.join("cuts.csv"), csv).map_err(io_err)?;
    outputs.push("cuts.csv".into());

    let report = EshelbyReport {
        rel_field_diff: rel,
        newton_cg: rep_ncg,
        trust_region: rep_tr,
    };
    write_json(&flags.out.join("eshelby_report.json"), &report)?;
    outputs.push("eshelby_report.json".into());
    Ok(diverged)
}

struct MemberOutcome {
    seed: u64,
    rows: Vec<DegradationRow>,
    diverged: bool,
}

fn worker_count(n_jobs: usize) -> usize {
    let hw = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("HOMOG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v >= 1)
        .unwrap_or(hw);
    cap.min(n_jobs).max(1)
}

fn run_damage(
    cfg: &RunConfig,
    flags: &RunFlags,
    outputs: &mut Vec<String>,
) -> Result<bool, RunError> {
    let g = cfg.grid.as_ref().unwrap();
    let dmg = cfg.damage.as_ref().unwrap();
    let scfg = cfg.solver.as_ref().unwrap().to_solver_config();
    let study_cfg = DamageStudyConfig {
        eigenstrain_step: dmg.eigenstrain_step,
        n_steps: dmg.n_steps,
        probe_tol: dmg.probe_tol,
        probe_max_iter: None,
    };
    let seeds: Vec<u64> = if dmg.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        dmg.seeds.clone()
    };

    // Ensemble members run in a worker pool; each member writes its own
    // directory, the merge below is single threaded and seed ordered.
    let jobs: Vec<(usize, u64)> = seeds.iter().copied().enumerate().collect();
    let results: Mutex<Vec<Option<Result<MemberOutcome, RunError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next: Mutex<usize> = Mutex::new(0);
    let workers = worker_count(jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = {
                    let mut n = next.lock().unwrap();
                    if *n >= jobs.len() {
                        break;
                    }
                    let i = *n;
                    *n += 1;
                    i
                };
                let (slot, seed) = jobs[idx];
                let outcome = run_damage_member(cfg, flags, g, dmg, &scfg, &study_cfg, seed);
                results.lock().unwrap()[slot] = Some(outcome);
            });
        }
    });

    let mut members = Vec::new();
    for r in results.into_inner().unwrap() {
        members.push(r.expect("worker finished")?);
    }

    for m in &members {
        outputs.push(format!("member_{}/degradation.csv", m.seed));
    }

    if members.len() > 1 {
        let min_len = members.iter().map(|m| m.rows.len()).min().unwrap_or(0);
        let mut csv = String::from("step,sum_eigenstrain,ratio_min,ratio_mean,ratio_max\n");
        for i in 0..min_len {
            let vals: Vec<f64> = members.iter().map(|m| m.rows[i].stiffness_ratio).collect();
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                members[0].rows[i].step, members[0].rows[i].sum_eigenstrain, min, mean, max
            ));
        }
        std::fs::write(flags.out.join("ensemble.csv"), csv).map_err(io_err)?;
        outputs.push("ensemble.csv".into());
    }

    Ok(members.iter().any(|m| m.diverged))
}

fn run_damage_member(
    cfg: &RunConfig,
    flags: &RunFlags,
    g: &crate::config::GridConfig,
    dmg: &crate::config::DamageSection,
    scfg: &SolverConfig,
    study_cfg: &DamageStudyConfig,
    seed: u64,
) -> Result<MemberOutcome, RunError> {
    let dir = flags.out.join(format!("member_{seed}"));
    std::fs::create_dir_all(&dir).map_err(io_err)?;
    let (mut cell, ms) = build_damage_cell(g, dmg, seed).map_err(RunError::Config)?;
    write_json(&dir.join("microstructure.json"), &ms)?;

    // Per-pixel phase map replicated onto quadrature points for dumping.
    let grid = cell.grid();
    let mut phase_field = QPField::zeros(grid, homog::grid::TensorRank::Scalar);
    for pix in 0..grid.n_pixels() {
        for q in 0..grid.nq {
            phase_field.qp_mut(pix * grid.nq + q)[0] = cell.phase()[pix] as f64;
        }
    }
    hio::write_field_with_sidecar(&dir, "phase", &phase_field, "phase_id")
        .map_err(|e| RunError::Io(e.to_string()))?;

    let study = run_damage_study(&mut cell, scfg, study_cfg)
        .map_err(|e| RunError::Internal(e.to_string()))?;
    hio::write_degradation_csv(&dir.join("degradation.csv"), &study.rows)
        .map_err(|e| RunError::Io(e.to_string()))?;
    let damage = cell.damage_field();
    hio::write_field_with_sidecar(&dir, "damage", &damage, "dimensionless")
        .map_err(|e| RunError::Io(e.to_string()))?;
    hio::write_field_with_sidecar(&dir, "kappa", &cell.kappa_field(), "dimensionless")
        .map_err(|e| RunError::Io(e.to_string()))?;
    if dmg.write_vtk {
        hio::write_vtk_scalar(&dir.join("damage.vtk"), &damage, "damage")
            .map_err(|e| RunError::Io(e.to_string()))?;
    }
    let _ = cfg;
    write_json(&dir.join("report.json"), &study)?;
    Ok(MemberOutcome {
        seed,
        rows: study.rows.clone(),
        diverged: study.diverged,
    })
}
