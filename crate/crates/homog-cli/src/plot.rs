//! Deterministic SVG plot emission from a completed run directory. The
//! experiment type is read from the manifest; missing inputs are reported
//! by name.

use std::path::Path;

use crate::config::Experiment;
use crate::runner::{alpha_tag, RunError};
use crate::svg::{Band, Chart, Series, PALETTE};

fn read_csv_columns(path: &Path, want: &[&str]) -> Result<Vec<Vec<String>>, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| RunError::Io(format!("{}: empty file", path.display())))?
        .split(',')
        .collect();
    let idx: Vec<usize> = want
        .iter()
        .map(|w| {
            header
                .iter()
                .position(|h| h == w)
                .ok_or_else(|| RunError::Io(format!("{}: missing column {w}", path.display())))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        rows.push(idx.iter().map(|i| fields[*i].to_string()).collect());
    }
    Ok(rows)
}

fn col_f64(rows: &[Vec<String>], j: usize) -> Vec<f64> {
    rows.iter()
        .map(|r| r[j].parse().unwrap_or(f64::NAN))
        .collect()
}

/// Emits the plots for a run directory; returns the written file names.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<String>, RunError> {
    let manifest_path = run_dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(RunError::Io(format!(
            "missing inputs in {}: manifest.json (is this a completed run directory?)",
            run_dir.display()
        )));
    }
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path).map_err(|e| RunError::Io(e.to_string()))?,
    )
    .map_err(|e| RunError::Io(format!("manifest.json: {e}")))?;
    let experiment: Experiment = serde_json::from_value(manifest["experiment"].clone())
        .map_err(|e| RunError::Io(format!("manifest.json experiment field: {e}")))?;

    match experiment {
        Experiment::Spring1d => plot_spring(run_dir),
        Experiment::Eshelby => plot_eshelby(run_dir),
        Experiment::DamageRve => plot_damage(run_dir),
        Experiment::ProjectorCheck => {
            Err(RunError::Io("projector_check runs produce no plots".into()))
        }
    }
}

fn plot_spring(dir: &Path) -> Result<Vec<String>, RunError> {
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("spring_report.json"))
            .map_err(|_| RunError::Io("missing inputs: spring_report.json".into()))?,
    )
    .map_err(|e| RunError::Io(e.to_string()))?;
    let alphas: Vec<f64> = report
        .as_array()
        .map(|arr| arr.iter().filter_map(|a| a["alpha"].as_f64()).collect())
        .unwrap_or_default();
    if alphas.is_empty() {
        return Err(RunError::Io("spring_report.json lists no alphas".into()));
    }

    let mut written = Vec::new();
    for alpha in alphas {
        let tag = alpha_tag(alpha);
        let landscape = read_csv_columns(
            &dir.join(format!("landscape_alpha_{tag}.csv")),
            &["x0", "w"],
        )?;
        let mut series = vec![Series {
            label: "energy landscape".into(),
            points: col_f64(&landscape, 0)
                .into_iter()
                .zip(col_f64(&landscape, 1))
                .collect(),
            color: "#555555",
            width: 1.5,
            marker: 0.0,
            dash: Some("5,3"),
        }];
        for (i, (mname, label)) in [
            ("newton_cg", "Newton-CG"),
            ("standard_tr", "standard TR"),
            ("modified_tr", "modified TR"),
        ]
        .iter()
        .enumerate()
        {
            let rows = read_csv_columns(
                &dir.join(format!("trajectory_{mname}_alpha_{tag}.csv")),
                &["x0", "w"],
            )?;
            series.push(Series {
                label: (*label).into(),
                points: col_f64(&rows, 0)
                    .into_iter()
                    .zip(col_f64(&rows, 1))
                    .collect(),
                color: PALETTE[i],
                width: 1.0,
                marker: 4.0 - i as f64,
                dash: None,
            });
        }
        let chart = Chart {
            title: format!("spring ring energy, alpha = {alpha}"),
            x_label: "x0 (damage spring stretch)".into(),
            y_label: "energy".into(),
            series,
            band: None,
        };
        let name = format!("spring_alpha_{tag}.svg");
        std::fs::write(dir.join(&name), chart.render()).map_err(|e| RunError::Io(e.to_string()))?;
        written.push(name);
    }
    Ok(written)
}

fn plot_eshelby(dir: &Path) -> Result<Vec<String>, RunError> {
    let rows = read_csv_columns(
        &dir.join("cuts.csv"),
        &["x", "cut", "eps_xy_newton_cg", "eps_xy_trust_region"],
    )?;
    let mut series = Vec::new();
    for (i, cut) in ["center", "minus_r2", "plus_r2"].iter().enumerate() {
        let pts_tr: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r[1] == *cut)
            .map(|r| {
                (
                    r[0].parse().unwrap_or(f64::NAN),
                    r[3].parse().unwrap_or(f64::NAN),
                )
            })
            .collect();
        let pts_ncg: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r[1] == *cut)
            .map(|r| {
                (
                    r[0].parse().unwrap_or(f64::NAN),
                    r[2].parse().unwrap_or(f64::NAN),
                )
            })
            .collect();
        series.push(Series {
            label: format!("TR, {cut}"),
            points: pts_tr,
            color: PALETTE[i],
            width: 1.6,
            marker: 0.0,
            dash: None,
        });
        series.push(Series {
            label: format!("Newton-CG, {cut}"),
            points: pts_ncg,
            color: PALETTE[i + 3],
            width: 1.0,
            marker: 0.0,
            dash: Some("4,3"),
        });
    }
    let chart = Chart {
        title: "shear strain along inclusion cuts".into(),
        x_label: "x".into(),
        y_label: "eps_xy".into(),
        series,
        band: None,
    };
    std::fs::write(dir.join("cuts.svg"), chart.render())
        .map_err(|e| RunError::Io(e.to_string()))?;
    Ok(vec!["cuts.svg".into()])
}

fn plot_damage(dir: &Path) -> Result<Vec<String>, RunError> {
    let mut written = Vec::new();
    let mut member_curves: Vec<(u64, Vec<(f64, f64)>)> = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| RunError::Io(e.to_string()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("member_"))
        .collect();
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name().to_string_lossy().into_owned();
        let seed: u64 = name.trim_start_matches("member_").parse().unwrap_or(0);
        let rows = read_csv_columns(
            &entry.path().join("degradation.csv"),
            &["sum_eigenstrain", "stiffness_ratio"],
        )?;
        member_curves.push((
            seed,
            col_f64(&rows, 0)
                .into_iter()
                .zip(col_f64(&rows, 1))
                .collect(),
        ));
    }
    if member_curves.is_empty() {
        return Err(RunError::Io(
            "missing inputs: member_<seed>/degradation.csv".into(),
        ));
    }
    member_curves.sort_by_key(|(s, _)| *s);

    let mut series = Vec::new();
    for (i, (seed, pts)) in member_curves.iter().enumerate() {
        series.push(Series {
            label: format!("seed {seed}"),
            points: pts.clone(),
            color: PALETTE[i % PALETTE.len()],
            width: 1.3,
            marker: 2.0,
            dash: None,
        });
    }
    let band = if member_curves.len() > 1 {
        let n = member_curves.iter().map(|(_, p)| p.len()).min().unwrap();
        let x: Vec<f64> = member_curves[0].1[..n].iter().map(|p| p.0).collect();
        let lo: Vec<f64> = (0..n)
            .map(|i| {
                member_curves
                    .iter()
                    .map(|(_, p)| p[i].1)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let hi: Vec<f64> = (0..n)
            .map(|i| {
                member_curves
                    .iter()
                    .map(|(_, p)| p[i].1)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let mean: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                (
                    x[i],
                    member_curves.iter().map(|(_, p)| p[i].1).sum::<f64>()
                        / member_curves.len() as f64,
                )
            })
            .collect();
        series.push(Series {
            label: "ensemble mean".into(),
            points: mean,
            color: "#000000",
            width: 2.2,
            marker: 0.0,
            dash: None,
        });
        Some(Band {
            x,
            lo,
            hi,
            color: "#9ecae1",
            opacity: 0.5,
        })
    } else {
        None
    };

    let chart = Chart {
        title: "effective stiffness degradation".into(),
        x_label: "accumulated gel eigenstrain".into(),
        y_label: "|C| / |C0|".into(),
        series,
        band,
    };
    std::fs::write(dir.join("stiffness_ratio.svg"), chart.render())
        .map_err(|e| RunError::Io(e.to_string()))?;
    written.push("stiffness_ratio.svg".into());
    Ok(written)
}
