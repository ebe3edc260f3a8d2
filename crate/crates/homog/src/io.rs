//! File outputs: NPY v1.0 field dumps with JSON sidecars, legacy VTK
//! STRUCTURED_POINTS for visualization, and the degradation-curve CSV.
//!
//! All text outputs format floats with Rust's shortest-round-trip `Display`,
//! so identical inputs produce byte-identical files.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{HomogError, Result};
use crate::grid::{QPField, TensorRank};
use crate::study::DegradationRow;

/// Writes a field as NPY v1.0, little-endian float64, C order, shape
/// `(ny, nx, nq, ncomp)`.
pub fn write_npy(path: &Path, field: &QPField) -> Result<()> {
    let g = field.shape();
    let dict = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}, {}, {}), }}",
        g.ny,
        g.nx,
        g.nq,
        field.ncomp()
    );
    // Header (magic + version + length field + dict + newline) padded with
    // spaces to a multiple of 64 bytes.
    let base = 10 + dict.len() + 1;
    let padded = base.div_ceil(64) * 64;
    let pad = padded - base;
    let header_len = (dict.len() + pad + 1) as u16;

    let mut buf = Vec::with_capacity(padded + field.data().len() * 8);
    buf.extend_from_slice(b"\x93NUMPY");
    buf.push(1);
    buf.push(0);
    buf.extend_from_slice(&header_len.to_le_bytes());
    buf.extend_from_slice(dict.as_bytes());
    buf.extend(std::iter::repeat_n(b' ', pad));
    buf.push(b'\n');
    for v in field.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Minimal NPY v1.0 reader for round-trip checks: returns the shape tuple
/// and the raw values.
pub fn read_npy(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic[..6] != b"\x93NUMPY" {
        return Err(HomogError::Grid("not an NPY file".into()));
    }
    let mut len_bytes = [0u8; 2];
    f.read_exact(&mut len_bytes)?;
    let header_len = u16::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    f.read_exact(&mut header)?;
    let header = String::from_utf8_lossy(&header).to_string();
    if !header.contains("'<f8'") || header.contains("True") {
        return Err(HomogError::Grid(format!(
            "unsupported NPY header: {header}"
        )));
    }
    let shape: Vec<usize> = header
        .split('(')
        .nth(1)
        .and_then(|s| s.split(')').next())
        .map(|s| {
            s.split(',')
                .filter_map(|t| t.trim().parse::<usize>().ok())
                .collect()
        })
        .unwrap_or_default();
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    let vals = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((shape, vals))
}

#[derive(Serialize)]
struct Sidecar<'a> {
    grid: crate::grid::GridShape,
    rank: TensorRank,
    components: usize,
    units: &'a str,
}

/// `name.npy` plus `name.json` with grid, rank, component count and units.
pub fn write_field_with_sidecar(
    dir: &Path,
    name: &str,
    field: &QPField,
    units: &str,
) -> Result<()> {
    write_npy(&dir.join(format!("{name}.npy")), field)?;
    let sidecar = Sidecar {
        grid: field.shape(),
        rank: field.rank(),
        components: field.ncomp(),
        units,
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| HomogError::Grid(format!("sidecar serialization: {e}")))?;
    std::fs::write(dir.join(format!("{name}.json")), json)?;
    Ok(())
}

/// Legacy ASCII VTK STRUCTURED_POINTS of a scalar field (quadrature points
/// of each pixel averaged).
pub fn write_vtk_scalar(path: &Path, field: &QPField, name: &str) -> Result<()> {
    if field.rank() != TensorRank::Scalar {
        return Err(HomogError::ShapeMismatch(
            "VTK writer expects a scalar field".into(),
        ));
    }
    let g = field.shape();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str(&format!("{name}\n"));
    out.push_str("ASCII\nDATASET STRUCTURED_POINTS\n");
    out.push_str(&format!("DIMENSIONS {} {} 1\n", g.nx, g.ny));
    out.push_str("ORIGIN 0 0 0\n");
    out.push_str(&format!("SPACING {} {} 1\n", g.hx(), g.hy()));
    out.push_str(&format!("POINT_DATA {}\n", g.n_pixels()));
    out.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
    for pix in 0..g.n_pixels() {
        let mut v = 0.0;
        for q in 0..g.nq {
            v += field.qp(pix * g.nq + q)[0];
        }
        out.push_str(&format!("{}\n", v / g.nq as f64));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub const DEGRADATION_HEADER: &str =
    "step,sum_eigenstrain,stiffness_ratio,damaged_qp_count,newton_iters,cg_iters";

pub fn degradation_csv(rows: &[DegradationRow]) -> String {
    let mut out = String::from(DEGRADATION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step,
            r.sum_eigenstrain,
            r.stiffness_ratio,
            r.damaged_qp_count,
            r.newton_iters,
            r.cg_iters
        ));
    }
    out
}

pub fn write_degradation_csv(path: &Path, rows: &[DegradationRow]) -> Result<()> {
    std::fs::write(path, degradation_csv(rows))?;
    Ok(())
}
