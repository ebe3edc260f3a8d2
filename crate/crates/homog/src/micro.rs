//! Random periodic microstructure generation: elliptical aggregates with a
//! Fuller size distribution in a matrix, plus gel pockets placed strictly
//! inside aggregates.
//!
//! Geometry is generated in continuous space and rasterized separately, so
//! the same seed yields nominally identical microstructures on every grid
//! resolution. Gel pockets are squares of a fixed physical size snapped to
//! the pocket lattice; refining the grid by powers of two keeps both the
//! pocket area and its pixel footprint exactly nested.
//!
//! RNG streams (ChaCha12, seeded from the study seed): stream 1 draws
//! particle sizes, stream 2 placement (centers, orientations, aspect
//! ratios), stream 3 gel pockets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};
use crate::grid::GridShape;

pub const PHASE_MATRIX: u8 = 0;
pub const PHASE_AGGREGATE: u8 = 1;
pub const PHASE_GEL: u8 = 2;

/// Fuller (power-law) cumulative passing curve parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FullerParams {
    /// Power-law exponent (classical Fuller curve: 0.5).
    pub exponent: f64,
    pub d_min: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MicroParams {
    pub lx: f64,
    pub ly: f64,
    /// Target aggregate area fraction.
    pub aggregate_fraction: f64,
    pub fuller: FullerParams,
    /// Maximum ellipse aspect ratio (drawn uniformly in [1, aspect_max]).
    pub aspect_max: f64,
    /// Target gel area fraction of the whole cell.
    pub gel_area_fraction: f64,
    /// Physical edge length of one square gel pocket; must divide lx and ly.
    pub pocket_size: f64,
    /// Placement attempts per particle before it is skipped.
    pub placement_tries: usize,
}

impl MicroParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lx > 0.0 && self.ly > 0.0) {
            return Err(HomogError::Microstructure(
                "cell size must be positive".into(),
            ));
        }
        if !(0.0 < self.aggregate_fraction && self.aggregate_fraction < 1.0) {
            return Err(HomogError::Microstructure(
                "aggregate fraction must lie in (0, 1)".into(),
            ));
        }
        if !(self.gel_area_fraction >= 0.0 && self.gel_area_fraction < 1.0) {
            return Err(HomogError::Microstructure(
                "gel fraction must lie in [0, 1)".into(),
            ));
        }
        let f = &self.fuller;
        if !(f.exponent > 0.0 && 0.0 < f.d_min && f.d_min < f.d_max) {
            return Err(HomogError::Microstructure(
                "invalid Fuller parameters".into(),
            ));
        }
        if !(self.aspect_max >= 1.0) {
            return Err(HomogError::Microstructure("aspect_max must be >= 1".into()));
        }
        // Largest semi-axis must stay below a quarter cell so the periodic
        // overlap test only needs nearest images.
        let a_max = 0.5 * f.d_max * self.aspect_max.sqrt();
        if a_max >= 0.25 * self.lx.min(self.ly) {
            return Err(HomogError::Microstructure(format!(
                "d_max {:.3e} too large for the cell (max semi-axis {:.3e} >= quarter cell)",
                f.d_max, a_max
            )));
        }
        if self.gel_area_fraction > 0.0 {
            let nx = self.lx / self.pocket_size;
            let ny = self.ly / self.pocket_size;
            if (nx - nx.round()).abs() > 1e-9 || (ny - ny.round()).abs() > 1e-9 {
                return Err(HomogError::Microstructure(
                    "pocket_size must divide the cell edge lengths".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axes.
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl Ellipse {
    /// Periodic point membership (nearest-image wrap).
    pub fn contains(&self, x: f64, y: f64, lx: f64, ly: f64) -> bool {
        let dx = wrap(x - self.cx, lx);
        let dy = wrap(y - self.cy, ly);
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    fn boundary_point(&self, t: f64) -> (f64, f64) {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let u = self.a * t.cos();
        let v = self.b * t.sin();
        (self.cx + c * u - s * v, self.cy + s * u + c * v)
    }
}

#[inline]
fn wrap(d: f64, l: f64) -> f64 {
    let mut d = d % l;
    if d > 0.5 * l {
        d -= l;
    } else if d < -0.5 * l {
        d += l;
    }
    d
}

/// Continuous microstructure: ellipse list plus gel pocket centers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Microstructure {
    pub params: MicroParams,
    pub seed: u64,
    pub ellipses: Vec<Ellipse>,
    pub pockets: Vec<(f64, f64)>,
    /// Continuous aggregate area fraction actually placed.
    pub achieved_fraction: f64,
}

const BOUNDARY_SAMPLES: usize = 48;

fn overlaps(candidate: &Ellipse, placed: &[Ellipse], lx: f64, ly: f64) -> bool {
    for e in placed {
        // Quick reject by bounding circles.
        let dx = wrap(candidate.cx - e.cx, lx);
        let dy = wrap(candidate.cy - e.cy, ly);
        let dist2 = dx * dx + dy * dy;
        let rsum = candidate.a.max(candidate.b) + e.a.max(e.b);
        if dist2 > rsum * rsum {
            continue;
        }
        // Containment either way via centers.
        if e.contains(candidate.cx, candidate.cy, lx, ly) || candidate.contains(e.cx, e.cy, lx, ly)
        {
            return true;
        }
        // Boundary crossing.
        for i in 0..BOUNDARY_SAMPLES {
            let t = i as f64 * std::f64::consts::TAU / BOUNDARY_SAMPLES as f64;
            let (x, y) = candidate.boundary_point(t);
            if e.contains(x, y, lx, ly) {
                return true;
            }
        }
    }
    false
}

/// Inverse-CDF sample of the Fuller passing curve.
fn fuller_diameter(u: f64, f: &FullerParams) -> f64 {
    let lo = f.d_min.powf(f.exponent);
    let hi = f.d_max.powf(f.exponent);
    (u * (hi - lo) + lo).powf(1.0 / f.exponent)
}

/// Generates the continuous微 geometry: non-overlapping Fuller-sized
/// ellipses placed largest first, then gel pockets strictly inside
/// aggregates. Deterministic for a given seed.
pub fn generate(seed: u64, params: &MicroParams) -> Result<Microstructure> {
    params.validate()?;
    let cell_area = params.lx * params.ly;
    let target_area = params.aggregate_fraction * cell_area;

    // Draw particle sizes until their total area covers the target with a
    // margin, then place them in descending order.
    let mut size_rng = ChaCha12Rng::seed_from_u64(seed);
    size_rng.set_stream(1);
    let mut diameters = Vec::new();
    let mut drawn_area = 0.0;
    while drawn_area < 1.3 * target_area && diameters.len() < 100_000 {
        let d = fuller_diameter(size_rng.gen_range(0.0..1.0), &params.fuller);
        drawn_area += std::f64::consts::PI * (0.5 * d) * (0.5 * d);
        diameters.push(d);
    }
    diameters.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut place_rng = ChaCha12Rng::seed_from_u64(seed);
    place_rng.set_stream(2);
    let mut ellipses: Vec<Ellipse> = Vec::new();
    let mut placed_area = 0.0;
    for d in diameters {
        if placed_area >= target_area {
            break;
        }
        let r = 0.5 * d;
        let mut accepted = false;
        for _ in 0..params.placement_tries {
            let aspect = place_rng.gen_range(1.0..=params.aspect_max);
            let cand = Ellipse {
                cx: place_rng.gen_range(0.0..params.lx),
                cy: place_rng.gen_range(0.0..params.ly),
                a: r * aspect.sqrt(),
                b: r / aspect.sqrt(),
                theta: place_rng.gen_range(0.0..std::f64::consts::PI),
            };
            if !overlaps(&cand, &ellipses, params.lx, params.ly) {
                placed_area += std::f64::consts::PI * cand.a * cand.b;
                ellipses.push(cand);
                accepted = true;
                break;
            }
        }
        let _ = accepted;
    }
    let achieved_fraction = placed_area / cell_area;
    if achieved_fraction < params.aggregate_fraction - 0.02 {
        return Err(HomogError::Microstructure(format!(
            "placement budget exhausted at fraction {achieved_fraction:.3} (target {:.3})",
            params.aggregate_fraction
        )));
    }

    // Gel pockets on the pocket lattice, strictly inside aggregates: the
    // 3s×3s neighborhood of the pocket must sit inside one ellipse, so the
    // pocket touches no aggregate boundary pixel at any nested resolution.
    let mut pockets = Vec::new();
    if params.gel_area_fraction > 0.0 {
        let s = params.pocket_size;
        let n_pockets = (params.gel_area_fraction * cell_area / (s * s))
            .round()
            .max(0.0) as usize;
        let npx = (params.lx / s).round() as usize;
        let npy = (params.ly / s).round() as usize;
        let mut eligible = Vec::new();
        for j in 0..npy {
            for i in 0..npx {
                let cx = (i as f64 + 0.5) * s;
                let cy = (j as f64 + 0.5) * s;
                let inside_one = ellipses.iter().any(|e| {
                    let half = 1.5 * s;
                    [
                        (cx - half, cy - half),
                        (cx + half, cy - half),
                        (cx - half, cy + half),
                        (cx + half, cy + half),
                    ]
                    .iter()
                    .all(|(x, y)| e.contains(*x, *y, params.lx, params.ly))
                });
                if inside_one {
                    eligible.push((cx, cy));
                }
            }
        }
        let mut gel_rng = ChaCha12Rng::seed_from_u64(seed);
        gel_rng.set_stream(3);
        // Fisher-Yates shuffle, then greedy take with a 2s separation.
        for i in (1..eligible.len()).rev() {
            let j = gel_rng.gen_range(0..=i);
            eligible.swap(i, j);
        }
        for c in eligible {
            if pockets.len() >= n_pockets {
                break;
            }
            let far_enough = pockets.iter().all(|p: &(f64, f64)| {
                let dx = wrap(c.0 - p.0, params.lx);
                let dy = wrap(c.1 - p.1, params.ly);
                dx * dx + dy * dy >= (2.0 * s) * (2.0 * s)
            });
            if far_enough {
                pockets.push(c);
            }
        }
        if pockets.len() < n_pockets {
            return Err(HomogError::Microstructure(format!(
                "only {} of {} gel pockets fit strictly inside aggregates",
                pockets.len(),
                n_pockets
            )));
        }
    }

    Ok(Microstructure {
        params: *params,
        seed,
        ellipses,
        pockets,
        achieved_fraction,
    })
}

impl Microstructure {
    /// Rasterizes the continuous geometry onto a pixel grid: 0 matrix,
    /// 1 aggregate, 2 gel pocket.
    pub fn rasterize(&self, grid: GridShape) -> Result<Vec<u8>> {
        if (grid.lx - self.params.lx).abs() > 1e-12 * self.params.lx
            || (grid.ly - self.params.ly).abs() > 1e-12 * self.params.ly
        {
            return Err(HomogError::Microstructure(
                "grid cell size differs from the generated geometry".into(),
            ));
        }
        let mut phase = vec![PHASE_MATRIX; grid.n_pixels()];
        let s = self.params.pocket_size;
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let x = (ix as f64 + 0.5) * grid.hx();
                let y = (iy as f64 + 0.5) * grid.hy();
                let pix = grid.pixel(ix, iy);
                let in_pocket = self.pockets.iter().any(|(cx, cy)| {
                    let dx = wrap(x - cx, self.params.lx);
                    let dy = wrap(y - cy, self.params.ly);
                    (-0.5 * s..0.5 * s).contains(&dx) && (-0.5 * s..0.5 * s).contains(&dy)
                });
                if in_pocket {
                    phase[pix] = PHASE_GEL;
                } else if self
                    .ellipses
                    .iter()
                    .any(|e| e.contains(x, y, self.params.lx, self.params.ly))
                {
                    phase[pix] = PHASE_AGGREGATE;
                }
            }
        }
        Ok(phase)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> MicroParams {
        MicroParams {
            lx: 0.1,
            ly: 0.1,
            aggregate_fraction: 0.4,
            fuller: FullerParams {
                exponent: 0.5,
                d_min: 0.008,
                d_max: 0.03,
            },
            aspect_max: 2.0,
            gel_area_fraction: 0.01,
            pocket_size: 0.1 / 64.0,
            placement_tries: 3000,
        }
    }

    #[test]
    fn zero_gel_fraction_places_no_pockets() {
        let mut p = params();
        p.gel_area_fraction = 0.0;
        let m = generate(7, &p).unwrap();
        assert!(m.pockets.is_empty());
    }

    #[test]
    fn same_seed_reproduces_identical_phase_maps() {
        let p = params();
        let a = generate(42, &p).unwrap();
        let b = generate(42, &p).unwrap();
        assert_eq!(a.ellipses, b.ellipses);
        assert_eq!(a.pockets, b.pockets);
        let grid = GridShape::new(64, 64, 0.1, 0.1, 2).unwrap();
        assert_eq!(a.rasterize(grid).unwrap(), b.rasterize(grid).unwrap());
        let c = generate(43, &p).unwrap();
        assert_ne!(a.ellipses, c.ellipses);
    }

    #[test]
    fn achieved_fraction_close_to_target_on_128_grid() {
        let p = params();
        let m = generate(11, &p).unwrap();
        let grid = GridShape::new(128, 128, 0.1, 0.1, 2).unwrap();
        let phase = m.rasterize(grid).unwrap();
        let agg = phase
            .iter()
            .filter(|v| **v == PHASE_AGGREGATE || **v == PHASE_GEL)
            .count();
        let frac = agg as f64 / phase.len() as f64;
        assert!(
            (frac - p.aggregate_fraction).abs() <= 0.02,
            "pixel fraction {frac} vs target {}",
            p.aggregate_fraction
        );
    }

    #[test]
    fn gel_area_is_resolution_independent() {
        let p = params();
        let m = generate(3, &p).unwrap();
        let g64 = GridShape::new(64, 64, 0.1, 0.1, 2).unwrap();
        let g128 = GridShape::new(128, 128, 0.1, 0.1, 2).unwrap();
        let count = |grid: GridShape| {
            let phase = m.rasterize(grid).unwrap();
            phase.iter().filter(|v| **v == PHASE_GEL).count() as f64 * grid.hx() * grid.hy()
        };
        let a64 = count(g64);
        let a128 = count(g128);
        assert!(a64 > 0.0);
        assert!((a64 - a128).abs() < 1e-12);
        // And the pocket count matches the requested fraction:
        // round(0.01 · 0.01 / (0.1/64)²) = 41.
        assert_eq!(m.pockets.len(), 41);
    }

    #[test]
    fn gel_pixels_touch_no_matrix_at_nested_resolutions() {
        let p = params();
        let m = generate(3, &p).unwrap();
        for n in [64usize, 128] {
            let grid = GridShape::new(n, n, 0.1, 0.1, 2).unwrap();
            let phase = m.rasterize(grid).unwrap();
            for iy in 0..n {
                for ix in 0..n {
                    if phase[grid.pixel(ix, iy)] == PHASE_GEL {
                        for dy in [-1i64, 0, 1] {
                            for dx in [-1i64, 0, 1] {
                                let jx = ((ix as i64 + dx).rem_euclid(n as i64)) as usize;
                                let jy = ((iy as i64 + dy).rem_euclid(n as i64)) as usize;
                                assert_ne!(
                                    phase[grid.pixel(jx, jy)],
                                    PHASE_MATRIX,
                                    "gel pixel ({ix},{iy}) touches matrix at {n}²"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn ellipses_do_not_overlap_on_raster() {
        // Every aggregate pixel should be claimed by at most one ellipse,
        // up to the boundary-sampling tolerance of the overlap test; check
        // containment count at pixel centers.
        let p = params();
        let m = generate(19, &p).unwrap();
        let grid = GridShape::new(128, 128, 0.1, 0.1, 2).unwrap();
        let mut double_claimed = 0usize;
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let x = (ix as f64 + 0.5) * grid.hx();
                let y = (iy as f64 + 0.5) * grid.hy();
                let hits = m
                    .ellipses
                    .iter()
                    .filter(|e| e.contains(x, y, 0.1, 0.1))
                    .count();
                if hits > 1 {
                    double_claimed += 1;
                }
            }
        }
        assert!(
            double_claimed <= grid.n_pixels() / 500,
            "{double_claimed} pixels claimed twice"
        );
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = params();
        p.fuller.d_max = 0.06; // semi-axis beyond quarter cell
        assert!(generate(1, &p).is_err());
        let mut p = params();
        p.pocket_size = 0.013; // does not divide 0.1
        assert!(generate(1, &p).is_err());
    }

    #[test]
    fn exhausted_placement_budget_reports_achieved_fraction() {
        let mut p = params();
        p.aggregate_fraction = 0.8;
        p.placement_tries = 4;
        let err = generate(2, &p).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("fraction"), "{msg}");
    }

    #[test]
    fn unplaceable_gel_fraction_rejected() {
        let mut p = params();
        // Far more pockets than fit strictly inside the aggregates.
        p.gel_area_fraction = 0.3;
        let err = generate(2, &p).unwrap_err();
        assert!(format!("{err}").contains("gel"), "{err}");
    }
}
