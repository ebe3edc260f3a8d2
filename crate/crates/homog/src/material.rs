//! Constitutive evaluation at quadrature points: plane-strain linear
//! elasticity and a bilinear tension-only scalar damage law with
//! masking-matrix tangent and crack-band regularization.
//!
//! The damage measure is the Frobenius norm of the tensile part of the
//! strain, `κ = ‖M ε M‖` with `M = Σ H(ε_i) q_i ⊗ q_i`. Working through the
//! masking matrix keeps the tangent free of the eigenvector-derivative
//! singularity at degenerate eigenvalues. Damage follows the history maximum
//! of κ and unloads along the secant `(1-D)·C`.

use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};
use crate::grid::{eig_sym2, isotropic_stiffness, mandel_matvec, SQRT2};

/// Residual stiffness floor: D is clamped at `1 - D_FLOOR` so fully cracked
/// pixels keep a bounded tangent and the Krylov system stays well posed.
pub const D_FLOOR: f64 = 1e-9;

/// Plane-strain isotropic linear elasticity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearElastic {
    pub e: f64,
    pub nu: f64,
}

impl LinearElastic {
    pub fn new(e: f64, nu: f64) -> Result<Self> {
        check_elastic(e, nu)?;
        Ok(Self { e, nu })
    }

    pub fn stiffness(&self) -> [f64; 9] {
        isotropic_stiffness(self.e, self.nu)
    }
}

fn check_elastic(e: f64, nu: f64) -> Result<()> {
    if !(e > 0.0) {
        return Err(HomogError::Material(format!(
            "Young modulus must be positive, got {e}"
        )));
    }
    if !(-1.0 < nu && nu < 0.5) {
        return Err(HomogError::Material(format!(
            "Poisson ratio must be in (-1, 0.5), got {nu}"
        )));
    }
    Ok(())
}

/// Bilinear tension-only scalar damage material.
///
/// `alpha` is the relative slope of the softening branch (negative for
/// softening): past the peak the uniaxial measure response follows
/// `σ(κ) = E0·(κ0 + α·(κ - κ0))`, reaching zero at
/// `κ_u = κ0·(1 - 1/α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilinearDamage {
    pub e0: f64,
    pub nu: f64,
    /// Damage threshold strain measure.
    pub kappa0: f64,
    /// Relative softening slope, < 0 for softening.
    pub alpha: f64,
    /// Mode-I fracture energy (informative once regularized).
    pub gc: f64,
    /// Tensile strength at the bilinear peak.
    pub ft0: f64,
}

impl BilinearDamage {
    /// Constructs the law from a threshold and softening slope directly.
    pub fn from_softening(e0: f64, nu: f64, kappa0: f64, alpha: f64) -> Result<Self> {
        check_elastic(e0, nu)?;
        if !(kappa0 > 0.0) {
            return Err(HomogError::Material(format!(
                "kappa0 must be positive, got {kappa0}"
            )));
        }
        if alpha >= 0.0 {
            return Err(HomogError::Material(format!(
                "softening slope must be negative, got {alpha}"
            )));
        }
        Ok(Self {
            e0,
            nu,
            kappa0,
            alpha,
            gc: f64::NAN,
            ft0: e0 * kappa0,
        })
    }

    /// Crack-band regularized law: the softening slope is chosen so the
    /// energy dissipated over the full softening branch of one element of
    /// size `h` equals the fracture energy `gc`.
    pub fn regularized(e0: f64, nu: f64, ft0: f64, gc: f64, h: f64) -> Result<Self> {
        let alpha = regularize_softening(gc, ft0, e0, h)?;
        let kappa0 = ft0 / e0;
        check_elastic(e0, nu)?;
        Ok(Self {
            e0,
            nu,
            kappa0,
            alpha,
            gc,
            ft0,
        })
    }

    pub fn stiffness(&self) -> [f64; 9] {
        isotropic_stiffness(self.e0, self.nu)
    }

    /// Measure at which the softening branch reaches zero stress.
    pub fn ultimate_kappa(&self) -> f64 {
        self.kappa0 * (1.0 - 1.0 / self.alpha)
    }

    /// Damage as a function of the history measure, clamped to
    /// `[0, 1 - D_FLOOR]`.
    pub fn damage_at(&self, kappa: f64) -> f64 {
        if kappa <= self.kappa0 {
            0.0
        } else {
            let d = (kappa - self.kappa0) * (1.0 - self.alpha) / kappa;
            d.min(1.0 - D_FLOOR)
        }
    }

    /// dD/dκ on the (unclamped) softening branch.
    fn damage_slope(&self, kappa: f64) -> f64 {
        (1.0 - self.alpha) * self.kappa0 / (kappa * kappa)
    }
}

/// Chooses the softening slope α so that the dissipated energy density of
/// the softening triangle times the element size `h` equals `gc`:
/// `½·ft0·(κ_u - κ0) = gc/h` with `κ0 = ft0/e0`.
///
/// Fails with a snap-back error when the element is too large
/// (`h > 2·gc·e0/ft0²` makes the required slope steeper than the elastic
/// one), demanding a finer grid.
pub fn regularize_softening(gc: f64, ft0: f64, e0: f64, h: f64) -> Result<f64> {
    if !(gc > 0.0 && ft0 > 0.0 && e0 > 0.0 && h > 0.0) {
        return Err(HomogError::Material(
            "regularization needs positive gc, ft0, e0, h".into(),
        ));
    }
    let kappa0 = ft0 / e0;
    let kappa_u = kappa0 + 2.0 * gc / (ft0 * h);
    if kappa_u - kappa0 < kappa0 {
        return Err(HomogError::Material(format!(
            "snap-back: element size h = {h:.3e} exceeds 2·gc·e0/ft0² = {:.3e}; refine the grid",
            2.0 * gc * e0 / (ft0 * ft0)
        )));
    }
    Ok(-kappa0 / (kappa_u - kappa0))
}

/// A phase's constitutive law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Material {
    Elastic(LinearElastic),
    Damage(BilinearDamage),
}

impl Material {
    pub fn is_damage(&self) -> bool {
        matches!(self, Material::Damage(_))
    }
}

/// Tensile part of the strain through the masking matrix and its norm:
/// returns `(ε_t, κ)` with `ε_t = M ε M` in Mandel components.
pub fn masked_tensile(eps: &[f64; 3]) -> ([f64; 3], f64) {
    let (l1, l2, (c, s)) = eig_sym2(eps);
    // M ε M = Σ H(λ_i) λ_i q_i ⊗ q_i ; cross terms vanish by orthogonality.
    let mut t = [0.0; 3];
    if l1 > 0.0 {
        t[0] += l1 * c * c;
        t[1] += l1 * s * s;
        t[2] += l1 * SQRT2 * c * s;
    }
    if l2 > 0.0 {
        t[0] += l2 * s * s;
        t[1] += l2 * c * c;
        t[2] -= l2 * SQRT2 * c * s;
    }
    let kappa = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
    (t, kappa)
}

/// Damage control measure `κ = ‖M ε M‖`.
pub fn damage_measure(eps: &[f64; 3]) -> f64 {
    masked_tensile(eps).1
}

/// Stress, consistent tangent and trial history of one quadrature point.
#[derive(Debug, Clone, Copy)]
pub struct PointResponse {
    pub sigma: [f64; 3],
    pub tangent: [f64; 9],
    pub kappa_trial: f64,
}

/// Evaluates one quadrature point at `eps` (Mandel) against the committed
/// history measure. Never mutates state; the caller stores `kappa_trial`
/// and commits it on step acceptance.
pub fn evaluate(material: &Material, eps: &[f64; 3], kappa_committed: f64) -> PointResponse {
    match material {
        Material::Elastic(m) => {
            let c = m.stiffness();
            PointResponse {
                sigma: mandel_matvec(&c, eps),
                tangent: c,
                kappa_trial: kappa_committed,
            }
        }
        Material::Damage(m) => {
            let c = m.stiffness();
            let (eps_t, measure) = masked_tensile(eps);
            let kappa_trial = kappa_committed.max(measure);
            let d_raw = if kappa_trial <= m.kappa0 {
                0.0
            } else {
                (kappa_trial - m.kappa0) * (1.0 - m.alpha) / kappa_trial
            };
            let clamped = d_raw > 1.0 - D_FLOOR;
            let d = if clamped { 1.0 - D_FLOOR } else { d_raw };
            let ce = mandel_matvec(&c, eps);
            let sigma = [(1.0 - d) * ce[0], (1.0 - d) * ce[1], (1.0 - d) * ce[2]];

            // Softening is active only when the measure is growing past both
            // the committed history and the threshold.
            let active =
                measure > kappa_committed && kappa_trial > m.kappa0 && !clamped && measure > 0.0;
            let mut tangent = [0.0; 9];
            for (i, t) in tangent.iter_mut().enumerate() {
                *t = (1.0 - d) * c[i];
            }
            if active {
                // B = (1-D)C - (dD/dκ) (C:ε) ⊗ (∂κ/∂ε), ∂κ/∂ε = M ε M / κ.
                let slope = m.damage_slope(kappa_trial);
                for i in 0..3 {
                    for j in 0..3 {
                        tangent[i * 3 + j] -= slope * ce[i] * eps_t[j] / kappa_trial;
                    }
                }
            }
            PointResponse {
                sigma,
                tangent,
                kappa_trial,
            }
        }
    }
}

/// Per-quadrature-point damage history with committed vs. trial semantics.
#[derive(Debug, Clone)]
pub struct DamageState {
    pub kappa_committed: Vec<f64>,
    pub kappa_trial: Vec<f64>,
}

impl DamageState {
    pub fn new(n_qp: usize) -> Self {
        Self {
            kappa_committed: vec![0.0; n_qp],
            kappa_trial: vec![0.0; n_qp],
        }
    }

    /// Folds the trial history into the committed one; history never
    /// decreases.
    pub fn commit(&mut self) {
        for (c, t) in self.kappa_committed.iter_mut().zip(&self.kappa_trial) {
            if *t > *c {
                *c = *t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::mandel_from_tensor;
    use approx::assert_relative_eq;

    #[test]
    fn measure_is_zero_under_biaxial_compression() {
        assert_eq!(damage_measure(&[-0.3, -0.1, 0.0]), 0.0);
    }

    #[test]
    fn measure_keeps_only_the_tensile_eigenvalue() {
        // diag(0.2, -0.3): positive part is diag(0.2, 0), norm 0.2.
        assert_relative_eq!(damage_measure(&[0.2, -0.3, 0.0]), 0.2);
    }

    #[test]
    fn measure_of_spherical_tension() {
        let g = 0.17;
        assert_relative_eq!(
            damage_measure(&[g, g, 0.0]),
            g * SQRT2,
            max_relative = 1e-15
        );
    }

    #[test]
    fn measure_finite_at_degenerate_eigenvalues() {
        let eps = [0.1, 0.1 + 1e-12, 1e-13];
        let (t, k) = masked_tensile(&eps);
        assert!(k.is_finite());
        assert!(t.iter().all(|v| v.is_finite()));
    }

    fn softening_material() -> BilinearDamage {
        BilinearDamage::from_softening(1.0, 0.3, 0.1, -0.5).unwrap()
    }

    #[test]
    fn elastic_below_threshold() {
        let m = Material::Damage(softening_material());
        let eps = [0.05, 0.0, 0.0];
        let r = evaluate(&m, &eps, 0.0);
        let c = softening_material().stiffness();
        let ce = mandel_matvec(&c, &eps);
        for i in 0..3 {
            assert_relative_eq!(r.sigma[i], ce[i]);
            for j in 0..3 {
                assert_relative_eq!(r.tangent[i * 3 + j], c[i * 3 + j]);
            }
        }
    }

    #[test]
    fn damage_value_is_stress_consistent_on_the_softening_branch() {
        // Oracle: the uniaxial-measure softening envelope is
        // σ(κ) = E0 (κ0 + α (κ - κ0)), so D = 1 - σ/(E0 κ).
        let m = softening_material(); // κ0 = 0.1, α = −0.5
        let kappa = 0.2;
        let sigma_env = m.e0 * (m.kappa0 + m.alpha * (kappa - m.kappa0));
        let d_expect = 1.0 - sigma_env / (m.e0 * kappa);
        assert_relative_eq!(d_expect, 0.75);
        assert_relative_eq!(m.damage_at(kappa), d_expect, max_relative = 1e-14);
        // And the ultimate measure is where the envelope hits zero.
        assert_relative_eq!(m.ultimate_kappa(), 0.3, max_relative = 1e-14);
        assert_relative_eq!(m.damage_at(m.ultimate_kappa()), 1.0 - D_FLOOR);
    }

    #[test]
    fn unloading_follows_the_secant() {
        let mat = Material::Damage(softening_material());
        // Load to κ = 0.2 (uniaxial x tension), commit, then evaluate at a
        // smaller strain: stress sits on the secant (1 - D)·C, tangent too.
        let kappa_hist = 0.2;
        let d = softening_material().damage_at(kappa_hist);
        assert_relative_eq!(d, 0.75);
        let eps = [0.1, -0.02, 0.01];
        let r = evaluate(&mat, &eps, kappa_hist);
        let c = softening_material().stiffness();
        let ce = mandel_matvec(&c, &eps);
        for i in 0..3 {
            assert_relative_eq!(r.sigma[i], (1.0 - d) * ce[i], max_relative = 1e-14);
            for j in 0..3 {
                assert_relative_eq!(
                    r.tangent[i * 3 + j],
                    (1.0 - d) * c[i * 3 + j],
                    max_relative = 1e-14
                );
            }
        }
        assert_relative_eq!(r.kappa_trial, kappa_hist);
    }

    fn fd_tangent(mat: &Material, eps: &[f64; 3], kappa_committed: f64, h: f64) -> [f64; 9] {
        let mut fd = [0.0; 9];
        for j in 0..3 {
            let mut ep = *eps;
            let mut em = *eps;
            ep[j] += h;
            em[j] -= h;
            let rp = evaluate(mat, &ep, kappa_committed);
            let rm = evaluate(mat, &em, kappa_committed);
            for i in 0..3 {
                fd[i * 3 + j] = (rp.sigma[i] - rm.sigma[i]) / (2.0 * h);
            }
        }
        fd
    }

    #[test]
    fn tangent_matches_central_differences_on_the_softening_branch() {
        let mat = Material::Damage(softening_material());
        // Generic softening point: mixed tension/compression, growing measure.
        let eps = mandel_from_tensor(0.17, -0.06, 0.04);
        let r = evaluate(&mat, &eps, 0.11);
        assert!(damage_measure(&eps) > 0.11);
        let fd = fd_tangent(&mat, &eps, 0.11, 1e-7);
        let scale = r.tangent.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for i in 0..9 {
            assert!(
                (r.tangent[i] - fd[i]).abs() <= 1e-6 * scale,
                "component {i}: {} vs {}",
                r.tangent[i],
                fd[i]
            );
        }
    }

    #[test]
    fn tangent_finite_near_degenerate_eigenvalues() {
        let mat = Material::Damage(softening_material());
        let eps = [0.2, 0.2 + 1e-12, 0.0];
        let r = evaluate(&mat, &eps, 0.15);
        assert!(r.sigma.iter().all(|v| v.is_finite()));
        assert!(r.tangent.iter().all(|v| v.is_finite()));
        // FD cross-check still holds at the near-degenerate point.
        let fd = fd_tangent(&mat, &eps, 0.15, 1e-7);
        let scale = r.tangent.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for i in 0..9 {
            assert!((r.tangent[i] - fd[i]).abs() <= 1e-5 * scale);
        }
    }

    #[test]
    fn regularization_matches_the_cement_paste_numbers() {
        // Cement paste: gc = 60 J/m², ft0 = 3 MPa, e0 = 12 GPa, h = 7.82e-4 m.
        let alpha = regularize_softening(60.0, 3e6, 12e9, 7.82e-4).unwrap();
        let kappa0: f64 = 3e6 / 12e9;
        let kappa_u = kappa0 + 2.0 * 60.0 / (3e6 * 7.82e-4);
        assert_relative_eq!(kappa_u, 5.1401e-2, max_relative = 1e-3);
        assert_relative_eq!(alpha, -kappa0 / (kappa_u - kappa0), max_relative = 1e-14);
        assert_relative_eq!(alpha, -4.8875e-3, max_relative = 1e-3);
    }

    #[test]
    fn regularized_softening_flattens_as_h_shrinks() {
        let mut last = -1.0;
        for h in [1e-2, 1e-3, 1e-4, 1e-5] {
            let alpha = regularize_softening(60.0, 3e6, 12e9, h).unwrap();
            assert!(alpha < 0.0);
            assert!(alpha > last, "alpha should rise toward 0- as h shrinks");
            last = alpha;
        }
        // α ≈ −κ0·ft0·h/(2·gc) in the limit.
        let h = 1e-6;
        let alpha = regularize_softening(60.0, 3e6, 12e9, h).unwrap();
        let kappa0 = 3e6 / 12e9;
        assert_relative_eq!(alpha, -kappa0 * 3e6 * h / (2.0 * 60.0), max_relative = 1e-3);
    }

    #[test]
    fn snap_back_rejected() {
        let h_crit = 2.0 * 60.0 * 12e9 / (3e6f64 * 3e6);
        assert!(regularize_softening(60.0, 3e6, 12e9, 1.01 * h_crit).is_err());
        assert!(regularize_softening(60.0, 3e6, 12e9, 0.99 * h_crit).is_ok());
    }

    #[test]
    fn dissipated_energy_matches_gc_by_quadrature() {
        // Trapezoid-integration oracle: h·∫ σ(κ) dκ over the softening branch
        // must equal gc. σ(κ) on the envelope is the monotone loading stress.
        let (gc, ft0, e0, h) = (60.0, 3e6, 12e9, 7.82e-4);
        let m = BilinearDamage::regularized(e0, 0.3, ft0, gc, h).unwrap();
        let (k0, ku) = (m.kappa0, m.ultimate_kappa());
        let n = 200_000;
        let dk = (ku - k0) / n as f64;
        let env = |k: f64| e0 * (k0 + m.alpha * (k - k0));
        let mut area = 0.0;
        for i in 0..n {
            let a = k0 + i as f64 * dk;
            area += 0.5 * (env(a) + env(a + dk)) * dk;
        }
        assert_relative_eq!(area * h, gc, max_relative = 1e-10);
    }

    #[test]
    fn commit_semantics() {
        let mut state = DamageState::new(3);
        // No trial evaluation since last commit: no-op.
        state.commit();
        assert_eq!(state.kappa_committed, vec![0.0; 3]);
        // Trial below committed leaves history unchanged.
        state.kappa_committed[1] = 0.3;
        state.kappa_trial[1] = 0.2;
        state.kappa_trial[2] = 0.5;
        state.commit();
        assert_eq!(state.kappa_committed, vec![0.0, 0.3, 0.5]);
    }

    #[test]
    fn load_unload_reload_follows_the_secant() {
        // Scalar 1-QP simulation oracle: uniaxial-x strain driven through a
        // load–unload–reload cycle; reload follows the secant until the
        // committed history is exceeded, then rejoins the envelope.
        let mat = Material::Damage(softening_material());
        let m = softening_material();
        let mut committed = 0.0f64;
        let path: Vec<f64> = (1..=40)
            .map(|i| 0.005 * i as f64) // load to 0.2
            .chain((0..20).map(|i| 0.2 - 0.009 * i as f64)) // unload to ~0.03
            .chain((0..40).map(|i| 0.029 + 0.006 * i as f64)) // reload past 0.2
            .collect();
        let mut last_kappa = 0.0;
        for e in path {
            let eps = [e, 0.0, 0.0];
            let r = evaluate(&mat, &eps, committed);
            let measure = damage_measure(&eps);
            let kappa = committed.max(measure);
            let d = m.damage_at(kappa);
            // Secant stress at all times.
            let ce = mandel_matvec(&m.stiffness(), &eps);
            assert_relative_eq!(r.sigma[0], (1.0 - d) * ce[0], max_relative = 1e-12);
            // History is monotone.
            assert!(kappa >= last_kappa - 1e-15 || measure < committed);
            committed = committed.max(r.kappa_trial);
            last_kappa = kappa;
        }
        // Final committed history is the path maximum measure.
        let eps_max = [0.029 + 0.006 * 39.0, 0.0, 0.0];
        assert_relative_eq!(committed, damage_measure(&eps_max), max_relative = 1e-12);
    }

    #[test]
    fn stress_strain_product_nonnegative_under_proportional_tension() {
        let mat = Material::Damage(softening_material());
        let dir = [0.8, 0.3, 0.2];
        let mut committed = 0.0f64;
        for i in 1..200 {
            let t = 0.002 * i as f64;
            let eps = [t * dir[0], t * dir[1], t * dir[2]];
            let r = evaluate(&mat, &eps, committed);
            let w: f64 = r.sigma.iter().zip(&eps).map(|(s, e)| s * e).sum();
            assert!(w >= 0.0);
            committed = committed.max(r.kappa_trial);
        }
    }

    #[test]
    fn damage_stays_in_unit_interval() {
        let m = softening_material();
        for i in 0..1000 {
            let kappa = 1e-3 * i as f64;
            let d = m.damage_at(kappa);
            assert!((0.0..=1.0).contains(&d));
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(LinearElastic::new(-1.0, 0.3).is_err());
        assert!(LinearElastic::new(1.0, 0.5).is_err());
        assert!(BilinearDamage::from_softening(1.0, 0.3, 0.1, 0.5).is_err());
        assert!(BilinearDamage::from_softening(1.0, 0.3, -0.1, -0.5).is_err());
    }
}
