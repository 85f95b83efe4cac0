//! Magnetic-field geometry from ODMR line pairs, the forward eigen-solver,
//! the second (azimuthal) angle, and the dipolar distance bound.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{minimize_residuals, FitOptions};

/// |γe|/2π in MHz/G.
pub const GAMMA_E_MHZ_PER_G: f64 = 2.8024;
/// γn/2π of ¹⁴N in MHz/G.
pub const GAMMA_N14_MHZ_PER_G: f64 = 3.077e-4;
/// Angle between two NV axes in the diamond lattice (degrees).
pub const BETA_TETRAHEDRAL: f64 = 70.53;

/// Field magnitude and orientation as seen by the two NVs of a pair.
///
/// The lab frame is NV2's frame; NV1's axis lies in the lab x-z plane at
/// angle `beta` from z. `b_mag` may differ per NV (effective picture).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldGeometry {
    /// Gauss, per NV (NV1, NV2).
    pub b_mag: [f64; 2],
    /// Misalignment to each NV axis, degrees (NV1, NV2).
    pub theta: [f64; 2],
    /// Inter-axis angle, degrees.
    pub beta: f64,
}

impl FieldGeometry {
    pub fn new(b_mag: [f64; 2], theta: [f64; 2], beta: f64) -> Result<Self> {
        let g = Self { b_mag, theta, beta };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..2 {
            if !(self.b_mag[i] >= 0.0) || !self.b_mag[i].is_finite() {
                return Err(Error::InvalidParameter(format!("b_mag[{i}] = {} must be finite and >= 0", self.b_mag[i])));
            }
            if !(0.0..180.0).contains(&self.theta[i]) {
                return Err(Error::InvalidParameter(format!("theta[{i}] = {} outside [0, 180)", self.theta[i])));
            }
        }
        if !(0.0..=180.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!("beta = {} outside [0, 180]", self.beta)));
        }
        self.lab_direction().map(|_| ())
    }

    /// ωe/2π per NV in MHz.
    pub fn omega_e(&self) -> [f64; 2] {
        [GAMMA_E_MHZ_PER_G * self.b_mag[0], GAMMA_E_MHZ_PER_G * self.b_mag[1]]
    }

    /// Azimuth of B in the lab (NV2) frame, degrees, non-negative branch.
    pub fn lab_azimuth(&self) -> Result<f64> {
        let (t1, t2, b) = (self.theta[0].to_radians(), self.theta[1].to_radians(), self.beta.to_radians());
        let den = t2.sin() * b.sin();
        let num = t1.cos() - t2.cos() * b.cos();
        if den.abs() < 1e-12 {
            if num.abs() < 1e-3 {
                return Ok(0.0);
            }
            return Err(Error::InconsistentAngles(format!(
                "field along NV2 axis requires theta1 = beta, got theta1 = {}, beta = {}",
                self.theta[0], self.beta
            )));
        }
        let c = num / den;
        if c.abs() > 1.0 + 1e-3 {
            return Err(Error::InconsistentAngles(format!(
                "cos(phi) = {c:.6} for theta = ({}, {}), beta = {}",
                self.theta[0], self.theta[1], self.beta
            )));
        }
        Ok(c.clamp(-1.0, 1.0).acos().to_degrees())
    }

    /// Unit field direction in the lab frame.
    pub fn lab_direction(&self) -> Result<Vector3<f64>> {
        let phi = self.lab_azimuth()?.to_radians();
        let t2 = self.theta[1].to_radians();
        Ok(Vector3::new(t2.sin() * phi.cos(), t2.sin() * phi.sin(), t2.cos()))
    }

    /// Field vector in Gauss expressed in each NV's own frame (NV1, NV2).
    pub fn field_in_nv_frames(&self) -> Result<[Vector3<f64>; 2]> {
        let u = self.lab_direction()?;
        let b1 = to_nv1_frame(&u, self.beta) * self.b_mag[0];
        Ok([b1, u * self.b_mag[1]])
    }
}

/// Express a lab-frame vector in NV1's frame (rotation about y by −β).
pub fn to_nv1_frame(v: &Vector3<f64>, beta_deg: f64) -> Vector3<f64> {
    let (s, c) = beta_deg.to_radians().sin_cos();
    Vector3::new(c * v.x - s * v.z, v.y, s * v.x + c * v.z)
}

/// Result of the closed-form inversion of an ODMR line pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdmrSolution {
    /// |ωe|/2π, MHz.
    pub omega_e: f64,
    /// Degrees, in [0, 90].
    pub theta: f64,
    /// 180° − θ.
    pub theta_alt: f64,
    /// True when the closed form disagreed with the forward model and the
    /// numeric root was used instead.
    pub refined: bool,
}

impl OdmrSolution {
    pub fn b_mag(&self) -> f64 {
        self.omega_e / GAMMA_E_MHZ_PER_G
    }
}

/// Invert a line pair at E = 0 azimuth reference φ = 0.
pub fn solve_field_from_odmr(nu1: f64, nu2: f64, d: f64, e: f64) -> Result<OdmrSolution> {
    solve_field_from_odmr_at(nu1, nu2, d, e, 0.0)
}

/// Invert a line pair with transverse strain `e` at azimuth `phi` (degrees).
pub fn solve_field_from_odmr_at(nu1: f64, nu2: f64, d: f64, e: f64, phi: f64) -> Result<OdmrSolution> {
    let (nu1, nu2) = if nu1 <= nu2 { (nu1, nu2) } else { (nu2, nu1) };
    let s = nu1 * nu1 + nu2 * nu2 - nu1 * nu2;
    let radicand = (s - d * d) / 3.0 - e * e;
    if !(radicand >= 0.0) {
        return Err(Error::NegativeRadicand { radicand });
    }
    let omega_e = radicand.sqrt();
    let theta = if omega_e < 1e-9 {
        0.0
    } else {
        let num = 7.0 * d.powi(3) + 2.0 * (nu1 + nu2) * (2.0 * (nu1 * nu1 + nu2 * nu2) - 5.0 * nu1 * nu2 - 9.0 * e * e)
            - 3.0 * d * (s + 9.0 * e * e);
        let den = 9.0 * (s - d * d - 3.0 * e * e);
        let h = num / den;
        let c2p = e * (2.0 * phi.to_radians()).cos();
        let cos2t = ((h - c2p) / (d - c2p)).clamp(-1.0, 1.0);
        0.5 * cos2t.acos().to_degrees()
    };
    let mut sol = OdmrSolution { omega_e, theta, theta_alt: 180.0 - theta, refined: false };

    let (f1, f2) = forward_transitions(omega_e, theta, phi, d, e);
    if (f1 - nu1).abs().max((f2 - nu2).abs()) > 0.1 {
        let res = |p: &[f64]| {
            let (a, b) = forward_transitions(p[0], p[1], phi, d, e);
            vec![a - nu1, b - nu2]
        };
        let fit = minimize_residuals(res, &[omega_e, theta.clamp(0.5, 89.5)], None, &FitOptions::default())?;
        let th = fit.params[1].abs() % 180.0;
        let th = if th > 90.0 { 180.0 - th } else { th };
        sol = OdmrSolution { omega_e: fit.params[0].abs(), theta: th, theta_alt: 180.0 - th, refined: true };
    }
    Ok(sol)
}

/// Electron-spin Hamiltonian of one NV in its own frame (cyclic MHz).
pub fn electron_hamiltonian(omega_e: f64, theta: f64, phi: f64, d: f64, e: f64) -> Matrix3<Complex64> {
    let (st, ct) = theta.to_radians().sin_cos();
    let (sp, cp) = phi.to_radians().sin_cos();
    let w = Vector3::new(omega_e * st * cp, omega_e * st * sp, omega_e * ct);
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let c = |re: f64, im: f64| Complex64::new(re, im);
    // basis (+1, 0, −1)
    let sx = Matrix3::new(c(0., 0.), c(r2, 0.), c(0., 0.), c(r2, 0.), c(0., 0.), c(r2, 0.), c(0., 0.), c(r2, 0.), c(0., 0.));
    let sy = Matrix3::new(c(0., 0.), c(0., -r2), c(0., 0.), c(0., r2), c(0., 0.), c(0., -r2), c(0., 0.), c(0., r2), c(0., 0.));
    let sz = Matrix3::from_diagonal(&Vector3::new(c(1., 0.), c(0., 0.), c(-1., 0.)));
    sz * sz * c(d, 0.) + (sx * sx - sy * sy) * c(e, 0.) + sx * c(w.x, 0.) + sy * c(w.y, 0.) + sz * c(w.z, 0.)
}

/// Transition frequencies from the 0-like ground state to the two excited
/// states, ascending (cyclic MHz).
pub fn forward_transitions(omega_e: f64, theta: f64, phi: f64, d: f64, e: f64) -> (f64, f64) {
    let h = electron_hamiltonian(omega_e, theta, phi, d, e);
    let eig = h.symmetric_eigen();
    let g = (0..3)
        .max_by(|&a, &b| eig.eigenvectors[(1, a)].norm().total_cmp(&eig.eigenvectors[(1, b)].norm()))
        .unwrap_or(0);
    let mut f: Vec<f64> = (0..3).filter(|&k| k != g).map(|k| eig.eigenvalues[k] - eig.eigenvalues[g]).collect();
    f.sort_by(f64::total_cmp);
    (f[0], f[1])
}

/// Solutions of cosθB = sinφ·sinθ·sinβ + cosθ·cosβ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondAngle {
    /// Principal branch in [−90°, 90°].
    pub phi: f64,
    /// The other root, 180° − φ.
    pub phi_supplement: f64,
    /// The same geometry with the azimuth measured from the NV-axis plane
    /// (cos form), 90° − φ, in [0°, 180°].
    pub phi_from_axis_plane: f64,
    /// The overall sign of φ cannot be fixed with two NVs.
    pub sign_ambiguous: bool,
}

pub fn solve_second_angle(theta: f64, theta_b: f64, beta: f64) -> Result<SecondAngle> {
    let (t, tb, b) = (theta.to_radians(), theta_b.to_radians(), beta.to_radians());
    let den = t.sin() * b.sin();
    let num = tb.cos() - t.cos() * b.cos();
    if den.abs() < 1e-12 {
        return Err(Error::InconsistentAngles(format!("azimuth undefined for theta = {theta}, beta = {beta}")));
    }
    let s = num / den;
    if s.abs() > 1.0 + 1e-9 {
        return Err(Error::InconsistentAngles(format!(
            "|cos(thetaB) - cos(theta)cos(beta)| exceeds |sin(theta)sin(beta)| (ratio {s:.6})"
        )));
    }
    let phi = s.clamp(-1.0, 1.0).asin().to_degrees();
    Ok(SecondAngle { phi, phi_supplement: 180.0 - phi, phi_from_axis_plane: 90.0 - phi, sign_ambiguous: true })
}

const MU0_OVER_4PI: f64 = 1e-7;
const HBAR: f64 = 1.054_571_817e-34;

/// Largest NV-NV distance (nm) compatible with coupling `nu_dip` (MHz),
/// geometric factor at its extremal value 2.
pub fn distance_bound(nu_dip: f64) -> Result<f64> {
    if !(nu_dip > 0.0) || !nu_dip.is_finite() {
        return Err(Error::InvalidParameter(format!("coupling must be positive, got {nu_dip}")));
    }
    // γe in rad/(s·T): 2.8024 MHz/G = 2.8024e10 Hz/T
    let gamma = 2.0 * std::f64::consts::PI * GAMMA_E_MHZ_PER_G * 1e10;
    let r3 = 2.0 * MU0_OVER_4PI * HBAR * gamma * gamma / (2.0 * std::f64::consts::PI * nu_dip * 1e6);
    Ok(r3.cbrt() * 1e9)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_setting2_nv2() {
        let s = solve_field_from_odmr(2571.0, 3160.2, 2865.42, 0.0).unwrap();
        assert!((s.omega_e - 295.18).abs() < 0.01, "{s:?}");
        assert!((s.theta - 3.58).abs() < 0.05);
        assert!((s.theta_alt - (180.0 - s.theta)).abs() < 1e-12);
        assert!(!s.refined);
    }

    #[test]
    fn table_setting1_nv1() {
        let s = solve_field_from_odmr(2932.5, 2829.4, 2865.42, 0.0).unwrap();
        assert!((s.omega_e - 180.01).abs() < 0.01, "{s:?}");
        assert!((s.theta - 73.42).abs() < 0.05);
    }

    #[test]
    fn remaining_table_entries() {
        let s = solve_field_from_odmr(2827.3, 2990.8, 2867.27, 0.0).unwrap();
        assert!((s.omega_e - 295.18).abs() < 0.01 && (s.theta - 74.08).abs() < 0.05, "{s:?}");
        let s = solve_field_from_odmr(2751.8, 2999.4, 2867.27, 0.0).unwrap();
        assert!((s.omega_e - 176.84).abs() < 0.01 && (s.theta - 45.53).abs() < 0.05, "{s:?}");
    }

    #[test]
    fn aligned_limit() {
        let s = solve_field_from_odmr(2870.0 - 100.0, 2870.0 + 100.0, 2870.0, 0.0).unwrap();
        assert!((s.omega_e - 100.0).abs() < 1e-9);
        assert!(s.theta.abs() < 1e-5);
    }

    #[test]
    fn unphysical_pair_reports_radicand() {
        match solve_field_from_odmr(2869.0, 2871.0, 2880.0, 0.0) {
            Err(Error::NegativeRadicand { radicand }) => assert!(radicand < 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn forward_zero_field() {
        let (a, b) = forward_transitions(0.0, 30.0, 10.0, 2870.0, 0.0);
        assert!((a - 2870.0).abs() < 1e-9 && (b - 2870.0).abs() < 1e-9);
    }

    #[test]
    fn forward_reproduces_table() {
        let (a, b) = forward_transitions(295.18, 3.58, 0.0, 2865.42, 0.0);
        assert!((a - 2571.0).abs() < 0.5 && (b - 3160.2).abs() < 0.5, "{a} {b}");
    }

    #[test]
    fn nonzero_strain_round_trip() {
        let (a, b) = forward_transitions(200.0, 40.0, 20.0, 2870.0, 1.0);
        let s = solve_field_from_odmr_at(a, b, 2870.0, 1.0, 20.0).unwrap();
        assert!((s.omega_e - 200.0).abs() < 0.01 && (s.theta - 40.0).abs() < 0.05, "{s:?}");
    }

    #[test]
    fn second_angle_table_setting2() {
        // NV A is aligned (3.58°), NV B misaligned (74.08°)
        let a = solve_second_angle(3.58, 74.08, BETA_TETRAHEDRAL).unwrap();
        assert!((a.phi_from_axis_plane - 172.73).abs() < 0.5, "{a:?}");
        assert!(a.sign_ambiguous);
        let b = solve_second_angle(73.42, 45.53, BETA_TETRAHEDRAL).unwrap();
        assert!((b.phi_from_axis_plane - 47.94).abs() < 0.05, "{b:?}");
    }

    #[test]
    fn second_angle_in_plane_and_degenerate() {
        let b = BETA_TETRAHEDRAL;
        let a = solve_second_angle(b, b, b).unwrap();
        let (t, br) = (b.to_radians(), b.to_radians());
        let lhs = a.phi.to_radians().sin() * t.sin() * br.sin() + t.cos() * br.cos();
        assert!((lhs - br.cos()).abs() < 1e-12);
        assert!(solve_second_angle(0.0, b, b).is_err());
        assert!(solve_second_angle(10.0, 150.0, b).is_err());
    }

    #[test]
    fn distance_values() {
        assert!((distance_bound(0.1198).unwrap() - 9.54).abs() < 0.01);
        let r = distance_bound(0.11289).unwrap();
        assert!((r - 9.733).abs() < 0.01, "{r}");
        let r1 = distance_bound(0.1).unwrap();
        let r8 = distance_bound(0.8).unwrap();
        assert!((r1 / r8 - 2.0).abs() < 1e-12);
        assert!(distance_bound(0.0).is_err());
        assert!(distance_bound(-1.0).is_err());
    }

    #[test]
    fn pair_frames() {
        let g = FieldGeometry::new([105.33, 105.33], [74.08, 3.58], BETA_TETRAHEDRAL).unwrap();
        let [b1, b2] = g.field_in_nv_frames().unwrap();
        assert!((b1.norm() - 105.33).abs() < 1e-9);
        assert!((b1.z / b1.norm() - 74.08f64.to_radians().cos()).abs() < 1e-9);
        assert!((b2.z / b2.norm() - 3.58f64.to_radians().cos()).abs() < 1e-9);
        assert!((g.lab_azimuth().unwrap() - 172.73).abs() < 0.5);
        let bad = FieldGeometry::new([100.0, 100.0], [10.0, 10.0], BETA_TETRAHEDRAL);
        assert!(matches!(bad, Err(Error::InconsistentAngles(_))));
    }
}
