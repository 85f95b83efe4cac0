//! Seven-level optical rate model of a single NV under a tilted magnetic field.
//!
//! Levels: 0..3 ground triplet (ms = 0, +1, −1), 3..6 excited triplet in the
//! same order, 6 the metastable singlet. Rates are in MHz (1/µs), times in ns
//! at the API and µs internally.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GAMMA_E_MHZ_PER_G;

pub const LEVELS: usize = 7;
/// Excited-state over ground-state zero-field splitting.
pub const EXCITED_ZFS_RATIO: f64 = 1.42 / 2.87;
pub const D_GROUND_MHZ: f64 = 2870.0;
/// Photon gating window at the start of the readout pulse.
pub const READOUT_GATE_NS: f64 = 330.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateColumn {
    /// Literature rates with a fitted pump.
    Gupta,
    /// Literature rates with refitted intersystem crossing.
    Adapted,
}

impl RateColumn {
    pub const ALL: [RateColumn; 2] = [RateColumn::Gupta, RateColumn::Adapted];

    pub fn rates(self) -> OpticalRates {
        match self {
            RateColumn::Gupta => OpticalRates { k_rad: 66.08, k47: 11.2, k57: 92.9, k71: 4.9, k72: 2.03, beta: 1.215 },
            RateColumn::Adapted => OpticalRates { k_rad: 66.08, k47: 3.004, k57: 90.307, k71: 4.9, k72: 2.03, beta: 1.938 },
        }
    }
}

/// Zero-field spin-selective rates. `k57` also stands for k67, `k72` for k73.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalRates {
    pub k_rad: f64,
    pub k47: f64,
    pub k57: f64,
    pub k71: f64,
    pub k72: f64,
    /// Pump rate as a multiple of `k_rad`.
    pub beta: f64,
}

impl OpticalRates {
    pub fn validate(&self) -> Result<()> {
        let all = [self.k_rad, self.k47, self.k57, self.k71, self.k72, self.beta];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidParameter("optical rates must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingScope {
    #[default]
    GroundAndExcited,
    GroundOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    /// `k[(i, j)]` is the rate from level i to level j.
    pub k: DMatrix<f64>,
    pub mixing_ground: Matrix3<f64>,
    pub mixing_excited: Matrix3<f64>,
}

/// Squared overlaps `M[(new, old)] = |⟨new|old⟩|²` between the tilted-field
/// eigenstates and the zero-field spin states (order ms = 0, +1, −1).
pub fn mixing_matrix(d: f64, b_mag: f64, theta_deg: f64) -> Matrix3<f64> {
    let omega = GAMMA_E_MHZ_PER_G * b_mag;
    let th = theta_deg.to_radians();
    let (bz, bx) = (omega * th.cos(), omega * th.sin());
    if bx.abs() < 1e-12 {
        return Matrix3::identity();
    }
    // Sz basis ordered (0, +1, −1).
    let s = std::f64::consts::FRAC_1_SQRT_2 * bx;
    #[rustfmt::skip]
    let h = Matrix3::new(
        0.0, s,      s,
        s,   d + bz, 0.0,
        s,   0.0,    d - bz,
    );
    let eig = SymmetricEigen::new(h);
    let ov = eig.eigenvectors.map(|x| x * x); // ov[(old, col)]
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let best = perms
        .iter()
        .max_by(|a, b| {
            let sa: f64 = (0..3).map(|j| ov[(j, a[j])]).sum();
            let sb: f64 = (0..3).map(|j| ov[(j, b[j])]).sum();
            sa.total_cmp(&sb)
        })
        .unwrap();
    Matrix3::from_fn(|i, j| ov[(j, best[i])])
}

pub fn build_rate_model(rates: &OpticalRates, b_mag: f64, theta_deg: f64, d: f64, scope: MixingScope) -> Result<RateModel> {
    rates.validate()?;
    if !(b_mag.is_finite() && theta_deg.is_finite() && d.is_finite()) {
        return Err(Error::InvalidParameter("field parameters must be finite".into()));
    }
    let mut k = DMatrix::zeros(LEVELS, LEVELS);
    for g in 0..3 {
        k[(g + 3, g)] = rates.k_rad;
        k[(g, g + 3)] = rates.beta * rates.k_rad;
    }
    k[(3, 6)] = rates.k47;
    k[(4, 6)] = rates.k57;
    k[(5, 6)] = rates.k57;
    k[(6, 0)] = rates.k71;
    k[(6, 1)] = rates.k72;
    k[(6, 2)] = rates.k72;

    let mg = mixing_matrix(d, b_mag, theta_deg);
    let me = match scope {
        MixingScope::GroundAndExcited => mixing_matrix(d * EXCITED_ZFS_RATIO, b_mag, theta_deg),
        MixingScope::GroundOnly => Matrix3::identity(),
    };
    let mut a = DMatrix::identity(LEVELS, LEVELS);
    a.view_mut((0, 0), (3, 3)).copy_from(&mg);
    a.view_mut((3, 3), (3, 3)).copy_from(&me);
    let k = &a * k * a.transpose();
    Ok(RateModel { k, mixing_ground: mg, mixing_excited: me })
}

impl RateModel {
    /// Master-equation generator `dp/dt = Q p`, with the pump optionally removed.
    pub fn generator(&self, laser: bool) -> DMatrix<f64> {
        let mut k = self.k.clone();
        if !laser {
            k.view_mut((0, 3), (3, 3)).fill(0.0);
        }
        let mut q = k.transpose();
        for i in 0..LEVELS {
            q[(i, i)] = k[(i, i)] - k.row(i).sum();
        }
        q
    }

    /// Total radiative rate out of each excited level.
    fn emission_rates(&self) -> DVector<f64> {
        DVector::from_fn(LEVELS, |i, _| if (3..6).contains(&i) { (0..3).map(|g| self.k[(i, g)]).sum() } else { 0.0 })
    }

    pub fn evolve(&self, p: &DVector<f64>, laser: bool, t_ns: f64) -> Result<DVector<f64>> {
        check_populations(p)?;
        if !(t_ns >= 0.0 && t_ns.is_finite()) {
            return Err(Error::InvalidParameter(format!("duration {t_ns} ns")));
        }
        if t_ns == 0.0 {
            return Ok(p.clone());
        }
        Ok((self.generator(laser) * (t_ns * 1e-3)).exp() * p)
    }

    /// Expected photons emitted during `gate_ns` of laser, in units of
    /// emission events per unit collection efficiency.
    pub fn readout_photons(&self, p: &DVector<f64>, gate_ns: f64) -> Result<f64> {
        check_populations(p)?;
        let q = self.generator(true);
        let r = self.emission_rates();
        let mut aug = DMatrix::zeros(LEVELS + 1, LEVELS + 1);
        aug.view_mut((0, 0), (LEVELS, LEVELS)).copy_from(&q);
        aug.view_mut((LEVELS, 0), (1, LEVELS)).copy_from(&r.transpose());
        let mut x = DVector::zeros(LEVELS + 1);
        x.rows_mut(0, LEVELS).copy_from(p);
        Ok(((aug * (gate_ns * 1e-3)).exp() * x)[LEVELS])
    }
}

fn check_populations(p: &DVector<f64>) -> Result<()> {
    if p.len() != LEVELS {
        return Err(Error::Dimension(format!("population vector of length {}", p.len())));
    }
    if p.iter().any(|x| !x.is_finite() || *x < -1e-12) || (p.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState("populations must be non-negative and sum to 1".into()));
    }
    Ok(())
}

/// Equal ground-state populations, the unpolarized starting point.
pub fn thermal_ground() -> DVector<f64> {
    DVector::from_fn(LEVELS, |i, _| if i < 3 { 1.0 / 3.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpProtocol {
    pub laser_on_ns: f64,
    pub wait_ns: f64,
}

impl Default for PumpProtocol {
    fn default() -> Self {
        Self { laser_on_ns: 3000.0, wait_ns: 1000.0 }
    }
}

/// Laser pulse followed by a dark wait.
pub fn pump_cycle(model: &RateModel, p0: &DVector<f64>, protocol: PumpProtocol) -> Result<DVector<f64>> {
    let p = model.evolve(p0, true, protocol.laser_on_ns)?;
    model.evolve(&p, false, protocol.wait_ns)
}

/// Ground-state ms = 0 share within the spin-1 manifold.
pub fn init_fidelity(p: &DVector<f64>) -> f64 {
    p[0] / (p[0] + p[1] + p[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpamEstimate {
    pub f_init_b: f64,
    pub f_init_0: f64,
    /// (1 − F(B)) / (1 − F(0)).
    pub infidelity_ratio: f64,
    /// 1 − F(B) / F(0), the relative loss of polarization.
    pub relative_loss: f64,
}

impl SpamEstimate {
    pub fn from_fidelities(f_b: f64, f_0: f64) -> Result<Self> {
        if (1.0 - f_0).abs() < 1e-12 {
            return Err(Error::Numeric("zero-field reference is perfectly polarized".into()));
        }
        Ok(Self { f_init_b: f_b, f_init_0: f_0, infidelity_ratio: (1.0 - f_b) / (1.0 - f_0), relative_loss: 1.0 - f_b / f_0 })
    }
}

pub fn init_and_spam(model_b: &RateModel, model_0: &RateModel, protocol: PumpProtocol) -> Result<SpamEstimate> {
    let start = thermal_ground();
    let fb = init_fidelity(&pump_cycle(model_b, &start, protocol)?);
    let f0 = init_fidelity(&pump_cycle(model_0, &start, protocol)?);
    SpamEstimate::from_fidelities(fb, f0)
}

/// Fidelities averaged over both rate columns before forming the ratios.
pub fn spam_column_mean(b_mag: f64, theta_deg: f64, scope: MixingScope, protocol: PumpProtocol) -> Result<SpamEstimate> {
    let (mut fb, mut f0) = (0.0, 0.0);
    for col in RateColumn::ALL {
        let r = col.rates();
        let s = init_and_spam(
            &build_rate_model(&r, b_mag, theta_deg, D_GROUND_MHZ, scope)?,
            &build_rate_model(&r, 0.0, 0.0, D_GROUND_MHZ, scope)?,
            protocol,
        )?;
        fb += s.f_init_b / RateColumn::ALL.len() as f64;
        f0 += s.f_init_0 / RateColumn::ALL.len() as f64;
    }
    SpamEstimate::from_fidelities(fb, f0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastSettings {
    pub protocol: PumpProtocol,
    pub gate_ns: f64,
    /// Ground level swapped with ms = 0 by the readout reference π pulse.
    pub flip_level: usize,
    /// Tilt of the reference NV.
    pub theta_ref_deg: f64,
    pub scope: MixingScope,
    pub d: f64,
}

impl Default for ContrastSettings {
    fn default() -> Self {
        Self {
            protocol: PumpProtocol::default(),
            gate_ns: READOUT_GATE_NS,
            flip_level: 1,
            theta_ref_deg: 3.58,
            scope: MixingScope::GroundAndExcited,
            d: D_GROUND_MHZ,
        }
    }
}

/// Fractional fluorescence drop between the initialized state and the
/// state after a π pulse on the `flip_level` transition.
pub fn readout_contrast(model: &RateModel, s: &ContrastSettings) -> Result<f64> {
    if !(1..3).contains(&s.flip_level) {
        return Err(Error::InvalidParameter("flip level must be 1 or 2".into()));
    }
    let p = pump_cycle(model, &thermal_ground(), s.protocol)?;
    let mut q = p.clone();
    q.swap_rows(0, s.flip_level);
    let bright = model.readout_photons(&p, s.gate_ns)?;
    let dark = model.readout_photons(&q, s.gate_ns)?;
    Ok((bright - dark) / bright)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastPoint {
    pub b_mag: f64,
    pub contrast: f64,
    pub contrast_ref: f64,
    pub ratio: f64,
}

/// Contrast of an NV tilted by `theta_deg` relative to the reference NV at the same |B|.
pub fn relative_contrast(rates: &OpticalRates, b_values: &[f64], theta_deg: f64, s: &ContrastSettings) -> Result<Vec<ContrastPoint>> {
    b_values
        .iter()
        .map(|&b| {
            let c = readout_contrast(&build_rate_model(rates, b, theta_deg, s.d, s.scope)?, s)?;
            let c_ref = readout_contrast(&build_rate_model(rates, b, s.theta_ref_deg, s.d, s.scope)?, s)?;
            Ok(ContrastPoint { b_mag: b, contrast: c, contrast_ref: c_ref, ratio: c / c_ref })
        })
        .collect()
}
