//! Pinned targets and tolerances for the acceptance run.

/// Target value and allowed absolute deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub target: f64,
    pub tol: f64,
}

impl Band {
    pub const fn new(target: f64, tol: f64) -> Self {
        Self { target, tol }
    }

    pub fn contains(&self, x: f64) -> bool {
        (x - self.target).abs() <= self.tol
    }
}

/// Setting-2 field from ODMR lines, MHz and degrees.
pub const OMEGA_E_S2: Band = Band::new(295.18, 0.01);
pub const THETA_S2: Band = Band::new(3.58, 0.05);
pub const OMEGA_E_S1: Band = Band::new(180.01, 0.01);
pub const THETA_S1: Band = Band::new(73.42, 0.05);
pub const ROUND_TRIP_MHZ: f64 = 0.01;
pub const GEOMETRY_RUNTIME_S: f64 = 1.0;

pub const ORACLE_INFIDELITY: f64 = 1e-8;
pub const ORACLE_TUPLES: usize = 50;
pub const ORACLE_RUNTIME_S: f64 = 10.0;

/// Relative tolerance on t_√ZZ = 1/(4ν) and on the DEER coupling.
pub const CALIBRATION_NU_MHZ: f64 = 0.1198;
pub const CALIBRATION_REL: f64 = 0.005;
pub const DEER_REL: f64 = 0.01;
/// Measured gate time, reported only.
pub const MEASURED_T_SQRTZZ_US: f64 = 2.17;

pub const COHERENCE_LIMIT: f64 = 0.0137;
pub const EPG_2Q: Band = Band::new(0.040, 0.001);
pub const F_2Q_PERCENT: f64 = 96.0;

pub const CHARGE_WEIGHTS_4: [f64; 4] = [0.49, 0.21, 0.21, 0.09];
pub const REPETITIVE_TOL: f64 = 1e-3;

pub const RB_MIN_RANDOMIZATIONS: usize = 20;
pub const RB_LENGTHS: [usize; 4] = [1, 2, 4, 8];
/// Ablation shares in percent: unpolarized nitrogen, misaligned field,
/// crosstalk/leakage, decoherence, residual.
pub const ABLATION_SHARES: [(&str, f64); 5] =
    [("unpolarized_nitrogen", 53.0), ("misaligned_field", 15.0), ("crosstalk_leakage", 18.0), ("decoherence", 4.0), ("residual", 10.0)];
pub const ABLATION_TOL_PP: f64 = 10.0;

/// (00, −0, −−) weights of the synthetic histogram.
pub const CHARGE_WEIGHTS_3: [f64; 3] = [0.09, 0.42, 0.49];
pub const CHARGE_WEIGHT_TOL: f64 = 0.02;
pub const CHARGE_SHOTS: usize = 100_000;

pub const F_INIT_ZERO_FIELD: Band = Band::new(77.0, 3.0);
pub const SPAM_SETTING2: Band = Band::new(17.0, 4.0);
pub const POPULATION_TOL: f64 = 1e-9;

pub const UNITARITY_TOL: f64 = 1e-9;
pub const RIEMANN_MIN_ORDER: f64 = 0.9;
