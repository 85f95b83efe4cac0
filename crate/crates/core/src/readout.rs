//! Fluorescence readout, charge-state mixtures, spin-initialization states and
//! the phenomenological decoherence factor.

use serde::{Deserialize, Serialize};

use crate::algebra::{hermiticity_error, CMat, C64};
use crate::error::{Error, Result};
use crate::hamiltonian::PairModel;

/// Charge configuration of the pair, NV1 first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChargeConfig {
    #[serde(rename = "--")]
    MinusMinus,
    #[serde(rename = "-0")]
    MinusZero,
    #[serde(rename = "0-")]
    ZeroMinus,
    #[serde(rename = "00")]
    ZeroZero,
}

impl ChargeConfig {
    pub const ALL: [ChargeConfig; 4] =
        [ChargeConfig::MinusMinus, ChargeConfig::MinusZero, ChargeConfig::ZeroMinus, ChargeConfig::ZeroZero];

    /// Which NVs are negatively charged.
    pub fn negative(self) -> [bool; 2] {
        match self {
            ChargeConfig::MinusMinus => [true, true],
            ChargeConfig::MinusZero => [true, false],
            ChargeConfig::ZeroMinus => [false, true],
            ChargeConfig::ZeroZero => [false, false],
        }
    }

    /// The dipolar coupling only acts when both NVs are negative.
    pub fn coupled(self) -> bool {
        self == ChargeConfig::MinusMinus
    }
}

/// Probabilities of the four charge configurations (p−−, p−0, p0−, p00).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeMixture {
    pub weights: [f64; 4],
    /// Fluorescence of an NV⁰ relative to the NV⁻ bright state.
    #[serde(default = "unit")]
    pub nv0_level: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for ChargeMixture {
    /// Independent NVs with p(NV⁻) = 0.7.
    fn default() -> Self {
        Self::independent(0.7)
    }
}

impl ChargeMixture {
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        let m = Self { weights, nv0_level: 1.0 };
        m.validate()?;
        Ok(m)
    }

    pub fn pure() -> Self {
        Self { weights: [1.0, 0.0, 0.0, 0.0], nv0_level: 1.0 }
    }

    /// Uncorrelated charge states with equal NV⁻ probability `p`.
    pub fn independent(p: f64) -> Self {
        let q = 1.0 - p;
        Self { weights: [p * p, p * q, q * p, q * q], nv0_level: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidParameter(format!("charge weights {:?} outside [0, 1]", self.weights)));
        }
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("charge weights sum to {s}, expected 1")));
        }
        if !(self.nv0_level >= 0.0 && self.nv0_level.is_finite()) {
            return Err(Error::InvalidParameter(format!("NV0 level {} must be >= 0", self.nv0_level)));
        }
        Ok(())
    }

    pub fn weight(&self, c: ChargeConfig) -> f64 {
        self.weights[c as usize]
    }
}

fn check_alpha(alpha: [f64; 2]) -> Result<()> {
    if alpha.iter().any(|a| !(*a >= 0.0 && a.is_finite())) || alpha[0] + alpha[1] <= 0.0 {
        return Err(Error::InvalidParameter(format!("contrasts {alpha:?} must be non-negative with positive sum")));
    }
    Ok(())
}

fn check_state(rho: &CMat) -> Result<()> {
    if !rho.is_square() {
        return Err(Error::Dimension(format!("density matrix is {}×{}", rho.nrows(), rho.ncols())));
    }
    let tr: C64 = rho.trace();
    if (tr.re - 1.0).abs() > 1e-6 || tr.im.abs() > 1e-6 {
        return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
    }
    if hermiticity_error(rho) > 1e-6 {
        return Err(Error::InvalidState("density matrix is not Hermitian".into()));
    }
    Ok(())
}

/// Per-NV polarization P(g) − P(e) of a 9×9 electron density matrix in the
/// labeled eigenbasis (the third level contributes to neither).
pub fn electron_polarizations(rho9: &CMat, excited: [usize; 2]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for l1 in 0..3 {
        for l2 in 0..3 {
            let p = rho9[(l1 * 3 + l2, l1 * 3 + l2)].re;
            if l1 == 1 {
                out[0] += p;
            } else if l1 == excited[0] {
                out[0] -= p;
            }
            if l2 == 1 {
                out[1] += p;
            } else if l2 == excited[1] {
                out[1] -= p;
            }
        }
    }
    out
}

/// Alternating readout R = Tr[Eg ρ] − Tr[Eg X12 ρ X12†] of an electron-pair state,
/// with NV⁰ members dropped from the numerator.
pub fn readout_electron(rho9: &CMat, excited: [usize; 2], alpha: [f64; 2], negative: [bool; 2]) -> Result<f64> {
    check_alpha(alpha)?;
    if rho9.nrows() != 9 {
        return Err(Error::Dimension(format!("expected 9×9 electron state, got {}", rho9.nrows())));
    }
    check_state(rho9)?;
    let p = electron_polarizations(rho9, excited);
    let num: f64 = (0..2).filter(|&k| negative[k]).map(|k| alpha[k] * p[k]).sum();
    Ok(num / (alpha[0] + alpha[1]))
}

/// POVM readout of a 4×4 computational-basis density matrix (|q1 q2⟩, NV1 first).
pub fn povm_readout(rho: &CMat, alpha1: f64, alpha2: f64) -> Result<f64> {
    check_alpha([alpha1, alpha2])?;
    if rho.nrows() != 4 {
        return Err(Error::Dimension(format!("expected 4×4 qubit-pair state, got {}", rho.nrows())));
    }
    check_state(rho)?;
    let d: Vec<f64> = (0..4).map(|i| rho[(i, i)].re).collect();
    let p1 = d[0] + d[1] - d[2] - d[3];
    let p2 = d[0] + d[2] - d[1] - d[3];
    Ok((alpha1 * p1 + alpha2 * p2) / (alpha1 + alpha2))
}

/// POVM readout of a full 81-dim density matrix, nuclear spins traced out.
pub fn povm_readout_full(rho81: &CMat, model: &PairModel, alpha: [f64; 2]) -> Result<f64> {
    let rho9 = crate::algebra::partial_trace(rho81, crate::algebra::Keep::Electrons)?;
    readout_electron(&rho9, model.excited, alpha, [true, true])
}

/// Readout of configuration `c` in the pure reference state |00⟩.
pub fn reference_signal(c: ChargeConfig, alpha: [f64; 2]) -> f64 {
    let neg = c.negative();
    (0..2).filter(|&k| neg[k]).map(|k| alpha[k]).sum::<f64>() / (alpha[0] + alpha[1])
}

/// Σ w_c·s_c over the four charge configurations.
pub fn charge_mixture_signal(signals: [f64; 4], mix: &ChargeMixture) -> Result<f64> {
    mix.validate()?;
    Ok(signals.iter().zip(mix.weights.iter()).map(|(s, w)| s * w).sum())
}

/// Mixture signal normalized to the mixture's |00⟩ − |11⟩ contrast.
pub fn normalized_mixture_signal(signals: [f64; 4], mix: &ChargeMixture, alpha: [f64; 2]) -> Result<f64> {
    let refs = ChargeConfig::ALL.map(|c| reference_signal(c, alpha));
    let norm = charge_mixture_signal(refs, mix)?;
    if norm <= 0.0 {
        return Err(Error::InvalidState("charge mixture has no spin contrast".into()));
    }
    Ok(charge_mixture_signal(signals, mix)? / norm)
}

/// Non-subtracted fluorescence Tr[Eg ρ] of configuration `c`; neutral NVs
/// contribute `nv0_level` in place of their ground-state population.
pub fn fluorescence(rho9: &CMat, alpha: [f64; 2], c: ChargeConfig, nv0_level: f64) -> f64 {
    let neg = c.negative();
    let mut pg = [0.0; 2];
    for l1 in 0..3 {
        for l2 in 0..3 {
            let p = rho9[(l1 * 3 + l2, l1 * 3 + l2)].re;
            if l1 == 1 {
                pg[0] += p;
            }
            if l2 == 1 {
                pg[1] += p;
            }
        }
    }
    let mut f = 0.0;
    for k in 0..2 {
        f += alpha[k] * if neg[k] { pg[k] } else { nv0_level };
    }
    f / (alpha[0] + alpha[1])
}

/// Mean coherence time of the pair, µs.
pub fn mean_t2(t2: [f64; 2]) -> f64 {
    (t2[0] + t2[1]) / 2.0
}

/// value·exp(−t/T̄2) with T̄2 the two-NV mean (t and T2 in µs).
pub fn apply_decoherence(value: f64, t_us: f64, t2: [f64; 2]) -> Result<f64> {
    if t2.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidParameter(format!("T2 values {t2:?} must be positive")));
    }
    Ok(value * (-t_us / mean_t2(t2)).exp())
}

/// F_total = F_coherent·(1 − EPG_T2).
pub fn fidelity_with_decoherence(f_coherent: f64, epg_t2: f64) -> f64 {
    f_coherent * (1.0 - epg_t2)
}

/// One NV's electron state f·|g⟩⟨g| + (1−f)/2·(|e1⟩⟨e1| + |e2⟩⟨e2|) in label order.
pub fn spin_init_state(f_init: f64) -> Result<CMat> {
    if !(f_init > 1.0 / 3.0 - 1e-12 && f_init <= 1.0) {
        return Err(Error::InvalidParameter(format!("initialization fidelity {f_init} outside (1/3, 1]")));
    }
    let r = (1.0 - f_init) / 2.0;
    Ok(crate::algebra::diag_real(&[r, f_init, r]))
}
