//! State preparation, sequence execution and qubit-subspace helpers shared by
//! the experiment builders.

use serde::{Deserialize, Serialize};

use crate::algebra::{electron_state_from_block, CMat, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::hamiltonian::PairModel;
use crate::propagation::{ideal_rotation, PropagationMode, Propagator, PulseKind, PulsePhase, Sequence, DEFAULT_STEP_DENSITY};

/// Initial state of the two ¹⁴N spins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuclearInit {
    /// Maximally mixed over mI ∈ {+1, 0, −1}.
    Mixed,
    /// Both nuclei in mI = 0.
    Polarized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub mode: PropagationMode,
    /// Riemann samples per ns.
    pub step_density: f64,
    pub nuclear: NuclearInit,
    /// Electron spin initialization fidelity per NV.
    pub f_init: [f64; 2],
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { mode: PropagationMode::Rwa, step_density: DEFAULT_STEP_DENSITY, nuclear: NuclearInit::Mixed, f_init: [1.0, 1.0] }
    }
}

/// 81-dim basis index from electron labels and nuclear indices.
pub fn basis_index(e1: usize, n1: usize, e2: usize, n2: usize) -> usize {
    ((e1 * 3 + n1) * 3 + e2) * 3 + n2
}

/// A model bound to a propagation mode and an initial state.
pub struct Simulator<'m> {
    pub prop: Propagator<'m>,
    pub settings: SimSettings,
}

impl<'m> Simulator<'m> {
    pub fn new(model: &'m PairModel, settings: SimSettings) -> Result<Self> {
        for &f in &settings.f_init {
            if !(f > 1.0 / 3.0 - 1e-12 && f <= 1.0) {
                return Err(Error::InvalidParameter(format!("initialization fidelity {f} outside (1/3, 1]")));
            }
        }
        Ok(Self { prop: Propagator::new(model, settings.mode, settings.step_density)?, settings })
    }

    pub fn model(&self) -> &'m PairModel {
        self.prop.model
    }

    /// Pure-state columns of the initial mixture and their weights.
    pub fn initial_block(&self) -> (CMat, Vec<f64>) {
        let electron = |f: f64| -> Vec<(usize, f64)> {
            let rest = (1.0 - f) / 2.0;
            [(1, f), (0, rest), (2, rest)].into_iter().filter(|&(_, w)| w > 0.0).collect()
        };
        let nuclear: Vec<(usize, f64)> = match self.settings.nuclear {
            NuclearInit::Mixed => vec![(0, 1.0 / 3.0), (1, 1.0 / 3.0), (2, 1.0 / 3.0)],
            NuclearInit::Polarized => vec![(1, 1.0)],
        };
        let mut cols = Vec::new();
        for &(e1, w1) in &electron(self.settings.f_init[0]) {
            for &(n1, v1) in &nuclear {
                for &(e2, w2) in &electron(self.settings.f_init[1]) {
                    for &(n2, v2) in &nuclear {
                        cols.push((basis_index(e1, n1, e2, n2), w1 * v1 * w2 * v2));
                    }
                }
            }
        }
        let mut psi = CMat::zeros(81, cols.len());
        for (c, &(i, _)) in cols.iter().enumerate() {
            psi[(i, c)] = ONE;
        }
        (psi, cols.into_iter().map(|(_, w)| w).collect())
    }

    /// Run `seq` from t = 0 and return the electron-pair density matrix (9×9,
    /// eigenbasis, rotating frame).
    pub fn run(&self, seq: &Sequence) -> CMat {
        let (mut psi, w) = self.initial_block();
        self.prop.apply(seq, 0.0, &mut psi);
        electron_state_from_block(&psi, &w)
    }

    /// Run `before`, apply an ideal qubit-subspace unitary, then `after`.
    pub fn run_with_ideal(&self, before: &Sequence, u: &CMat, after: &Sequence) -> CMat {
        let (mut psi, w) = self.initial_block();
        let t = self.prop.apply(before, 0.0, &mut psi);
        apply_qubit_unitary(&mut psi, self.model(), u);
        self.prop.apply(after, t, &mut psi);
        electron_state_from_block(&psi, &w)
    }
}

/// Apply a 4×4 unitary on the computational subspace of an 81-row block;
/// the third electron level and the nuclear spins are untouched.
pub fn apply_qubit_unitary(psi: &mut CMat, model: &PairModel, u: &CMat) {
    let lv = [[model.level(0, 0), model.level(0, 1)], [model.level(1, 0), model.level(1, 1)]];
    for n1 in 0..3 {
        for n2 in 0..3 {
            let idx: [usize; 4] = [
                basis_index(lv[0][0], n1, lv[1][0], n2),
                basis_index(lv[0][0], n1, lv[1][1], n2),
                basis_index(lv[0][1], n1, lv[1][0], n2),
                basis_index(lv[0][1], n1, lv[1][1], n2),
            ];
            for c in 0..psi.ncols() {
                let v: [C64; 4] = [psi[(idx[0], c)], psi[(idx[1], c)], psi[(idx[2], c)], psi[(idx[3], c)]];
                for r in 0..4 {
                    psi[(idx[r], c)] = (0..4).map(|j| u[(r, j)] * v[j]).sum();
                }
            }
        }
    }
}

/// Computational-subspace block of a 9×9 electron density matrix.
pub fn qubit_block(rho9: &CMat, model: &PairModel) -> CMat {
    let idx = [model.electron_index(0, 0), model.electron_index(0, 1), model.electron_index(1, 0), model.electron_index(1, 1)];
    CMat::from_fn(4, 4, |r, c| rho9[(idx[r], idx[c])])
}

/// Single-qubit input states reachable with one native pulse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QubitInput {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1")]
    One,
    /// (|0⟩ + |1⟩)/√2
    #[serde(rename = "+")]
    Plus,
    /// (|0⟩ − |1⟩)/√2
    #[serde(rename = "-")]
    Minus,
    /// (|0⟩ + i|1⟩)/√2
    #[serde(rename = "+i")]
    PlusI,
    /// (|0⟩ − i|1⟩)/√2
    #[serde(rename = "-i")]
    MinusI,
}

impl QubitInput {
    pub const ALL: [QubitInput; 6] =
        [QubitInput::Zero, QubitInput::One, QubitInput::Plus, QubitInput::Minus, QubitInput::PlusI, QubitInput::MinusI];

    /// Preparation pulse from |0⟩.
    pub fn prep_pulse(self) -> Option<(PulseKind, PulsePhase)> {
        match self {
            QubitInput::Zero => None,
            QubitInput::One => Some((PulseKind::Pi, PulsePhase::X)),
            QubitInput::Plus => Some((PulseKind::PiHalf, PulsePhase::Y)),
            QubitInput::Minus => Some((PulseKind::PiHalf, PulsePhase::MinusY)),
            QubitInput::PlusI => Some((PulseKind::PiHalf, PulsePhase::MinusX)),
            QubitInput::MinusI => Some((PulseKind::PiHalf, PulsePhase::X)),
        }
    }

    /// Ideal preparation unitary (2×2).
    pub fn prep_unitary(self) -> [[C64; 2]; 2] {
        match self.prep_pulse() {
            None => [[ONE, ZERO], [ZERO, ONE]],
            Some((k, p)) => ideal_rotation(k.angle(), p.angle()),
        }
    }

    pub fn is_superposition(self) -> bool {
        !matches!(self, QubitInput::Zero | QubitInput::One)
    }
}

/// Kronecker product of two 2×2 arrays as a 4×4 matrix (first factor = NV1).
pub fn kron2(a: &[[C64; 2]; 2], b: &[[C64; 2]; 2]) -> CMat {
    CMat::from_fn(4, 4, |r, c| a[r / 2][c / 2] * b[r % 2][c % 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::PairSpec;

    #[test]
    fn initial_block_weights() {
        let m = PairModel::build(&PairSpec::setting2()).unwrap();
        let sim = Simulator::new(&m, SimSettings::default()).unwrap();
        let (psi, w) = sim.initial_block();
        assert_eq!(psi.ncols(), 9);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mixed = SimSettings { f_init: [0.8, 1.0], nuclear: NuclearInit::Polarized, ..SimSettings::default() };
        let sim = Simulator::new(&m, mixed).unwrap();
        let (psi, w) = sim.initial_block();
        assert_eq!(psi.ncols(), 3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let bad = SimSettings { f_init: [0.2, 1.0], ..SimSettings::default() };
        assert!(Simulator::new(&m, bad).is_err());
    }

    #[test]
    fn input_states_match_vectors() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let want = [
            (QubitInput::Plus, C64::new(s, 0.0)),
            (QubitInput::Minus, C64::new(-s, 0.0)),
            (QubitInput::PlusI, C64::new(0.0, s)),
            (QubitInput::MinusI, C64::new(0.0, -s)),
        ];
        for (inp, amp1) in want {
            let u = inp.prep_unitary();
            assert!((u[0][0] - C64::new(s, 0.0)).norm() < 1e-12, "{inp:?}");
            assert!((u[1][0] - amp1).norm() < 1e-12, "{inp:?}");
        }
    }

    #[test]
    fn qubit_unitary_embedding() {
        let m = PairModel::build(&PairSpec::setting2()).unwrap();
        let sim = Simulator::new(&m, SimSettings::default()).unwrap();
        let x = [[ZERO, ONE], [ONE, ZERO]];
        let id = [[ONE, ZERO], [ZERO, ONE]];
        let rho = sim.run_with_ideal(&Sequence::new(), &kron2(&x, &id), &Sequence::new());
        let q = qubit_block(&rho, &m);
        assert!((q[(2, 2)].re - 1.0).abs() < 1e-12);
    }
}
