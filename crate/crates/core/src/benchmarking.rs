//! Repetitive and randomized benchmarking, error-per-gate algebra, average
//! gate fidelity and the error-source ablation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{electron_state_from_block, matmul, CMat, C64, ONE, ZERO};
use crate::clifford::{CliffordGroup, GpcStats, NativeGate, Pauli, Tableau};
use crate::error::{Error, Result};
use crate::experiment::{apply_qubit_unitary, basis_index, kron2, NuclearInit, QubitInput, SimSettings, Simulator};
use crate::fit::{fit_exponential_decay, FitResult};
use crate::hamiltonian::{PairModel, PairSpec};
use crate::propagation::{PulseKind, ReducedModel, Sequence, Target};
use crate::readout::{electron_polarizations, normalized_mixture_signal, readout_electron, reference_signal, ChargeConfig, ChargeMixture};
use crate::sequences::{build_sqrt_zz, reduced_tau2, sqrt_zz_ideal, GateCalibration, PulseShape};

// ---------------------------------------------------------------- decay fits

/// Single-exponential decay y = y0 + a·pⁿ with derived error metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRecord {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub fit: FitResult,
    pub p: f64,
    pub p_sigma: f64,
    pub a: f64,
    pub y0: f64,
    /// Decay constant N_d = −1/ln p (gate counts).
    pub n_decay: f64,
    /// 1 − p.
    pub pepg: f64,
    /// False when the fitted p leaves (0, 1].
    pub p_in_range: bool,
}

impl DecayRecord {
    /// Error per Clifford for an `n_qubits` register.
    pub fn epc(&self, n_qubits: usize) -> f64 {
        epc_from_p(self.p, n_qubits)
    }

    pub fn epc_sigma(&self, n_qubits: usize) -> f64 {
        depolarizing_factor(n_qubits) * self.p_sigma
    }
}

pub fn fit_decay(xs: &[f64], ys: &[f64], fix_y0: Option<f64>) -> Result<DecayRecord> {
    if xs.len() < 4 {
        return Err(Error::Fit(format!("decay fit needs at least 4 points, got {}", xs.len())));
    }
    let fit = fit_exponential_decay(xs, ys, fix_y0)?;
    if !fit.converged {
        return Err(Error::Fit("decay fit did not converge".into()));
    }
    let (p, a, y0) = (fit.params[0], fit.params[1], fit.params[2]);
    Ok(DecayRecord {
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        p,
        p_sigma: fit.sigmas[0],
        a,
        y0,
        n_decay: if p < 1.0 && p > 0.0 { -1.0 / p.ln() } else { f64::INFINITY },
        pepg: 1.0 - p,
        p_in_range: p > 0.0 && p <= 1.0 + 1e-12,
        fit,
    })
}

fn depolarizing_factor(n_qubits: usize) -> f64 {
    let d = (1u64 << n_qubits) as f64;
    (d - 1.0) / d
}

/// EPC = (2ⁿ − 1)/2ⁿ·(1 − p).
pub fn epc_from_p(p: f64, n_qubits: usize) -> f64 {
    depolarizing_factor(n_qubits) * (1.0 - p)
}

pub fn p_from_epc(epc: f64, n_qubits: usize) -> f64 {
    1.0 - epc / depolarizing_factor(n_qubits)
}

/// Polarization loss per gate of length `t_gate` against the mean T2 (all µs).
pub fn coherence_limit(t_gate: f64, t2_nv1: f64, t2_nv2: f64) -> Result<f64> {
    if !(t_gate >= 0.0) || !(t2_nv1 > 0.0) || !(t2_nv2 > 0.0) {
        return Err(Error::InvalidParameter(format!("coherence limit needs t_gate ≥ 0 and T2 > 0, got {t_gate}, {t2_nv1}, {t2_nv2}")));
    }
    Ok(1.0 - (-t_gate / ((t2_nv1 + t2_nv2) / 2.0)).exp())
}

/// EPC = 1 − (1 − EPG_2q)^GPC_2q·(1 − EPG_1q)^GPC_1q.
pub fn epc_from_gate_errors(epg_2q: f64, epg_1q: f64, gpc_1q: f64, gpc_2q: f64) -> f64 {
    1.0 - (1.0 - epg_2q).powf(gpc_2q) * (1.0 - epg_1q).powf(gpc_1q)
}

/// EPC_1q = 1 − (1 − EPG_1q)^GPC_1q.
pub fn epc1q_from_epg1q(epg_1q: f64, gpc_1q: f64) -> f64 {
    1.0 - (1.0 - epg_1q).powf(gpc_1q)
}

pub fn epg1q_from_epc1q(epc_1q: f64, gpc_1q: f64) -> f64 {
    1.0 - (1.0 - epc_1q).powf(1.0 / gpc_1q)
}

/// Solve 1 − EPC = (1 − EPG_2q)^GPC_2q·(1 − EPC_1q) for EPG_2q.
pub fn extract_epg2q(epc: f64, epc_1q: f64, gpc_2q: f64) -> Result<f64> {
    let unit = |v: f64| (0.0..1.0).contains(&v);
    if !unit(epc) || !unit(epc_1q) || !(gpc_2q > 0.0) {
        return Err(Error::InvalidParameter(format!("need EPC, EPC_1q in [0, 1) and GPC_2q > 0, got {epc}, {epc_1q}, {gpc_2q}")));
    }
    let epg = 1.0 - ((1.0 - epc) / (1.0 - epc_1q)).powf(1.0 / gpc_2q);
    if epg < -1e-12 {
        return Err(Error::InvalidState(format!("EPC_1q = {epc_1q} exceeds EPC = {epc}: negative two-qubit error {epg}")));
    }
    Ok(epg.max(0.0))
}

// ------------------------------------------------------- average gate fidelity

/// Average fidelity of a linear map `dmap` (acting on d×d operators) to the
/// target unitary, from its action on every |i⟩⟨j|.
pub fn average_gate_fidelity<F>(dmap: F, target: &CMat) -> Result<f64>
where
    F: Fn(&CMat) -> CMat,
{
    let d = target.nrows();
    if !target.is_square() {
        return Err(Error::Dimension("target must be square".into()));
    }
    let mut acc = 0.0;
    let mut identity_image = CMat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut e = CMat::zeros(d, d);
            e[(i, j)] = ONE;
            let out = dmap(&e);
            if out.nrows() != d || out.ncols() != d {
                return Err(Error::Dimension(format!("map returned {}×{}", out.nrows(), out.ncols())));
            }
            // ⟨i|T†·D(|i⟩⟨j|)·T|j⟩
            let v = (0..d).map(|a| (0..d).map(|b| target[(a, i)].conj() * out[(a, b)] * target[(b, j)]).sum::<C64>()).sum::<C64>();
            acc += v.re;
            if i == j {
                identity_image += &out;
            }
        }
    }
    let tr = identity_image.trace().re;
    Ok((acc + tr) / (d * (d + 1)) as f64)
}

/// Images D(|i⟩⟨j|) (row-major over i, j) of the qubit-subspace map realized
/// by `seq`, nuclear spins traced out with the simulator's nuclear state.
pub fn gate_dynamical_map(sim: &Simulator, seq: &Sequence) -> Vec<CMat> {
    let model = sim.model();
    let nuclear: Vec<(usize, usize, f64)> = match sim.settings.nuclear {
        NuclearInit::Mixed => (0..9).map(|k| (k / 3, k % 3, 1.0 / 9.0)).collect(),
        NuclearInit::Polarized => vec![(1, 1, 1.0)],
    };
    let lv = |q: usize| [model.level(0, (q >> 1) as u8), model.level(1, (q & 1) as u8)];
    let mut psi = CMat::zeros(81, 4 * nuclear.len());
    for q in 0..4 {
        let [e1, e2] = lv(q);
        for (k, &(n1, n2, _)) in nuclear.iter().enumerate() {
            psi[(basis_index(e1, n1, e2, n2), q * nuclear.len() + k)] = ONE;
        }
    }
    sim.prop.apply(seq, 0.0, &mut psi);
    let rows: Vec<[usize; 2]> = (0..4).map(lv).collect();
    let mut out = Vec::with_capacity(16);
    for i in 0..4 {
        for j in 0..4 {
            let mut m = CMat::zeros(4, 4);
            for (k, &(_, _, w)) in nuclear.iter().enumerate() {
                let (ci, cj) = (i * nuclear.len() + k, j * nuclear.len() + k);
                for a in 0..4 {
                    for b in 0..4 {
                        let mut s = ZERO;
                        for m1 in 0..3 {
                            for m2 in 0..3 {
                                let ra = basis_index(rows[a][0], m1, rows[a][1], m2);
                                let rb = basis_index(rows[b][0], m1, rows[b][1], m2);
                                s += psi[(ra, ci)] * psi[(rb, cj)].conj();
                            }
                        }
                        m[(a, b)] += s * w;
                    }
                }
            }
            out.push(m);
        }
    }
    out
}

/// Average fidelity of the simulated sequence to `target` (4×4).
pub fn simulated_gate_fidelity(sim: &Simulator, seq: &Sequence, target: &CMat) -> Result<f64> {
    let images = gate_dynamical_map(sim, seq);
    average_gate_fidelity(
        |e| {
            let mut out = CMat::zeros(4, 4);
            for (k, img) in images.iter().enumerate() {
                out += img * e[(k / 4, k % 4)];
            }
            out
        },
        target,
    )
}

// ---------------------------------------------------------- native gate set

/// Pulse realization of the native gates: back-to-back single pulses and the
/// calibrated √ZZ body.
#[derive(Clone, Debug)]
pub struct NativeGateSet {
    pub shape: PulseShape,
    pub calibration: GateCalibration,
    sqrt_zz: Sequence,
}

impl NativeGateSet {
    pub fn new(shape: PulseShape, calibration: GateCalibration) -> Result<Self> {
        let sqrt_zz = build_sqrt_zz(calibration.tau1, calibration.tau2_sqrtzz, calibration.n_pi, shape)?;
        Ok(Self { shape, calibration, sqrt_zz })
    }

    pub fn sqrt_zz(&self) -> &Sequence {
        &self.sqrt_zz
    }

    /// Pulses for `gates`; `targets[q]` is the NV carrying logical qubit q.
    pub fn sequence(&self, gates: &[NativeGate], targets: [Target; 2]) -> Result<Sequence> {
        let mut seq = Sequence::new();
        for g in gates {
            match *g {
                NativeGate::SqrtZz => seq.extend(&self.sqrt_zz),
                NativeGate::Rotation { qubit, kind, phase } => seq.push_pulse(self.shape.segment(targets[qubit], kind, phase)?),
            }
        }
        Ok(seq)
    }

    /// Mean single-qubit pulse length over the Clifford decompositions, ns.
    pub fn mean_single_qubit_duration(&self, n_qubits: usize) -> Result<f64> {
        let g = CliffordGroup::get(n_qubits)?;
        let (mut total, mut count) = (0.0, 0usize);
        for i in 0..g.size() {
            for gate in g.decomposition(i) {
                if let NativeGate::Rotation { kind, .. } = gate {
                    total += self.shape.pi_duration() * if *kind == PulseKind::Pi { 1.0 } else { 0.5 };
                    count += 1;
                }
            }
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }
}

const NATURAL: [Target; 2] = [Target::Nv1, Target::Nv2];

fn contrasts(model: &PairModel) -> [f64; 2] {
    [model.spec.nv[0].contrast_alpha, model.spec.nv[1].contrast_alpha]
}

// ----------------------------------------------------- repetitive benchmarking

/// The 9 product inputs of the repetitive benchmark: three each with zero,
/// one and two qubits in superposition.
pub fn repetitive_inputs() -> Vec<[QubitInput; 2]> {
    use QubitInput::*;
    vec![
        [Zero, Zero],
        [Zero, One],
        [One, Zero],
        [MinusI, Zero],
        [Zero, MinusI],
        [Plus, Zero],
        [MinusI, MinusI],
        [Plus, Plus],
        [PlusI, Minus],
    ]
}

/// Number of qubits of a product input in superposition.
pub fn superposition_count(input: &[QubitInput; 2]) -> usize {
    input.iter().filter(|q| q.is_superposition()).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitiveConfig {
    pub input: [QubitInput; 2],
    pub n_list: Vec<usize>,
    /// Append the ideal reversal to |00⟩.
    pub reverse: bool,
    pub fix_y0: Option<f64>,
}

/// Normalized signal of one charge configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigTrace {
    pub config: ChargeConfig,
    pub signal: Vec<f64>,
    pub modulation_depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitiveResult {
    pub input: [QubitInput; 2],
    pub n: Vec<usize>,
    /// Charge-mixture signal normalized to the mixture's |00⟩ level.
    pub signal: Vec<f64>,
    /// Mean at n ≡ 0 (mod 4) minus mean at n ≡ 2 (mod 4).
    pub modulation_depth: f64,
    /// Largest spread between charge configurations at n ≡ 0 (mod 4).
    pub mod0_charge_spread: f64,
    pub per_config: Vec<ConfigTrace>,
    /// `None` when the trace is too short or flat to fit.
    pub decay: Option<DecayRecord>,
}

fn modulation_depth(n: &[usize], s: &[f64]) -> f64 {
    let mean = |r: usize| {
        let v: Vec<f64> = n.iter().zip(s).filter(|(k, _)| *k % 4 == r).map(|(_, v)| *v).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    mean(0) - mean(2)
}

fn power(u: &CMat, n: usize) -> CMat {
    (0..n).fold(CMat::identity(u.nrows(), u.ncols()), |acc, _| matmul(u, &acc))
}

/// Dynamics used by the repetitive benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum RepetitiveEngine {
    /// Full 81-level pair with the given propagation settings.
    Full(SimSettings),
    /// Four-level qubit pair with zero detunings; only the dipolar phase and
    /// finite pulses act.
    Reduced { step_density: f64 },
}

/// Apply the √ZZ gate n times to a product input and read out, averaged over
/// the charge mixture.
pub fn repetitive_benchmark(
    model: &PairModel,
    engine: RepetitiveEngine,
    gates: &NativeGateSet,
    cfg: &RepetitiveConfig,
    charge: &ChargeMixture,
) -> Result<RepetitiveResult> {
    charge.validate()?;
    if cfg.n_list.is_empty() {
        return Err(Error::InvalidParameter("empty repetition list".into()));
    }
    let alpha = contrasts(model);
    let mut prep = Sequence::new();
    for (k, inp) in cfg.input.iter().enumerate() {
        if let Some((kind, phase)) = inp.prep_pulse() {
            prep.push_pulse(gates.shape.segment(NATURAL[k], kind, phase)?);
        }
    }
    let p_ideal = kron2(&cfg.input[0].prep_unitary(), &cfg.input[1].prep_unitary());
    let n_max = *cfg.n_list.iter().max().unwrap();
    let g = sqrt_zz_ideal();
    let reversal = |n: usize| matmul(&power(&g, n), &p_ideal).adjoint();

    // per coupling (on, off): NV polarizations after n gates (+ reversal)
    let pol: Vec<Vec<[f64; 2]>> = match engine {
        RepetitiveEngine::Full(settings) => {
            let uncoupled = model.with_coupling(0.0)?;
            let sims = [Simulator::new(model, settings)?, Simulator::new(&uncoupled, settings)?];
            sims.par_iter()
                .map(|sim| {
                    let (mut psi, w) = sim.initial_block();
                    let mut t = sim.prop.apply(&prep, 0.0, &mut psi);
                    let mut out = vec![None; n_max + 1];
                    for n in 0..=n_max {
                        if cfg.n_list.contains(&n) {
                            let mut snap = psi.clone();
                            if cfg.reverse {
                                apply_qubit_unitary(&mut snap, sim.model(), &reversal(n));
                            }
                            let rho = electron_state_from_block(&snap, &w);
                            out[n] = Some(electron_polarizations(&rho, model.excited));
                        }
                        if n < n_max {
                            t = sim.prop.apply(gates.sqrt_zz(), t, &mut psi);
                        }
                    }
                    cfg.n_list.iter().map(|&n| out[n].unwrap()).collect()
                })
                .collect()
        }
        RepetitiveEngine::Reduced { step_density } => {
            if !(step_density > 0.0) {
                return Err(Error::InvalidParameter("step density must be positive".into()));
            }
            [model.qubit_coupling(), 0.0]
                .iter()
                .map(|&gc| {
                    let rm = ReducedModel { delta1: 0.0, delta2: 0.0, g: gc };
                    let ug = rm.propagate(gates.sqrt_zz(), step_density);
                    let mut psi = CMat::zeros(4, 1);
                    psi[(0, 0)] = ONE;
                    psi = matmul(&rm.propagate(&prep, step_density), &psi);
                    let mut out = vec![[0.0; 2]; n_max + 1];
                    for (n, slot) in out.iter_mut().enumerate() {
                        let snap = if cfg.reverse { matmul(&reversal(n), &psi) } else { psi.clone() };
                        let d: Vec<f64> = (0..4).map(|i| snap[(i, 0)].norm_sqr()).collect();
                        *slot = [d[0] + d[1] - d[2] - d[3], d[0] + d[2] - d[1] - d[3]];
                        if n < n_max {
                            psi = matmul(&ug, &psi);
                        }
                    }
                    cfg.n_list.iter().map(|&n| out[n]).collect()
                })
                .collect()
        }
    };
    let mut raw = vec![[0.0; 4]; cfg.n_list.len()];
    for c in ChargeConfig::ALL {
        let neg = c.negative();
        let p = &pol[if c.coupled() { 0 } else { 1 }];
        for (i, pk) in p.iter().enumerate() {
            raw[i][c as usize] = (0..2).filter(|&k| neg[k]).map(|k| alpha[k] * pk[k]).sum::<f64>() / (alpha[0] + alpha[1]);
        }
    }
    let signal = raw.iter().map(|s| normalized_mixture_signal(*s, charge, alpha)).collect::<Result<Vec<f64>>>()?;
    let mut per_config = Vec::new();
    for c in ChargeConfig::ALL {
        let r = reference_signal(c, alpha);
        if r <= 0.0 {
            continue;
        }
        let s: Vec<f64> = raw.iter().map(|v| v[c as usize] / r).collect();
        per_config.push(ConfigTrace { config: c, modulation_depth: modulation_depth(&cfg.n_list, &s), signal: s });
    }
    let mut spread: f64 = 0.0;
    for (i, &n) in cfg.n_list.iter().enumerate() {
        if n % 4 != 0 {
            continue;
        }
        let vals: Vec<f64> = per_config.iter().map(|t| t.signal[i]).collect();
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        spread = spread.max(hi - lo);
    }
    let xs: Vec<f64> = cfg.n_list.iter().map(|&n| n as f64).collect();
    let decay = fit_decay(&xs, &signal, cfg.fix_y0).ok();
    Ok(RepetitiveResult {
        input: cfg.input,
        n: cfg.n_list.clone(),
        modulation_depth: modulation_depth(&cfg.n_list, &signal),
        mod0_charge_spread: spread,
        signal,
        per_config,
        decay,
    })
}

// ------------------------------------------------------ randomized benchmarking

/// Executes Clifford sequences and returns the readout signal.
pub trait RbBackend: Sync {
    fn n_qubits(&self) -> usize;

    /// Signal after the group elements `cliffords` (inverse included).
    fn survival(&self, cliffords: &[usize], rng: &mut ChaCha8Rng) -> Result<f64>;

    /// Native gates per Clifford actually executed, for the GPC record.
    fn gate_counts(&self, cliffords: &[usize]) -> (usize, usize) {
        let g = CliffordGroup::get(self.n_qubits()).expect("backend qubit count is 1 or 2");
        cliffords.iter().fold((0, 0), |(a, b), &c| {
            let d = g.decomposition(c);
            let two = d.iter().filter(|x| x.is_two_qubit()).count();
            (a + d.len() - two, b + two)
        })
    }
}

/// Ideal gates followed by a depolarizing channel of strength `strength`
/// per Clifford. `trajectories = 0` evolves the density matrix exactly;
/// otherwise Pauli errors are sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepolarizingBackend {
    pub n_qubits: usize,
    pub strength: f64,
    pub trajectories: usize,
}

fn mean_z(diag: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for (k, &p) in diag.iter().enumerate() {
        let z: f64 = (0..n).map(|q| if k >> (n - 1 - q) & 1 == 0 { 1.0 } else { -1.0 }).sum();
        s += p * z / n as f64;
    }
    s
}

impl RbBackend for DepolarizingBackend {
    fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    fn survival(&self, cliffords: &[usize], rng: &mut ChaCha8Rng) -> Result<f64> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::InvalidParameter(format!("depolarizing strength {} outside [0, 1]", self.strength)));
        }
        let g = CliffordGroup::get(self.n_qubits)?;
        let d = 1usize << self.n_qubits;
        if self.trajectories == 0 {
            let mut rho = CMat::zeros(d, d);
            rho[(0, 0)] = ONE;
            let mix = CMat::identity(d, d) * C64::from(self.strength / d as f64);
            for &c in cliffords {
                let u = g.unitary(c);
                rho = matmul(&matmul(u, &rho), &u.adjoint()) * C64::from(1.0 - self.strength) + &mix;
            }
            let diag: Vec<f64> = (0..d).map(|k| rho[(k, k)].re).collect();
            return Ok(mean_z(&diag, self.n_qubits));
        }
        let mut total = 0.0;
        for _ in 0..self.trajectories {
            let mut psi = CMat::zeros(d, 1);
            psi[(0, 0)] = ONE;
            for &c in cliffords {
                psi = matmul(g.unitary(c), &psi);
                if rng.random::<f64>() < self.strength {
                    let k: u8 = rng.random_range(0..(d * d) as u8);
                    let p = Pauli { r: 0, x: k % d as u8, z: k / d as u8 };
                    psi = matmul(&p.matrix(self.n_qubits), &psi);
                }
            }
            let diag: Vec<f64> = (0..d).map(|k| psi[(k, 0)].norm_sqr()).collect();
            total += mean_z(&diag, self.n_qubits);
        }
        Ok(total / self.trajectories as f64)
    }
}

/// How Clifford sequences map onto the register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbMode {
    /// Two-qubit Cliffords with √ZZ.
    TwoQubit,
    /// Two-qubit Cliffords with the √ZZ gates removed and per-qubit
    /// correction pulses appended.
    Stripped,
    /// Single-qubit Cliffords on one NV; the other idles.
    Bare(Target),
}

/// Pulse-level simulation of the native gate set.
pub struct PulseBackend<'m> {
    pub sim: Simulator<'m>,
    pub gates: NativeGateSet,
    pub mode: RbMode,
}

impl<'m> PulseBackend<'m> {
    pub fn new(model: &'m PairModel, settings: SimSettings, gates: NativeGateSet, mode: RbMode) -> Result<Self> {
        Ok(Self { sim: Simulator::new(model, settings)?, gates, mode })
    }

    /// Native gate list executed for `cliffords`.
    pub fn native_gates(&self, cliffords: &[usize]) -> Result<Vec<NativeGate>> {
        let g = CliffordGroup::get(self.n_qubits())?;
        let mut out: Vec<NativeGate> = cliffords.iter().flat_map(|&c| g.decomposition(c).iter().copied()).collect();
        if self.mode == RbMode::Stripped {
            out.retain(|x| !x.is_two_qubit());
            let c1 = CliffordGroup::one_qubit();
            for q in 0..2 {
                let u = out
                    .iter()
                    .filter_map(|x| match *x {
                        NativeGate::Rotation { qubit, kind, phase } if qubit == q => Some(NativeGate::rot(0, kind, phase)),
                        _ => None,
                    })
                    .fold(CMat::identity(2, 2), |acc, x| matmul(&x.unitary(1), &acc));
                let i = c1.find(&Tableau::from_unitary(&u).expect("single-qubit product is Clifford")).unwrap();
                for x in c1.decomposition(c1.inverse(i)) {
                    if let NativeGate::Rotation { kind, phase, .. } = *x {
                        out.push(NativeGate::rot(q, kind, phase));
                    }
                }
            }
        }
        Ok(out)
    }
}

impl RbBackend for PulseBackend<'_> {
    fn n_qubits(&self) -> usize {
        match self.mode {
            RbMode::Bare(_) => 1,
            _ => 2,
        }
    }

    fn survival(&self, cliffords: &[usize], _rng: &mut ChaCha8Rng) -> Result<f64> {
        let model = self.sim.model();
        let natives = self.native_gates(cliffords)?;
        let (targets, alpha) = match self.mode {
            RbMode::Bare(t) => {
                let mut a = [0.0; 2];
                a[t.index()] = 1.0;
                ([t, t], a)
            }
            _ => (NATURAL, contrasts(model)),
        };
        let seq = self.gates.sequence(&natives, targets)?;
        readout_electron(&self.sim.run(&seq), model.excited, alpha, [true, true])
    }

    fn gate_counts(&self, cliffords: &[usize]) -> (usize, usize) {
        let g = self.native_gates(cliffords).unwrap_or_default();
        let two = g.iter().filter(|x| x.is_two_qubit()).count();
        (g.len() - two, two)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbConfig {
    pub lengths: Vec<usize>,
    pub n_random: usize,
    pub seed: u64,
    /// Offset held fixed in the decay fit; `None` fits it.
    pub fix_y0: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbResult {
    pub n_qubits: usize,
    pub lengths: Vec<usize>,
    /// samples[length][randomization]
    pub samples: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub decay: DecayRecord,
    pub epc: f64,
    pub epc_sigma: f64,
    /// Executed native gates per Clifford (inverse included).
    pub gpc: GpcStats,
}

/// Random sequences of each length (plus the inverse), averaged per length
/// and fitted to y0 + a·pᵐ. Each sequence draws from its own generator keyed
/// by (seed, job index), so results do not depend on the worker count.
pub fn run_randomized_benchmarking<B: RbBackend>(backend: &B, cfg: &RbConfig) -> Result<RbResult> {
    if cfg.n_random == 0 || cfg.lengths.is_empty() {
        return Err(Error::InvalidParameter("randomized benchmarking needs lengths and n_random ≥ 1".into()));
    }
    let n = backend.n_qubits();
    let g = CliffordGroup::get(n)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.lengths.len()).flat_map(|l| (0..cfg.n_random).map(move |r| (l, r))).collect();
    let results = jobs
        .par_iter()
        .map(|&(l, r)| -> Result<(f64, usize, usize, usize)> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((l * cfg.n_random + r) as u64);
            let seq = g.rb_sequence(cfg.lengths[l], &mut rng);
            let (one, two) = backend.gate_counts(&seq);
            Ok((backend.survival(&seq, &mut rng)?, one, two, seq.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = vec![Vec::with_capacity(cfg.n_random); cfg.lengths.len()];
    let (mut one, mut two, mut count) = (0usize, 0usize, 0usize);
    for (&(l, _), &(s, a, b, c)) in jobs.iter().zip(&results) {
        samples[l].push(s);
        one += a;
        two += b;
        count += c;
    }
    let mean: Vec<f64> = samples.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let xs: Vec<f64> = jobs.iter().map(|&(l, _)| cfg.lengths[l] as f64).collect();
    let ys: Vec<f64> = results.iter().map(|r| r.0).collect();
    let decay = fit_decay(&xs, &ys, cfg.fix_y0)?;
    let c = count.max(1) as f64;
    Ok(RbResult {
        n_qubits: n,
        lengths: cfg.lengths.clone(),
        epc: decay.epc(n),
        epc_sigma: decay.epc_sigma(n),
        samples,
        mean,
        decay,
        gpc: GpcStats { gpc_1q: one as f64 / c, gpc_2q: two as f64 / c, samples: count },
    })
}

/// Effective single-qubit error from bare or stripped RB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleQubitRb {
    pub rb: RbResult,
    pub epc_1q: f64,
    pub epg_1q: f64,
    pub f_1q: f64,
}

/// EPC_1q = (2ⁿ−1)/2ⁿ·(1−p) with n the qubits of the sequence, converted to
/// an effective per-gate fidelity with the executed GPC_1q.
pub fn single_qubit_epc<B: RbBackend>(backend: &B, cfg: &RbConfig) -> Result<SingleQubitRb> {
    let rb = run_randomized_benchmarking(backend, cfg)?;
    let epc_1q = rb.epc;
    let epg_1q = if rb.gpc.gpc_1q > 0.0 { epg1q_from_epc1q(epc_1q, rb.gpc.gpc_1q) } else { 0.0 };
    Ok(SingleQubitRb { rb, epc_1q, epg_1q, f_1q: 1.0 - epg_1q })
}

// ---------------------------------------------------------------- ablation

/// Simulation variants of the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NuclearPolarized,
    HyperfineOff,
    CrosstalkOff,
    AllOff,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Full, Variant::NuclearPolarized, Variant::HyperfineOff, Variant::CrosstalkOff, Variant::AllOff];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NuclearPolarized => "nuclear_polarized",
            Variant::HyperfineOff => "hyperfine_off",
            Variant::CrosstalkOff => "crosstalk_leakage_off",
            Variant::AllOff => "all_off",
        }
    }

    fn apply(self, spec: &PairSpec, settings: SimSettings) -> (PairSpec, SimSettings) {
        let mut s = spec.clone();
        let mut st = settings;
        match self {
            Variant::Full => {}
            Variant::NuclearPolarized => st.nuclear = NuclearInit::Polarized,
            Variant::HyperfineOff => s.toggles.hyperfine = false,
            Variant::CrosstalkOff => s.toggles.crosstalk = false,
            Variant::AllOff => {
                s.toggles.hyperfine = false;
                s.toggles.crosstalk = false;
            }
        }
        (s, st)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSettings {
    /// Cyclic MHz.
    pub rabi: Vec<f64>,
    pub n_cliff: usize,
    pub n_random: usize,
    pub seed: u64,
    /// SPAM amplitude and offset of the decay model, supplied externally.
    pub spam_a: f64,
    pub spam_y0: f64,
    /// T2 per NV, µs.
    pub t2: [f64; 2],
    pub sim: SimSettings,
    /// Re-derive τ2 at each Rabi frequency from the reduced model; otherwise
    /// the given calibration is used throughout.
    pub recalibrate_tau2: bool,
}

impl AblationSettings {
    /// Gate timing used at `rabi`.
    pub fn calibration_at(&self, model: &PairModel, base: &GateCalibration, rabi: f64) -> Result<GateCalibration> {
        if !self.recalibrate_tau2 {
            return Ok(base.clone());
        }
        let shape = PulseShape::sine(rabi);
        let tau2 = reduced_tau2(model.qubit_coupling(), base.tau1, base.n_pi, shape, self.sim.step_density)?;
        GateCalibration::new(base.tau1, tau2, base.n_pi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub rabi: f64,
    pub tau2: f64,
    pub epc_t2: f64,
    /// Mean ⟨σz⟩ per variant, decoherence-free.
    pub z_sim: BTreeMap<String, f64>,
    /// Decay parameter per variant with decoherence applied; "no_decoherence"
    /// holds the full simulation without it.
    pub p: BTreeMap<String, f64>,
    pub delta_full: f64,
    /// Relative contributions: raw c_r per toggle and the attributed sources.
    pub contributions: BTreeMap<String, f64>,
    /// Some p left (0, 1].
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub points: Vec<AblationPoint>,
    pub toggles: Vec<String>,
    pub n_cliff: usize,
    pub seed: u64,
    pub spam_a: f64,
    pub spam_y0: f64,
    pub sim: SimSettings,
}

/// p = ((z − y0)/a)^(1/n).
pub fn decay_parameter(z: f64, a: f64, y0: f64, n_cliff: usize) -> f64 {
    let base = (z - y0) / a;
    if base <= 0.0 {
        return f64::NAN;
    }
    base.powf(1.0 / n_cliff as f64)
}

/// Relative contributions from the per-variant decay parameters.
pub fn attribute_contributions(p: &BTreeMap<String, f64>) -> Result<(f64, BTreeMap<String, f64>)> {
    let get = |k: &str| p.get(k).copied().ok_or_else(|| Error::InvalidParameter(format!("missing variant {k}")));
    let full = get("full")?;
    let delta_full = 1.0 - full;
    let cr = |k: &str| -> Result<f64> { Ok(1.0 - (1.0 - get(k)?) / delta_full) };
    let mut c = BTreeMap::new();
    let unpol = cr("nuclear_polarized")?;
    let hfs = cr("hyperfine_off")?;
    let ct = cr("crosstalk_leakage_off")?;
    let all = cr("all_off")?;
    let t2 = cr("no_decoherence")?;
    c.insert("c_nuclear_polarized".into(), unpol);
    c.insert("c_hyperfine_off".into(), hfs);
    c.insert("c_crosstalk_leakage_off".into(), ct);
    c.insert("c_all_off".into(), all);
    c.insert("unpolarized_nitrogen".into(), unpol);
    c.insert("misaligned_field".into(), hfs - unpol);
    c.insert("crosstalk_leakage".into(), ct);
    c.insert("decoherence".into(), t2);
    c.insert("residual".into(), (1.0 - t2) - all);
    Ok((delta_full, c))
}

/// RB at fixed length over a Rabi sweep with error sources toggled off.
pub fn error_ablation(spec: &PairSpec, calibration: &GateCalibration, s: &AblationSettings) -> Result<AblationReport> {
    if s.n_cliff == 0 || s.n_random == 0 || s.rabi.is_empty() {
        return Err(Error::InvalidParameter("ablation needs n_cliff, n_random ≥ 1 and a Rabi sweep".into()));
    }
    if !(s.spam_a > 0.0) {
        return Err(Error::InvalidParameter(format!("SPAM amplitude {} must be positive", s.spam_a)));
    }
    let variants: Vec<(Variant, PairModel, SimSettings)> = Variant::ALL
        .iter()
        .map(|&v| {
            let (sp, st) = v.apply(spec, s.sim);
            Ok((v, PairModel::build(&sp)?, st))
        })
        .collect::<Result<_>>()?;
    let rb = RbConfig { lengths: vec![s.n_cliff], n_random: s.n_random, seed: s.seed, fix_y0: Some(0.0) };
    let gpc = crate::clifford::gpc_exact(2)?;
    let mut points = Vec::with_capacity(s.rabi.len());
    for &rabi in &s.rabi {
        let calibration = &s.calibration_at(&variants[0].1, calibration, rabi)?;
        let gates = NativeGateSet::new(PulseShape::sine(rabi), calibration.clone())?;
        let epg_2q = coherence_limit(calibration.gate_time_us(), s.t2[0], s.t2[1])?;
        let epg_1q = coherence_limit(gates.mean_single_qubit_duration(2)? * 1e-3, s.t2[0], s.t2[1])?;
        let epc_t2 = epc_from_gate_errors(epg_2q, epg_1q, gpc.gpc_1q, gpc.gpc_2q);
        let mut z_sim = BTreeMap::new();
        let mut p = BTreeMap::new();
        for (v, model, st) in &variants {
            let backend = PulseBackend::new(model, *st, gates.clone(), RbMode::TwoQubit)?;
            let z = mean_survival(&backend, &rb)?;
            z_sim.insert(v.label().to_string(), z);
            p.insert(v.label().to_string(), decay_parameter(z * (1.0 - epc_t2), s.spam_a, s.spam_y0, s.n_cliff));
            if *v == Variant::Full {
                p.insert("no_decoherence".into(), decay_parameter(z, s.spam_a, s.spam_y0, s.n_cliff));
            }
        }
        let flagged = p.values().any(|&x| !(x > 0.0 && x <= 1.0));
        let (delta_full, contributions) = attribute_contributions(&p)?;
        points.push(AblationPoint { rabi, tau2: calibration.tau2_sqrtzz, epc_t2, z_sim, p, delta_full, contributions, flagged });
    }
    Ok(AblationReport {
        points,
        toggles: Variant::ALL.iter().map(|v| v.label().to_string()).collect(),
        n_cliff: s.n_cliff,
        seed: s.seed,
        spam_a: s.spam_a,
        spam_y0: s.spam_y0,
        sim: s.sim,
    })
}

/// Full-model RB survival at one Clifford length over a Rabi sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rabi: f64,
    pub tau2: f64,
    /// Mean ⟨σz⟩, decoherence-free.
    pub z_sim: f64,
    /// Decay parameter with decoherence and SPAM applied; NaN when undefined.
    pub p: f64,
}

/// The "full" column of [`error_ablation`] alone, for sweep shapes.
pub fn rabi_sweep(spec: &PairSpec, calibration: &GateCalibration, s: &AblationSettings) -> Result<Vec<SweepPoint>> {
    if s.n_cliff == 0 || s.n_random == 0 || s.rabi.is_empty() {
        return Err(Error::InvalidParameter("sweep needs n_cliff, n_random ≥ 1 and a Rabi sweep".into()));
    }
    let model = PairModel::build(spec)?;
    let rb = RbConfig { lengths: vec![s.n_cliff], n_random: s.n_random, seed: s.seed, fix_y0: Some(0.0) };
    let gpc = crate::clifford::gpc_exact(2)?;
    s.rabi
        .iter()
        .map(|&rabi| {
            let cal = s.calibration_at(&model, calibration, rabi)?;
            let gates = NativeGateSet::new(PulseShape::sine(rabi), cal.clone())?;
            let epg_2q = coherence_limit(cal.gate_time_us(), s.t2[0], s.t2[1])?;
            let epg_1q = coherence_limit(gates.mean_single_qubit_duration(2)? * 1e-3, s.t2[0], s.t2[1])?;
            let epc_t2 = epc_from_gate_errors(epg_2q, epg_1q, gpc.gpc_1q, gpc.gpc_2q);
            let z = mean_survival(&PulseBackend::new(&model, s.sim, gates, RbMode::TwoQubit)?, &rb)?;
            let p = decay_parameter(z * (1.0 - epc_t2), s.spam_a, s.spam_y0, s.n_cliff);
            Ok(SweepPoint { rabi, tau2: cal.tau2_sqrtzz, z_sim: z, p })
        })
        .collect()
}

/// Mean survival over all sequences of a single-length RB run.
fn mean_survival<B: RbBackend>(backend: &B, cfg: &RbConfig) -> Result<f64> {
    let g = CliffordGroup::get(backend.n_qubits())?;
    let vals = (0..cfg.n_random)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let seq = g.rb_sequence(cfg.lengths[0], &mut rng);
            backend.survival(&seq, &mut rng)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}
