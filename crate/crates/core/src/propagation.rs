//! Pulse envelopes, sequences, and rotating-frame propagation.
//!
//! Times are ns at the API and µs internally. The rotating frame is
//! V(t) = exp(−i·H_trans·t) with H_trans = ω1·S̃z1² + ω2·S̃z2², and
//! U_rot = V†·U so that H_rot = V†(H − H_trans)V.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::algebra::{expm_apply_taylor, matmul, CMat, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::hamiltonian::{ang, PairModel};

const PI: f64 = std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Nv1,
    Nv2,
}

impl Target {
    pub fn index(self) -> usize {
        match self {
            Target::Nv1 => 0,
            Target::Nv2 => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Target::Nv1
        } else {
            Target::Nv2
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    Pi,
    PiHalf,
}

impl PulseKind {
    pub fn angle(self) -> f64 {
        match self {
            PulseKind::Pi => PI,
            PulseKind::PiHalf => PI / 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PulsePhase {
    X,
    Y,
    #[serde(rename = "-X")]
    MinusX,
    #[serde(rename = "-Y")]
    MinusY,
}

impl PulsePhase {
    pub fn angle(self) -> f64 {
        match self {
            PulsePhase::X => 0.0,
            PulsePhase::Y => PI / 2.0,
            PulsePhase::MinusX => PI,
            PulsePhase::MinusY => 1.5 * PI,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Envelope {
    Sine,
    Rectangular,
    Instantaneous,
}

/// One microwave pulse on a single carrier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    pub target: Target,
    pub kind: PulseKind,
    pub phase: PulsePhase,
    pub envelope: Envelope,
    /// ns; zero for instantaneous pulses.
    pub duration: f64,
    /// Rabi frequency, cyclic MHz.
    pub rabi: f64,
}

/// π-pulse duration in ns at Rabi frequency `rabi` (MHz): 1/(2·rabi).
pub fn pi_duration_ns(rabi: f64) -> f64 {
    1e3 / (2.0 * rabi)
}

impl PulseSegment {
    pub fn new(target: Target, kind: PulseKind, phase: PulsePhase, envelope: Envelope, rabi: f64) -> Result<Self> {
        if envelope != Envelope::Instantaneous && !(rabi > 0.0 && rabi.is_finite()) {
            return Err(Error::InvalidParameter(format!("Rabi frequency must be positive, got {rabi}")));
        }
        let duration = match envelope {
            Envelope::Instantaneous => 0.0,
            _ => pi_duration_ns(rabi) * kind.angle() / PI,
        };
        Ok(Self { target, kind, phase, envelope, duration, rabi })
    }

    pub fn instantaneous(target: Target, kind: PulseKind, phase: PulsePhase) -> Self {
        Self { target, kind, phase, envelope: Envelope::Instantaneous, duration: 0.0, rabi: 0.0 }
    }

    /// Peak amplitude (rad/µs): (π/2)·Ωrabi for sine, Ωrabi for rectangular.
    pub fn peak(&self) -> f64 {
        match self.envelope {
            Envelope::Sine => PI / 2.0 * ang(self.rabi),
            Envelope::Rectangular => ang(self.rabi),
            Envelope::Instantaneous => 0.0,
        }
    }

    /// Amplitude (rad/µs) at local time `t_ns` into the pulse.
    pub fn amplitude(&self, t_ns: f64) -> f64 {
        match self.envelope {
            Envelope::Sine => self.peak() * (PI * t_ns / self.duration).sin(),
            Envelope::Rectangular => self.peak(),
            Envelope::Instantaneous => 0.0,
        }
    }
}

/// Ω(t) = Ωmax·sin(π t / T) with Ωmax fixed by ∫Ω dt = area (rad/µs).
pub fn sine_envelope(t_ns: f64, t_pulse_ns: f64, area: f64) -> Result<f64> {
    if !(t_pulse_ns > 0.0) {
        return Err(Error::InvalidParameter(format!("pulse length must be positive, got {t_pulse_ns}")));
    }
    if !(0.0..=t_pulse_ns).contains(&t_ns) {
        return Err(Error::InvalidParameter(format!("t = {t_ns} ns outside [0, {t_pulse_ns}]")));
    }
    let tp = t_pulse_ns * 1e-3;
    let peak = area * PI / (2.0 * tp);
    Ok(peak * (PI * t_ns / t_pulse_ns).sin())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Item {
    Pulse(PulseSegment),
    /// Free evolution, ns.
    Free(f64),
}

/// Serialized, non-overlapping list of pulses and free evolutions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub items: Vec<Item>,
}

impl Sequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_pulse(&mut self, p: PulseSegment) {
        self.items.push(Item::Pulse(p));
    }

    /// Append free evolution, merging with a preceding free item.
    pub fn push_free(&mut self, ns: f64) {
        if ns <= 0.0 {
            return;
        }
        if let Some(Item::Free(d)) = self.items.last_mut() {
            *d += ns;
        } else {
            self.items.push(Item::Free(ns));
        }
    }

    pub fn extend(&mut self, other: &Sequence) {
        for it in &other.items {
            match *it {
                Item::Pulse(p) => self.push_pulse(p),
                Item::Free(d) => self.push_free(d),
            }
        }
    }

    pub fn total_duration(&self) -> f64 {
        self.items
            .iter()
            .map(|it| match it {
                Item::Pulse(p) => p.duration,
                Item::Free(d) => *d,
            })
            .sum()
    }

    pub fn pulse_count(&self) -> usize {
        self.items.iter().filter(|i| matches!(i, Item::Pulse(_))).count()
    }
}

/// Pulses placed by center time; serialized into a [`Sequence`].
#[derive(Clone, Debug, Default)]
pub struct Schedule {
    pulses: Vec<(f64, PulseSegment)>,
    end: f64,
}

impl Schedule {
    pub fn new(end_ns: f64) -> Self {
        Self { pulses: Vec::new(), end: end_ns }
    }

    pub fn add(&mut self, center_ns: f64, p: PulseSegment) {
        self.pulses.push((center_ns, p));
    }

    pub fn set_end(&mut self, end_ns: f64) {
        self.end = end_ns;
    }

    pub fn serialize(&self) -> Result<Sequence> {
        let mut ps = self.pulses.clone();
        ps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut seq = Sequence::new();
        let mut t = 0.0;
        for (c, p) in ps {
            let start = c - p.duration / 2.0;
            if start < t - 1e-9 {
                return Err(Error::PulseOverlap(format!("pulse centered at {c:.3} ns starts before {t:.3} ns")));
            }
            seq.push_free(start - t);
            seq.push_pulse(p);
            t = start.max(t) + p.duration;
        }
        seq.push_free(self.end - t);
        Ok(seq)
    }
}

/// How pulses are propagated. Free evolution is always exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMode {
    /// Time-ordered product over the full rotating-frame Hamiltonian.
    Full,
    /// Rotating-wave Hamiltonian with cached, time-shifted pulse propagators.
    Rwa,
    /// Ideal qubit-subspace rotations of zero duration.
    Instantaneous,
}

pub const DEFAULT_STEP_DENSITY: f64 = 20.0;

/// Ideal exp(−iθ/2·(cosφ·X + sinφ·Y)) on a qubit.
pub fn ideal_rotation(theta: f64, phi: f64) -> [[C64; 2]; 2] {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let mi = C64::new(0.0, -1.0);
    [[C64::from(c), mi * s * C64::from_polar(1.0, -phi)], [mi * s * C64::from_polar(1.0, phi), C64::from(c)]]
}

/// Apply a 2×2 rotation to the rows of an 81-row block, mixing electron
/// level `first` (component 0) with `second` (component 1) of NV `k`.
pub fn apply_level_rotation(psi: &mut CMat, k: usize, first: usize, second: usize, r: &[[C64; 2]; 2]) {
    let stride = if k == 0 { 27 } else { 3 };
    for idx in 0..81 {
        if (idx / stride) % 3 != first {
            continue;
        }
        let j = (idx as isize + (second as isize - first as isize) * stride as isize) as usize;
        for c in 0..psi.ncols() {
            let (a, b) = (psi[(idx, c)], psi[(j, c)]);
            psi[(idx, c)] = r[0][0] * a + r[0][1] * b;
            psi[(j, c)] = r[1][0] * a + r[1][1] * b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct CacheKey {
    target: usize,
    kind: PulseKind,
    envelope: Envelope,
    rabi_bits: u64,
}

/// Propagation engine bound to one [`PairModel`].
pub struct Propagator<'m> {
    pub model: &'m PairModel,
    pub mode: PropagationMode,
    /// Samples per ns.
    pub step_density: f64,
    lambda: Vec<f64>,
    class: Vec<usize>,
    class_lambda: [f64; 4],
    static_part: CMat,
    drive: [CMat; 2],
    h_sec: CMat,
    k0: [CMat; 2],
    mu: [Vec<f64>; 2],
    n_exc: Vec<f64>,
    cache: Mutex<HashMap<CacheKey, Arc<CMat>>>,
}

impl<'m> Propagator<'m> {
    pub fn new(model: &'m PairModel, mode: PropagationMode, step_density: f64) -> Result<Self> {
        if !(step_density > 0.0 && step_density.is_finite()) {
            return Err(Error::InvalidParameter(format!("step density must be positive, got {step_density}")));
        }
        let lambda = model.frame_frequencies();
        let class: Vec<usize> = model.occupation.iter().map(|&(a, b)| (a as usize) * 2 + b as usize).collect();
        let w = model.carriers;
        let class_lambda = [0.0, w[1], w[0], w[0] + w[1]];
        let mut static_part = model.h_free.clone();
        for i in 0..81 {
            static_part[(i, i)] -= C64::from(lambda[i]);
        }
        let opts = model.mw_options();
        let drive = [model.drive_operator(0, opts), model.drive_operator(1, opts)];

        let mut h_sec = static_part.clone();
        for r in 0..81 {
            for c in 0..81 {
                if class[r] != class[c] {
                    h_sec[(r, c)] = ZERO;
                }
            }
        }
        let n_exc: Vec<f64> = model.occupation.iter().map(|&(a, b)| (a + b) as f64).collect();
        let mut k0 = [CMat::zeros(81, 81), CMat::zeros(81, 81)];
        let mut mu = [vec![0.0; 81], vec![0.0; 81]];
        for k in 0..2 {
            let xi0 = -model.drive_arg[k];
            let up = C64::from_polar(std::f64::consts::FRAC_1_SQRT_2, xi0);
            let down = up.conj();
            for r in 0..81 {
                mu[k][r] = lambda[r] - w[k] * n_exc[r];
                for c in 0..81 {
                    let d = drive[k][(r, c)];
                    if d == ZERO {
                        continue;
                    }
                    if n_exc[r] < n_exc[c] {
                        k0[k][(r, c)] = d * up;
                    } else if n_exc[r] > n_exc[c] {
                        k0[k][(r, c)] = d * down;
                    }
                }
            }
        }
        Ok(Self {
            model,
            mode,
            step_density,
            lambda,
            class,
            class_lambda,
            static_part,
            drive,
            h_sec,
            k0,
            mu,
            n_exc,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// V(t1)†·exp(−i·H_free·Δ)·V(t0) applied to `psi` (times in µs).
    pub fn free(&self, t0: f64, t1: f64, psi: &mut CMat) {
        if t1 <= t0 {
            return;
        }
        scale_rows(psi, &self.lambda, -t0);
        let mut out = self.model.free_eigen.apply(t1 - t0, psi);
        scale_rows(&mut out, &self.lambda, t1);
        *psi = out;
    }

    /// Rotating-frame propagator of free evolution over `t_ns`, starting at 0.
    pub fn propagate_static(&self, t_ns: f64) -> CMat {
        let mut u = CMat::identity(81, 81);
        self.free(0.0, t_ns * 1e-3, &mut u);
        u
    }

    /// Full rotating-frame Hamiltonian during a pulse at absolute time `t` (µs).
    pub fn rotating_hamiltonian(&self, p: &PulseSegment, t: f64, t_local_ns: f64) -> CMat {
        let k = p.target.index();
        let xi = -p.phase.angle() - self.model.drive_arg[k];
        let a = std::f64::consts::SQRT_2 * p.amplitude(t_local_ns) * (self.model.carriers[k] * t + xi).cos();
        let mut tab = [[ONE; 4]; 4];
        for (ca, row) in tab.iter_mut().enumerate() {
            for (cb, v) in row.iter_mut().enumerate() {
                *v = C64::from_polar(1.0, (self.class_lambda[ca] - self.class_lambda[cb]) * t);
            }
        }
        let ac = C64::from(a);
        CMat::from_fn(81, 81, |r, c| (self.static_part[(r, c)] + ac * self.drive[k][(r, c)]) * tab[self.class[r]][self.class[c]])
    }

    /// Rotating-wave Hamiltonian during a pulse at absolute time `t` (µs).
    pub fn rwa_hamiltonian(&self, p: &PulseSegment, t: f64, t_local_ns: f64) -> CMat {
        let k = p.target.index();
        let dxi = -p.phase.angle();
        let amp = p.amplitude(t_local_ns);
        let mu = &self.mu[k];
        let n = &self.n_exc;
        CMat::from_fn(81, 81, |r, c| {
            let kv = self.k0[k][(r, c)];
            let drive = if kv == ZERO {
                ZERO
            } else {
                let s = if n[r] < n[c] { 1.0 } else { -1.0 };
                kv * C64::from_polar(amp, (mu[r] - mu[c]) * t + s * dxi)
            };
            self.h_sec[(r, c)] + drive
        })
    }

    fn steps(&self, p: &PulseSegment) -> usize {
        ((p.duration * self.step_density).round() as usize).max(1)
    }

    /// Riemann product Π exp(−i·H(tᵢ)·τ) with tᵢ at interval starts.
    fn riemann<F>(&self, p: &PulseSegment, t0: f64, psi: &mut CMat, h_at: F)
    where
        F: Fn(&PulseSegment, f64, f64) -> CMat,
    {
        let n = self.steps(p);
        let tau_ns = p.duration / n as f64;
        for i in 0..n {
            let tl = i as f64 * tau_ns;
            let h = h_at(p, t0 + tl * 1e-3, tl);
            *psi = expm_apply_taylor(&h, tau_ns * 1e-3, psi);
        }
    }

    /// Cached rotating-wave propagator of a pulse starting at t = 0 with phase X.
    fn rwa_shape(&self, p: &PulseSegment) -> Arc<CMat> {
        let key = CacheKey { target: p.target.index(), kind: p.kind, envelope: p.envelope, rabi_bits: p.rabi.to_bits() };
        if let Some(u) = self.cache.lock().expect("pulse cache poisoned").get(&key) {
            return u.clone();
        }
        let mut shape = *p;
        shape.phase = PulsePhase::X;
        let mut u = CMat::identity(81, 81);
        self.riemann(&shape, 0.0, &mut u, |q, t, tl| self.rwa_hamiltonian(q, t, tl));
        let u = Arc::new(u);
        self.cache.lock().expect("pulse cache poisoned").insert(key, u.clone());
        u
    }

    /// Apply one pulse starting at absolute time `t0` (µs).
    pub fn pulse(&self, p: &PulseSegment, t0: f64, psi: &mut CMat) {
        if p.envelope == Envelope::Instantaneous || self.mode == PropagationMode::Instantaneous {
            let k = p.target.index();
            let r = ideal_rotation(p.kind.angle(), p.phase.angle());
            apply_level_rotation(psi, k, 1, self.model.excited[k], &r);
            return;
        }
        match self.mode {
            PropagationMode::Full => self.riemann(p, t0, psi, |q, t, tl| self.rotating_hamiltonian(q, t, tl)),
            PropagationMode::Rwa => {
                let k = p.target.index();
                let u = self.rwa_shape(p);
                let dxi = -p.phase.angle();
                // U = W(t0)·Z·U0·Z†·W(t0)†, W = diag(e^{iμ t0}), Z = diag(e^{−iΔξ N})
                let phase_in: Vec<f64> = (0..81).map(|r| -self.mu[k][r] * t0 + dxi * self.n_exc[r]).collect();
                let mut tmp = psi.clone();
                for r in 0..81 {
                    let f = C64::from_polar(1.0, phase_in[r]);
                    for c in 0..tmp.ncols() {
                        tmp[(r, c)] *= f;
                    }
                }
                let mut out = matmul(&u, &tmp);
                for r in 0..81 {
                    let f = C64::from_polar(1.0, -phase_in[r]);
                    for c in 0..out.ncols() {
                        out[(r, c)] *= f;
                    }
                }
                *psi = out;
            }
            PropagationMode::Instantaneous => unreachable!(),
        }
    }

    /// Propagate a block of states through `seq` starting at `t0_ns`.
    /// Returns the end time in ns.
    pub fn apply(&self, seq: &Sequence, t0_ns: f64, psi: &mut CMat) -> f64 {
        let mut t = t0_ns;
        for it in &seq.items {
            match *it {
                Item::Free(d) => {
                    self.free(t * 1e-3, (t + d) * 1e-3, psi);
                    t += d;
                }
                Item::Pulse(p) => {
                    self.pulse(&p, t * 1e-3, psi);
                    t += p.duration;
                }
            }
        }
        t
    }

    /// Full 81-dim rotating-frame propagator of `seq`.
    pub fn propagate_driven(&self, seq: &Sequence) -> CMat {
        let mut u = CMat::identity(81, 81);
        self.apply(seq, 0.0, &mut u);
        u
    }
}

fn scale_rows(psi: &mut CMat, lambda: &[f64], t: f64) {
    // multiply row r by e^{i·λ_r·t}
    for (r, &l) in lambda.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let f = C64::from_polar(1.0, l * t);
        for c in 0..psi.ncols() {
            psi[(r, c)] *= f;
        }
    }
}

/// Parameters of the reduced four-level qubit-pair model (rad/µs).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedModel {
    pub delta1: f64,
    pub delta2: f64,
    pub g: f64,
}

impl ReducedModel {
    /// Propagate a sequence; finite pulses use the Riemann product.
    pub fn propagate(&self, seq: &Sequence, step_density: f64) -> CMat {
        let mut u = CMat::identity(4, 4);
        let hfree = [self.delta2, 0.0, self.delta1 + self.delta2 - self.g, self.delta1];
        for it in &seq.items {
            match *it {
                Item::Free(d) => {
                    let t = d * 1e-3;
                    for (r, &e) in hfree.iter().enumerate() {
                        let f = C64::from_polar(1.0, -e * t);
                        for c in 0..4 {
                            u[(r, c)] *= f;
                        }
                    }
                }
                Item::Pulse(p) if p.envelope == Envelope::Instantaneous => {
                    let rot = ideal_rotation(p.kind.angle(), p.phase.angle());
                    let pairs: [(usize, usize); 2] = if p.target == Target::Nv1 { [(0, 2), (1, 3)] } else { [(0, 1), (2, 3)] };
                    for (a, b) in pairs {
                        for c in 0..4 {
                            let (x, y) = (u[(a, c)], u[(b, c)]);
                            u[(a, c)] = rot[0][0] * x + rot[0][1] * y;
                            u[(b, c)] = rot[1][0] * x + rot[1][1] * y;
                        }
                    }
                }
                Item::Pulse(p) => {
                    let n = ((p.duration * step_density).round() as usize).max(1);
                    let tau = p.duration / n as f64;
                    for i in 0..n {
                        let om = p.amplitude(i as f64 * tau);
                        let ph = p.phase.angle();
                        let h = if p.target == Target::Nv1 {
                            crate::hamiltonian::reduced_two_qubit_hamiltonian_phased(self.delta1, self.delta2, self.g, om, ph, 0.0, 0.0)
                        } else {
                            crate::hamiltonian::reduced_two_qubit_hamiltonian_phased(self.delta1, self.delta2, self.g, 0.0, 0.0, om, ph)
                        };
                        u = crate::algebra::expm_hermitian(&h, tau * 1e-3) * u;
                    }
                }
            }
        }
        u
    }
}

/// Distance of a sequence propagated at `step_density` from a denser reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub step_density: f64,
    /// max |U(d) − U_ref| over entries.
    pub max_abs_error: f64,
    /// 1 − |Tr(U_ref†·U(d))|²/D².
    pub infidelity: f64,
}

/// Propagate with `propagate(density)` at each density and compare with the
/// result at `reference`.
pub fn step_convergence<F>(propagate: F, densities: &[f64], reference: f64) -> Result<Vec<ConvergencePoint>>
where
    F: Fn(f64) -> Result<CMat>,
{
    if densities.iter().any(|&d| !(d > 0.0 && d < reference)) {
        return Err(Error::InvalidParameter(format!("densities must lie in (0, {reference})")));
    }
    let u_ref = propagate(reference)?;
    densities
        .iter()
        .map(|&d| {
            let u = propagate(d)?;
            Ok(ConvergencePoint {
                step_density: d,
                max_abs_error: crate::algebra::max_abs(&(&u - &u_ref)),
                infidelity: 1.0 - crate::algebra::process_fidelity(&u_ref, &u),
            })
        })
        .collect()
}

/// Observed order between consecutive points: ln(e_i/e_{i+1}) / ln(d_{i+1}/d_i).
pub fn observed_orders(points: &[ConvergencePoint]) -> Vec<f64> {
    points
        .windows(2)
        .map(|w| (w[0].max_abs_error / w[1].max_abs_error).ln() / (w[1].step_density / w[0].step_density).ln())
        .collect()
}

#[cfg(test)]
#[allow(clippy::identity_op, clippy::erasing_op)] // index arithmetic spelled out per spin slot
mod tests {
    use super::*;
    use crate::algebra::{max_abs, unitarity_error};
    use crate::geometry::FieldGeometry;
    use crate::hamiltonian::PairSpec;

    #[test]
    fn sine_envelope_values() {
        let rabi = 23.7;
        let tp = pi_duration_ns(rabi);
        assert!((tp - 21.097).abs() < 1e-3);
        let peak = sine_envelope(tp / 2.0, tp, PI).unwrap();
        assert!((peak - PI / 2.0 * ang(rabi)).abs() < 1e-9);
        // Simpson quadrature of the area
        let n = 2000;
        let h = tp / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * sine_envelope(i as f64 * h, tp, PI).unwrap();
        }
        let area = s * h / 3.0 * 1e-3;
        assert!((area - PI).abs() < 1e-9, "{area}");
        assert!(sine_envelope(-1.0, tp, PI).is_err());
        assert!(sine_envelope(tp + 1.0, tp, PI).is_err());
    }

    #[test]
    fn pulse_segment_area() {
        for env in [Envelope::Sine, Envelope::Rectangular] {
            for kind in [PulseKind::Pi, PulseKind::PiHalf] {
                let p = PulseSegment::new(Target::Nv1, kind, PulsePhase::X, env, 15.51).unwrap();
                let n = 4000;
                let h = p.duration / n as f64;
                let mut s = 0.0;
                for i in 0..=n {
                    let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    s += w * p.amplitude(i as f64 * h);
                }
                let area = s * h / 3.0 * 1e-3;
                assert!((area - kind.angle()).abs() < 1e-9, "{env:?} {kind:?} {area}");
            }
        }
    }

    #[test]
    fn schedule_serializes_and_detects_overlap() {
        let p = PulseSegment::new(Target::Nv1, PulseKind::Pi, PulsePhase::X, Envelope::Sine, 23.7).unwrap();
        let mut s = Schedule::new(200.0);
        s.add(50.0, p);
        s.add(150.0, p);
        let seq = s.serialize().unwrap();
        assert!((seq.total_duration() - 200.0).abs() < 1e-12);
        assert_eq!(seq.pulse_count(), 2);
        let mut s = Schedule::new(100.0);
        s.add(50.0, p);
        s.add(60.0, p);
        assert!(matches!(s.serialize(), Err(Error::PulseOverlap(_))));
    }

    fn model2() -> PairModel {
        PairModel::build(&PairSpec::setting2()).unwrap()
    }

    #[test]
    fn static_propagation() {
        let m = model2();
        let pr = Propagator::new(&m, PropagationMode::Full, 20.0).unwrap();
        let u0 = pr.propagate_static(0.0);
        assert!(max_abs(&(u0 - CMat::identity(81, 81))) < 1e-14);
        let ua = pr.propagate_static(130.0);
        // composition with frame bookkeeping: U(0→t1+t2) = U(t1→t1+t2)·U(0→t1)
        let mut u = CMat::identity(81, 81);
        pr.free(0.0, 0.05, &mut u);
        pr.free(0.05, 0.13, &mut u);
        assert!(max_abs(&(&u - &ua)) < 1e-10);
        assert!(unitarity_error(&ua) < 1e-10);
    }

    #[test]
    fn empty_sequence_identity() {
        let m = model2();
        let pr = Propagator::new(&m, PropagationMode::Full, 20.0).unwrap();
        let u = pr.propagate_driven(&Sequence::new());
        assert!(max_abs(&(u - CMat::identity(81, 81))) < 1e-15);
    }

    #[test]
    fn rwa_cache_shift_matches_direct() {
        let m = model2();
        let pr = Propagator::new(&m, PropagationMode::Rwa, 20.0).unwrap();
        for (target, phase) in [(Target::Nv1, PulsePhase::Y), (Target::Nv2, PulsePhase::MinusX)] {
            let p = PulseSegment::new(target, PulseKind::PiHalf, phase, Envelope::Sine, 23.7).unwrap();
            let t0 = 0.4173;
            let mut cached = CMat::identity(81, 81);
            pr.pulse(&p, t0, &mut cached);
            let mut direct = CMat::identity(81, 81);
            pr.riemann(&p, t0, &mut direct, |q, t, tl| pr.rwa_hamiltonian(q, t, tl));
            assert!(max_abs(&(&cached - &direct)) < 1e-10, "{target:?}");
        }
    }

    #[test]
    fn rwa_close_to_full() {
        let m = model2();
        let full = Propagator::new(&m, PropagationMode::Full, 20.0).unwrap();
        let rwa = Propagator::new(&m, PropagationMode::Rwa, 20.0).unwrap();
        let p = PulseSegment::new(Target::Nv2, PulseKind::Pi, PulsePhase::X, Envelope::Sine, 23.7).unwrap();
        let mut a = CMat::identity(81, 81);
        let mut b = CMat::identity(81, 81);
        full.pulse(&p, 0.25, &mut a);
        rwa.pulse(&p, 0.25, &mut b);
        assert!(max_abs(&(a - b)) < 0.05);
    }

    #[test]
    fn aligned_pi_pulse_inverts() {
        let mut spec = PairSpec::setting2();
        spec.geometry = FieldGeometry { b_mag: [105.33, 105.33], theta: [70.53, 0.0], beta: 70.53 };
        for nv in spec.nv.iter_mut() {
            nv.a_diag = [0.0; 3];
        }
        let m = PairModel::build(&spec).unwrap();
        let pr = Propagator::new(&m, PropagationMode::Full, 20.0).unwrap();
        let p = PulseSegment::new(Target::Nv2, PulseKind::Pi, PulsePhase::X, Envelope::Sine, 10.0).unwrap();
        let mut psi = CMat::zeros(81, 1);
        let g = ((1 * 3 + 1) * 3 + 1) * 3 + 1;
        psi[(g, 0)] = ONE;
        pr.pulse(&p, 0.0, &mut psi);
        let e = ((1 * 3 + 1) * 3 + m.excited[1]) * 3 + 1;
        let pop = psi[(e, 0)].norm_sqr();
        let ratio = 10.0 / m.qubit_lines_mhz()[1];
        assert!(pop > 1.0 - ratio * ratio * 10.0 && pop > 0.999, "{pop}");
    }

    #[test]
    fn instantaneous_pulse_is_ideal() {
        let m = model2();
        let pr = Propagator::new(&m, PropagationMode::Instantaneous, 20.0).unwrap();
        let p = PulseSegment::instantaneous(Target::Nv1, PulseKind::PiHalf, PulsePhase::Y);
        let mut psi = CMat::zeros(81, 1);
        let g = ((1 * 3 + 0) * 3 + 1) * 3 + 2;
        psi[(g, 0)] = ONE;
        pr.pulse(&p, 0.0, &mut psi);
        let e = ((m.excited[0] * 3 + 0) * 3 + 1) * 3 + 2;
        let r = ideal_rotation(PI / 2.0, PI / 2.0);
        assert!((psi[(g, 0)] - r[0][0]).norm() < 1e-15);
        assert!((psi[(e, 0)] - r[1][0]).norm() < 1e-15);
    }

    #[test]
    fn reduced_instantaneous_matches_ideal() {
        let rm = ReducedModel { delta1: 0.0, delta2: 0.0, g: 0.0 };
        let mut seq = Sequence::new();
        seq.push_pulse(PulseSegment::instantaneous(Target::Nv1, PulseKind::Pi, PulsePhase::X));
        let u = rm.propagate(&seq, 20.0);
        let h = crate::hamiltonian::reduced_two_qubit_hamiltonian(0.0, 0.0, 0.0, 1.0, 0.0);
        let want = crate::algebra::expm_hermitian(&h, PI);
        assert!(max_abs(&(u - want)) < 1e-12);
    }

    #[test]
    fn reduced_gate_converges_with_density() {
        let seq = crate::sequences::build_sqrt_zz(800.0, 250.0, 8, crate::sequences::PulseShape::sine(23.7)).unwrap();
        let rm = ReducedModel { delta1: ang(0.5), delta2: ang(-0.3), g: ang(0.113) };
        let pts = step_convergence(|d| Ok(rm.propagate(&seq, d)), &[0.5, 1.0, 2.0], 64.0).unwrap();
        assert!(pts.windows(2).all(|w| w[1].max_abs_error < w[0].max_abs_error));
        assert!(observed_orders(&pts).iter().all(|&o| o > 0.9));
        assert!(step_convergence(|d| Ok(rm.propagate(&seq, d)), &[64.0], 64.0).is_err());
    }
}
