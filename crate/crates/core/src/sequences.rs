//! Named pulse experiments: XY8-n decoupling, the √ZZ composite gate, DEER
//! scans, the interaction-picture gate oracle and the τ1/τ2 calibrations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{diag, CMat, C64, ONE};
use crate::error::{Error, Result};
use crate::experiment::{SimSettings, Simulator};
use crate::fit::{fit_sine, FitResult};
use crate::hamiltonian::{PairModel, TWO_PI};
use crate::propagation::{Envelope, PulseKind, PulsePhase, PulseSegment, Schedule, Sequence, Target};
use crate::readout::{normalized_mixture_signal, readout_electron, ChargeConfig, ChargeMixture};

use PulsePhase::{X, Y};

/// XY8 phase cycle.
pub const XY8_PHASES: [PulsePhase; 8] = [X, Y, X, Y, Y, X, Y, X];

/// Pulse shape shared by every pulse of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    /// Cyclic MHz; ignored for instantaneous pulses.
    pub rabi: f64,
    pub envelope: Envelope,
}

impl PulseShape {
    pub fn ideal() -> Self {
        Self { rabi: 0.0, envelope: Envelope::Instantaneous }
    }

    pub fn sine(rabi: f64) -> Self {
        Self { rabi, envelope: Envelope::Sine }
    }

    pub fn segment(&self, target: Target, kind: PulseKind, phase: PulsePhase) -> Result<PulseSegment> {
        match self.envelope {
            Envelope::Instantaneous => Ok(PulseSegment::instantaneous(target, kind, phase)),
            env => PulseSegment::new(target, kind, phase, env, self.rabi),
        }
    }

    /// π-pulse length in ns (0 for instantaneous pulses).
    pub fn pi_duration(&self) -> f64 {
        match self.envelope {
            Envelope::Instantaneous => 0.0,
            _ => crate::propagation::pi_duration_ns(self.rabi),
        }
    }
}

/// XY8-`n_xy` on one NV: π pulses centered at (j + ½)·τ1, total 8·n_xy·τ1.
pub fn build_xy8(target: Target, tau1: f64, n_xy: usize, shape: PulseShape) -> Result<Sequence> {
    if n_xy == 0 {
        return Err(Error::InvalidParameter("XY8 order must be at least 1".into()));
    }
    if !(tau1 > 0.0) {
        return Err(Error::InvalidParameter(format!("pulse spacing {tau1} ns must be positive")));
    }
    if shape.pi_duration() >= tau1 {
        return Err(Error::PulseOverlap(format!(
            "π pulse of {:.3} ns does not fit the {tau1} ns spacing",
            shape.pi_duration()
        )));
    }
    let mut s = Schedule::new(8.0 * n_xy as f64 * tau1);
    for j in 0..8 * n_xy {
        s.add((j as f64 + 0.5) * tau1, shape.segment(target, PulseKind::Pi, XY8_PHASES[j % 8])?);
    }
    s.serialize()
}

fn check_gate_args(tau1: f64, tau2: f64, n_pi: usize) -> Result<()> {
    if n_pi == 0 || n_pi % 8 != 0 {
        return Err(Error::InvalidParameter(format!("n_pi = {n_pi} must be a positive multiple of 8 (XY8 cycle)")));
    }
    if !(tau1 > 0.0) {
        return Err(Error::InvalidParameter(format!("pulse spacing {tau1} ns must be positive")));
    }
    if !(tau2.abs() <= tau1 / 2.0 + 1e-9) {
        return Err(Error::InvalidParameter(format!("offset τ2 = {tau2} ns outside ±τ1/2")));
    }
    Ok(())
}

/// Length of the √ZZ gate body in ns: Nπ·τ1, extended by |τ2| for negative
/// offsets so the last NV2 pulse stays inside.
pub fn sqrt_zz_body(tau1: f64, tau2: f64, n_pi: usize) -> f64 {
    n_pi as f64 * tau1 + (-tau2).max(0.0)
}

/// NV1 π pulses at (k + ½)·τ1 (k = 0..Nπ−1), NV2 π pulses at k·τ1 − τ2
/// (k = 1..Nπ), both XY8 phase cycled. Times relative to the gate start.
pub fn sqrt_zz_schedule(tau1: f64, tau2: f64, n_pi: usize, shape: PulseShape) -> Result<Schedule> {
    check_gate_args(tau1, tau2, n_pi)?;
    let mut s = Schedule::new(sqrt_zz_body(tau1, tau2, n_pi));
    for k in 0..n_pi {
        let ph = XY8_PHASES[k % 8];
        s.add((k as f64 + 0.5) * tau1, shape.segment(Target::Nv1, PulseKind::Pi, ph)?);
        s.add((k + 1) as f64 * tau1 - tau2, shape.segment(Target::Nv2, PulseKind::Pi, ph)?);
    }
    Ok(s)
}

/// The √ZZ gate as a serialized sequence. Pulse collisions surface as
/// [`Error::PulseOverlap`].
pub fn build_sqrt_zz(tau1: f64, tau2: f64, n_pi: usize, shape: PulseShape) -> Result<Sequence> {
    let seq = sqrt_zz_schedule(tau1, tau2, n_pi, shape)?.serialize()?;
    let first = shape.pi_duration() / 2.0;
    if first > tau1 / 2.0 {
        return Err(Error::PulseOverlap("first π pulse starts before the gate".into()));
    }
    Ok(seq)
}

/// One free-evolution period of the toggling frame: diagonal Hamiltonian
/// (rad/µs, basis |00⟩,|01⟩,|10⟩,|11⟩) and its duration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionPeriod {
    pub diagonal: [f64; 4],
    pub duration_ns: f64,
}

#[derive(Clone, Debug)]
pub struct AnalyticGate {
    pub periods: Vec<InteractionPeriod>,
    /// exp(−i·Σ H_k t_k), diagonal.
    pub unitary: CMat,
}

/// Toggling-frame periods of the instantaneous-pulse √ZZ gate on the reduced
/// model diag(δ2, 0, δ1+δ2−g, δ1). For τ2 ≥ 0 and Nπ = 2 the durations are
/// τ1/2, τ1/2−τ2, τ1/2+τ2, τ1/2−τ2, τ2.
pub fn interaction_periods(tau1: f64, tau2: f64, n_pi: usize, g: f64, delta1: f64, delta2: f64) -> Result<Vec<InteractionPeriod>> {
    if n_pi == 0 || n_pi % 2 != 0 {
        return Err(Error::InvalidParameter(format!("n_pi = {n_pi} must be positive and even")));
    }
    if !(tau1 > 0.0) || tau2.abs() > tau1 / 2.0 + 1e-9 {
        return Err(Error::InvalidParameter(format!("need τ1 > 0 and |τ2| ≤ τ1/2, got ({tau1}, {tau2})")));
    }
    let h = [delta2, 0.0, delta1 + delta2 - g, delta1];
    let mut flips: Vec<(f64, usize)> = Vec::with_capacity(2 * n_pi);
    for k in 0..n_pi {
        flips.push(((k as f64 + 0.5) * tau1, 0));
        flips.push(((k + 1) as f64 * tau1 - tau2, 1));
    }
    flips.sort_by(|a, b| a.0.total_cmp(&b.0));
    let end = sqrt_zz_body(tau1, tau2, n_pi);
    let mut out = Vec::with_capacity(2 * n_pi + 1);
    let (mut t, mut f1, mut f2) = (0.0, false, false);
    let mut push = |dur: f64, f1: bool, f2: bool| {
        // flipping NV1 swaps |0x⟩↔|1x⟩, NV2 swaps |x0⟩↔|x1⟩
        let perm = |i: usize| i ^ ((f1 as usize) << 1) ^ (f2 as usize);
        out.push(InteractionPeriod { diagonal: [h[perm(0)], h[perm(1)], h[perm(2)], h[perm(3)]], duration_ns: dur });
    };
    for (tf, who) in flips {
        push(tf - t, f1, f2);
        t = tf;
        if who == 0 {
            f1 = !f1;
        } else {
            f2 = !f2;
        }
    }
    push(end - t, f1, f2);
    Ok(out)
}

/// Instantaneous-pulse √ZZ unitary on the reduced model, assembled from the
/// toggling-frame periods.
pub fn analytic_gate_unitary(tau1: f64, tau2: f64, n_pi: usize, g: f64, delta1: f64, delta2: f64) -> Result<AnalyticGate> {
    let periods = interaction_periods(tau1, tau2, n_pi, g, delta1, delta2)?;
    let mut phase = [0.0; 4];
    for p in &periods {
        for (acc, h) in phase.iter_mut().zip(p.diagonal) {
            *acc += h * p.duration_ns * 1e-3;
        }
    }
    let unitary = diag(&phase.map(|ph| C64::from_polar(1.0, -ph)));
    Ok(AnalyticGate { periods, unitary })
}

/// Closed form diag(1, e^{iNπgτ2}, e^{iNπgτ2}, 1) (global phase dropped).
pub fn zz_phase_unitary(n_pi: usize, g: f64, tau2_ns: f64) -> CMat {
    let e = C64::from_polar(1.0, n_pi as f64 * g * tau2_ns * 1e-3);
    diag(&[ONE, e, e, ONE])
}

/// The target √ZZ = diag(1, i, i, 1).
pub fn sqrt_zz_ideal() -> CMat {
    diag(&[ONE, C64::new(0.0, 1.0), C64::new(0.0, 1.0), ONE])
}

/// τ2 realizing Nπ·g·τ2 = π/2 at coupling ν_dip (MHz); ns.
pub fn ideal_tau2(nu_dip: f64, n_pi: usize) -> f64 {
    1e3 / (4.0 * n_pi as f64 * nu_dip)
}

/// τ2 at which the reduced four-level model (zero detunings, coupling `g` in
/// rad/µs) with the given pulses realizes the √ZZ conditional phase; ns.
pub fn reduced_tau2(g: f64, tau1: f64, n_pi: usize, shape: PulseShape, step_density: f64) -> Result<f64> {
    if g == 0.0 {
        return Err(Error::InvalidParameter("zero coupling has no √ZZ point".into()));
    }
    let rm = crate::propagation::ReducedModel { delta1: 0.0, delta2: 0.0, g };
    // conditional phase u00·u11 / (u01·u10) is −1 at the target
    let miss = |tau2: f64| -> Result<f64> {
        let u = rm.propagate(&build_sqrt_zz(tau1, tau2, n_pi, shape)?, step_density);
        let v = u[(0, 0)] * u[(3, 3)] / (u[(1, 1)] * u[(2, 2)]);
        Ok((-v).arg())
    };
    // bisection within ±20 % of the instantaneous-pulse value, free of wraps
    let t0 = ideal_tau2(g / TWO_PI, n_pi);
    let (mut lo, mut hi) = if t0 > 0.0 { (0.8 * t0, 1.2 * t0) } else { (1.2 * t0, 0.8 * t0) };
    let (mut flo, fhi) = (miss(lo)?, miss(hi)?);
    if flo * fhi > 0.0 {
        return Err(Error::Numeric("√ZZ point not bracketed near the instantaneous-pulse τ2".into()));
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        let f = miss(mid)?;
        if f * flo > 0.0 {
            (lo, flo) = (mid, f);
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Calibrated √ZZ timing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateCalibration {
    pub tau1: f64,
    pub tau2_sqrtzz: f64,
    pub n_pi: usize,
    /// Nπ·τ2, µs.
    pub t_evol: f64,
    /// Coupling implied by 1/(4·t_evol), MHz, with 1σ.
    pub nu_dip: f64,
    pub nu_dip_sigma: f64,
}

impl GateCalibration {
    pub fn new(tau1: f64, tau2: f64, n_pi: usize) -> Result<Self> {
        check_gate_args(tau1, tau2, n_pi)?;
        let t_evol = n_pi as f64 * tau2 * 1e-3;
        Ok(Self { tau1, tau2_sqrtzz: tau2, n_pi, t_evol, nu_dip: 1.0 / (4.0 * t_evol), nu_dip_sigma: 0.0 })
    }

    /// Gate-body length, µs.
    pub fn gate_time_us(&self) -> f64 {
        sqrt_zz_body(self.tau1, self.tau2_sqrtzz, self.n_pi) * 1e-3
    }
}

/// Which Bloch component a DEER projection pulse maps to the readout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Projection {
    /// (π/2)x projection: reads ⟨σy⟩.
    X,
    /// (π/2)y projection: reads ⟨σx⟩.
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeerConfig {
    pub tau1: f64,
    pub tau2: Vec<f64>,
    pub n_pi: usize,
    pub projection: Projection,
    /// Control (NV2) prepared in |1⟩ instead of |0⟩.
    pub control_excited: bool,
    pub shape: PulseShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeerTrace {
    pub tau2: Vec<f64>,
    /// Nπ·τ2, µs.
    pub t_evol: Vec<f64>,
    /// ⟨σy⟩ (projection X) or ⟨σx⟩ (projection Y) of NV1.
    pub signal: Vec<f64>,
    /// Fit of y = A·sin(2πν·t + φ) + y0 over t_evol.
    pub fit: FitResult,
    pub nu_dip: f64,
    pub nu_dip_sigma: f64,
    pub amplitude: f64,
    pub offset: f64,
}

fn deer_sequence(cfg: &DeerConfig, tau2: f64) -> Result<Sequence> {
    let sh = cfg.shape;
    let mut seq = Sequence::new();
    if cfg.control_excited {
        seq.push_pulse(sh.segment(Target::Nv2, PulseKind::Pi, X)?);
    }
    seq.push_pulse(sh.segment(Target::Nv1, PulseKind::PiHalf, X)?);
    seq.extend(&build_sqrt_zz(cfg.tau1, tau2, cfg.n_pi, sh)?);
    let proj = match cfg.projection {
        Projection::X => X,
        Projection::Y => Y,
    };
    seq.push_pulse(sh.segment(Target::Nv1, PulseKind::PiHalf, proj)?);
    Ok(seq)
}

/// Simulated DEER trace of NV1 vs τ2, averaged over charge configurations,
/// with a sine fit over t_evol.
pub fn deer_scan(model: &PairModel, settings: SimSettings, cfg: &DeerConfig, charge: &ChargeMixture) -> Result<DeerTrace> {
    charge.validate()?;
    let uncoupled = model.with_coupling(0.0)?;
    let sims = [Simulator::new(model, settings)?, Simulator::new(&uncoupled, settings)?];
    let sign = match cfg.projection {
        Projection::X => 1.0,
        Projection::Y => -1.0,
    };
    let target_only = [1.0, 0.0];
    let signal = cfg
        .tau2
        .par_iter()
        .map(|&tau2| -> Result<f64> {
            let seq = deer_sequence(cfg, tau2)?;
            let mut per = [0.0; 4];
            for c in ChargeConfig::ALL {
                if charge.weight(c) == 0.0 || !c.negative()[0] {
                    continue;
                }
                let sim = &sims[if c.coupled() { 0 } else { 1 }];
                let rho = sim.run(&seq);
                per[c as usize] = readout_electron(&rho, model.excited, target_only, c.negative())?;
            }
            Ok(sign * normalized_mixture_signal(per, charge, target_only)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let t_evol: Vec<f64> = cfg.tau2.iter().map(|t| cfg.n_pi as f64 * t * 1e-3).collect();
    let fit = fit_sine(&t_evol, &signal)?;
    let span = t_evol.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - t_evol.iter().cloned().fold(f64::INFINITY, f64::min);
    if span * fit.params[1] < 1.0 {
        return Err(Error::Fit(format!("sweep spans {:.2} oscillation periods, need at least 1", span * fit.params[1])));
    }
    Ok(DeerTrace {
        tau2: cfg.tau2.clone(),
        t_evol,
        signal,
        nu_dip: fit.params[1],
        nu_dip_sigma: fit.sigmas[1],
        amplitude: fit.params[0],
        offset: fit.params[3],
        fit,
    })
}

/// Calibration scan result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationScan {
    pub tau2: Vec<f64>,
    pub signal: Vec<f64>,
    pub fit: FitResult,
    pub calibration: GateCalibration,
}

fn calibration_sequence(tau1: f64, tau2: f64, n_pi: usize, n_rep: usize, shape: PulseShape) -> Result<Sequence> {
    let mut seq = Sequence::new();
    seq.push_pulse(shape.segment(Target::Nv1, PulseKind::PiHalf, X)?);
    seq.push_pulse(shape.segment(Target::Nv2, PulseKind::PiHalf, X)?);
    let gate = build_sqrt_zz(tau1, tau2, n_pi, shape)?;
    for _ in 0..n_rep {
        seq.extend(&gate);
    }
    seq.push_pulse(shape.segment(Target::Nv1, PulseKind::PiHalf, X)?);
    seq.push_pulse(shape.segment(Target::Nv2, PulseKind::PiHalf, X)?);
    Ok(seq)
}

/// Sweep τ2 with the gate repeated `n_rep` times between (π/2)x pulses on both
/// NVs, fit a sine and take the first nontrivial minimum of the fitted curve.
pub fn calibrate_tau2(
    model: &PairModel,
    settings: SimSettings,
    tau1: f64,
    n_pi: usize,
    n_rep: usize,
    tau2: &[f64],
    shape: PulseShape,
) -> Result<CalibrationScan> {
    if n_rep == 0 {
        return Err(Error::InvalidParameter("n_rep must be at least 1".into()));
    }
    if tau2.len() < 5 {
        return Err(Error::InvalidParameter("calibration sweep needs at least 5 points".into()));
    }
    let sim = Simulator::new(model, settings)?;
    let alpha = [model.spec.nv[0].contrast_alpha, model.spec.nv[1].contrast_alpha];
    let signal = tau2
        .par_iter()
        .map(|&t2| -> Result<f64> {
            let rho = sim.run(&calibration_sequence(tau1, t2, n_pi, n_rep, shape)?);
            readout_electron(&rho, model.excited, alpha, [true, true])
        })
        .collect::<Result<Vec<f64>>>()?;
    let xs: Vec<f64> = tau2.iter().map(|t| t * 1e-3).collect();
    let fit = fit_sine(&xs, &signal)?;
    let (a, f, phi) = (fit.params[0], fit.params[1], fit.params[2]);
    if !(a > 0.0 && f > 0.0) {
        return Err(Error::Fit("calibration sine has no oscillation".into()));
    }
    // minima of a·sin(2πf x + φ): 2πf x + φ = 3π/2 + 2πm
    let period = 1.0 / f;
    let x0 = (1.5 * std::f64::consts::PI - phi) / (TWO_PI * f);
    let m = ((0.5 * period - x0) / period).ceil();
    let x_min = x0 + m * period;
    let (lo, hi) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    if x_min < lo || x_min > hi {
        return Err(Error::Fit(format!("fitted minimum at τ2 = {:.1} ns lies outside the sweep", x_min * 1e3)));
    }
    let tau2_min = x_min * 1e3;
    let mut calibration = GateCalibration::new(tau1, tau2_min, n_pi)?;
    let sx = ((fit.sigmas[2] / (TWO_PI * f)).powi(2) + (x_min * fit.sigmas[1] / f).powi(2)).sqrt();
    calibration.nu_dip_sigma = calibration.nu_dip * sx / x_min;
    Ok(CalibrationScan { tau2: tau2.to_vec(), signal, fit, calibration })
}

/// Survival of an NV1 superposition through XY8-n vs pulse spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tau1Scan {
    pub tau1: Vec<f64>,
    pub survival: Vec<f64>,
    /// Spacing whose ±[`PLATEAU_HALF_WIDTH_NS`] neighbourhood has the best
    /// worst-case survival.
    pub recommended: f64,
}

pub const PLATEAU_HALF_WIDTH_NS: f64 = 30.0;

/// (π/2)x, XY8-`n_xy` on NV1, (π/2)−x; survival = NV1 polarization.
pub fn scan_tau1(model: &PairModel, settings: SimSettings, tau1: &[f64], n_xy: usize, shape: PulseShape) -> Result<Tau1Scan> {
    if tau1.is_empty() {
        return Err(Error::InvalidParameter("empty τ1 sweep".into()));
    }
    let sim = Simulator::new(model, settings)?;
    let survival = tau1
        .par_iter()
        .map(|&t1| -> Result<f64> {
            let mut seq = Sequence::new();
            seq.push_pulse(shape.segment(Target::Nv1, PulseKind::PiHalf, X)?);
            seq.extend(&build_xy8(Target::Nv1, t1, n_xy, shape)?);
            seq.push_pulse(shape.segment(Target::Nv1, PulseKind::PiHalf, PulsePhase::MinusX)?);
            readout_electron(&sim.run(&seq), model.excited, [1.0, 0.0], [true, true])
        })
        .collect::<Result<Vec<f64>>>()?;
    let floor = |i: usize| {
        tau1.iter()
            .zip(&survival)
            .filter(|(t, _)| (*t - tau1[i]).abs() <= PLATEAU_HALF_WIDTH_NS)
            .map(|(_, s)| *s)
            .fold(f64::INFINITY, f64::min)
    };
    let best = (0..tau1.len()).fold(0, |b, i| if floor(i) > floor(b) { i } else { b });
    Ok(Tau1Scan { tau1: tau1.to_vec(), survival, recommended: tau1[best] })
}
