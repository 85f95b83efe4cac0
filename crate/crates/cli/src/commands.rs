use std::path::{Path, PathBuf};

use nvregsim_core::benchmarking::{
    error_ablation, repetitive_benchmark, repetitive_inputs, run_randomized_benchmarking, single_qubit_epc, DepolarizingBackend, NativeGateSet,
    PulseBackend, RbMode, RbResult, RepetitiveConfig, RepetitiveEngine,
};
use nvregsim_core::charge::{deer_asymmetry, fit_poisson_mixture, fit_weights_fixed_rates, MixtureObjective, PhotonHistogram};
use nvregsim_core::experiment::QubitInput;
use nvregsim_core::geometry::{forward_transitions, solve_field_from_odmr, solve_field_from_odmr_at};
use nvregsim_core::photophysics::{
    build_rate_model, init_and_spam, init_fidelity, pump_cycle, relative_contrast, spam_column_mean, thermal_ground, ContrastSettings, MixingScope,
    PumpProtocol, RateColumn, D_GROUND_MHZ,
};
use nvregsim_core::hamiltonian::PairModel;
use nvregsim_core::propagation::{observed_orders, step_convergence, ConvergencePoint, Propagator, ReducedModel, Target, DEFAULT_STEP_DENSITY};
use nvregsim_core::sequences::{build_sqrt_zz, calibrate_tau2, deer_scan, reduced_tau2, scan_tau1, DeerConfig, DeerTrace, GateCalibration, Projection};
use serde_json::{json, Value};

use crate::config::{EngineKind, ExperimentConfig};
use crate::report::{num, write_outputs, Summary, Table};
use crate::{
    AblateCmd, BenchCmd, CalibrateCmd, ChargeCmd, CliError, Command, GeometryCmd, Objective, PhotophysicsCmd, RateColumnArg, Rb1qMode, RunArgs,
    ScanCmd, ScopeArg, SimulateCmd,
};

type Out = Result<String, CliError>;

pub fn dispatch(cmd: Command) -> Out {
    match cmd {
        Command::Geometry(GeometryCmd::Solve { nu1, nu2, d, e, phi, out }) => {
            let s = match phi {
                Some(p) => solve_field_from_odmr_at(nu1, nu2, d, e, p)?,
                None => solve_field_from_odmr(nu1, nu2, d, e)?,
            };
            let results = json!({
                "inputs": {"nu1": nu1, "nu2": nu2, "d": d, "e": e, "phi": phi},
                "omega_e": s.omega_e, "b_mag_gauss": s.b_mag(), "theta": s.theta, "theta_alt": s.theta_alt, "refined": s.refined,
            });
            finish("geometry solve", None, None, None, results, vec![], out.as_deref())
        }
        Command::Geometry(GeometryCmd::Forward { omega_e, theta, phi, d, e, out }) => {
            let (nu1, nu2) = forward_transitions(omega_e, theta, phi, d, e);
            let results = json!({
                "inputs": {"omega_e": omega_e, "theta": theta, "phi": phi, "d": d, "e": e},
                "nu1": nu1, "nu2": nu2,
            });
            finish("geometry forward", None, None, None, results, vec![], out.as_deref())
        }
        Command::Simulate(SimulateCmd::Deer(a)) => deer(&a),
        Command::Calibrate(CalibrateCmd::Zz(a)) => calibrate(&a),
        Command::Scan(ScanCmd::Tau1(a)) => tau1(&a),
        Command::Scan(ScanCmd::Density { run, densities, reference }) => density_scan(&run, &densities, reference),
        Command::Bench(BenchCmd::Repetitive { run, engine }) => repetitive(&run, engine),
        Command::Bench(BenchCmd::Rb { run, depolarizing }) => rb(&run, depolarizing),
        Command::Bench(BenchCmd::Rb1q { run, mode }) => rb1q(&run, mode),
        Command::Ablate(AblateCmd::Errors(a)) => ablate(&a),
        Command::Charge(ChargeCmd::Fit { input, window_ms, objective, fixed_rates, out }) => charge_fit(&input, window_ms, objective, fixed_rates, out.as_deref()),
        Command::Photophysics(PhotophysicsCmd::Rates { rate_column, theta, field, b_max, b_step, scope, out }) => {
            photophysics(rate_column, theta, field, b_max, b_step, scope, out.as_deref())
        }
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

fn finish(command: &str, hash: Option<String>, seed: Option<u64>, density: Option<f64>, results: Value, tables: Vec<Table>, out: Option<&Path>) -> Out {
    let summary = Summary::new(command, hash, seed, density, results);
    if let Some(dir) = out {
        write_outputs(dir, &summary, &tables)?;
    }
    Ok(summary.to_json())
}

/// Loaded config with CLI overrides applied and the worker pool set up.
struct Ctx {
    cfg: ExperimentConfig,
    out: Option<PathBuf>,
}

impl Ctx {
    fn load(a: &RunArgs) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::load(&a.config)?;
        if let Some(s) = a.seed {
            cfg.run.seed = s;
        }
        if let Some(d) = a.step_density {
            if !(d > 0.0) {
                return Err(CliError::Schema(format!("--step-density {d} must be positive")));
            }
            cfg.run.step_density = d;
        }
        init_threads(cfg.run.threads)?;
        let out = a.out.clone().or_else(|| cfg.run.out_dir.clone().map(PathBuf::from));
        Ok(Self { cfg, out })
    }

    fn finish(&self, command: &str, results: Value, tables: Vec<Table>) -> Out {
        finish(command, Some(self.cfg.hash()), Some(self.cfg.run.seed), Some(self.cfg.run.step_density), results, tables, self.out.as_deref())
    }
}

fn init_threads(from_config: Option<usize>) -> Result<(), CliError> {
    let env = match std::env::var("NVREGSIM_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().ok().filter(|n| *n > 0).ok_or_else(|| CliError::Schema(format!("NVREGSIM_THREADS={v} is not a positive integer")))?),
        Err(_) => None,
    };
    if let Some(n) = env.or(from_config) {
        // Fails only if a pool already exists, which a single run never creates twice.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn trace_summary(t: &DeerTrace) -> Value {
    json!({
        "nu_dip": t.nu_dip, "nu_dip_sigma": t.nu_dip_sigma, "amplitude": t.amplitude, "offset": t.offset,
        "asymmetry": deer_asymmetry(&t.fit).ok(), "fit": to_value(&t.fit),
    })
}

fn deer(a: &RunArgs) -> Out {
    let ctx = Ctx::load(a)?;
    let c = &ctx.cfg;
    let model = c.build_model()?;
    let d = &c.experiment.deer;
    let tau2 = d.tau2_ns.values()?;
    let run = |projection| {
        let dc = DeerConfig { tau1: c.experiment.gate.tau1_ns, tau2: tau2.clone(), n_pi: d.n_pi, projection, control_excited: d.control_excited, shape: c.shape() };
        deer_scan(&model, c.sim_settings(), &dc, &c.model.charge)
    };
    let (sy, sx) = (run(Projection::X)?, run(Projection::Y)?);
    let mut t = Table::new("deer", "columns: tau2_ns [ns], sigma_x, sigma_y (NV1, charge-mixture averaged)", &["tau2_ns", "sigma_x", "sigma_y"]);
    for i in 0..tau2.len() {
        t.push([num(tau2[i]), num(sx.signal[i]), num(sy.signal[i])]);
    }
    let results = json!({
        "nu_dip_configured": c.model.pair.nu_dip,
        "sigma_y": trace_summary(&sy),
        "sigma_x": trace_summary(&sx),
    });
    ctx.finish("simulate deer", results, vec![t])
}

fn calibrate(a: &RunArgs) -> Out {
    let ctx = Ctx::load(a)?;
    let c = &ctx.cfg;
    let model = c.build_model()?;
    let g = &c.experiment.gate;
    let sweep = c.experiment.calibration.tau2_ns.values()?;
    let scan = calibrate_tau2(&model, c.sim_settings(), g.tau1_ns, g.n_pi, c.experiment.calibration.n_rep, &sweep, c.shape())?;
    let reduced = reduced_tau2(model.qubit_coupling(), g.tau1_ns, g.n_pi, c.shape(), c.run.step_density)?;
    let mut t = Table::new("calibration", "columns: tau2_ns [ns], signal (normalized readout after repeated gates)", &["tau2_ns", "signal"]);
    for (x, y) in scan.tau2.iter().zip(&scan.signal) {
        t.push([num(*x), num(*y)]);
    }
    let results = json!({
        "calibration": to_value(&scan.calibration),
        "fit": to_value(&scan.fit),
        "reduced_model_tau2_ns": reduced,
    });
    ctx.finish("calibrate zz", results, vec![t])
}

fn tau1(a: &RunArgs) -> Out {
    let ctx = Ctx::load(a)?;
    let c = &ctx.cfg;
    let model = c.build_model()?;
    let b = &c.experiment.tau1_scan;
    let s = scan_tau1(&model, c.sim_settings(), &b.tau1_ns.values()?, b.n_xy, c.shape())?;
    let mut t = Table::new("tau1_scan", "columns: tau1_ns [ns], survival (NV1 polarization after XY8)", &["tau1_ns", "survival"]);
    for (x, y) in s.tau1.iter().zip(&s.survival) {
        t.push([num(*x), num(*y)]);
    }
    ctx.finish("scan tau1", json!({"recommended_tau1_ns": s.recommended, "n_xy": b.n_xy}), vec![t])
}

fn input_label(i: &[QubitInput; 2]) -> String {
    i.iter().map(|q| to_value(q).as_str().unwrap_or_default().to_string()).collect::<Vec<_>>().join("/")
}

fn repetitive(a: &RunArgs, engine: Option<EngineKind>) -> Out {
    let ctx = Ctx::load(a)?;
    let c = &ctx.cfg;
    let model = c.build_model()?;
    let r = &c.experiment.repetitive;
    let kind = engine.unwrap_or(r.engine);
    let eng = match kind {
        EngineKind::Full => RepetitiveEngine::Full(c.sim_settings()),
        EngineKind::Reduced => RepetitiveEngine::Reduced { step_density: c.run.step_density },
    };
    let cal = c.calibration(&model)?;
    let gates = NativeGateSet::new(c.shape(), cal.clone())?;
    let mut t = Table::new("repetitive", "columns: input (NV1/NV2), n (gate repetitions), signal (normalized, charge-mixture averaged)", &["input", "n", "signal"]);
    let mut per_input = Vec::new();
    for input in repetitive_inputs() {
        let rc = RepetitiveConfig { input, n_list: (0..=r.n_max).collect(), reverse: r.reverse, fix_y0: None };
        let res = repetitive_benchmark(&model, eng, &gates, &rc, &c.model.charge)?;
        let label = input_label(&input);
        for (n, s) in res.n.iter().zip(&res.signal) {
            t.push([label.clone(), n.to_string(), num(*s)]);
        }
        per_input.push(json!({
            "input": label, "modulation_depth": res.modulation_depth, "mod0_charge_spread": res.mod0_charge_spread,
            "decay": to_value(&res.decay),
        }));
    }
    let check = density_check(c, &model, &cal, kind == EngineKind::Reduced)?;
    let results = json!({"engine": to_value(&kind), "calibration": to_value(&cal), "inputs": per_input, "convergence_check": check});
    ctx.finish("bench repetitive", results, vec![t])
}

/// √ZZ gate propagated at the given densities against `reference`.
fn gate_convergence(c: &ExperimentConfig, model: &PairModel, cal: &GateCalibration, reduced: bool, densities: &[f64], reference: f64) -> Result<Vec<ConvergencePoint>, CliError> {
    let seq = build_sqrt_zz(cal.tau1, cal.tau2_sqrtzz, cal.n_pi, c.shape())?;
    let mode = c.run.mode;
    let rm = ReducedModel { delta1: 0.0, delta2: 0.0, g: model.qubit_coupling() };
    Ok(step_convergence(
        |d| if reduced { Ok(rm.propagate(&seq, d)) } else { Ok(Propagator::new(model, mode, d)?.propagate_driven(&seq)) },
        densities,
        reference,
    )?)
}

/// One-point check recorded whenever a run uses less than the default density.
fn density_check(c: &ExperimentConfig, model: &PairModel, cal: &GateCalibration, reduced: bool) -> Result<Value, CliError> {
    let d = c.run.step_density;
    if d >= DEFAULT_STEP_DENSITY {
        return Ok(Value::Null);
    }
    let p = gate_convergence(c, model, cal, reduced, &[d], DEFAULT_STEP_DENSITY)?[0];
    Ok(json!({"gate": "sqrt_zz", "reference_density": DEFAULT_STEP_DENSITY, "step_density": d, "max_abs_error": p.max_abs_error, "infidelity": p.infidelity}))
}

fn density_scan(a: &RunArgs, densities: &[f64], reference: f64) -> Out {
    let ctx = Ctx::load(a)?;
    let c = &ctx.cfg;
    let model = c.build_model()?;
    let cal = c.calibration(&model)?;
    let pts = gate_convergence(c, &model, &cal, false, densities, reference)?;
    let orders = observed_orders(&pts);
    let mut t = Table::new(
        "convergence",
        "columns: step_density [1/ns], max_abs_error (vs reference), infidelity (vs reference), order (from the previous row)",
        &["step_density", "max_abs_error", "infidelity", "order"],
    );
    for (i, p) in pts.iter().enumerate() {
        let o = if i == 0 { f64::NAN } else { orders[i - 1] };
        t.push([num(p.step_density), num(p.max_abs_error), num(p.infidelity), num(o)]);
    }
    let results = json!({"gate": "sqrt_zz", "calibration": to_value(&cal), "reference_density": reference, "points": to_value(&pts), "orders": orders});
    ctx.finish("scan density", results, vec![t])
}

fn rb_table(r: &RbResult) -> Table {
    let mut t = Table::new("rb", "columns: length (Cliffords), randomization, survival (mean sigma_z)", &["length", "randomization", "survival"]);
    for (l, samples) in r.lengths.iter().zip(&r.samples) {
        for (k, s) in samples.iter().enumerate() {
            t.push([l.to_string(), k.to_string(), num(*s)]);
        }
    }
    t
}

fn rb_summary(r: &RbResult) -> Value {
    json!({"lengths": r.lengths, "mean": r.mean, "decay": to_value(&r.decay), "epc": r.epc, "epc_sigma": r.epc_sigma, "gpc": to_value(&r.gpc)})
}

fn rb(a: &RunArgs, depolarizing: Option<f64>) -> Out {
    let ctx = Ctx::load(a)?;
    let c = &ctx.cfg;
    let rc = c.rb_config();
    let (r, backend) = match depolarizing {
        Some(d) => (run_randomized_benchmarking(&DepolarizingBackend { n_qubits: 2, strength: d, trajectories: 0 }, &rc)?, json!({"depolarizing": d})),
        None => {
            let model = c.build_model()?;
            let cal = c.calibration(&model)?;
            let b = PulseBackend::new(&model, c.sim_settings(), NativeGateSet::new(c.shape(), cal.clone())?, RbMode::TwoQubit)?;
            let check = density_check(c, &model, &cal, false)?;
            (run_randomized_benchmarking(&b, &rc)?, json!({"pulse": to_value(&cal), "convergence_check": check}))
        }
    };
    let mut results = rb_summary(&r);
    results["backend"] = backend;
    ctx.finish("bench rb", results, vec![rb_table(&r)])
}

fn rb1q(a: &RunArgs, mode: Rb1qMode) -> Out {
    let ctx = Ctx::load(a)?;
    let c = &ctx.cfg;
    let model = c.build_model()?;
    let cal = c.calibration(&model)?;
    let m = match mode {
        Rb1qMode::Stripped => RbMode::Stripped,
        Rb1qMode::Nv1 => RbMode::Bare(Target::Nv1),
        Rb1qMode::Nv2 => RbMode::Bare(Target::Nv2),
    };
    let check = density_check(c, &model, &cal, false)?;
    let b = PulseBackend::new(&model, c.sim_settings(), NativeGateSet::new(c.shape(), cal)?, m)?;
    let s = single_qubit_epc(&b, &c.rb_config())?;
    let mut results = rb_summary(&s.rb);
    results["convergence_check"] = check;
    results["mode"] = to_value(&m);
    results["epc_1q"] = json!(s.epc_1q);
    results["epg_1q"] = json!(s.epg_1q);
    results["f_1q"] = json!(s.f_1q);
    ctx.finish("bench rb1q", results, vec![rb_table(&s.rb)])
}

fn ablate(a: &RunArgs) -> Out {
    let ctx = Ctx::load(a)?;
    let c = &ctx.cfg;
    let model = c.build_model()?;
    let cal = c.calibration(&model)?;
    let report = error_ablation(&c.model.pair, &cal, &c.ablation_settings())?;
    let mut t = Table::new("ablation", "columns: rabi_mhz [MHz], variant, z_sim (decoherence-free survival), p (decay parameter)", &["rabi_mhz", "variant", "z_sim", "p"]);
    for pt in &report.points {
        for (k, p) in &pt.p {
            let z = pt.z_sim.get(k).copied().unwrap_or(f64::NAN);
            t.push([num(pt.rabi), k.clone(), num(z), num(*p)]);
        }
    }
    let mut results = to_value(&report);
    results["convergence_check"] = density_check(c, &model, &cal, false)?;
    ctx.finish("ablate errors", results, vec![t])
}

fn read_histogram(path: &Path, window_ms: f64) -> Result<PhotonHistogram, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let body: String = text.lines().filter(|l| !l.trim_start().starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let headers = rdr.headers().map_err(|e| CliError::Schema(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name).ok_or_else(|| CliError::Schema(format!("histogram column `{name}` missing")));
    let (ci, cc) = (col("n_photons")?, col("count")?);
    let mut counts: Vec<u64> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Schema(e.to_string()))?;
        let parse = |i: usize| rec.get(i).and_then(|v| v.trim().parse::<u64>().ok()).ok_or_else(|| CliError::Schema(format!("row {}: non-integer field", line + 1)));
        let (n, k) = (parse(ci)? as usize, parse(cc)?);
        if counts.len() <= n {
            counts.resize(n + 1, 0);
        }
        counts[n] += k;
    }
    Ok(PhotonHistogram::new(counts, window_ms)?)
}

fn charge_fit(input: &Path, window_ms: f64, objective: Objective, fixed: Option<Vec<f64>>, out: Option<&Path>) -> Out {
    let h = read_histogram(input, window_ms)?;
    let fit = match fixed {
        Some(r) => fit_weights_fixed_rates(&h, [r[0], r[1], r[2]])?,
        None => fit_poisson_mixture(
            &h,
            match objective {
                Objective::Ml => MixtureObjective::MaxLikelihood,
                Objective::Ls => MixtureObjective::LeastSquares,
            },
        )?,
    };
    let mut t = Table::new("charge_fit", "columns: n_photons, count (observed), model (expected count from the fit)", &["n_photons", "count", "model"]);
    for (n, &k) in h.counts.iter().enumerate() {
        t.push([n.to_string(), k.to_string(), num(h.total_shots as f64 * fit.pmf(n))]);
    }
    let results = json!({
        "total_shots": h.total_shots, "window_ms": h.window_ms, "fit": to_value(&fit),
        "fidelity_minus_minus": fit.weights[2], "fidelity_minus_minus_sigma": fit.weight_sigmas[2],
    });
    finish("charge fit", None, None, None, results, vec![t], out)
}

fn photophysics(col: RateColumnArg, theta: f64, field: f64, b_max: f64, b_step: f64, scope: ScopeArg, out: Option<&Path>) -> Out {
    let column = match col {
        RateColumnArg::Gupta => RateColumn::Gupta,
        RateColumnArg::Adapted => RateColumn::Adapted,
    };
    let scope = match scope {
        ScopeArg::GroundAndExcited => MixingScope::GroundAndExcited,
        ScopeArg::GroundOnly => MixingScope::GroundOnly,
    };
    if !(b_step > 0.0 && b_max >= 0.0) {
        return Err(CliError::Schema("--b-step must be positive and --b-max non-negative".into()));
    }
    let rates = column.rates();
    let protocol = PumpProtocol::default();
    let spam = init_and_spam(
        &build_rate_model(&rates, field, theta, D_GROUND_MHZ, scope)?,
        &build_rate_model(&rates, 0.0, 0.0, D_GROUND_MHZ, scope)?,
        protocol,
    )?;
    let mean = spam_column_mean(field, theta, scope, protocol)?;
    let n = (b_max / b_step + 1e-9).floor() as usize;
    let bs: Vec<f64> = (0..=n).map(|i| i as f64 * b_step).collect();
    let settings = ContrastSettings { scope, ..ContrastSettings::default() };
    let curve = relative_contrast(&rates, &bs, theta, &settings)?;
    let mut t = Table::new(
        "photophysics",
        "columns: b_gauss [G], contrast (tilted NV), contrast_ref (reference NV), ratio, f_init (tilted NV)",
        &["b_gauss", "contrast", "contrast_ref", "ratio", "f_init"],
    );
    for p in &curve {
        let m = build_rate_model(&rates, p.b_mag, theta, D_GROUND_MHZ, scope)?;
        let f = init_fidelity(&pump_cycle(&m, &thermal_ground(), protocol)?);
        t.push([num(p.b_mag), num(p.contrast), num(p.contrast_ref), num(p.ratio), num(f)]);
    }
    let results = json!({
        "rate_column": to_value(&column), "rates": to_value(&rates), "scope": to_value(&scope),
        "field_gauss": field, "theta": theta, "protocol": to_value(&protocol),
        "spam": to_value(&spam), "spam_column_mean": to_value(&mean),
    });
    finish("photophysics rates", None, None, None, results, vec![t], out)
}
