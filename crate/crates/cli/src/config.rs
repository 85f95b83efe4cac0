//! JSON experiment configuration.

use std::path::Path;

use nvregsim_core::benchmarking::{AblationSettings, RbConfig};
use nvregsim_core::experiment::{NuclearInit, SimSettings};
use nvregsim_core::hamiltonian::{PairModel, PairSpec};
use nvregsim_core::propagation::PropagationMode;
use nvregsim_core::readout::ChargeMixture;
use nvregsim_core::sequences::{ideal_tau2, reduced_tau2, GateCalibration, PulseShape};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelBlock,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub run: RunBlock,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub pair: PairSpec,
    #[serde(default)]
    pub charge: ChargeMixture,
    /// T2 per NV, µs.
    pub t2_us: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pulses {
    Ideal,
    #[default]
    Sine,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateBlock {
    pub tau1_ns: f64,
    /// Omitted: derived from the reduced model at the configured pulses.
    pub tau2_ns: Option<f64>,
    pub n_pi: usize,
    pub rabi_mhz: f64,
    pub pulses: Pulses,
}

impl Default for GateBlock {
    fn default() -> Self {
        Self { tau1_ns: 800.0, tau2_ns: None, n_pi: 8, rabi_mhz: 23.7, pulses: Pulses::Sine }
    }
}

/// Inclusive linear sweep.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Sweep {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        if !(self.step > 0.0) || self.stop < self.start {
            return Err(CliError::Schema(format!("sweep {self:?} needs step > 0 and stop >= start")));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeerBlock {
    pub tau2_ns: Sweep,
    pub n_pi: usize,
    pub control_excited: bool,
}

impl Default for DeerBlock {
    fn default() -> Self {
        Self { tau2_ns: Sweep { start: 0.0, stop: 400.0, step: 10.0 }, n_pi: 32, control_excited: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationBlock {
    pub tau2_ns: Sweep,
    pub n_rep: usize,
}

impl Default for CalibrationBlock {
    fn default() -> Self {
        Self { tau2_ns: Sweep { start: 0.0, stop: 390.0, step: 10.0 }, n_rep: 4 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tau1Block {
    pub tau1_ns: Sweep,
    pub n_xy: usize,
}

impl Default for Tau1Block {
    fn default() -> Self {
        Self { tau1_ns: Sweep { start: 300.0, stop: 1200.0, step: 10.0 }, n_xy: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    #[default]
    Full,
    Reduced,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepetitiveBlock {
    pub n_max: usize,
    pub reverse: bool,
    pub engine: EngineKind,
}

impl Default for RepetitiveBlock {
    fn default() -> Self {
        Self { n_max: 16, reverse: true, engine: EngineKind::Full }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbBlock {
    pub lengths: Vec<usize>,
    pub n_random: usize,
    pub fix_y0: Option<f64>,
}

impl Default for RbBlock {
    fn default() -> Self {
        Self { lengths: vec![1, 2, 4, 8], n_random: 20, fix_y0: Some(0.0) }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationBlock {
    pub rabi_mhz: Vec<f64>,
    pub n_cliff: usize,
    pub n_random: usize,
    pub spam_a: f64,
    pub spam_y0: f64,
    pub recalibrate_tau2: bool,
}

impl Default for AblationBlock {
    fn default() -> Self {
        Self { rabi_mhz: vec![23.7], n_cliff: 2, n_random: 100, spam_a: 1.0, spam_y0: 0.0, recalibrate_tau2: true }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentBlock {
    pub gate: GateBlock,
    pub deer: DeerBlock,
    pub calibration: CalibrationBlock,
    pub tau1_scan: Tau1Block,
    pub repetitive: RepetitiveBlock,
    pub rb: RbBlock,
    pub ablation: AblationBlock,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    pub seed: u64,
    pub step_density: f64,
    pub mode: PropagationMode,
    pub nuclear: NuclearInit,
    pub f_init: [f64; 2],
    /// Worker count; `NVREGSIM_THREADS` takes precedence.
    pub threads: Option<usize>,
    pub out_dir: Option<String>,
}

impl Default for RunBlock {
    fn default() -> Self {
        let s = SimSettings::default();
        Self { seed: 0, step_density: s.step_density, mode: s.mode, nuclear: s.nuclear, f_init: s.f_init, threads: None, out_dir: None }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Schema(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Schema(format!("schema_version {} unsupported, expected {SCHEMA_VERSION}", self.schema_version)));
        }
        let field = |p: &str, e: nvregsim_core::Error| CliError::Schema(format!("at `{p}`: {e}"));
        self.model.pair.validate().map_err(|e| field("model.pair", e))?;
        self.model.charge.validate().map_err(|e| field("model.charge", e))?;
        if self.model.t2_us.iter().any(|t| !(*t > 0.0)) {
            return Err(CliError::Schema("at `model.t2_us`: T2 values must be positive".into()));
        }
        if !(self.run.step_density > 0.0) {
            return Err(CliError::Schema("at `run.step_density`: must be positive".into()));
        }
        if self.run.threads == Some(0) {
            return Err(CliError::Schema("at `run.threads`: must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical serialization, excluding worker count and
    /// output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.threads = None;
        c.run.out_dir = None;
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }

    pub fn sim_settings(&self) -> SimSettings {
        SimSettings { mode: self.run.mode, step_density: self.run.step_density, nuclear: self.run.nuclear, f_init: self.run.f_init }
    }

    pub fn shape(&self) -> PulseShape {
        match self.experiment.gate.pulses {
            Pulses::Ideal => PulseShape::ideal(),
            Pulses::Sine => PulseShape::sine(self.experiment.gate.rabi_mhz),
        }
    }

    pub fn build_model(&self) -> Result<PairModel, CliError> {
        Ok(PairModel::build(&self.model.pair)?)
    }

    /// Gate timing from the config, or the reduced-model √ZZ point when τ2 is omitted.
    pub fn calibration(&self, model: &PairModel) -> Result<GateCalibration, CliError> {
        let g = &self.experiment.gate;
        let tau2 = match (g.tau2_ns, g.pulses) {
            (Some(t), _) => t,
            (None, Pulses::Ideal) => ideal_tau2(self.model.pair.nu_dip, g.n_pi),
            (None, Pulses::Sine) => reduced_tau2(model.qubit_coupling(), g.tau1_ns, g.n_pi, self.shape(), self.run.step_density)?,
        };
        Ok(GateCalibration::new(g.tau1_ns, tau2, g.n_pi)?)
    }

    pub fn rb_config(&self) -> RbConfig {
        let r = &self.experiment.rb;
        RbConfig { lengths: r.lengths.clone(), n_random: r.n_random, seed: self.run.seed, fix_y0: r.fix_y0 }
    }

    pub fn ablation_settings(&self) -> AblationSettings {
        let a = &self.experiment.ablation;
        AblationSettings {
            rabi: a.rabi_mhz.clone(),
            n_cliff: a.n_cliff,
            n_random: a.n_random,
            seed: self.run.seed,
            spam_a: a.spam_a,
            spam_y0: a.spam_y0,
            t2: self.model.t2_us,
            sim: self.sim_settings(),
            recalibrate_tau2: a.recalibrate_tau2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shipped(name: &str) -> String {
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
    }

    #[test]
    fn shipped_configs_parse() {
        for name in ["setting1.json", "setting2.json"] {
            let c = ExperimentConfig::parse(&shipped(name)).unwrap();
            assert_eq!(c.schema_version, SCHEMA_VERSION);
        }
        let c2 = ExperimentConfig::parse(&shipped("setting2.json")).unwrap();
        assert_eq!(c2.model.pair, PairSpec::setting2());
    }

    #[test]
    fn missing_field_reports_path() {
        let mut v: serde_json::Value = serde_json::from_str(&shipped("setting2.json")).unwrap();
        v["model"]["pair"].as_object_mut().unwrap().remove("nu_dip");
        let err = ExperimentConfig::parse(&v.to_string()).unwrap_err();
        assert!(matches!(err, CliError::Schema(ref m) if m.contains("model.pair") && m.contains("nu_dip")), "{err}");
    }

    #[test]
    fn hash_ignores_threads() {
        let a = ExperimentConfig::parse(&shipped("setting2.json")).unwrap();
        let mut b = a.clone();
        b.run.threads = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.run.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn sweep_is_inclusive() {
        assert_eq!(Sweep { start: 0.0, stop: 30.0, step: 10.0 }.values().unwrap(), vec![0.0, 10.0, 20.0, 30.0]);
        assert!(Sweep { start: 1.0, stop: 0.0, step: 1.0 }.values().is_err());
    }
}
