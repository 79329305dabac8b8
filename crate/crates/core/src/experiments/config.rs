//! Experiment configuration: a TOML document with dotted-key overrides.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DriveChannel, SystemParams};
use crate::pulses::ScheduleOverrides;
use crate::tomography::ReconstructionConfig;
use crate::wigner::Measurement;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    CatGen,
    BellFock,
    FockToCat,
    TwoCatGate,
    Tomography,
}

impl Experiment {
    pub const ALL: [Experiment; 5] =
        [Experiment::CatGen, Experiment::BellFock, Experiment::FockToCat, Experiment::TwoCatGate, Experiment::Tomography];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::CatGen => "cat_gen",
            Experiment::BellFock => "bell_fock",
            Experiment::FockToCat => "fock_to_cat",
            Experiment::TwoCatGate => "two_cat_gate",
            Experiment::Tomography => "tomography",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Experiment::ALL.into_iter().find(|e| e.as_str() == norm).ok_or_else(|| {
            Error::Config(format!("unknown experiment '{s}' (expected one of cat_gen, bell_fock, fock_to_cat, two_cat_gate, tomography)"))
        })
    }
}

/// The four Bell states reachable from `|00>` (sum drive) or `|01>` (difference drive).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BellState {
    /// `|00> + |11>`
    PhiPlus,
    /// `|00> - |11>`
    PhiMinus,
    /// `|01> + |10>`
    PsiPlus,
    /// `|01> - |10>`
    PsiMinus,
}

impl BellState {
    pub const ALL: [BellState; 4] = [BellState::PhiPlus, BellState::PhiMinus, BellState::PsiPlus, BellState::PsiMinus];

    pub fn as_str(self) -> &'static str {
        match self {
            BellState::PhiPlus => "phi_plus",
            BellState::PhiMinus => "phi_minus",
            BellState::PsiPlus => "psi_plus",
            BellState::PsiMinus => "psi_minus",
        }
    }

    pub fn channel(self) -> DriveChannel {
        match self {
            BellState::PhiPlus | BellState::PhiMinus => DriveChannel::BellSum,
            BellState::PsiPlus | BellState::PsiMinus => DriveChannel::BellDiff,
        }
    }

    pub fn relative_phase(self) -> f64 {
        match self {
            BellState::PhiPlus | BellState::PsiPlus => 0.0,
            BellState::PhiMinus | BellState::PsiMinus => PI,
        }
    }

    /// Levels of the two branches; the first is the initial state.
    pub fn branches(self) -> ([usize; 2], [usize; 2]) {
        match self.channel() {
            DriveChannel::BellSum => ([0, 0], [1, 1]),
            _ => ([0, 1], [1, 0]),
        }
    }

    /// Odd total photon number.
    pub fn is_odd(self) -> bool {
        self.channel() == DriveChannel::BellDiff
    }
}

impl fmt::Display for BellState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// Lindblad whenever any loss channel is present, Schrödinger otherwise.
    #[default]
    Auto,
    Unitary,
    Lindblad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub dynamics: Dynamics,
    /// Start Lindblad runs from the thermal populations instead of pure Fock states.
    pub thermal_initial: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self { dt: 0.001, dynamics: Dynamics::Auto, thermal_initial: true }
    }
}

/// A sweep axis given either as an explicit list or as `{ start, stop, step }` (inclusive).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Axis {
    pub fn range(start: f64, stop: f64, step: f64) -> Self {
        Axis::Range { start, stop, step }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Axis::List(v) => v.clone(),
            Axis::Range { start, stop, step } => {
                if !(*step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
                    return Err(Error::Config(format!("invalid sweep range {start}..{stop} step {step}")));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=n).map(|k| start + k as f64 * step).collect()
            }
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(format!("sweep axis {v:?} must be nonempty and finite")));
        }
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateAxis {
    #[default]
    Phase,
    Detuning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Pulse durations (µs); the default depends on the experiment.
    pub durations: Option<Axis>,
    /// Drive detunings (MHz) relative to the resonance of the swept channel.
    pub detunings: Option<Axis>,
    /// Gate phases (rad); defaults to `gate_phase` and `gate_phase + π`.
    pub phases: Option<Axis>,
    pub gate_axis: GateAxis,
    pub bell_states: Vec<BellState>,
    /// Run the Bell-pulse chevron in `bell_fock`.
    pub chevron: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            durations: None,
            detunings: None,
            phases: None,
            gate_axis: GateAxis::Phase,
            bell_states: BellState::ALL.to_vec(),
            chevron: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WignerConfig {
    pub points: usize,
    pub half_range: f64,
    /// Imaginary offsets of the extra Re–Re slice recorded by the gate experiment.
    pub gate_offset: [f64; 2],
}

impl Default for WignerConfig {
    fn default() -> Self {
        Self { points: 17, half_range: 1.6, gate_offset: [0.0, 0.82] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSource {
    /// Ideal Bell–Cat state built from the eigen-cats.
    #[default]
    BellCat,
    /// The Bell–Cat state after waiting with the pumps on under photon loss.
    Degraded,
    /// A density matrix read from `file`.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographyConfig {
    pub source: StateSource,
    pub bell_state: BellState,
    /// Wait (µs) for the degraded source.
    pub wait: f64,
    /// Photon lifetime (µs) of both modes for the degraded source.
    pub degrade_t1: f64,
    pub file: Option<PathBuf>,
    pub file_dims: Option<[usize; 2]>,
    pub reconstruction: ReconstructionConfig,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        Self {
            source: StateSource::BellCat,
            bell_state: BellState::PhiPlus,
            wait: 2.0,
            degrade_t1: 10.0,
            file: None,
            file_dims: None,
            reconstruction: ReconstructionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub output_dir: PathBuf,
    pub params: SystemParams,
    pub schedule: ScheduleOverrides,
    pub evolution: EvolutionConfig,
    pub sweep: SweepConfig,
    pub wigner: WignerConfig,
    pub measurement: Measurement,
    pub tomography: TomographyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            output_dir: PathBuf::from("out"),
            params: SystemParams::paper(),
            schedule: ScheduleOverrides::default(),
            evolution: EvolutionConfig::default(),
            sweep: SweepConfig::default(),
            wigner: WignerConfig::default(),
            measurement: Measurement::Ideal,
            tomography: TomographyConfig::default(),
        }
    }
}

/// Set `path = value` in a TOML table, creating intermediate tables.
/// `value` is parsed as a TOML literal, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) =
        assignment.split_once('=').ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form key=value")))?;
    let path = path.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key '{path}'")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("override '{path}': '{k}' is not a table")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse()?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file (or start from defaults) and apply `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reseed every random stream of the run.
    pub fn reseed(&mut self, seed: u64) {
        if let Measurement::Shots { seed: s, .. } = &mut self.measurement {
            *s = seed;
        }
        self.tomography.reconstruction.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.evolution.dt > 0.0) {
            return Err(Error::Config(format!("evolution.dt must be positive, got {}", self.evolution.dt)));
        }
        for axis in [&self.sweep.durations, &self.sweep.detunings, &self.sweep.phases].into_iter().flatten() {
            axis.values()?;
        }
        if let Some(d) = &self.sweep.durations {
            if d.values()?.iter().any(|x| *x < 0.0) {
                return Err(Error::Config("sweep durations must be non-negative".into()));
            }
        }
        if self.sweep.bell_states.is_empty() {
            return Err(Error::Config("sweep.bell_states is empty".into()));
        }
        if self.wigner.points < 2 || !(self.wigner.half_range > 0.0) {
            return Err(Error::Config(format!("wigner axis {} points over ±{}", self.wigner.points, self.wigner.half_range)));
        }
        if let Measurement::Shots { shots: 0, .. } = self.measurement {
            return Err(Error::Config("measurement.shots must be positive".into()));
        }
        self.tomography.reconstruction.validate()?;
        Ok(())
    }

    /// Whether runs integrate the master equation.
    pub fn lindblad(&self) -> bool {
        match self.evolution.dynamics {
            Dynamics::Unitary => false,
            Dynamics::Lindblad => true,
            Dynamics::Auto => {
                let p = &self.params;
                p.t1_1.is_finite() || p.t1_2.is_finite() || p.n_th_1 > 0.0 || p.n_th_2 > 0.0 || p.gamma_phi_1 > 0.0 || p.gamma_phi_2 > 0.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text, &[]).unwrap();
        assert_eq!(back, cfg);
        assert!(!cfg.lindblad());
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::from_toml(
            "[params]\ng = 4.0\n",
            &[
                "params.t1_1=100".into(),
                "experiment=two_cat_gate".into(),
                "sweep.durations={start=0.0, stop=0.1, step=0.05}".into(),
                "sweep.bell_states=[\"psi_plus\"]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.params.g, 4.0);
        assert_eq!(cfg.params.t1_1, 100.0);
        assert_eq!(cfg.experiment, Some(Experiment::TwoCatGate));
        assert_eq!(cfg.sweep.durations.unwrap().values().unwrap(), vec![0.0, 0.05, 0.1]);
        assert_eq!(cfg.sweep.bell_states, vec![BellState::PsiPlus]);
        assert!(ExperimentConfig::from_toml("", &["params.nope=1".into()]).is_err());
        let shots = ExperimentConfig::from_toml("[measurement]\nmode = \"shots\"\n", &[]).unwrap();
        assert_eq!(shots.measurement, Measurement::Shots { shots: 1000, seed: 0, confusion: None });
        assert!(ExperimentConfig::from_toml("", &["params.k1=-1".into()]).is_err());
        assert!(ExperimentConfig::from_toml("", &["noequals".into()]).is_err());
    }

    #[test]
    fn names_parse() {
        assert_eq!("fock-to-cat".parse::<Experiment>().unwrap(), Experiment::FockToCat);
        assert!("nope".parse::<Experiment>().is_err());
        assert_eq!(BellState::PsiMinus.branches(), ([0, 1], [1, 0]));
        assert_eq!(BellState::PhiMinus.relative_phase(), PI);
    }
}
