//! Config-driven reproductions of the cat-generation, Fock-to-cat, two-cat
//! gate and tomography experiments. Every run writes CSV artifacts and a
//! `manifest.toml` holding the resolved configuration and the metrics.

mod config;
mod fit;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{
    apply_override, Axis, BellState, Dynamics, EvolutionConfig, Experiment, ExperimentConfig, GateAxis, StateSource, SweepConfig,
    TomographyConfig, WignerConfig,
};
pub use fit::{fit_damped_cosine, DampedCosine};

use crate::error::{Error, Result};
use crate::evolve::{
    evolve_lindblad, evolve_unitary, fidelity, read_complex_matrix, write_complex_matrix, EvolveOptions, StoreStates, Trajectory,
};
use crate::fockspace::{kpo_eigen_cats, local, parity, superpose, tensor_kets};
use crate::model::{DriveChannel, DriveSpec, SystemParams};
use crate::pulses::{preset_schedule, Preset, PulseSchedule, ScheduleOverrides, Segment};
use crate::tomography::reconstruct;
use crate::wigner::{
    measure_grid, paper_dataset, two_mode_wigner, uniform_axis, AxisKind, Measurement, SliceKind, WignerDataset, WignerGrid,
};
use crate::{Complex64, Operator, QuantumState};

/// A named value with its acceptance window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), value, lo, hi }
    }

    pub fn passed(&self) -> bool {
        self.value >= self.lo && self.value <= self.hi
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub experiment: Experiment,
    pub output_dir: PathBuf,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Output directory with a record of every file written.
struct Sink {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Sink {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn grid(&mut self, name: &str, g: &WignerGrid) -> Result<()> {
        g.write_csv(fs::File::create(self.path(name))?)
    }

    fn state(&mut self, name: &str, s: &QuantumState) -> Result<()> {
        let m = match s.as_ket() {
            Some(v) => DMatrix::from_column_slice(v.len(), 1, v.as_slice()),
            None => s.density_matrix(),
        };
        let mut f = fs::File::create(self.path(name))?;
        write_complex_matrix(&mut f, &m)?;
        f.flush()?;
        Ok(())
    }

    fn dataset(&mut self, sub: &str, ds: &WignerDataset, m: &Measurement) -> Result<()> {
        let path = ds.write_dir(&self.dir.join(sub), Some(m))?;
        self.files.push(path);
        Ok(())
    }
}

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

fn ms(t: f64) -> String {
    format!("{:.0}", t * 1000.0)
}

/// Even and odd eigen-cats of both modes at the flat-top pump.
#[derive(Clone, Debug)]
pub struct CatBasis {
    pub zero: [QuantumState; 2],
    pub one: [QuantumState; 2],
}

impl CatBasis {
    pub fn new(p: &SystemParams) -> Result<Self> {
        let a = kpo_eigen_cats(p.k1, p.pump1, p.delta1, p.n1)?;
        let b = kpo_eigen_cats(p.k2, p.pump2, p.delta2, p.n2)?;
        Ok(Self { zero: [a.even, b.even], one: [a.odd, b.odd] })
    }

    /// `|b1_C b2_C>` for logical bits `b1, b2`.
    pub fn ket(&self, bits: [usize; 2]) -> Result<QuantumState> {
        let pick = |m: usize| if bits[m] == 0 { &self.zero[m] } else { &self.one[m] };
        tensor_kets(pick(0), pick(1))
    }

    /// `(|a_C> + e^{iφ}|b_C>)/√2` for the cat version of a Bell state.
    pub fn bell(&self, label: BellState) -> Result<QuantumState> {
        let (a, b) = label.branches();
        equal_superposition(&self.ket(a)?, &self.ket(b)?, label.relative_phase())
    }
}

fn equal_superposition(a: &QuantumState, b: &QuantumState, phase: f64) -> Result<QuantumState> {
    superpose(&[(Complex64::new(1.0, 0.0), a), (Complex64::from_polar(1.0, phase), b)])
}

/// `(|a> + e^{iφ}|b>)/√2` with Fock-state branches.
pub fn bell_fock_target(dims: [usize; 2], label: BellState) -> Result<QuantumState> {
    let (a, b) = label.branches();
    equal_superposition(&QuantumState::fock(&dims, &a)?, &QuantumState::fock(&dims, &b)?, label.relative_phase())
}

/// Fidelity to `(|a> + e^{iφ}|b>)/√2` maximized over `φ`, with the optimal `φ`.
pub fn best_phase_fidelity(rho: &QuantumState, a: &QuantumState, b: &QuantumState) -> Result<(f64, f64)> {
    let (Some(va), Some(vb)) = (a.as_ket(), b.as_ket()) else {
        return Err(Error::Parameter("branch states must be kets".into()));
    };
    if rho.dims() != a.dims() || rho.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", rho.dims(), a.dims())));
    }
    let (raa, rbb, rab) = match rho.as_ket() {
        Some(psi) => {
            let (ca, cb) = (va.dotc(psi), vb.dotc(psi));
            (ca.norm_sqr(), cb.norm_sqr(), ca * cb.conj())
        }
        None => {
            let m = rho.density_matrix();
            let (ma, mb) = (&m * va, &m * vb);
            (va.dotc(&ma).re, vb.dotc(&mb).re, va.dotc(&mb))
        }
    };
    Ok((0.5 * (raa + rbb) + rab.norm(), -rab.arg()))
}

/// Pump segments held at their flat top from `t0` to `t1`.
fn held_pumps(p: &SystemParams, t0: f64, t1: f64) -> Vec<Segment> {
    [(DriveChannel::Pump1, p.pump1, p.delta1), (DriveChannel::Pump2, p.pump2, p.delta2)]
        .into_iter()
        .map(|(ch, amp, det)| Segment { t_start: t0, t_end: t1, drive: DriveSpec::constant(ch, amp, det, 0.0) })
        .collect()
}

fn golden_max(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1)?;
        }
    }
    Ok(if f1 > f2 { (x1, f1) } else { (x2, f2) })
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    params: SystemParams,
    dims: [usize; 2],
    lindblad: bool,
    cats: CatBasis,
    stream: AtomicU64,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.params.clone();
        Ok(Self { dims: params.dims(), lindblad: cfg.lindblad(), cats: CatBasis::new(&params)?, params, cfg, stream: AtomicU64::new(0) })
    }

    fn opts(&self) -> EvolveOptions {
        EvolveOptions { store: StoreStates::Final, ..EvolveOptions::with_dt(self.cfg.evolution.dt) }
    }

    /// Fock state `levels`; Lindblad runs with `thermal_initial` start from the
    /// thermal populations with level 0 and the requested level exchanged.
    fn initial_state(&self, levels: [usize; 2]) -> Result<QuantumState> {
        let pure = QuantumState::fock(&self.dims, &levels)?;
        if !self.lindblad {
            return Ok(pure);
        }
        if !self.cfg.evolution.thermal_initial {
            return Ok(pure.to_density());
        }
        let pops: Vec<Vec<f64>> = (0..2)
            .map(|m| {
                let n_th = [self.params.n_th_1, self.params.n_th_2][m];
                let q = n_th / (1.0 + n_th);
                let mut p: Vec<f64> = (0..self.dims[m]).map(|k| q.powi(k as i32)).collect();
                let s: f64 = p.iter().sum();
                p.iter_mut().for_each(|x| *x /= s);
                p.swap(0, levels[m]);
                p
            })
            .collect();
        let diag = nalgebra::DVector::from_iterator(
            self.dims[0] * self.dims[1],
            pops[0].iter().flat_map(|a| pops[1].iter().map(move |b| Complex64::new(a * b, 0.0))),
        );
        QuantumState::density(self.dims.to_vec(), DMatrix::from_diagonal(&diag))
    }

    fn evolve(&self, psi0: &QuantumState, schedule: &PulseSchedule, opts: &EvolveOptions) -> Result<Trajectory> {
        if self.lindblad {
            evolve_lindblad(&psi0.to_density(), &self.params, schedule, opts)
        } else {
            evolve_unitary(psi0, &self.params, schedule, opts)
        }
    }

    fn parities(&self) -> Result<Vec<(String, Operator)>> {
        Ok(vec![
            ("parity1".into(), local(&parity::<f64>(self.dims[0])?, 0, &self.dims)?),
            ("parity2".into(), local(&parity::<f64>(self.dims[1])?, 1, &self.dims)?),
        ])
    }

    fn axis(&self) -> Vec<f64> {
        uniform_axis(self.cfg.wigner.points, self.cfg.wigner.half_range)
    }

    fn next_stream(&self) -> u64 {
        self.stream.fetch_add(1, Ordering::Relaxed)
    }

    fn grid(&self, state: &QuantumState, kind: SliceKind) -> Result<WignerGrid> {
        measure_grid(&state.to_density(), kind, self.axis(), &self.cfg.measurement, self.next_stream())
    }

    fn dataset(&self, state: &QuantumState) -> Result<WignerDataset> {
        let mut m = self.cfg.measurement.clone();
        if let Measurement::Shots { seed, .. } = &mut m {
            *seed = seed.wrapping_add(self.next_stream());
        }
        paper_dataset(&state.to_density(), &m)
    }

    fn bell_overrides(&self, label: BellState) -> ScheduleOverrides {
        let mut o = self.cfg.schedule.clone();
        o.bell_amplitude = Some(self.cfg.schedule.bell_amplitude_or_default());
        o.bell_channel = label.channel();
        o.bell_relative_phase = label.relative_phase();
        o
    }
}

fn series_at(tr: &Trajectory, name: &str, t: f64) -> Result<f64> {
    let s = tr.observable(name).ok_or_else(|| Error::Config(format!("observable {name} not recorded")))?;
    tr.times
        .iter()
        .position(|x| (x - t).abs() <= 1e-9)
        .map(|k| s[k])
        .ok_or_else(|| Error::Config(format!("no sample of {name} at t = {t}")))
}

fn state_at(tr: &Trajectory, t: f64) -> Result<&QuantumState> {
    tr.state_at(t).ok_or_else(|| Error::Config(format!("no stored state at t = {t}")))
}

/// Evolve `|0_F 0_F>` through the pump ramps; per-mode fidelity to the even
/// eigen-cat, parity and leakage, plus one-mode Wigner maps.
pub fn run_cat_gen(cfg: &ExperimentConfig) -> Result<RunReport> {
    let ctx = Ctx::new(cfg)?;
    let mut sink = Sink::new(&cfg.output_dir)?;
    let sched = preset_schedule(Preset::CatGen, &ctx.params, &cfg.schedule)?;
    let mut opts = ctx.opts();
    opts.observables = ctx.parities()?;
    let joint = &opts.observables[0].1 * &opts.observables[1].1;
    opts.observables.push(("joint_parity".into(), joint));
    let total = sched.total_duration();
    opts.sample_times = (0..=(total / 0.01).round() as usize).map(|k| (k as f64 * 0.01).min(total)).collect();
    let tr = ctx.evolve(&ctx.initial_state([0, 0])?, &sched, &opts)?;
    let fin = tr.final_state();

    let mut metrics = BTreeMap::new();
    let mut checks = Vec::new();
    for m in 0..2 {
        let reduced = fin.partial_trace_keep(m)?;
        let f = fidelity(&reduced, &ctx.cats.zero[m])?;
        let par = *tr.observable(&format!("parity{}", m + 1)).and_then(|s| s.last()).expect("parity series");
        let leak = fin.tail_population(m, 8)?;
        metrics.insert(format!("fidelity_mode{}", m + 1), f);
        metrics.insert(format!("parity_mode{}", m + 1), par);
        metrics.insert(format!("leakage_mode{}", m + 1), leak);
        checks.push(Check::new(format!("fidelity_mode{}", m + 1), f, 0.95, 1.0));
        checks.push(Check::new(format!("leakage_mode{}", m + 1), leak, 0.0, 1e-4));
        if !ctx.lindblad {
            checks.push(Check::new(format!("parity_mode{}", m + 1), par, 1.0 - 1e-6, 1.0 + 1e-6));
        }
        sink.grid(&format!("wigner_mode{}.csv", m + 1), &ctx.grid(fin, SliceKind::OneMode { mode: m })?)?;
    }
    let joint = *tr.observable("joint_parity").and_then(|s| s.last()).expect("joint parity series");
    metrics.insert("joint_parity".into(), joint);
    if !ctx.lindblad {
        checks.push(Check::new("joint_parity", joint, 1.0 - 1e-6, 1.0 + 1e-6));
    }
    metrics.insert("norm_drift".into(), tr.diagnostics.max_norm_drift);
    tr.write_csv(fs::File::create(sink.path("trajectory.csv"))?)?;
    sink.state("final_state.txt", fin)?;
    finish(Experiment::CatGen, cfg, sink, metrics, checks, tr.diagnostics.warnings.clone())
}

/// Bell-pulse chevron and the four Bell–Fock states at the configured pulse length.
pub fn run_bell_fock(cfg: &ExperimentConfig) -> Result<RunReport> {
    let ctx = Ctx::new(cfg)?;
    let mut sink = Sink::new(&cfg.output_dir)?;
    let mut metrics = BTreeMap::new();
    let mut checks = Vec::new();
    let amplitude = cfg.schedule.bell_amplitude_or_default();
    metrics.insert("bell_amplitude_MHz".into(), amplitude);
    if ctx.lindblad {
        metrics.insert("thermal_vacuum_bound".into(), ctx.params.thermal_vacuum_bound());
    }

    if cfg.sweep.chevron {
        let durations = cfg.sweep.durations.clone().unwrap_or(Axis::range(0.0, 3.0, 0.025)).values()?;
        let detunings = cfg.sweep.detunings.clone().unwrap_or(Axis::range(-3.0, 3.0, 0.25)).values()?;
        let length = durations.iter().cloned().fold(0.0, f64::max);
        if !(length > 0.0) {
            return Err(Error::Config("chevron durations need a positive entry".into()));
        }
        let mut channels: Vec<DriveChannel> = cfg.sweep.bell_states.iter().map(|b| b.channel()).collect();
        channels.dedup();
        let mut p0 = DMatrix::zeros(ctx.dims[0], ctx.dims[0]);
        p0[(0, 0)] = Complex64::new(1.0, 0.0);
        let proj = local(&Operator::new(vec![ctx.dims[0]], p0)?, 0, &ctx.dims)?;
        for ch in channels {
            let label = if ch == DriveChannel::BellSum { BellState::PhiPlus } else { BellState::PsiPlus };
            let resonance = ctx.params.resonant_bell_detuning(ch);
            let rows: Vec<Vec<f64>> = detunings
                .par_iter()
                .map(|&d| {
                    let mut o = ctx.bell_overrides(label);
                    o.bell_length = length;
                    o.bell_detuning = Some(resonance + d);
                    let sched = preset_schedule(Preset::BellFock, &ctx.params, &o)?;
                    let mut opts = ctx.opts();
                    opts.sample_times = durations.clone();
                    opts.observables = vec![("p0".into(), proj.clone())];
                    let tr = ctx.evolve(&ctx.initial_state(label.branches().0)?, &sched, &opts)?;
                    durations.iter().map(|&t| series_at(&tr, "p0", t)).collect()
                })
                .collect::<Result<_>>()?;
            let mut out = Vec::with_capacity(rows.len() * durations.len());
            for (d, row) in detunings.iter().zip(&rows) {
                for (t, p) in durations.iter().zip(row) {
                    out.push(vec![num(*d), num(*t), num(*p)]);
                }
            }
            sink.csv(&format!("chevron_{ch}.csv"), &["detuning_MHz", "duration_us", "p0_mode1"], &out)?;
            let centre =
                detunings.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|(k, _)| k).expect("nonempty detunings");
            let (lo, hi) = rows[centre].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            metrics.insert(format!("chevron_contrast_{ch}"), hi - lo);
        }
    }

    let results: Vec<(BellState, QuantumState, f64)> = cfg
        .sweep
        .bell_states
        .par_iter()
        .map(|&label| {
            let sched = preset_schedule(Preset::BellFock, &ctx.params, &ctx.bell_overrides(label))?;
            let tr = ctx.evolve(&ctx.initial_state(label.branches().0)?, &sched, &ctx.opts())?;
            let fin = tr.final_state().clone();
            let f = fidelity(&fin, &bell_fock_target(ctx.dims, label)?)?;
            Ok((label, fin, f))
        })
        .collect::<Result<_>>()?;
    let mut table = Vec::new();
    for (label, fin, f) in &results {
        metrics.insert(format!("fidelity_{label}"), *f);
        table.push(vec![label.to_string(), num(*f)]);
        if ctx.lindblad {
            checks.push(Check::new(format!("fidelity_{label}"), *f, 0.94, 0.98));
        } else {
            checks.push(Check::new(format!("fidelity_{label}"), *f, 0.99, 1.0));
        }
        sink.dataset(&format!("wigner_{label}"), &ctx.dataset(fin)?, &cfg.measurement)?;
    }
    sink.csv("fidelities.csv", &["state", "bell_fock_fidelity"], &table)?;
    finish(Experiment::BellFock, cfg, sink, metrics, checks, Vec::new())
}

/// Bell–Fock preparation followed by the pump ramps, for each requested Bell state.
pub fn run_fock_to_cat(cfg: &ExperimentConfig) -> Result<RunReport> {
    let ctx = Ctx::new(cfg)?;
    let mut sink = Sink::new(&cfg.output_dir)?;
    let mut metrics = BTreeMap::new();
    let mut checks = Vec::new();
    let mut warnings = Vec::new();

    struct Out {
        label: BellState,
        state: QuantumState,
        f_fock: f64,
        f_cat: f64,
        f_cat_fixed: f64,
        phase: f64,
        origin: f64,
        drift: f64,
        warnings: Vec<String>,
    }
    let outs: Vec<Out> = cfg
        .sweep
        .bell_states
        .par_iter()
        .map(|&label| {
            let o = ctx.bell_overrides(label);
            let sched = preset_schedule(Preset::FockToCat, &ctx.params, &o)?;
            let mut opts = ctx.opts();
            opts.store = StoreStates::Selected(vec![o.bell_length, sched.total_duration()]);
            opts.check_positivity = ctx.lindblad;
            let tr = ctx.evolve(&ctx.initial_state(label.branches().0)?, &sched, &opts)?;
            let f_fock = fidelity(state_at(&tr, o.bell_length)?, &bell_fock_target(ctx.dims, label)?)?;
            let fin = tr.final_state().clone();
            let (a, b) = label.branches();
            let (f_cat, phase) = best_phase_fidelity(&fin, &ctx.cats.ket(a)?, &ctx.cats.ket(b)?)?;
            let f_cat_fixed = fidelity(&fin, &ctx.cats.bell(label)?)?;
            let zero = Complex64::new(0.0, 0.0);
            let origin = two_mode_wigner(&fin.to_density(), zero, zero)?;
            Ok(Out {
                label,
                state: fin,
                f_fock,
                f_cat,
                f_cat_fixed,
                phase,
                origin,
                drift: tr.diagnostics.max_norm_drift,
                warnings: tr.diagnostics.warnings.clone(),
            })
        })
        .collect::<Result<_>>()?;

    let mut table = Vec::new();
    for o in &outs {
        let l = o.label;
        metrics.insert(format!("bell_fock_fidelity_{l}"), o.f_fock);
        metrics.insert(format!("bell_cat_fidelity_{l}"), o.f_cat);
        metrics.insert(format!("bell_cat_fidelity_fixed_phase_{l}"), o.f_cat_fixed);
        metrics.insert(format!("bell_cat_phase_{l}"), o.phase);
        metrics.insert(format!("origin_wigner_{l}"), o.origin);
        metrics.insert(format!("norm_drift_{l}"), o.drift);
        warnings.extend(o.warnings.iter().cloned());
        table.push(vec![l.to_string(), num(o.f_fock), num(o.f_cat), num(o.f_cat_fixed), num(o.phase), num(o.origin)]);
        if ctx.lindblad {
            checks.push(Check::new(format!("bell_fock_fidelity_{l}"), o.f_fock, 0.94, 0.98));
            checks.push(Check::new(format!("bell_cat_fidelity_{l}"), o.f_cat, 0.91, 0.95));
        } else {
            checks.push(Check::new(format!("bell_cat_fidelity_{l}"), o.f_cat, 0.95, 1.0));
        }
        let (lo, hi) = if l.is_odd() { (f64::NEG_INFINITY, 0.0) } else { (0.0, f64::INFINITY) };
        checks.push(Check::new(format!("origin_wigner_{l}"), o.origin, lo, hi));
        sink.dataset(&format!("wigner_{l}"), &ctx.dataset(&o.state)?, &cfg.measurement)?;
        sink.state(&format!("final_state_{l}.txt"), &o.state)?;
    }
    sink.csv(
        "fidelities.csv",
        &["state", "bell_fock_fidelity", "bell_cat_fidelity", "bell_cat_fidelity_fixed_phase", "bell_cat_phase_rad", "origin_wigner"],
        &table,
    )?;
    finish(Experiment::FockToCat, cfg, sink, metrics, checks, warnings)
}

/// Two-cat Rabi sweep from `|0_C 1_C>`: parities versus gate duration for each
/// gate phase (or detuning), fidelities at the √iSWAP and iSWAP points, and a
/// damped-cosine fit of the parity oscillation when the sweep is long enough.
pub fn run_two_cat_gate(cfg: &ExperimentConfig) -> Result<RunReport> {
    let ctx = Ctx::new(cfg)?;
    let mut sink = Sink::new(&cfg.output_dir)?;
    let mut metrics = BTreeMap::new();
    let mut checks = Vec::new();
    let o0 = &cfg.schedule;
    let durations = cfg.sweep.durations.clone().unwrap_or(Axis::range(0.0, 0.6, 0.005)).values()?;
    let length = durations.iter().cloned().fold(0.0, f64::max);
    if !(length > 0.0) {
        return Err(Error::Config("gate durations need a positive entry".into()));
    }
    let (axis_name, values) = match cfg.sweep.gate_axis {
        GateAxis::Phase => ("phase_rad", cfg.sweep.phases.clone().unwrap_or(Axis::List(vec![o0.gate_phase, o0.gate_phase + PI])).values()?),
        GateAxis::Detuning => ("detuning_MHz", cfg.sweep.detunings.clone().unwrap_or(Axis::range(-1.0, 1.0, 0.1)).values()?),
    };
    let ramp = o0.tau_ramp + o0.hold;
    let has = |d: f64| durations.iter().any(|x| (x - d).abs() <= 1e-9);
    let marks: Vec<f64> = [0.0, o0.gate_length, 0.480].into_iter().filter(|d| has(*d)).collect();
    metrics.insert("gate_amplitude_MHz".into(), o0.gate_amplitude);

    let runs: Vec<Trajectory> = values
        .par_iter()
        .map(|&v| {
            let mut o = o0.clone();
            o.gate_length = length;
            match cfg.sweep.gate_axis {
                GateAxis::Phase => o.gate_phase = v,
                GateAxis::Detuning => o.gate_detuning = v,
            }
            let sched = preset_schedule(Preset::TwoCatGate, &ctx.params, &o)?;
            let mut opts = ctx.opts();
            opts.sample_times = durations.iter().map(|d| ramp + d).collect();
            opts.observables = ctx.parities()?;
            opts.store = StoreStates::Selected(marks.iter().map(|d| ramp + d).collect());
            ctx.evolve(&ctx.initial_state([0, 1])?, &sched, &opts)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut anti: f64 = 0.0;
    let mut p1_first = Vec::new();
    for (k, (v, tr)) in values.iter().zip(&runs).enumerate() {
        for &d in &durations {
            let (a, b) = (series_at(tr, "parity1", ramp + d)?, series_at(tr, "parity2", ramp + d)?);
            anti = anti.max((a + b).abs());
            rows.push(vec![num(*v), num(d), num(a), num(b)]);
            if k == 0 {
                p1_first.push(a);
            }
        }
    }
    sink.csv("parity.csv", &[axis_name, "duration_us", "parity1", "parity2"], &rows)?;
    metrics.insert("parity_anticorrelation_max".into(), anti);
    if !ctx.lindblad {
        checks.push(Check::new("parity_anticorrelation_max", anti, 0.0, 1e-6));
    }

    let trend = fit_damped_cosine(&durations, &p1_first).ok();
    let t_min = trend.map(|f| {
        let period = 2.0 * PI / f.omega;
        (PI - f.phase).rem_euclid(2.0 * PI) / f.omega % period
    });
    metrics.insert("iswap_time_us".into(), t_min.unwrap_or(f64::NAN));
    if !ctx.lindblad {
        checks.push(Check::new("iswap_time_us", t_min.unwrap_or(f64::NAN), 0.480 * 0.85, 0.480 * 1.15));
    }

    let plus = equal_superposition(&ctx.cats.ket([0, 1])?, &ctx.cats.ket([1, 0])?, PI / 2.0)?;
    let minus = equal_superposition(&ctx.cats.ket([0, 1])?, &ctx.cats.ket([1, 0])?, -PI / 2.0)?;
    let mut signs = Vec::new();
    if has(o0.gate_length) {
        for (k, tr) in runs.iter().enumerate() {
            let s = state_at(tr, ramp + o0.gate_length)?;
            let (fp, fm) = (fidelity(s, &plus)?, fidelity(s, &minus)?);
            metrics.insert(format!("sqrt_iswap_fidelity_plus_{k}"), fp);
            metrics.insert(format!("sqrt_iswap_fidelity_minus_{k}"), fm);
            metrics.insert(format!("sqrt_iswap_fidelity_best_{k}"), fp.max(fm));
            signs.push(if fp >= fm { 1.0 } else { -1.0 });
            if !ctx.lindblad && (k == 0 || cfg.sweep.gate_axis == GateAxis::Phase) {
                checks.push(Check::new(format!("sqrt_iswap_fidelity_best_{k}"), fp.max(fm), 0.95, 1.0));
            }
        }
        if cfg.sweep.gate_axis == GateAxis::Phase && values.len() >= 2 && ((values[1] - values[0]).abs() - PI).abs() < 1e-9 {
            let flipped = if signs[0] != signs[1] { 1.0 } else { 0.0 };
            metrics.insert("sign_flip".into(), flipped);
            if !ctx.lindblad {
                checks.push(Check::new("sign_flip", flipped, 1.0, 1.0));
            }
        }
    }
    if has(0.480) {
        let f = fidelity(state_at(&runs[0], ramp + 0.480)?, &ctx.cats.ket([1, 0])?)?;
        metrics.insert("iswap_fidelity".into(), f);
        if !ctx.lindblad {
            checks.push(Check::new("iswap_fidelity", f, 0.95, 1.0));
        }
    }
    for &d in &marks {
        let s = state_at(&runs[0], ramp + d)?;
        for m in 0..2 {
            sink.grid(&format!("wigner_t{}ns_mode{}.csv", ms(d), m + 1), &ctx.grid(s, SliceKind::OneMode { mode: m })?)?;
        }
        if (d - o0.gate_length).abs() <= 1e-9 {
            let kind = SliceKind::TwoMode { axis: AxisKind::ReRe, offset: cfg.wigner.gate_offset };
            sink.grid(&format!("wigner2_t{}ns_offset.csv", ms(d)), &ctx.grid(s, kind)?)?;
        }
    }

    if length >= 1.0 {
        let fit = trend.ok_or_else(|| Error::Config("parity oscillation could not be fitted".into()))?;
        metrics.insert("rabi_decay_us".into(), fit.decay);
        metrics.insert("rabi_period_us".into(), 2.0 * PI / fit.omega);
        metrics.insert("rabi_fit_rms".into(), fit.rms_residual);
        if ctx.lindblad {
            checks.push(Check::new("rabi_decay_us", fit.decay, 3.0 * 0.7, 3.0 * 1.3));
        }
        let fitted: Vec<Vec<String>> = durations.iter().zip(&p1_first).map(|(t, y)| vec![num(*t), num(*y), num(fit.eval(*t))]).collect();
        sink.csv("rabi_fit.csv", &["duration_us", "parity1", "fit"], &fitted)?;
    }
    let warnings = runs.iter().flat_map(|t| t.diagnostics.warnings.iter().cloned()).collect();
    finish(Experiment::TwoCatGate, cfg, sink, metrics, checks, warnings)
}

/// The Bell–Cat state after `wait` µs with the pumps on and photon lifetime `t1`.
pub fn degraded_bell_cat(params: &SystemParams, label: BellState, wait: f64, t1: f64, dt: f64) -> Result<(QuantumState, QuantumState)> {
    let mut p = params.clone();
    p.t1_1 = t1;
    p.t1_2 = t1;
    let ideal = CatBasis::new(&p)?.bell(label)?;
    let sched = PulseSchedule::new(held_pumps(&p, 0.0, wait), wait)?;
    let opts = EvolveOptions { store: StoreStates::Final, ..EvolveOptions::with_dt(dt) };
    let tr = evolve_lindblad(&ideal.to_density(), &p, &sched, &opts)?;
    Ok((ideal, tr.final_state().clone()))
}

/// A ket (single column) or density matrix written by [`write_complex_matrix`].
pub fn read_state_file(path: &Path, dims: [usize; 2]) -> Result<QuantumState> {
    let m = read_complex_matrix(BufReader::new(fs::File::open(path)?))?;
    if m.ncols() == 1 {
        QuantumState::ket_normalized(dims.to_vec(), m.column(0).into_owned())
    } else {
        QuantumState::density(dims.to_vec(), m)
    }
}

/// Measure the twelve-slice dataset of a source state and reconstruct it.
pub fn run_tomography(cfg: &ExperimentConfig) -> Result<RunReport> {
    let ctx = Ctx::new(cfg)?;
    let mut sink = Sink::new(&cfg.output_dir)?;
    let mut metrics = BTreeMap::new();
    let mut checks = Vec::new();
    let tc = &cfg.tomography;
    let truth = match tc.source {
        StateSource::BellCat => ctx.cats.bell(tc.bell_state)?,
        StateSource::Degraded => {
            let (ideal, degraded) = degraded_bell_cat(&ctx.params, tc.bell_state, tc.wait, tc.degrade_t1, cfg.evolution.dt)?;
            let (a, b) = tc.bell_state.branches();
            let (f, phase) = best_phase_fidelity(&degraded, &ctx.cats.ket(a)?, &ctx.cats.ket(b)?)?;
            metrics.insert("truth_vs_initial_fidelity".into(), f);
            metrics.insert("truth_vs_initial_phase".into(), phase);
            metrics.insert("truth_vs_initial_fidelity_fixed_phase".into(), fidelity(&degraded, &ideal)?);
            checks.push(Check::new("truth_vs_initial_fidelity", f, 0.54, 0.60));
            degraded
        }
        StateSource::File => {
            let path = tc.file.as_deref().ok_or_else(|| Error::Config("tomography.file is not set".into()))?;
            let dims = tc.file_dims.ok_or_else(|| Error::Config("tomography.file_dims is required with a file source".into()))?;
            read_state_file(path, dims)?
        }
    };
    sink.state("truth.txt", &truth)?;
    let ds = ctx.dataset(&truth)?;
    sink.dataset("dataset", &ds, &cfg.measurement)?;
    let res = reconstruct(&ds, &tc.reconstruction, Some(&truth))?;
    let dir = cfg.output_dir.join("reconstruction");
    res.write_report(&dir, &tc.reconstruction)?;
    sink.files.extend(["report.toml", "loss.csv", "rho.txt"].map(|f| dir.join(f)));
    let f = res.fidelity.expect("target supplied");
    metrics.insert("reconstruction_fidelity".into(), f);
    metrics.insert("final_loss".into(), res.loss);
    metrics.insert("iterations".into(), res.iterations as f64);
    metrics.insert("converged".into(), if res.converged { 1.0 } else { 0.0 });
    let lo = match (tc.source, &cfg.measurement) {
        (StateSource::Degraded, _) => 0.98,
        (_, Measurement::Ideal) => 0.99,
        (_, Measurement::Shots { .. }) => 0.95,
    };
    checks.push(Check::new("reconstruction_fidelity", f, lo, 1.0));
    let mut warnings = Vec::new();
    if !res.converged {
        warnings.push(format!("reconstruction stopped at the iteration limit ({})", res.iterations));
    }
    finish(Experiment::Tomography, cfg, sink, metrics, checks, warnings)
}

fn finish(
    experiment: Experiment,
    cfg: &ExperimentConfig,
    mut sink: Sink,
    metrics: BTreeMap<String, f64>,
    checks: Vec<Check>,
    warnings: Vec<String>,
) -> Result<RunReport> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        experiment: Experiment,
        version: &'a str,
        warnings: &'a [String],
        metrics: &'a BTreeMap<String, f64>,
        check: Vec<(&'a Check, bool)>,
        config: &'a ExperimentConfig,
    }
    let mut resolved = cfg.clone();
    resolved.experiment = Some(experiment);
    let manifest = Manifest {
        experiment,
        version: env!("CARGO_PKG_VERSION"),
        warnings: &warnings,
        metrics: &metrics,
        check: checks.iter().map(|c| (c, c.passed())).collect(),
        config: &resolved,
    };
    let path = sink.path("manifest.toml");
    fs::write(&path, toml::to_string(&manifest)?)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(RunReport { experiment, output_dir: sink.dir, metrics, checks, files: sink.files, warnings })
}

/// Run the configured experiment, using at most `threads` workers for sweeps.
pub fn run(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunReport> {
    let experiment = cfg.experiment.ok_or_else(|| Error::Config("no experiment selected".into()))?;
    let go = || match experiment {
        Experiment::CatGen => run_cat_gen(cfg),
        Experiment::BellFock => run_bell_fock(cfg),
        Experiment::FockToCat => run_fock_to_cat(cfg),
        Experiment::TwoCatGate => run_two_cat_gate(cfg),
        Experiment::Tomography => run_tomography(cfg),
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(go),
        None => go(),
    }
}

/// Result of a one-parameter calibration, as a `--set` assignment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub key: String,
    pub value: f64,
    pub fidelity: f64,
}

impl Calibration {
    pub fn assignment(&self) -> String {
        format!("{}={}", self.key, self.value)
    }
}

/// Bell-pulse amplitude that maximizes the lossless Bell–Fock fidelity of the
/// first requested Bell state at the configured pulse length.
pub fn calibrate_bell_amplitude(cfg: &ExperimentConfig) -> Result<Calibration> {
    cfg.validate()?;
    let label = cfg.sweep.bell_states[0];
    let p = cfg.params.clone();
    let target = bell_fock_target(p.dims(), label)?;
    let start = QuantumState::fock(&p.dims(), &label.branches().0)?;
    let nominal = 1.0 / (4.0 * cfg.schedule.bell_length);
    let f = |amp: f64| -> Result<f64> {
        let mut o = cfg.schedule.clone();
        o.bell_amplitude = Some(amp);
        o.bell_channel = label.channel();
        o.bell_relative_phase = label.relative_phase();
        let sched = preset_schedule(Preset::BellFock, &p, &o)?;
        let opts = EvolveOptions { store: StoreStates::Final, ..EvolveOptions::with_dt(cfg.evolution.dt) };
        fidelity(evolve_unitary(&start, &p, &sched, &opts)?.final_state(), &target)
    };
    let (value, fidelity) = golden_max(f, 0.5 * nominal, 1.5 * nominal, 1e-5 * nominal)?;
    Ok(Calibration { key: "schedule.bell_amplitude".into(), value, fidelity })
}

/// Gate amplitude whose pulse of `gate_length` takes `|0_C 1_C>` closest to
/// `(|0_C 1_C> ± i|1_C 0_C>)/√2` (the first such lobe).
pub fn calibrate_gate_amplitude(cfg: &ExperimentConfig) -> Result<Calibration> {
    cfg.validate()?;
    let p = cfg.params.clone();
    let cats = CatBasis::new(&p)?;
    let o0 = &cfg.schedule;
    let ramp = o0.tau_ramp + o0.hold;
    let opts = EvolveOptions { store: StoreStates::Final, ..EvolveOptions::with_dt(cfg.evolution.dt) };
    let cat_sched = preset_schedule(Preset::CatGen, &p, o0)?;
    let ramped = evolve_unitary(&QuantumState::fock(&p.dims(), &[0, 1])?, &p, &cat_sched, &opts)?.final_state().clone();
    let plus = equal_superposition(&cats.ket([0, 1])?, &cats.ket([1, 0])?, PI / 2.0)?;
    let minus = equal_superposition(&cats.ket([0, 1])?, &cats.ket([1, 0])?, -PI / 2.0)?;
    let f = |amp: f64| -> Result<f64> {
        let mut o = o0.clone();
        o.gate_amplitude = amp;
        let sched = preset_schedule(Preset::TwoCatGate, &p, &o)?;
        let opts = EvolveOptions { t_start: ramp, ..opts.clone() };
        let fin = evolve_unitary(&ramped, &p, &sched, &opts)?;
        Ok(fidelity(fin.final_state(), &plus)?.max(fidelity(fin.final_state(), &minus)?))
    };
    let n_mean: f64 = cats.zero[0].populations(0)?.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let nominal = 1.0 / (16.0 * n_mean.max(0.1) * o0.gate_length);
    let scan: Vec<f64> = (0..36).map(|k| nominal * (0.25 + 0.05 * k as f64)).collect();
    let vals: Vec<f64> = scan.par_iter().map(|&x| f(x)).collect::<Result<_>>()?;
    let k = (1..vals.len() - 1)
        .find(|&k| vals[k] > 0.5 && vals[k] >= vals[k - 1] && vals[k] >= vals[k + 1])
        .unwrap_or_else(|| vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k).expect("nonempty"));
    let (lo, hi) = (scan[k.saturating_sub(1)], scan[(k + 1).min(scan.len() - 1)]);
    let (value, fidelity) = golden_max(f, lo, hi, 1e-5 * nominal)?;
    Ok(Calibration { key: "schedule.gate_amplitude".into(), value, fidelity })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_phase_matches_direct_maximum() {
        let p = SystemParams::paper().with_truncation(8);
        let cats = CatBasis::new(&p).unwrap();
        let (a, b) = (cats.ket([0, 0]).unwrap(), cats.ket([1, 1]).unwrap());
        let psi = equal_superposition(&a, &b, 0.7).unwrap();
        let (f, phase) = best_phase_fidelity(&psi, &a, &b).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
        assert!((phase - 0.7).abs() < 1e-9);
        let (fd, _) = best_phase_fidelity(&psi.to_density(), &a, &b).unwrap();
        assert!((fd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn golden_section_finds_peak() {
        let (x, fx) = golden_max(|x| Ok(-(x - 0.3) * (x - 0.3)), 0.0, 1.0, 1e-8).unwrap();
        assert!((x - 0.3).abs() < 1e-6 && fx <= 0.0);
    }

    #[test]
    fn thermal_initial_state_swaps_level() {
        let cfg = ExperimentConfig { params: SystemParams::paper().with_truncation(5).with_loss(100.0, 0.01), ..Default::default() };
        let ctx = Ctx::new(&cfg).unwrap();
        assert!(ctx.lindblad);
        let rho = ctx.initial_state([0, 1]).unwrap();
        let p2 = rho.populations(1).unwrap();
        assert!(p2[1] > 0.98 && p2[0] > 0.0 && p2[0] < 0.011);
        assert!((rho.trace() - 1.0).abs() < 1e-12);
    }
}
