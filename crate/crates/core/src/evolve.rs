//! Schrödinger and Lindblad propagation under a pulse schedule.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fockspace::{QuantumState as State, StateData};
use crate::model::{
    collapse_operators, term_coefficients, term_operators, CollapseKind, DriveChannel, DriveSpec, SystemParams, Term, TERMS,
};
use crate::pulses::{sort_dedup, PulseSchedule};
use crate::sparse::Csr;
use crate::{Complex64, Operator, QuantumState};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Debug, PartialEq)]
pub enum StoreStates {
    /// Keep the state at every sample time.
    Samples,
    /// Keep only the final state.
    Final,
    /// Keep the final state and the states at these times (they are added to the samples).
    Selected(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    /// Maximum step (µs); each interval between breakpoints is split evenly,
    /// more finely if the generator's spectral radius requires it for stability.
    pub dt: f64,
    pub t_start: f64,
    /// Defaults to the schedule end.
    pub t_end: Option<f64>,
    /// Extra sample times; the start and end are always sampled.
    pub sample_times: Vec<f64>,
    pub store: StoreStates,
    pub observables: Vec<(String, Operator)>,
    /// Diagonalize the final density matrix to look for negative eigenvalues.
    pub check_positivity: bool,
    /// Largest `h ρ` per step, with `ρ` the spectral radius of the generator.
    /// Defaults to [`KET_STEP_RADIUS`] or [`DENSITY_STEP_RADIUS`].
    pub step_radius: Option<f64>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            dt: 0.001,
            t_start: 0.0,
            t_end: None,
            sample_times: Vec::new(),
            store: StoreStates::Samples,
            observables: Vec::new(),
            check_positivity: false,
            step_radius: None,
        }
    }
}

impl EvolveOptions {
    pub fn with_dt(dt: f64) -> Self {
        Self { dt, ..Self::default() }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    pub steps: usize,
    /// Largest deviation of the norm (kets) or trace (densities) from its initial value.
    pub max_norm_drift: f64,
    pub min_eigenvalue: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Times of the stored states.
    pub state_times: Vec<f64>,
    pub states: Vec<QuantumState>,
    pub observables: Vec<(String, Vec<f64>)>,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub fn final_state(&self) -> &QuantumState {
        self.states.last().expect("trajectory keeps at least the final state")
    }

    /// Stored state at time `t` (to within a picosecond).
    pub fn state_at(&self, t: f64) -> Option<&QuantumState> {
        self.state_times.iter().position(|s| (s - t).abs() <= 1e-6).map(|k| &self.states[k])
    }

    pub fn observable(&self, name: &str) -> Option<&[f64]> {
        self.observables.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// `t_us` followed by one column per observable.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t_us".to_string()];
        header.extend(self.observables.iter().map(|(n, _)| n.clone()));
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:.9}")];
            row.extend(self.observables.iter().map(|(_, v)| format!("{:.12e}", v[k])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Compiled `-i H_eff(t)` on the union sparsity pattern of all terms.
///
/// The static Kerr diagonal `H0` is removed by working in its interaction
/// frame: every element `(r, c)` carries the phase `e^{i(E_r - E_c) t}`, and
/// states are converted with `e^{∓i H0 t}` on the way in and out. This keeps
/// the explicit integrator stable for large truncations.
struct Generator {
    params: SystemParams,
    a: Csr,
    rows: Vec<usize>,
    /// Diagonal of `H0` (rad/µs).
    e0: Vec<f64>,
    /// Per Hamiltonian term, then per jump (anti-Hermitian part), the
    /// pattern positions and values of the term operator.
    scatter: Vec<Vec<(usize, Complex64)>>,
    jumps: Vec<(CollapseKind, Csr)>,
    jump_base: Vec<Vec<Complex64>>,
    jump_on: Vec<bool>,
    drives: Vec<DriveSpec>,
    assembled_at: Option<f64>,
    phase: Vec<Complex64>,
    rotation: f64,
}

impl Generator {
    fn new(params: &SystemParams, with_jumps: bool) -> Result<Self> {
        params.validate()?;
        let dims = params.dims();
        let mut dense: Vec<DMatrix<Complex64>> = term_operators(&dims)?.into_iter().map(Operator::into_data).collect();
        let n = dense[0].nrows();
        let kerr = term_coefficients(params, &[], 0.0)?;
        let mut e0 = vec![0.0; n];
        for (i, term) in TERMS.iter().enumerate() {
            if matches!(term, Term::Kerr(_)) {
                for (r, e) in e0.iter_mut().enumerate() {
                    *e += (kerr[i] * dense[i][(r, r)]).re;
                }
            }
        }
        let mut jumps = Vec::new();
        if with_jumps {
            for c in collapse_operators(params)? {
                let cd = c.op.adjoint();
                dense.push((&cd * &c.op).into_data());
                jumps.push((c.kind, Csr::from_dense(c.op.data())));
            }
        }
        let mask = DMatrix::from_fn(n, n, |r, c| dense.iter().any(|m| m[(r, c)] != ZERO));
        let a = Csr::from_mask(&mask);
        let mut rows = vec![0; a.nnz()];
        for r in 0..n {
            rows[a.indptr[r]..a.indptr[r + 1]].iter_mut().for_each(|x| *x = r);
        }
        let scatter = dense
            .iter()
            .map(|m| {
                let s = Csr::from_dense(m);
                let mut v = Vec::with_capacity(s.nnz());
                for r in 0..n {
                    for k in s.indptr[r]..s.indptr[r + 1] {
                        let pos = a.position(r, s.indices[k]).expect("term inside union pattern");
                        v.push((pos, s.values[k]));
                    }
                }
                v
            })
            .collect();
        let jump_base = jumps.iter().map(|(_, c)| c.values.clone()).collect();
        let jump_on = vec![true; jumps.len()];
        Ok(Self {
            params: params.clone(),
            a,
            rows,
            e0,
            scatter,
            jumps,
            jump_base,
            jump_on,
            drives: Vec::new(),
            assembled_at: None,
            phase: vec![ZERO; n],
            rotation: 0.0,
        })
    }

    /// Select the drives and jump channels active on the interval containing `mid`.
    fn enter_interval(&mut self, schedule: &PulseSchedule, mid: f64) -> Result<()> {
        self.drives = schedule.drives_at(mid).into_iter().cloned().collect();
        // explicit phase rotation of the coefficients (rad/µs)
        let mut rate: f64 = if self.params.g != 0.0 { self.params.delta_p.abs() } else { 0.0 };
        for d in &self.drives {
            let det = d.detuning.value(mid)?;
            rate = rate.max(match d.channel {
                DriveChannel::Pump1 | DriveChannel::Pump2 => 0.0,
                DriveChannel::BellSum => (det - self.params.delta_ac).abs(),
                _ => det.abs(),
            });
        }
        self.rotation = std::f64::consts::TAU * rate;
        let pumped = schedule.pumps_active(mid);
        for (on, (kind, _)) in self.jump_on.iter_mut().zip(&self.jumps) {
            *on = !(matches!(kind, CollapseKind::Dephasing(_)) && pumped && !self.params.dephasing_during_pumps);
        }
        self.assembled_at = None;
        Ok(())
    }

    /// `e^{i E_r t}` for every basis state.
    fn frame_phases(&self, t: f64) -> Vec<Complex64> {
        self.e0.iter().map(|e| Complex64::from_polar(1.0, e * t)).collect()
    }

    fn assemble(&mut self, t: f64) -> Result<()> {
        if self.assembled_at == Some(t) {
            return Ok(());
        }
        let refs: Vec<&DriveSpec> = self.drives.iter().collect();
        let coeffs = term_coefficients(&self.params, &refs, t)?;
        let minus_i = Complex64::new(0.0, -1.0);
        self.a.values.iter_mut().for_each(|v| *v = ZERO);
        for (i, c) in coeffs.iter().enumerate() {
            if *c == ZERO || matches!(TERMS[i], Term::Kerr(_)) {
                continue;
            }
            let f = minus_i * c;
            for &(pos, v) in &self.scatter[i] {
                self.a.values[pos] += f * v;
            }
        }
        // -i * (-i/2) c†c = -c†c / 2
        for (j, on) in self.jump_on.iter().enumerate() {
            if *on {
                for &(pos, v) in &self.scatter[TERMS.len() + j] {
                    self.a.values[pos] -= 0.5 * v;
                }
            }
        }
        self.phase = self.frame_phases(t);
        let ph = &self.phase;
        for (k, v) in self.a.values.iter_mut().enumerate() {
            *v *= ph[self.rows[k]] * ph[self.a.indices[k]].conj();
        }
        for ((_, c), base) in self.jumps.iter_mut().zip(&self.jump_base) {
            for r in 0..c.n {
                for k in c.indptr[r]..c.indptr[r + 1] {
                    c.values[k] = base[k] * ph[r] * ph[c.indices[k]].conj();
                }
            }
        }
        self.assembled_at = Some(t);
        Ok(())
    }

    /// Power-iteration estimate (with a safety margin) of the largest
    /// `|λ|` of the assembled generator over the given times.
    fn spectral_radius(&mut self, times: &[f64]) -> Result<f64> {
        let n = self.a.n;
        let mut worst: f64 = 0.0;
        for &t in times {
            self.assemble(t)?;
            let mut x: Vec<Complex64> = (0..n).map(|k| Complex64::new(1.0 + (k % 7) as f64 * 0.1, (k % 3) as f64 * 0.1)).collect();
            let mut y = vec![ZERO; n];
            let mut est: f64 = 0.0;
            for _ in 0..60 {
                let nx = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                x.iter_mut().for_each(|z| *z /= nx);
                self.a.matvec(&x, &mut y);
                est = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                std::mem::swap(&mut x, &mut y);
            }
            worst = worst.max(est);
        }
        Ok(1.1 * worst)
    }

    /// Lab-frame ket columns to the interaction frame at `t` (`sign = 1`) or back (`sign = -1`).
    fn convert_kets(&self, y: &mut DMatrix<Complex64>, t: f64, sign: f64) {
        let ph = self.frame_phases(sign * t);
        for mut col in y.column_iter_mut() {
            for (z, p) in col.iter_mut().zip(&ph) {
                *z *= p;
            }
        }
    }

    fn convert_density(&self, rho: &mut DMatrix<Complex64>, t: f64, sign: f64) {
        let ph = self.frame_phases(sign * t);
        let n = rho.nrows();
        for c in 0..n {
            for r in 0..n {
                rho[(r, c)] *= ph[r] * ph[c].conj();
            }
        }
    }
}

/// Integration grid: breakpoints and sample times inside `[t0, t1]`.
fn grid(schedule: &PulseSchedule, opts: &EvolveOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(opts.dt > 0.0) || !opts.dt.is_finite() {
        return Err(Error::Parameter(format!("time step must be positive, got {}", opts.dt)));
    }
    let t0 = opts.t_start;
    let t1 = opts.t_end.unwrap_or(schedule.total_duration());
    if !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::Parameter(format!("invalid time window [{t0}, {t1}]")));
    }
    let mut samples: Vec<f64> = opts.sample_times.clone();
    if let StoreStates::Selected(ts) = &opts.store {
        samples.extend_from_slice(ts);
    }
    samples.retain(|t| *t >= t0 && *t <= t1);
    samples.push(t0);
    samples.push(t1);
    let samples = sort_dedup(samples);
    let mut pts: Vec<f64> = schedule.breakpoints().into_iter().filter(|t| *t > t0 && *t < t1).collect();
    pts.extend_from_slice(&samples);
    Ok((sort_dedup(pts), samples))
}

fn is_sample(samples: &[f64], t: f64) -> bool {
    samples.iter().any(|s| (s - t).abs() <= 1e-12)
}

/// `out = y + c k`.
fn stage(out: &mut DMatrix<Complex64>, y: &DMatrix<Complex64>, c: f64, k: &DMatrix<Complex64>) {
    for ((o, a), b) in out.iter_mut().zip(y.iter()).zip(k.iter()) {
        *o = a + c * b;
    }
}

/// RK4 on a stack of kets stored as matrix columns.
struct KetStepper {
    k: [DMatrix<Complex64>; 4],
    tmp: DMatrix<Complex64>,
}

impl KetStepper {
    fn new(n: usize, m: usize) -> Self {
        let z = DMatrix::zeros(n, m);
        Self { k: [z.clone(), z.clone(), z.clone(), z.clone()], tmp: z }
    }

    fn step(&mut self, g: &mut Generator, y: &mut DMatrix<Complex64>, t: f64, h: f64) -> Result<()> {
        g.assemble(t)?;
        g.a.mul_dense(y, &mut self.k[0]);
        g.assemble(t + 0.5 * h)?;
        stage(&mut self.tmp, y, 0.5 * h, &self.k[0]);
        g.a.mul_dense(&self.tmp, &mut self.k[1]);
        stage(&mut self.tmp, y, 0.5 * h, &self.k[1]);
        g.a.mul_dense(&self.tmp, &mut self.k[2]);
        g.assemble(t + h)?;
        stage(&mut self.tmp, y, h, &self.k[2]);
        g.a.mul_dense(&self.tmp, &mut self.k[3]);
        let w = h / 6.0;
        let ys = y.as_mut_slice();
        let (k0, k1, k2, k3) = (self.k[0].as_slice(), self.k[1].as_slice(), self.k[2].as_slice(), self.k[3].as_slice());
        for i in 0..ys.len() {
            ys[i] += w * (k0[i] + 2.0 * (k1[i] + k2[i]) + k3[i]);
        }
        Ok(())
    }
}

/// RK4 on `dρ/dt = A ρ + ρ A† + Σ c ρ c†` with `A = -i H_eff`.
struct DensityStepper {
    k: [DMatrix<Complex64>; 4],
    tmp: DMatrix<Complex64>,
    m: DMatrix<Complex64>,
    x: DMatrix<Complex64>,
    xd: DMatrix<Complex64>,
    y: DMatrix<Complex64>,
}

impl DensityStepper {
    fn new(n: usize) -> Self {
        let z = DMatrix::zeros(n, n);
        Self { k: [z.clone(), z.clone(), z.clone(), z.clone()], tmp: z.clone(), m: z.clone(), x: z.clone(), xd: z.clone(), y: z }
    }

    fn rhs(&mut self, g: &Generator, rho_from_tmp: bool, rho: &DMatrix<Complex64>, slot: usize) {
        let src = if rho_from_tmp { &self.tmp } else { rho };
        g.a.mul_dense(src, &mut self.m);
        let n = src.nrows();
        let out = &mut self.k[slot];
        for j in 0..n {
            for i in 0..n {
                out[(i, j)] = self.m[(i, j)] + self.m[(j, i)].conj();
            }
        }
        for ((_, c), on) in g.jumps.iter().zip(&g.jump_on) {
            if !*on {
                continue;
            }
            c.mul_dense(src, &mut self.x);
            self.x.adjoint_to(&mut self.xd);
            c.mul_dense(&self.xd, &mut self.y);
            *out += &self.y;
        }
    }

    fn step(&mut self, g: &mut Generator, rho: &mut DMatrix<Complex64>, t: f64, h: f64) -> Result<()> {
        g.assemble(t)?;
        self.rhs(g, false, rho, 0);
        g.assemble(t + 0.5 * h)?;
        stage(&mut self.tmp, rho, 0.5 * h, &self.k[0]);
        self.rhs(g, true, rho, 1);
        stage(&mut self.tmp, rho, 0.5 * h, &self.k[1]);
        self.rhs(g, true, rho, 2);
        g.assemble(t + h)?;
        stage(&mut self.tmp, rho, h, &self.k[2]);
        self.rhs(g, true, rho, 3);
        let w = h / 6.0;
        {
            let ys = rho.as_mut_slice();
            let (k0, k1, k2, k3) = (self.k[0].as_slice(), self.k[1].as_slice(), self.k[2].as_slice(), self.k[3].as_slice());
            for i in 0..ys.len() {
                ys[i] += w * (k0[i] + 2.0 * (k1[i] + k2[i]) + k3[i]);
            }
        }
        let n = rho.nrows();
        for j in 0..n {
            rho[(j, j)].im = 0.0;
            for i in (j + 1)..n {
                let avg = 0.5 * (rho[(i, j)] + rho[(j, i)].conj());
                rho[(i, j)] = avg;
                rho[(j, i)] = avg.conj();
            }
        }
        Ok(())
    }
}

fn all_finite(m: &DMatrix<Complex64>) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// State being integrated: advances by one step and reports samples.
trait Propagated {
    fn step(&mut self, g: &mut Generator, t: f64, h: f64) -> Result<()>;
    fn sample(&mut self, g: &Generator, t: f64) -> Result<()>;
}

/// Default `h ρ(H)` bound for kets: keeps the norm drift near 1e-9 per µs.
pub const KET_STEP_RADIUS: f64 = 0.1;

/// Default `h ρ(H)` bound for density matrices. The Lindblad generator
/// reaches `2ρ(H)` and RK4 is stable up to `2√2` on the imaginary axis.
pub const DENSITY_STEP_RADIUS: f64 = 1.15;

/// Walk the grid, stepping evenly inside each interval between breakpoints.
fn integrate(
    g: &mut Generator,
    schedule: &PulseSchedule,
    opts: &EvolveOptions,
    default_radius: f64,
    state: &mut impl Propagated,
) -> Result<usize> {
    let bound = opts.step_radius.unwrap_or(default_radius);
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(Error::Parameter(format!("step radius must be positive, got {bound}")));
    }
    let (pts, samples) = grid(schedule, opts)?;
    state.sample(g, pts[0])?;
    let mut steps = 0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        g.enter_interval(schedule, 0.5 * (a + b))?;
        let radius = g.spectral_radius(&[a, 0.5 * (a + b), b])? + g.rotation;
        let h_max = opts.dt.min(bound / radius.max(1e-300));
        let n = ((b - a) / h_max - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        for k in 0..n {
            state.step(g, a + k as f64 * h, h)?;
            steps += 1;
        }
        if is_sample(&samples, b) {
            state.sample(g, b)?;
        }
    }
    Ok(steps)
}

struct Recorder {
    dims: Vec<usize>,
    observables: Vec<(String, Csr)>,
    series: Vec<Vec<f64>>,
    times: Vec<f64>,
    state_times: Vec<f64>,
    states: Vec<QuantumState>,
    store: StoreStates,
    t_final: f64,
}

impl Recorder {
    fn new(opts: &EvolveOptions, schedule: &PulseSchedule, dims: &[usize]) -> Result<Self> {
        let mut observables = Vec::new();
        for (name, op) in &opts.observables {
            if op.dims() != dims {
                return Err(Error::DimensionMismatch(format!("observable {name} has dims {:?}, state has {dims:?}", op.dims())));
            }
            observables.push((name.clone(), Csr::from_dense(op.data())));
        }
        Ok(Self {
            dims: dims.to_vec(),
            series: vec![Vec::new(); observables.len()],
            observables,
            times: Vec::new(),
            state_times: Vec::new(),
            states: Vec::new(),
            store: opts.store.clone(),
            t_final: opts.t_end.unwrap_or(schedule.total_duration()),
        })
    }

    fn keep(&mut self, t: f64) -> bool {
        let keep = match &self.store {
            StoreStates::Samples => true,
            StoreStates::Final => (t - self.t_final).abs() <= 1e-12,
            StoreStates::Selected(ts) => (t - self.t_final).abs() <= 1e-12 || ts.iter().any(|s| (s - t).abs() <= 1e-12),
        };
        if keep {
            self.state_times.push(t);
        }
        keep
    }

    fn finish(self, diagnostics: Diagnostics) -> Trajectory {
        Trajectory {
            times: self.times,
            state_times: self.state_times,
            states: self.states,
            observables: self.observables.into_iter().map(|(n, _)| n).zip(self.series).collect(),
            diagnostics,
        }
    }
}

struct KetRun {
    y: DMatrix<Complex64>,
    stepper: KetStepper,
    rec: Recorder,
    norm0: f64,
    drift: f64,
}

impl Propagated for KetRun {
    fn step(&mut self, g: &mut Generator, t: f64, h: f64) -> Result<()> {
        self.stepper.step(g, &mut self.y, t, h)?;
        let nrm = self.y.norm();
        if !nrm.is_finite() {
            return Err(Error::Diverged { t: t + h });
        }
        self.drift = self.drift.max((nrm - self.norm0).abs());
        Ok(())
    }

    fn sample(&mut self, g: &Generator, t: f64) -> Result<()> {
        // report the normalized state; the raw drift is kept in the diagnostics
        let mut lab = self.y.scale(self.norm0 / self.y.norm());
        g.convert_kets(&mut lab, t, -1.0);
        let col: Vec<Complex64> = lab.column(0).iter().copied().collect();
        for ((_, op), s) in self.rec.observables.iter().zip(self.rec.series.iter_mut()) {
            s.push(op.expect_ket(&col).re);
        }
        self.rec.times.push(t);
        if self.rec.keep(t) {
            let st = State::ket_unchecked(self.rec.dims.clone(), DVector::from_vec(col))?;
            self.rec.states.push(st);
        }
        Ok(())
    }
}

fn check_dims(state: &QuantumState, params: &SystemParams) -> Result<Vec<usize>> {
    let dims = params.dims().to_vec();
    if state.dims() != dims.as_slice() {
        return Err(Error::DimensionMismatch(format!("state dims {:?} vs model dims {dims:?}", state.dims())));
    }
    Ok(dims)
}

/// Fixed-step RK4 for `dψ/dt = -i H(t) ψ`.
pub fn evolve_unitary(psi0: &QuantumState, params: &SystemParams, schedule: &PulseSchedule, opts: &EvolveOptions) -> Result<Trajectory> {
    let psi = psi0.as_ket().ok_or_else(|| Error::Parameter("unitary evolution needs a ket".into()))?;
    let dims = check_dims(psi0, params)?;
    let g0 = Generator::new(params, false)?;
    let mut y = DMatrix::from_column_slice(psi.len(), 1, psi.as_slice());
    g0.convert_kets(&mut y, opts.t_start, 1.0);
    let mut g = g0;
    let mut run =
        KetRun { y, stepper: KetStepper::new(psi.len(), 1), rec: Recorder::new(opts, schedule, &dims)?, norm0: psi.norm(), drift: 0.0 };
    let steps = integrate(&mut g, schedule, opts, KET_STEP_RADIUS, &mut run)?;
    let diagnostics = Diagnostics { steps, max_norm_drift: run.drift, ..Default::default() };
    Ok(run.rec.finish(diagnostics))
}

struct StackRun {
    y: DMatrix<Complex64>,
    stepper: KetStepper,
}

impl Propagated for StackRun {
    fn step(&mut self, g: &mut Generator, t: f64, h: f64) -> Result<()> {
        self.stepper.step(g, &mut self.y, t, h)?;
        if !all_finite(&self.y) {
            return Err(Error::Diverged { t: t + h });
        }
        Ok(())
    }

    fn sample(&mut self, _g: &Generator, _t: f64) -> Result<()> {
        Ok(())
    }
}

/// Propagate several kets together and return their final states.
pub fn propagate_kets(
    kets: &[QuantumState],
    params: &SystemParams,
    schedule: &PulseSchedule,
    opts: &EvolveOptions,
) -> Result<Vec<QuantumState>> {
    let Some(first) = kets.first() else {
        return Ok(Vec::new());
    };
    let dims = check_dims(first, params)?;
    let n = first.dim();
    let mut y = DMatrix::zeros(n, kets.len());
    for (j, k) in kets.iter().enumerate() {
        check_dims(k, params)?;
        let v = k.as_ket().ok_or_else(|| Error::Parameter("propagate_kets needs kets".into()))?;
        y.set_column(j, v);
    }
    let mut g = Generator::new(params, false)?;
    g.convert_kets(&mut y, opts.t_start, 1.0);
    let mut run = StackRun { y, stepper: KetStepper::new(n, kets.len()) };
    integrate(&mut g, schedule, opts, KET_STEP_RADIUS, &mut run)?;
    let (_, samples) = grid(schedule, opts)?;
    g.convert_kets(&mut run.y, *samples.last().expect("end sample"), -1.0);
    (0..kets.len()).map(|j| State::ket_unchecked(dims.clone(), run.y.column(j).into_owned())).collect()
}

struct DensityRun {
    rho: DMatrix<Complex64>,
    stepper: DensityStepper,
    rec: Recorder,
    trace0: f64,
    drift: f64,
}

impl Propagated for DensityRun {
    fn step(&mut self, g: &mut Generator, t: f64, h: f64) -> Result<()> {
        self.stepper.step(g, &mut self.rho, t, h)?;
        let tr = self.rho.trace().re;
        if !tr.is_finite() || !all_finite(&self.rho) {
            return Err(Error::Diverged { t: t + h });
        }
        self.drift = self.drift.max((tr - self.trace0).abs());
        Ok(())
    }

    fn sample(&mut self, g: &Generator, t: f64) -> Result<()> {
        let mut lab = self.rho.scale(self.trace0 / self.rho.trace().re);
        g.convert_density(&mut lab, t, -1.0);
        for ((_, op), s) in self.rec.observables.iter().zip(self.rec.series.iter_mut()) {
            s.push(op.trace_product(&lab).re);
        }
        self.rec.times.push(t);
        if self.rec.keep(t) {
            self.rec.states.push(State::density_unchecked(self.rec.dims.clone(), lab)?);
        }
        Ok(())
    }
}

/// Fixed-step RK4 for the Lindblad master equation with the model's collapse operators.
pub fn evolve_lindblad(rho0: &QuantumState, params: &SystemParams, schedule: &PulseSchedule, opts: &EvolveOptions) -> Result<Trajectory> {
    let dims = check_dims(rho0, params)?;
    let mut rho = rho0.density_matrix();
    let mut g = Generator::new(params, true)?;
    g.convert_density(&mut rho, opts.t_start, 1.0);
    let mut run = DensityRun {
        stepper: DensityStepper::new(rho.nrows()),
        rec: Recorder::new(opts, schedule, &dims)?,
        trace0: rho.trace().re,
        drift: 0.0,
        rho,
    };
    let steps = integrate(&mut g, schedule, opts, DENSITY_STEP_RADIUS, &mut run)?;
    let mut diagnostics = Diagnostics { steps, max_norm_drift: run.drift, ..Default::default() };
    if opts.check_positivity {
        let min = run.rec.states.last().map(|s| s.min_eigenvalue()).unwrap_or(0.0);
        diagnostics.min_eigenvalue = Some(min);
        if min < -1e-6 {
            let msg = format!("final density matrix has eigenvalue {min:.3e}");
            log::warn!("{msg}");
            diagnostics.warnings.push(msg);
        }
    }
    Ok(run.rec.finish(diagnostics))
}

fn psd_sqrt(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let eig = m.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0)));
    v * d * v.adjoint()
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(ρ) σ sqrt(ρ)))²`, with the pure-state shortcuts.
pub fn fidelity(rho: &QuantumState, sigma: &QuantumState) -> Result<f64> {
    if rho.dims() != sigma.dims() {
        return Err(Error::DimensionMismatch(format!("fidelity between {:?} and {:?}", rho.dims(), sigma.dims())));
    }
    let f = match (rho.data(), sigma.data()) {
        (StateData::Ket(a), StateData::Ket(b)) => a.dotc(b).norm_sqr(),
        (StateData::Ket(a), StateData::Density(m)) | (StateData::Density(m), StateData::Ket(a)) => (a.adjoint() * m * a)[(0, 0)].re,
        (StateData::Density(a), StateData::Density(b)) => {
            let s = psd_sqrt(a);
            let inner = &s * b * &s;
            let inner = (&inner + inner.adjoint()) * Complex64::new(0.5, 0.0);
            let root: f64 = inner.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
            root * root
        }
    };
    Ok(f.clamp(0.0, 1.0))
}

/// Two-cat gate matrix `(I + i X⊗X)/√2` in the order `|00>, |01>, |10>, |11>`.
pub fn gate_unitary_reference() -> Operator {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (r, i) = (Complex64::new(s, 0.0), Complex64::new(0.0, s));
    let data = DMatrix::from_fn(4, 4, |a, b| {
        if a == b {
            r
        } else if a + b == 3 {
            i
        } else {
            ZERO
        }
    });
    Operator::new(vec![2, 2], data).expect("4x4 on 2x2")
}

/// `|Tr(U_ref† U)|² / d²` for a (possibly non-unitary) restriction `U`.
pub fn subspace_process_fidelity(u: &DMatrix<Complex64>, reference: &DMatrix<Complex64>) -> Result<f64> {
    if u.shape() != reference.shape() || !u.is_square() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", u.shape(), reference.shape())));
    }
    let d = u.nrows() as f64;
    Ok((reference.adjoint() * u).trace().norm_sqr() / (d * d))
}

/// Write a complex matrix as text: a `# rows cols` header, then one line per
/// row of whitespace-separated `re,im` pairs.
pub fn write_complex_matrix<W: Write>(mut out: W, m: &DMatrix<Complex64>) -> Result<()> {
    writeln!(out, "# {} {}", m.nrows(), m.ncols())?;
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.17e},{:.17e}", m[(r, c)].re, m[(r, c)].im)).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_complex_matrix<R: BufRead>(input: R) -> Result<DMatrix<Complex64>> {
    let bad = |msg: String| Error::Config(format!("complex matrix: {msg}"));
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| bad("empty input".into()))??;
    let dims: Vec<usize> = header
        .trim_start_matches('#')
        .split_whitespace()
        .map(|x| x.parse().map_err(|_| bad(format!("bad header '{header}'"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(bad(format!("bad header '{header}'")));
    };
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        let line = lines.next().ok_or_else(|| bad(format!("missing row {r}")))??;
        let entries: Vec<&str> = line.split_whitespace().collect();
        if entries.len() != cols {
            return Err(bad(format!("row {r} has {} entries, expected {cols}", entries.len())));
        }
        for (c, e) in entries.iter().enumerate() {
            let (re, im) = e.split_once(',').ok_or_else(|| bad(format!("entry '{e}'")))?;
            let p = |x: &str| x.parse::<f64>().map_err(|_| bad(format!("number '{x}'")));
            m[(r, c)] = Complex64::new(p(re)?, p(im)?);
        }
    }
    Ok(m)
}
