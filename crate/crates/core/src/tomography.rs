//! Density-matrix reconstruction from Wigner data: projected Adam descent on a
//! triangular factor `T` with `ρ = T†T / Tr(T†T)`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{fidelity, write_complex_matrix};
use crate::fockspace::cahill_glauber_t;
use crate::wigner::{contract_mode2, pair_trace, SliceKind, WignerDataset};
use crate::{Complex64, QuantumState};

type Cm = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub dims: [usize; 2],
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Stop once the best loss improves by less than this over `patience` iterations.
    pub tolerance: f64,
    pub patience: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            dims: [8, 8],
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iterations: 10_000,
            tolerance: 1e-10,
            patience: 200,
            restarts: 3,
            seed: 0,
        }
    }
}

impl ReconstructionConfig {
    pub fn with_dims(dims: [usize; 2]) -> Self {
        Self { dims, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidDimension(format!("reconstruction dims {:?} must be at least 2", self.dims)));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Parameter(format!(
                "optimizer settings lr={} beta=({}, {}) eps={}",
                self.learning_rate, self.beta1, self.beta2, self.epsilon
            )));
        }
        if self.max_iterations == 0 || self.restarts == 0 || self.patience == 0 {
            return Err(Error::Parameter("max_iterations, restarts and patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    pub rho: QuantumState,
    pub loss: f64,
    pub iterations: usize,
    pub loss_history: Vec<f64>,
    pub fidelity: Option<f64>,
    /// False if the iteration budget ran out before the stopping rule fired.
    pub converged: bool,
    /// Index of the restart that produced the best loss.
    pub restart: usize,
}

#[derive(Serialize)]
struct Report<'a> {
    fidelity: Option<f64>,
    loss: f64,
    iterations: usize,
    converged: bool,
    restart: usize,
    config: &'a ReconstructionConfig,
}

impl ReconstructionResult {
    /// `report.toml`, `loss.csv` and `rho.txt` in `dir`.
    pub fn write_report(&self, dir: &Path, config: &ReconstructionConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        let report = Report {
            fidelity: self.fidelity,
            loss: self.loss,
            iterations: self.iterations,
            converged: self.converged,
            restart: self.restart,
            config,
        };
        fs::write(dir.join("report.toml"), toml::to_string(&report)?)?;
        let mut w = csv::Writer::from_path(dir.join("loss.csv"))?;
        w.write_record(["iteration", "loss"])?;
        for (k, l) in self.loss_history.iter().enumerate() {
            w.write_record([k.to_string(), format!("{l:e}")])?;
        }
        w.flush()?;
        let mut f = fs::File::create(dir.join("rho.txt"))?;
        write_complex_matrix(&mut f, &self.rho.density_matrix())?;
        f.flush()?;
        Ok(())
    }
}

/// Zero the strict upper triangle and the imaginary part of the diagonal.
pub fn project_t(t: &Cm) -> Cm {
    DMatrix::from_fn(t.nrows(), t.ncols(), |r, c| match r.cmp(&c) {
        std::cmp::Ordering::Less => ZERO,
        std::cmp::Ordering::Equal => Complex64::new(t[(r, c)].re, 0.0),
        std::cmp::Ordering::Greater => t[(r, c)],
    })
}

fn gram(t: &Cm) -> Result<(Cm, f64)> {
    let g = t.adjoint() * t;
    let s = g.trace().re;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate(format!("Tr(T†T) = {s}")));
    }
    Ok((g / Complex64::new(s, 0.0), s))
}

/// `ρ = T†T / Tr(T†T)` on two modes of dimensions `dims`.
pub fn rho_from_t(t: &Cm, dims: [usize; 2]) -> Result<QuantumState> {
    if t.nrows() != dims[0] * dims[1] || !t.is_square() {
        return Err(Error::DimensionMismatch(format!("T is {:?}, dims {dims:?}", t.shape())));
    }
    let (rho, _) = gram(t)?;
    QuantumState::density(dims.to_vec(), rho)
}

/// Per-slice pixel operators at the reconstruction dimension.
enum SliceModel {
    /// Pixel `(i, j)` measures `T(α1_i) ⊗ T(α2_j)`.
    Two { pref: f64, t1: Vec<Cm>, t2: Vec<Cm> },
    /// Pixel `k` measures `T(α_k)` on `mode`.
    One { pref: f64, mode: usize, t: Vec<Cm> },
}

fn reduced(rho: &Cm, dims: [usize; 2], mode: usize) -> Cm {
    let [d1, d2] = dims;
    if mode == 0 {
        DMatrix::from_fn(d1, d1, |i, j| (0..d2).map(|a| rho[(i * d2 + a, j * d2 + a)]).sum())
    } else {
        DMatrix::from_fn(d2, d2, |i, j| (0..d1).map(|a| rho[(a * d2 + i, a * d2 + j)]).sum())
    }
}

fn trace_prod(a: &Cm, b: &Cm) -> f64 {
    let mut acc = ZERO;
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            acc += a[(r, c)] * b[(c, r)];
        }
    }
    acc.re
}

/// `out += A ⊗ B`.
fn add_kron(out: &mut Cm, a: &Cm, b: &Cm) {
    let (d1, d2) = (a.nrows(), b.nrows());
    for a1 in 0..d1 {
        for b1 in 0..d1 {
            let x = a[(a1, b1)];
            if x == ZERO {
                continue;
            }
            for a2 in 0..d2 {
                for b2 in 0..d2 {
                    out[(a1 * d2 + a2, b1 * d2 + b2)] += x * b[(a2, b2)];
                }
            }
        }
    }
}

/// Mean-squared-error objective between a dataset and the Wigner values predicted from `ρ(T)`.
pub struct Objective {
    dims: [usize; 2],
    slices: Vec<SliceModel>,
    data: Vec<f64>,
}

impl Objective {
    pub fn new(dataset: &WignerDataset, dims: [usize; 2]) -> Result<Self> {
        if dataset.slices.is_empty() {
            return Err(Error::Config("empty dataset".into()));
        }
        let mut slices = Vec::with_capacity(dataset.slices.len());
        let mut data = Vec::with_capacity(dataset.pixel_count());
        for g in &dataset.slices {
            let n = g.axis.len();
            if g.values.shape() != (n, n) {
                return Err(Error::DimensionMismatch(format!("slice values {:?} vs axis of {n}", g.values.shape())));
            }
            let model = match g.kind {
                SliceKind::TwoMode { .. } => {
                    let mut t1 = Vec::with_capacity(n);
                    let mut t2 = Vec::with_capacity(n);
                    for &x in &g.axis {
                        t1.push(cahill_glauber_t(g.kind.alphas(x, 0.0).0, dims[0])?.into_data());
                        t2.push(cahill_glauber_t(g.kind.alphas(0.0, x).1, dims[1])?.into_data());
                    }
                    SliceModel::Two { pref: 4.0 / (PI * PI), t1, t2 }
                }
                SliceKind::OneMode { mode } => {
                    if mode > 1 {
                        return Err(Error::DimensionMismatch(format!("one-mode slice on mode {mode}")));
                    }
                    let mut t = Vec::with_capacity(n * n);
                    for &xi in &g.axis {
                        for &xj in &g.axis {
                            t.push(cahill_glauber_t(Complex64::new(xi, xj), dims[mode])?.into_data());
                        }
                    }
                    SliceModel::One { pref: 2.0 / PI, mode, t }
                }
            };
            slices.push(model);
            for i in 0..n {
                for j in 0..n {
                    data.push(g.values[(i, j)]);
                }
            }
        }
        Ok(Self { dims, slices, data })
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }

    /// Predicted pixel values, slice by slice in row-major pixel order.
    pub fn predict(&self, rho: &Cm) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for s in &self.slices {
            match s {
                SliceModel::Two { pref, t1, t2 } => {
                    let n = t1.len();
                    let mut block = vec![0.0; n * n];
                    for (j, b) in t2.iter().enumerate() {
                        let x = contract_mode2(rho, self.dims, b);
                        for (i, a) in t1.iter().enumerate() {
                            block[i * n + j] = pref * pair_trace(a, &x);
                        }
                    }
                    out.extend(block);
                }
                SliceModel::One { pref, mode, t } => {
                    let r = reduced(rho, self.dims, *mode);
                    out.extend(t.iter().map(|a| pref * trace_prod(&r, a)));
                }
            }
        }
        out
    }

    fn loss_of(&self, pred: &[f64]) -> f64 {
        pred.iter().zip(&self.data).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / self.data.len() as f64
    }

    pub fn loss(&self, t: &Cm) -> Result<f64> {
        let (rho, _) = gram(t)?;
        Ok(self.loss_of(&self.predict(&rho)))
    }

    /// Loss and `∂L/∂Re T + i ∂L/∂Im T`.
    pub fn loss_and_gradient(&self, t: &Cm) -> Result<(f64, Cm)> {
        let (rho, s) = gram(t)?;
        let pred = self.predict(&rho);
        let loss = self.loss_of(&pred);
        let scale = 2.0 / self.data.len() as f64;
        let d = rho.nrows();
        let mut g = DMatrix::zeros(d, d);
        let mut k = 0;
        for sl in &self.slices {
            match sl {
                SliceModel::Two { pref, t1, t2 } => {
                    let n = t1.len();
                    for (j, b) in t2.iter().enumerate() {
                        let mut a = DMatrix::zeros(self.dims[0], self.dims[0]);
                        for (i, ti) in t1.iter().enumerate() {
                            let p = k + i * n + j;
                            a += ti * Complex64::new(scale * pref * (pred[p] - self.data[p]), 0.0);
                        }
                        add_kron(&mut g, &a, b);
                    }
                    k += n * n;
                }
                SliceModel::One { pref, mode, t } => {
                    let dm = self.dims[*mode];
                    let mut a = DMatrix::zeros(dm, dm);
                    for ti in t {
                        a += ti * Complex64::new(scale * pref * (pred[k] - self.data[k]), 0.0);
                        k += 1;
                    }
                    let eye = DMatrix::identity(self.dims[1 - mode], self.dims[1 - mode]);
                    if *mode == 0 {
                        add_kron(&mut g, &a, &eye);
                    } else {
                        add_kron(&mut g, &eye, &a);
                    }
                }
            }
        }
        let mean = trace_prod(&g, &rho);
        for i in 0..d {
            g[(i, i)] -= Complex64::new(mean, 0.0);
        }
        Ok((loss, t * g * Complex64::new(2.0 / s, 0.0)))
    }
}

/// Wigner values the dataset's slices would show for `rho`, evaluated at `rho`'s own dimensions.
pub fn predict_dataset(rho: &QuantumState, dataset: &WignerDataset) -> Result<Vec<DMatrix<f64>>> {
    let dims: [usize; 2] =
        rho.dims().try_into().map_err(|_| Error::DimensionMismatch(format!("tomography needs two modes, got {:?}", rho.dims())))?;
    let obj = Objective::new(dataset, dims)?;
    let flat = obj.predict(&rho.density_matrix());
    let mut out = Vec::with_capacity(dataset.slices.len());
    let mut k = 0;
    for g in &dataset.slices {
        let n = g.axis.len();
        out.push(DMatrix::from_fn(n, n, |i, j| flat[k + i * n + j]));
        k += n * n;
    }
    Ok(out)
}

struct Run {
    t: Cm,
    loss: f64,
    iterations: usize,
    history: Vec<f64>,
    converged: bool,
}

fn initial_t(d: usize, seed: u64, stream: u64) -> Cm {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let sigma = (0.5 / d as f64).sqrt();
    let t = DMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(sigma * re, sigma * im)
    });
    project_t(&t)
}

fn adam(obj: &Objective, cfg: &ReconstructionConfig, mut t: Cm) -> Result<Run> {
    let d = t.nrows();
    let mut m = DMatrix::<Complex64>::zeros(d, d);
    let mut v = DMatrix::<Complex64>::zeros(d, d);
    let mut best = (f64::INFINITY, t.clone());
    let mut best_trace = Vec::with_capacity(cfg.max_iterations);
    let mut history = Vec::with_capacity(cfg.max_iterations);
    let mut converged = false;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for it in 0..cfg.max_iterations {
        let (loss, grad) = obj.loss_and_gradient(&t)?;
        if !loss.is_finite() || grad.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            let last = rho_from_t(&best.1, obj.dims)?;
            return Err(Error::OptimizerDiverged { iterations: it, last_finite: Box::new(last) });
        }
        history.push(loss);
        if loss < best.0 {
            best = (loss, t.clone());
        }
        best_trace.push(best.0);
        if it >= cfg.patience && best_trace[it - cfg.patience] - best.0 < cfg.tolerance {
            converged = true;
            break;
        }
        let c1 = 1.0 - b1.powi(it as i32 + 1);
        let c2 = 1.0 - b2.powi(it as i32 + 1);
        for k in 0..d * d {
            let g = grad[k];
            m[k] = m[k] * b1 + g * (1.0 - b1);
            v[k] = Complex64::new(v[k].re * b2 + (1.0 - b2) * g.re * g.re, v[k].im * b2 + (1.0 - b2) * g.im * g.im);
            let step_re = cfg.learning_rate * (m[k].re / c1) / ((v[k].re / c2).sqrt() + cfg.epsilon);
            let step_im = cfg.learning_rate * (m[k].im / c1) / ((v[k].im / c2).sqrt() + cfg.epsilon);
            t[k] -= Complex64::new(step_re, step_im);
        }
        t = project_t(&t);
    }
    Ok(Run { t: best.1, loss: best.0, iterations: history.len(), history, converged })
}

/// Fidelity of a reconstruction against a target that may live in a larger space.
pub fn fidelity_to_target(rho: &QuantumState, target: &QuantumState) -> Result<f64> {
    if rho.dims() == target.dims() {
        return fidelity(rho, target);
    }
    let common: Vec<usize> = rho.dims().iter().zip(target.dims()).map(|(a, b)| *a.max(b)).collect();
    fidelity(&rho.resize(&common)?, &target.resize(&common)?)
}

/// Fit a two-mode density matrix to the dataset; restarts run concurrently
/// and the lowest final loss wins.
pub fn reconstruct(dataset: &WignerDataset, config: &ReconstructionConfig, target: Option<&QuantumState>) -> Result<ReconstructionResult> {
    config.validate()?;
    let obj = Objective::new(dataset, config.dims)?;
    let d = config.dims[0] * config.dims[1];
    let runs: Vec<Result<Run>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.restarts)
            .map(|r| {
                let obj = &obj;
                scope.spawn(move || adam(obj, config, initial_t(d, config.seed, r as u64)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("restart thread panicked")).collect()
    });
    let mut best: Option<(usize, Run)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        let run = run?;
        if best.as_ref().is_none_or(|(_, b)| run.loss < b.loss) {
            best = Some((r, run));
        }
    }
    let (restart, run) = best.expect("at least one restart");
    let rho = rho_from_t(&run.t, config.dims)?;
    let fidelity = target.map(|t| fidelity_to_target(&rho, t)).transpose()?;
    Ok(ReconstructionResult {
        rho,
        loss: run.loss,
        iterations: run.iterations,
        loss_history: run.history,
        fidelity,
        converged: run.converged,
        restart,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{superpose, tensor_kets};
    use crate::wigner::{paper_dataset, Measurement};
    use approx::assert_abs_diff_eq;

    fn random_t(d: usize, seed: u64) -> Cm {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        DMatrix::from_fn(d, d, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn bell_fock(dims: [usize; 2]) -> QuantumState {
        let one = Complex64::new(1.0, 0.0);
        let a = QuantumState::fock(&dims, &[0, 0]).unwrap();
        let b = QuantumState::fock(&dims, &[1, 1]).unwrap();
        superpose(&[(one, &a), (one, &b)]).unwrap()
    }

    #[test]
    fn projection_examples() {
        let t = random_t(5, 1);
        let p = project_t(&t);
        assert_eq!(project_t(&p), p);
        for r in 0..5 {
            assert_eq!(p[(r, r)].im, 0.0);
            for c in r + 1..5 {
                assert_eq!(p[(r, c)], ZERO);
            }
            for c in 0..r {
                assert_eq!(p[(r, c)], t[(r, c)]);
            }
        }
        let it = DMatrix::<Complex64>::identity(4, 4) * Complex64::new(0.0, 1.0);
        assert!(project_t(&it).iter().all(|z| *z == ZERO));
    }

    #[test]
    fn rho_from_t_examples() {
        let t = DMatrix::<Complex64>::identity(4, 4) * Complex64::new(0.5, 0.0);
        let rho = rho_from_t(&t, [2, 2]).unwrap();
        assert!((rho.density_matrix() - DMatrix::identity(4, 4) * Complex64::new(0.25, 0.0)).iter().all(|z| z.norm() < 1e-15));
        let mut t = DMatrix::zeros(4, 4);
        t.row_mut(2).copy_from(&random_t(4, 3).row(0));
        assert!(rho_from_t(&t, [2, 2]).unwrap().purity() > 1.0 - 1e-12);
        assert!(matches!(rho_from_t(&DMatrix::zeros(4, 4), [2, 2]), Err(Error::Degenerate(_))));
        assert!(rho_from_t(&DMatrix::zeros(5, 5), [2, 2]).is_err());
    }

    #[test]
    fn prediction_matches_ideal_dataset() {
        let st = bell_fock([3, 3]);
        let ds = paper_dataset(&st, &Measurement::Ideal).unwrap();
        let pred = predict_dataset(&st, &ds).unwrap();
        for (p, g) in pred.iter().zip(&ds.slices) {
            assert!((p - &g.values).amax() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let st = tensor_kets(&QuantumState::fock(&[3], &[1]).unwrap(), &QuantumState::fock(&[3], &[0]).unwrap()).unwrap();
        let ds = paper_dataset(&st, &Measurement::Ideal).unwrap();
        let obj = Objective::new(&ds, [3, 3]).unwrap();
        let t = random_t(9, 11);
        let (_, g) = obj.loss_and_gradient(&t).unwrap();
        let h = 1e-5;
        for k in [0, 7, 40, 80] {
            for dir in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                let mut tp = t.clone();
                let mut tm = t.clone();
                tp[k] += dir * h;
                tm[k] -= dir * h;
                let fd = (obj.loss(&tp).unwrap() - obj.loss(&tm).unwrap()) / (2.0 * h);
                let an = if dir.re > 0.0 { g[k].re } else { g[k].im };
                assert_abs_diff_eq!(an, fd, epsilon = 1e-4 * fd.abs().max(1e-6));
            }
        }
    }

    #[test]
    fn reconstructs_fock_bell_state() {
        let st = bell_fock([3, 3]);
        let ds = paper_dataset(&st, &Measurement::Ideal).unwrap();
        let cfg = ReconstructionConfig { max_iterations: 3000, ..ReconstructionConfig::with_dims([3, 3]) };
        let res = reconstruct(&ds, &cfg, Some(&st)).unwrap();
        assert!(res.fidelity.unwrap() > 0.99, "fidelity {:?}", res.fidelity);
        res.rho.check_physical(1e-10, -1e-9).unwrap();
        let again = reconstruct(&ds, &cfg, Some(&st)).unwrap();
        assert_eq!(res.loss.to_bits(), again.loss.to_bits());
    }
}
