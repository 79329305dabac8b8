//! Displaced-parity Wigner functions, measurement grids and shot sampling.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fockspace::{cahill_glauber_t, displacement, displacement_padded_dim, parity, QuantumState};
use crate::scalar::Real;
use crate::QuantumState as State64;

fn single_mode<R: Real>(rho: &QuantumState<R>) -> Result<usize> {
    match rho.dims() {
        [n] => Ok(*n),
        d => Err(Error::DimensionMismatch(format!("one-mode Wigner needs a single mode, got dims {d:?}"))),
    }
}

fn two_modes<R: Real>(rho: &QuantumState<R>) -> Result<[usize; 2]> {
    match rho.dims() {
        [a, b] => Ok([*a, *b]),
        d => Err(Error::DimensionMismatch(format!("two-mode Wigner needs two modes, got dims {d:?}"))),
    }
}

/// `Tr[ρ A]` for a dense single-mode matrix `A`.
fn trace_with<R: Real>(rho: &QuantumState<R>, a: &DMatrix<Complex<R>>) -> R {
    let m = rho.density_matrix();
    let mut acc = Complex::new(R::zero(), R::zero());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            acc += m[(r, c)] * a[(c, r)];
        }
    }
    acc.re
}

/// `(2/π) Tr[ρ T(α)]` using the Cahill–Glauber operator.
pub fn one_mode_wigner<R: Real>(rho: &QuantumState<R>, alpha: Complex<R>) -> Result<R> {
    let n = single_mode(rho)?;
    let t = cahill_glauber_t(alpha, n)?;
    Ok(R::lit(2.0 / PI) * trace_with(rho, t.data()))
}

/// `(2/π) Tr[D†(α) ρ D(α) Π]`, with the displacement built in a padded space
/// so it stays unitary on the support of `ρ`.
pub fn one_mode_wigner_displaced<R: Real>(rho: &QuantumState<R>, alpha: Complex<R>) -> Result<R> {
    let n = single_mode(rho)?;
    let pad = displacement_padded_dim(n, crate::scalar::abs2(alpha).as_f64().sqrt());
    let big = rho.resize(&[pad])?.density_matrix();
    let d = displacement(alpha, pad)?;
    let moved = d.data().adjoint() * big * d.data();
    let mut acc = R::zero();
    for k in 0..pad {
        let s = if k % 2 == 0 { R::one() } else { -R::one() };
        acc += s * moved[(k, k)].re;
    }
    Ok(R::lit(2.0 / PI) * acc)
}

/// `X[m1, n1] = Σ T2[n2, m2] ρ[(m1 m2), (n1 n2)]`.
pub(crate) fn contract_mode2<R: Real>(rho: &DMatrix<Complex<R>>, dims: [usize; 2], t2: &DMatrix<Complex<R>>) -> DMatrix<Complex<R>> {
    let [d1, d2] = dims;
    DMatrix::from_fn(d1, d1, |m1, n1| {
        let mut acc = Complex::new(R::zero(), R::zero());
        for m2 in 0..d2 {
            for n2 in 0..d2 {
                acc += t2[(n2, m2)] * rho[(m1 * d2 + m2, n1 * d2 + n2)];
            }
        }
        acc
    })
}

pub(crate) fn pair_trace<R: Real>(t1: &DMatrix<Complex<R>>, x: &DMatrix<Complex<R>>) -> R {
    let mut acc = Complex::new(R::zero(), R::zero());
    for m1 in 0..x.nrows() {
        for n1 in 0..x.ncols() {
            acc += t1[(n1, m1)] * x[(m1, n1)];
        }
    }
    acc.re
}

/// `(4/π²) Tr[ρ T(α1) ⊗ T(α2)]`.
pub fn two_mode_wigner<R: Real>(rho: &QuantumState<R>, alpha1: Complex<R>, alpha2: Complex<R>) -> Result<R> {
    let dims = two_modes(rho)?;
    let t1 = cahill_glauber_t(alpha1, dims[0])?;
    let t2 = cahill_glauber_t(alpha2, dims[1])?;
    let x = contract_mode2(&rho.density_matrix(), dims, t2.data());
    Ok(R::lit(4.0 / (PI * PI)) * pair_trace(t1.data(), &x))
}

/// `⟨Π1 Π2⟩ = P_ee + P_gg − P_eg − P_ge`.
pub fn joint_parity_from_probs(p_ee: f64, p_eg: f64, p_ge: f64, p_gg: f64) -> Result<f64> {
    let p = [p_ee, p_eg, p_ge, p_gg];
    if p.iter().any(|x| !(*x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Normalization(format!("joint probabilities {p:?} are not a distribution")));
    }
    Ok(p_ee + p_gg - p_eg - p_ge)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    ReRe,
    ImIm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SliceKind {
    /// Both modes scanned along one quadrature; `offset` is added along the other.
    TwoMode { axis: AxisKind, offset: [f64; 2] },
    /// Full phase-space map of one mode (rows: Re α, columns: Im α).
    OneMode { mode: usize },
}

impl SliceKind {
    /// Displacements `(α1, α2)` of pixel `(x_i, x_j)`; the idle mode of a 1WF is not displaced.
    pub fn alphas(&self, xi: f64, xj: f64) -> (Complex<f64>, Complex<f64>) {
        let zero = Complex::new(0.0, 0.0);
        match *self {
            SliceKind::TwoMode { axis: AxisKind::ReRe, offset } => (Complex::new(xi, offset[0]), Complex::new(xj, offset[1])),
            SliceKind::TwoMode { axis: AxisKind::ImIm, offset } => (Complex::new(offset[0], xi), Complex::new(offset[1], xj)),
            SliceKind::OneMode { mode: 0 } => (Complex::new(xi, xj), zero),
            SliceKind::OneMode { .. } => (zero, Complex::new(xi, xj)),
        }
    }

    fn prefactor(&self) -> f64 {
        match self {
            SliceKind::TwoMode { .. } => 4.0 / (PI * PI),
            SliceKind::OneMode { .. } => 2.0 / PI,
        }
    }
}

/// `n` uniformly spaced points on `[-half_range, half_range]`, endpoints included.
pub fn uniform_axis(n: usize, half_range: f64) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n).map(|k| -half_range + 2.0 * half_range * k as f64 / (n - 1) as f64).collect()
}

pub fn default_axis() -> Vec<f64> {
    uniform_axis(17, 1.6)
}

/// Readout assignment matrix of one transmon: `m[read][true]`, index 0 = g, 1 = e.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion(pub [[f64; 2]; 2]);

impl Confusion {
    pub const IDENTITY: Confusion = Confusion([[1.0, 0.0], [0.0, 1.0]]);

    /// Symmetric-ish error model: `P(e|g) = eps_g`, `P(g|e) = eps_e`.
    pub fn from_errors(eps_g: f64, eps_e: f64) -> Self {
        Confusion([[1.0 - eps_g, eps_e], [eps_g, 1.0 - eps_e]])
    }

    fn validate(&self) -> Result<()> {
        for t in 0..2 {
            let col = [self.0[0][t], self.0[1][t]];
            if col.iter().any(|x| !(0.0..=1.0).contains(x)) || (col[0] + col[1] - 1.0).abs() > 1e-12 {
                return Err(Error::Parameter(format!("confusion matrix column {t} is not stochastic: {col:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Measurement {
    #[default]
    Ideal,
    Shots {
        #[serde(default = "default_shots")]
        shots: u64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        confusion: Option<[Confusion; 2]>,
    },
}

fn default_shots() -> u64 {
    1000
}

/// Outcome counts of one pixel, ordered `ee, eg, ge, gg`.
pub type PixelCounts = [u64; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct WignerGrid {
    pub kind: SliceKind,
    pub axis: Vec<f64>,
    /// `values[(i, j)]` at axis points `(x_i, x_j)`.
    pub values: DMatrix<f64>,
    pub shots: Option<(u64, Vec<PixelCounts>)>,
}

impl WignerGrid {
    pub fn pixel_count(&self) -> usize {
        self.values.len()
    }

    /// `re_a1, im_a1, re_a2, im_a2, value[, shots, n_ee, n_eg, n_ge, n_gg]`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["re_a1", "im_a1", "re_a2", "im_a2", "value"];
        if self.shots.is_some() {
            header.extend(["shots", "n_ee", "n_eg", "n_ge", "n_gg"]);
        }
        w.write_record(&header)?;
        let n = self.axis.len();
        for i in 0..n {
            for j in 0..n {
                let (a1, a2) = self.kind.alphas(self.axis[i], self.axis[j]);
                let mut row = vec![
                    format!("{}", a1.re),
                    format!("{}", a1.im),
                    format!("{}", a2.re),
                    format!("{}", a2.im),
                    format!("{:e}", self.values[(i, j)]),
                ];
                if let Some((shots, counts)) = &self.shots {
                    row.push(shots.to_string());
                    row.extend(counts[i * n + j].iter().map(|c| c.to_string()));
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<Rd: std::io::Read>(input: Rd, kind: SliceKind, axis: Vec<f64>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let n = axis.len();
        let mut values = DMatrix::zeros(n, n);
        let mut counts = Vec::new();
        let mut shots = None;
        let mut rows = 0;
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let (i, j) = (k / n, k % n);
            if i >= n {
                return Err(Error::Config(format!("grid CSV has more than {} rows", n * n)));
            }
            let f = |c: usize| -> Result<f64> {
                rec.get(c)
                    .ok_or_else(|| Error::Config(format!("grid CSV row {k} is missing column {c}")))?
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("grid CSV row {k}: {e}")))
            };
            let (a1, a2) = kind.alphas(axis[i], axis[j]);
            let got = [f(0)?, f(1)?, f(2)?, f(3)?];
            let want = [a1.re, a1.im, a2.re, a2.im];
            if got.iter().zip(want).any(|(g, w)| (g - w).abs() > 1e-9) {
                return Err(Error::Config(format!("grid CSV row {k}: displacement {got:?} does not match manifest {want:?}")));
            }
            values[(i, j)] = f(4)?;
            if rec.len() >= 10 {
                shots = Some(f(5)? as u64);
                counts.push([f(6)? as u64, f(7)? as u64, f(8)? as u64, f(9)? as u64]);
            }
            rows += 1;
        }
        if rows != n * n {
            return Err(Error::Config(format!("grid CSV has {rows} rows, expected {}", n * n)));
        }
        Ok(Self { kind, axis, values, shots: shots.map(|s| (s, counts)) })
    }
}

/// Single-mode Cahill–Glauber matrices for every axis value of one slice.
struct SliceOperators {
    t1: Vec<DMatrix<Complex<f64>>>,
    t2: Vec<DMatrix<Complex<f64>>>,
}

impl SliceOperators {
    fn new(kind: &SliceKind, axis: &[f64], dims: [usize; 2]) -> Result<Self> {
        let mut t1 = Vec::with_capacity(axis.len());
        let mut t2 = Vec::with_capacity(axis.len());
        for &x in axis {
            // alpha1 depends only on the row coordinate, alpha2 only on the column
            let (a1, _) = kind.alphas(x, 0.0);
            let (_, a2) = kind.alphas(0.0, x);
            t1.push(cahill_glauber_t(a1, dims[0])?.into_data());
            t2.push(cahill_glauber_t(a2, dims[1])?.into_data());
        }
        Ok(Self { t1, t2 })
    }
}

/// Exact parity expectations of one slice: `(⟨Π1⟩, ⟨Π2⟩, ⟨Π1Π2⟩)` per pixel.
///
/// For a 1WF slice the idle mode's parity entries are set to 1.
fn slice_parities(rho: &State64, kind: &SliceKind, axis: &[f64]) -> Result<Vec<[f64; 3]>> {
    let dims = two_modes(rho)?;
    let n = axis.len();
    let mut out = vec![[0.0; 3]; n * n];
    match kind {
        SliceKind::TwoMode { .. } => {
            let ops = SliceOperators::new(kind, axis, dims)?;
            let m = rho.density_matrix();
            let r1 = rho.partial_trace_keep(0)?;
            let r2 = rho.partial_trace_keep(1)?;
            let p1: Vec<f64> = ops.t1.iter().map(|t| trace_with(&r1, t)).collect();
            let p2: Vec<f64> = ops.t2.iter().map(|t| trace_with(&r2, t)).collect();
            for j in 0..n {
                let x = contract_mode2(&m, dims, &ops.t2[j]);
                for i in 0..n {
                    out[i * n + j] = [p1[i], p2[j], pair_trace(&ops.t1[i], &x)];
                }
            }
        }
        SliceKind::OneMode { mode } => {
            let r = rho.partial_trace_keep(*mode)?;
            for i in 0..n {
                for j in 0..n {
                    let a = Complex::new(axis[i], axis[j]);
                    let p = trace_with(&r, cahill_glauber_t(a, dims[*mode])?.data());
                    out[i * n + j] = if *mode == 0 { [p, 1.0, p] } else { [1.0, p, p] };
                }
            }
        }
    }
    Ok(out)
}

/// Outcome probabilities `ee, eg, ge, gg` for given parity expectations.
/// Parity +1 reads out as `g`.
fn outcome_probs(par: [f64; 3], confusion: &Option<[Confusion; 2]>) -> [f64; 4] {
    let [p1, p2, p12] = par;
    // index 0 = g (+1), 1 = e (-1)
    let s = [1.0, -1.0];
    let mut truth = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            truth[a][b] = ((1.0 + s[a] * p1 + s[b] * p2 + s[a] * s[b] * p12) / 4.0).max(0.0);
        }
    }
    let read = match confusion {
        None => truth,
        Some([c1, c2]) => {
            let mut r = [[0.0; 2]; 2];
            for ra in 0..2 {
                for rb in 0..2 {
                    for ta in 0..2 {
                        for tb in 0..2 {
                            r[ra][rb] += c1.0[ra][ta] * c2.0[rb][tb] * truth[ta][tb];
                        }
                    }
                }
            }
            r
        }
    };
    let total: f64 = read.iter().flatten().sum();
    [read[1][1] / total, read[1][0] / total, read[0][1] / total, read[0][0] / total]
}

fn sample_counts(rng: &mut ChaCha20Rng, shots: u64, p: [f64; 4]) -> Result<PixelCounts> {
    let mut left = shots;
    let mut rest = 1.0;
    let mut out = [0u64; 4];
    for k in 0..3 {
        let q = if rest > 0.0 { (p[k] / rest).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(left, q).map_err(|e| Error::Parameter(format!("binomial draw: {e}")))?;
        out[k] = draw.sample(rng);
        left -= out[k];
        rest -= p[k];
    }
    out[3] = left;
    Ok(out)
}

/// Evaluate (or simulate a measurement of) one slice of a two-mode state.
///
/// `stream` selects an independent random stream for shot sampling.
pub fn measure_grid(rho: &State64, kind: SliceKind, axis: Vec<f64>, measurement: &Measurement, stream: u64) -> Result<WignerGrid> {
    let pars = slice_parities(rho, &kind, &axis)?;
    let n = axis.len();
    let pref = kind.prefactor();
    match measurement {
        Measurement::Ideal => {
            let values = DMatrix::from_fn(n, n, |i, j| pref * pars[i * n + j][2]);
            Ok(WignerGrid { kind, axis, values, shots: None })
        }
        Measurement::Shots { shots, seed, confusion } => {
            if *shots == 0 {
                return Err(Error::Parameter("shot count must be positive".into()));
            }
            if let Some(c) = confusion {
                c[0].validate()?;
                c[1].validate()?;
            }
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            rng.set_stream(stream);
            let mut counts = Vec::with_capacity(n * n);
            let mut values = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let c = sample_counts(&mut rng, *shots, outcome_probs(pars[i * n + j], confusion))?;
                    let f = c.map(|x| x as f64 / *shots as f64);
                    values[(i, j)] = pref * joint_parity_from_probs(f[0], f[1], f[2], f[3])?;
                    counts.push(c);
                }
            }
            Ok(WignerGrid { kind, axis, values, shots: Some((*shots, counts)) })
        }
    }
}

/// Imaginary offsets of the Re–Re slices (real offsets of the Im–Im slices).
pub const PAPER_OFFSETS: [[f64; 2]; 5] = [[0.0, 0.0], [0.0, 0.82], [-1.10, 1.07], [-1.35, -1.32], [1.35, -0.82]];

#[derive(Clone, Debug, PartialEq)]
pub struct WignerDataset {
    pub slices: Vec<WignerGrid>,
}

pub fn paper_slice_kinds() -> Vec<SliceKind> {
    let mut kinds = Vec::with_capacity(12);
    for axis in [AxisKind::ReRe, AxisKind::ImIm] {
        for offset in PAPER_OFFSETS {
            kinds.push(SliceKind::TwoMode { axis, offset });
        }
    }
    kinds.push(SliceKind::OneMode { mode: 0 });
    kinds.push(SliceKind::OneMode { mode: 1 });
    kinds
}

/// The twelve-slice tomography dataset: five Re–Re and five Im–Im 2WF
/// slices plus both 1WFs, on the 17-point axis over ±1.6.
pub fn paper_dataset(rho12: &State64, measurement: &Measurement) -> Result<WignerDataset> {
    let slices = paper_slice_kinds()
        .into_iter()
        .enumerate()
        .map(|(k, kind)| measure_grid(rho12, kind, default_axis(), measurement, k as u64))
        .collect::<Result<_>>()?;
    Ok(WignerDataset { slices })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestSlice {
    file: String,
    #[serde(flatten)]
    kind: SliceKind,
    grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    #[serde(default)]
    measurement: Option<Measurement>,
    slice: Vec<ManifestSlice>,
}

impl WignerDataset {
    pub fn pixel_count(&self) -> usize {
        self.slices.iter().map(WignerGrid::pixel_count).sum()
    }

    /// Write `manifest.toml` plus one CSV per slice into `dir`; returns the manifest path.
    pub fn write_dir(&self, dir: &Path, measurement: Option<&Measurement>) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut slice = Vec::with_capacity(self.slices.len());
        for (k, s) in self.slices.iter().enumerate() {
            let file = format!("slice_{k:02}.csv");
            s.write_csv(fs::File::create(dir.join(&file))?)?;
            slice.push(ManifestSlice { file, kind: s.kind.clone(), grid: s.axis.clone() });
        }
        let manifest = Manifest { measurement: measurement.cloned(), slice };
        let path = dir.join("manifest.toml");
        fs::write(&path, toml::to_string(&manifest)?)?;
        Ok(path)
    }

    pub fn read_manifest(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let manifest: Manifest = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let slices = manifest
            .slice
            .into_iter()
            .map(|s| WignerGrid::read_csv(fs::File::open(base.join(&s.file))?, s.kind, s.grid))
            .collect::<Result<Vec<_>>>()?;
        if slices.is_empty() {
            return Err(Error::Config(format!("dataset manifest {} lists no slices", path.display())));
        }
        Ok(Self { slices })
    }
}

/// Parity operator embedded for the joint-parity identity checks.
pub fn joint_parity_operator(dims: [usize; 2]) -> Result<crate::Operator> {
    Ok(crate::fockspace::tensor(&parity::<f64>(dims[0])?, &parity::<f64>(dims[1])?))
}
