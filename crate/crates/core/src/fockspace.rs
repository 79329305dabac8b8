//! Truncated Fock-space operator algebra.
//!
//! Index convention for multi-mode spaces is mode-1-major: the joint index of
//! `|n1, n2>` is `n1 * N2 + n2`, which is what `DMatrix::kronecker` produces.
//!
//! Displacement and Cahill–Glauber operators are filled from their analytic
//! (associated Laguerre) matrix elements rather than by exponentiating a
//! truncated generator, so every stored element equals the infinite-dimensional
//! one.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{abs2, cpowi, polar, Real};
use crate::special::{assoc_laguerre_table, ln_sqrt_factorial_ratio, MAX_DIM};

/// Dense operator on a (possibly multi-mode) truncated Fock space.
#[derive(Clone, PartialEq)]
pub struct Operator<R: Real> {
    dims: Vec<usize>,
    data: DMatrix<Complex<R>>,
}

impl<R: Real> fmt::Debug for Operator<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Operator").field("dims", &self.dims).finish_non_exhaustive()
    }
}

fn total_dim(dims: &[usize]) -> usize {
    dims.iter().product()
}

fn tol_for<R: Real>(requested: f64) -> R {
    // single precision cannot resolve the double-precision tolerances
    let floor = R::default_epsilon().as_f64() * 1e3;
    R::lit(requested.max(floor))
}

impl<R: Real> Operator<R> {
    pub fn new(dims: Vec<usize>, data: DMatrix<Complex<R>>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidDimension(format!("mode dimensions {dims:?}")));
        }
        let n = total_dim(&dims);
        if data.nrows() != n || data.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{} but dims {:?} require side {}",
                data.nrows(),
                data.ncols(),
                dims,
                n
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn identity(dims: &[usize]) -> Self {
        let n = total_dim(dims);
        Self { dims: dims.to_vec(), data: DMatrix::identity(n, n) }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = total_dim(dims);
        Self { dims: dims.to_vec(), data: DMatrix::zeros(n, n) }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &DMatrix<Complex<R>> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<Complex<R>> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex<R> {
        self.data[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self { dims: self.dims.clone(), data: self.data.adjoint() }
    }

    pub fn scale(&self, c: Complex<R>) -> Self {
        Self { dims: self.dims.clone(), data: &self.data * c }
    }

    pub fn scale_real(&self, c: R) -> Self {
        self.scale(Complex::new(c, R::zero()))
    }

    pub fn trace(&self) -> Complex<R> {
        self.data.trace()
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> R {
        self.data.iter().zip(other.data.iter()).map(|(a, b)| abs2(*a - *b).sqrt()).fold(R::zero(), |m, x| if x > m { x } else { m })
    }

    pub fn max_abs(&self) -> R {
        self.data.iter().map(|z| abs2(*z).sqrt()).fold(R::zero(), |m, x| if x > m { x } else { m })
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) <= tol_for::<R>(tol)
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let prod = &self.adjoint() * self;
        prod.max_abs_diff(&Operator::identity(&self.dims)) <= tol_for::<R>(tol)
    }

    pub fn apply(&self, ket: &DVector<Complex<R>>) -> DVector<Complex<R>> {
        &self.data * ket
    }

    /// Top-left `k x k` block (single-mode operators only).
    pub fn leading_block(&self, k: usize) -> DMatrix<Complex<R>> {
        self.data.view((0, 0), (k, k)).into_owned()
    }
}

impl<R: Real> Mul for &Operator<R> {
    type Output = Operator<R>;
    fn mul(self, rhs: Self) -> Operator<R> {
        assert_eq!(self.dims, rhs.dims, "operator dims differ");
        Operator { dims: self.dims.clone(), data: &self.data * &rhs.data }
    }
}

impl<R: Real> Add for &Operator<R> {
    type Output = Operator<R>;
    fn add(self, rhs: Self) -> Operator<R> {
        assert_eq!(self.dims, rhs.dims, "operator dims differ");
        Operator { dims: self.dims.clone(), data: &self.data + &rhs.data }
    }
}

impl<R: Real> Sub for &Operator<R> {
    type Output = Operator<R>;
    fn sub(self, rhs: Self) -> Operator<R> {
        assert_eq!(self.dims, rhs.dims, "operator dims differ");
        Operator { dims: self.dims.clone(), data: &self.data - &rhs.data }
    }
}

fn check_dim(n: usize, min: usize, what: &str) -> Result<()> {
    if n < min {
        return Err(Error::InvalidDimension(format!("{what} requires N >= {min}, got {n}")));
    }
    if n > MAX_DIM {
        return Err(Error::InvalidDimension(format!("{what}: N = {n} exceeds supported maximum {MAX_DIM}")));
    }
    Ok(())
}

/// Lowering operator, `<n-1|a|n> = sqrt(n)`.
pub fn annihilation<R: Real>(n: usize) -> Result<Operator<R>> {
    check_dim(n, 2, "annihilation")?;
    let mut m = DMatrix::zeros(n, n);
    for k in 1..n {
        m[(k - 1, k)] = Complex::new(R::from_count(k).sqrt(), R::zero());
    }
    Ok(Operator { dims: vec![n], data: m })
}

pub fn creation<R: Real>(n: usize) -> Result<Operator<R>> {
    Ok(annihilation::<R>(n)?.adjoint())
}

pub fn number<R: Real>(n: usize) -> Result<Operator<R>> {
    check_dim(n, 1, "number")?;
    let d = DVector::from_fn(n, |k, _| Complex::new(R::from_count(k), R::zero()));
    Ok(Operator { dims: vec![n], data: DMatrix::from_diagonal(&d) })
}

/// Photon-number parity `exp(i pi a^dag a)`.
pub fn parity<R: Real>(n: usize) -> Result<Operator<R>> {
    check_dim(n, 1, "parity")?;
    let d = DVector::from_fn(n, |k, _| {
        let s = if k % 2 == 0 { R::one() } else { -R::one() };
        Complex::new(s, R::zero())
    });
    Ok(Operator { dims: vec![n], data: DMatrix::from_diagonal(&d) })
}

/// Working dimension in which a displacement by `alpha` keeps `n` levels accurate.
pub fn displacement_padded_dim(n: usize, alpha_abs: f64) -> usize {
    (n + (8.0 * alpha_abs * alpha_abs).ceil() as usize + 8).min(MAX_DIM.max(n))
}

/// Displacement `exp(alpha a^dag - alpha^* a)` truncated to `n` levels.
///
/// Elements are the exact ones:
/// `<m|D|k> = sqrt(k!/m!) alpha^(m-k) e^{-|alpha|^2/2} L_k^{(m-k)}(|alpha|^2)` for `m >= k`
/// and `sqrt(m!/k!) (-alpha^*)^(k-m) e^{-|alpha|^2/2} L_m^{(k-m)}(|alpha|^2)` otherwise.
/// The truncated matrix is therefore only unitary on the levels whose
/// displaced image stays inside the space; use [`displacement_padded_dim`]
/// when that matters.
pub fn displacement<R: Real>(alpha: Complex<R>, n: usize) -> Result<Operator<R>> {
    check_dim(n, 2, "displacement")?;
    let r2 = abs2(alpha);
    if r2.is_zero() {
        return Ok(Operator::identity(&[n]));
    }
    if r2.as_f64() > n as f64 / 4.0 {
        log::debug!("displacement |alpha|^2 = {} is large for N = {n}", r2.as_f64());
    }
    let r = r2.sqrt();
    let theta = alpha.im.atan2(alpha.re);
    let half_r2 = r2.as_f64() / 2.0;
    let mut m = DMatrix::zeros(n, n);
    for delta in 0..n {
        let lag = assoc_laguerre_table(n - 1 - delta, delta, r2);
        for low in 0..(n - delta) {
            let high = low + delta;
            // log-magnitude of sqrt(low!/high!) r^delta e^{-r^2/2}
            let ln_mag = ln_sqrt_factorial_ratio(low, high) + delta as f64 * r.as_f64().ln() - half_r2;
            let mag = R::lit(ln_mag.exp()) * lag[low];
            // <high|D|low> carries alpha^delta, <low|D|high> carries (-alpha^*)^delta
            m[(high, low)] = polar(mag, R::from_count(delta) * theta);
            let sign = if delta % 2 == 0 { R::one() } else { -R::one() };
            m[(low, high)] = polar(sign * mag, -R::from_count(delta) * theta);
        }
    }
    Ok(Operator { dims: vec![n], data: m })
}

/// Cahill–Glauber operator `T(alpha) = D(alpha) Pi D^dag(alpha)`, so that
/// `W(alpha) = (2/pi) Tr[rho T(alpha)]`.
///
/// For `m >= n`: `<n|T|m> = sqrt(n!/m!) (-1)^n (2 alpha^*)^(m-n) L_n^{(m-n)}(4|alpha|^2) e^{-2|alpha|^2}`,
/// and `<m|T(alpha)|n> = <n|T(alpha^*)|m>` fills the rest.
pub fn cahill_glauber_t<R: Real>(alpha: Complex<R>, n: usize) -> Result<Operator<R>> {
    check_dim(n, 1, "cahill_glauber_t")?;
    let r2 = abs2(alpha);
    let x = R::lit(4.0) * r2;
    let two_r = (R::lit(2.0) * r2.sqrt()).as_f64();
    let theta = alpha.im.atan2(alpha.re);
    let mut m = DMatrix::zeros(n, n);
    for delta in 0..n {
        if delta > 0 && two_r == 0.0 {
            continue;
        }
        let lag = assoc_laguerre_table(n - 1 - delta, delta, x);
        for low in 0..(n - delta) {
            let high = low + delta;
            let ln_mag = ln_sqrt_factorial_ratio(low, high) + if delta > 0 { delta as f64 * two_r.ln() } else { 0.0 } - 2.0 * r2.as_f64();
            let sign = if low % 2 == 0 { R::one() } else { -R::one() };
            let mag = sign * R::lit(ln_mag.exp()) * lag[low];
            // (2 alpha^*)^delta above the diagonal, (2 alpha)^delta below
            m[(low, high)] = polar(mag, -R::from_count(delta) * theta);
            m[(high, low)] = polar(mag, R::from_count(delta) * theta);
        }
    }
    Ok(Operator { dims: vec![n], data: m })
}

/// Kronecker product, mode-1-major.
pub fn tensor<R: Real>(a: &Operator<R>, b: &Operator<R>) -> Operator<R> {
    let mut dims = a.dims.clone();
    dims.extend_from_slice(&b.dims);
    Operator { dims, data: a.data.kronecker(&b.data) }
}

/// Embed a single-mode operator acting on `mode` into the space `dims`.
pub fn local<R: Real>(op: &Operator<R>, mode: usize, dims: &[usize]) -> Result<Operator<R>> {
    if mode >= dims.len() || op.dims != [dims[mode]] {
        return Err(Error::DimensionMismatch(format!("cannot embed operator with dims {:?} as mode {mode} of {dims:?}", op.dims)));
    }
    let mut acc: Option<Operator<R>> = None;
    for (i, &d) in dims.iter().enumerate() {
        let f = if i == mode { op.clone() } else { Operator::identity(&[d]) };
        acc = Some(match acc {
            None => f,
            Some(a) => tensor(&a, &f),
        });
    }
    Ok(acc.expect("non-empty dims"))
}

/// Coherent-state amplitudes `e^{-|alpha|^2/2} alpha^n / sqrt(n!)`, not renormalized.
pub fn coherent_amplitudes<R: Real>(alpha: Complex<R>, n: usize) -> DVector<Complex<R>> {
    let r2 = abs2(alpha).as_f64();
    DVector::from_fn(n, |k, _| {
        let scale = R::lit((-r2 / 2.0 - 0.5 * crate::special::ln_factorial(k)).exp());
        cpowi(alpha, k) * scale
    })
}

/// Normalized coherent ket in an `n`-level truncation.
pub fn coherent_ket<R: Real>(alpha: Complex<R>, n: usize) -> Result<QuantumState<R>> {
    check_dim(n, 2, "coherent_ket")?;
    QuantumState::ket_normalized(vec![n], coherent_amplitudes(alpha, n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatParity {
    Even,
    Odd,
}

/// `(|alpha> + |-alpha>)` (even) or `(|alpha> - |-alpha>)` (odd), normalized.
pub fn coherent_cat<R: Real>(alpha: R, parity: CatParity, n: usize) -> Result<QuantumState<R>> {
    check_dim(n, 4, "coherent_cat")?;
    if alpha < R::zero() {
        return Err(Error::Parameter("cat amplitude must be non-negative".into()));
    }
    if (alpha * alpha).as_f64() > n as f64 / 4.0 {
        return Err(Error::Parameter(format!("cat with |alpha|^2 = {} does not fit in N = {n} (limit N/4)", (alpha * alpha).as_f64())));
    }
    let amps = coherent_amplitudes(Complex::new(alpha, R::zero()), n);
    let keep = match parity {
        CatParity::Even => 0,
        CatParity::Odd => 1,
    };
    let v = DVector::from_fn(n, |k, _| if k % 2 == keep { amps[k] } else { Complex::new(R::zero(), R::zero()) });
    QuantumState::ket_normalized(vec![n], v)
        .map_err(|_| Error::ZeroVector(format!("{parity:?} cat with alpha = {} vanishes", alpha.as_f64())))
}

/// Degenerate cat pair of a single pumped Kerr oscillator.
#[derive(Clone, Debug)]
pub struct EigenCats<R: Real> {
    pub even: QuantumState<R>,
    pub odd: QuantumState<R>,
    /// Eigenvalues in the same (ordinary-frequency) units as the inputs.
    pub even_energy: R,
    pub odd_energy: R,
}

/// Highest-energy eigenstate in each parity sector of
/// `Delta a^dag a - (K/2) a^dag^2 a^2 + (P/2)(a^dag^2 + a^2)`.
///
/// The Hamiltonian is block diagonal in parity, so each sector is
/// diagonalized on its own; near-degeneracy between the sectors never mixes
/// them. Phases are fixed so that `<0|even>` and `<1|odd>` are real and
/// non-negative.
pub fn kpo_eigen_cats<R: Real>(kerr: R, pump: R, detuning: R, n: usize) -> Result<EigenCats<R>> {
    check_dim(n, 2, "kpo_eigen_cats")?;
    let two = R::lit(2.0);
    let elem = |i: usize, j: usize| -> R {
        if i == j {
            let k = R::from_count(i);
            detuning * k - kerr / two * k * (k - R::one())
        } else if i == j + 2 || j == i + 2 {
            let lo = i.min(j);
            pump / two * (R::from_count((lo + 1) * (lo + 2))).sqrt()
        } else {
            R::zero()
        }
    };
    let sector = |start: usize| -> (R, DVector<Complex<R>>) {
        let idx: Vec<usize> = (start..n).step_by(2).collect();
        let h = DMatrix::from_fn(idx.len(), idx.len(), |r, c| elem(idx[r], idx[c]));
        let eig = SymmetricEigen::new(h);
        let (best, energy) =
            eig.eigenvalues.iter().enumerate().fold((0, eig.eigenvalues[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let col = eig.eigenvectors.column(best);
        let mut v = DVector::from_element(n, Complex::new(R::zero(), R::zero()));
        for (r, &k) in idx.iter().enumerate() {
            v[k] = Complex::new(col[r], R::zero());
        }
        // sign convention on the lowest Fock component, falling back to the largest
        let lead = if v[start].re.abs() > R::lit(1e-12) {
            v[start].re
        } else {
            v.iter().map(|z| z.re).fold(R::zero(), |m, x| if x.abs() > m.abs() { x } else { m })
        };
        if lead < R::zero() {
            v.iter_mut().for_each(|z| *z = -*z);
        }
        (energy, v)
    };
    let (even_energy, ev) = sector(0);
    let (odd_energy, od) = sector(1);
    Ok(EigenCats {
        even: QuantumState::ket_normalized(vec![n], ev)?,
        odd: QuantumState::ket_normalized(vec![n], od)?,
        even_energy,
        odd_energy,
    })
}

/// Pure ket or density matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum StateData<R: Real> {
    Ket(DVector<Complex<R>>),
    Density(DMatrix<Complex<R>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState<R: Real> {
    dims: Vec<usize>,
    data: StateData<R>,
}

impl<R: Real> QuantumState<R> {
    /// Ket that must already have unit norm (to 1e-10).
    pub fn ket(dims: Vec<usize>, v: DVector<Complex<R>>) -> Result<Self> {
        check_vec_dims(&dims, v.len())?;
        let norm = v.norm();
        if (norm - R::one()).abs() > tol_for::<R>(1e-10) {
            return Err(Error::Normalization(format!("ket norm {}", norm.as_f64())));
        }
        Ok(Self { dims, data: StateData::Ket(v) })
    }

    /// Ket without the normalization check (propagated states carry their drift).
    pub fn ket_unchecked(dims: Vec<usize>, v: DVector<Complex<R>>) -> Result<Self> {
        check_vec_dims(&dims, v.len())?;
        Ok(Self { dims, data: StateData::Ket(v) })
    }

    pub fn ket_normalized(dims: Vec<usize>, v: DVector<Complex<R>>) -> Result<Self> {
        check_vec_dims(&dims, v.len())?;
        let norm = v.norm();
        if norm.is_zero() || !norm.is_finite() {
            return Err(Error::ZeroVector("cannot normalize a zero vector".into()));
        }
        Ok(Self { dims, data: StateData::Ket(v.unscale(norm)) })
    }

    /// Density matrix checked for Hermiticity, unit trace and positivity.
    pub fn density(dims: Vec<usize>, m: DMatrix<Complex<R>>) -> Result<Self> {
        let s = Self::density_unchecked(dims, m)?;
        s.check_physical(1e-10, 1e-9)?;
        Ok(s)
    }

    pub fn density_unchecked(dims: Vec<usize>, m: DMatrix<Complex<R>>) -> Result<Self> {
        let n = total_dim(&dims);
        if dims.is_empty() || m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch(format!("density {}x{} for dims {dims:?}", m.nrows(), m.ncols())));
        }
        Ok(Self { dims, data: StateData::Density(m) })
    }

    /// Basis state `|levels[0], levels[1], ...>`.
    pub fn fock(dims: &[usize], levels: &[usize]) -> Result<Self> {
        if dims.len() != levels.len() || levels.iter().zip(dims).any(|(l, d)| l >= d) {
            return Err(Error::DimensionMismatch(format!("levels {levels:?} outside dims {dims:?}")));
        }
        let idx = flat_index(dims, levels);
        let mut v = DVector::zeros(total_dim(dims));
        v[idx] = Complex::new(R::one(), R::zero());
        Ok(Self { dims: dims.to_vec(), data: StateData::Ket(v) })
    }

    pub fn maximally_mixed(dims: &[usize]) -> Self {
        let n = total_dim(dims);
        let m = DMatrix::identity(n, n) * Complex::new(R::one() / R::from_count(n), R::zero());
        Self { dims: dims.to_vec(), data: StateData::Density(m) }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        total_dim(&self.dims)
    }

    pub fn data(&self) -> &StateData<R> {
        &self.data
    }

    pub fn is_ket(&self) -> bool {
        matches!(self.data, StateData::Ket(_))
    }

    pub fn as_ket(&self) -> Option<&DVector<Complex<R>>> {
        match &self.data {
            StateData::Ket(v) => Some(v),
            StateData::Density(_) => None,
        }
    }

    pub fn density_matrix(&self) -> DMatrix<Complex<R>> {
        match &self.data {
            StateData::Ket(v) => v * v.adjoint(),
            StateData::Density(m) => m.clone(),
        }
    }

    pub fn to_density(&self) -> Self {
        Self { dims: self.dims.clone(), data: StateData::Density(self.density_matrix()) }
    }

    pub fn expect(&self, op: &Operator<R>) -> Complex<R> {
        assert_eq!(op.dims, self.dims, "operator/state dims differ");
        match &self.data {
            StateData::Ket(v) => v.dotc(&(op.data() * v)),
            StateData::Density(m) => (m * op.data()).trace(),
        }
    }

    pub fn trace(&self) -> R {
        match &self.data {
            StateData::Ket(v) => v.norm_squared(),
            StateData::Density(m) => m.trace().re,
        }
    }

    pub fn purity(&self) -> R {
        match &self.data {
            StateData::Ket(v) => v.norm_squared() * v.norm_squared(),
            StateData::Density(m) => (m * m).trace().re,
        }
    }

    /// Lowest eigenvalue of the density matrix (zero-or-one for kets).
    pub fn min_eigenvalue(&self) -> R {
        match &self.data {
            StateData::Ket(_) => R::zero(),
            StateData::Density(m) => {
                let h = (m + m.adjoint()) * Complex::new(R::lit(0.5), R::zero());
                SymmetricEigen::new(h).eigenvalues.iter().fold(R::max_value().unwrap(), |a, &b| a.min(b))
            }
        }
    }

    pub fn check_physical(&self, tol: f64, eig_floor: f64) -> Result<()> {
        let tol_r = tol_for::<R>(tol);
        match &self.data {
            StateData::Ket(v) => {
                if (v.norm() - R::one()).abs() > tol_r {
                    return Err(Error::Unphysical(format!("ket norm {}", v.norm().as_f64())));
                }
            }
            StateData::Density(m) => {
                let herm =
                    m.iter().zip(m.adjoint().iter()).map(|(a, b)| abs2(*a - *b).sqrt()).fold(R::zero(), |x, y| if y > x { y } else { x });
                if herm > tol_r {
                    return Err(Error::Unphysical(format!("non-Hermitian by {}", herm.as_f64())));
                }
                let tr = m.trace();
                if (tr.re - R::one()).abs() > tol_r || tr.im.abs() > tol_r {
                    return Err(Error::Unphysical(format!("trace {} + {}i", tr.re.as_f64(), tr.im.as_f64())));
                }
                let lo = self.min_eigenvalue();
                if lo < -tol_for::<R>(eig_floor) {
                    return Err(Error::Unphysical(format!("negative eigenvalue {}", lo.as_f64())));
                }
            }
        }
        Ok(())
    }

    /// Reduced state of one mode of a multi-mode state.
    pub fn partial_trace_keep(&self, keep: usize) -> Result<Self> {
        if keep >= self.dims.len() {
            return Err(Error::DimensionMismatch(format!("mode {keep} of {:?}", self.dims)));
        }
        let rho = self.density_matrix();
        let d_keep = self.dims[keep];
        let before: usize = self.dims[..keep].iter().product();
        let after: usize = self.dims[keep + 1..].iter().product();
        let mut out = DMatrix::zeros(d_keep, d_keep);
        for i in 0..d_keep {
            for j in 0..d_keep {
                let mut acc = Complex::new(R::zero(), R::zero());
                for b in 0..before {
                    for a in 0..after {
                        let r = (b * d_keep + i) * after + a;
                        let c = (b * d_keep + j) * after + a;
                        acc += rho[(r, c)];
                    }
                }
                out[(i, j)] = acc;
            }
        }
        Ok(Self { dims: vec![d_keep], data: StateData::Density(out) })
    }

    /// Photon-number distribution of one mode.
    pub fn populations(&self, mode: usize) -> Result<Vec<R>> {
        let red = self.partial_trace_keep(mode)?;
        let m = red.density_matrix();
        Ok((0..m.nrows()).map(|k| m[(k, k)].re).collect())
    }

    /// `sum_{n >= from} p_n` for one mode.
    pub fn tail_population(&self, mode: usize, from: usize) -> Result<R> {
        Ok(self.populations(mode)?.into_iter().skip(from).fold(R::zero(), |a, b| a + b))
    }

    /// Re-express in new per-mode truncations: levels beyond the new
    /// dimension are dropped (no renormalization), new levels are empty.
    pub fn resize(&self, new_dims: &[usize]) -> Result<Self> {
        if new_dims.len() != self.dims.len() {
            return Err(Error::DimensionMismatch(format!("{:?} -> {new_dims:?}", self.dims)));
        }
        let map: Vec<Option<usize>> = (0..total_dim(&self.dims))
            .map(|i| {
                let lv = levels_of(&self.dims, i);
                if lv.iter().zip(new_dims).all(|(l, d)| l < d) {
                    Some(flat_index(new_dims, &lv))
                } else {
                    None
                }
            })
            .collect();
        let n_new = total_dim(new_dims);
        let data = match &self.data {
            StateData::Ket(v) => {
                let mut out = DVector::zeros(n_new);
                for (i, t) in map.iter().enumerate() {
                    if let Some(t) = t {
                        out[*t] = v[i];
                    }
                }
                StateData::Ket(out)
            }
            StateData::Density(m) => {
                let mut out = DMatrix::zeros(n_new, n_new);
                for (i, ti) in map.iter().enumerate() {
                    let Some(ti) = ti else { continue };
                    for (j, tj) in map.iter().enumerate() {
                        if let Some(tj) = tj {
                            out[(*ti, *tj)] = m[(i, j)];
                        }
                    }
                }
                StateData::Density(out)
            }
        };
        Ok(Self { dims: new_dims.to_vec(), data })
    }
}

fn check_vec_dims(dims: &[usize], len: usize) -> Result<()> {
    if dims.is_empty() || total_dim(dims) != len {
        return Err(Error::DimensionMismatch(format!("vector of length {len} for dims {dims:?}")));
    }
    Ok(())
}

/// Flat mode-1-major index of the level tuple.
pub fn flat_index(dims: &[usize], levels: &[usize]) -> usize {
    levels.iter().zip(dims).fold(0, |acc, (l, d)| acc * d + l)
}

pub fn levels_of(dims: &[usize], mut idx: usize) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (slot, d) in out.iter_mut().zip(dims).rev() {
        *slot = idx % d;
        idx /= d;
    }
    out
}

/// Tensor product of kets.
pub fn tensor_kets<R: Real>(a: &QuantumState<R>, b: &QuantumState<R>) -> Result<QuantumState<R>> {
    let (Some(va), Some(vb)) = (a.as_ket(), b.as_ket()) else {
        return Err(Error::Parameter("tensor_kets needs two kets".into()));
    };
    let mut dims = a.dims.clone();
    dims.extend_from_slice(&b.dims);
    Ok(QuantumState { dims, data: StateData::Ket(va.kronecker(vb)) })
}

/// Normalized superposition `sum c_k |psi_k>` of kets sharing dims.
pub fn superpose<R: Real>(terms: &[(Complex<R>, &QuantumState<R>)]) -> Result<QuantumState<R>> {
    let first = terms.first().ok_or_else(|| Error::Parameter("empty superposition".into()))?;
    let mut acc = DVector::zeros(first.1.dim());
    for (c, s) in terms {
        if s.dims != first.1.dims {
            return Err(Error::DimensionMismatch("superposition of different dims".into()));
        }
        let v = s.as_ket().ok_or_else(|| Error::Parameter("superposition needs kets".into()))?;
        acc += v * *c;
    }
    QuantumState::ket_normalized(first.1.dims.clone(), acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    type C = Complex<f64>;

    #[test]
    fn annihilation_elements() {
        let a = annihilation::<f64>(2).unwrap();
        let one = QuantumState::<f64>::fock(&[2], &[1]).unwrap();
        let out = a.apply(one.as_ket().unwrap());
        assert_eq!(out[0], C::new(1.0, 0.0));
        assert_eq!(out[1], C::new(0.0, 0.0));

        let a3 = annihilation::<f64>(3).unwrap();
        assert_abs_diff_eq!(a3.get(1, 2).re, 2f64.sqrt(), epsilon = 1e-15);
        for c in 0..3 {
            assert_eq!(a3.get(2, c), C::new(0.0, 0.0));
        }
        assert!(matches!(annihilation::<f64>(1), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn number_spectrum() {
        let a = annihilation::<f64>(20).unwrap();
        let n = &a.adjoint() * &a;
        let eig = SymmetricEigen::new(n.into_data()).eigenvalues;
        let mut ev: Vec<f64> = eig.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, e) in ev.iter().enumerate() {
            assert_abs_diff_eq!(*e, k as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn commutator_on_leading_block() {
        let n = 12;
        let a = annihilation::<f64>(n).unwrap();
        let c = a.commutator(&a.adjoint());
        let block = c.leading_block(n - 1);
        let diff = (block - DMatrix::<C>::identity(n - 1, n - 1)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff <= 1e-12);
    }

    #[test]
    fn parity_examples() {
        let p = parity::<f64>(8).unwrap();
        let two = QuantumState::<f64>::fock(&[8], &[2]).unwrap();
        let three = QuantumState::<f64>::fock(&[8], &[3]).unwrap();
        assert_eq!(p.apply(two.as_ket().unwrap()), *two.as_ket().unwrap());
        assert_eq!(p.apply(three.as_ket().unwrap()), -three.as_ket().unwrap());
        assert_eq!(&p * &p, Operator::identity(&[8]));
        assert!(p.data().iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn displacement_basics() {
        let d0 = displacement::<f64>(C::new(0.0, 0.0), 6).unwrap();
        assert_eq!(d0, Operator::identity(&[6]));
        let d = displacement::<f64>(C::new(1.0, 0.0), 20).unwrap();
        assert_abs_diff_eq!(d.get(0, 0).re, 0.606531, epsilon = 1e-6);
        assert_abs_diff_eq!(d.get(0, 0).re, (-0.5f64).exp(), epsilon = 1e-15);
        // first column is the coherent state
        let coh = coherent_amplitudes(C::new(1.0, 0.0), 20);
        for k in 0..20 {
            assert_abs_diff_eq!((d.get(k, 0) - coh[k]).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn cahill_glauber_basics() {
        let t0 = cahill_glauber_t::<f64>(C::new(0.0, 0.0), 9).unwrap();
        assert_eq!(t0, parity::<f64>(9).unwrap());
        let t = cahill_glauber_t::<f64>(C::new(0.5, 0.0), 10).unwrap();
        assert_abs_diff_eq!(t.get(0, 0).re, 0.606531, epsilon = 1e-6);
        let t = cahill_glauber_t::<f64>(C::new(0.4, -0.9), 16).unwrap();
        assert!(t.is_hermitian(1e-13));
    }

    #[test]
    fn tensor_examples() {
        let i2 = Operator::<f64>::identity(&[2]);
        let i3 = Operator::<f64>::identity(&[3]);
        let i6 = tensor(&i2, &i3);
        assert_eq!(i6.data(), Operator::<f64>::identity(&[6]).data());
        assert_eq!(i6.dims(), &[2, 3]);

        let a = annihilation::<f64>(2).unwrap();
        let a1 = tensor(&a, &i2);
        let s10 = QuantumState::<f64>::fock(&[2, 2], &[1, 0]).unwrap();
        let s00 = QuantumState::<f64>::fock(&[2, 2], &[0, 0]).unwrap();
        assert_eq!(a1.apply(s10.as_ket().unwrap()), *s00.as_ket().unwrap());

        let p = parity::<f64>(2).unwrap();
        let pp = tensor(&p, &p);
        let s11 = QuantumState::<f64>::fock(&[2, 2], &[1, 1]).unwrap();
        assert_eq!(pp.apply(s11.as_ket().unwrap()), *s11.as_ket().unwrap());
        assert_eq!(flat_index(&[3, 4], &[2, 1]), 9);
        assert_eq!(levels_of(&[3, 4], 9), vec![2, 1]);
    }

    #[test]
    fn cat_examples() {
        let tiny = coherent_cat::<f64>(1e-6, CatParity::Even, 8).unwrap();
        assert_abs_diff_eq!(tiny.as_ket().unwrap()[0].norm(), 1.0, epsilon = 1e-10);
        assert!(matches!(coherent_cat::<f64>(0.0, CatParity::Odd, 8), Err(Error::ZeroVector(_))));
        let odd = coherent_cat::<f64>(1.1, CatParity::Odd, 16).unwrap();
        for (k, z) in odd.as_ket().unwrap().iter().enumerate() {
            if k % 2 == 0 {
                assert_eq!(z.norm(), 0.0);
            }
        }
        let even = coherent_cat::<f64>(1.5f64.sqrt(), CatParity::Even, 20).unwrap();
        let p = parity::<f64>(20).unwrap();
        assert_abs_diff_eq!(even.expect(&p).re, 1.0, epsilon = 1e-14);
        assert!(coherent_cat::<f64>(3.0, CatParity::Even, 20).is_err());
    }

    #[test]
    fn bare_kerr_eigen_cats_are_fock_states() {
        let cats = kpo_eigen_cats::<f64>(2.0, 0.0, 0.0, 12).unwrap();
        assert_abs_diff_eq!(cats.even.as_ket().unwrap()[0].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cats.odd.as_ket().unwrap()[1].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn partial_trace_and_resize() {
        let s = QuantumState::<f64>::fock(&[3, 4], &[2, 1]).unwrap();
        let p = s.populations(1).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0, 0.0]);
        let p0 = s.populations(0).unwrap();
        assert_eq!(p0, vec![0.0, 0.0, 1.0]);
        let r = s.resize(&[5, 2]).unwrap();
        assert_eq!(r.as_ket().unwrap()[flat_index(&[5, 2], &[2, 1])], C::new(1.0, 0.0));
        assert!(QuantumState::<f64>::ket(vec![2], DVector::from_element(2, C::new(1.0, 0.0))).is_err());
    }

    #[test]
    fn single_precision_algebra() {
        let t = cahill_glauber_t::<f32>(Complex::new(0.3, 0.2), 10).unwrap();
        assert!(t.is_hermitian(1e-6));
        let p = parity::<f32>(10).unwrap();
        assert_eq!(cahill_glauber_t::<f32>(Complex::new(0.0, 0.0), 10).unwrap(), p);
    }
}
