//! Exponentially damped cosine fit for Rabi-decay data.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DVector, Dyn, Matrix, Vector5, U5};
use serde::Serialize;

use crate::error::{Error, Result};

/// `y = amplitude · e^{-t/decay} · cos(omega t + phase) + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DampedCosine {
    pub amplitude: f64,
    /// Envelope decay time (µs); infinite when no decay is resolved.
    pub decay: f64,
    /// Angular frequency (rad/µs).
    pub omega: f64,
    pub phase: f64,
    pub offset: f64,
    pub rms_residual: f64,
}

impl DampedCosine {
    pub fn eval(&self, t: f64) -> f64 {
        let rate = if self.decay.is_finite() { 1.0 / self.decay } else { 0.0 };
        self.amplitude * (-rate * t).exp() * (self.omega * t + self.phase).cos() + self.offset
    }
}

struct Problem<'a> {
    t: &'a [f64],
    y: &'a [f64],
    /// amplitude, rate, omega, phase, offset
    p: Vector5<f64>,
}

impl LeastSquaresProblem<f64, Dyn, U5> for Problem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U5>;
    type ParameterStorage = Owned<f64, U5>;

    fn set_params(&mut self, x: &Vector5<f64>) {
        self.p = *x;
    }

    fn params(&self) -> Vector5<f64> {
        self.p
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let [a, g, w, ph, c] = [self.p[0], self.p[1], self.p[2], self.p[3], self.p[4]];
        Some(DVector::from_iterator(
            self.t.len(),
            self.t.iter().zip(self.y).map(|(&t, &y)| a * (-g * t).exp() * (w * t + ph).cos() + c - y),
        ))
    }

    fn jacobian(&self) -> Option<Matrix<f64, Dyn, U5, Self::JacobianStorage>> {
        let [a, g, w, ph, _] = [self.p[0], self.p[1], self.p[2], self.p[3], self.p[4]];
        let mut j = Matrix::<f64, Dyn, U5, Self::JacobianStorage>::zeros(self.t.len());
        for (r, &t) in self.t.iter().enumerate() {
            let e = (-g * t).exp();
            let (s, c) = (w * t + ph).sin_cos();
            j[(r, 0)] = e * c;
            j[(r, 1)] = -t * a * e * c;
            j[(r, 2)] = -t * a * e * s;
            j[(r, 3)] = -a * e * s;
            j[(r, 4)] = 1.0;
        }
        Some(j)
    }
}

/// Dominant angular frequency by a direct periodogram scan.
fn dominant_omega(t: &[f64], y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let span = t[t.len() - 1] - t[0];
    let step = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let (lo, hi) = (std::f64::consts::PI / span, std::f64::consts::PI / step);
    let n = 4000;
    let mut best = (lo, 0.0);
    for k in 0..=n {
        let w = lo + (hi - lo) * k as f64 / n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (&ti, &yi) in t.iter().zip(y) {
            let (s, c) = (w * ti).sin_cos();
            re += (yi - mean) * c;
            im += (yi - mean) * s;
        }
        let p = re * re + im * im;
        if p > best.1 {
            best = (w, p);
        }
    }
    best.0
}

pub fn fit_damped_cosine(t: &[f64], y: &[f64]) -> Result<DampedCosine> {
    if t.len() != y.len() || t.len() < 8 {
        return Err(Error::Parameter(format!("damped-cosine fit needs at least 8 paired samples, got {} and {}", t.len(), y.len())));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let (min, max) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = t[t.len() - 1] - t[0];
    let omega = dominant_omega(t, y);
    let phase = if (y[0] - mean) >= 0.0 { 0.0 } else { std::f64::consts::PI };
    let start = Vector5::new(0.5 * (max - min), 1.0 / span, omega, phase, mean);
    let (fit, report) = LevenbergMarquardt::new().minimize(Problem { t, y, p: start });
    if !report.termination.was_successful() {
        return Err(Error::Parameter(format!("damped-cosine fit did not converge: {:?}", report.termination)));
    }
    let p = fit.p;
    let (mut amplitude, mut phase) = (p[0], p[3]);
    if amplitude < 0.0 {
        amplitude = -amplitude;
        phase += std::f64::consts::PI;
    }
    let rms_residual = (2.0 * report.objective_function / t.len() as f64).sqrt();
    Ok(DampedCosine {
        amplitude,
        decay: if p[1] > 0.0 { 1.0 / p[1] } else { f64::INFINITY },
        omega: p[2].abs(),
        phase: if p[2] < 0.0 { -phase } else { phase }.rem_euclid(2.0 * std::f64::consts::PI),
        offset: p[4],
        rms_residual,
    })
}
