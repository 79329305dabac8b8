//! Scalar abstraction shared by the operator algebra and Wigner evaluators.

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar used for operator matrix elements.
///
/// Implemented for `f32` and `f64`. The dynamics, tomography and experiment
/// layers are written against `f64`; the Fock-space algebra and the Wigner
/// evaluators are generic so they can also be run in single precision.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `r * exp(i theta)` without relying on `Float`-only inherent methods.
#[inline]
pub fn polar<R: Real>(r: R, theta: R) -> Complex<R> {
    Complex::new(r * theta.cos(), r * theta.sin())
}

#[inline]
pub fn cplx<R: Real>(re: f64, im: f64) -> Complex<R> {
    Complex::new(R::lit(re), R::lit(im))
}

/// Squared modulus.
#[inline]
pub fn abs2<R: Real>(z: Complex<R>) -> R {
    z.re * z.re + z.im * z.im
}

/// Integer power of a complex number by repeated squaring.
pub fn cpowi<R: Real>(z: Complex<R>, mut k: usize) -> Complex<R> {
    let mut base = z;
    let mut acc = Complex::new(R::one(), R::zero());
    while k > 0 {
        if k & 1 == 1 {
            acc *= base;
        }
        base = base * base;
        k >>= 1;
    }
    acc
}
