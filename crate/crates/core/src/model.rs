//! Physical parameters, Hamiltonian assembly and collapse operators.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fockspace::{annihilation, local, number, tensor};
use crate::pulses::Envelope;
use crate::{Complex64, Operator};

const TWO_PI: f64 = 2.0 * PI;

/// Parameters of the two coupled Kerr parametric oscillators.
///
/// Frequencies in MHz, lifetimes in µs. `pump*` is the flat-top two-photon
/// pump amplitude used by the preset schedules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub delta1: f64,
    pub delta2: f64,
    pub k1: f64,
    pub k2: f64,
    pub pump1: f64,
    pub pump2: f64,
    pub g: f64,
    pub delta_p: f64,
    /// Offset subtracted from the bell_sum drive detuning.
    pub delta_ac: f64,
    pub t1_1: f64,
    pub t1_2: f64,
    pub n_th_1: f64,
    pub n_th_2: f64,
    pub gamma_phi_1: f64,
    pub gamma_phi_2: f64,
    /// Keep pure dephasing active while the pumps are on.
    pub dephasing_during_pumps: bool,
    /// Interpret `delta1`/`delta2` as detunings of the dressed modes: the
    /// static coupling pushes the modes apart by `±g²/Δp`, which is
    /// subtracted from the bare `a†a` coefficients.
    pub dressed_frame: bool,
    pub n1: usize,
    pub n2: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::paper()
    }
}

impl SystemParams {
    /// Device values: K = 2 MHz, P/K = 1, Δ = 1 MHz, g = 8 MHz and KPO
    /// frequencies 144 MHz apart; lossless.
    pub fn paper() -> Self {
        Self {
            delta1: 1.0,
            delta2: 1.0,
            k1: 2.0,
            k2: 2.0,
            pump1: 2.0,
            pump2: 2.0,
            g: 8.0,
            delta_p: 144.0,
            delta_ac: 0.0,
            t1_1: f64::INFINITY,
            t1_2: f64::INFINITY,
            n_th_1: 0.0,
            n_th_2: 0.0,
            gamma_phi_1: 0.0,
            gamma_phi_2: 0.0,
            dephasing_during_pumps: false,
            dressed_frame: true,
            n1: 20,
            n2: 20,
        }
    }

    pub fn with_loss(mut self, t1: f64, n_th: f64) -> Self {
        self.t1_1 = t1;
        self.t1_2 = t1;
        self.n_th_1 = n_th;
        self.n_th_2 = n_th;
        self
    }

    pub fn with_truncation(mut self, n: usize) -> Self {
        self.n1 = n;
        self.n2 = n;
        self
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.n1, self.n2]
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("pump1", self.pump1),
            ("pump2", self.pump2),
            ("g", self.g),
            ("delta_p", self.delta_p),
            ("delta_ac", self.delta_ac),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be finite, got {v}")));
            }
        }
        for (name, k) in [("k1", self.k1), ("k2", self.k2)] {
            if !(k > 0.0) || !k.is_finite() {
                return Err(Error::Parameter(format!("{name} must be positive, got {k}")));
            }
        }
        for (name, t1) in [("t1_1", self.t1_1), ("t1_2", self.t1_2)] {
            if !(t1 > 0.0) {
                return Err(Error::Parameter(format!("{name} must be positive or inf, got {t1}")));
            }
        }
        for (name, v) in
            [("n_th_1", self.n_th_1), ("n_th_2", self.n_th_2), ("gamma_phi_1", self.gamma_phi_1), ("gamma_phi_2", self.gamma_phi_2)]
        {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, n) in [("n1", self.n1), ("n2", self.n2)] {
            if n < 4 {
                return Err(Error::Parameter(format!("{name} must be at least 4, got {n}")));
            }
        }
        Ok(())
    }

    /// Fidelity between the two-mode vacuum and the product of thermal states,
    /// an upper bound on any state prepared from thermal equilibrium.
    pub fn thermal_vacuum_bound(&self) -> f64 {
        1.0 / ((1.0 + self.n_th_1) * (1.0 + self.n_th_2))
    }

    /// Second-order frequency shift (MHz) of each mode from the static coupling.
    pub fn dispersive_shift(&self) -> [f64; 2] {
        if self.delta_p == 0.0 {
            return [0.0, 0.0];
        }
        let chi = self.g * self.g / self.delta_p;
        [chi, -chi]
    }

    /// Drive detuning (MHz) that puts a Bell pulse on resonance.
    ///
    /// The static coupling shifts `|n1 n2>` by `(g²/Δp)(n1 − n2)`. In the
    /// dressed frame this is compensated; otherwise the `|01> <-> |10>`
    /// transition moves by `2g²/Δp`.
    pub fn resonant_bell_detuning(&self, channel: DriveChannel) -> f64 {
        match channel {
            DriveChannel::BellSum => self.delta_ac,
            DriveChannel::BellDiff if !self.dressed_frame => {
                let [s1, s2] = self.dispersive_shift();
                s1 - s2
            }
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveChannel {
    Pump1,
    Pump2,
    BellSum,
    BellDiff,
    Gate,
    XDrive1,
    XDrive2,
}

impl DriveChannel {
    pub const ALL: [DriveChannel; 7] = [
        DriveChannel::Pump1,
        DriveChannel::Pump2,
        DriveChannel::BellSum,
        DriveChannel::BellDiff,
        DriveChannel::Gate,
        DriveChannel::XDrive1,
        DriveChannel::XDrive2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DriveChannel::Pump1 => "pump1",
            DriveChannel::Pump2 => "pump2",
            DriveChannel::BellSum => "bell_sum",
            DriveChannel::BellDiff => "bell_diff",
            DriveChannel::Gate => "gate",
            DriveChannel::XDrive1 => "x_drive1",
            DriveChannel::XDrive2 => "x_drive2",
        }
    }
}

impl fmt::Display for DriveChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DriveChannel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DriveChannel::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| Error::Config(format!("unknown drive channel '{s}'")))
    }
}

/// A drive on one channel: amplitude and detuning envelopes (MHz) and a phase (rad).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    pub channel: DriveChannel,
    pub amplitude: Envelope,
    pub detuning: Envelope,
    #[serde(default)]
    pub phase: f64,
}

impl DriveSpec {
    pub fn constant(channel: DriveChannel, amplitude: f64, detuning: f64, phase: f64) -> Self {
        Self { channel, amplitude: Envelope::Constant { value: amplitude }, detuning: Envelope::Constant { value: detuning }, phase }
    }
}

/// Operator basis of the Hamiltonian. Non-Hermitian entries come in
/// adjoint pairs so that `H = Σ c_k O_k` with `c_{k†} = conj(c_k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Term {
    Number(usize),
    Kerr(usize),
    PairUp(usize),
    PairDown(usize),
    Exchange,
    ExchangeDag,
    Create2,
    Annihilate2,
    Lower(usize),
    Raise(usize),
}

pub(crate) const TERMS: [Term; 16] = [
    Term::Number(0),
    Term::Number(1),
    Term::Kerr(0),
    Term::Kerr(1),
    Term::PairUp(0),
    Term::PairDown(0),
    Term::PairUp(1),
    Term::PairDown(1),
    Term::Exchange,
    Term::ExchangeDag,
    Term::Create2,
    Term::Annihilate2,
    Term::Lower(0),
    Term::Raise(0),
    Term::Lower(1),
    Term::Raise(1),
];

pub(crate) fn term_index(term: Term) -> usize {
    TERMS.iter().position(|t| *t == term).expect("term listed")
}

/// Dense matrices of every Hamiltonian basis term, in `TERMS` order.
pub(crate) fn term_operators(dims: &[usize]) -> Result<Vec<Operator>> {
    let a = [annihilation::<f64>(dims[0])?, annihilation::<f64>(dims[1])?];
    let ad = [a[0].adjoint(), a[1].adjoint()];
    TERMS
        .iter()
        .map(|t| match *t {
            Term::Number(i) => local(&(&ad[i] * &a[i]), i, dims),
            Term::Kerr(i) => local(&(&(&ad[i] * &ad[i]) * &(&a[i] * &a[i])), i, dims),
            Term::PairUp(i) => local(&(&ad[i] * &ad[i]), i, dims),
            Term::PairDown(i) => local(&(&a[i] * &a[i]), i, dims),
            Term::Exchange => Ok(tensor(&ad[0], &a[1])),
            Term::ExchangeDag => Ok(tensor(&a[0], &ad[1])),
            Term::Create2 => Ok(tensor(&ad[0], &ad[1])),
            Term::Annihilate2 => Ok(tensor(&a[0], &a[1])),
            Term::Lower(i) => local(&a[i], i, dims),
            Term::Raise(i) => local(&ad[i], i, dims),
        })
        .collect()
}

fn phasor(angle: f64) -> Complex64 {
    Complex64::from_polar(1.0, angle)
}

/// Angular-frequency coefficients (rad/µs) of `TERMS` at time `t`.
pub(crate) fn term_coefficients(params: &SystemParams, drives: &[&DriveSpec], t: f64) -> Result<[Complex64; 16]> {
    let mut c = [Complex64::new(0.0, 0.0); 16];
    let k = [params.k1, params.k2];
    let shift = if params.dressed_frame { params.dispersive_shift() } else { [0.0, 0.0] };
    for i in 0..2 {
        c[term_index(Term::Kerr(i))] = Complex64::new(-TWO_PI * k[i] / 2.0, 0.0);
        c[term_index(Term::Number(i))] = Complex64::new(-TWO_PI * shift[i], 0.0);
    }
    let mut exchange = TWO_PI * params.g * phasor(TWO_PI * params.delta_p * t);
    let mut create2 = Complex64::new(0.0, 0.0);
    let mut lower = [Complex64::new(0.0, 0.0); 2];
    for d in drives {
        let amp = d.amplitude.value(t)?;
        let det = d.detuning.value(t)?;
        match d.channel {
            DriveChannel::Pump1 | DriveChannel::Pump2 => {
                let i = usize::from(d.channel == DriveChannel::Pump2);
                c[term_index(Term::Number(i))] += TWO_PI * det;
                c[term_index(Term::PairUp(i))] += TWO_PI * amp / 2.0 * phasor(-d.phase);
            }
            DriveChannel::BellSum => {
                let delta = TWO_PI * (det - params.delta_ac);
                create2 += TWO_PI * amp / 2.0 * phasor(-(delta * t + d.phase));
            }
            DriveChannel::BellDiff => {
                exchange += TWO_PI * amp / 2.0 * phasor(-(TWO_PI * det * t + d.phase));
            }
            DriveChannel::Gate => {
                exchange += TWO_PI * amp * phasor(-(TWO_PI * det * t + d.phase));
            }
            DriveChannel::XDrive1 | DriveChannel::XDrive2 => {
                let i = usize::from(d.channel == DriveChannel::XDrive2);
                lower[i] += TWO_PI * amp / 2.0 * phasor(TWO_PI * det * t + d.phase);
            }
        }
    }
    for i in 0..2 {
        let up = c[term_index(Term::PairUp(i))];
        c[term_index(Term::PairDown(i))] = up.conj();
        c[term_index(Term::Lower(i))] = lower[i];
        c[term_index(Term::Raise(i))] = lower[i].conj();
    }
    c[term_index(Term::Exchange)] = exchange;
    c[term_index(Term::ExchangeDag)] = exchange.conj();
    c[term_index(Term::Create2)] = create2;
    c[term_index(Term::Annihilate2)] = create2.conj();
    Ok(c)
}

/// Dense `H(t)` in rad/µs for the given active drives.
pub fn build_hamiltonian(params: &SystemParams, drives: &[DriveSpec], t: f64) -> Result<Operator> {
    params.validate()?;
    let dims = params.dims();
    let ops = term_operators(&dims)?;
    let refs: Vec<&DriveSpec> = drives.iter().collect();
    let coeffs = term_coefficients(params, &refs, t)?;
    let mut h = Operator::zeros(&dims);
    for (op, c) in ops.iter().zip(coeffs) {
        if c.norm() != 0.0 {
            h = &h + &op.scale(c);
        }
    }
    Ok(h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "mode")]
pub enum CollapseKind {
    Relaxation(usize),
    Excitation(usize),
    Dephasing(usize),
}

#[derive(Clone, Debug)]
pub struct CollapseOperator {
    pub kind: CollapseKind,
    /// Rate in µs⁻¹; the operator already carries its square root.
    pub rate: f64,
    pub op: Operator,
}

/// Single-photon loss, thermal excitation and pure dephasing for each mode.
pub fn collapse_operators(params: &SystemParams) -> Result<Vec<CollapseOperator>> {
    params.validate()?;
    let dims = params.dims();
    let mut out = Vec::new();
    let modes = [(params.t1_1, params.n_th_1, params.gamma_phi_1), (params.t1_2, params.n_th_2, params.gamma_phi_2)];
    for (i, &(t1, n_th, gamma_phi)) in modes.iter().enumerate() {
        let kappa = if t1.is_infinite() { 0.0 } else { 1.0 / t1 };
        let a = annihilation::<f64>(dims[i])?;
        let channels = [
            (CollapseKind::Relaxation(i), kappa * (1.0 + n_th), a.clone()),
            (CollapseKind::Excitation(i), kappa * n_th, a.adjoint()),
            (CollapseKind::Dephasing(i), 2.0 * gamma_phi, number::<f64>(dims[i])?),
        ];
        for (kind, rate, op) in channels {
            if rate < 0.0 || !rate.is_finite() {
                return Err(Error::Parameter(format!("collapse rate {rate} for {kind:?}")));
            }
            if rate > 0.0 {
                out.push(CollapseOperator { kind, rate, op: local(&op.scale_real(rate.sqrt()), i, &dims)? });
            }
        }
    }
    Ok(out)
}
