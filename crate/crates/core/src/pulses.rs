//! Pulse envelopes and drive schedules.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DriveChannel, DriveSpec, SystemParams};

/// `target * sin^2(pi t / (2 tau))` for `0 <= t <= tau`, `target` afterwards.
pub fn sin2_ramp(t: f64, tau_ramp: f64, target: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= tau_ramp {
        target
    } else {
        let s = (PI * t / (2.0 * tau_ramp)).sin();
        target * s * s
    }
}

/// Pump detuning chirp: the same sin^2 profile, from zero to `target`.
pub fn chirped_detuning(t: f64, tau_ramp: f64, target: f64) -> f64 {
    sin2_ramp(t, tau_ramp, target)
}

/// Flat-top pulse on `[t0, t0 + length]` with optional sin^2 edges of width `rise`.
pub fn square_pulse(t: f64, t0: f64, length: f64, amplitude: f64, rise: f64) -> f64 {
    let t1 = t0 + length;
    if t < t0 || t > t1 {
        return 0.0;
    }
    if rise > 0.0 {
        if t < t0 + rise {
            return sin2_ramp(t - t0, rise, amplitude);
        }
        if t > t1 - rise {
            return sin2_ramp(t1 - t, rise, amplitude);
        }
    }
    amplitude
}

/// Time profile of a drive amplitude or detuning (MHz), in absolute time (µs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Envelope {
    Zero,
    Constant {
        value: f64,
    },
    Sin2Ramp {
        t0: f64,
        tau: f64,
        target: f64,
    },
    Square {
        t0: f64,
        length: f64,
        amplitude: f64,
        #[serde(default)]
        rise: f64,
    },
}

impl Envelope {
    pub fn value(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::Schedule(format!("envelope evaluated at non-finite t = {t}")));
        }
        Ok(match *self {
            Envelope::Zero => 0.0,
            Envelope::Constant { value } => value,
            Envelope::Sin2Ramp { t0, tau, target } => sin2_ramp(t - t0, tau, target),
            Envelope::Square { t0, length, amplitude, rise } => square_pulse(t, t0, length, amplitude, rise),
        })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Envelope::Sin2Ramp { tau, .. } if !(tau > 0.0) => Err(Error::Schedule(format!("ramp time must be positive, got {tau}"))),
            Envelope::Square { length, rise, .. } if !(length > 0.0) || rise < 0.0 || rise > length / 2.0 => {
                Err(Error::Schedule(format!("square pulse needs length > 0 and 0 <= rise <= length/2 (length {length}, rise {rise})")))
            }
            _ => Ok(()),
        }
    }
}

/// One drive active on `[t_start, t_end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    #[serde(flatten)]
    pub drive: DriveSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    segments: Vec<Segment>,
    total_duration: f64,
}

const EDGE_EPS: f64 = 1e-12;

impl PulseSchedule {
    pub fn new(segments: Vec<Segment>, total_duration: f64) -> Result<Self> {
        let s = Self { segments, total_duration };
        s.validate()?;
        Ok(s)
    }

    pub fn empty(total_duration: f64) -> Result<Self> {
        Self::new(Vec::new(), total_duration)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_duration >= 0.0) || !self.total_duration.is_finite() {
            return Err(Error::Schedule(format!("invalid total duration {}", self.total_duration)));
        }
        for s in &self.segments {
            if !(s.t_start < s.t_end) || s.t_start < -EDGE_EPS || s.t_end > self.total_duration + EDGE_EPS {
                return Err(Error::Schedule(format!(
                    "{} segment [{}, {}] is empty or outside [0, {}]",
                    s.drive.channel, s.t_start, s.t_end, self.total_duration
                )));
            }
            s.drive.amplitude.validate()?;
            s.drive.detuning.validate()?;
        }
        for (i, a) in self.segments.iter().enumerate() {
            for b in &self.segments[i + 1..] {
                if a.drive.channel == b.drive.channel && a.t_start < b.t_end - EDGE_EPS && b.t_start < a.t_end - EDGE_EPS {
                    return Err(Error::Schedule(format!(
                        "overlapping {} segments [{}, {}] and [{}, {}]",
                        a.drive.channel, a.t_start, a.t_end, b.t_start, b.t_end
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        self.total_duration
    }

    /// Drives whose segment covers `t` (segments are half-open, except that
    /// the schedule end belongs to segments finishing there).
    pub fn drives_at(&self, t: f64) -> Vec<&DriveSpec> {
        self.segments
            .iter()
            .filter(|s| {
                let end_ok = t < s.t_end - EDGE_EPS || ((s.t_end - self.total_duration).abs() <= EDGE_EPS && t <= s.t_end + EDGE_EPS);
                t >= s.t_start - EDGE_EPS && end_ok
            })
            .map(|s| &s.drive)
            .collect()
    }

    /// Amplitude of `channel` at `t` (0 outside all segments).
    pub fn amplitude(&self, channel: DriveChannel, t: f64) -> Result<f64> {
        let mut acc = 0.0;
        for d in self.drives_at(t) {
            if d.channel == channel {
                acc += d.amplitude.value(t)?;
            }
        }
        Ok(acc)
    }

    pub fn pumps_active(&self, t: f64) -> bool {
        self.drives_at(t).iter().any(|d| matches!(d.channel, DriveChannel::Pump1 | DriveChannel::Pump2))
    }

    /// Segment boundaries and the schedule end, sorted and deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = vec![0.0, self.total_duration];
        for s in &self.segments {
            pts.push(s.t_start);
            pts.push(s.t_end);
        }
        sort_dedup(pts)
    }

    /// Non-fatal issues with the schedule.
    ///
    /// Once the pumps are on their phase is the reference, so a gate phase
    /// that changes while the pumps stay on cannot act as a virtual Z.
    pub fn lint(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        let gates: Vec<&Segment> = self.segments.iter().filter(|s| s.drive.channel == DriveChannel::Gate).collect();
        for (i, a) in gates.iter().enumerate() {
            for b in &gates[i + 1..] {
                if (a.drive.phase - b.drive.phase).abs() > 1e-12 {
                    let lo = a.t_start.min(b.t_start);
                    let hi = a.t_end.max(b.t_end);
                    let pumped = self.segments.iter().any(|p| {
                        matches!(p.drive.channel, DriveChannel::Pump1 | DriveChannel::Pump2)
                            && p.t_start <= lo + EDGE_EPS
                            && p.t_end >= hi - EDGE_EPS
                    });
                    if pumped {
                        warnings.push(format!(
                            "gate phase changes from {} to {} while pumps are on ([{lo}, {hi}] us); the pump phase is the reference",
                            a.drive.phase, b.drive.phase
                        ));
                    }
                }
            }
        }
        warnings
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let sched: Self = toml::from_str(s)?;
        sched.validate()?;
        Ok(sched)
    }

    /// Sampled waveform CSV: `t_us,channel,amplitude_MHz,detuning_MHz,phase_rad`.
    pub fn write_waveform_csv<W: Write>(&self, out: W, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::Parameter(format!("sampling step must be positive, got {dt}")));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_us", "channel", "amplitude_MHz", "detuning_MHz", "phase_rad"])?;
        let steps = (self.total_duration / dt).round() as usize;
        for k in 0..=steps {
            let t = (k as f64 * dt).min(self.total_duration);
            for d in self.drives_at(t) {
                w.write_record(&[
                    format!("{t:.6}"),
                    d.channel.to_string(),
                    format!("{:.12e}", d.amplitude.value(t)?),
                    format!("{:.12e}", d.detuning.value(t)?),
                    format!("{:.12e}", d.phase),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn sort_dedup(mut pts: Vec<f64>) -> Vec<f64> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    pts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    CatGen,
    BellFock,
    FockToCat,
    TwoCatGate,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cat_gen" | "cat-gen" => Ok(Preset::CatGen),
            "bell_fock" | "bell-fock" => Ok(Preset::BellFock),
            "fock_to_cat" | "fock-to-cat" => Ok(Preset::FockToCat),
            "two_cat_gate" | "two-cat-gate" => Ok(Preset::TwoCatGate),
            other => Err(Error::Config(format!("unknown schedule preset '{other}'"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::CatGen => "cat_gen",
            Preset::BellFock => "bell_fock",
            Preset::FockToCat => "fock_to_cat",
            Preset::TwoCatGate => "two_cat_gate",
        })
    }
}

/// Tunable knobs of the preset schedules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub tau_ramp: f64,
    /// Time the pumps stay at their flat top before the gate (or the end).
    pub hold: f64,
    /// Ramp the pump detuning together with the amplitude.
    pub chirp: bool,
    pub bell_channel: DriveChannel,
    pub bell_length: f64,
    /// `None` uses the analytic quarter-Rabi amplitude `1 / (4 * bell_length)`.
    pub bell_amplitude: Option<f64>,
    /// `None` places the drive on the dressed resonance of the chosen pair.
    pub bell_detuning: Option<f64>,
    /// Relative phase of the prepared Bell state, `|a> + e^{i phi} |b>`.
    pub bell_relative_phase: f64,
    pub bell_rise: f64,
    pub gate_length: f64,
    pub gate_amplitude: f64,
    pub gate_detuning: f64,
    pub gate_phase: f64,
    pub gate_rise: f64,
}

impl Default for ScheduleOverrides {
    fn default() -> Self {
        Self {
            tau_ramp: 1.0,
            hold: 0.0,
            chirp: true,
            bell_channel: DriveChannel::BellSum,
            bell_length: 0.730,
            bell_amplitude: None,
            bell_detuning: None,
            bell_relative_phase: 0.0,
            bell_rise: 0.0,
            gate_length: 0.275,
            gate_amplitude: 2.96,
            gate_detuning: 0.0,
            gate_phase: 0.0,
            gate_rise: 0.0,
        }
    }
}

/// Drive phase that turns `|a>` into `cos|a> + e^{i phi} sin|b>` for a
/// resonant exchange term `(Omega/2)(e^{-i theta}|b><a| + h.c.)`.
pub fn drive_phase_for_relative_phase(relative_phase: f64) -> f64 {
    -relative_phase - FRAC_PI_2
}

impl ScheduleOverrides {
    pub fn bell_amplitude_or_default(&self) -> f64 {
        self.bell_amplitude.unwrap_or(1.0 / (4.0 * self.bell_length))
    }

    pub fn bell_detuning_or_default(&self, params: &SystemParams) -> f64 {
        self.bell_detuning.unwrap_or_else(|| params.resonant_bell_detuning(self.bell_channel))
    }
}

fn pump_segments(params: &SystemParams, o: &ScheduleOverrides, t0: f64, t1: f64) -> Vec<Segment> {
    let mut out = Vec::with_capacity(2);
    for (channel, pump, delta) in [(DriveChannel::Pump1, params.pump1, params.delta1), (DriveChannel::Pump2, params.pump2, params.delta2)] {
        let detuning =
            if o.chirp { Envelope::Sin2Ramp { t0, tau: o.tau_ramp, target: delta } } else { Envelope::Constant { value: delta } };
        out.push(Segment {
            t_start: t0,
            t_end: t1,
            drive: DriveSpec { channel, amplitude: Envelope::Sin2Ramp { t0, tau: o.tau_ramp, target: pump }, detuning, phase: 0.0 },
        });
    }
    out
}

fn bell_segment(params: &SystemParams, o: &ScheduleOverrides, t0: f64) -> Result<Segment> {
    if !matches!(o.bell_channel, DriveChannel::BellSum | DriveChannel::BellDiff) {
        return Err(Error::Config(format!("bell_channel must be bell_sum or bell_diff, got {}", o.bell_channel)));
    }
    Ok(Segment {
        t_start: t0,
        t_end: t0 + o.bell_length,
        drive: DriveSpec {
            channel: o.bell_channel,
            amplitude: Envelope::Square { t0, length: o.bell_length, amplitude: o.bell_amplitude_or_default(), rise: o.bell_rise },
            detuning: Envelope::Constant { value: o.bell_detuning_or_default(params) },
            phase: drive_phase_for_relative_phase(o.bell_relative_phase),
        },
    })
}

/// Build one of the named pulse sequences.
pub fn preset_schedule(preset: Preset, params: &SystemParams, o: &ScheduleOverrides) -> Result<PulseSchedule> {
    if !(o.tau_ramp > 0.0) || o.hold < 0.0 {
        return Err(Error::Schedule(format!("invalid ramp/hold ({}, {})", o.tau_ramp, o.hold)));
    }
    let ramp_total = o.tau_ramp + o.hold;
    match preset {
        Preset::CatGen => PulseSchedule::new(pump_segments(params, o, 0.0, ramp_total), ramp_total),
        Preset::BellFock => PulseSchedule::new(vec![bell_segment(params, o, 0.0)?], o.bell_length),
        Preset::FockToCat => {
            let mut segs = vec![bell_segment(params, o, 0.0)?];
            segs.extend(pump_segments(params, o, o.bell_length, o.bell_length + ramp_total));
            PulseSchedule::new(segs, o.bell_length + ramp_total)
        }
        Preset::TwoCatGate => {
            let end = ramp_total + o.gate_length;
            let mut segs = pump_segments(params, o, 0.0, end);
            segs.push(Segment {
                t_start: ramp_total,
                t_end: end,
                drive: DriveSpec {
                    channel: DriveChannel::Gate,
                    amplitude: Envelope::Square { t0: ramp_total, length: o.gate_length, amplitude: o.gate_amplitude, rise: o.gate_rise },
                    detuning: Envelope::Constant { value: o.gate_detuning },
                    phase: o.gate_phase,
                },
            });
            PulseSchedule::new(segs, end)
        }
    }
}
