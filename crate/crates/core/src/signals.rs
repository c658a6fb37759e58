//! Scalar input waveforms.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// `A cos(2π f1 t) + B sin(2π f2 t)`
    CleanSinusoid,
    /// Clean sinusoid plus `C (U[0,1) - 0.5)` white noise per step.
    DistortedSinusoid,
    /// `4/π Σ sin(2π n f1 t) / n` over the first `harmonic_count` odd `n`.
    /// Ignores `A`, `B` and `f2`.
    HarmonicSum,
    /// `A saw(2π f1 t) + B saw(2π f2 t)`
    Sawtooth,
    /// `A sq(2π f1 t) + B sq(2π f2 t)`
    Square,
}

fn default_dt() -> f64 {
    1.0
}

fn default_harmonics() -> u32 {
    15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub c: f64,
    pub f1: f64,
    pub f2: f64,
    #[serde(default = "default_harmonics")]
    pub harmonic_count: u32,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub dt: f64,
}

/// Periodic ramp from -1 to 1; `sawtooth_wave(0) == -1`.
pub fn sawtooth_wave(phase: f64) -> f64 {
    let p = phase.rem_euclid(TAU);
    p / PI - 1.0
}

/// +1 on the first half period, -1 on the second; `square_wave(0) == 1`.
pub fn square_wave(phase: f64) -> f64 {
    if phase.rem_euclid(TAU) < PI {
        1.0
    } else {
        -1.0
    }
}

impl SignalSpec {
    pub fn clean(a: f64, b: f64, f1: f64, f2: f64) -> Self {
        Self {
            kind: SignalKind::CleanSinusoid,
            a,
            b,
            c: 0.0,
            f1,
            f2,
            harmonic_count: default_harmonics(),
            dt: default_dt(),
        }
    }

    pub fn distorted(a: f64, b: f64, c: f64, f1: f64, f2: f64) -> Self {
        Self {
            kind: SignalKind::DistortedSinusoid,
            c,
            ..Self::clean(a, b, f1, f2)
        }
    }

    pub fn with_kind(mut self, kind: SignalKind) -> Self {
        self.kind = kind;
        self
    }

    /// Named inputs used by the experiment grids.
    ///
    /// `clean`, `distorted` (C = 1), `harmonic`, `sawtooth` and `square` share
    /// A = 1, B = 2, f1 = 0.10, f2 = 0.02. `small-fast` halves the amplitudes
    /// and doubles the frequencies; `distorted-mild` and `distorted-strong`
    /// use C = 0.5 and C = 1.5.
    pub fn preset(name: &str) -> Option<Self> {
        let base = Self::clean(1.0, 2.0, 0.10, 0.02);
        let spec = match name {
            "clean" => base,
            "distorted" => Self::distorted(1.0, 2.0, 1.0, 0.10, 0.02),
            "harmonic" => base.with_kind(SignalKind::HarmonicSum),
            "sawtooth" => base.with_kind(SignalKind::Sawtooth),
            "square" => base.with_kind(SignalKind::Square),
            "small-fast" => Self::distorted(0.5, 1.0, 0.0, 0.20, 0.04),
            "distorted-mild" => Self::distorted(1.0, 2.0, 0.5, 0.10, 0.02),
            "distorted-strong" => Self::distorted(1.0, 2.0, 1.5, 0.10, 0.02),
            _ => return None,
        };
        Some(spec)
    }

    pub const PRESETS: [&'static str; 8] = [
        "clean",
        "distorted",
        "harmonic",
        "sawtooth",
        "square",
        "small-fast",
        "distorted-mild",
        "distorted-strong",
    ];

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.c, self.f1, self.f2, self.dt]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidSignal("non-finite parameter".into()));
        }
        if self.f1 <= 0.0 || self.f2 <= 0.0 {
            return Err(Error::InvalidSignal("frequencies must be positive".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::InvalidSignal("dt must be positive".into()));
        }
        if self.c < 0.0 {
            return Err(Error::InvalidSignal("noise weight must be >= 0".into()));
        }
        if self.harmonic_count < 1 {
            return Err(Error::InvalidSignal("harmonic_count must be >= 1".into()));
        }
        Ok(())
    }

    /// Noise-free part of the waveform at continuous time `t` (seconds).
    pub fn deterministic_at(&self, t: f64) -> f64 {
        let p1 = TAU * self.f1 * t;
        let p2 = TAU * self.f2 * t;
        match self.kind {
            SignalKind::CleanSinusoid | SignalKind::DistortedSinusoid => {
                self.a * p1.cos() + self.b * p2.sin()
            }
            SignalKind::HarmonicSum => {
                let sum: f64 = (0..self.harmonic_count)
                    .map(|i| {
                        let n = (2 * i + 1) as f64;
                        (n * p1).sin() / n
                    })
                    .sum();
                4.0 / PI * sum
            }
            SignalKind::Sawtooth => self.a * sawtooth_wave(p1) + self.b * sawtooth_wave(p2),
            SignalKind::Square => self.a * square_wave(p1) + self.b * square_wave(p2),
        }
    }

    fn noisy(&self) -> bool {
        self.kind == SignalKind::DistortedSinusoid && self.c != 0.0
    }

    /// Samples `length` steps at `t = k dt`. Noise, when present, is drawn
    /// once per step from `noise` in time order.
    pub fn generate(&self, length: usize, noise: &mut RngStream) -> Result<TimeSeries> {
        self.validate()?;
        if length == 0 {
            return Err(Error::InvalidArgument("signal length must be >= 1".into()));
        }
        let noisy = self.noisy();
        let values = (0..length)
            .map(|k| {
                let u = self.deterministic_at(k as f64 * self.dt);
                if noisy {
                    u + self.c * (noise.next_unit() - 0.5)
                } else {
                    u
                }
            })
            .collect();
        Ok(TimeSeries {
            values,
            dt: self.dt,
        })
    }

    /// Upper bound on `|u(t)|` for this spec.
    pub fn amplitude_bound(&self) -> f64 {
        match self.kind {
            SignalKind::HarmonicSum => {
                4.0 / PI
                    * (0..self.harmonic_count)
                        .map(|i| 1.0 / (2 * i + 1) as f64)
                        .sum::<f64>()
            }
            SignalKind::DistortedSinusoid => self.a.abs() + self.b.abs() + self.c / 2.0,
            _ => self.a.abs() + self.b.abs(),
        }
    }
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, dt: f64) -> Self {
        Self { values, dt }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> TimeSeries {
        TimeSeries {
            values: self.values[range].to_vec(),
            dt: self.dt,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Two-column `t,u` CSV.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "u"])?;
        for (k, v) in self.values.iter().enumerate() {
            w.write_record([format!("{}", k as f64 * self.dt), format!("{v}")])?;
        }
        w.flush()?;
        Ok(())
    }
}
