//! Reservoir topologies and the four neuron update rules.
//!
//! With `z = W_in u[t+1] + W_s x[t]`, leaking rate `a` and noise scale `b`:
//!
//! | model | update                                    |
//! |-------|-------------------------------------------|
//! | AN    | `x' = (1-a) x + a tanh(z)`                |
//! | ASN   | `x' = (1-a) x + a tanh(z) + b r`          |
//! | BN    | `x' = (1-a) x + sgn(a tanh(z))`           |
//! | BSN   | `x' = (1-a) x + sgn(a tanh(z) + b r)`     |
//!
//! `r` holds one independent `U[-h, h)` draw per neuron and step (`h` is
//! [`ReservoirConfig::noise_half_width`], 1 by default) and `sgn(0) = 0`.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{scale_to_radius, Matrix};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronKind {
    #[serde(alias = "AN")]
    An,
    #[serde(alias = "ASN")]
    Asn,
    #[serde(alias = "BN")]
    Bn,
    #[serde(alias = "BSN")]
    Bsn,
}

impl NeuronKind {
    pub const ALL: [NeuronKind; 4] = [
        NeuronKind::An,
        NeuronKind::Asn,
        NeuronKind::Bn,
        NeuronKind::Bsn,
    ];

    pub fn is_binary(self) -> bool {
        matches!(self, NeuronKind::Bn | NeuronKind::Bsn)
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, NeuronKind::Asn | NeuronKind::Bsn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NeuronKind::An => "an",
            NeuronKind::Asn => "asn",
            NeuronKind::Bn => "bn",
            NeuronKind::Bsn => "bsn",
        }
    }
}

impl fmt::Display for NeuronKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NeuronKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "an" => Ok(NeuronKind::An),
            "asn" => Ok(NeuronKind::Asn),
            "bn" => Ok(NeuronKind::Bn),
            "bsn" => Ok(NeuronKind::Bsn),
            other => Err(Error::InvalidArgument(format!(
                "unknown neuron model '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronModel {
    pub kind: NeuronKind,
    /// Noise scale; must be zero for the deterministic kinds.
    #[serde(default)]
    pub b: f64,
}

impl NeuronModel {
    pub fn new(kind: NeuronKind, b: f64) -> Result<Self> {
        let m = Self { kind, b };
        m.validate()?;
        Ok(m)
    }

    pub fn deterministic(kind: NeuronKind) -> Self {
        Self { kind, b: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b >= 0.0) || !self.b.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise scale b must be finite and >= 0, got {}",
                self.b
            )));
        }
        if !self.kind.is_stochastic() && self.b != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "model {} is deterministic; b must be 0",
                self.kind
            )));
        }
        Ok(())
    }
}

pub const DEFAULT_LEAK: f64 = 0.35;
pub const DEFAULT_RHO: f64 = 1.0;
pub const DEFAULT_W_IN_SCALE: f64 = 0.5;

fn default_leak() -> f64 {
    DEFAULT_LEAK
}
fn default_rho() -> f64 {
    DEFAULT_RHO
}
fn default_w_in() -> f64 {
    DEFAULT_W_IN_SCALE
}
fn default_half_width() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirConfig {
    pub n: usize,
    #[serde(default = "default_leak")]
    pub leak: f64,
    pub model: NeuronModel,
    #[serde(default = "default_rho")]
    pub rho_target: f64,
    #[serde(default = "default_w_in")]
    pub w_in_scale: f64,
    #[serde(default = "default_half_width")]
    pub noise_half_width: f64,
    #[serde(default)]
    pub topology_seed: u64,
    #[serde(default)]
    pub run_seed: u64,
}

impl ReservoirConfig {
    pub fn new(n: usize, model: NeuronModel) -> Self {
        Self {
            n,
            leak: DEFAULT_LEAK,
            model,
            rho_target: DEFAULT_RHO,
            w_in_scale: DEFAULT_W_IN_SCALE,
            noise_half_width: default_half_width(),
            topology_seed: 0,
            run_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n == 0 {
            return Err(Error::InvalidArgument("reservoir size must be >= 1".into()));
        }
        if !(self.leak > 0.0 && self.leak <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "leaking rate must lie in (0, 1], got {}",
                self.leak
            )));
        }
        if !(self.rho_target > 0.0) || !self.rho_target.is_finite() {
            return Err(Error::InvalidArgument("rho_target must be > 0".into()));
        }
        if !self.w_in_scale.is_finite() {
            return Err(Error::InvalidArgument("w_in_scale must be finite".into()));
        }
        if !(self.noise_half_width > 0.0) || !self.noise_half_width.is_finite() {
            return Err(Error::InvalidArgument(
                "noise_half_width must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet {
    /// N x 1
    pub w_in: Matrix,
    /// N x N
    pub w_s: Matrix,
    /// 1 x N once trained
    pub w_out: Option<Matrix>,
}

impl WeightSet {
    pub fn n(&self) -> usize {
        self.w_s.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.w_s.rows();
        if !self.w_s.is_square() || self.w_in.rows() != n || self.w_in.cols() != 1 {
            return Err(Error::Shape(format!(
                "W_s {}x{}, W_in {}x{}",
                self.w_s.rows(),
                self.w_s.cols(),
                self.w_in.rows(),
                self.w_in.cols()
            )));
        }
        if let Some(w) = &self.w_out {
            if w.cols() != n {
                return Err(Error::Shape(format!(
                    "W_out has {} columns, N = {n}",
                    w.cols()
                )));
            }
        }
        Ok(())
    }

    /// Writes `w_in.csv`, `w_s.csv` and, if trained, `w_out.csv` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let write = |name: &str, m: &Matrix| -> Result<()> {
            let mut out = BufWriter::new(fs::File::create(dir.join(name))?);
            m.write_csv(&mut out)?;
            out.flush()?;
            Ok(())
        };
        write("w_in.csv", &self.w_in)?;
        write("w_s.csv", &self.w_s)?;
        if let Some(w) = &self.w_out {
            write("w_out.csv", w)?;
        }
        Ok(())
    }

    /// Inverse of [`WeightSet::save_dir`]; `w_out.csv` is optional.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Matrix> {
            Matrix::read_csv(BufReader::new(fs::File::open(dir.join(name))?))
        };
        let w_out_path = dir.join("w_out.csv");
        let set = WeightSet {
            w_in: read("w_in.csv")?,
            w_s: read("w_s.csv")?,
            w_out: if w_out_path.exists() {
                Some(read("w_out.csv")?)
            } else {
                None
            },
        };
        set.validate()?;
        Ok(set)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReservoirState {
    pub x: Vec<f64>,
    pub t: usize,
}

impl ReservoirState {
    pub fn zeros(n: usize) -> Self {
        Self {
            x: vec![0.0; n],
            t: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }
}

/// Builds `W_s` (drawn row-major first) and then `W_in` from the topology
/// stream `(topology_seed, 0)`, entries i.i.d. `U[-0.5, 0.5)`. `W_s` is
/// rescaled to `rho_target`; if it is degenerate the next stream id is used.
pub fn build_topology(config: &ReservoirConfig) -> Result<WeightSet> {
    config.validate()?;
    let n = config.n;
    for sub in 0..16u64 {
        let mut s = RngStream::new(config.topology_seed, sub);
        let raw = Matrix::from_fn(n, n, |_, _| s.uniform_unchecked(-0.5, 0.5));
        let w_in = Matrix::from_fn(n, 1, |_, _| {
            s.uniform_unchecked(-0.5, 0.5) * config.w_in_scale
        });
        match scale_to_radius(&raw, config.rho_target) {
            Ok(w_s) => {
                return Ok(WeightSet {
                    w_in,
                    w_s,
                    w_out: None,
                })
            }
            Err(Error::DegenerateMatrix) => {
                log::warn!(
                    "degenerate W_s for topology seed {} (substream {sub}); redrawing",
                    config.topology_seed
                );
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateMatrix)
}

#[inline]
pub fn signum(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        // 0 stays 0, NaN stays NaN
        v * 0.0
    }
}

/// Reusable stepper over borrowed weights; owns the `z` scratch buffer.
pub struct Reservoir<'a> {
    weights: &'a WeightSet,
    config: &'a ReservoirConfig,
    z: Vec<f64>,
}

impl<'a> Reservoir<'a> {
    pub fn new(weights: &'a WeightSet, config: &'a ReservoirConfig) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        if weights.n() != config.n {
            return Err(Error::Shape(format!(
                "weights for N = {}, config N = {}",
                weights.n(),
                config.n
            )));
        }
        Ok(Self {
            weights,
            config,
            z: vec![0.0; config.n],
        })
    }

    pub fn weights(&self) -> &WeightSet {
        self.weights
    }

    pub fn config(&self) -> &ReservoirConfig {
        self.config
    }

    /// Advances `state` by one step with input `u_next`.
    pub fn step(
        &mut self,
        state: &mut ReservoirState,
        u_next: f64,
        noise: &mut RngStream,
    ) -> Result<()> {
        if state.x.len() != self.config.n {
            return Err(Error::Shape(format!(
                "state has {} neurons, N = {}",
                state.x.len(),
                self.config.n
            )));
        }
        self.weights.w_s.matvec_into(&state.x, &mut self.z);
        for (z, w) in self.z.iter_mut().zip(self.weights.w_in.as_slice()) {
            *z += w * u_next;
        }

        let a = self.config.leak;
        let decay = 1.0 - a;
        let b = self.config.model.b;
        let h = self.config.noise_half_width;
        let noisy = self.config.model.kind.is_stochastic() && b != 0.0;
        let mut finite = true;
        for (x, &z) in state.x.iter_mut().zip(&self.z) {
            let activation = a * z.tanh();
            let next = match self.config.model.kind {
                NeuronKind::An => decay * *x + activation,
                NeuronKind::Asn => {
                    if noisy {
                        decay * *x + activation + b * noise.uniform_unchecked(-h, h)
                    } else {
                        decay * *x + activation
                    }
                }
                NeuronKind::Bn => decay * *x + signum(activation),
                NeuronKind::Bsn => {
                    if noisy {
                        decay * *x + signum(activation + b * noise.uniform_unchecked(-h, h))
                    } else {
                        decay * *x + signum(activation)
                    }
                }
            };
            finite &= next.is_finite();
            *x = next;
        }
        state.t += 1;
        if !finite || !u_next.is_finite() {
            return Err(Error::NumericOverflow { step: state.t });
        }
        Ok(())
    }

    /// Full trajectory: element `k` is the state after consuming `inputs[k]`.
    pub fn run_sequence(
        &mut self,
        x0: &ReservoirState,
        inputs: &[f64],
        noise: &mut RngStream,
    ) -> Result<Vec<ReservoirState>> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("input sequence is empty".into()));
        }
        let mut state = x0.clone();
        let mut out = Vec::with_capacity(inputs.len());
        for &u in inputs {
            self.step(&mut state, u, noise)?;
            out.push(state.clone());
        }
        Ok(out)
    }
}

/// One step as a pure function of the previous state.
pub fn step(
    state: &ReservoirState,
    u_next: f64,
    weights: &WeightSet,
    config: &ReservoirConfig,
    noise: &mut RngStream,
) -> Result<ReservoirState> {
    let mut next = state.clone();
    Reservoir::new(weights, config)?.step(&mut next, u_next, noise)?;
    Ok(next)
}

pub fn run_sequence(
    x0: &ReservoirState,
    inputs: &[f64],
    weights: &WeightSet,
    config: &ReservoirConfig,
    noise: &mut RngStream,
) -> Result<Vec<ReservoirState>> {
    Reservoir::new(weights, config)?.run_sequence(x0, inputs, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_radius_default;

    fn scalar_weights(w_in: f64, w_s: f64) -> WeightSet {
        WeightSet {
            w_in: Matrix::from_vec(1, 1, vec![w_in]).unwrap(),
            w_s: Matrix::from_vec(1, 1, vec![w_s]).unwrap(),
            w_out: None,
        }
    }

    fn cfg(n: usize, kind: NeuronKind, b: f64) -> ReservoirConfig {
        ReservoirConfig::new(n, NeuronModel { kind, b })
    }

    #[test]
    fn an_origin_is_fixed_point() {
        let c = cfg(5, NeuronKind::An, 0.0);
        let w = build_topology(&c).unwrap();
        let s = step(
            &ReservoirState::zeros(5),
            0.0,
            &w,
            &c,
            &mut RngStream::new(0, 0),
        )
        .unwrap();
        assert!(s.x.iter().all(|v| *v == 0.0));
        assert_eq!(s.t, 1);
    }

    #[test]
    fn scalar_hand_evaluations() {
        let w = scalar_weights(1.0, 0.0);
        let mut c = cfg(1, NeuronKind::An, 0.0);
        c.leak = 0.5;
        let s = step(
            &ReservoirState::zeros(1),
            1.0,
            &w,
            &c,
            &mut RngStream::new(0, 0),
        )
        .unwrap();
        assert!((s.x[0] - 0.5 * 1f64.tanh()).abs() < 1e-15);
        assert!((s.x[0] - 0.3808).abs() < 1e-4);

        c.model.kind = NeuronKind::Bn;
        let s = step(
            &ReservoirState::zeros(1),
            1.0,
            &w,
            &c,
            &mut RngStream::new(0, 0),
        )
        .unwrap();
        assert_eq!(s.x[0], 1.0);
    }

    #[test]
    fn signum_zero_is_zero() {
        assert_eq!(signum(0.0), 0.0);
        assert_eq!(signum(-0.0), 0.0);
        assert_eq!(signum(3.0), 1.0);
        assert_eq!(signum(-1e-300), -1.0);
        assert!(signum(f64::NAN).is_nan());
    }

    #[test]
    fn bn_zero_drive_keeps_decaying() {
        let w = scalar_weights(0.0, 0.0);
        let mut c = cfg(1, NeuronKind::Bn, 0.0);
        c.leak = 0.3;
        let s = step(
            &ReservoirState { x: vec![2.0], t: 0 },
            0.0,
            &w,
            &c,
            &mut RngStream::new(0, 0),
        )
        .unwrap();
        assert!((s.x[0] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn model_validation() {
        assert!(NeuronModel::new(NeuronKind::An, 0.1).is_err());
        assert!(NeuronModel::new(NeuronKind::Asn, -0.1).is_err());
        assert!(NeuronModel::new(NeuronKind::Bsn, 0.05).is_ok());
        let mut c = cfg(3, NeuronKind::An, 0.0);
        c.leak = 0.0;
        assert!(c.validate().is_err());
        c.leak = 1.0;
        assert!(c.validate().is_ok());
        c.n = 0;
        assert!(build_topology(&c).is_err());
        assert_eq!("BSN".parse::<NeuronKind>().unwrap(), NeuronKind::Bsn);
        assert!("spiking".parse::<NeuronKind>().is_err());
    }

    #[test]
    fn topology_is_deterministic_and_scaled() {
        let mut c = cfg(20, NeuronKind::Asn, 0.05);
        c.topology_seed = 1;
        let a = build_topology(&c).unwrap();
        let b = build_topology(&c).unwrap();
        assert_eq!(a, b);
        let rho = spectral_radius_default(&a.w_s).unwrap().value;
        assert!((rho - c.rho_target).abs() < 1e-6);
        assert!(a.w_in.as_slice().iter().all(|v| (-0.5..0.5).contains(v)));
    }

    #[test]
    fn five_seeds_five_topologies() {
        let mats: Vec<_> = (0..5)
            .map(|seed| {
                let mut c = cfg(50, NeuronKind::An, 0.0);
                c.topology_seed = seed;
                build_topology(&c).unwrap().w_s
            })
            .collect();
        for i in 0..5 {
            for j in i + 1..5 {
                assert!(mats[i].frobenius_distance(&mats[j]).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn run_sequence_matches_repeated_steps() {
        let c = cfg(8, NeuronKind::Bsn, 0.1);
        let w = build_topology(&c).unwrap();
        let inputs: Vec<f64> = (0..50).map(|t| (t as f64 * 0.3).sin()).collect();
        let traj = run_sequence(
            &ReservoirState::zeros(8),
            &inputs,
            &w,
            &c,
            &mut RngStream::new(4, 4),
        )
        .unwrap();

        let mut noise = RngStream::new(4, 4);
        let mut s = ReservoirState::zeros(8);
        for (k, &u) in inputs.iter().enumerate() {
            s = step(&s, u, &w, &c, &mut noise).unwrap();
            assert_eq!(s, traj[k]);
        }

        let one = run_sequence(
            &ReservoirState::zeros(8),
            &inputs[..1],
            &w,
            &c,
            &mut RngStream::new(4, 4),
        )
        .unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], traj[0]);
        assert!(run_sequence(
            &ReservoirState::zeros(8),
            &[],
            &w,
            &c,
            &mut RngStream::new(4, 4)
        )
        .is_err());
    }

    #[test]
    fn contracting_an_reaches_fixed_point() {
        let mut c = cfg(10, NeuronKind::An, 0.0);
        c.rho_target = 0.8;
        c.topology_seed = 3;
        let w = build_topology(&c).unwrap();
        let traj = run_sequence(
            &ReservoirState::zeros(10),
            &vec![0.7; 3000],
            &w,
            &c,
            &mut RngStream::new(0, 0),
        )
        .unwrap();
        let last = &traj[traj.len() - 1].x;
        let prev = &traj[traj.len() - 2].x;
        let diff = last
            .iter()
            .zip(prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn overflow_is_reported() {
        let w = scalar_weights(1.0, 0.0);
        let c = cfg(1, NeuronKind::An, 0.0);
        let err = step(
            &ReservoirState::zeros(1),
            f64::NAN,
            &w,
            &c,
            &mut RngStream::new(0, 0),
        );
        assert!(matches!(err, Err(Error::NumericOverflow { step: 1 })));
    }

    #[test]
    fn shape_mismatch() {
        let c = cfg(3, NeuronKind::An, 0.0);
        let w = build_topology(&c).unwrap();
        assert!(step(
            &ReservoirState::zeros(2),
            0.0,
            &w,
            &c,
            &mut RngStream::new(0, 0)
        )
        .is_err());
        let c4 = cfg(4, NeuronKind::An, 0.0);
        assert!(Reservoir::new(&w, &c4).is_err());
    }
}
