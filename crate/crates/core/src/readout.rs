//! Linear readout training and free-running (generative) prediction.
//!
//! Indexing: the reservoir consumes `u[0..washout+train)` under teacher
//! forcing, and the readout maps the state after `u[t]` to `u[t+1]` for
//! `t` in `[washout, washout + train)`. The free run starts by feeding the
//! last known sample `u[washout+train]`; every later input is the previous
//! prediction. Predictions are compared against
//! `u[washout+train+1 .. washout+train+1+test)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, ridge_solve, Matrix};
use crate::metrics::{nmse_with, NmseConvention};
use crate::reservoir::{build_topology, Reservoir, ReservoirConfig, ReservoirState, WeightSet};
use crate::rng::RngStream;
use crate::signals::{SignalSpec, TimeSeries};

/// Steps per online segment in [`TrainingPlan::online`].
/// Free-run horizon for offline scoring. Long horizons let small phase
/// errors accumulate until every model looks equally bad.
pub const DEFAULT_TEST_STEPS: usize = 100;

pub const ONLINE_SEGMENT_LEN: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Offline,
    Online,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(TrainMode::Offline),
            "online" => Ok(TrainMode::Online),
            other => Err(Error::InvalidArgument(format!(
                "unknown training mode '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingPlan {
    pub washout_steps: usize,
    pub train_steps: usize,
    pub test_steps: usize,
    pub mode: TrainMode,
    pub online_segments: usize,
    pub blend_old: f64,
    pub blend_new: f64,
    pub ridge_lambda: f64,
    /// Blowup threshold as a multiple of the largest test-target magnitude.
    pub blowup_factor: f64,
    pub nmse_convention: NmseConvention,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        Self {
            washout_steps: 200,
            train_steps: 2000,
            test_steps: DEFAULT_TEST_STEPS,
            mode: TrainMode::Offline,
            online_segments: 40,
            blend_old: 0.9,
            blend_new: 0.1,
            ridge_lambda: 1e-8,
            blowup_factor: 10.0,
            nmse_convention: NmseConvention::Range,
        }
    }
}

impl TrainingPlan {
    /// Online-mode plan: same washout and training span, with a test span
    /// sized so that each of the 40 segments holds `ONLINE_SEGMENT_LEN` steps.
    pub fn online() -> Self {
        let base = Self::default();
        Self {
            mode: TrainMode::Online,
            test_steps: base.online_segments * ONLINE_SEGMENT_LEN,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.washout_steps == 0 || self.train_steps == 0 || self.test_steps == 0 {
            return Err(Error::InvalidArgument(
                "all step counts must be >= 1".into(),
            ));
        }
        if self.online_segments == 0 {
            return Err(Error::InvalidArgument(
                "online_segments must be >= 1".into(),
            ));
        }
        if self.mode == TrainMode::Online && self.test_steps < self.online_segments {
            return Err(Error::InvalidArgument(format!(
                "{} test steps cannot be split into {} segments",
                self.test_steps, self.online_segments
            )));
        }
        if !(self.blend_old >= 0.0 && self.blend_new >= 0.0)
            || (self.blend_old + self.blend_new - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidArgument(
                "blend weights must be non-negative and sum to 1".into(),
            ));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::InvalidArgument("ridge_lambda must be >= 0".into()));
        }
        if !(self.blowup_factor > 0.0) {
            return Err(Error::InvalidArgument("blowup_factor must be > 0".into()));
        }
        Ok(())
    }

    /// Samples needed to train and then score a free run.
    pub fn signal_len(&self) -> usize {
        self.washout_steps + self.train_steps + self.test_steps + 1
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        let start = self.washout_steps + self.train_steps + 1;
        start..start + self.test_steps
    }

    /// Segment lengths for online training; the remainder goes to the last one.
    pub fn segment_lengths(&self) -> Vec<usize> {
        let base = self.test_steps / self.online_segments;
        let mut lens = vec![base; self.online_segments];
        if let Some(last) = lens.last_mut() {
            *last += self.test_steps - base * self.online_segments;
        }
        lens
    }
}

/// Reservoir with a fitted readout, positioned at the end of training.
#[derive(Clone, Debug)]
pub struct TrainedReservoir {
    pub weights: WeightSet,
    pub state: ReservoirState,
    /// Last teacher sample, fed as the first free-run input.
    pub next_input: f64,
}

impl TrainedReservoir {
    pub fn w_out(&self) -> &Matrix {
        self.weights
            .w_out
            .as_ref()
            .expect("trained reservoir has W_out")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub nmse: Option<f64>,
    pub blowup: bool,
    pub blowup_step: Option<usize>,
    pub w_out: Matrix,
    pub predicted: TimeSeries,
    pub target: TimeSeries,
}

/// Summary of a learned readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub len: usize,
    pub min_abs: f64,
    pub max_abs: f64,
    pub l2_norm: f64,
    /// Absent when every weight is below the zero floor or non-finite.
    pub dynamic_range_db: Option<f64>,
    pub dynamic_range_db20: Option<f64>,
}

impl WeightStats {
    pub fn of(w: &Matrix) -> Self {
        let v = w.as_slice();
        let dr = crate::metrics::dynamic_range(w).ok();
        WeightStats {
            len: v.len(),
            min_abs: v.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min),
            max_abs: v.iter().map(|x| x.abs()).fold(0.0, f64::max),
            l2_norm: v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            dynamic_range_db: dr.map(|d| d.db),
            dynamic_range_db20: dr.map(|d| d.db20),
        }
    }
}

/// JSON form of a [`RunResult`] without the traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub nmse: Option<f64>,
    pub blowup: bool,
    pub blowup_step: Option<usize>,
    pub predicted_steps: usize,
    pub w_out: WeightStats,
}

impl RunResult {
    pub fn record(&self) -> RunRecord {
        RunRecord {
            nmse: self.nmse,
            blowup: self.blowup,
            blowup_step: self.blowup_step,
            predicted_steps: self.predicted.len(),
            w_out: WeightStats::of(&self.w_out),
        }
    }

    /// `step,target,predicted`; `predicted` is blank past a blowup.
    pub fn write_trace_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,target,predicted")?;
        for (i, t) in self.target.values.iter().enumerate() {
            match self.predicted.values.get(i) {
                Some(p) => writeln!(out, "{i},{t:?},{p:?}")?,
                None => writeln!(out, "{i},{t:?},")?,
            }
        }
        Ok(())
    }
}

pub fn detect_blowup(y: f64, state: &ReservoirState, threshold: f64) -> bool {
    !y.is_finite() || y.abs() > threshold || !state.is_finite()
}

/// Teacher-forced drive plus ridge fit of `W_out`.
pub fn train_offline(
    weights: &WeightSet,
    config: &ReservoirConfig,
    plan: &TrainingPlan,
    signal: &TimeSeries,
    noise: &mut RngStream,
) -> Result<TrainedReservoir> {
    plan.validate()?;
    let w = plan.washout_steps;
    let tr = plan.train_steps;
    if signal.len() < w + tr + 1 {
        return Err(Error::InvalidArgument(format!(
            "signal has {} samples, training needs {}",
            signal.len(),
            w + tr + 1
        )));
    }
    let u = &signal.values;
    let n = config.n;
    let mut reservoir = Reservoir::new(weights, config)?;
    let mut state = ReservoirState::zeros(n);
    let mut x = Matrix::zeros(tr, n);
    let mut y = Matrix::zeros(tr, 1);
    for t in 0..w + tr {
        reservoir.step(&mut state, u[t], noise)?;
        if t >= w {
            x.row_mut(t - w).copy_from_slice(&state.x);
            y[(t - w, 0)] = u[t + 1];
        }
    }
    let w_out = ridge_solve(&x, &y, plan.ridge_lambda)?;
    let mut trained = weights.clone();
    trained.w_out = Some(w_out);
    Ok(TrainedReservoir {
        weights: trained,
        state,
        next_input: u[w + tr],
    })
}

struct FreeRun {
    predicted: Vec<f64>,
    blowup_step: Option<usize>,
    w_out: Matrix,
}

fn free_run(
    trained: &TrainedReservoir,
    config: &ReservoirConfig,
    plan: &TrainingPlan,
    target: &[f64],
    online: bool,
    noise: &mut RngStream,
) -> Result<FreeRun> {
    let max_abs = target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = plan.blowup_factor * max_abs.max(f64::MIN_POSITIVE);
    let mut w_out = trained.w_out().clone();
    let n = config.n;

    let boundaries: Vec<usize> = if online {
        plan.segment_lengths()
            .iter()
            .scan(0, |acc, len| {
                *acc += len;
                Some(*acc)
            })
            .collect()
    } else {
        Vec::new()
    };
    let update = online && plan.blend_new != 0.0;
    let mut seg_states: Vec<f64> = Vec::new();
    let mut seg_targets: Vec<f64> = Vec::new();
    let mut next_boundary = 0;

    let mut reservoir = Reservoir::new(&trained.weights, config)?;
    let mut state = trained.state.clone();
    let mut input = trained.next_input;
    let mut predicted = Vec::with_capacity(target.len());
    for (k, &tar) in target.iter().enumerate() {
        let stepped = reservoir.step(&mut state, input, noise);
        let y = dot(w_out.row(0), &state.x);
        predicted.push(y);
        if stepped.is_err() || detect_blowup(y, &state, threshold) {
            return Ok(FreeRun {
                predicted,
                blowup_step: Some(k),
                w_out,
            });
        }
        input = y;

        if update {
            seg_states.extend_from_slice(&state.x);
            seg_targets.push(tar);
            // the final segment has no successor to update for
            if k + 1 == boundaries[next_boundary] && next_boundary + 1 < boundaries.len() {
                next_boundary += 1;
                let rows = seg_targets.len();
                let xs = Matrix::from_vec(rows, n, std::mem::take(&mut seg_states))?;
                let ys = Matrix::from_vec(rows, 1, std::mem::take(&mut seg_targets))?;
                let fitted = ridge_solve(&xs, &ys, plan.ridge_lambda)
                    .and_then(|seg| w_out.blend(plan.blend_old, &seg, plan.blend_new));
                match fitted {
                    Ok(w) => w_out = w,
                    Err(_) => {
                        return Ok(FreeRun {
                            predicted,
                            blowup_step: Some(k),
                            w_out,
                        })
                    }
                }
            }
        }
    }
    Ok(FreeRun {
        predicted,
        blowup_step: None,
        w_out,
    })
}

fn finish(run: FreeRun, target: &TimeSeries, plan: &TrainingPlan) -> Result<RunResult> {
    let nmse = match run.blowup_step {
        Some(_) => None,
        None => Some(nmse_with(
            &target.values,
            &run.predicted,
            plan.nmse_convention,
        )?),
    };
    Ok(RunResult {
        nmse,
        blowup: run.blowup_step.is_some(),
        blowup_step: run.blowup_step,
        w_out: run.w_out,
        predicted: TimeSeries::new(run.predicted, target.dt),
        target: target.clone(),
    })
}

/// Generative prediction with the static trained readout.
pub fn predict_free_run(
    trained: &TrainedReservoir,
    config: &ReservoirConfig,
    plan: &TrainingPlan,
    test_target: &TimeSeries,
    noise: &mut RngStream,
) -> Result<RunResult> {
    let run = free_run(trained, config, plan, &test_target.values, false, noise)?;
    finish(run, test_target, plan)
}

/// Generative prediction with the readout refitted at every segment
/// boundary on that segment's states and blended into the running readout.
pub fn train_online(
    trained: &TrainedReservoir,
    config: &ReservoirConfig,
    plan: &TrainingPlan,
    test_target: &TimeSeries,
    noise: &mut RngStream,
) -> Result<RunResult> {
    plan.validate()?;
    if test_target.len() != plan.test_steps {
        return Err(Error::InvalidArgument(format!(
            "test target has {} samples, plan expects {}",
            test_target.len(),
            plan.test_steps
        )));
    }
    let run = free_run(trained, config, plan, &test_target.values, true, noise)?;
    finish(run, test_target, plan)
}

/// Builds the topology, generates the input and runs one train + test cycle
/// in the plan's mode. Divergence during teacher forcing is reported as a
/// blowup at step 0 of the test span.
pub fn run_once(
    config: &ReservoirConfig,
    plan: &TrainingPlan,
    spec: &SignalSpec,
    signal_noise: &mut RngStream,
    neuron_noise: &mut RngStream,
) -> Result<RunResult> {
    let weights = build_topology(config)?;
    run_with_weights(&weights, config, plan, spec, signal_noise, neuron_noise)
}

/// [`run_once`] on given input and reservoir weights, e.g. imported from CSV.
/// Any existing `w_out` is ignored and retrained.
pub fn run_with_weights(
    weights: &WeightSet,
    config: &ReservoirConfig,
    plan: &TrainingPlan,
    spec: &SignalSpec,
    signal_noise: &mut RngStream,
    neuron_noise: &mut RngStream,
) -> Result<RunResult> {
    plan.validate()?;
    let signal = spec.generate(plan.signal_len(), signal_noise)?;
    let target = signal.slice(plan.test_range());
    let trained = match train_offline(weights, config, plan, &signal, neuron_noise) {
        Ok(t) => t,
        Err(Error::NumericOverflow { .. }) | Err(Error::Singular) => {
            return Ok(RunResult {
                nmse: None,
                blowup: true,
                blowup_step: Some(0),
                w_out: Matrix::zeros(1, config.n),
                predicted: TimeSeries::new(Vec::new(), target.dt),
                target,
            })
        }
        Err(e) => return Err(e),
    };
    match plan.mode {
        TrainMode::Offline => predict_free_run(&trained, config, plan, &target, neuron_noise),
        TrainMode::Online => train_online(&trained, config, plan, &target, neuron_noise),
    }
}
