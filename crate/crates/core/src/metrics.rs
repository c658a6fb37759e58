//! Prediction error, memory capacity, weight dynamic range and sweep statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, ridge_solve, Matrix};
use crate::reservoir::{Reservoir, ReservoirConfig, ReservoirState, WeightSet};
use crate::rng::RngStream;
use crate::signals::TimeSeries;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmseConvention {
    /// `Σ (y_tar - y_pre)^2 / (N_T (max - min))`
    #[default]
    Range,
    /// Same, divided by the squared target range.
    SquaredRange,
}

pub fn nmse(y_tar: &[f64], y_pre: &[f64]) -> Result<f64> {
    nmse_with(y_tar, y_pre, NmseConvention::Range)
}

pub fn nmse_with(y_tar: &[f64], y_pre: &[f64], convention: NmseConvention) -> Result<f64> {
    if y_tar.len() != y_pre.len() {
        return Err(Error::InvalidArgument(format!(
            "target has {} samples, prediction {}",
            y_tar.len(),
            y_pre.len()
        )));
    }
    if y_tar.len() < 2 {
        return Err(Error::InvalidArgument(
            "NMSE needs at least 2 samples".into(),
        ));
    }
    let (lo, hi) = y_tar
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::UndefinedMetric("target range is zero".into()));
    }
    let sse: f64 = y_tar
        .iter()
        .zip(y_pre)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    let denom = match convention {
        NmseConvention::Range => range,
        NmseConvention::SquaredRange => range * range,
    };
    Ok(sse / (y_tar.len() as f64 * denom))
}

/// `cov^2(a, b) / (var(a) var(b))`, or 0 when either side has no variance.
pub fn squared_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return 0.0;
    }
    let r2 = sab * sab / (saa * sbb);
    if r2.is_finite() {
        r2.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McPlan {
    pub washout: usize,
    pub train: usize,
    pub eval: usize,
    pub ridge_lambda: f64,
}

impl Default for McPlan {
    fn default() -> Self {
        Self {
            washout: 200,
            train: 2000,
            eval: 1000,
            ridge_lambda: 1e-8,
        }
    }
}

impl McPlan {
    pub fn input_len(&self) -> usize {
        self.washout + self.train + self.eval
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    /// `(k, score_k)` for `k = 1..=k_max`.
    pub per_delay: Vec<(usize, f64)>,
    pub total: f64,
}

/// Linear memory capacity under teacher forcing.
///
/// The reservoir is driven by `input` from a zero state. States after the
/// washout are split into a training span, where one readout row per delay
/// `k` is fitted jointly by ridge regression on `u(t - k)`, and an evaluation
/// span where each row is scored by its squared correlation with the delayed
/// input.
pub fn memory_capacity(
    config: &ReservoirConfig,
    weights: &WeightSet,
    plan: &McPlan,
    input: &TimeSeries,
    k_max: usize,
    noise: &mut RngStream,
) -> Result<McResult> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be >= 1".into()));
    }
    if plan.washout < k_max {
        return Err(Error::InvalidArgument(format!(
            "washout ({}) must cover the longest delay ({k_max})",
            plan.washout
        )));
    }
    if plan.train == 0 || plan.eval < 2 {
        return Err(Error::InvalidArgument(
            "train and eval spans must be non-empty".into(),
        ));
    }
    let needed = plan.input_len();
    if input.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "input has {} samples, MC needs {needed}",
            input.len()
        )));
    }
    let n = config.n;
    let u = &input.values;
    let mut reservoir = Reservoir::new(weights, config)?;
    let mut state = ReservoirState::zeros(n);
    let mut x_train = Matrix::zeros(plan.train, n);
    let mut y_train = Matrix::zeros(plan.train, k_max);
    let mut x_eval = Matrix::zeros(plan.eval, n);
    for t in 0..needed {
        reservoir.step(&mut state, u[t], noise)?;
        if t < plan.washout {
            continue;
        }
        let i = t - plan.washout;
        if i < plan.train {
            x_train.row_mut(i).copy_from_slice(&state.x);
            for k in 1..=k_max {
                y_train[(i, k - 1)] = u[t - k];
            }
        } else {
            x_eval.row_mut(i - plan.train).copy_from_slice(&state.x);
        }
    }

    let w = ridge_solve(&x_train, &y_train, plan.ridge_lambda)?;
    let eval_start = plan.washout + plan.train;
    let mut per_delay = Vec::with_capacity(k_max);
    let mut y_k = vec![0.0; plan.eval];
    for k in 1..=k_max {
        let row = w.row(k - 1);
        for (i, y) in y_k.iter_mut().enumerate() {
            *y = dot(row, x_eval.row(i));
        }
        let target = &u[eval_start - k..eval_start - k + plan.eval];
        per_delay.push((k, squared_correlation(target, &y_k)));
    }
    let total = per_delay.iter().map(|(_, s)| s).sum();
    Ok(McResult { per_delay, total })
}

pub const ZERO_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicRange {
    /// `max|w| / min{|w| : |w| > floor}`
    pub ratio: f64,
    /// `10 log10(ratio)`
    pub db: f64,
    /// `20 log10(ratio)`, for the amplitude convention.
    pub db20: f64,
}

pub fn dynamic_range(w_out: &Matrix) -> Result<DynamicRange> {
    let mut max = 0.0f64;
    let mut min = f64::INFINITY;
    for &w in w_out.as_slice() {
        let m = w.abs();
        if !m.is_finite() {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        if m > ZERO_FLOOR {
            max = max.max(m);
            min = min.min(m);
        }
    }
    if !min.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let ratio = max / min;
    Ok(DynamicRange {
        ratio,
        db: 10.0 * ratio.log10(),
        db20: 20.0 * ratio.log10(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Uniform bins spanning `[min, max]` of `values`; the last bin is closed.
    pub fn uniform(values: &[f64], bins: usize) -> Option<Histogram> {
        if values.is_empty() || bins == 0 {
            return None;
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Some(Histogram { edges, counts })
    }
}

pub const DEFAULT_BINS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub count_valid: usize,
    pub count_total: usize,
    pub histogram: Option<Histogram>,
}

impl AggregateStats {
    /// Statistics over the `Some` entries; `None` marks an invalid run.
    pub fn from_values<I>(values: I, bins: usize) -> AggregateStats
    where
        I: IntoIterator<Item = Option<f64>>,
    {
        let mut valid = Vec::new();
        let mut total = 0;
        for v in values {
            total += 1;
            if let Some(v) = v {
                valid.push(v);
            }
        }
        let (mean, std) = mean_std(&valid).map_or((None, None), |(m, s)| (Some(m), Some(s)));
        AggregateStats {
            mean,
            std,
            count_valid: valid.len(),
            count_total: total,
            histogram: Histogram::uniform(&valid, bins),
        }
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.count_total == 0 {
            0.0
        } else {
            self.count_valid as f64 / self.count_total as f64
        }
    }
}

pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    // sort for an order-independent floating-point sum
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

pub fn aggregate(results: &[crate::readout::RunResult]) -> Result<AggregateStats> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no results to aggregate".into()));
    }
    Ok(AggregateStats::from_values(
        results.iter().map(|r| r.nmse),
        DEFAULT_BINS,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannKendall {
    pub s: i64,
    pub var_s: f64,
    pub z: f64,
}

impl MannKendall {
    pub fn test(series: &[f64]) -> MannKendall {
        let n = series.len();
        let mut s = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                s += match series[j].partial_cmp(&series[i]) {
                    Some(std::cmp::Ordering::Greater) => 1,
                    Some(std::cmp::Ordering::Less) => -1,
                    _ => 0,
                };
            }
        }
        let mut sorted = series.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut tie_term = 0.0;
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * (t - 1.0) * (2.0 * t + 5.0);
            i = j + 1;
        }
        let nf = n as f64;
        let var_s = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_term) / 18.0;
        let z = if var_s <= 0.0 {
            0.0
        } else if s > 0 {
            (s as f64 - 1.0) / var_s.sqrt()
        } else if s < 0 {
            (s as f64 + 1.0) / var_s.sqrt()
        } else {
            0.0
        };
        MannKendall { s, var_s, z }
    }

    /// One-sided p-value for an increasing trend.
    pub fn p_increasing(&self) -> f64 {
        1.0 - normal_cdf(self.z)
    }

    /// One-sided p-value for a decreasing trend.
    pub fn p_decreasing(&self) -> f64 {
        normal_cdf(self.z)
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}
