//! Config-driven sweeps over the model/size/noise/input grid.
//!
//! A sweep expands its config into cells `(model, N, b, input)` and runs
//! `topologies x runs_per_topology` independent simulations per cell. Every
//! random stream is derived from `base_seed` and the run coordinates (see
//! [`Seeds`]), so rows do not depend on the worker count or on which cells
//! were restored from checkpoints.
//!
//! Outputs: a CSV with one row per run in canonical order, a JSON summary
//! with per-cell aggregates next to it, and a checkpoint directory holding
//! one file per finished cell so that an interrupted sweep can resume.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, dynamic_range, memory_capacity, AggregateStats, MannKendall, McPlan};
use crate::readout::{run_once, RunResult, TrainMode, TrainingPlan};
use crate::reservoir::{
    build_topology, NeuronKind, NeuronModel, ReservoirConfig, DEFAULT_LEAK, DEFAULT_RHO,
    DEFAULT_W_IN_SCALE,
};
use crate::rng::{derive_stream, mix_seed, RngStream};
use crate::signals::SignalSpec;

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 10] = [
    "model", "N", "b", "input_id", "topology", "run", "nmse", "blowup", "wout_db", "mc_total",
];

/// Reservoir hyperparameters shared by every cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservoirParams {
    pub leak: f64,
    pub rho_target: f64,
    pub w_in_scale: f64,
    pub noise_half_width: f64,
}

impl Default for ReservoirParams {
    fn default() -> Self {
        Self {
            leak: DEFAULT_LEAK,
            rho_target: DEFAULT_RHO,
            w_in_scale: DEFAULT_W_IN_SCALE,
            noise_half_width: 1.0,
        }
    }
}

impl ReservoirParams {
    pub fn config(&self, n: usize, model: NeuronModel, topology_seed: u64) -> ReservoirConfig {
        ReservoirConfig {
            n,
            leak: self.leak,
            model,
            rho_target: self.rho_target,
            w_in_scale: self.w_in_scale,
            noise_half_width: self.noise_half_width,
            topology_seed,
            run_seed: 0,
        }
    }
}

/// An input either by preset name (`"clean"`) or spelled out with an id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputEntry {
    Preset(String),
    Custom {
        id: String,
        #[serde(flatten)]
        spec: SignalSpec,
    },
}

impl InputEntry {
    pub fn id(&self) -> &str {
        match self {
            InputEntry::Preset(name) => name,
            InputEntry::Custom { id, .. } => id,
        }
    }

    pub fn spec(&self) -> Result<SignalSpec> {
        match self {
            InputEntry::Preset(name) => SignalSpec::preset(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown input preset '{name}' (known: {})",
                    SignalSpec::PRESETS.join(", ")
                ))
            }),
            InputEntry::Custom { spec, .. } => Ok(spec.clone()),
        }
    }
}

fn default_topologies() -> usize {
    5
}

fn default_runs() -> usize {
    50
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub models: Vec<NeuronKind>,
    pub sizes: Vec<usize>,
    /// Noise amplitudes `b`. Deterministic models ignore this list and run
    /// a single `b = 0` cell.
    pub noise_levels: Vec<f64>,
    pub inputs: Vec<InputEntry>,
    #[serde(default = "default_topologies")]
    pub topologies: usize,
    #[serde(default = "default_runs")]
    pub runs_per_topology: usize,
    #[serde(default)]
    pub plan: TrainingPlan,
    #[serde(default)]
    pub reservoir: ReservoirParams,
    #[serde(default)]
    pub base_seed: u64,
    pub output_path: PathBuf,
}

/// One `(model, N, b, input)` cell of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub model: NeuronModel,
    pub n: usize,
    pub input_id: String,
    pub spec: SignalSpec,
}

impl Cell {
    fn key(&self) -> (NeuronKind, usize, u64, String) {
        (
            self.model.kind,
            self.n,
            self.model.b.to_bits(),
            self.input_id.clone(),
        )
    }

    fn file_stem(&self) -> String {
        format!(
            "{}_n{}_b{}_{}",
            self.model.kind, self.n, self.model.b, self.input_id
        )
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
    }
}

fn check_schema(version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported schema_version {version} (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

fn check_noise(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Config("noise_levels must not be empty".into()));
    }
    if let Some(b) = levels.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(Error::Config(format!(
            "noise level {b} must be finite and >= 0"
        )));
    }
    Ok(())
}

fn check_grid(sizes: &[usize], topologies: usize, runs: usize) -> Result<()> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Config(
            "sizes must be a non-empty list of positive integers".into(),
        ));
    }
    if topologies == 0 || runs == 0 {
        return Err(Error::Config(
            "topologies and runs_per_topology must be >= 1".into(),
        ));
    }
    if topologies > u32::MAX as usize || runs > u32::MAX as usize {
        return Err(Error::Config(
            "topologies and runs_per_topology must fit in 32 bits".into(),
        ));
    }
    Ok(())
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        if self.models.is_empty() {
            return Err(Error::Config("models must not be empty".into()));
        }
        check_noise(&self.noise_levels)?;
        check_grid(&self.sizes, self.topologies, self.runs_per_topology)?;
        if self.inputs.is_empty() {
            return Err(Error::Config("inputs must not be empty".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for input in &self.inputs {
            if input.id().is_empty() || !ids.insert(input.id()) {
                return Err(Error::Config(format!(
                    "input id '{}' is empty or repeated",
                    input.id()
                )));
            }
            input
                .spec()?
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        self.plan
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let probe = self
            .reservoir
            .config(1, NeuronModel::deterministic(NeuronKind::An), 0);
        probe.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Cells in canonical order.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut cells = Vec::new();
        for &kind in &self.models {
            let levels: Vec<f64> = if kind.is_stochastic() {
                self.noise_levels.clone()
            } else {
                vec![0.0]
            };
            for &n in &self.sizes {
                for &b in &levels {
                    for input in &self.inputs {
                        cells.push(Cell {
                            model: NeuronModel::new(kind, b)?,
                            n,
                            input_id: input.id().to_string(),
                            spec: input.spec()?,
                        });
                    }
                }
            }
        }
        cells.sort_by(|a, b| cmp_key(&a.key(), &b.key()));
        cells.dedup_by(|a, b| a.key() == b.key());
        Ok(cells)
    }

    pub fn summary_path(&self) -> PathBuf {
        summary_path(&self.output_path)
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        checkpoint_dir(&self.output_path)
    }

    /// Named grids at 5 topologies x 50 runs.
    ///
    /// * `size-clean`: ASN and BSN at b = 5% over N = 10..50, clean input.
    /// * `size-inputs`: the same sizes on the `small-fast`, `distorted-mild`
    ///   and `distorted-strong` inputs.
    /// * `online-noise`: online training at N = 20, AN plus ASN over
    ///   b = 1, 2, 3, 4, 5, 10, 15%.
    /// * `waveforms`: all four models at N = 20 (b = 5% for the stochastic
    ///   ones) on the clean, harmonic, sawtooth and square inputs.
    pub fn preset(name: &str) -> Option<SweepConfig> {
        let base = SweepConfig {
            schema_version: SCHEMA_VERSION,
            models: vec![NeuronKind::Asn, NeuronKind::Bsn],
            sizes: vec![10, 20, 30, 40, 50],
            noise_levels: vec![0.05],
            inputs: vec![InputEntry::Preset("clean".into())],
            topologies: default_topologies(),
            runs_per_topology: default_runs(),
            plan: TrainingPlan::default(),
            reservoir: ReservoirParams::default(),
            base_seed: 1,
            output_path: PathBuf::from(format!("{name}.csv")),
        };
        let cfg = match name {
            "size-clean" => base,
            "size-inputs" => SweepConfig {
                inputs: ["small-fast", "distorted-mild", "distorted-strong"]
                    .iter()
                    .map(|s| InputEntry::Preset(s.to_string()))
                    .collect(),
                ..base
            },
            "online-noise" => SweepConfig {
                models: vec![NeuronKind::An, NeuronKind::Asn],
                sizes: vec![20],
                noise_levels: vec![0.01, 0.02, 0.03, 0.04, 0.05, 0.10, 0.15],
                plan: TrainingPlan::online(),
                ..base
            },
            "waveforms" => SweepConfig {
                models: NeuronKind::ALL.to_vec(),
                sizes: vec![20],
                inputs: ["clean", "harmonic", "sawtooth", "square"]
                    .iter()
                    .map(|s| InputEntry::Preset(s.to_string()))
                    .collect(),
                ..base
            },
            _ => return None,
        };
        Some(cfg)
    }

    pub const PRESETS: [&'static str; 4] =
        ["size-clean", "size-inputs", "online-noise", "waveforms"];
}

fn cmp_key(
    a: &(NeuronKind, usize, u64, String),
    b: &(NeuronKind, usize, u64, String),
) -> std::cmp::Ordering {
    a.0.cmp(&b.0)
        .then(a.1.cmp(&b.1))
        .then(f64::from_bits(a.2).total_cmp(&f64::from_bits(b.2)))
        .then(a.3.cmp(&b.3))
}

pub fn summary_path(output: &Path) -> PathBuf {
    output.with_extension("summary.json")
}

pub fn checkpoint_dir(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(".cells");
    output.with_file_name(name)
}

/// Seed derivation shared by sweeps, the MC suite and single runs.
///
/// * topology: `mix_seed(base, [1, N, topology])`; every model, noise level
///   and input at the same `(N, topology)` sees the same `W_in` and `W_s`;
/// * input noise: stream `(topology, run)` under `mix_seed(base, [2])`;
/// * neuron noise: stream `(topology, run)` under `mix_seed(base, [3, N])`.
#[derive(Clone, Copy, Debug)]
pub struct Seeds {
    pub base: u64,
}

impl Seeds {
    pub fn topology(&self, n: usize, topology: usize) -> u64 {
        mix_seed(self.base, &[1, n as u64, topology as u64])
    }

    pub fn signal(&self, topology: usize, run: usize) -> RngStream {
        derive_stream(mix_seed(self.base, &[2]), topology as u64, run as u64)
    }

    pub fn neuron(&self, n: usize, topology: usize, run: usize) -> RngStream {
        derive_stream(
            mix_seed(self.base, &[3, n as u64]),
            topology as u64,
            run as u64,
        )
    }
}

/// One simulation run of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: NeuronKind,
    #[serde(rename = "N")]
    pub n: usize,
    pub b: f64,
    pub input_id: String,
    pub topology: usize,
    pub run: usize,
    pub nmse: Option<f64>,
    /// `None` marks a failed run (panic or unexpected error), as opposed to
    /// a blowup.
    pub blowup: Option<bool>,
    pub wout_db: Option<f64>,
    pub mc_total: Option<f64>,
}

impl SweepRow {
    pub fn is_failed(&self) -> bool {
        self.blowup.is_none()
    }

    fn fields(&self) -> [String; 10] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.model.to_string(),
            self.n.to_string(),
            self.b.to_string(),
            self.input_id.clone(),
            self.topology.to_string(),
            self.run.to_string(),
            opt(self.nmse),
            self.blowup.map(|b| b.to_string()).unwrap_or_default(),
            opt(self.wout_db),
            opt(self.mc_total),
        ]
    }

    fn failed(cell: &Cell, topology: usize, run: usize) -> Self {
        SweepRow {
            model: cell.model.kind,
            n: cell.n,
            b: cell.model.b,
            input_id: cell.input_id.clone(),
            topology,
            run,
            nmse: None,
            blowup: None,
            wout_db: None,
            mc_total: None,
        }
    }
}

pub fn write_rows<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_rows`]. Row numbers in errors count the
/// header as row 1.
pub fn read_rows<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(input);
    let mut records = r.records();
    let header = match records.next() {
        None => {
            return Err(Error::Parse {
                row: 1,
                msg: "empty records file".into(),
            })
        }
        Some(h) => h.map_err(|e| Error::Parse {
            row: 1,
            msg: e.to_string(),
        })?,
    };
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            row: 1,
            msg: format!("expected header '{}'", CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        rows.push(parse_row(&rec).map_err(|msg| Error::Parse { row, msg })?);
    }
    Ok(rows)
}

fn parse_row(rec: &csv::StringRecord) -> std::result::Result<SweepRow, String> {
    if rec.len() != CSV_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            CSV_HEADER.len(),
            rec.len()
        ));
    }
    fn num<T: std::str::FromStr>(s: &str, col: &str) -> std::result::Result<T, String> {
        s.parse().map_err(|_| format!("bad {col} value '{s}'"))
    }
    fn opt(s: &str, col: &str) -> std::result::Result<Option<f64>, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s, col).map(Some)
        }
    }
    let blowup = match &rec[7] {
        "" => None,
        "true" => Some(true),
        "false" => Some(false),
        other => return Err(format!("bad blowup value '{other}'")),
    };
    let row = SweepRow {
        model: rec[0]
            .parse()
            .map_err(|_| format!("unknown model '{}'", &rec[0]))?,
        n: num(&rec[1], "N")?,
        b: num(&rec[2], "b")?,
        input_id: rec[3].to_string(),
        topology: num(&rec[4], "topology")?,
        run: num(&rec[5], "run")?,
        nmse: opt(&rec[6], "nmse")?,
        blowup,
        wout_db: opt(&rec[8], "wout_db")?,
        mc_total: opt(&rec[9], "mc_total")?,
    };
    if row.blowup == Some(false) && row.nmse.is_none() && row.mc_total.is_none() {
        return Err("valid row without nmse or mc_total".into());
    }
    Ok(row)
}

/// Options that affect scheduling and resumption, never the output bytes.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
    /// Discard existing checkpoints instead of resuming from them.
    pub fresh: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<BoxStats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(BoxStats {
            count: v.len(),
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Linear interpolation between order statistics; `sorted` must be sorted.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub model: NeuronKind,
    #[serde(rename = "N")]
    pub n: usize,
    pub b: f64,
    pub input_id: String,
    pub nmse: AggregateStats,
    pub count_blowup: usize,
    pub count_failed: usize,
    pub blowup_rate: f64,
    pub wout_db: Option<BoxStats>,
    pub mc_total: Option<AggregateStats>,
}

impl CellSummary {
    pub fn from_rows(rows: &[SweepRow], bins: usize) -> Option<CellSummary> {
        let first = rows.first()?;
        let count_blowup = rows.iter().filter(|r| r.blowup == Some(true)).count();
        let count_failed = rows.iter().filter(|r| r.is_failed()).count();
        let dbs: Vec<f64> = rows.iter().filter_map(|r| r.wout_db).collect();
        let has_mc = rows.iter().any(|r| r.mc_total.is_some());
        Some(CellSummary {
            model: first.model,
            n: first.n,
            b: first.b,
            input_id: first.input_id.clone(),
            nmse: AggregateStats::from_values(rows.iter().map(|r| r.nmse), bins),
            count_blowup,
            count_failed,
            blowup_rate: count_blowup as f64 / rows.len() as f64,
            wout_db: BoxStats::from_values(&dbs),
            mc_total: has_mc
                .then(|| AggregateStats::from_values(rows.iter().map(|r| r.mc_total), bins)),
        })
    }
}

/// Splits canonically ordered rows into per-cell groups.
pub fn group_cells(rows: &[SweepRow]) -> Vec<&[SweepRow]> {
    rows.chunk_by(|a, b| a.model == b.model && a.n == b.n && a.b == b.b && a.input_id == b.input_id)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub rows: usize,
    pub cells: Vec<CellSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

impl SweepRecord {
    fn from_rows(rows: Vec<SweepRow>) -> Self {
        let cells = group_cells(&rows)
            .into_iter()
            .filter_map(|c| CellSummary::from_rows(c, metrics::DEFAULT_BINS))
            .collect();
        let summary = SweepSummary {
            schema_version: SCHEMA_VERSION,
            rows: rows.len(),
            cells,
        };
        SweepRecord { rows, summary }
    }

    pub fn cell(&self, kind: NeuronKind, n: usize, b: f64, input_id: &str) -> Option<&CellSummary> {
        self.summary
            .cells
            .iter()
            .find(|c| c.model == kind && c.n == n && c.b == b && c.input_id == input_id)
    }
}

fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| {
        a.model
            .cmp(&b.model)
            .then(a.n.cmp(&b.n))
            .then(a.b.total_cmp(&b.b))
            .then(a.input_id.cmp(&b.input_id))
            .then(a.topology.cmp(&b.topology))
            .then(a.run.cmp(&b.run))
    });
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Config("jobs must be >= 1".into())),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {j} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs `job` once per `(topology, run)` of a cell, turning panics and
/// unexpected errors into failed rows.
fn run_cell<F>(cell: &Cell, topologies: usize, runs: usize, job: F) -> Vec<SweepRow>
where
    F: Fn(usize, usize) -> Result<SweepRow> + Sync,
{
    let grid: Vec<(usize, usize)> = (0..topologies)
        .flat_map(|t| (0..runs).map(move |r| (t, r)))
        .collect();
    grid.par_iter()
        .map(
            |&(t, r)| match catch_unwind(AssertUnwindSafe(|| job(t, r))) {
                Ok(Ok(row)) => row,
                Ok(Err(e)) => {
                    log::error!("{} topology {t} run {r}: {e}", cell.file_stem());
                    SweepRow::failed(cell, t, r)
                }
                Err(_) => {
                    log::error!("{} topology {t} run {r}: panicked", cell.file_stem());
                    SweepRow::failed(cell, t, r)
                }
            },
        )
        .collect()
}

/// Per-cell checkpoint files under `<output>.cells/`. The directory also
/// stores the config that produced it; resuming under a different config
/// is refused.
struct Checkpoints {
    dir: PathBuf,
}

impl Checkpoints {
    fn open(dir: PathBuf, fingerprint: &str, fresh: bool) -> Result<Self> {
        if fresh && dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        let stamp = dir.join("config.json");
        match fs::read_to_string(&stamp) {
            Ok(existing) if existing != fingerprint => {
                return Err(Error::Config(format!(
                    "checkpoints in {} belong to a different config; remove them or run fresh",
                    dir.display()
                )))
            }
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                atomic_write(&stamp, fingerprint.as_bytes())?
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Checkpoints { dir })
    }

    fn path(&self, cell: &Cell) -> PathBuf {
        self.dir.join(format!("{}.csv", cell.file_stem()))
    }

    /// Rows of a finished cell, or `None` if it has to be (re)computed.
    fn load(&self, cell: &Cell, expected: usize) -> Option<Vec<SweepRow>> {
        let file = fs::File::open(self.path(cell)).ok()?;
        let rows = read_rows(file).ok()?;
        let matches = rows.len() == expected
            && rows.iter().all(|r| {
                r.model == cell.model.kind
                    && r.n == cell.n
                    && r.b == cell.model.b
                    && r.input_id == cell.input_id
            });
        matches.then_some(rows)
    }

    fn store(&self, cell: &Cell, rows: &[SweepRow]) -> Result<()> {
        let mut buf = Vec::new();
        write_rows(&mut buf, rows)?;
        atomic_write(&self.path(cell), &buf)
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Fails early, before any compute, when the output cannot be written.
fn prepare_output(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    Ok(())
}

fn finish(output: &Path, rows: Vec<SweepRow>) -> Result<SweepRecord> {
    let record = SweepRecord::from_rows(rows);
    let mut buf = Vec::new();
    write_rows(&mut buf, &record.rows)?;
    atomic_write(output, &buf)?;
    let json = serde_json::to_vec_pretty(&record.summary)?;
    atomic_write(&summary_path(output), &json)?;
    Ok(record)
}

fn execute_cells<F>(
    cells: &[Cell],
    per_cell: usize,
    ckpt: &Checkpoints,
    opts: &RunOptions,
    compute: F,
) -> Result<Vec<SweepRow>>
where
    F: Fn(&Cell) -> Vec<SweepRow> + Sync,
{
    let done: Vec<Option<Vec<SweepRow>>> = cells.iter().map(|c| ckpt.load(c, per_cell)).collect();
    let restored = done.iter().filter(|d| d.is_some()).count();
    if restored > 0 {
        log::info!(
            "resuming: {restored} of {} cells restored from checkpoints",
            cells.len()
        );
    }
    let results: Vec<Result<Vec<SweepRow>>> = with_pool(opts.jobs, || {
        cells
            .par_iter()
            .zip(done.into_par_iter())
            .map(|(cell, prev)| match prev {
                Some(rows) => Ok(rows),
                None => {
                    let mut rows = compute(cell);
                    sort_rows(&mut rows);
                    ckpt.store(cell, &rows)?;
                    log::info!("finished cell {}", cell.file_stem());
                    Ok(rows)
                }
            })
            .collect()
    })?;
    let mut rows = Vec::with_capacity(cells.len() * per_cell);
    for r in results {
        rows.extend(r?);
    }
    sort_rows(&mut rows);
    Ok(rows)
}

/// Single run of one grid coordinate, as performed inside a sweep.
pub fn simulate(
    params: &ReservoirParams,
    plan: &TrainingPlan,
    seeds: Seeds,
    model: NeuronModel,
    n: usize,
    spec: &SignalSpec,
    topology: usize,
    run: usize,
) -> Result<RunResult> {
    let cfg = params.config(n, model, seeds.topology(n, topology));
    run_once(
        &cfg,
        plan,
        spec,
        &mut seeds.signal(topology, run),
        &mut seeds.neuron(n, topology, run),
    )
}

pub fn run_sweep(config: &SweepConfig, opts: &RunOptions) -> Result<SweepRecord> {
    config.validate()?;
    prepare_output(&config.output_path)?;
    let cells = config.cells()?;
    let fingerprint = serde_json::to_string_pretty(config)?;
    let ckpt = Checkpoints::open(config.checkpoint_dir(), &fingerprint, opts.fresh)?;
    let seeds = Seeds {
        base: config.base_seed,
    };
    let per_cell = config.topologies * config.runs_per_topology;
    let rows = execute_cells(&cells, per_cell, &ckpt, opts, |cell| {
        run_cell(cell, config.topologies, config.runs_per_topology, |t, r| {
            let res = simulate(
                &config.reservoir,
                &config.plan,
                seeds,
                cell.model,
                cell.n,
                &cell.spec,
                t,
                r,
            )?;
            let wout_db = if res.blowup {
                None
            } else {
                dynamic_range(&res.w_out).ok().map(|d| d.db)
            };
            Ok(SweepRow {
                model: cell.model.kind,
                n: cell.n,
                b: cell.model.b,
                input_id: cell.input_id.clone(),
                topology: t,
                run: r,
                nmse: res.nmse,
                blowup: Some(res.blowup),
                wout_db,
                mc_total: None,
            })
        })
    })?;
    finish(&config.output_path, rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Analog,
    Binary,
}

impl Family {
    /// Deterministic kind at `b = 0`, stochastic kind otherwise.
    pub fn kind(self, b: f64) -> NeuronKind {
        match (self, b > 0.0) {
            (Family::Analog, false) => NeuronKind::An,
            (Family::Analog, true) => NeuronKind::Asn,
            (Family::Binary, false) => NeuronKind::Bn,
            (Family::Binary, true) => NeuronKind::Bsn,
        }
    }
}

fn default_families() -> Vec<Family> {
    vec![Family::Analog, Family::Binary]
}

fn default_mc_sizes() -> Vec<usize> {
    vec![40, 50]
}

fn default_mc_noise() -> Vec<f64> {
    vec![0.0, 0.05]
}

fn default_mc_input() -> InputEntry {
    InputEntry::Preset("distorted".into())
}

fn default_mc_reservoir() -> ReservoirParams {
    ReservoirParams {
        w_in_scale: MC_W_IN_SCALE,
        ..ReservoirParams::default()
    }
}

fn default_k_max() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSuiteConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default = "default_families")]
    pub families: Vec<Family>,
    #[serde(default = "default_mc_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_mc_noise")]
    pub noise_levels: Vec<f64>,
    #[serde(default = "default_mc_input")]
    pub input: InputEntry,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_topologies")]
    pub topologies: usize,
    #[serde(default = "default_runs")]
    pub runs_per_topology: usize,
    #[serde(default)]
    pub plan: McPlan,
    #[serde(default = "default_mc_reservoir")]
    pub reservoir: ReservoirParams,
    #[serde(default)]
    pub base_seed: u64,
    pub output_path: PathBuf,
}

/// Input scaling of the memory-capacity grid. The noisy distorted input
/// saturates binary neurons at the prediction-task scaling; at 0.25 binary
/// MC at N = 50 sits near 3.4.
pub const MC_W_IN_SCALE: f64 = 0.25;

impl McSuiteConfig {
    /// The memory-capacity grid: {analog, binary} x {40, 50} x {0, 5%}.
    pub fn memory_grid(output_path: PathBuf) -> Self {
        McSuiteConfig {
            schema_version: SCHEMA_VERSION,
            families: default_families(),
            sizes: default_mc_sizes(),
            noise_levels: default_mc_noise(),
            input: default_mc_input(),
            k_max: default_k_max(),
            topologies: default_topologies(),
            runs_per_topology: default_runs(),
            plan: McPlan::default(),
            reservoir: default_mc_reservoir(),
            base_seed: 1,
            output_path,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: McSuiteConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        if self.families.is_empty() {
            return Err(Error::Config("families must not be empty".into()));
        }
        check_noise(&self.noise_levels)?;
        check_grid(&self.sizes, self.topologies, self.runs_per_topology)?;
        if self.k_max == 0 || self.plan.washout < self.k_max {
            return Err(Error::Config(format!(
                "k_max must be >= 1 and no longer than the washout ({})",
                self.plan.washout
            )));
        }
        if self.plan.train == 0 || self.plan.eval < 2 || !(self.plan.ridge_lambda >= 0.0) {
            return Err(Error::Config(
                "MC plan needs train >= 1, eval >= 2, lambda >= 0".into(),
            ));
        }
        self.input
            .spec()?
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let probe = self
            .reservoir
            .config(1, NeuronModel::deterministic(NeuronKind::An), 0);
        probe.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn cells(&self) -> Result<Vec<Cell>> {
        let spec = self.input.spec()?;
        let mut cells = Vec::new();
        for &family in &self.families {
            for &n in &self.sizes {
                for &b in &self.noise_levels {
                    cells.push(Cell {
                        model: NeuronModel::new(family.kind(b), b)?,
                        n,
                        input_id: self.input.id().to_string(),
                        spec: spec.clone(),
                    });
                }
            }
        }
        cells.sort_by(|a, b| cmp_key(&a.key(), &b.key()));
        cells.dedup_by(|a, b| a.key() == b.key());
        Ok(cells)
    }
}

/// Per-delay mean scores for one MC cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McCurve {
    pub model: NeuronKind,
    #[serde(rename = "N")]
    pub n: usize,
    pub b: f64,
    /// Mean `score_k` over all runs, `k = 1..=k_max`.
    pub per_delay: Vec<f64>,
}

/// Linear memory capacity per cell. Rows carry `mc_total`; the summary JSON
/// additionally holds the mean per-delay curve of every cell.
pub fn run_mc_suite(
    config: &McSuiteConfig,
    opts: &RunOptions,
) -> Result<(SweepRecord, Vec<McCurve>)> {
    config.validate()?;
    prepare_output(&config.output_path)?;
    let cells = config.cells()?;
    let fingerprint = serde_json::to_string_pretty(config)?;
    let ckpt = Checkpoints::open(
        checkpoint_dir(&config.output_path),
        &fingerprint,
        opts.fresh,
    )?;
    let seeds = Seeds {
        base: config.base_seed,
    };
    let per_cell = config.topologies * config.runs_per_topology;
    let mc_run = |cell: &Cell, t: usize, r: usize| -> Result<crate::metrics::McResult> {
        let cfg = config
            .reservoir
            .config(cell.n, cell.model, seeds.topology(cell.n, t));
        let weights = build_topology(&cfg)?;
        let input = cell
            .spec
            .generate(config.plan.input_len(), &mut seeds.signal(t, r))?;
        memory_capacity(
            &cfg,
            &weights,
            &config.plan,
            &input,
            config.k_max,
            &mut seeds.neuron(cell.n, t, r),
        )
    };
    let rows = execute_cells(&cells, per_cell, &ckpt, opts, |cell| {
        run_cell(cell, config.topologies, config.runs_per_topology, |t, r| {
            let mc = mc_run(cell, t, r)?;
            Ok(SweepRow {
                model: cell.model.kind,
                n: cell.n,
                b: cell.model.b,
                input_id: cell.input_id.clone(),
                topology: t,
                run: r,
                nmse: None,
                blowup: Some(false),
                wout_db: None,
                mc_total: Some(mc.total),
            })
        })
    })?;
    // Per-delay curves are cheap to recompute for one representative run per
    // topology; totals in the rows stay the reference numbers.
    let curves: Vec<McCurve> = with_pool(opts.jobs, || {
        cells
            .par_iter()
            .map(|cell| {
                let mut sum = vec![0.0; config.k_max];
                let mut count = 0usize;
                for t in 0..config.topologies {
                    if let Ok(mc) = mc_run(cell, t, 0) {
                        for (acc, (_, s)) in sum.iter_mut().zip(&mc.per_delay) {
                            *acc += s;
                        }
                        count += 1;
                    }
                }
                McCurve {
                    model: cell.model.kind,
                    n: cell.n,
                    b: cell.model.b,
                    per_delay: sum.iter().map(|s| s / count.max(1) as f64).collect(),
                }
            })
            .collect()
    })?;
    let record = finish(&config.output_path, rows)?;
    #[derive(Serialize)]
    struct McSummary<'a> {
        #[serde(flatten)]
        summary: &'a SweepSummary,
        per_delay: &'a [McCurve],
    }
    let json = serde_json::to_vec_pretty(&McSummary {
        summary: &record.summary,
        per_delay: &curves,
    })?;
    atomic_write(&summary_path(&config.output_path), &json)?;
    Ok((record, curves))
}

/// Blowup rate of one `(model, N, input)` series over increasing `b`, with
/// its Mann-Kendall trend statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupSeries {
    pub model: NeuronKind,
    #[serde(rename = "N")]
    pub n: usize,
    pub input_id: String,
    pub b: Vec<f64>,
    pub blowup_rate: Vec<f64>,
    pub trend: Option<MannKendall>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: usize,
    pub count_valid: usize,
    pub count_blowup: usize,
    pub count_failed: usize,
    pub cells: Vec<CellSummary>,
    pub blowup_series: Vec<BlowupSeries>,
    /// Files written, relative to the report directory.
    pub files: Vec<String>,
}

fn blowup_series(cells: &[CellSummary]) -> Vec<BlowupSeries> {
    let mut groups: BTreeMap<(NeuronKind, usize, String), Vec<(f64, f64)>> = BTreeMap::new();
    for c in cells {
        groups
            .entry((c.model, c.n, c.input_id.clone()))
            .or_default()
            .push((c.b, c.blowup_rate));
    }
    groups
        .into_iter()
        .map(|((model, n, input_id), pts)| {
            let rates: Vec<f64> = pts.iter().map(|p| p.1).collect();
            BlowupSeries {
                model,
                n,
                input_id,
                b: pts.iter().map(|p| p.0).collect(),
                trend: (rates.len() >= 3).then(|| MannKendall::test(&rates)),
                blowup_rate: rates,
            }
        })
        .collect()
}

fn csv_file<F>(path: &Path, header: &[&str], fill: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    fill(&mut w)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    atomic_write(path, &bytes)
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Reads a sweep or MC CSV and writes summary tables and plot data into
/// `out_dir`:
///
/// * `summary.csv`: per-cell mean/std/valid fraction of NMSE and counts;
/// * `histograms.csv`: NMSE frequency per cell and bin;
/// * `dynamic_range.csv`: box-plot statistics of `wout_db` per cell;
/// * `blowup.csv`: blowup rate per cell, plus `blowup_trend.csv` with the
///   Mann-Kendall statistic of each series over `b`;
/// * `mc.csv`: mean/std of `mc_total` per cell, when present;
/// * `report.json`: everything above in one document.
pub fn report(records_path: &Path, out_dir: &Path, bins: usize) -> Result<Report> {
    let file = fs::File::open(records_path)?;
    let mut rows = read_rows(std::io::BufReader::new(file))?;
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 2,
            msg: "records file has a header but no rows".into(),
        });
    }
    sort_rows(&mut rows);
    fs::create_dir_all(out_dir)?;
    let cells: Vec<CellSummary> = group_cells(&rows)
        .into_iter()
        .filter_map(|c| CellSummary::from_rows(c, bins))
        .collect();
    let series = blowup_series(&cells);
    let mut files = Vec::new();
    let coords = |c: &CellSummary| {
        vec![
            c.model.to_string(),
            c.n.to_string(),
            c.b.to_string(),
            c.input_id.clone(),
        ]
    };

    csv_file(
        &out_dir.join("summary.csv"),
        &[
            "model",
            "N",
            "b",
            "input_id",
            "count_total",
            "count_valid",
            "count_blowup",
            "count_failed",
            "valid_fraction",
            "mean",
            "std",
        ],
        |w| {
            for c in &cells {
                let mut rec = coords(c);
                rec.extend([
                    c.nmse.count_total.to_string(),
                    c.nmse.count_valid.to_string(),
                    c.count_blowup.to_string(),
                    c.count_failed.to_string(),
                    c.nmse.valid_fraction().to_string(),
                    opt_str(c.nmse.mean),
                    opt_str(c.nmse.std),
                ]);
                w.write_record(rec)?;
            }
            Ok(())
        },
    )?;
    files.push("summary.csv".to_string());

    csv_file(
        &out_dir.join("histograms.csv"),
        &["model", "N", "b", "input_id", "bin_lo", "bin_hi", "count"],
        |w| {
            for c in &cells {
                if let Some(h) = &c.nmse.histogram {
                    for (i, count) in h.counts.iter().enumerate() {
                        let mut rec = coords(c);
                        rec.extend([
                            h.edges[i].to_string(),
                            h.edges[i + 1].to_string(),
                            count.to_string(),
                        ]);
                        w.write_record(rec)?;
                    }
                }
            }
            Ok(())
        },
    )?;
    files.push("histograms.csv".to_string());

    csv_file(
        &out_dir.join("dynamic_range.csv"),
        &[
            "model", "N", "b", "input_id", "count", "min", "q1", "median", "q3", "max",
        ],
        |w| {
            for c in &cells {
                if let Some(d) = &c.wout_db {
                    let mut rec = coords(c);
                    rec.push(d.count.to_string());
                    rec.extend(
                        [d.min, d.q1, d.median, d.q3, d.max]
                            .iter()
                            .map(|v| v.to_string()),
                    );
                    w.write_record(rec)?;
                }
            }
            Ok(())
        },
    )?;
    files.push("dynamic_range.csv".to_string());

    csv_file(
        &out_dir.join("blowup.csv"),
        &[
            "model",
            "N",
            "b",
            "input_id",
            "count_total",
            "count_blowup",
            "blowup_rate",
        ],
        |w| {
            for c in &cells {
                let mut rec = coords(c);
                rec.extend([
                    c.nmse.count_total.to_string(),
                    c.count_blowup.to_string(),
                    c.blowup_rate.to_string(),
                ]);
                w.write_record(rec)?;
            }
            Ok(())
        },
    )?;
    files.push("blowup.csv".to_string());

    csv_file(
        &out_dir.join("blowup_trend.csv"),
        &[
            "model",
            "N",
            "input_id",
            "levels",
            "s",
            "var_s",
            "z",
            "p_increasing",
            "p_decreasing",
        ],
        |w| {
            for s in &series {
                if let Some(mk) = &s.trend {
                    w.write_record([
                        s.model.to_string(),
                        s.n.to_string(),
                        s.input_id.clone(),
                        s.b.len().to_string(),
                        mk.s.to_string(),
                        mk.var_s.to_string(),
                        mk.z.to_string(),
                        mk.p_increasing().to_string(),
                        mk.p_decreasing().to_string(),
                    ])?;
                }
            }
            Ok(())
        },
    )?;
    files.push("blowup_trend.csv".to_string());

    if cells.iter().any(|c| c.mc_total.is_some()) {
        csv_file(
            &out_dir.join("mc.csv"),
            &["model", "N", "b", "input_id", "count_valid", "mean", "std"],
            |w| {
                for c in &cells {
                    if let Some(mc) = &c.mc_total {
                        let mut rec = coords(c);
                        rec.extend([
                            mc.count_valid.to_string(),
                            opt_str(mc.mean),
                            opt_str(mc.std),
                        ]);
                        w.write_record(rec)?;
                    }
                }
                Ok(())
            },
        )?;
        files.push("mc.csv".to_string());
    }

    files.push("report.json".to_string());
    let count_failed = rows.iter().filter(|r| r.is_failed()).count();
    let count_blowup = rows.iter().filter(|r| r.blowup == Some(true)).count();
    let report = Report {
        rows: rows.len(),
        count_valid: rows.len() - count_failed - count_blowup,
        count_blowup,
        count_failed,
        cells,
        blowup_series: series,
        files,
    };
    atomic_write(
        &out_dir.join("report.json"),
        &serde_json::to_vec_pretty(&report)?,
    )?;
    Ok(report)
}

/// Plan used by the single-run probe and the presets for a given mode.
pub fn plan_for(mode: TrainMode) -> TrainingPlan {
    match mode {
        TrainMode::Offline => TrainingPlan::default(),
        TrainMode::Online => TrainingPlan::online(),
    }
}
