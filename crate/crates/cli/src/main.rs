//! `reservoir-bench`: signals, single runs, sweeps, memory capacity and
//! reports from the command line.
//!
//! stdout carries only the JSON (or CSV) payload; logs and errors go to
//! stderr. Exit codes: 0 success, 1 usage or config error, 2 I/O or parse
//! error, 3 internal error.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reservoir_core::experiments::{
    self, Family, InputEntry, McSuiteConfig, ReservoirParams, Seeds,
};
use reservoir_core::{
    run_with_weights, Error, NeuronKind, NeuronModel, RunOptions, SignalKind, SignalSpec,
    SweepConfig, TrainMode, WeightSet,
};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "reservoir-bench",
    version,
    about = "Echo-state network benchmarks for analog/binary, deterministic/stochastic neurons"
)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an input signal as CSV (`t,u`).
    GenSignal(GenSignalArgs),
    /// One train + test cycle, printed as a JSON record.
    Run(RunArgs),
    /// Run a sweep grid from a JSON config or a named preset.
    Sweep(SweepArgs),
    /// Linear memory capacity over the {analog, binary} x N x b grid.
    Mc(McArgs),
    /// Summary tables and plot data from a sweep or MC CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct SignalArgs {
    /// Named input: clean, distorted, harmonic, sawtooth, square, small-fast, distorted-mild, distorted-strong.
    #[arg(long, default_value = "clean")]
    input: String,
    /// Override the waveform kind (clean_sinusoid, distorted_sinusoid, harmonic_sum, sawtooth, square).
    #[arg(long)]
    kind: Option<String>,
    /// Override amplitude A.
    #[arg(long)]
    amp_a: Option<f64>,
    /// Override amplitude B.
    #[arg(long)]
    amp_b: Option<f64>,
    /// Override noise amplitude C.
    #[arg(long)]
    amp_c: Option<f64>,
    /// Override frequency f1.
    #[arg(long)]
    f1: Option<f64>,
    /// Override frequency f2.
    #[arg(long)]
    f2: Option<f64>,
}

impl SignalArgs {
    fn spec(&self) -> Result<SignalSpec, Error> {
        let mut spec = SignalSpec::preset(&self.input).ok_or_else(|| {
            Error::Config(format!(
                "unknown input '{}' (known: {})",
                self.input,
                SignalSpec::PRESETS.join(", ")
            ))
        })?;
        if let Some(k) = &self.kind {
            spec.kind = serde_json::from_value::<SignalKind>(json!(k))
                .map_err(|_| Error::Config(format!("unknown signal kind '{k}'")))?;
        }
        if let Some(v) = self.amp_a {
            spec.a = v;
        }
        if let Some(v) = self.amp_b {
            spec.b = v;
        }
        if let Some(v) = self.amp_c {
            spec.c = v;
        }
        if let Some(v) = self.f1 {
            spec.f1 = v;
        }
        if let Some(v) = self.f2 {
            spec.f2 = v;
        }
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Args)]
struct GenSignalArgs {
    #[command(flatten)]
    signal: SignalArgs,
    /// Number of samples.
    #[arg(long, default_value_t = 1000)]
    length: usize,
    /// Seed for the additive input noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write to a file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReservoirArgs {
    /// Leaking rate a in (0, 1].
    #[arg(long)]
    leak: Option<f64>,
    /// Spectral radius target for W_s.
    #[arg(long)]
    rho: Option<f64>,
    /// Input weight scale.
    #[arg(long)]
    w_in_scale: Option<f64>,
    /// Half-width h of the U[-h, h) neuron noise.
    #[arg(long)]
    noise_half_width: Option<f64>,
}

impl ReservoirArgs {
    fn params(&self) -> ReservoirParams {
        let mut p = ReservoirParams::default();
        if let Some(v) = self.leak {
            p.leak = v;
        }
        if let Some(v) = self.rho {
            p.rho_target = v;
        }
        if let Some(v) = self.w_in_scale {
            p.w_in_scale = v;
        }
        if let Some(v) = self.noise_half_width {
            p.noise_half_width = v;
        }
        p
    }
}

#[derive(Args)]
struct RunArgs {
    /// Neuron model: an, asn, bn, bsn.
    #[arg(long, default_value = "asn")]
    model: String,
    /// Reservoir size N.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Noise amplitude b (must be 0 for an and bn).
    #[arg(long)]
    b: Option<f64>,
    /// Readout training: offline or online.
    #[arg(long, default_value = "offline")]
    mode: String,
    /// Base seed; the same seed and coordinates reproduce a sweep row.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Topology index under the seed.
    #[arg(long, default_value_t = 0)]
    topology: usize,
    /// Run index under the seed.
    #[arg(long, default_value_t = 0)]
    run: usize,
    #[command(flatten)]
    signal: SignalArgs,
    #[command(flatten)]
    reservoir: ReservoirArgs,
    /// Washout steps.
    #[arg(long)]
    washout: Option<usize>,
    /// Teacher-forced training steps.
    #[arg(long)]
    train: Option<usize>,
    /// Free-running test steps.
    #[arg(long)]
    test: Option<usize>,
    /// Ridge regularization.
    #[arg(long)]
    lambda: Option<f64>,
    /// Write `step,target,predicted` for the test span to this CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Save W_in, W_s and the learned W_out as CSV files in this directory.
    #[arg(long)]
    save_weights: Option<PathBuf>,
    /// Use W_in and W_s from CSV files in this directory instead of generating them.
    #[arg(long)]
    load_weights: Option<PathBuf>,
}

#[derive(Args)]
struct JobArgs {
    /// Worker threads.
    #[arg(long, env = "RESERVOIR_BENCH_JOBS")]
    jobs: Option<usize>,
    /// Ignore existing per-cell checkpoints and recompute everything.
    #[arg(long)]
    fresh: bool,
}

impl JobArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            jobs: self.jobs,
            fresh: self.fresh,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep config.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in grid: size-clean, size-inputs, online-noise, waveforms.
    #[arg(long)]
    preset: Option<String>,
    /// Override the config's output CSV path.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override runs per topology.
    #[arg(long)]
    runs: Option<usize>,
    #[command(flatten)]
    jobs: JobArgs,
}

#[derive(Args)]
struct McArgs {
    /// JSON MC suite config; defaults to the {analog, binary} x {40, 50} x {0, 0.05} grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path (required without --config).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override runs per topology.
    #[arg(long)]
    runs: Option<usize>,
    #[command(flatten)]
    jobs: JobArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep or MC CSV to summarize.
    records: PathBuf,
    /// Directory for the report files (default: <records>.report).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Histogram bins.
    #[arg(long, default_value_t = reservoir_core::metrics::DEFAULT_BINS)]
    bins: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::InvalidSignal(_)
        | Error::InvalidRange { .. } => 1,
        Error::Io(_) | Error::Csv(_) | Error::Parse { .. } => 2,
        _ => 3,
    }
}

fn print_json(v: &serde_json::Value) -> Result<(), Error> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn gen_signal(args: GenSignalArgs) -> Result<(), Error> {
    let spec = args.signal.spec()?;
    let ts = spec.generate(
        args.length,
        &mut reservoir_core::RngStream::new(args.seed, 0),
    )?;
    match args.output {
        Some(path) => {
            let mut out = BufWriter::new(fs::File::create(path)?);
            ts.write_csv(&mut out)?;
            out.flush()?;
        }
        None => {
            let mut out = io::stdout().lock();
            ts.write_csv(&mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Error> {
    let kind: NeuronKind = args
        .model
        .parse()
        .map_err(|e: Error| Error::Config(e.to_string()))?;
    let b = args
        .b
        .unwrap_or(if kind.is_stochastic() { 0.05 } else { 0.0 });
    let model = NeuronModel::new(kind, b).map_err(|e| Error::Config(e.to_string()))?;
    let mode: TrainMode = args
        .mode
        .parse()
        .map_err(|e: Error| Error::Config(e.to_string()))?;
    let mut plan = experiments::plan_for(mode);
    if let Some(v) = args.washout {
        plan.washout_steps = v;
    }
    if let Some(v) = args.train {
        plan.train_steps = v;
    }
    if let Some(v) = args.test {
        plan.test_steps = v;
    }
    if let Some(v) = args.lambda {
        plan.ridge_lambda = v;
    }
    plan.validate().map_err(|e| Error::Config(e.to_string()))?;
    let spec = args.signal.spec()?;
    let params = args.reservoir.params();
    let seeds = Seeds { base: args.seed };
    let mut cfg = params.config(args.n, model, seeds.topology(args.n, args.topology));
    let weights = match &args.load_weights {
        Some(dir) => {
            let w = WeightSet::load_dir(dir)?;
            cfg.n = w.n();
            w
        }
        None => reservoir_core::build_topology(&cfg).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        })?,
    };
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let result = run_with_weights(
        &weights,
        &cfg,
        &plan,
        &spec,
        &mut seeds.signal(args.topology, args.run),
        &mut seeds.neuron(cfg.n, args.topology, args.run),
    )?;
    if let Some(path) = &args.trace {
        let mut out = BufWriter::new(fs::File::create(path)?);
        result.write_trace_csv(&mut out)?;
        out.flush()?;
    }
    if let Some(dir) = &args.save_weights {
        let trained = WeightSet {
            w_out: Some(result.w_out.clone()),
            ..weights
        };
        trained.save_dir(dir)?;
    }
    print_json(&json!({
        "model": kind,
        "N": cfg.n,
        "b": b,
        "input": args.signal.input,
        "mode": mode,
        "seed": args.seed,
        "topology": args.topology,
        "run": args.run,
        "result": result.record(),
    }))
}

fn sweep(args: SweepArgs) -> Result<(), Error> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => SweepConfig::load(path)?,
        (None, Some(name)) => SweepConfig::preset(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown preset '{name}' (known: {})",
                SweepConfig::PRESETS.join(", ")
            ))
        })?,
        (None, None) => {
            return Err(Error::Config(
                "either --config or --preset is required".into(),
            ))
        }
    };
    if let Some(p) = args.output {
        cfg.output_path = p;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = args.runs {
        cfg.runs_per_topology = r;
    }
    let record = reservoir_core::run_sweep(&cfg, &args.jobs.options())?;
    let cells: Vec<_> = record
        .summary
        .cells
        .iter()
        .map(|c| {
            json!({
                "model": c.model, "N": c.n, "b": c.b, "input_id": c.input_id,
                "count_total": c.nmse.count_total, "count_valid": c.nmse.count_valid,
                "count_blowup": c.count_blowup, "count_failed": c.count_failed,
                "mean_nmse": c.nmse.mean, "std_nmse": c.nmse.std,
                "median_wout_db": c.wout_db.as_ref().map(|d| d.median),
            })
        })
        .collect();
    print_json(&json!({
        "output": cfg.output_path,
        "summary": cfg.summary_path(),
        "rows": record.rows.len(),
        "cells": cells,
    }))
}

fn mc(args: McArgs) -> Result<(), Error> {
    let mut cfg = match (&args.config, &args.output) {
        (Some(path), _) => McSuiteConfig::load(path)?,
        (None, Some(out)) => McSuiteConfig::memory_grid(out.clone()),
        (None, None) => {
            return Err(Error::Config(
                "--output is required without --config".into(),
            ))
        }
    };
    if let (Some(_), Some(out)) = (&args.config, &args.output) {
        cfg.output_path = out.clone();
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = args.runs {
        cfg.runs_per_topology = r;
    }
    let (record, _) = reservoir_core::run_mc_suite(&cfg, &args.jobs.options())?;
    let cells: Vec<_> = record
        .summary
        .cells
        .iter()
        .map(|c| {
            let mc = c.mc_total.as_ref();
            let family = if c.model.is_binary() {
                Family::Binary
            } else {
                Family::Analog
            };
            json!({
                "family": family, "model": c.model, "N": c.n, "b": c.b,
                "count_total": c.nmse.count_total, "count_failed": c.count_failed,
                "mean_mc": mc.and_then(|m| m.mean), "std_mc": mc.and_then(|m| m.std),
            })
        })
        .collect();
    print_json(&json!({
        "output": cfg.output_path,
        "summary": experiments::summary_path(&cfg.output_path),
        "input": match &cfg.input { InputEntry::Preset(p) => p.clone(), InputEntry::Custom { id, .. } => id.clone() },
        "k_max": cfg.k_max,
        "cells": cells,
    }))
}

fn report(args: ReportArgs) -> Result<(), Error> {
    if args.bins == 0 {
        return Err(Error::Config("--bins must be >= 1".into()));
    }
    let out_dir = args.out_dir.unwrap_or_else(|| {
        let mut name = args
            .records
            .file_name()
            .map(|s| s.to_os_string())
            .unwrap_or_default();
        name.push(".report");
        args.records.with_file_name(name)
    });
    let rep = reservoir_core::report(&args.records, &out_dir, args.bins)?;
    let cells: Vec<_> = rep
        .cells
        .iter()
        .map(|c| {
            json!({
                "model": c.model, "N": c.n, "b": c.b, "input_id": c.input_id,
                "count_total": c.nmse.count_total, "valid_fraction": c.nmse.valid_fraction(),
                "mean_nmse": c.nmse.mean, "std_nmse": c.nmse.std,
                "blowup_rate": c.blowup_rate,
                "mean_mc": c.mc_total.as_ref().and_then(|m| m.mean),
            })
        })
        .collect();
    print_json(&json!({
        "out_dir": out_dir,
        "rows": rep.rows,
        "count_valid": rep.count_valid,
        "count_blowup": rep.count_blowup,
        "count_failed": rep.count_failed,
        "files": rep.files,
        "cells": cells,
        "blowup_series": rep.blowup_series,
    }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    let outcome = std::panic::catch_unwind(|| match cli.command {
        Command::GenSignal(a) => gen_signal(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Mc(a) => mc(a),
        Command::Report(a) => report(a),
    });
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(3)
        }
    }
}
