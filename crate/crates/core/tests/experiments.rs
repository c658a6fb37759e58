use std::fs;
use std::path::Path;

use reservoir_core::experiments::{
    read_rows, report, run_mc_suite, run_sweep, InputEntry, McSuiteConfig, RunOptions, SweepConfig,
    CSV_HEADER,
};
use reservoir_core::metrics::McPlan;
use reservoir_core::{
    build_topology, run_with_weights, Error, NeuronKind, NeuronModel, ReservoirConfig, RngStream,
    SignalSpec, TrainingPlan, WeightSet,
};

fn small_plan() -> TrainingPlan {
    TrainingPlan {
        washout_steps: 20,
        train_steps: 150,
        test_steps: 30,
        ..TrainingPlan::default()
    }
}

fn small_config(dir: &Path, name: &str) -> SweepConfig {
    SweepConfig {
        schema_version: 1,
        models: vec![NeuronKind::An, NeuronKind::Asn, NeuronKind::Bsn],
        sizes: vec![5, 8],
        noise_levels: vec![0.02, 0.05],
        inputs: vec![
            InputEntry::Preset("clean".into()),
            InputEntry::Preset("square".into()),
        ],
        topologies: 2,
        runs_per_topology: 3,
        plan: small_plan(),
        reservoir: Default::default(),
        base_seed: 7,
        output_path: dir.join(name),
    }
}

fn jobs(n: usize) -> RunOptions {
    RunOptions {
        jobs: Some(n),
        fresh: false,
    }
}

#[test]
fn three_row_sweep_has_exact_cardinality() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SweepConfig {
        models: vec![NeuronKind::Asn],
        sizes: vec![6],
        noise_levels: vec![0.05],
        inputs: vec![InputEntry::Preset("clean".into())],
        topologies: 1,
        ..small_config(dir.path(), "three.csv")
    };
    let rec = run_sweep(&cfg, &jobs(1)).unwrap();
    assert_eq!(rec.rows.len(), 3);
    let text = fs::read_to_string(&cfg.output_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(lines.count(), 3);
    assert!(cfg.summary_path().exists());

    let out = dir.path().join("rep");
    let rep = report(&cfg.output_path, &out, 10).unwrap();
    assert_eq!(rep.rows, 3);
    assert_eq!(rep.cells.len(), 1);
    assert_eq!(rep.cells[0].nmse.count_total, 3);
    for f in &rep.files {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn deterministic_models_get_one_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "x.csv");
    let cells = cfg.cells().unwrap();
    // AN: 2 sizes x 2 inputs; ASN, BSN: 2 sizes x 2 b x 2 inputs
    assert_eq!(cells.len(), 4 + 8 + 8);
    assert!(cells
        .iter()
        .filter(|c| c.model.kind == NeuronKind::An)
        .all(|c| c.model.b == 0.0));
}

#[test]
fn reruns_and_job_counts_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_config(dir.path(), "a.csv");
    let b = small_config(dir.path(), "b.csv");
    let c = small_config(dir.path(), "c.csv");
    let ra = run_sweep(&a, &jobs(1)).unwrap();
    run_sweep(&b, &jobs(4)).unwrap();
    run_sweep(&c, &jobs(1)).unwrap();
    let bytes = fs::read(&a.output_path).unwrap();
    assert_eq!(bytes, fs::read(&b.output_path).unwrap());
    assert_eq!(bytes, fs::read(&c.output_path).unwrap());
    assert_eq!(ra.rows.len(), 20 * 6);
    // every grid point exactly once
    let mut keys: Vec<_> = ra
        .rows
        .iter()
        .map(|r| {
            (
                r.model,
                r.n,
                r.b.to_bits(),
                r.input_id.clone(),
                r.topology,
                r.run,
            )
        })
        .collect();
    let before = keys.len();
    keys.dedup();
    assert_eq!(keys.len(), before);
}

#[test]
fn resume_reuses_finished_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "r.csv");
    run_sweep(&cfg, &jobs(2)).unwrap();
    let full = fs::read(&cfg.output_path).unwrap();

    // drop the final CSV and half of the checkpoints, then resume
    fs::remove_file(&cfg.output_path).unwrap();
    let ckpt = cfg.checkpoint_dir();
    let mut cells: Vec<_> = fs::read_dir(&ckpt)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "config.json")
        .collect();
    cells.sort();
    assert_eq!(cells.len(), 20);
    for p in cells.iter().step_by(2) {
        fs::remove_file(p).unwrap();
    }
    // a truncated checkpoint is recomputed rather than trusted
    let victim = &cells[1];
    let text = fs::read_to_string(victim).unwrap();
    let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    fs::write(victim, truncated).unwrap();

    run_sweep(&cfg, &jobs(2)).unwrap();
    assert_eq!(full, fs::read(&cfg.output_path).unwrap());
}

#[test]
fn checkpoints_from_other_config_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "m.csv");
    run_sweep(&cfg, &jobs(1)).unwrap();
    let changed = SweepConfig {
        base_seed: 8,
        ..cfg.clone()
    };
    assert!(matches!(
        run_sweep(&changed, &jobs(1)),
        Err(Error::Config(_))
    ));
    let fresh = RunOptions {
        jobs: Some(1),
        fresh: true,
    };
    run_sweep(&changed, &fresh).unwrap();
    assert_ne!(fs::read(&cfg.output_path).unwrap(), Vec::<u8>::new());
}

#[test]
fn unwritable_output_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let cfg = SweepConfig {
        output_path: blocker.join("sub").join("out.csv"),
        ..small_config(dir.path(), "unused.csv")
    };
    let start = std::time::Instant::now();
    assert!(matches!(run_sweep(&cfg, &jobs(1)), Err(Error::Io(_))));
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn config_parsing_checks_schema_and_fields() {
    let ok = r#"{"schema_version": 1, "models": ["ASN"], "sizes": [10], "noise_levels": [0.05],
                 "inputs": ["clean", {"id": "mine", "kind": "sawtooth", "a": 1, "b": 0.5,
                 "f1": 0.1, "f2": 0.02}], "output_path": "o.csv"}"#;
    let cfg = SweepConfig::from_json(ok).unwrap();
    assert_eq!(cfg.inputs[1].id(), "mine");
    assert_eq!(cfg.cells().unwrap().len(), 2);

    let bad_version = ok.replace("\"schema_version\": 1", "\"schema_version\": 2");
    assert!(matches!(
        SweepConfig::from_json(&bad_version),
        Err(Error::Config(_))
    ));
    let unknown = ok.replace("\"sizes\"", "\"sizez\"");
    assert!(matches!(
        SweepConfig::from_json(&unknown),
        Err(Error::Config(_))
    ));
    let bad_input = ok.replace("\"clean\"", "\"nope\"");
    assert!(matches!(
        SweepConfig::from_json(&bad_input),
        Err(Error::Config(_))
    ));
    let bad_b = ok.replace("[0.05]", "[-0.05]");
    assert!(matches!(
        SweepConfig::from_json(&bad_b),
        Err(Error::Config(_))
    ));
    let zero_n = ok.replace("[10]", "[0]");
    assert!(matches!(
        SweepConfig::from_json(&zero_n),
        Err(Error::Config(_))
    ));
}

#[test]
fn presets_are_valid() {
    for name in SweepConfig::PRESETS {
        let cfg = SweepConfig::preset(name).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.topologies * cfg.runs_per_topology, 250);
    }
    assert!(SweepConfig::preset("no-such-grid").is_none());
}

#[test]
fn empty_and_malformed_records_report_row_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rep");

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert!(matches!(report(&empty, &out, 10), Err(Error::Parse { .. })));

    let header_only = dir.path().join("h.csv");
    fs::write(&header_only, format!("{}\n", CSV_HEADER.join(","))).unwrap();
    assert!(matches!(
        report(&header_only, &out, 10),
        Err(Error::Parse { row: 2, .. })
    ));

    let good = "ASN,10,0.05,clean,0,0,0.01,false,12.5,\n";
    let bad = "ASN,10,0.05,clean,0,1,abc,false,12.5,\n";
    let mixed = dir.path().join("m.csv");
    fs::write(
        &mixed,
        format!("{}\n{good}{good}{bad}", CSV_HEADER.join(",")),
    )
    .unwrap();
    match report(&mixed, &out, 10) {
        Err(Error::Parse { row, .. }) => assert_eq!(row, 4),
        other => panic!("expected parse error, got {other:?}"),
    }

    let short = dir.path().join("s.csv");
    fs::write(&short, format!("{}\nASN,10,0.05\n", CSV_HEADER.join(","))).unwrap();
    assert!(matches!(
        report(&short, &out, 10),
        Err(Error::Parse { row: 2, .. })
    ));

    let wrong_header = dir.path().join("w.csv");
    fs::write(&wrong_header, format!("a,b\n{good}")).unwrap();
    assert!(matches!(
        report(&wrong_header, &out, 10),
        Err(Error::Parse { row: 1, .. })
    ));
}

#[test]
fn report_conserves_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "c.csv");
    let rec = run_sweep(&cfg, &jobs(1)).unwrap();
    let rep = report(&cfg.output_path, &dir.path().join("rep"), 20).unwrap();
    assert_eq!(rep.rows, rec.rows.len());
    assert_eq!(
        rep.count_valid + rep.count_blowup + rep.count_failed,
        rep.rows
    );
    let per_cell: usize = rep.cells.iter().map(|c| c.nmse.count_total).sum();
    assert_eq!(per_cell, rep.rows);
    for c in &rep.cells {
        if let Some(h) = &c.nmse.histogram {
            assert_eq!(h.counts.iter().sum::<usize>(), c.nmse.count_valid);
        }
    }
    let reread = read_rows(fs::File::open(&cfg.output_path).unwrap()).unwrap();
    assert_eq!(reread, rec.rows);
}

#[test]
fn single_mc_run_scores_every_delay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = McSuiteConfig {
        sizes: vec![10],
        noise_levels: vec![0.0],
        families: vec![reservoir_core::experiments::Family::Analog],
        topologies: 1,
        runs_per_topology: 1,
        plan: McPlan {
            washout: 60,
            train: 300,
            eval: 200,
            ridge_lambda: 1e-8,
        },
        ..McSuiteConfig::memory_grid(dir.path().join("mc.csv"))
    };
    let (rec, curves) = run_mc_suite(&cfg, &jobs(1)).unwrap();
    assert_eq!(rec.rows.len(), 1);
    assert_eq!(curves.len(), 1);
    assert_eq!(curves[0].per_delay.len(), 50);
    let total: f64 = curves[0].per_delay.iter().sum();
    assert!((total - rec.rows[0].mc_total.unwrap()).abs() < 1e-9);
    assert!(curves[0].per_delay.iter().all(|s| (0.0..=1.0).contains(s)));
    let rep = report(&cfg.output_path, &dir.path().join("rep"), 10).unwrap();
    assert!(rep.files.iter().any(|f| f == "mc.csv"));
}

#[test]
fn weights_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ReservoirConfig::new(7, NeuronModel::new(NeuronKind::Asn, 0.05).unwrap());
    cfg.topology_seed = 11;
    let mut w: WeightSet = build_topology(&cfg).unwrap();
    let spec = SignalSpec::preset("clean").unwrap();
    let plan = small_plan();
    let run = |w: &WeightSet| {
        run_with_weights(
            w,
            &cfg,
            &plan,
            &spec,
            &mut RngStream::new(1, 2),
            &mut RngStream::new(3, 4),
        )
        .unwrap()
    };
    let first = run(&w);
    w.w_out = Some(first.w_out.clone());
    w.save_dir(dir.path()).unwrap();
    let loaded = WeightSet::load_dir(dir.path()).unwrap();
    assert_eq!(loaded, w);
    assert_eq!(run(&loaded).nmse, first.nmse);

    fs::write(dir.path().join("w_s.csv"), "1,2\n3\n").unwrap();
    assert!(WeightSet::load_dir(dir.path()).is_err());
}
