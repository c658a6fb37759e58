use reservoir_core::{
    build_topology, predict_free_run, run_once, train_offline, train_online, NeuronKind,
    NeuronModel, ReservoirConfig, RngStream, SignalSpec, TrainMode, TrainingPlan,
};

fn setup(kind: NeuronKind, b: f64, seed: u64) -> (ReservoirConfig, TrainingPlan, SignalSpec) {
    let mut cfg = ReservoirConfig::new(20, NeuronModel::new(kind, b).unwrap());
    cfg.topology_seed = seed;
    let plan = TrainingPlan {
        washout_steps: 100,
        train_steps: 600,
        test_steps: 200,
        ..TrainingPlan::default()
    };
    (cfg, plan, SignalSpec::preset("clean").unwrap())
}

#[test]
fn frozen_online_readout_matches_offline() {
    for seed in 0..5 {
        let (cfg, plan, spec) = setup(NeuronKind::An, 0.0, seed);
        let w = build_topology(&cfg).unwrap();
        let signal = spec
            .generate(plan.signal_len(), &mut RngStream::new(0, 0))
            .unwrap();
        let trained = train_offline(&w, &cfg, &plan, &signal, &mut RngStream::new(0, 0)).unwrap();
        let target = signal.slice(plan.test_range());
        let offline =
            predict_free_run(&trained, &cfg, &plan, &target, &mut RngStream::new(0, 0)).unwrap();
        let frozen = TrainingPlan {
            mode: TrainMode::Online,
            blend_old: 1.0,
            blend_new: 0.0,
            ..plan.clone()
        };
        let online =
            train_online(&trained, &cfg, &frozen, &target, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(
            offline.nmse.map(f64::to_bits),
            online.nmse.map(f64::to_bits)
        );
        assert_eq!(offline.blowup, online.blowup);
        assert_eq!(offline.w_out, online.w_out);
    }
}

#[test]
fn inflated_readout_always_blows_up() {
    for seed in 0..10 {
        let (cfg, plan, spec) = setup(NeuronKind::Asn, 0.05, seed);
        let w = build_topology(&cfg).unwrap();
        let signal = spec
            .generate(plan.signal_len(), &mut RngStream::new(seed, 0))
            .unwrap();
        let mut trained =
            train_offline(&w, &cfg, &plan, &signal, &mut RngStream::new(seed, 1)).unwrap();
        let scaled = trained.w_out().scaled(100.0);
        trained.weights.w_out = Some(scaled);
        let target = signal.slice(plan.test_range());
        let r =
            predict_free_run(&trained, &cfg, &plan, &target, &mut RngStream::new(seed, 2)).unwrap();
        assert!(r.blowup, "seed {seed}");
        assert!(r.nmse.is_none());
    }
}

#[test]
fn deterministic_online_run_repeats_exactly() {
    let (cfg, plan, spec) = setup(NeuronKind::An, 0.0, 3);
    let plan = TrainingPlan {
        mode: TrainMode::Online,
        ..plan
    };
    let a = run_once(
        &cfg,
        &plan,
        &spec,
        &mut RngStream::new(1, 0),
        &mut RngStream::new(2, 0),
    )
    .unwrap();
    let b = run_once(
        &cfg,
        &plan,
        &spec,
        &mut RngStream::new(9, 9),
        &mut RngStream::new(8, 8),
    )
    .unwrap();
    assert_eq!(a.blowup, b.blowup);
    assert_eq!(a.nmse.map(f64::to_bits), b.nmse.map(f64::to_bits));
    assert_eq!(a.predicted, b.predicted);
    assert_eq!(a.w_out, b.w_out);
}

#[test]
fn short_horizon_prediction_is_accurate() {
    // a clean two-tone signal is easy for a deterministic analog reservoir
    let (cfg, plan, spec) = setup(NeuronKind::An, 0.0, 1);
    let plan = TrainingPlan {
        test_steps: 20,
        ..plan
    };
    let r = run_once(
        &cfg,
        &plan,
        &spec,
        &mut RngStream::new(0, 0),
        &mut RngStream::new(0, 0),
    )
    .unwrap();
    assert!(!r.blowup);
    assert!(r.nmse.unwrap() < 0.05, "{:?}", r.nmse);
}
