use uadan::adaptation::{ImageTerm, InstanceTerm};
use uadan::datagen::{Benchmark, BenchmarkConfig, Image};
use uadan::evaluation::evaluate;
use uadan::training::{
    build_step, train, train_step, AblationMode, RunOptions, Sgd, TrainConfig, TrainData, HISTORY_FILE,
};
use uadan::{Error, Model};

fn bench(n: usize) -> TrainData {
    let b = Benchmark::generate(&BenchmarkConfig {
        n_source: n,
        n_target_train: n,
        n_target_eval: n.div_ceil(2),
        ..Default::default()
    })
    .unwrap();
    TrainData {
        source: b.source,
        target_train: b.target_train,
        target_eval: b.target_eval,
    }
}

fn cfg(mode: AblationMode, xi: f64, iters: u64) -> TrainConfig {
    let mut c = TrainConfig {
        mode,
        xi,
        eval_every: iters.max(1),
        log_every: 10,
        ..Default::default()
    };
    c.schedule = c.schedule.with_total(iters);
    c
}

fn in_memory() -> RunOptions {
    RunOptions::default()
}

fn params_equal(a: &Model, b: &Model) -> bool {
    // `==` on f64 treats +0 and -0 as equal, which is the intended tolerance.
    a.store.params.iter().zip(&b.store.params).all(|(x, y)| x.value == y.value)
}

#[test]
fn overfit_one_pair_halves_detection_loss() {
    let data = bench(2);
    let mut c = cfg(AblationMode::UaDAN, 0.5, 200);
    c.schedule.lr1 = 1e-2;
    let mut model = Model::new(&c.detector, 0).unwrap();
    let mut opt = Sgd::new(&model.store, c.momentum, c.weight_decay);
    let (s, t) = (&data.source.samples[0], &data.target_train.samples[0]);
    let first = train_step(&mut model, &mut opt, s, Some(t), &c, 0).unwrap().breakdown.det;
    let mut last = first;
    for it in 1..200 {
        last = train_step(&mut model, &mut opt, s, Some(t), &c, it).unwrap().breakdown.det;
    }
    assert!(last <= 0.5 * first, "L_det {first} -> {last}");
}

#[test]
fn baseline_ignores_the_target_image() {
    let data = bench(3);
    let c = cfg(AblationMode::Baseline, 0.5, 1);
    let s = &data.source.samples[0];
    let mut outs = Vec::new();
    for t in [&data.target_train.samples[0], &data.target_train.samples[1]] {
        let mut model = Model::new(&c.detector, 1).unwrap();
        let mut opt = Sgd::new(&model.store, c.momentum, c.weight_decay);
        let out = train_step(&mut model, &mut opt, s, Some(t), &c, 0).unwrap();
        assert_eq!((out.breakdown.img, out.breakdown.ins), (0.0, 0.0));
        outs.push(model);
    }
    assert!(params_equal(&outs[0], &outs[1]));
}

#[test]
fn each_mode_reports_exactly_its_loss_terms() {
    let data = bench(2);
    for mode in AblationMode::ALL {
        // xi = 1 opens the gate everywhere, so every instance term is live.
        let c = cfg(mode, 1.0, 1);
        let model = Model::new(&c.detector, 2).unwrap();
        let t = mode.uses_target().then(|| &data.target_train.samples[0]);
        let step = build_step(&model, &data.source.samples[0], t, &c, 0).unwrap();
        let b = &step.output.breakdown;
        assert!(b.det > 0.0, "{mode}");
        assert_eq!(b.img != 0.0, mode.image_term() != ImageTerm::None, "{mode}: L_img = {}", b.img);
        assert_eq!(b.ins != 0.0, mode.instance_term() != InstanceTerm::None, "{mode}: L_ins = {}", b.ins);
        assert_eq!(b.total, b.det + b.img + b.ins);
    }
}

#[test]
fn gate_extremes_reproduce_neighbouring_modes() {
    let data = bench(20);
    let run = |mode, xi| train(&cfg(mode, xi, 60), &data, &in_memory()).unwrap();
    let a = run(AblationMode::UaDAN, 0.0);
    let b = run(AblationMode::ImageUaAL, 0.5);
    assert!(params_equal(&a.checkpoint.model, &b.checkpoint.model));
    assert_eq!(a.summary.final_eval.map, b.summary.final_eval.map);
    assert_eq!(a.summary.ins_max_abs, 0.0);

    let c = run(AblationMode::UaDAN, 1.0);
    let d = run(AblationMode::UaDANNoUgCL, 0.5);
    assert!(params_equal(&c.checkpoint.model, &d.checkpoint.model));
    assert!(c.summary.ins_max_abs > 0.0);
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let data = bench(20);
    let c = cfg(AblationMode::UaDAN, 0.5, 120);
    let c = TrainConfig { eval_every: 30, ..c };
    let straight = tempfile::tempdir().unwrap();
    let resumed = tempfile::tempdir().unwrap();
    let opts = |dir: &std::path::Path, stop_after| RunOptions {
        out_dir: Some(dir.to_path_buf()),
        resume: true,
        periodic_eval: true,
        stop_after,
    };
    train(&c, &data, &opts(straight.path(), None)).unwrap();
    match train(&c, &data, &opts(resumed.path(), Some(70))) {
        Err(Error::Interrupted { iteration: 70 }) => {}
        other => panic!("expected interruption, got {:?}", other.map(|o| o.summary)),
    }
    let partial = std::fs::read_to_string(resumed.path().join(HISTORY_FILE)).unwrap();
    assert_eq!(partial.lines().count(), 7);
    train(&c, &data, &opts(resumed.path(), None)).unwrap();

    for f in [HISTORY_FILE, "summary.json", "checkpoints/final.ckpt", "checkpoints/best.ckpt"] {
        let a = std::fs::read(straight.path().join(f)).unwrap();
        let b = std::fs::read(resumed.path().join(f)).unwrap();
        assert!(a == b, "{f} differs after resume");
    }
    let text = std::fs::read_to_string(resumed.path().join(HISTORY_FILE)).unwrap();
    let iters: Vec<u64> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["iteration"].as_u64().unwrap())
        .collect();
    assert_eq!(iters, (1..=12).map(|k| 10 * k).collect::<Vec<_>>());
}

#[test]
fn resume_rejects_a_different_config() {
    let data = bench(10);
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(AblationMode::Baseline, 0.5, 20);
    let opts = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        resume: true,
        periodic_eval: false,
        stop_after: Some(10),
    };
    assert!(matches!(train(&c, &data, &opts), Err(Error::Interrupted { .. })));
    let other = TrainConfig { seed: 9, ..c };
    assert!(matches!(train(&other, &data, &RunOptions { stop_after: None, ..opts }), Err(Error::Checkpoint(_))));
}

#[test]
fn training_never_reads_target_labels() {
    let data = bench(10);
    for mode in AblationMode::ALL {
        let out = train(&cfg(mode, 0.5, 20), &data, &in_memory()).unwrap();
        assert_eq!(out.summary.target_train_label_reads, 0);
    }
    assert_eq!(data.target_train.label_reads(), 0);
    assert!(data.target_eval.label_reads() > 0);
}

#[test]
fn loss_drops_early_in_training() {
    let data = bench(100);
    let out = train(&cfg(AblationMode::UaDAN, 0.5, 1000), &data, &in_memory()).unwrap();
    assert!(out.history.records.iter().all(|r| r.total.is_finite()));
    let at_1 = out.history.total_at(10).unwrap();
    let at_10 = out.history.total_at(100).unwrap();
    assert!(at_10 < at_1, "loss at 10% {at_10} vs at 1% {at_1}");
}

#[test]
fn missing_source_labels_are_an_error() {
    let data = bench(2);
    let c = cfg(AblationMode::Baseline, 0.5, 1);
    let model = Model::new(&c.detector, 0).unwrap();
    let mut unlabelled = data.source.samples[0].clone();
    unlabelled.labels = None;
    let err = build_step(&model, &unlabelled, None, &c, 0).err().unwrap();
    assert_eq!(err.to_string(), "detection loss requires source labels");
}

#[test]
fn divergence_aborts_with_diagnostic() {
    let data = bench(4);
    let mut c = cfg(AblationMode::Baseline, 0.5, 50);
    c.schedule.lr1 = 1e12;
    match train(&c, &data, &in_memory()).err() {
        Some(Error::NonFinite { iteration, detail }) => {
            assert!(iteration > 0);
            assert!(!detail.is_empty());
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn mismatched_dataset_fails_before_training() {
    let data = bench(4);
    let mut c = cfg(AblationMode::Baseline, 0.5, 5);
    c.detector.classes = 2;
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out_dir: Some(dir.path().join("run")),
        ..Default::default()
    };
    assert!(matches!(train(&c, &data, &opts), Err(Error::Config(_))));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn untrained_model_scores_near_zero() {
    let data = bench(100);
    let c = TrainConfig::default();
    let model = Model::new(&c.detector, 0).unwrap();
    let images: Vec<&Image> = data.target_eval.samples.iter().map(|s| &s.image).collect();
    let (res, _) = evaluate(&model, &images, data.target_eval.eval_labels()).unwrap();
    assert!(res.map < 0.05, "random model mAP {}", res.map);
    for (c, k) in &res.counts {
        assert_eq!(k.tp + k.fn_, k.gt, "class {c}");
    }
}
