mod common;

use vcaseg::data::synth_generate;
use vcaseg::model::{ModelConfig, ParamKind, VcaNet};
use vcaseg::trainer::{
    epoch_order, evaluate, read_history, sgd_step, train, SgdConfig, SgdState, TrainConfig, Trainer,
};
use vcaseg::Error;

#[test]
fn sgd_matches_momentum_recurrence() {
    let mut net = VcaNet::<f64>::build(ModelConfig::reduced()).unwrap();
    let before: Vec<Vec<f64>> = net.params().iter().map(|p| p.value.data().to_vec()).collect();
    let mut state = SgdState::new(net.params());
    let cfg = SgdConfig {
        lr: 0.01,
        momentum: 0.9,
        weight_decay: 0.0,
    };
    for _ in 0..2 {
        for p in net.params_mut().iter_mut() {
            p.grad.fill(0.5);
        }
        sgd_step(net.params_mut(), &mut state, &cfg).unwrap();
    }
    assert_eq!(state.step, 2);
    let expect_delta = 0.01 * 0.5 * (1.0 + (1.0 + 0.9));
    for (p, w0) in net.params().iter().zip(&before) {
        for (w, w0) in p.value.data().iter().zip(w0) {
            match p.kind {
                ParamKind::Weight => assert!((w0 - w - expect_delta).abs() < 1e-15),
                ParamKind::Buffer => assert_eq!(w, w0),
            }
        }
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
    }
}

#[test]
fn weight_decay_enters_the_velocity() {
    let mut net = VcaNet::<f64>::build(ModelConfig::reduced()).unwrap();
    let id = net.params().id("v1.block1.bn.weight").unwrap();
    let mut state = SgdState::new(net.params());
    let cfg = SgdConfig {
        lr: 0.1,
        momentum: 0.0,
        weight_decay: 0.5,
    };
    sgd_step(net.params_mut(), &mut state, &cfg).unwrap();
    // gamma starts at 1 with zero gradient: w = 1 - 0.1 * 0.5 * 1
    assert!(net
        .params()
        .get(id)
        .value
        .data()
        .iter()
        .all(|&w| (w - 0.95).abs() < 1e-15));
}

#[test]
fn zero_learning_rate_leaves_weights_bitwise_unchanged() {
    let samples = synth_generate(16, 0.8, 2).unwrap();
    let net = VcaNet::<f32>::build(common::tiny_model(3)).unwrap();
    let before = net.clone();
    let cfg = TrainConfig {
        lr: 0.0,
        ..common::tiny_train_config(1, 0)
    };
    let (after, history) = train(net, &samples, &[], &cfg, None).unwrap();
    assert_eq!(history.records.len(), 1);
    assert_eq!(history.records[0].steps, 2);
    let mut buffers_moved = false;
    for (a, b) in after.params().iter().zip(before.params().iter()) {
        if a.kind == ParamKind::Weight {
            assert_eq!(a.value, b.value, "{}", a.name);
        } else {
            buffers_moved |= a.value != b.value;
        }
    }
    assert!(buffers_moved, "running statistics still update in train mode");
}

#[test]
fn one_epoch_lowers_training_loss_and_writes_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_generate(16, 1.0, 4).unwrap();
    let net = VcaNet::<f32>::build(common::tiny_model(4)).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..common::tiny_train_config(3, 1)
    };
    let (_, history) = train(net, &samples[..12], &samples[12..], &cfg, Some(dir.path())).unwrap();
    assert_eq!(history.records.len(), 3);
    assert!(history.records.iter().all(|r| r.total.is_finite() && r.val.is_some()));
    assert!(history.records[2].total < history.records[0].total);
    for f in ["manifest.txt", "history.csv", "epoch_0001.vcaw", "epoch_0003.sgd"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let reread = read_history(&dir.path().join("history.csv")).unwrap();
    for (a, b) in reread.records.iter().zip(&history.records) {
        assert!(a.same_numbers(b));
    }
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("lr=0.001") && manifest.contains("momentum=0.9"));
}

#[test]
fn empty_slices_are_skipped_unless_requested() {
    let samples = synth_generate(8, 0.0, 0).unwrap();
    let net = VcaNet::<f32>::build(common::tiny_model(0)).unwrap();
    let cfg = TrainConfig {
        include_empty_slices: false,
        ..common::tiny_train_config(1, 0)
    };
    assert!(train(net.clone(), &samples, &[], &cfg, None).is_err());
    let cfg = TrainConfig {
        include_empty_slices: true,
        ..cfg
    };
    assert!(train(net, &samples, &[], &cfg, None).is_ok());
}

#[test]
fn nan_weight_aborts_before_any_update() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_generate(8, 1.0, 6).unwrap();
    let mut net = VcaNet::<f32>::build(common::tiny_model(6)).unwrap();
    let id = net.params().id("dec.u4.conv.weight").unwrap();
    net.params_mut().get_mut(id).value.data_mut()[0] = f32::NAN;
    let mut trainer = Trainer::new(net.clone(), common::tiny_train_config(1, 0))
        .unwrap()
        .with_output(dir.path())
        .unwrap();
    match trainer.fit(&samples, &[]) {
        Err(Error::NonFiniteLoss { step: 0, detail }) => assert!(detail.contains("synth000")),
        other => panic!("expected NonFiniteLoss, got {:?}", other.err()),
    }
    for (a, b) in trainer.net.params().iter().zip(net.params().iter()) {
        let bits = |t: &vcaseg::tensor::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value), "{}", a.name);
    }
    assert_eq!(trainer.sgd.step, 0);
    let abort = std::fs::read_to_string(dir.path().join("abort.txt")).unwrap();
    assert!(abort.starts_with("step=0"));
    assert!(!dir.path().join("epoch_0001.vcaw").exists());
}

#[test]
fn epoch_order_depends_only_on_seed_and_epoch() {
    assert_eq!(epoch_order(20, 3, 2, true), epoch_order(20, 3, 2, true));
    assert_ne!(epoch_order(20, 3, 2, true), epoch_order(20, 3, 3, true));
    assert_eq!(epoch_order(5, 3, 2, false), vec![0, 1, 2, 3, 4]);
    let mut o = epoch_order(50, 9, 1, true);
    o.sort();
    assert_eq!(o, (0..50).collect::<Vec<_>>());
}

#[test]
fn determinism_and_resume_on_small_run() {
    let root = tempfile::tempdir().unwrap();
    let samples = synth_generate(16, 0.8, 11).unwrap();
    let (train_set, val) = samples.split_at(12);
    let a = common::checkpoint_bytes_of_run(train_set, val, 3, &root.path().join("a"));
    let b = common::checkpoint_bytes_of_run(train_set, val, 3, &root.path().join("b"));
    assert_eq!(a, b);
    let c = root.path().join("c");
    common::copy_run_prefix(&root.path().join("a"), &c, 2);
    let resumed = common::resumed_final_bytes(train_set, val, 2, 3, &c);
    assert_eq!(resumed, a[2]);
    let ha = read_history(&root.path().join("a/history.csv")).unwrap();
    let hc = read_history(&c.join("history.csv")).unwrap();
    assert!(ha.records.iter().zip(&hc.records).all(|(x, y)| x.same_numbers(y)));
}

#[test]
fn evaluation_is_deterministic_and_reports_both_modes() {
    let samples = synth_generate(10, 0.5, 12).unwrap();
    let net = VcaNet::<f32>::build(common::tiny_model(12)).unwrap();
    let a = evaluate(&net, &samples, 0.5, 4).unwrap();
    let b = evaluate(&net, &samples, 0.5, 3).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.rows.len(), 10);
    assert_eq!(a.predictions.len(), 10);
    assert!(a.predictions.iter().all(|m| (m.height(), m.width()) == (224, 192)));
    assert_eq!(a.mode_a.n_rows, 10);
    assert!((0.0..=1.0).contains(&a.soft_dice));
}

#[test]
fn resume_rejects_missing_epoch() {
    let dir = tempfile::tempdir().unwrap();
    assert!(Trainer::resume(dir.path(), 2, TrainConfig::default()).is_err());
    assert!(TrainConfig {
        momentum: 1.0,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
}
