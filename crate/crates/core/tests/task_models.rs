use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawdrift::isp_param::{default_params, raw_batch, ParamGroup, ParamGroupMask, PipelineParams};
use rawdrift::isp_static::{process_static, StaticConfig};
use rawdrift::raw_io::{synth_dataset, DatasetKind, DatasetSpec, RawImage};
use rawdrift::task_models::{
    batch_schedule, checkpoint_from_str, checkpoint_to_string, evaluate, fit, iou, loss, metrics_from_csv,
    metrics_to_csv, train_step, Architecture, Batch, BatchInput, LossKind, Metric, MetricRecord, OptimizerConfig,
    OptimizerState, PipelineTrainer, Sample, Target, Targets, TaskError, TaskModel,
};
use rawdrift::tensorcore::{finite_diff_grad, relative_error, Tape, Tensor};

fn rand_tensor(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn rand_mask(seed: u64, n: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect()
}

#[test]
fn classifier_and_segmenter_shapes() {
    let c = TaskModel::<f64>::classifier(3, 1);
    assert!(c.param_count() < 10_000);
    assert_eq!(c.predict(&rand_tensor(0, &[2, 3, 16, 16], 0.0, 1.0)).unwrap().shape(), &[2, 3]);
    let s = TaskModel::<f64>::segmenter(1);
    assert!(s.param_count() < 10_000);
    assert_eq!(s.predict(&rand_tensor(0, &[2, 3, 16, 12], 0.0, 1.0)).unwrap().shape(), &[2, 1, 16, 12]);
    assert!(c.predict(&rand_tensor(0, &[2, 1, 16, 16], 0.0, 1.0)).is_err());
}

#[test]
fn zero_weights_give_zero_logits() {
    let x = rand_tensor(4, &[2, 3, 8, 8], 0.0, 1.0);
    for arch in [Architecture::Classifier { classes: 4 }, Architecture::Segmenter] {
        let m = TaskModel::<f64>::zeros(arch);
        assert!(m.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn initialisation_is_seeded_and_bounded() {
    let a = TaskModel::<f32>::classifier(2, 9);
    let b = TaskModel::<f32>::classifier(2, 9);
    let c = TaskModel::<f32>::classifier(2, 10);
    assert_eq!(a.to_bits(), b.to_bits());
    assert_ne!(a.to_bits(), c.to_bits());
    let w = a.param("conv1.weight").unwrap();
    let bound = (6.0f32 / (27.0 + 72.0)).sqrt();
    assert!(w.data().iter().all(|v| v.abs() <= bound));
    assert!(a.param("conv1.bias").unwrap().data().iter().all(|&v| v == 0.0));
    let x = rand_tensor(1, &[1, 3, 8, 8], 0.0, 1.0).cast::<f32>();
    assert_eq!(a.predict(&x).unwrap().to_bits_vec(), b.predict(&x).unwrap().to_bits_vec());
}

fn first_layer_gradcheck(model: TaskModel<f64>, x: Tensor<f64>, targets: Targets<f64>) {
    let kind = targets.natural_loss();
    let loss_with = |w: &Tensor<f64>| {
        let mut m = model.clone();
        *m.params_mut().first_mut().unwrap() = w.clone();
        let mut tape = Tape::new();
        let vars = m.record(&mut tape, false);
        let xi = tape.constant(x.clone());
        let z = m.forward(&mut tape, &vars, xi).unwrap();
        let l = loss(&mut tape, z, &targets, kind).unwrap();
        tape.value(l).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars = model.record(&mut tape, true);
    let xi = tape.constant(x.clone());
    let z = model.forward(&mut tape, &vars, xi).unwrap();
    let l = loss(&mut tape, z, &targets, kind).unwrap();
    let grads = tape.backward(l).unwrap();
    let analytic = grads.get(vars.as_slice()[0]).unwrap();
    let numeric = finite_diff_grad(loss_with, &model.params()[0], 1e-5);
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        assert!(relative_error(*a, *n, 1e-6) <= 1e-4, "{a} vs {n}");
    }
}

#[test]
fn classifier_first_layer_gradient_matches_finite_differences() {
    let model = TaskModel::<f64>::classifier(3, 5);
    first_layer_gradcheck(model, rand_tensor(6, &[2, 3, 8, 8], 0.0, 1.0), Targets::Classes(vec![0, 2]));
}

#[test]
fn segmenter_first_layer_gradient_matches_finite_differences() {
    let model = TaskModel::<f64>::segmenter(5);
    let mask: Vec<f64> = rand_mask(8, 2 * 64).into_iter().map(f64::from).collect();
    first_layer_gradcheck(model, rand_tensor(7, &[2, 3, 8, 8], 0.0, 1.0), Targets::Masks(Arc::from(mask)));
}

#[test]
fn uniform_logits_give_log_k() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::zeros(&[3, 5]));
    let l = loss(&mut tape, z, &Targets::Classes(vec![0, 4, 2]), LossKind::CrossEntropy).unwrap();
    assert!((tape.value(l).item().unwrap() - 5f64.ln()).abs() < 1e-12);
    let bad = loss(&mut tape, z, &Targets::Classes(vec![0, 5, 2]), LossKind::CrossEntropy);
    assert!(bad.is_err());
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = rand_tensor(3, &[2, 4], -2.0, 2.0);
    let targets = vec![1usize, 3];
    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone(), true);
    let l = loss(&mut tape, z, &Targets::Classes(targets.clone()), LossKind::CrossEntropy).unwrap();
    let g = tape.backward(l).unwrap();
    let g = g.get(z).unwrap();
    for (i, row) in logits.data().chunks(4).enumerate() {
        let s: f64 = row.iter().map(|v| v.exp()).sum();
        for k in 0..4 {
            let expected = (row[k].exp() / s - f64::from(u8::from(k == targets[i]))) / 2.0;
            assert!((g.data()[i * 4 + k] - expected).abs() < 1e-12);
        }
    }
    let fd = finite_diff_grad(
        |t| {
            let mut tape = Tape::new();
            let z = tape.constant(t.clone());
            let l = loss(&mut tape, z, &Targets::Classes(targets.clone()), LossKind::CrossEntropy).unwrap();
            tape.value(l).item().unwrap()
        },
        &logits,
        1e-5,
    );
    for (a, b) in g.data().iter().zip(fd.data()) {
        assert!(relative_error(*a, *b, 1e-6) <= 1e-6);
    }
}

#[test]
fn perfect_mask_prediction_drives_dice_term_to_zero() {
    let mask = rand_mask(2, 64);
    let logits = Tensor::from_fn(&[1, 1, 8, 8], |i| if mask[i] == 1 { 40.0 } else { -40.0 });
    let y: Vec<f64> = mask.iter().map(|&b| f64::from(b)).collect();
    let mut tape = Tape::new();
    let z = tape.constant(logits);
    let l = loss(&mut tape, z, &Targets::Masks(Arc::from(y)), LossKind::BceDice).unwrap();
    let v = tape.value(l).item().unwrap();
    assert!((0.0..1e-12).contains(&v), "{v}");
}

#[test]
fn losses_are_non_negative_and_sq_l2_is_half_squared_norm() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
    let t = Tensor::from_f64(&[3], &[0.0, 0.0, 0.5]).unwrap();
    let l = loss(&mut tape, z, &Targets::Values(t), LossKind::SqL2).unwrap();
    assert_eq!(tape.value(l).item().unwrap(), 2.5);
    let logits = tape.constant(rand_tensor(9, &[1, 1, 4, 4], -3.0, 3.0));
    let m: Vec<f64> = rand_mask(9, 16).into_iter().map(f64::from).collect();
    let l = loss(&mut tape, logits, &Targets::Masks(Arc::from(m)), LossKind::BceDice).unwrap();
    assert!(tape.value(l).item().unwrap() >= 0.0);
    assert!(loss(&mut tape, logits, &Targets::Classes(vec![0]), LossKind::BceDice).is_err());
}

fn class_samples(seed: u64, n: usize, size: usize) -> Vec<Sample<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Sample {
            view: Tensor::from_fn(&[3, size, size], |_| rng.gen_range(0.0..1.0)),
            target: Target::Class(i % 2),
        })
        .collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let samples = class_samples(1, 8, 8);
    for config in [OptimizerConfig::sgd(0.0), OptimizerConfig::adam(0.0)] {
        let mut model = TaskModel::<f64>::classifier(2, 3);
        let before = model.to_bits();
        let mut opt = OptimizerState::new(config, 0);
        fit(&mut model, &mut opt, &samples, 5, 4).unwrap();
        assert_eq!(model.to_bits(), before);
        assert_eq!(opt.step(), 5);
    }
}

#[test]
fn sgd_step_on_half_squared_norm_scales_weights() {
    let lr = 0.1;
    let w0 = rand_tensor(5, &[6], -1.0, 1.0);
    let mut w = w0.clone();
    let mut opt = OptimizerState::new(OptimizerConfig::sgd(lr), 0);
    let mut tape = Tape::new();
    let v = tape.leaf(w.clone(), true);
    let sq = tape.sq_l2(v);
    let l = tape.scale(sq, 0.5);
    let g = tape.backward(l).unwrap();
    opt.begin_step();
    opt.update("w", &mut w, g.get(v).unwrap());
    for (a, b) in w.data().iter().zip(w0.data()) {
        assert!((a - b * (1.0 - lr)).abs() < 1e-15);
    }
}

#[test]
fn adam_converges_on_a_quadratic() {
    // f(w) = ½(w₀² + 10·w₁²) from (1, 1).
    let mut w = Tensor::<f64>::from_f64(&[2], &[1.0, 1.0]).unwrap();
    let mut opt = OptimizerState::new(OptimizerConfig::adam(0.05), 0);
    let grad = |w: &Tensor<f64>| Tensor::from_f64(&[2], &[w.data()[0], 10.0 * w.data()[1]]).unwrap();
    let mut reached = None;
    for step in 1..=500 {
        let g = grad(&w);
        if g.data().iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-3 {
            reached = Some(step);
            break;
        }
        opt.begin_step();
        opt.update("w", &mut w, &g);
    }
    assert!(reached.is_some(), "final w = {:?}", w.data());
}

#[test]
fn adam_first_step_moves_each_coordinate_by_lr() {
    let mut w = Tensor::<f64>::from_f64(&[3], &[0.5, -0.5, 2.0]).unwrap();
    let g = Tensor::from_f64(&[3], &[3.0, -0.01, 100.0]).unwrap();
    let mut opt = OptimizerState::new(OptimizerConfig::adam(0.01), 0);
    opt.begin_step();
    opt.update("w", &mut w, &g);
    for (a, b) in w.data().iter().zip([0.49, -0.49, 1.99]) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn non_finite_loss_aborts_the_step() {
    let samples = class_samples(2, 4, 8);
    let mut model = TaskModel::<f64>::classifier(2, 3);
    model.param_mut("fc.bias").unwrap().data_mut()[0] = f64::INFINITY;
    let before = model.to_bits();
    let mut opt = OptimizerState::new(OptimizerConfig::default(), 0);
    let items: Vec<&Sample<f64>> = samples.iter().collect();
    let batch = Batch::from_samples(&items).unwrap();
    let err = train_step(&mut model, &mut opt, &batch, None).unwrap_err();
    assert!(matches!(err, TaskError::NumericAbort { step: 1, .. }), "{err}");
    assert_eq!(model.to_bits(), before);
    assert_eq!(opt.step(), 0);
}

#[test]
fn joint_step_updates_only_unmasked_groups() {
    let raws: Vec<RawImage<f64>> = synth_dataset(&DatasetSpec {
        kind: DatasetKind::Shapes,
        count: 4,
        size: 16,
        seed: 3,
        cfa: Default::default(),
    })
    .unwrap();
    let refs: Vec<&RawImage<f64>> = raws.iter().collect();
    let (raw, cfa) = raw_batch(&refs).unwrap();
    let batch = Batch {
        input: BatchInput::Raw { raw, cfa },
        targets: Targets::Classes(raws.iter().map(|r| r.class_id().unwrap() as usize).collect()),
    };
    let mut model = TaskModel::<f64>::classifier(2, 1);
    let mut opt = OptimizerState::new(OptimizerConfig::default(), 0);
    let mut params: PipelineParams<f64> = default_params();
    params.output_standardize = true;
    let before = params.clone();
    let mut popt = OptimizerState::new(OptimizerConfig::adam(1e-2), 0);
    let mask = ParamGroupMask::only(&[ParamGroup::WhiteBalance, ParamGroup::Gamma]);
    let trainer = PipelineTrainer {
        params: &mut params,
        mask,
        optimizer: &mut popt,
    };
    train_step(&mut model, &mut opt, &batch, Some(trainer)).unwrap();
    for g in ParamGroup::ALL {
        let changed = params.group(g) != before.group(g);
        assert_eq!(changed, mask.contains(g), "{g}");
    }
    assert_eq!(popt.step(), 1);
}

#[test]
fn views_and_raw_inputs_are_not_interchangeable() {
    let samples = class_samples(2, 2, 8);
    let items: Vec<&Sample<f64>> = samples.iter().collect();
    let batch = Batch::from_samples(&items).unwrap();
    let mut model = TaskModel::<f64>::classifier(2, 3);
    let mut opt = OptimizerState::new(OptimizerConfig::default(), 0);
    let mut params = default_params::<f64>();
    let mut popt = OptimizerState::new(OptimizerConfig::default(), 0);
    let trainer = PipelineTrainer {
        params: &mut params,
        mask: ParamGroupMask::all(),
        optimizer: &mut popt,
    };
    assert!(train_step(&mut model, &mut opt, &batch, Some(trainer)).is_err());
}

#[test]
fn iou_special_cases() {
    let truth = rand_mask(1, 64);
    let t: Vec<bool> = truth.iter().map(|&b| b == 1).collect();
    assert_eq!(iou(&t, &t), 1.0);
    let complement: Vec<bool> = t.iter().map(|b| !b).collect();
    assert_eq!(iou(&complement, &t), 0.0);
    assert_eq!(iou(&[false; 4], &[false; 4]), 1.0);
}

proptest! {
    #[test]
    fn iou_matches_set_computation(a in any::<u64>(), b in any::<u64>()) {
        let pa: Vec<bool> = (0..64).map(|i| a >> i & 1 == 1).collect();
        let pb: Vec<bool> = (0..64).map(|i| b >> i & 1 == 1).collect();
        let sa: HashSet<(usize, usize)> = (0..64).filter(|&i| pa[i]).map(|i| (i / 8, i % 8)).collect();
        let sb: HashSet<(usize, usize)> = (0..64).filter(|&i| pb[i]).map(|i| (i / 8, i % 8)).collect();
        let union = sa.union(&sb).count();
        let expected = if union == 0 { 1.0 } else { sa.intersection(&sb).count() as f64 / union as f64 };
        prop_assert_eq!(iou(&pa, &pb), expected);
    }
}

#[test]
fn all_correct_predictions_score_one() {
    let mut model = TaskModel::<f64>::zeros(Architecture::Classifier { classes: 3 });
    model.param_mut("fc.bias").unwrap().data_mut()[2] = 1.0;
    let samples: Vec<Sample<f64>> = class_samples(1, 5, 8)
        .into_iter()
        .map(|s| Sample {
            target: Target::Class(2),
            ..s
        })
        .collect();
    assert_eq!(evaluate(&model, &samples, Metric::Accuracy, 2).unwrap(), 1.0);
    assert!(matches!(evaluate(&model, &[], Metric::Accuracy, 2), Err(TaskError::EmptyDataset)));

    let mut seg = TaskModel::<f64>::zeros(Architecture::Segmenter);
    seg.param_mut("head.bias").unwrap().data_mut()[0] = 1.0;
    let full = Sample {
        view: Tensor::zeros(&[3, 8, 8]),
        target: Target::Mask(vec![1; 64]),
    };
    assert_eq!(evaluate(&seg, &[full], Metric::Iou, 1).unwrap(), 1.0);
}

#[test]
fn metrics_are_permutation_invariant() {
    let model = TaskModel::<f64>::segmenter(4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples: Vec<Sample<f64>> = (0..9)
        .map(|i| Sample {
            view: Tensor::from_fn(&[3, 8, 8], |_| rng.gen_range(0.0..1.0)),
            target: Target::Mask(rand_mask(i, 64)),
        })
        .collect();
    let a = evaluate(&model, &samples, Metric::Iou, 4).unwrap();
    let mut shuffled = samples.clone();
    shuffled.reverse();
    shuffled.swap(0, 4);
    assert_eq!(evaluate(&model, &shuffled, Metric::Iou, 3).unwrap().to_bits(), a.to_bits());
}

#[test]
fn batch_schedule_is_deterministic_and_covers_each_epoch() {
    let a = batch_schedule(10, 5, 6, 42);
    assert_eq!(a, batch_schedule(10, 5, 6, 42));
    assert_ne!(a, batch_schedule(10, 5, 6, 43));
    assert_eq!(a.len(), 6);
    for epoch in a.chunks(2) {
        let mut all: Vec<usize> = epoch.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let mut model = TaskModel::<f64>::segmenter(7);
    model.param_mut("head.bias").unwrap().data_mut()[0] = 0.1 + 0.2;
    let text = checkpoint_to_string(&model).unwrap();
    assert_eq!(checkpoint_from_str::<f64>(&text).unwrap().to_bits(), model.to_bits());
    let m32 = TaskModel::<f32>::classifier(4, 7);
    let back = checkpoint_from_str::<f32>(&checkpoint_to_string(&m32).unwrap()).unwrap();
    assert_eq!(back, m32);
    assert!(checkpoint_from_str::<f64>(&text.replace("segmenter", "classifier")).is_err());
    assert!(checkpoint_from_str::<f64>(&format!("{text}\nextra = 1\n")).is_err());
}

#[test]
fn metric_log_round_trip() {
    let records = vec![
        MetricRecord::new(0, "train", "loss", 0.6875, 3),
        MetricRecord::new(10, "test", "accuracy", 0.75, 3),
    ];
    let csv = metrics_to_csv(&records).unwrap();
    assert!(csv.starts_with("step,split,metric,value,seed\n"), "{csv}");
    assert_eq!(metrics_from_csv(&csv).unwrap(), records);
    assert_eq!(metrics_to_csv(&[]).unwrap(), "step,split,metric,value,seed\n");
}

#[test]
fn shapes_become_separable_after_short_training() {
    let spec = DatasetSpec {
        kind: DatasetKind::Shapes,
        count: 96,
        size: 32,
        seed: 5,
        cfa: Default::default(),
    };
    let raws: Vec<RawImage<f32>> = synth_dataset(&spec).unwrap();
    let config = StaticConfig::from_abbrev("bi,s,ga").unwrap();
    let samples: Vec<Sample<f32>> = raws
        .iter()
        .map(|r| Sample::new(&process_static(r, &config).unwrap(), Target::Class(r.class_id().unwrap() as usize)))
        .collect();
    let (train, test) = samples.split_at(64);
    let mut model = TaskModel::<f32>::classifier(2, 0);
    let mut opt = OptimizerState::new(OptimizerConfig::adam(1e-2), 0);
    fit(&mut model, &mut opt, train, 200, 16).unwrap();
    let acc = evaluate(&model, test, Metric::Accuracy, 16).unwrap();
    assert!(acc >= 0.95, "held-out accuracy {acc}");
}
