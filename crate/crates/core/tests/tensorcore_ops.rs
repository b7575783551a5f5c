use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawdrift::tensorcore::{
    finite_diff_grad, relative_error, ElementwiseOp, Operand, Padding, ReduceOp, Tape, Tensor,
    TensorError, Var,
};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Direct double-loop correlation used as an independent oracle.
fn loop_filter(x: &Tensor<f64>, k: &[f64], ks: usize, padding: Padding) -> Vec<f64> {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let r = (ks / 2) as isize;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h as isize {
            for xx in 0..w as isize {
                let mut acc = 0.0;
                for i in 0..ks as isize {
                    for j in 0..ks as isize {
                        let (mut sy, mut sx) = (y + i - r, xx + j - r);
                        let inside = sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize;
                        if !inside {
                            match padding {
                                Padding::Zero => continue,
                                Padding::Reflect => {
                                    if sy < 0 {
                                        sy = -sy;
                                    }
                                    if sy >= h as isize {
                                        sy = 2 * (h as isize - 1) - sy;
                                    }
                                    if sx < 0 {
                                        sx = -sx;
                                    }
                                    if sx >= w as isize {
                                        sx = 2 * (w as isize - 1) - sx;
                                    }
                                }
                            }
                        }
                        acc += k[(i * ks as isize + j) as usize]
                            * x.data()[ch * h * w + sy as usize * w + sx as usize];
                    }
                }
                out[ch * h * w + y as usize * w + xx as usize] = acc;
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for padding in [Padding::Zero, Padding::Reflect] {
        let x = rand_tensor(&mut rng, &[2, 4, 4], -1.0, 1.0);
        let k = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let kv = tape.constant(k.clone());
        let y = tape.filter2d(xv, kv, padding).unwrap();
        let oracle = loop_filter(&x, k.data(), 3, padding);
        for (a, b) in tape.value(y).data().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12, "{padding:?}: {a} vs {b}");
        }
    }
}

#[test]
fn conv2d_constant_image_with_sum_one_kernel_is_preserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for ks in [3usize, 5] {
        let mut k: Vec<f64> = (0..ks * ks).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        let x = Tensor::full(&[3, 6, 8], 0.37);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let kv = tape.constant(Tensor::new(&[ks, ks], k).unwrap());
        let y = tape.filter2d(xv, kv, Padding::Reflect).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 0.37).abs() < 1e-15);
        }
    }
}

#[test]
fn conv2d_delta_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[1, 3, 5, 7], -2.0, 2.0);
    let mut delta = vec![0.0; 9];
    delta[4] = 1.0;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let kv = tape.constant(Tensor::new(&[3, 3], delta).unwrap());
    for padding in [Padding::Zero, Padding::Reflect] {
        let y = tape.filter2d(xv, kv, padding).unwrap();
        assert_eq!(tape.value(y), &x);
    }
}

#[test]
fn conv2d_even_kernel_is_rejected() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 4, 4]));
    let k = tape.constant(Tensor::zeros(&[2, 2]));
    assert_eq!(
        tape.filter2d(x, k, Padding::Zero).unwrap_err(),
        TensorError::EvenKernel(2)
    );
}

#[test]
fn channel_affine_examples() {
    let mut tape = Tape::<f64>::new();
    let px = tape.constant(Tensor::new(&[3, 1, 1], vec![0.1, 0.2, 0.3]).unwrap());
    let diag = tape.constant(
        Tensor::new(&[3, 3], vec![2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
    );
    let y = tape.channel_affine(px, diag).unwrap();
    assert_eq!(tape.value(y).data(), &[0.2, 0.2, 0.3]);

    let eye = tape.constant(
        Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
    );
    let z = tape.channel_affine(px, eye).unwrap();
    assert_eq!(tape.value(z).data(), tape.value(px).data());
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(&[3], vec![-0.5, 0.3, 4.0]).unwrap());
    let c = tape.elementwise(x, ElementwiseOp::Clip01, Operand::None).unwrap();
    assert_eq!(tape.value(c).data(), &[0.0, 0.3, 1.0]);

    let q = tape.constant(Tensor::scalar(0.25));
    let p = tape.elementwise(q, ElementwiseOp::Pow, Operand::Scalar(0.5)).unwrap();
    assert_eq!(tape.value(p).item().unwrap(), 0.5);

    let s = tape.elementwise(x, ElementwiseOp::Scale, Operand::Scalar(1.0)).unwrap();
    assert_eq!(tape.value(s), tape.value(x));

    let neg = tape.constant(Tensor::new(&[2], vec![-0.25, 0.5]).unwrap());
    assert!(matches!(
        tape.elementwise(neg, ElementwiseOp::Pow, Operand::Scalar(0.5)),
        Err(TensorError::Domain(_))
    ));
    // Integer exponents are fine on negative bases.
    let sq = tape.elementwise(neg, ElementwiseOp::Pow, Operand::Scalar(2.0)).unwrap();
    assert_eq!(tape.value(sq).data(), &[0.0625, 0.25]);
}

#[test]
fn reduce_examples() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
    let r = tape.reduce(a, ReduceOp::SqL2);
    assert_eq!(tape.value(r).item().unwrap(), 25.0);
    let b = tape.constant(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let m = tape.reduce(b, ReduceOp::Mean);
    assert_eq!(tape.value(m).item().unwrap(), 2.0);
    let z = tape.constant(Tensor::zeros(&[4, 4]));
    let zz = tape.reduce(z, ReduceOp::SqL2);
    assert_eq!(tape.value(zz).item().unwrap(), 0.0);
}

#[test]
fn backward_examples() {
    let mut tape = Tape::<f64>::new();
    let xt = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
    let w = tape.leaf(Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap(), true);
    let x = tape.constant(xt.clone());
    let wx = tape.mul(w, x).unwrap();
    let loss = tape.sum(wx);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(w).unwrap(), &xt);
    assert!(grads.get(x).is_none());

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(2.0), true);
    let c = tape.clip01(x);
    let l = tape.sq_l2(c);
    assert_eq!(tape.backward(l).unwrap().get(x).unwrap().item().unwrap(), 0.0);

    // Clip boundary convention: derivative 1 at exactly 0 and 1.
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(&[2], vec![0.0, 1.0]).unwrap(), true);
    let c = tape.clip01(x);
    let l = tape.sum(c);
    assert_eq!(tape.backward(l).unwrap().get(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn disconnected_loss_yields_empty_gradients() {
    let mut tape = Tape::<f64>::new();
    let _w = tape.leaf(Tensor::scalar(1.0), true);
    let x = tape.constant(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let l = tape.sum(x);
    assert!(tape.backward(l).unwrap().is_empty());
}

#[test]
fn gradient_accumulation_over_fan_out_is_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = rand_tensor(&mut rng, &[5], 0.1, 0.9);
    let f_only = |use_f: bool, use_g: bool| {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(x0.clone(), true);
        let f = tape.sq_l2(x);
        let c = tape.clip01(x);
        let g = tape.sum(c);
        let loss = match (use_f, use_g) {
            (true, true) => tape.add(f, g).unwrap(),
            (true, false) => f,
            _ => g,
        };
        tape.backward(loss).unwrap().get(x).unwrap().clone()
    };
    let both = f_only(true, true);
    let gf = f_only(true, false);
    let gg = f_only(false, true);
    for i in 0..5 {
        assert_eq!(both.data()[i], gf.data()[i] + gg.data()[i]);
    }
}

#[test]
fn gamma_gradient_is_zero_at_zero_base() {
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(Tensor::new(&[3], vec![0.0, 0.0, 0.5]).unwrap());
    let gamma = tape.leaf(Tensor::scalar(2.2), true);
    let inv = tape.recip(gamma);
    let out = tape.pow(v, inv).unwrap();
    let zero_only = tape.constant(Tensor::new(&[3], vec![1.0, 1.0, 0.0]).unwrap());
    let m = tape.mul(out, zero_only).unwrap();
    let l = tape.sum(m);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(gamma).unwrap().item().unwrap(), 0.0);
    assert!(tape.value(out).all_finite());
}

/// One differentiable op applied to random inputs, contracted with a random
/// weight to a scalar so every output coordinate contributes.
type Build = fn(&mut Tape<f64>, &[Var]) -> Var;

fn check_op(name: &str, shapes: &[&[usize]], ranges: &[(f64, f64)], build: Build) {
    let tol = 1e-4;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .zip(ranges)
            .map(|(s, (lo, hi))| rand_tensor(&mut rng, s, *lo, *hi))
            .collect();
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = build(&mut tape, &vars);
        let out_shape = tape.value(out).shape().to_vec();
        let weight = rand_tensor(&mut rng, &out_shape, -1.0, 1.0);
        let wv = tape.constant(weight.clone());
        let prod = tape.mul(out, wv).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();

        for (which, input) in inputs.iter().enumerate() {
            let fd = finite_diff_grad(
                |probe| {
                    let mut t = Tape::<f64>::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(i, x)| t.leaf(if i == which { probe.clone() } else { x.clone() }, false))
                        .collect();
                    let o = build(&mut t, &vs);
                    t.value(o)
                        .data()
                        .iter()
                        .zip(weight.data())
                        .map(|(a, b)| a * b)
                        .sum()
                },
                input,
                1e-5,
            );
            let g = grads.get(vars[which]).unwrap();
            for (a, b) in g.data().iter().zip(fd.data()) {
                let e = relative_error(*a, *b, 1e-6);
                assert!(e <= tol, "{name} input {which} seed {seed}: {a} vs {b} (rel {e:e})");
            }
        }
    }
}

#[test]
fn every_tape_op_matches_finite_differences() {
    check_op("add", &[&[4, 3], &[4, 3]], &[(-1.0, 1.0), (-1.0, 1.0)], |t, v| t.add(v[0], v[1]).unwrap());
    check_op("sub", &[&[4, 3], &[4, 3]], &[(-1.0, 1.0), (-1.0, 1.0)], |t, v| t.sub(v[0], v[1]).unwrap());
    check_op("mul", &[&[4, 3], &[4, 3]], &[(-1.0, 1.0), (-1.0, 1.0)], |t, v| t.mul(v[0], v[1]).unwrap());
    check_op("scale", &[&[6]], &[(-1.0, 1.0)], |t, v| t.scale(v[0], 1.7));
    check_op("add_scalar", &[&[6]], &[(-1.0, 1.0)], |t, v| t.add_scalar(v[0], 0.3));
    check_op("recip", &[&[6]], &[(0.5, 2.0)], |t, v| t.recip(v[0]));
    check_op("pow", &[&[8], &[]], &[(0.05, 1.0), (0.3, 1.5)], |t, v| t.pow(v[0], v[1]).unwrap());
    check_op("pow_const", &[&[8]], &[(0.05, 1.0)], |t, v| t.pow_const(v[0], 0.45).unwrap());
    check_op("relu", &[&[8]], &[(0.05, 1.0)], |t, v| t.relu(v[0]));
    check_op("clip01", &[&[8]], &[(0.01, 0.99)], |t, v| t.clip01(v[0]));
    check_op("sum", &[&[5]], &[(-1.0, 1.0)], |t, v| t.sum(v[0]));
    check_op("mean", &[&[5]], &[(-1.0, 1.0)], |t, v| t.mean(v[0]));
    check_op("sq_l2", &[&[5]], &[(-1.0, 1.0)], |t, v| t.sq_l2(v[0]));
    check_op("gather", &[&[4]], &[(-1.0, 1.0)], |t, v| {
        let idx: Arc<[Option<u32>]> = vec![Some(0), None, Some(3), Some(3), Some(1), None].into();
        t.gather(v[0], idx, &[2, 3]).unwrap()
    });
    check_op("channel_affine", &[&[2, 3, 3, 4], &[3, 3]], &[(-1.0, 1.0), (-1.0, 1.0)], |t, v| {
        t.channel_affine(v[0], v[1]).unwrap()
    });
    check_op("filter2d shared reflect", &[&[2, 3, 5, 6], &[3, 3]], &[(-1.0, 1.0), (-1.0, 1.0)], |t, v| {
        t.filter2d(v[0], v[1], Padding::Reflect).unwrap()
    });
    check_op("filter2d per-channel 5x5", &[&[1, 3, 6, 6], &[3, 5, 5]], &[(-1.0, 1.0), (-1.0, 1.0)], |t, v| {
        t.filter2d(v[0], v[1], Padding::Reflect).unwrap()
    });
    check_op("filter2d zero", &[&[1, 2, 4, 5], &[3, 3]], &[(-1.0, 1.0), (-1.0, 1.0)], |t, v| {
        t.filter2d(v[0], v[1], Padding::Zero).unwrap()
    });
    check_op(
        "conv2d",
        &[&[2, 3, 5, 4], &[4, 3, 3, 3], &[4]],
        &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
        |t, v| t.conv2d(v[0], v[1], v[2]).unwrap(),
    );
    check_op("max_pool2", &[&[2, 2, 4, 4]], &[(-1.0, 1.0)], |t, v| t.max_pool2(v[0]).unwrap());
    check_op("global_avg_pool", &[&[2, 3, 4, 2]], &[(-1.0, 1.0)], |t, v| t.global_avg_pool(v[0]).unwrap());
    check_op("upsample2", &[&[1, 2, 3, 2]], &[(-1.0, 1.0)], |t, v| t.upsample2(v[0]).unwrap());
    check_op("concat", &[&[2, 1, 3, 3], &[2, 2, 3, 3]], &[(-1.0, 1.0), (-1.0, 1.0)], |t, v| {
        t.concat_channels(v[0], v[1]).unwrap()
    });
    check_op("linear", &[&[3, 5], &[4, 5], &[4]], &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)], |t, v| {
        t.linear(v[0], v[1], v[2]).unwrap()
    });
    check_op("cross_entropy", &[&[4, 3]], &[(-2.0, 2.0)], |t, v| t.cross_entropy(v[0], &[0, 2, 1, 2]).unwrap());
    check_op("bce_dice", &[&[2, 1, 3, 3]], &[(-3.0, 3.0)], |t, v| {
        let mask: Arc<[f64]> = (0..18).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        t.bce_dice(v[0], mask, 1.0).unwrap()
    });
    check_op("standardize", &[&[2, 3, 3, 3]], &[(-1.0, 1.0)], |t, v| {
        t.standardize_channels(v[0], 1e-5).unwrap()
    });
}

#[test]
fn random_three_layer_composition_self_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x0 = rand_tensor(&mut rng, &[1, 2, 6, 6], -1.0, 1.0);
    let w1 = rand_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let w2 = rand_tensor(&mut rng, &[2, 3, 3, 3], -0.5, 0.5);
    let k = rand_tensor(&mut rng, &[3, 3], -0.5, 0.5);
    let f = |w1: &Tensor<f64>, tape: &mut Tape<f64>, trainable: bool| {
        let x = tape.constant(x0.clone());
        let a = tape.leaf(w1.clone(), trainable);
        let b0 = tape.constant(Tensor::zeros(&[3]));
        let h = tape.conv2d(x, a, b0).unwrap();
        let h = tape.relu(h);
        let c = tape.constant(w2.clone());
        let b1 = tape.constant(Tensor::zeros(&[2]));
        let h = tape.conv2d(h, c, b1).unwrap();
        let kv = tape.constant(k.clone());
        let h = tape.filter2d(h, kv, Padding::Reflect).unwrap();
        let l = tape.sq_l2(h);
        (a, l)
    };
    let mut tape = Tape::new();
    let (a, l) = f(&w1, &mut tape, true);
    let g = tape.backward(l).unwrap().get(a).unwrap().clone();
    let fd = finite_diff_grad(
        |p| {
            let mut t = Tape::new();
            let (_, l) = f(p, &mut t, false);
            t.value(l).item().unwrap()
        },
        &w1,
        1e-5,
    );
    for (x, y) in g.data().iter().zip(fd.data()) {
        assert!(relative_error(*x, *y, 1e-6) <= 1e-6, "{x} vs {y}");
    }
}

#[test]
fn replaying_a_tape_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = rand_tensor(&mut rng, &[1, 3, 8, 8], 0.0, 1.0);
    let k0 = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
    let run = || {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(x0.clone(), true);
        let k = tape.leaf(k0.clone(), true);
        let y = tape.filter2d(x, k, Padding::Reflect).unwrap();
        let y = tape.clip01(y);
        let l = tape.sq_l2(y);
        let g = tape.backward(l).unwrap();
        (
            tape.value(y).to_bits_vec(),
            g.get(x).unwrap().to_bits_vec(),
            g.get(k).unwrap().to_bits_vec(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.leaf(Tensor::zeros(&[2, 4]), true);
    let l = tape.cross_entropy(z, &[1, 3]).unwrap();
    assert!((tape.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-12);
    // gradient = (softmax - onehot) / n
    let g = tape.backward(l).unwrap();
    let gz = g.get(z).unwrap().data();
    assert!((gz[1] - (0.25 - 1.0) / 2.0).abs() < 1e-12);
    assert!((gz[0] - 0.25 / 2.0).abs() < 1e-12);
    assert!(matches!(
        tape.cross_entropy(z, &[0, 4]),
        Err(TensorError::TargetOutOfRange(4, 4))
    ));
}

#[test]
fn dice_term_vanishes_for_confident_correct_masks() {
    let mask: Arc<[f64]> = (0..64).map(|i| if i < 20 { 1.0 } else { 0.0 }).collect();
    let logits: Vec<f64> = mask.iter().map(|&m| if m > 0.5 { 40.0 } else { -40.0 }).collect();
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::new(&[1, 1, 8, 8], logits).unwrap());
    let l = tape.bce_dice(z, mask, 1.0).unwrap();
    let v = tape.value(l).item().unwrap();
    assert!((0.0..1e-9).contains(&v), "{v}");
}
