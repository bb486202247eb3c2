use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{BiGru, Conv2d, Dense, GruDirection};
use super::*;
use crate::Error;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Central differences on up to `per_tensor` entries of every parameter.
/// Returns the worst relative error `|a - n| / max(|a|, |n|, 1e-6)`.
fn worst_fd_error(
    params: &ParamSet<f64>,
    per_tensor: usize,
    build: impl Fn(&mut Graph<'_, f64>, &[Var]) -> crate::Result<Var>,
) -> f64 {
    let eval = |p: &ParamSet<f64>| {
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let out = build(&mut g, &vars).unwrap();
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let out = build(&mut g, &vars).unwrap();
    g.backward(out).unwrap();
    let analytic = g.param_grads(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let n = params.get(i).len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        for j in picks {
            let mut plus = params.clone();
            plus.get_mut(i).data_mut()[j] += h;
            let mut minus = params.clone();
            minus.get_mut(i).data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[i].as_ref().map_or(0.0, |g| g[j]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; o * h * wd];
    for oc in 0..o {
        for y in 0..h {
            for xx in 0..wd {
                let mut s = b.data()[oc];
                for ic in 0..c {
                    for ki in 0..k {
                        for kj in 0..k {
                            let sy = y as isize + ki as isize - pad;
                            let sx = xx as isize + kj as isize - pad;
                            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                s += w.data()[((oc * c + ic) * k + ki) * k + kj]
                                    * x.data()[(ic * h + sy as usize) * wd + sx as usize];
                            }
                        }
                    }
                }
                out[(oc * h + y) * wd + xx] = s;
            }
        }
    }
    out
}

#[test]
fn conv_output_shape_and_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[1, 512, 20]);
    let mut init = Initializer::new(0);
    let mut p = ParamSet::new();
    let conv = Conv2d::new(&mut p, &mut init, "c", 1, 16, 5).unwrap();
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let xv = g.constant(x.clone());
    let y = conv.forward(&mut g, &vars, xv).unwrap();
    assert_eq!(g.shape(y), &[16, 512, 20]);

    let mut delta = vec![0.0; 25];
    delta[12] = 1.0;
    let w = Tensor::new(&[1, 1, 5, 5], delta).unwrap();
    let b = Tensor::zeros(&[1]);
    let small = random(&mut rng, &[1, 9, 6]);
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(small.clone()), g.constant(w), g.constant(b));
    let y = g.conv2d(xv, wv, bv).unwrap();
    assert_eq!(g.value(y).data(), small.data());
}

#[test]
fn conv_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (c, o) in [(1, 1), (1, 3), (2, 4)] {
        let x = random(&mut rng, &[c, 7, 5]);
        let w = random(&mut rng, &[o, c, 5, 5]);
        let b = random(&mut rng, &[o]);
        let expected = naive_conv(&x, &w, &b);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
        let y = g.conv2d(xv, wv, bv).unwrap();
        for (a, e) in g.value(y).data().iter().zip(&expected) {
            assert!((a - e).abs() <= 1e-10);
        }
    }
}

#[test]
fn conv_rejects_bad_shapes() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[3, 1, 5, 5]));
    let b = g.constant(Tensor::zeros(&[3]));
    assert!(matches!(g.conv2d(x, w, b), Err(Error::Shape(_))));
}

#[test]
fn maxpool_sizes_and_errors() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::zeros(&[16, 512, 20]));
    let y = g.maxpool_freq(x, 5).unwrap();
    assert_eq!(g.shape(y), &[16, 102, 20]);
    let x = g.constant(Tensor::new(&[1, 30, 2], vec![0.5; 60]).unwrap());
    let y = g.maxpool_freq(x, 3).unwrap();
    assert_eq!(g.shape(y), &[1, 10, 2]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.5));
    let x = g.constant(Tensor::zeros(&[1, 2, 2]));
    assert!(matches!(g.maxpool_freq(x, 3), Err(Error::Shape(_))));
}

#[test]
fn maxpool_ties_route_to_lowest_index() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.variable(Tensor::new(&[1, 3, 1], vec![2.0, 2.0, 1.0]).unwrap());
    let y = g.maxpool_freq(x, 3).unwrap();
    let s = g.sum(&[y]).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0]);
}

fn scalar_gru(p: &mut ParamSet<f64>) -> GruDirection {
    let mut init = Initializer::new(0);
    let d = GruDirection::new(p, &mut init, "g", 1, 1).unwrap();
    // w_ih = [r, z, n], w_hh likewise
    *p.get_mut(d.w_ih) = Tensor::new(&[3, 1], vec![0.5, -0.3, 0.8]).unwrap();
    *p.get_mut(d.w_hh) = Tensor::new(&[3, 1], vec![0.2, 0.4, -0.6]).unwrap();
    *p.get_mut(d.b_ih) = Tensor::new(&[3], vec![0.1, 0.0, -0.2]).unwrap();
    *p.get_mut(d.b_hh) = Tensor::new(&[3], vec![0.0, 0.05, 0.3]).unwrap();
    d
}

#[test]
fn gru_single_step_matches_hand_arithmetic() {
    let mut p = ParamSet::new();
    let d = scalar_gru(&mut p);
    let x = 1.5f64;
    // h0 = 0, so recurrent products vanish and only b_hh contributes.
    let s = |v: f64| 1.0 / (1.0 + (-v).exp());
    let r = s(0.5 * x + 0.1 + 0.0);
    let z = s(-0.3 * x + 0.0 + 0.05);
    let n = (0.8 * x - 0.2 + r * 0.3).tanh();
    let h1 = (1.0 - z) * n;
    // second step with x = -1
    let x2 = -1.0;
    let r2 = s(0.5 * x2 + 0.1 + 0.2 * h1);
    let z2 = s(-0.3 * x2 + 0.4 * h1 + 0.05);
    let n2 = (0.8 * x2 - 0.2 + r2 * (-0.6 * h1 + 0.3)).tanh();
    let h2 = (1.0 - z2) * n2 + z2 * h1;

    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let seq = g.constant(Tensor::new(&[2, 1], vec![x, x2]).unwrap());
    let out = d.run(&mut g, &vars, seq, false).unwrap();
    assert!((g.value(out[0]).data()[0] - h1).abs() < 1e-15);
    assert!((g.value(out[1]).data()[0] - h2).abs() < 1e-15);
}

#[test]
fn bigru_zero_fixed_point() {
    let mut init = Initializer::new(4);
    let mut p: ParamSet<f64> = ParamSet::new();
    let bi = BiGru::new(&mut p, &mut init, "bi", 3, 4).unwrap();
    let zeroed: Vec<_> = (0..p.len()).map(|i| Tensor::zeros(p.get(i).shape())).collect();
    for (i, z) in zeroed.into_iter().enumerate() {
        *p.get_mut(i) = z;
    }
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let seq = g.constant(Tensor::zeros(&[20, 3]));
    let y = bi.forward(&mut g, &vars, seq).unwrap();
    assert_eq!(g.shape(y), &[20, 8]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn bigru_time_reversal_swaps_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut init = Initializer::new(5);
    let mut p: ParamSet<f64> = ParamSet::new();
    let bi = BiGru::new(&mut p, &mut init, "bi", 3, 4).unwrap();
    let seq = random(&mut rng, &[6, 3]);
    let run = |p: &ParamSet<f64>, s: Tensor<f64>| {
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let sv = g.constant(s);
        let y = bi.forward(&mut g, &vars, sv).unwrap();
        g.value(y).clone()
    };
    let original = run(&p, seq.clone());
    let mut swapped = p.clone();
    for (f, b) in [
        (bi.forward.w_ih, bi.backward.w_ih),
        (bi.forward.w_hh, bi.backward.w_hh),
        (bi.forward.b_ih, bi.backward.b_ih),
        (bi.forward.b_hh, bi.backward.b_hh),
    ] {
        *swapped.get_mut(f) = p.get(b).clone();
        *swapped.get_mut(b) = p.get(f).clone();
    }
    let rev: Vec<f64> = (0..6).rev().flat_map(|t| seq.data()[t * 3..t * 3 + 3].to_vec()).collect();
    let mirrored = run(&swapped, Tensor::new(&[6, 3], rev).unwrap());
    for t in 0..6 {
        let o = &original.data()[(5 - t) * 8..(6 - t) * 8];
        let m = &mirrored.data()[t * 8..(t + 1) * 8];
        for j in 0..4 {
            assert!((m[j] - o[4 + j]).abs() < 1e-14);
            assert!((m[4 + j] - o[j]).abs() < 1e-14);
        }
    }
}

#[test]
fn dense_identity_and_naive_product() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
    let eye = g.constant(Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
    let zero = g.constant(Tensor::zeros(&[3]));
    let y = g.linear(x, eye, Some(zero)).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, -2.0, 0.5]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random(&mut rng, &[4, 3]);
    let b = random(&mut rng, &[4]);
    let xv = random(&mut rng, &[3]);
    let mut expected = vec![0.0; 4];
    for i in 0..4 {
        expected[i] = b.data()[i];
        for j in 0..3 {
            expected[i] += w.data()[i * 3 + j] * xv.data()[j];
        }
    }
    let mut g: Graph<f64> = Graph::new();
    let (xx, ww, bb) = (g.constant(xv), g.constant(w), g.constant(b));
    let y = g.linear(xx, ww, Some(bb)).unwrap();
    for (a, e) in g.value(y).data().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-14);
    }
    let bad = g.constant(Tensor::zeros(&[5]));
    assert!(matches!(g.linear(bad, ww, None), Err(Error::Shape(_))));
}

#[test]
fn softmax_normalizes_and_is_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let p = softmax(&z);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        let shifted: Vec<f64> = z.iter().map(|v| v + 7.5).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn loss_examples() {
    let l = batch_loss(
        &[vec![2.0f64, 5.0]],
        &[Target::Values(vec![1.0, 7.0])],
        LossKind::MeanSquaredError,
    )
    .unwrap();
    assert!((l - 2.5).abs() < 1e-15);
    let perfect = batch_loss(&[vec![0.0f64, 1.0, 0.0, 0.0]], &[Target::Class(1)], LossKind::CrossEntropy).unwrap();
    assert!(perfect <= 1e-10);
    let uniform = batch_loss(&[vec![0.25f64; 4]], &[Target::Class(3)], LossKind::CrossEntropy).unwrap();
    assert!((uniform - 4f64.ln()).abs() < 1e-12);
    assert!(matches!(
        batch_loss(&[vec![0.25f64; 4]], &[Target::Class(4)], LossKind::CrossEntropy),
        Err(Error::Range(_))
    ));
    let mut g: Graph<f64> = Graph::new();
    let p = g.constant(Tensor::new(&[4], vec![0.25; 4]).unwrap());
    assert!(matches!(g.cross_entropy(p, 9), Err(Error::Range(_))));
    let q = g.constant(Tensor::new(&[2], vec![2.0, 5.0]).unwrap());
    let m = g.mse(q, &[1.0, 7.0]).unwrap();
    assert_eq!(g.value(m).data(), &[2.5]);
}

#[test]
fn square_gradient_and_off_path_zero() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.variable(Tensor::scalar(3.0));
    let unused = g.variable(Tensor::scalar(1.0));
    let y = g.mul(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0]);
    assert!(g.grad(unused).is_none_or(|d| d == [0.0]));

    let mut p = ParamSet::new();
    p.add("on", Tensor::scalar(2.0)).unwrap();
    p.add("off", Tensor::scalar(5.0)).unwrap();
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let y = g.mul(vars[0], vars[0]).unwrap();
    let l = g.mse(y, &[1.0]).unwrap();
    g.backward(l).unwrap();
    let grads = g.param_grads(2);
    assert!(grads[0].is_some());
    assert!(grads[1].as_ref().is_none_or(|d| d[0] == 0.0));
}

#[test]
fn finite_differences_per_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut init = Initializer::new(22);

    // conv + pool + relu
    let mut p = ParamSet::new();
    let conv = Conv2d::new(&mut p, &mut init, "c", 2, 3, 5).unwrap();
    let xi = p.add("x", random(&mut rng, &[2, 9, 4])).unwrap();
    let err = worst_fd_error(&p, 30, |g, v| {
        let y = conv.forward(g, v, v[xi])?;
        let y = g.maxpool_freq(y, 3)?;
        let y = g.relu(y);
        let n = g.value(y).len();
        let target = vec![0.3; n];
        g.mse(y, &target)
    });
    assert!(err <= 1e-4, "conv {err}");

    // bigru + dense + sigmoid
    let mut p = ParamSet::new();
    let bi = BiGru::new(&mut p, &mut init, "bi", 3, 4).unwrap();
    let dense = Dense::new(&mut p, &mut init, "d", 8, 1).unwrap();
    let xi = p.add("x", random(&mut rng, &[5, 3])).unwrap();
    let err = worst_fd_error(&p, 30, |g, v| {
        let y = bi.forward(g, v, v[xi])?;
        let last = g.row(y, 4)?;
        let o = dense.forward(g, v, last)?;
        let o = g.sigmoid(o);
        g.mse(o, &[1.0])
    });
    assert!(err <= 1e-4, "bigru {err}");

    // dense + softmax + cross-entropy, plus tanh / affine / transpose plumbing
    let mut p = ParamSet::new();
    let dense = Dense::new(&mut p, &mut init, "d", 6, 4).unwrap();
    let xi = p.add("x", random(&mut rng, &[2, 3])).unwrap();
    let err = worst_fd_error(&p, 30, |g, v| {
        let t = g.transpose(v[xi])?;
        let flat = g.reshape(t, &[6])?;
        let h = g.tanh(flat);
        let h = g.affine(h, 1.5, -0.2);
        let z = dense.forward(g, v, h)?;
        let probs = g.softmax(z);
        g.cross_entropy(probs, 2)
    });
    assert!(err <= 1e-4, "dense/ce {err}");
}
