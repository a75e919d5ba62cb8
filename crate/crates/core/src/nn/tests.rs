use super::*;
use crate::gradcheck::{check, random_tensor};

/// Six-nested-loop cross-correlation with explicit zero padding.
fn brute_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c_in, h, wd) = x.dims4().unwrap();
    let (c_out, _, k, _) = w.dims4().unwrap();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * c_out * ho * wo];
    for bi in 0..n {
        for o in 0..c_out {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b.data()[o];
                    for c in 0..c_in {
                        for ki in 0..k {
                            for kj in 0..k {
                                let ii = (i * stride + ki) as isize - pad as isize;
                                let jj = (j * stride + kj) as isize - pad as isize;
                                if ii < 0 || jj < 0 || ii as usize >= h || jj as usize >= wd {
                                    continue;
                                }
                                acc += w.data()[((o * c_in + c) * k + ki) * k + kj]
                                    * x.data()[((bi * c_in + c) * h + ii as usize) * wd + jj as usize];
                            }
                        }
                    }
                    out[((bi * c_out + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, c_out, ho, wo], out).unwrap()
}

fn run_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.leaf(x), tape.leaf(w), tape.leaf(b));
    let y = conv2d(&mut tape, xv, wv, bv, stride, padding)?;
    Ok(tape.value(y).clone())
}

fn delta_kernel(c: usize) -> Tensor {
    let mut w = vec![0.0; c * c * 9];
    for i in 0..c {
        w[(i * c + i) * 9 + 4] = 1.0;
    }
    Tensor::from_vec(&[c, c, 3, 3], w).unwrap()
}

#[test]
fn identity_kernel_reproduces_input() {
    let x = random_tensor(&[2, 3, 5, 6], -1.0, 1.0, 1);
    let y = run_conv(&x, &delta_kernel(3), &Tensor::zeros(&[3]).unwrap(), 1, Padding::Same).unwrap();
    assert_eq!(y, x);
}

#[test]
fn all_ones_kernel_counts_neighbors() {
    let x = Tensor::new(&[1, 1, 4, 4], 1.0, false).unwrap();
    let w = Tensor::new(&[1, 1, 3, 3], 1.0, false).unwrap();
    let y = run_conv(&x, &w, &Tensor::zeros(&[1]).unwrap(), 1, Padding::Same).unwrap();
    assert_eq!(y.data()[5], 9.0);
    assert_eq!(y.data()[0], 4.0);
    assert_eq!(y.data()[1], 6.0);
}

#[test]
fn conv_matches_direct_sum() {
    for seed in 0..5 {
        let x = random_tensor(&[1, 3, 5, 5], -1.0, 1.0, seed);
        let w = random_tensor(&[4, 3, 3, 3], -1.0, 1.0, 100 + seed);
        let b = random_tensor(&[4], -1.0, 1.0, 200 + seed);
        for (stride, padding, pad) in [(1, Padding::Same, 1), (1, Padding::Valid, 0), (2, Padding::Same, 1)] {
            let got = run_conv(&x, &w, &b, stride, padding).unwrap();
            let want = brute_conv(&x, &w, &b, stride, pad);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) <= 1e-10);
        }
    }
}

#[test]
fn conv_channel_mismatch() {
    let x = Tensor::zeros(&[1, 2, 4, 4]).unwrap();
    let w = Tensor::zeros(&[4, 3, 3, 3]).unwrap();
    assert!(matches!(
        run_conv(&x, &w, &Tensor::zeros(&[4]).unwrap(), 1, Padding::Same),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn separable_identity_and_composition() {
    let mut store = ParamStore::new(0);
    let sep = SeparableConv2d::new(&mut store, "s", 3, 3);
    let mut dw = vec![0.0; 27];
    for c in 0..3 {
        dw[c * 9 + 4] = 1.0;
    }
    store.get_mut(sep.depthwise.weight).data_mut().copy_from_slice(&dw);
    let mut pw = vec![0.0; 9];
    for c in 0..3 {
        pw[c * 3 + c] = 1.0;
    }
    store.get_mut(sep.pointwise.weight).data_mut().copy_from_slice(&pw);
    let x = random_tensor(&[1, 3, 6, 5], -1.0, 1.0, 4);
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let xv = tape.leaf(&x);
    let y = sep.forward(&mut tape, &vars, xv).unwrap();
    assert_eq!(tape.value(y), &x);

    // Random weights: fused call equals the two primitives called separately.
    let mut store = ParamStore::new(7);
    let sep = SeparableConv2d::new(&mut store, "s", 3, 5);
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let xv = tape.leaf(&x);
    let fused = sep.forward(&mut tape, &vars, xv).unwrap();
    let d = depthwise_conv2d(&mut tape, xv, vars[sep.depthwise.weight.0], vars[sep.depthwise.bias.0]).unwrap();
    let p = conv2d(&mut tape, d, vars[sep.pointwise.weight.0], vars[sep.pointwise.bias.0], 1, Padding::Same).unwrap();
    assert_eq!(tape.value(fused), tape.value(p));
    assert_eq!(tape.value(fused).shape(), &[1, 5, 6, 5]);
}

#[test]
fn separable_vs_standard_counts() {
    let mut store = ParamStore::new(0);
    let sep = SeparableConv2d::new(&mut store, "s", 16, 32);
    assert_eq!(store.numel(), 704);
    assert_eq!(sep.param_count(), 704);
    assert_eq!(sep.depthwise.param_count(), 160);
    let mut store = ParamStore::new(0);
    let std = Conv2dParams::new(&mut store, "c", 16, 32, 3);
    assert_eq!(store.numel(), 4640);
    assert_eq!(std.param_count(), 4640);
    let ratio: f64 = 704.0 / 4640.0;
    assert!((ratio - 0.152).abs() < 1e-3);
}

#[test]
fn separable_ratio_bounds() {
    for c in [8usize, 16, 32, 64] {
        let mut s = ParamStore::new(0);
        SeparableConv2d::new(&mut s, "s", c, c);
        let mut t = ParamStore::new(0);
        Conv2dParams::new(&mut t, "c", c, c, 3);
        let ratio = s.numel() as f64 / t.numel() as f64;
        let cf = c as f64;
        assert!(ratio > 1.0 / 9.0);
        assert!(ratio <= 1.0 / 9.0 + 2.0 / cf + 1.0 / (9.0 * cf));
    }
}

fn pool(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let mut tape = Tape::new();
    let mut x = x.clone();
    x.set_requires_grad(true);
    let xv = tape.leaf(&x);
    let y = maxpool2d(&mut tape, xv)?;
    let s = tape.sum(y);
    tape.backward(s)?;
    Ok((tape.value(y).clone(), tape.grad(xv).unwrap().to_vec()))
}

#[test]
fn maxpool_basic_and_ties() {
    let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(pool(&x).unwrap().0.data(), &[4.0]);

    let c = Tensor::new(&[1, 1, 4, 4], 2.5, false).unwrap();
    let (y, g) = pool(&c).unwrap();
    assert!(y.data().iter().all(|v| *v == 2.5));
    let mut expected = vec![0.0; 16];
    for idx in [0, 2, 8, 10] {
        expected[idx] = 1.0;
    }
    assert_eq!(g, expected);
}

#[test]
fn maxpool_matches_window_scan() {
    for seed in 0..5 {
        let x = random_tensor(&[2, 3, 8, 8], -1.0, 1.0, seed);
        let (y, _) = pool(&x).unwrap();
        for bc in 0..6 {
            for i in 0..4 {
                for j in 0..4 {
                    let mut m = f64::NEG_INFINITY;
                    for a in 0..2 {
                        for b in 0..2 {
                            m = m.max(x.data()[bc * 64 + (2 * i + a) * 8 + 2 * j + b]);
                        }
                    }
                    assert!((y.data()[bc * 16 + i * 4 + j] - m).abs() <= 1e-10);
                }
            }
        }
    }
}

#[test]
fn maxpool_odd_extent() {
    let x = Tensor::zeros(&[1, 1, 5, 4]).unwrap();
    assert!(matches!(pool(&x), Err(Error::Dimension(_))));
}

fn run_up(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.leaf(x), tape.leaf(w), tape.leaf(b));
    let y = upconv2d(&mut tape, xv, wv, bv).unwrap();
    tape.value(y).clone()
}

#[test]
fn upconv_constant_kernel() {
    let x = Tensor::from_vec(&[1, 1, 1, 1], vec![0.7]).unwrap();
    let w = Tensor::new(&[1, 1, 2, 2], 1.0, false).unwrap();
    let y = run_up(&x, &w, &Tensor::zeros(&[1]).unwrap());
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[0.7; 4]);
}

#[test]
fn upconv_doubles_extents() {
    for (h, w) in [(1, 1), (3, 5), (4, 2)] {
        let x = random_tensor(&[2, 3, h, w], -1.0, 1.0, 3);
        let k = random_tensor(&[4, 3, 2, 2], -1.0, 1.0, 4);
        let y = run_up(&x, &k, &Tensor::zeros(&[4]).unwrap());
        assert_eq!(y.shape(), &[2, 4, 2 * h, 2 * w]);
    }
}

#[test]
fn upconv_is_adjoint_of_strided_conv() {
    for seed in 0..5 {
        let x = random_tensor(&[1, 3, 3, 4], -1.0, 1.0, seed);
        let y = random_tensor(&[1, 2, 6, 8], -1.0, 1.0, 50 + seed);
        let w = random_tensor(&[2, 3, 2, 2], -1.0, 1.0, 100 + seed);
        let up = run_up(&x, &w, &Tensor::zeros(&[2]).unwrap());
        let lhs: f64 = up.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        // Same kernel with in/out roles swapped: [3, 2, 2, 2].
        let mut wt = vec![0.0; 24];
        for o in 0..2 {
            for c in 0..3 {
                for t in 0..4 {
                    wt[(c * 2 + o) * 4 + t] = w.data()[(o * 3 + c) * 4 + t];
                }
            }
        }
        let wt = Tensor::from_vec(&[3, 2, 2, 2], wt).unwrap();
        let down = run_conv(&y, &wt, &Tensor::zeros(&[3]).unwrap(), 2, Padding::Valid).unwrap();
        let rhs: f64 = x.data().iter().zip(down.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn upconv_channel_mismatch() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(&[1, 2, 2, 2]).unwrap());
    let w = tape.leaf(&Tensor::zeros(&[1, 3, 2, 2]).unwrap());
    let b = tape.leaf(&Tensor::zeros(&[1]).unwrap());
    assert!(matches!(upconv2d(&mut tape, x, w, b), Err(Error::Dimension(_))));
}

#[test]
fn residual_with_zero_body_is_identity() {
    let mut store = ParamStore::new(3);
    let block = ResidualBlock::new(&mut store, "r", ConvKind::Standard, 4, 4, Some(4));
    assert_eq!(block.skip, Skip::Identity);
    for t in store.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let x = random_tensor(&[1, 4, 5, 5], -1.0, 1.0, 2);
    assert_eq!(residual_forward(&store, &block, &x).unwrap(), x);
}

#[test]
fn residual_projection_on_channel_change() {
    let mut store = ParamStore::new(3);
    let block = ResidualBlock::new(&mut store, "r", ConvKind::Standard, 4, 8, Some(4));
    let Skip::Projection(p) = &block.skip else { panic!("expected projection") };
    assert_eq!(p.param_count(), 4 * 8 + 8);
    let body = (4 * 8 * 9 + 8) + (8 * 8 * 9 + 8);
    assert_eq!(block.param_count(), body + 40);
    assert_eq!(store.numel(), body + 40);
    let x = random_tensor(&[1, 4, 6, 6], -1.0, 1.0, 2);
    assert_eq!(residual_forward(&store, &block, &x).unwrap().shape(), &[1, 8, 6, 6]);
    let bad = random_tensor(&[1, 3, 6, 6], -1.0, 1.0, 2);
    assert!(matches!(residual_forward(&store, &block, &bad), Err(Error::Dimension(_))));
}

#[test]
fn shape_preservation() {
    let x = random_tensor(&[1, 2, 6, 10], -1.0, 1.0, 8);
    let mut store = ParamStore::new(1);
    let sep = SeparableConv2d::new(&mut store, "s", 2, 3);
    let std = Conv2dParams::new(&mut store, "c", 2, 3, 3);
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let xv = tape.leaf(&x);
    for y in [
        sep.forward(&mut tape, &vars, xv).unwrap(),
        std.forward(&mut tape, &vars, xv).unwrap(),
    ] {
        assert_eq!(tape.value(y).shape(), &[1, 3, 6, 10]);
    }
    let r = activation(&mut tape, Activation::Sigmoid, xv);
    assert_eq!(tape.value(r).shape(), x.shape());
    assert!(tape.value(r).data().iter().all(|v| *v > 0.0 && *v < 1.0));
    let p = maxpool2d(&mut tape, xv).unwrap();
    assert_eq!(tape.value(p).shape(), &[1, 2, 3, 5]);
}

fn assert_grad_ok<F>(inputs: &[Tensor], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let report = check(inputs, f).unwrap();
    assert!(report.passed(), "{:?}", &report.failures[..report.failures.len().min(5)]);
}

#[test]
fn gradients_of_convolutions() {
    for seed in 0..3 {
        let x = random_tensor(&[2, 3, 5, 4], -1.0, 1.0, seed);
        let w = random_tensor(&[2, 3, 3, 3], -1.0, 1.0, 10 + seed);
        let b = random_tensor(&[2], -1.0, 1.0, 20 + seed);
        for (stride, pad) in [(1, Padding::Same), (2, Padding::Valid), (2, Padding::Same)] {
            assert_grad_ok(&[x.clone(), w.clone(), b.clone()], |t, v| conv2d(t, v[0], v[1], v[2], stride, pad));
        }
        let dw = random_tensor(&[3, 1, 3, 3], -1.0, 1.0, 30 + seed);
        let db = random_tensor(&[3], -1.0, 1.0, 40 + seed);
        assert_grad_ok(&[x.clone(), dw, db], |t, v| depthwise_conv2d(t, v[0], v[1], v[2]));
        let uw = random_tensor(&[2, 3, 2, 2], -1.0, 1.0, 50 + seed);
        assert_grad_ok(&[x.clone(), uw, b.clone()], |t, v| upconv2d(t, v[0], v[1], v[2]));
        let duw = random_tensor(&[3, 1, 2, 2], -1.0, 1.0, 60 + seed);
        let dub = random_tensor(&[3], -1.0, 1.0, 70 + seed);
        assert_grad_ok(&[x.clone(), duw, dub], |t, v| depthwise_upconv2d(t, v[0], v[1], v[2]));
    }
}

#[test]
fn gradients_of_pool_and_residual() {
    for seed in 0..3 {
        let x = random_tensor(&[1, 2, 6, 4], -1.0, 1.0, seed);
        assert_grad_ok(std::slice::from_ref(&x), |t, v| maxpool2d(t, v[0]));
        for (kind, c_out) in [(ConvKind::Standard, 2), (ConvKind::Separable, 3)] {
            let mut store = ParamStore::new(seed);
            let block = ResidualBlock::new(&mut store, "r", kind, 2, c_out, Some(2));
            let mut inputs = vec![x.clone()];
            inputs.extend(store.tensors().iter().cloned());
            assert_grad_ok(&inputs, |t, v| block.forward(t, &v[1..], v[0]));
        }
    }
}
