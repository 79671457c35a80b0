use dreb_tensor::{grad_check, BnMode, BnState, LrSchedule, OptimState, Tape, Tensor, UpdateRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn randn(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// Direct six-nested-loop convolution, independent of the engine path.
fn conv_oracle(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for s in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                    acc += x[((s * cin + ci) * h + iy as usize) * wd + ix as usize]
                                        * w[((co * cin + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out[((s * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_single_multiply_add() {
    let tape = Tape::<f64>::no_grad();
    let x = Tensor::from_vec(&[1, 1, 1], vec![5.0]).unwrap();
    let w = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
    let b = Tensor::from_vec(&[1], vec![1.0]).unwrap();
    let y = tape.conv2d(&x, &w, Some(&b), 1, 0).unwrap();
    assert_eq!(y.to_vec(), vec![11.0]);
}

#[test]
fn conv2d_identity_kernel() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let tape = Tape::<f64>::no_grad();
    let x = Tensor::from_vec(&[1, 5, 6], randn(&mut rng, 30)).unwrap();
    let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
    let y = tape.conv2d(&x, &w, None, 1, 0).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let (n, cin, h, wd, cout, k) = (2, 3, 4, 4, 5, 3);
    let x = randn(&mut rng, n * cin * h * wd);
    let w = randn(&mut rng, cout * cin * k * k);
    let b = randn(&mut rng, cout);
    let tape = Tape::<f64>::no_grad();
    let xt = Tensor::from_vec(&[n, cin, h, wd], x.clone()).unwrap();
    let wt = Tensor::from_vec(&[cout, cin, k, k], w.clone()).unwrap();
    let bt = Tensor::from_vec(&[cout], b.clone()).unwrap();
    let y = tape.conv2d(&xt, &wt, Some(&bt), 1, 1).unwrap();
    let expect = conv_oracle(&x, &w, &b, n, cin, h, wd, cout, k, 1, 1);
    for (a, e) in y.to_vec().iter().zip(&expect) {
        assert!((a - e).abs() < 1e-6, "{a} vs {e}");
    }
    // Strided case too.
    let y2 = tape.conv2d(&xt, &wt, Some(&bt), 2, 1).unwrap();
    let expect2 = conv_oracle(&x, &w, &b, n, cin, h, wd, cout, k, 2, 1);
    for (a, e) in y2.to_vec().iter().zip(&expect2) {
        assert!((a - e).abs() < 1e-6);
    }
}

#[test]
fn conv2d_shape_errors() {
    let tape = Tape::<f64>::no_grad();
    let x = Tensor::<f64>::zeros(&[2, 3, 3]);
    let w = Tensor::<f64>::zeros(&[4, 3, 3, 3]);
    assert!(tape.conv2d(&x, &w, None, 1, 0).is_err()); // channel mismatch
    let w5 = Tensor::<f64>::zeros(&[4, 2, 5, 5]);
    assert!(tape.conv2d(&x, &w5, None, 1, 0).is_err()); // kernel larger than input
}

#[test]
fn transposed_conv_is_conv_adjoint() {
    // <conv(x), y> == <x, conv_transpose(y)> for matching geometry.
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let (cin, cout, h, wd, k, s, p) = (3, 4, 6, 6, 4, 2, 1);
    let ho = (h + 2 * p - k) / s + 1;
    let wo = (wd + 2 * p - k) / s + 1;
    let w = randn(&mut rng, cin * cout * k * k);
    let tape = Tape::<f64>::no_grad();
    // The adjoint reuses the conv weight verbatim: [cout, cin, k, k] read
    // as the transpose's [in, out, k, k].
    let wt_c = Tensor::from_vec(&[cout, cin, k, k], w.clone()).unwrap();
    let wt_t = Tensor::from_vec(&[cout, cin, k, k], w).unwrap();
    let x = Tensor::from_vec(&[1, cin, h, wd], randn(&mut rng, cin * h * wd)).unwrap();
    let y = Tensor::from_vec(&[1, cout, ho, wo], randn(&mut rng, cout * ho * wo)).unwrap();
    let cx = tape.conv2d(&x, &wt_c, None, s, p).unwrap();
    let ty = tape.conv_transpose2d(&y, &wt_t, None, s, p).unwrap();
    assert_eq!(ty.shape(), vec![1, cin, h, wd]);
    let lhs: f64 = cx.to_vec().iter().zip(y.to_vec()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.to_vec().iter().zip(ty.to_vec()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
}

#[test]
fn transposed_conv_zero_weight_annihilates() {
    let tape = Tape::<f64>::no_grad();
    let x = Tensor::from_vec(&[1, 2, 3, 3], vec![1.0; 18]).unwrap();
    let w = Tensor::<f64>::zeros(&[2, 2, 4, 4]);
    let y = tape.conv_transpose2d(&x, &w, None, 2, 1).unwrap();
    assert_eq!(y.shape(), vec![1, 2, 6, 6]);
    assert!(y.to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn batch_norm_constant_input_zeroes() {
    let tape = Tape::<f64>::no_grad();
    let x = Tensor::from_vec(&[2, 2, 2, 2], vec![3.0, 3.0, 3.0, 3.0, -1.0, -1.0, -1.0, -1.0, 3.0, 3.0, 3.0, 3.0, -1.0, -1.0, -1.0, -1.0]).unwrap();
    let gamma = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
    let beta = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
    let st = BnState::new(2, 0.1, 1e-5);
    let y = tape.batch_norm(&x, &gamma, &beta, &st, BnMode::Train).unwrap();
    assert!(y.to_vec().iter().all(|&v| v.abs() < 1e-9));
}

#[test]
fn batch_norm_gamma_zero_gives_beta() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let tape = Tape::<f64>::no_grad();
    let x = Tensor::from_vec(&[2, 3, 2, 2], randn(&mut rng, 24)).unwrap();
    let gamma = Tensor::<f64>::zeros(&[3]);
    let beta = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
    let st = BnState::new(3, 0.1, 1e-5);
    let y = tape.batch_norm(&x, &gamma, &beta, &st, BnMode::Train).unwrap();
    let yd = y.to_vec();
    for s in 0..2 {
        for c in 0..3 {
            for i in 0..4 {
                assert_eq!(yd[(s * 3 + c) * 4 + i], beta.to_vec()[c]);
            }
        }
    }
}

#[test]
fn batch_norm_normalizes_moments() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let tape = Tape::<f64>::no_grad();
    let x = Tensor::from_vec(&[4, 2, 3, 3], randn(&mut rng, 72)).unwrap();
    let gamma = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
    let beta = Tensor::<f64>::zeros(&[2]);
    let st = BnState::new(2, 0.1, 1e-5);
    let y = tape.batch_norm(&x, &gamma, &beta, &st, BnMode::Train).unwrap();
    let yd = y.to_vec();
    // Recompute the moments of the output: mean ~ 0, variance ~ 1.
    for c in 0..2 {
        let mut vals = Vec::new();
        for s in 0..4 {
            for i in 0..9 {
                vals.push(yd[(s * 2 + c) * 9 + i]);
            }
        }
        let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        let v: f64 = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-4);
    }
}

#[test]
fn batch_norm_undefined_variance_errors() {
    let tape = Tape::<f64>::no_grad();
    let x = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
    let gamma = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
    let beta = Tensor::<f64>::zeros(&[2]);
    let st = BnState::new(2, 0.1, 1e-5);
    assert!(tape.batch_norm(&x, &gamma, &beta, &st, BnMode::Train).is_err());
    // Eval without populated stats must also refuse.
    assert!(tape.batch_norm(&x, &gamma, &beta, &st, BnMode::Eval).is_err());
}

#[test]
fn pointwise_examples() {
    let tape = Tape::<f64>::no_grad();
    let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(tape.relu(&x).to_vec(), vec![0.0, 0.0, 2.0]);
    let z = Tensor::from_vec(&[1], vec![0.0]).unwrap();
    assert_eq!(tape.sigmoid(&z).to_vec(), vec![0.5]);
}

#[test]
fn sigmoid_gradient_at_zero() {
    let p = Tensor::<f64>::param(&[1], vec![0.0]).unwrap();
    let err = grad_check(&[p.clone()], 1e-6, |tape| {
        let s = tape.sigmoid(&p);
        Ok(tape.sum_all(&s))
    })
    .unwrap();
    assert!(err < 1e-8, "rel err {err}");
    assert!((p.grad().unwrap()[0] - 0.25).abs() < 1e-12);
}

#[test]
fn adaptive_pool_examples() {
    let tape = Tape::<f64>::no_grad();
    let c = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(tape.adaptive_avg_pool(&c).unwrap().to_vec(), vec![2.5]);
    let k = Tensor::from_vec(&[2, 1, 1], vec![7.0, -3.0]).unwrap();
    assert_eq!(tape.adaptive_avg_pool(&k).unwrap().to_vec(), vec![7.0, -3.0]);
}

#[test]
fn adaptive_pool_gradient_uniform() {
    let x = Tensor::<f64>::param(&[1, 3, 3], vec![0.5; 9]).unwrap();
    let tape = Tape::new();
    let y = tape.adaptive_avg_pool(&x).unwrap();
    let loss = tape.sum_all(&y);
    tape.backward(&loss).unwrap();
    for g in x.grad().unwrap() {
        assert!((g - 1.0 / 9.0).abs() < 1e-12);
    }
}

#[test]
fn upsample_nearest_replicates() {
    let tape = Tape::<f64>::no_grad();
    let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = tape.upsample2x_nearest(&x).unwrap();
    assert_eq!(
        y.to_vec(),
        vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
    );
}

#[test]
fn backward_sum_gives_ones() {
    let x = Tensor::<f64>::param(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let tape = Tape::new();
    let loss = tape.sum_all(&x);
    tape.backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
}

#[test]
fn backward_quadratic_gives_two_x() {
    let x = Tensor::<f64>::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
    let tape = Tape::new();
    let sq = tape.mul(&x, &x).unwrap();
    let loss = tape.sum_all(&sq);
    tape.backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
}

#[test]
fn gradient_accumulates_across_uses() {
    let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
    let tape = Tape::new();
    let a = tape.add(&x, &x).unwrap(); // uses x twice
    let loss = tape.sum_all(&a);
    tape.backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
}

#[test]
fn backward_twice_errors() {
    let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
    let tape = Tape::new();
    let loss = tape.sum_all(&x);
    tape.backward(&loss).unwrap();
    assert!(tape.backward(&loss).is_err());
}

#[test]
fn non_scalar_loss_errors() {
    let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
    let tape = Tape::new();
    let y = tape.scale(&x, 2.0);
    assert!(tape.backward(&y).is_err());
}

#[test]
fn broadcast_add_and_reduce_grad() {
    // [N,C,H,W] + [N,C,1,1] broadcast, gradient of the small side sums.
    let x = Tensor::<f64>::param(&[1, 2, 2, 2], vec![1.0; 8]).unwrap();
    let g = Tensor::<f64>::param(&[1, 2, 1, 1], vec![10.0, 20.0]).unwrap();
    let tape = Tape::new();
    let y = tape.add(&x, &g).unwrap();
    assert_eq!(y.shape(), vec![1, 2, 2, 2]);
    assert_eq!(y.to_vec(), vec![11.0, 11.0, 11.0, 11.0, 21.0, 21.0, 21.0, 21.0]);
    let loss = tape.sum_all(&y);
    tape.backward(&loss).unwrap();
    assert_eq!(g.grad().unwrap(), vec![4.0, 4.0]);
}

#[test]
fn optimizer_sgd_definition() {
    let p = Tensor::<f64>::param(&[1], vec![1.0]).unwrap();
    p.set_grad(&[1.0]);
    let mut opt = OptimState::new(0.1, LrSchedule::Constant, UpdateRule::Sgd).unwrap();
    opt.step_all(std::slice::from_ref(&p)).unwrap();
    assert!((p.to_vec()[0] - 0.9).abs() < 1e-15);
    assert!(p.grad().is_none(), "gradients cleared after step");
}

#[test]
fn optimizer_missing_grad_errors() {
    let p = Tensor::<f64>::param(&[1], vec![1.0]).unwrap();
    let mut opt = OptimState::new(0.1, LrSchedule::Constant, UpdateRule::Sgd).unwrap();
    assert!(opt.step_all(std::slice::from_ref(&p)).is_err());
}

#[test]
fn lr_schedule_endpoint_freezes_params() {
    let p = Tensor::<f64>::param(&[1], vec![1.0]).unwrap();
    let mut opt =
        OptimState::new(0.5, LrSchedule::LinearToZero { total_steps: 4 }, UpdateRule::Sgd)
            .unwrap();
    for t in 0..6 {
        p.set_grad(&[1.0]);
        let before = p.to_vec()[0];
        let lr = opt.effective_lr();
        opt.step_all(std::slice::from_ref(&p)).unwrap();
        let after = p.to_vec()[0];
        if t >= 4 {
            assert_eq!(lr, 0.0);
            assert_eq!(before, after, "no movement at zero lr");
        } else {
            assert!((before - after - lr).abs() < 1e-12);
        }
    }
}

#[test]
fn gradient_descent_converges_on_quadratic() {
    // f(p) = (p − 3)²: with lr 0.1 plain SGD contracts |p−3| by 0.8 per
    // step, so 200 steps from 0 land well under 1e-3.
    let p = Tensor::<f64>::param(&[1], vec![0.0]).unwrap();
    let mut opt = OptimState::new(0.1, LrSchedule::Constant, UpdateRule::Sgd).unwrap();
    for _ in 0..200 {
        let tape = Tape::new();
        let d = tape.add_scalar(&p, -3.0);
        let sq = tape.mul(&d, &d).unwrap();
        let loss = tape.sum_all(&sq);
        tape.backward(&loss).unwrap();
        opt.step_all(std::slice::from_ref(&p)).unwrap();
    }
    assert!((p.to_vec()[0] - 3.0).abs() < 1e-3);
}

#[test]
fn grad_check_quadratic_is_tight() {
    let p = Tensor::<f64>::param(&[4], vec![0.3, -0.7, 1.1, 0.0]).unwrap();
    let err = grad_check(&[p.clone()], 1e-5, |tape| {
        let sq = tape.mul(&p, &p).unwrap();
        Ok(tape.sum_all(&sq))
    })
    .unwrap();
    assert!(err < 1e-8, "rel err {err}");
}

#[test]
fn grad_check_conv_bn_relu_stack() {
    let mut rng = ChaCha12Rng::seed_from_u64(21);
    let x = Tensor::<f64>::param(&[2, 2, 4, 4], randn(&mut rng, 64)).unwrap();
    let w = Tensor::<f64>::param(&[3, 2, 3, 3], randn(&mut rng, 54)).unwrap();
    let b = Tensor::<f64>::param(&[3], randn(&mut rng, 3)).unwrap();
    let gamma = Tensor::<f64>::param(&[3], vec![1.0, 0.8, 1.2]).unwrap();
    let beta = Tensor::<f64>::param(&[3], vec![0.1, -0.1, 0.0]).unwrap();
    let st = BnState::new(3, 0.1, 1e-5);
    let params = [x.clone(), w.clone(), b.clone(), gamma.clone(), beta.clone()];
    let err = grad_check(&params, 1e-5, |tape| {
        let c = tape.conv2d(&x, &w, Some(&b), 1, 1)?;
        let n = tape.batch_norm(&c, &gamma, &beta, &st, BnMode::Train)?;
        let r = tape.relu(&n);
        // Square to exercise a nonlinear reduction.
        let sq = tape.mul(&r, &r)?;
        Ok(tape.mean_all(&sq))
    })
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn determinism_same_sequence_bit_identical() {
    let run = || {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let tape = Tape::<f32>::no_grad();
        let x = Tensor::from_vec(
            &[1, 3, 8, 8],
            randn(&mut rng, 192).iter().map(|&v| v as f32).collect(),
        )
        .unwrap();
        let w = Tensor::from_vec(
            &[4, 3, 3, 3],
            randn(&mut rng, 108).iter().map(|&v| v as f32).collect(),
        )
        .unwrap();
        let y = tape.conv2d(&x, &w, None, 1, 1).unwrap();
        let s = tape.sigmoid(&y);
        s.to_vec()
    };
    assert_eq!(run(), run());
}
