use dreb_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn randn(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// Naive O(N²) 2-D DFT of a real plane, half spectrum. Pure f64 loops,
/// no engine code.
fn naive_rfft2(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let wh = w / 2 + 1;
    let mut re = vec![0.0; h * wh];
    let mut im = vec![0.0; h * wh];
    for ky in 0..h {
        for kx in 0..wh {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let ang = -2.0 * std::f64::consts::PI
                        * (ky as f64 * y as f64 / h as f64 + kx as f64 * xx as f64 / w as f64);
                    sr += x[y * w + xx] * ang.cos();
                    si += x[y * w + xx] * ang.sin();
                }
            }
            re[ky * wh + kx] = sr;
            im[ky * wh + kx] = si;
        }
    }
    (re, im)
}

fn rfft2_engine(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let tape = Tape::<f64>::no_grad();
    let t = Tensor::from_vec(&[1, h, w], x.to_vec()).unwrap();
    let g = tape.rfft2(&t).unwrap();
    (g.real().to_vec(), g.imag().to_vec())
}

#[test]
fn two_by_two_hand_case() {
    let (re, im) = rfft2_engine(&[1.0, 2.0, 3.0, 4.0], 2, 2);
    let expect_re = [10.0, -2.0, -4.0, 0.0];
    for (a, e) in re.iter().zip(expect_re) {
        assert!((a - e).abs() < 1e-12, "{a} vs {e}");
    }
    assert!(im.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn constant_image_flat_spectrum() {
    let (h, w, c) = (5, 6, 0.37);
    let (re, im) = rfft2_engine(&vec![c; h * w], h, w);
    assert!((re[0] - c * (h * w) as f64).abs() < 1e-9);
    for i in 1..re.len() {
        assert!(re[i].abs() < 1e-9 && im[i].abs() < 1e-9);
    }
    assert!(im[0].abs() < 1e-9);
}

#[test]
fn matches_naive_dft_pow2_and_bluestein() {
    let mut rng = ChaCha12Rng::seed_from_u64(42);
    for &(h, w) in &[(8usize, 8usize), (7, 9), (5, 8), (8, 7), (1, 13)] {
        let x = randn(&mut rng, h * w);
        let (re, im) = rfft2_engine(&x, h, w);
        let (ore, oim) = naive_rfft2(&x, h, w);
        for i in 0..re.len() {
            assert!((re[i] - ore[i]).abs() < 1e-9, "{h}x{w} re bin {i}");
            assert!((im[i] - oim[i]).abs() < 1e-9, "{h}x{w} im bin {i}");
        }
    }
}

#[test]
fn round_trip_is_identity() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    for &(h, w) in &[(8usize, 8usize), (7, 9), (6, 5)] {
        let x = randn(&mut rng, h * w);
        let tape = Tape::<f64>::no_grad();
        let t = Tensor::from_vec(&[1, h, w], x.clone()).unwrap();
        let g = tape.rfft2(&t).unwrap();
        let back = tape.irfft2(&g, w).unwrap();
        for (a, e) in back.to_vec().iter().zip(&x) {
            assert!((a - e).abs() < 1e-10, "{h}x{w}");
        }
    }
}

#[test]
fn irfft2_validates_out_w() {
    let tape = Tape::<f64>::no_grad();
    let t = Tensor::from_vec(&[1, 4, 6], vec![0.25; 24]).unwrap();
    let g = tape.rfft2(&t).unwrap();
    assert!(tape.irfft2(&g, 6).is_ok());
    assert!(tape.irfft2(&g, 7).is_ok(), "odd width sharing the half grid");
    assert!(tape.irfft2(&g, 9).is_err());
}

#[test]
fn zero_spectrum_and_dc_only() {
    let tape = Tape::<f64>::no_grad();
    let (h, w) = (4, 4);
    let zero = Tensor::from_vec(&[1, h, w], vec![0.0; 16]).unwrap();
    let g = tape.rfft2(&zero).unwrap();
    let img = tape.irfft2(&g, w).unwrap();
    assert!(img.to_vec().iter().all(|&v| v == 0.0));

    // DC-only spectrum of value H·W inverts to an all-ones image.
    let dc = Tensor::from_vec(&[1, h, w], vec![1.0; 16]).unwrap();
    let gdc = tape.rfft2(&dc).unwrap();
    assert!((gdc.real().to_vec()[0] - (h * w) as f64).abs() < 1e-10);
    let ones = tape.irfft2(&gdc, w).unwrap();
    for v in ones.to_vec() {
        assert!((v - 1.0).abs() < 1e-10);
    }
}

#[test]
fn fft_linearity() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let (h, w) = (6, 10);
    let x = randn(&mut rng, h * w);
    let y = randn(&mut rng, h * w);
    let (a, b) = (1.7, -0.4);
    let tape = Tape::<f64>::no_grad();
    let combo: Vec<f64> = x.iter().zip(&y).map(|(&xi, &yi)| a * xi + b * yi).collect();
    let (cre, cim) = rfft2_engine(&combo, h, w);
    let (xre, xim) = rfft2_engine(&x, h, w);
    let (yre, yim) = rfft2_engine(&y, h, w);
    for i in 0..cre.len() {
        assert!((cre[i] - (a * xre[i] + b * yre[i])).abs() < 1e-9);
        assert!((cim[i] - (a * xim[i] + b * yim[i])).abs() < 1e-9);
    }
}

#[test]
fn parseval_with_hermitian_double_counting() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    for &(h, w) in &[(8usize, 8usize), (7, 9), (6, 6)] {
        let x = randn(&mut rng, h * w);
        let (re, im) = rfft2_engine(&x, h, w);
        let wh = w / 2 + 1;
        let spatial: f64 = x.iter().map(|v| v * v).sum();
        let mut spectral = 0.0;
        for ky in 0..h {
            for kx in 0..wh {
                let p = re[ky * wh + kx].powi(2) + im[ky * wh + kx].powi(2);
                // Columns 0 (and w/2 for even w) hold their own mirrors;
                // everything else stands for a conjugate pair.
                let self_conjugate_col = kx == 0 || (w % 2 == 0 && kx == w / 2);
                spectral += if self_conjugate_col { p } else { 2.0 * p };
            }
        }
        spectral /= (h * w) as f64;
        assert!(
            (spatial - spectral).abs() < 1e-8,
            "{h}x{w}: {spatial} vs {spectral}"
        );
    }
}

#[test]
fn rfft2_and_irfft2_adjoint_identity() {
    // <J·dx, dy> == <dx, Jᵀ·dy> probed through the tape.
    let mut rng = ChaCha12Rng::seed_from_u64(33);
    let (h, w) = (6, 7);
    let wh = w / 2 + 1;
    for _ in 0..5 {
        let dx = randn(&mut rng, h * w);
        let dy = randn(&mut rng, 2 * h * wh);
        // Forward map J: rfft2. J·dx via linearity (transform of dx).
        let tape = Tape::<f64>::new();
        let x = Tensor::<f64>::param(&[1, h, w], dx.clone()).unwrap();
        let g = tape.rfft2(&x).unwrap();
        let jdx = g.packed.to_vec();
        let lhs: f64 = jdx.iter().zip(&dy).map(|(a, b)| a * b).sum();
        // Jᵀ·dy via backward with cotangent dy: loss = <packed, dy>.
        let dyt = Tensor::from_vec(&g.packed.shape(), dy.clone()).unwrap();
        let prod = tape.mul(&g.packed, &dyt).unwrap();
        let loss = tape.sum_all(&prod);
        tape.backward(&loss).unwrap();
        let jtdy = x.grad().unwrap();
        let rhs: f64 = jtdy.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-6, "rfft2 adjoint: {lhs} vs {rhs}");
    }
    for _ in 0..5 {
        let dspec = randn(&mut rng, 2 * h * wh);
        let dimg = randn(&mut rng, h * w);
        let tape = Tape::<f64>::new();
        let packed = Tensor::<f64>::param(&[2, 1, h, wh], dspec.clone()).unwrap();
        // Build a grid through rfft2 of zeros, then swap in the probe via add.
        let zero = Tensor::<f64>::from_vec(&[1, h, w], vec![0.0; h * w]).unwrap();
        let gz = tape.rfft2(&zero).unwrap();
        let probe = tape.add(&gz.packed, &packed).unwrap();
        let grid = dreb_tensor::ComplexGrid::from_packed(probe, vec![1, h, wh], w).unwrap();
        let img = tape.irfft2(&grid, w).unwrap();
        let lhs: f64 = img.to_vec().iter().zip(&dimg).map(|(a, b)| a * b).sum();
        let dimg_t = Tensor::from_vec(&[1, h, w], dimg.clone()).unwrap();
        let prod = tape.mul(&img, &dimg_t).unwrap();
        let loss = tape.sum_all(&prod);
        tape.backward(&loss).unwrap();
        let jtdy = packed.grad().unwrap();
        let rhs: f64 = jtdy.iter().zip(&dspec).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-6, "irfft2 adjoint: {lhs} vs {rhs}");
    }
}
