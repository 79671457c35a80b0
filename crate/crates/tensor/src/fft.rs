//! Complex FFT core: iterative radix-2 for power-of-two lengths plus a
//! Bluestein chirp-z fallback, so arbitrary image sizes work. Twiddles are
//! evaluated in f64 and cast, which keeps the f64 path at full precision.

use num_complex::Complex;

use crate::scalar::Scalar;

fn twiddle<T: Scalar>(num: f64, den: f64) -> Complex<T> {
    let ang = -2.0 * std::f64::consts::PI * num / den;
    Complex::new(T::from_f64(ang.cos()), T::from_f64(ang.sin()))
}

fn fft_pow2<T: Scalar>(buf: &mut [Complex<T>]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for off in 0..half {
                let w: Complex<T> = twiddle(off as f64, len as f64);
                let u = buf[start + off];
                let v = buf[start + off + half] * w;
                buf[start + off] = u + v;
                buf[start + off + half] = u - v;
            }
        }
        len <<= 1;
    }
}

fn fft_bluestein<T: Scalar>(buf: &mut [Complex<T>]) {
    let n = buf.len();
    let m = (2 * n - 1).next_power_of_two();
    // chirp[k] = exp(-i·π·k²/n); k² is reduced mod 2n to keep angles small.
    let chirp: Vec<Complex<T>> = (0..n)
        .map(|k| {
            let sq = (k * k) % (2 * n);
            let ang = -std::f64::consts::PI * sq as f64 / n as f64;
            Complex::new(T::from_f64(ang.cos()), T::from_f64(ang.sin()))
        })
        .collect();
    let mut a = vec![Complex::new(T::zero(), T::zero()); m];
    for k in 0..n {
        a[k] = buf[k] * chirp[k];
    }
    let mut b = vec![Complex::new(T::zero(), T::zero()); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    fft_pow2(&mut a);
    fft_pow2(&mut b);
    for i in 0..m {
        a[i] = a[i] * b[i];
    }
    // Unscaled inverse via conjugation, then apply 1/m.
    for v in a.iter_mut() {
        *v = v.conj();
    }
    fft_pow2(&mut a);
    let inv_m = T::from_f64(1.0 / m as f64);
    for (k, out) in buf.iter_mut().enumerate() {
        *out = a[k].conj() * inv_m * chirp[k];
    }
}

/// In-place DFT. `inverse` uses the e^{+i...} kernel and does NOT apply the
/// 1/n scale; callers own normalization.
pub fn dft_unscaled<T: Scalar>(buf: &mut [Complex<T>], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if inverse {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
    }
    if n.is_power_of_two() {
        fft_pow2(buf);
    } else {
        fft_bluestein(buf);
    }
    if inverse {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
    }
}

/// In-place 2-D DFT over a row-major h×w grid (rows, then columns).
pub fn dft2_unscaled<T: Scalar>(grid: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(grid.len(), h * w);
    for y in 0..h {
        dft_unscaled(&mut grid[y * w..(y + 1) * w], inverse);
    }
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        dft_unscaled(&mut col, inverse);
        for y in 0..h {
            grid[y * w + x] = col[y];
        }
    }
}

pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Forward real 2-D FFT of one h×w plane; returns the half spectrum
/// (re, im), each h×(⌊w/2⌋+1).
pub fn rfft2_plane<T: Scalar>(x: &[T], h: usize, w: usize) -> (Vec<T>, Vec<T>) {
    let wh = half_width(w);
    let mut grid: Vec<Complex<T>> =
        x.iter().map(|&v| Complex::new(v, T::zero())).collect();
    dft2_unscaled(&mut grid, h, w, false);
    let mut re = vec![T::zero(); h * wh];
    let mut im = vec![T::zero(); h * wh];
    for y in 0..h {
        for kx in 0..wh {
            re[y * wh + kx] = grid[y * w + kx].re;
            im[y * wh + kx] = grid[y * w + kx].im;
        }
    }
    (re, im)
}

/// Hermitian embedding of a half spectrum into the full h×w grid.
fn embed_hermitian<T: Scalar>(re: &[T], im: &[T], h: usize, w: usize) -> Vec<Complex<T>> {
    let wh = half_width(w);
    let mut grid = vec![Complex::new(T::zero(), T::zero()); h * w];
    for y in 0..h {
        for kx in 0..w {
            grid[y * w + kx] = if kx < wh {
                Complex::new(re[y * wh + kx], im[y * wh + kx])
            } else {
                let my = (h - y) % h;
                let mx = w - kx;
                Complex::new(re[my * wh + mx], -im[my * wh + mx])
            };
        }
    }
    grid
}

/// Inverse of `rfft2_plane`: real part of the scaled inverse transform of
/// the Hermitian embedding.
pub fn irfft2_plane<T: Scalar>(re: &[T], im: &[T], h: usize, w: usize) -> Vec<T> {
    let mut grid = embed_hermitian(re, im, h, w);
    dft2_unscaled(&mut grid, h, w, true);
    let scale = T::from_f64(1.0 / (h * w) as f64);
    grid.iter().map(|v| v.re * scale).collect()
}

/// Adjoint of `rfft2_plane` as a real-linear map: given output cotangents
/// (g_re, g_im), returns the input cotangent.
pub fn rfft2_adjoint_plane<T: Scalar>(gre: &[T], gim: &[T], h: usize, w: usize) -> Vec<T> {
    let wh = half_width(w);
    let mut grid = vec![Complex::new(T::zero(), T::zero()); h * w];
    for y in 0..h {
        for kx in 0..wh {
            grid[y * w + kx] = Complex::new(gre[y * wh + kx], gim[y * wh + kx]);
        }
    }
    dft2_unscaled(&mut grid, h, w, true);
    grid.iter().map(|v| v.re).collect()
}

/// Adjoint of `irfft2_plane`: given the output cotangent (real h×w grid),
/// returns cotangents for the stored half spectrum.
pub fn irfft2_adjoint_plane<T: Scalar>(g: &[T], h: usize, w: usize) -> (Vec<T>, Vec<T>) {
    let wh = half_width(w);
    let mut grid: Vec<Complex<T>> =
        g.iter().map(|&v| Complex::new(v, T::zero())).collect();
    dft2_unscaled(&mut grid, h, w, false);
    let scale = T::from_f64(1.0 / (h * w) as f64);
    let mut gre = vec![T::zero(); h * wh];
    let mut gim = vec![T::zero(); h * wh];
    for y in 0..h {
        for kx in 0..w {
            let v = grid[y * w + kx] * scale;
            if kx < wh {
                gre[y * wh + kx] += v.re;
                gim[y * wh + kx] += v.im;
            } else {
                // This full-grid position mirrored conj(F[my, mx]).
                let my = (h - y) % h;
                let mx = w - kx;
                gre[my * wh + mx] += v.re;
                gim[my * wh + mx] -= v.im;
            }
        }
    }
    (gre, gim)
}
