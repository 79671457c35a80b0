//! Motion-blur synthesis: a second-order random camera trajectory is
//! rasterized into a point-spread function and convolved with the sharp
//! image (reflected borders). Plus PSNR and the PSNR/SSIM population
//! statistics of a generated dataset.

use dreb_tensor::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::losses::ssim_index;
use crate::rng::SeedStreams;

#[derive(Clone, Copy, Debug)]
pub struct TrajectoryParams {
    pub length_steps: usize,
    /// Probability scale of impulsive velocity kicks.
    pub anxiety: f64,
    /// Std-dev of the per-step Gaussian velocity perturbation (sub-pixels).
    pub max_jitter: f64,
    /// Fraction of the trajectory the shutter integrates over.
    pub exposure_fraction: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        TrajectoryParams { length_steps: 64, anxiety: 0.005, max_jitter: 0.25, exposure_fraction: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub points: Vec<(f64, f64)>,
    pub params: TrajectoryParams,
    pub seed: u64,
}

impl Trajectory {
    /// Points the shutter actually integrates (exposure prefix).
    pub fn exposed(&self) -> &[(f64, f64)] {
        let n = ((self.points.len() as f64) * self.params.exposure_fraction).ceil() as usize;
        &self.points[..n.clamp(1, self.points.len())]
    }
}

#[derive(Clone, Debug)]
pub struct Psf {
    /// k×k nonnegative kernel summing to 1.
    pub kernel: Vec<f64>,
    pub size: usize,
}

#[derive(Clone)]
pub struct BlurPair<T: Scalar> {
    pub sharp: Tensor<T>,
    pub blurred: Tensor<T>,
    pub psf: Psf,
    pub seed: u64,
}

/// Second-order random walk: velocity receives Gaussian jitter each step
/// plus, with probability proportional to anxiety, an impulsive deflection
/// that flips and re-kicks it. The returned positions are centered over
/// the exposed prefix. Deterministic per (params, seed).
pub fn sample_trajectory(params: &TrajectoryParams, seed: u64) -> Result<Trajectory> {
    if params.length_steps < 2 {
        return Err(CoreError::Input("trajectory needs at least 2 steps".into()));
    }
    if params.anxiety < 0.0 {
        return Err(CoreError::Input("anxiety must be >= 0".into()));
    }
    let mut rng: ChaCha12Rng = SeedStreams::new(seed).stream("trajectory");
    let mut points = Vec::with_capacity(params.length_steps);
    let (mut px, mut py) = (0.0f64, 0.0f64);
    let (mut vx, mut vy) = (0.0f64, 0.0f64);
    points.push((px, py));
    let impulse_p = (params.anxiety * 10.0).min(1.0);
    for _ in 1..params.length_steps {
        let gx: f64 = rng.sample(StandardNormal);
        let gy: f64 = rng.sample(StandardNormal);
        vx += params.max_jitter * gx;
        vy += params.max_jitter * gy;
        if rng.random::<f64>() < impulse_p {
            let kx: f64 = rng.sample(StandardNormal);
            let ky: f64 = rng.sample(StandardNormal);
            vx = -0.7 * vx + 4.0 * params.max_jitter * kx;
            vy = -0.7 * vy + 4.0 * params.max_jitter * ky;
        }
        // Light damping keeps long walks inside a PSF-sized window.
        vx *= 0.95;
        vy *= 0.95;
        px += vx;
        py += vy;
        points.push((px, py));
    }
    let t = Trajectory { points, params: *params, seed };
    let exposed = t.exposed().to_vec();
    let n = exposed.len() as f64;
    let mx = exposed.iter().map(|p| p.0).sum::<f64>() / n;
    let my = exposed.iter().map(|p| p.1).sum::<f64>() / n;
    Ok(Trajectory {
        points: t.points.iter().map(|&(x, y)| (x - mx, y - my)).collect(),
        ..t
    })
}

/// Bilinear splat of the exposed trajectory points onto a k×k grid,
/// normalized to unit sum. Points falling outside are clipped; if nothing
/// lands inside, that is an error.
pub fn rasterize_psf(t: &Trajectory, k_psf: usize) -> Result<Psf> {
    if k_psf % 2 == 0 || k_psf == 0 {
        return Err(CoreError::Input(format!("psf size {k_psf} must be odd")));
    }
    let c = ((k_psf - 1) / 2) as f64;
    let mut kernel = vec![0.0f64; k_psf * k_psf];
    for &(x, y) in t.exposed() {
        let (gx, gy) = (c + x, c + y);
        let (x0, y0) = (gx.floor(), gy.floor());
        let (tx, ty) = (gx - x0, gy - y0);
        for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
            for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
                let (cx, cy) = (x0 + dx, y0 + dy);
                if cx >= 0.0 && cy >= 0.0 && (cx as usize) < k_psf && (cy as usize) < k_psf {
                    kernel[cy as usize * k_psf + cx as usize] += wy * wx;
                }
            }
        }
    }
    let sum: f64 = kernel.iter().sum();
    if sum <= 0.0 {
        return Err(CoreError::Input(
            "trajectory fell entirely outside the PSF grid".into(),
        ));
    }
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    Ok(Psf { kernel, size: k_psf })
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - 1 - i;
        }
    }
    i as usize
}

/// Per-channel 2-D convolution with the PSF under reflected borders,
/// clamped to [0, 1].
pub fn apply_blur<T: Scalar>(sharp: &Tensor<T>, psf: &Psf) -> Result<Tensor<T>> {
    let img = convolve_reflect(sharp, psf)?;
    let clamped: Vec<T> = img
        .to_vec()
        .into_iter()
        .map(|v| v.max(T::zero()).min(T::one()))
        .collect();
    Ok(Tensor::from_vec(&img.shape(), clamped)?)
}

/// The blur convolution before clamping (the energy-preservation surface).
pub fn convolve_reflect<T: Scalar>(sharp: &Tensor<T>, psf: &Psf) -> Result<Tensor<T>> {
    let s = sharp.shape();
    let (c, h, w) = match s.as_slice() {
        [c, h, w] => (*c, *h, *w),
        _ => return Err(CoreError::Input(format!("apply_blur: [C,H,W] expected, got {s:?}"))),
    };
    let k = psf.size;
    if k > h || k > w {
        return Err(CoreError::Input(format!(
            "psf {k}x{k} larger than image {h}x{w}"
        )));
    }
    let half = (k - 1) as isize / 2;
    let x = sharp.to_vec();
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0f64;
                for ky in 0..k {
                    let sy = reflect(y as isize - (ky as isize - half), h);
                    for kx in 0..k {
                        let sx = reflect(xx as isize - (kx as isize - half), w);
                        acc += psf.kernel[ky * k + kx] * plane[sy * w + sx].as_f64();
                    }
                }
                out[(ci * h + y) * w + xx] = T::from_f64(acc);
            }
        }
    }
    Ok(Tensor::from_vec(&s, out)?)
}

/// Deterministic sharp/blurred pair for one image.
pub fn make_blur_pair<T: Scalar>(
    sharp: &Tensor<T>,
    params: &TrajectoryParams,
    k_psf: usize,
    seed: u64,
) -> Result<BlurPair<T>> {
    let t = sample_trajectory(params, seed)?;
    let psf = rasterize_psf(&t, k_psf)?;
    let blurred = apply_blur(sharp, &psf)?;
    Ok(BlurPair { sharp: sharp.clone(), blurred, psf, seed })
}

/// 10·log10(peak²/MSE); +∞ for identical images.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(CoreError::Input(format!(
            "psnr: shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (av, bv) = (a.to_vec(), b.to_vec());
    let mse = av
        .iter()
        .zip(&bv)
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / av.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// One histogram row of `blur_stats`: images whose PSNR floors to `bin`
/// (`None` = infinite PSNR).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsnrBin {
    pub bin: Option<i64>,
    pub count: usize,
    pub mean_ssim: f64,
}

/// Per-integer-PSNR-bin image count and mean SSIM over a dataset of pairs.
pub fn blur_stats<T: Scalar>(pairs: &[BlurPair<T>]) -> Result<Vec<PsnrBin>> {
    if pairs.is_empty() {
        return Err(CoreError::Input("blur_stats: empty dataset".into()));
    }
    let mut acc: std::collections::BTreeMap<Option<i64>, (usize, f64)> =
        std::collections::BTreeMap::new();
    for p in pairs {
        let snr = psnr(&p.sharp, &p.blurred, 1.0)?;
        let ssim = ssim_index(&p.blurred, &p.sharp, 1.0)?;
        let bin = if snr.is_infinite() { None } else { Some(snr.floor() as i64) };
        let e = acc.entry(bin).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += ssim;
    }
    Ok(acc
        .into_iter()
        .map(|(bin, (count, ssim_sum))| PsnrBin { bin, count, mean_ssim: ssim_sum / count as f64 })
        .collect())
}

/// CSV encoding of the histogram: `psnr_bin,count,mean_ssim` with `inf`
/// for the infinite bin.
pub fn stats_to_csv(bins: &[PsnrBin]) -> String {
    let mut out = String::from("psnr_bin,count,mean_ssim\n");
    for b in bins {
        let label = match b.bin {
            Some(v) => v.to_string(),
            None => "inf".to_string(),
        };
        out.push_str(&format!("{label},{},{:.6}\n", b.count, b.mean_ssim));
    }
    out
}
