mod conv;
mod norm;
mod pool;
mod spectral;

pub use norm::{BnMode, BnState};
pub use pool::UpsampleMode;
pub use spectral::ComplexGrid;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{debug_check_finite, Tensor};

/// Broadcast plan for a binary elementwise op (numpy rules: ranks are
/// left-padded with 1, a dim must match or be 1).
pub(crate) struct BcastPlan {
    pub out_shape: Vec<usize>,
    a_stride: Vec<usize>,
    b_stride: Vec<usize>,
}

impl BcastPlan {
    pub fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let rank = a.len().max(b.len());
        let get = |s: &[usize], i: usize| -> usize {
            let pad = rank - s.len();
            if i < pad {
                1
            } else {
                s[i - pad]
            }
        };
        let mut out_shape = vec![0; rank];
        for i in 0..rank {
            let (da, db) = (get(a, i), get(b, i));
            out_shape[i] = if da == db {
                da
            } else if da == 1 {
                db
            } else if db == 1 {
                da
            } else {
                return Err(TensorError::shape(
                    op,
                    format!("cannot broadcast {a:?} with {b:?}"),
                ));
            };
        }
        let strides_of = |s: &[usize]| -> Vec<usize> {
            // Row-major strides in the padded rank; 0 where broadcast.
            let mut st = vec![0usize; rank];
            let pad = rank - s.len();
            let mut acc = 1usize;
            for i in (0..s.len()).rev() {
                st[pad + i] = if s[i] == 1 { 0 } else { acc };
                acc *= s[i];
            }
            st
        };
        Ok(BcastPlan { out_shape, a_stride: strides_of(a), b_stride: strides_of(b) })
    }

    pub fn numel(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Calls `f(out_idx, a_idx, b_idx)` for every output position.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let rank = self.out_shape.len();
        if rank == 0 {
            f(0, 0, 0);
            return;
        }
        let n = self.numel();
        let mut idx = vec![0usize; rank];
        let (mut ao, mut bo) = (0usize, 0usize);
        for out in 0..n {
            f(out, ao, bo);
            // Odometer increment from the last axis.
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                ao += self.a_stride[ax];
                bo += self.b_stride[ax];
                if idx[ax] < self.out_shape[ax] {
                    break;
                }
                ao -= self.a_stride[ax] * self.out_shape[ax];
                bo -= self.b_stride[ax] * self.out_shape[ax];
                idx[ax] = 0;
            }
        }
    }
}

fn same_shape(a: &[usize], b: &[usize]) -> bool {
    a == b
}

impl<T: Scalar> Tape<T> {
    fn binary(
        &self,
        op: &'static str,
        a: &Tensor<T>,
        b: &Tensor<T>,
        fwd: fn(T, T) -> T,
        // (gout, a, b) -> (ga, gb)
        bwd: fn(T, T, T) -> (T, T),
    ) -> Result<Tensor<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        let out = if same_shape(&sa, &sb) {
            let (da, db) = (a.data(), b.data());
            let data: Vec<T> = da.iter().zip(db.iter()).map(|(&x, &y)| fwd(x, y)).collect();
            Tensor::new_unchecked(sa.clone(), data, false)
        } else {
            let plan = BcastPlan::new(op, &sa, &sb)?;
            let mut data = vec![T::zero(); plan.numel()];
            {
                let (da, db) = (a.data(), b.data());
                plan.for_each(|o, ia, ib| data[o] = fwd(da[ia], db[ib]));
            }
            Tensor::new_unchecked(plan.out_shape.clone(), data, false)
        };
        debug_check_finite(op, &out.data());
        if !self.is_recording() {
            return Ok(out);
        }
        let (av, bv) = (a.to_vec(), b.to_vec());
        let (sa2, sb2) = (sa.clone(), sb.clone());
        Ok(self.record(
            &[a, b],
            out,
            Box::new(move |gout| {
                let mut ga = vec![T::zero(); av.len()];
                let mut gb = vec![T::zero(); bv.len()];
                if same_shape(&sa2, &sb2) {
                    for i in 0..gout.len() {
                        let (da, db) = bwd(gout[i], av[i], bv[i]);
                        ga[i] += da;
                        gb[i] += db;
                    }
                } else {
                    let plan = BcastPlan::new("binary-bwd", &sa2, &sb2).expect("checked in fwd");
                    plan.for_each(|o, ia, ib| {
                        let (da, db) = bwd(gout[o], av[ia], bv[ib]);
                        ga[ia] += da;
                        gb[ib] += db;
                    });
                }
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary("add", a, b, |x, y| x + y, |g, _, _| (g, g))
    }

    pub fn sub(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary("sub", a, b, |x, y| x - y, |g, _, _| (g, -g))
    }

    pub fn mul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary("mul", a, b, |x, y| x * y, |g, x, y| (g * y, g * x))
    }

    pub fn div(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary("div", a, b, |x, y| x / y, |g, x, y| (g / y, -g * x / (y * y)))
    }

    fn unary(
        &self,
        op: &'static str,
        x: &Tensor<T>,
        fwd: impl Fn(T) -> T,
        // (gout, x, y) -> gx
        bwd: impl Fn(T, T, T) -> T + 'static,
    ) -> Tensor<T> {
        let shape = x.shape();
        let data: Vec<T> = x.data().iter().map(|&v| fwd(v)).collect();
        let out = Tensor::new_unchecked(shape, data, false);
        debug_check_finite(op, &out.data());
        if !self.is_recording() {
            return out;
        }
        let xv = x.to_vec();
        let yv = out.to_vec();
        self.record(
            &[x],
            out,
            Box::new(move |gout| {
                let gx = gout
                    .iter()
                    .zip(xv.iter().zip(&yv))
                    .map(|(&g, (&xi, &yi))| bwd(g, xi, yi))
                    .collect();
                vec![gx]
            }),
        )
    }

    pub fn neg(&self, x: &Tensor<T>) -> Tensor<T> {
        self.unary("neg", x, |v| -v, |g, _, _| -g)
    }

    /// |x|; the subgradient at 0 is 0.
    pub fn abs(&self, x: &Tensor<T>) -> Tensor<T> {
        self.unary(
            "abs",
            x,
            |v| v.abs(),
            |g, xi, _| {
                if xi > T::zero() {
                    g
                } else if xi < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn relu(&self, x: &Tensor<T>) -> Tensor<T> {
        self.unary(
            "relu",
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            |g, xi, _| if xi > T::zero() { g } else { T::zero() },
        )
    }

    /// Numerically-stable logistic; output is strictly inside (0, 1).
    pub fn sigmoid(&self, x: &Tensor<T>) -> Tensor<T> {
        self.unary("sigmoid", x, sigmoid_scalar, |g, _, yi| g * yi * (T::one() - yi))
    }

    pub fn ln(&self, x: &Tensor<T>) -> Tensor<T> {
        self.unary("ln", x, |v| v.ln(), |g, xi, _| g / xi)
    }

    /// Elementwise x^e for a fixed exponent.
    pub fn pow_scalar(&self, x: &Tensor<T>, e: T) -> Tensor<T> {
        self.unary(
            "pow_scalar",
            x,
            move |v| v.powf(e),
            move |g, xi, _| g * e * xi.powf(e - T::one()),
        )
    }

    /// Clamp to [lo, hi]; gradient is zero where the input fell outside.
    pub fn clamp(&self, x: &Tensor<T>, lo: T, hi: T) -> Tensor<T> {
        self.unary(
            "clamp",
            x,
            move |v| v.max(lo).min(hi),
            move |g, xi, _| if xi > lo && xi < hi { g } else { T::zero() },
        )
    }

    pub fn scale(&self, x: &Tensor<T>, c: T) -> Tensor<T> {
        self.unary("scale", x, move |v| v * c, move |g, _, _| g * c)
    }

    pub fn add_scalar(&self, x: &Tensor<T>, c: T) -> Tensor<T> {
        self.unary("add_scalar", x, move |v| v + c, |g, _, _| g)
    }

    /// c - x, as a single node.
    pub fn rsub_scalar(&self, c: T, x: &Tensor<T>) -> Tensor<T> {
        self.unary("rsub_scalar", x, move |v| c - v, |g, _, _| -g)
    }

    pub fn sum_all(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut acc = T::zero();
        for &v in x.data().iter() {
            acc += v;
        }
        let out = Tensor::new_unchecked(vec![], vec![acc], false);
        debug_check_finite("sum_all", &out.data());
        if !self.is_recording() {
            return out;
        }
        let n = x.numel();
        self.record(&[x], out, Box::new(move |gout| vec![vec![gout[0]; n]]))
    }

    pub fn mean_all(&self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.numel();
        let mut acc = T::zero();
        for &v in x.data().iter() {
            acc += v;
        }
        let inv = T::one() / T::from_usize(n);
        let out = Tensor::new_unchecked(vec![], vec![acc * inv], false);
        debug_check_finite("mean_all", &out.data());
        if !self.is_recording() {
            return out;
        }
        self.record(&[x], out, Box::new(move |gout| vec![vec![gout[0] * inv; n]]))
    }

    pub fn reshape(&self, x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if n != x.numel() {
            return Err(TensorError::shape(
                "reshape",
                format!("{:?} -> {:?} changes element count", x.shape(), shape),
            ));
        }
        let out = Tensor::new_unchecked(shape.to_vec(), x.to_vec(), false);
        if !self.is_recording() {
            return Ok(out);
        }
        Ok(self.record(&[x], out, Box::new(move |gout| vec![gout.to_vec()])))
    }

    /// Concatenate two [N, C, H, W] tensors along the channel axis.
    pub fn concat_channels(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 4 || sb.len() != 4 {
            return Err(TensorError::shape("concat_channels", "rank-4 inputs required"));
        }
        if sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(TensorError::shape(
                "concat_channels",
                format!("incompatible shapes {sa:?} and {sb:?}"),
            ));
        }
        let (n, ca, cb, h, w) = (sa[0], sa[1], sb[1], sa[2], sa[3]);
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (ca + cb) * plane);
        {
            let (da, db) = (a.data(), b.data());
            for i in 0..n {
                data.extend_from_slice(&da[i * ca * plane..(i + 1) * ca * plane]);
                data.extend_from_slice(&db[i * cb * plane..(i + 1) * cb * plane]);
            }
        }
        let out = Tensor::new_unchecked(vec![n, ca + cb, h, w], data, false);
        if !self.is_recording() {
            return Ok(out);
        }
        Ok(self.record(
            &[a, b],
            out,
            Box::new(move |gout| {
                let mut ga = vec![T::zero(); n * ca * plane];
                let mut gb = vec![T::zero(); n * cb * plane];
                let step = (ca + cb) * plane;
                for i in 0..n {
                    let base = i * step;
                    ga[i * ca * plane..(i + 1) * ca * plane]
                        .copy_from_slice(&gout[base..base + ca * plane]);
                    gb[i * cb * plane..(i + 1) * cb * plane]
                        .copy_from_slice(&gout[base + ca * plane..base + step]);
                }
                vec![ga, gb]
            }),
        ))
    }
}

pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
