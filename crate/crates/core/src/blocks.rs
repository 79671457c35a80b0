//! Layer building blocks shared by the detection backbone, the restoration
//! branch, and the attention modules.

use std::rc::Rc;

use dreb_tensor::{BnMode, BnState, Scalar, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::Result;

pub(crate) const BN_MOMENTUM: f64 = 0.1;
pub(crate) const BN_EPS: f64 = 1e-5;

/// He-normal draw for a conv weight with the given fan-in.
pub(crate) fn he_normal<T: Scalar>(rng: &mut ChaCha12Rng, n: usize, fan_in: usize) -> Vec<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| {
            let v: f64 = rng.sample(rand_distr::StandardNormal);
            T::from_f64(v * std)
        })
        .collect()
}

pub(crate) struct Conv2dLayer<T: Scalar> {
    pub w: Tensor<T>,
    pub b: Option<Tensor<T>>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    pub fn new(
        rng: &mut ChaCha12Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let w = Tensor::param(&[cout, cin, k, k], he_normal(rng, cout * cin * k * k, cin * k * k))
            .expect("conv weight");
        let b = bias.then(|| Tensor::param(&[cout], vec![T::zero(); cout]).expect("conv bias"));
        Conv2dLayer { w, b, stride, pad }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(tape.conv2d(x, &self.w, self.b.as_ref(), self.stride, self.pad)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        if let Some(b) = &self.b {
            out.push((format!("{prefix}.b"), b.clone()));
        }
    }
}

pub(crate) struct DeconvLayer<T: Scalar> {
    pub w: Tensor<T>, // [C_in, C_out, 4, 4]
    pub b: Option<Tensor<T>>,
}

impl<T: Scalar> DeconvLayer<T> {
    pub fn new(rng: &mut ChaCha12Rng, cin: usize, cout: usize, bias: bool) -> Self {
        let w = Tensor::param(&[cin, cout, 4, 4], he_normal(rng, cin * cout * 16, cin * 16))
            .expect("deconv weight");
        let b = bias.then(|| Tensor::param(&[cout], vec![T::zero(); cout]).expect("deconv bias"));
        DeconvLayer { w, b }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(tape.conv_transpose2d(x, &self.w, self.b.as_ref(), 2, 1)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        if let Some(b) = &self.b {
            out.push((format!("{prefix}.b"), b.clone()));
        }
    }
}

pub(crate) struct BnLayer<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub state: Rc<BnState<T>>,
}

impl<T: Scalar> BnLayer<T> {
    pub fn new(channels: usize) -> Self {
        BnLayer {
            gamma: Tensor::param(&[channels], vec![T::one(); channels]).expect("bn gamma"),
            beta: Tensor::param(&[channels], vec![T::zero(); channels]).expect("bn beta"),
            state: Rc::new(BnState::new(
                channels,
                T::from_f64(BN_MOMENTUM),
                T::from_f64(BN_EPS),
            )),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        Ok(tape.batch_norm(x, &self.gamma, &self.beta, &self.state, mode)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }

    pub fn collect_state(&self, prefix: &str, out: &mut Vec<(String, Rc<BnState<T>>)>) {
        out.push((prefix.to_string(), Rc::clone(&self.state)));
    }
}

/// conv → BN → ReLU, the workhorse unit of both branches.
pub(crate) struct ConvBnRelu<T: Scalar> {
    pub conv: Conv2dLayer<T>,
    pub bn: BnLayer<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new(
        rng: &mut ChaCha12Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        ConvBnRelu {
            conv: Conv2dLayer::new(rng, cin, cout, k, stride, pad, false),
            bn: BnLayer::new(cout),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let c = self.conv.forward(tape, x)?;
        let n = self.bn.forward(tape, &c, mode)?;
        Ok(tape.relu(&n))
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.conv.collect(&format!("{prefix}.conv"), out);
        self.bn.collect(&format!("{prefix}.bn"), out);
    }

    pub fn collect_state(&self, prefix: &str, out: &mut Vec<(String, Rc<BnState<T>>)>) {
        self.bn.collect_state(&format!("{prefix}.bn"), out);
    }
}

/// Squeeze-excitation: global pool → bottleneck MLP (1×1 convs) → sigmoid
/// gate broadcast over the map.
pub(crate) struct SeBlock<T: Scalar> {
    pub fc1: Conv2dLayer<T>,
    pub fc2: Conv2dLayer<T>,
}

impl<T: Scalar> SeBlock<T> {
    pub fn new(rng: &mut ChaCha12Rng, channels: usize, reduction: usize) -> Self {
        let mid = (channels / reduction).max(1);
        SeBlock {
            fc1: Conv2dLayer::new(rng, channels, mid, 1, 1, 0, true),
            fc2: Conv2dLayer::new(rng, mid, channels, 1, 1, 0, true),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let p = tape.adaptive_avg_pool(x)?;
        let a = self.fc1.forward(tape, &p)?;
        let a = tape.relu(&a);
        let a = self.fc2.forward(tape, &a)?;
        let gate = tape.sigmoid(&a);
        Ok(tape.mul(x, &gate)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.fc1.collect(&format!("{prefix}.fc1"), out);
        self.fc2.collect(&format!("{prefix}.fc2"), out);
    }
}

/// Two conv-BN-ReLU units (the first optionally strided) plus optional SE;
/// the tiny variant drops the SE gate and nothing else.
pub(crate) struct ConvBlock<T: Scalar> {
    pub a: ConvBnRelu<T>,
    pub b: ConvBnRelu<T>,
    pub se: Option<SeBlock<T>>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new(
        rng: &mut ChaCha12Rng,
        cin: usize,
        cout: usize,
        stride: usize,
        se_reduction: Option<usize>,
    ) -> Self {
        ConvBlock {
            a: ConvBnRelu::new(rng, cin, cout, 3, stride, 1),
            b: ConvBnRelu::new(rng, cout, cout, 3, 1, 1),
            se: se_reduction.map(|r| SeBlock::new(rng, cout, r)),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let y = self.a.forward(tape, x, mode)?;
        let y = self.b.forward(tape, &y, mode)?;
        match &self.se {
            Some(se) => se.forward(tape, &y),
            None => Ok(y),
        }
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.a.collect(&format!("{prefix}.a"), out);
        self.b.collect(&format!("{prefix}.b"), out);
        if let Some(se) = &self.se {
            se.collect(&format!("{prefix}.se"), out);
        }
    }

    pub fn collect_state(&self, prefix: &str, out: &mut Vec<(String, Rc<BnState<T>>)>) {
        self.a.collect_state(&format!("{prefix}.a"), out);
        self.b.collect_state(&format!("{prefix}.b"), out);
    }
}

/// Transposed-conv upsampling unit: deconv (k4 s2 p1) → BN → ReLU.
pub(crate) struct UpBlock<T: Scalar> {
    pub deconv: DeconvLayer<T>,
    pub bn: BnLayer<T>,
}

impl<T: Scalar> UpBlock<T> {
    pub fn new(rng: &mut ChaCha12Rng, cin: usize, cout: usize) -> Self {
        UpBlock { deconv: DeconvLayer::new(rng, cin, cout, false), bn: BnLayer::new(cout) }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let y = self.deconv.forward(tape, x)?;
        let y = self.bn.forward(tape, &y, mode)?;
        Ok(tape.relu(&y))
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.deconv.collect(&format!("{prefix}.deconv"), out);
        self.bn.collect(&format!("{prefix}.bn"), out);
    }

    pub fn collect_state(&self, prefix: &str, out: &mut Vec<(String, Rc<BnState<T>>)>) {
        self.bn.collect_state(&format!("{prefix}.bn"), out);
    }
}

/// Decoder level: upsample, concat the encoder skip, fuse with a 1×1 conv,
/// then one 3×3 conv-BN-ReLU.
pub(crate) struct DecBlock<T: Scalar> {
    pub up: UpBlock<T>,
    pub fuse: Conv2dLayer<T>,
    pub conv: ConvBnRelu<T>,
}

impl<T: Scalar> DecBlock<T> {
    pub fn new(rng: &mut ChaCha12Rng, cin: usize, cout: usize) -> Self {
        DecBlock {
            up: UpBlock::new(rng, cin, cout),
            fuse: Conv2dLayer::new(rng, 2 * cout, cout, 1, 1, 0, false),
            conv: ConvBnRelu::new(rng, cout, cout, 3, 1, 1),
        }
    }

    pub fn forward(
        &self,
        tape: &Tape<T>,
        x: &Tensor<T>,
        skip: &Tensor<T>,
        mode: BnMode,
    ) -> Result<Tensor<T>> {
        let u = self.up.forward(tape, x, mode)?;
        let cat = tape.concat_channels(&u, skip)?;
        let f = self.fuse.forward(tape, &cat)?;
        self.conv.forward(tape, &f, mode)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.up.collect(&format!("{prefix}.up"), out);
        self.fuse.collect(&format!("{prefix}.fuse"), out);
        self.conv.collect(&format!("{prefix}.conv"), out);
    }

    pub fn collect_state(&self, prefix: &str, out: &mut Vec<(String, Rc<BnState<T>>)>) {
        self.up.collect_state(&format!("{prefix}.up"), out);
        self.conv.collect_state(&format!("{prefix}.conv"), out);
    }
}

/// Output head: 3×3 conv + ReLU, then 1×1 projection.
pub(crate) struct Head<T: Scalar> {
    pub conv: Conv2dLayer<T>,
    pub out: Conv2dLayer<T>,
}

impl<T: Scalar> Head<T> {
    pub fn new(
        rng: &mut ChaCha12Rng,
        cin: usize,
        cout: usize,
        out_bias_init: f64,
    ) -> Self {
        let conv = Conv2dLayer::new(rng, cin, cin, 3, 1, 1, true);
        let out = Conv2dLayer::new(rng, cin, cout, 1, 1, 0, true);
        if let Some(b) = &out.b {
            b.copy_from(&vec![T::from_f64(out_bias_init); cout]).expect("bias init");
        }
        Head { conv, out }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.conv.forward(tape, x)?;
        let y = tape.relu(&y);
        self.out.forward(tape, &y)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.conv.collect(&format!("{prefix}.conv"), out);
        self.out.collect(&format!("{prefix}.out"), out);
    }
}
