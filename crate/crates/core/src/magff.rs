//! Two-stage attention-guided feature fusion. Each stage derives a sigmoid
//! gate from the sum of a local attention map (1×1 conv bottleneck over the
//! full map) and a global one (same stack after global pooling), then
//! convexly combines the two branch features under that gate.

use std::rc::Rc;

use dreb_tensor::{BnMode, BnState, Scalar, Tape, Tensor};
use rand_chacha::ChaCha12Rng;

use crate::blocks::{BnLayer, Conv2dLayer};
use crate::error::{CoreError, Result};

/// One attention branch: conv1×1 (C→C/r) → BN → ReLU → conv1×1 (C/r→C) → BN.
pub(crate) struct AttentionBranch<T: Scalar> {
    conv1: Conv2dLayer<T>,
    bn1: BnLayer<T>,
    conv2: Conv2dLayer<T>,
    bn2: BnLayer<T>,
}

impl<T: Scalar> AttentionBranch<T> {
    fn new(rng: &mut ChaCha12Rng, channels: usize, reduction: usize) -> Self {
        let mid = channels / reduction;
        AttentionBranch {
            conv1: Conv2dLayer::new(rng, channels, mid, 1, 1, 0, false),
            bn1: BnLayer::new(mid),
            conv2: Conv2dLayer::new(rng, mid, channels, 1, 1, 0, false),
            bn2: BnLayer::new(channels),
        }
    }

    fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let y = self.conv1.forward(tape, x)?;
        let y = self.bn1.forward(tape, &y, mode)?;
        let y = tape.relu(&y);
        let y = self.conv2.forward(tape, &y)?;
        self.bn2.forward(tape, &y, mode)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.conv1.collect(&format!("{prefix}.conv1"), out);
        self.bn1.collect(&format!("{prefix}.bn1"), out);
        self.conv2.collect(&format!("{prefix}.conv2"), out);
        self.bn2.collect(&format!("{prefix}.bn2"), out);
    }

    fn collect_state(&self, prefix: &str, out: &mut Vec<(String, Rc<BnState<T>>)>) {
        self.bn1.collect_state(&format!("{prefix}.bn1"), out);
        self.bn2.collect_state(&format!("{prefix}.bn2"), out);
    }

    /// Saturate the gate by forcing the final BN shift; gamma 0 makes the
    /// pre-activation exactly beta everywhere.
    #[doc(hidden)]
    pub fn force_output(&self, value: T) {
        let c = self.bn2.gamma.numel();
        self.bn2.gamma.copy_from(&vec![T::zero(); c]).unwrap();
        self.bn2.beta.copy_from(&vec![value; c]).unwrap();
    }
}

/// Parameters of one fusion stage: independent local and global branches.
pub struct MagffStageParams<T: Scalar> {
    pub(crate) local: AttentionBranch<T>,
    pub(crate) global: AttentionBranch<T>,
    pub channels: usize,
    pub reduction: usize,
}

impl<T: Scalar> MagffStageParams<T> {
    pub fn new(rng: &mut ChaCha12Rng, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(CoreError::Config(format!(
                "attention reduction {reduction} must divide channel count {channels}"
            )));
        }
        Ok(MagffStageParams {
            local: AttentionBranch::new(rng, channels, reduction),
            global: AttentionBranch::new(rng, channels, reduction),
            channels,
            reduction,
        })
    }

    #[doc(hidden)]
    pub fn force_gate(&self, pre_activation: T) {
        self.local.force_output(pre_activation);
        self.global.force_output(pre_activation);
    }
}

/// Both fusion stages; stage 2 re-derives attention on the stage-1 output
/// with its own (non-shared) weights.
pub struct MagffParams<T: Scalar> {
    pub stage1: MagffStageParams<T>,
    pub stage2: MagffStageParams<T>,
}

impl<T: Scalar> MagffParams<T> {
    pub fn new(rng: &mut ChaCha12Rng, channels: usize, reduction: usize) -> Result<Self> {
        Ok(MagffParams {
            stage1: MagffStageParams::new(rng, channels, reduction)?,
            stage2: MagffStageParams::new(rng, channels, reduction)?,
        })
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.stage1.local.collect(&format!("{prefix}.s1.local"), out);
        self.stage1.global.collect(&format!("{prefix}.s1.global"), out);
        self.stage2.local.collect(&format!("{prefix}.s2.local"), out);
        self.stage2.global.collect(&format!("{prefix}.s2.global"), out);
    }

    pub fn collect_state(&self, prefix: &str, out: &mut Vec<(String, Rc<BnState<T>>)>) {
        self.stage1.local.collect_state(&format!("{prefix}.s1.local"), out);
        self.stage1.global.collect_state(&format!("{prefix}.s1.global"), out);
        self.stage2.local.collect_state(&format!("{prefix}.s2.local"), out);
        self.stage2.global.collect_state(&format!("{prefix}.s2.global"), out);
    }
}

fn check_channels<T: Scalar>(op: &'static str, x: &Tensor<T>, channels: usize) -> Result<()> {
    let s = x.shape();
    let c = match s.len() {
        3 => s[0],
        4 => s[1],
        _ => return Err(CoreError::Input(format!("{op}: expected rank 3/4, got {s:?}"))),
    };
    if c != channels {
        return Err(CoreError::Input(format!(
            "{op}: input has {c} channels, params expect {channels}"
        )));
    }
    Ok(())
}

/// Full-resolution attention map of one stage's local branch.
pub fn local_attention<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    p: &MagffStageParams<T>,
    mode: BnMode,
) -> Result<Tensor<T>> {
    check_channels("local_attention", x, p.channels)?;
    p.local.forward(tape, x, mode)
}

/// Per-channel 1×1 attention from the globally pooled input.
pub fn global_attention<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    p: &MagffStageParams<T>,
    mode: BnMode,
) -> Result<Tensor<T>> {
    check_channels("global_attention", x, p.channels)?;
    let pooled = tape.adaptive_avg_pool(x)?;
    p.global.forward(tape, &pooled, mode)
}

fn gate<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    p: &MagffStageParams<T>,
    mode: BnMode,
) -> Result<Tensor<T>> {
    let l = local_attention(tape, x, p, mode)?;
    let g = global_attention(tape, x, p, mode)?;
    let pre = tape.add(&l, &g)?; // global branch broadcasts over H×W
    Ok(tape.sigmoid(&pre))
}

/// Two-stage gated fusion of the detection-branch feature `x1` with the
/// restoration-branch feature `x2`:
///
///   w1 = σ(AttL¹(x1) + AttG¹(x1)),  x_out   = w1·x1 + (1−w1)·x2
///   w2 = σ(AttL²(x_out) + AttG²(x_out)),  x_final = w2·x_out + (1−w2)·x2
///
/// Each combination is evaluated as x2 + w·(a − x2), which is the same
/// convex blend but makes fuse(x, x, p) == x hold exactly in floats.
pub fn magff_fuse<T: Scalar>(
    tape: &Tape<T>,
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    p: &MagffParams<T>,
    mode: BnMode,
) -> Result<Tensor<T>> {
    if x1.shape() != x2.shape() {
        return Err(CoreError::Input(format!(
            "magff_fuse: branch shapes differ: {:?} vs {:?}",
            x1.shape(),
            x2.shape()
        )));
    }
    let blend = |tape: &Tape<T>, w: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>| -> Result<Tensor<T>> {
        let diff = tape.sub(a, b)?;
        let scaled = tape.mul(w, &diff)?;
        Ok(tape.add(b, &scaled)?)
    };
    let w1 = gate(tape, x1, &p.stage1, mode)?;
    let x_out = blend(tape, &w1, x1, x2)?;
    let w2 = gate(tape, &x_out, &p.stage2, mode)?;
    blend(tape, &w2, &x_out, x2)
}
