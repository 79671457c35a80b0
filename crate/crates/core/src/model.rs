use std::rc::Rc;

use dreb_tensor::{BnMode, BnState, Scalar, Tape, Tensor};

use crate::blocks::{Conv2dLayer, ConvBlock, ConvBnRelu, Head, UpBlock};
use crate::blocks::DecBlock;
use crate::error::{CoreError, Result};
use crate::lfamm::{lfamm_apply, LfammFilter};
use crate::magff::{magff_fuse, MagffParams};
use crate::rng::SeedStreams;

pub const HM_BIAS_INIT: f64 = -2.19;
pub const ATTENTION_REDUCTION: usize = 4;
pub const SE_REDUCTION: usize = 4;
const STAGES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Same network with the squeeze-excitation gates removed from the
    /// detection conv blocks.
    Tiny,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Detection and restoration trained jointly.
    Joint,
    /// Restoration decoder frozen out; its shallow half still trains
    /// through the fusion path.
    DetachedBrab,
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    pub input_hw: (usize, usize),
    pub variant: Variant,
    pub enable_brab: bool,
    pub enable_magff: bool,
    pub enable_lfamm: bool,
    /// Backbone stage whose output is tapped as "shallow features";
    /// stage i runs at stride 2^i.
    pub shallow_stage: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            base_channels: 16,
            num_classes: 2,
            input_hw: (64, 64),
            variant: Variant::Full,
            enable_brab: true,
            enable_magff: true,
            enable_lfamm: true,
            shallow_stage: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_hw;
        if h % 32 != 0 || w % 32 != 0 {
            return Err(CoreError::Config(format!(
                "input {h}x{w} must be divisible by 32"
            )));
        }
        if self.base_channels < 4 || self.base_channels % 4 != 0 {
            return Err(CoreError::Config(format!(
                "base_channels {} must be a positive multiple of 4",
                self.base_channels
            )));
        }
        if self.num_classes == 0 {
            return Err(CoreError::Config("num_classes must be >= 1".into()));
        }
        if self.in_channels == 0 {
            return Err(CoreError::Config("in_channels must be >= 1".into()));
        }
        if !(1..=3).contains(&self.shallow_stage) {
            return Err(CoreError::Config(format!(
                "shallow_stage {} out of range 1..=3",
                self.shallow_stage
            )));
        }
        Ok(())
    }

    /// Channels produced by detection stage i (1-based), doubling from the
    /// stem and capped at 8×base.
    pub fn stage_channels(&self, i: usize) -> usize {
        (self.base_channels << i).min(8 * self.base_channels)
    }

    pub fn shallow_channels(&self) -> usize {
        self.stage_channels(self.shallow_stage)
    }

    pub fn head_channels(&self) -> usize {
        4 * self.base_channels
    }

    /// Spatial size of the shallow tap for the configured input.
    pub fn shallow_hw(&self) -> (usize, usize) {
        let s = 1 << self.shallow_stage;
        (self.input_hw.0 / s, self.input_hw.1 / s)
    }

    /// Canonical flat encoding; checkpoints digest and embed this.
    pub fn canonical_string(&self) -> String {
        format!(
            "in={};base={};classes={};h={};w={};variant={};brab={};magff={};lfamm={};shallow={}",
            self.in_channels,
            self.base_channels,
            self.num_classes,
            self.input_hw.0,
            self.input_hw.1,
            match self.variant {
                Variant::Full => "full",
                Variant::Tiny => "tiny",
            },
            self.enable_brab as u8,
            self.enable_magff as u8,
            self.enable_lfamm as u8,
            self.shallow_stage,
        )
    }

    pub fn parse_canonical(s: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for part in s.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("bad config fragment '{part}'")))?;
            let intv = || -> Result<usize> {
                v.parse::<usize>()
                    .map_err(|_| CoreError::Config(format!("bad value for {k}: {v}")))
            };
            match k {
                "in" => cfg.in_channels = intv()?,
                "base" => cfg.base_channels = intv()?,
                "classes" => cfg.num_classes = intv()?,
                "h" => cfg.input_hw.0 = intv()?,
                "w" => cfg.input_hw.1 = intv()?,
                "variant" => {
                    cfg.variant = match v {
                        "full" => Variant::Full,
                        "tiny" => Variant::Tiny,
                        _ => return Err(CoreError::Config(format!("unknown variant {v}"))),
                    }
                }
                "brab" => cfg.enable_brab = v == "1",
                "magff" => cfg.enable_magff = v == "1",
                "lfamm" => cfg.enable_lfamm = v == "1",
                "shallow" => cfg.shallow_stage = intv()?,
                _ => return Err(CoreError::Config(format!("unknown config key {k}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub struct DetOutputs<T: Scalar> {
    /// Per-class center heatmaps after sigmoid, quarter resolution.
    pub hm: Tensor<T>,
    pub wh: Tensor<T>,
    pub reg: Tensor<T>,
}

pub struct BrabOutputs<T: Scalar> {
    /// Full-resolution restored image estimate in [0, 1].
    pub restored: Tensor<T>,
}

/// Shallow half of the restoration branch: the fusion tap plus the encoder
/// skips the decoder will want.
pub struct BrabShallow<T: Scalar> {
    pub features: Tensor<T>,
    skips: Vec<Tensor<T>>,
}

struct BrabNet<T: Scalar> {
    enc: Vec<ConvBlock<T>>, // enc[0] stride 1, enc[1..=3] stride 2
    dec: Vec<DecBlock<T>>,  // dec[0]: 8b->4b, dec[1]: 4b->2b, dec[2]: 2b->b
    out: Conv2dLayer<T>,
}

pub struct Model<T: Scalar> {
    pub cfg: ModelConfig,
    det_stem: ConvBnRelu<T>,
    det_stages: Vec<ConvBlock<T>>,
    det_up: Vec<UpBlock<T>>,
    head_hm: Head<T>,
    head_wh: Head<T>,
    head_reg: Head<T>,
    brab: Option<BrabNet<T>>,
    pub(crate) magff: Option<MagffParams<T>>,
    pub(crate) lfamm: Option<LfammFilter<T>>,
}

/// Deterministically-initialized model; two builds from the same seed are
/// bit-identical.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let mut rng = SeedStreams::new(seed).stream("init");
    let b = cfg.base_channels;
    let se = match cfg.variant {
        Variant::Full => Some(SE_REDUCTION),
        Variant::Tiny => None,
    };

    let det_stem = ConvBnRelu::new(&mut rng, cfg.in_channels, b, 3, 1, 1);
    let mut det_stages = Vec::with_capacity(STAGES);
    for i in 1..=STAGES {
        let cin = if i == 1 { b } else { cfg.stage_channels(i - 1) };
        det_stages.push(ConvBlock::new(&mut rng, cin, cfg.stage_channels(i), 2, se));
    }
    let deep_ch = cfg.stage_channels(STAGES);
    let head_ch = cfg.head_channels();
    let det_up = vec![
        UpBlock::new(&mut rng, deep_ch, head_ch),
        UpBlock::new(&mut rng, head_ch, head_ch),
        UpBlock::new(&mut rng, head_ch, head_ch),
    ];
    let head_hm = Head::new(&mut rng, head_ch, cfg.num_classes, HM_BIAS_INIT);
    let head_wh = Head::new(&mut rng, head_ch, 2, 0.0);
    let head_reg = Head::new(&mut rng, head_ch, 2, 0.0);

    let brab = cfg.enable_brab.then(|| {
        let enc = vec![
            ConvBlock::new(&mut rng, cfg.in_channels, b, 1, None),
            ConvBlock::new(&mut rng, b, 2 * b, 2, None),
            ConvBlock::new(&mut rng, 2 * b, 4 * b, 2, None),
            ConvBlock::new(&mut rng, 4 * b, 8 * b, 2, None),
        ];
        let dec = vec![
            DecBlock::new(&mut rng, 8 * b, 4 * b),
            DecBlock::new(&mut rng, 4 * b, 2 * b),
            DecBlock::new(&mut rng, 2 * b, b),
        ];
        let out = Conv2dLayer::new(&mut rng, b, cfg.in_channels, 1, 1, 0, true);
        BrabNet { enc, dec, out }
    });

    let magff = if cfg.enable_magff && cfg.enable_brab {
        Some(MagffParams::new(&mut rng, cfg.shallow_channels(), ATTENTION_REDUCTION)?)
    } else {
        None
    };
    let lfamm = cfg.enable_lfamm.then(|| {
        let (h, w) = cfg.shallow_hw();
        LfammFilter::new(cfg.shallow_channels(), h, w)
    });

    Ok(Model {
        cfg: cfg.clone(),
        det_stem,
        det_stages,
        det_up,
        head_hm,
        head_wh,
        head_reg,
        brab,
        magff,
        lfamm,
    })
}

impl<T: Scalar> Model<T> {
    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        let ok = match s.len() {
            4 => {
                s[1] == self.cfg.in_channels
                    && (s[2], s[3]) == self.cfg.input_hw
            }
            _ => false,
        };
        if !ok {
            return Err(CoreError::Input(format!(
                "input shape {:?} does not match configured [N, {}, {}, {}]",
                s, self.cfg.in_channels, self.cfg.input_hw.0, self.cfg.input_hw.1
            )));
        }
        Ok(())
    }

    /// Detection backbone up to the shallow tap (stride 2^shallow_stage).
    pub fn det_shallow(&self, tape: &Tape<T>, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut y = self.det_stem.forward(tape, x, mode)?;
        for stage in &self.det_stages[..self.cfg.shallow_stage] {
            y = stage.forward(tape, &y, mode)?;
        }
        Ok(y)
    }

    /// Restoration encoder up to the tap aligned with `det_shallow`
    /// (same stride, same channel count).
    pub fn brab_shallow(
        &self,
        tape: &Tape<T>,
        x: &Tensor<T>,
        mode: BnMode,
    ) -> Result<BrabShallow<T>> {
        let net = self.brab.as_ref().ok_or_else(|| {
            CoreError::Input("brab_shallow called with the restoration branch disabled".into())
        })?;
        self.check_input(x)?;
        let mut skips = Vec::new();
        let mut y = x.clone();
        for enc in &net.enc[..=self.cfg.shallow_stage] {
            y = enc.forward(tape, &y, mode)?;
            skips.push(y.clone());
        }
        Ok(BrabShallow { features: y, skips })
    }

    /// Detection trunk after fusion: remaining stages to 1/32, three
    /// deconvolutions back to 1/4, then the HM/WH/Reg heads.
    pub fn det_deep(&self, tape: &Tape<T>, fused: &Tensor<T>, mode: BnMode) -> Result<DetOutputs<T>> {
        let mut y = fused.clone();
        for stage in &self.det_stages[self.cfg.shallow_stage..] {
            y = stage.forward(tape, &y, mode)?;
        }
        for up in &self.det_up {
            y = up.forward(tape, &y, mode)?;
        }
        let hm_logits = self.head_hm.forward(tape, &y)?;
        Ok(DetOutputs {
            hm: tape.sigmoid(&hm_logits),
            wh: self.head_wh.forward(tape, &y)?,
            reg: self.head_reg.forward(tape, &y)?,
        })
    }

    /// Restoration decoder from the shallow tap: finish the encoder, then
    /// upsample with skip fusion back to full resolution.
    pub fn brab_deep(
        &self,
        tape: &Tape<T>,
        shallow: &BrabShallow<T>,
        mode: BnMode,
    ) -> Result<BrabOutputs<T>> {
        let net = self.brab.as_ref().expect("caller checked enable_brab");
        let mut skips = shallow.skips.clone();
        let mut y = shallow.features.clone();
        for enc in &net.enc[self.cfg.shallow_stage + 1..] {
            y = enc.forward(tape, &y, mode)?;
            skips.push(y.clone());
        }
        // skips now holds enc outputs 0..=3; the last is the decoder input.
        for (i, dec) in net.dec.iter().enumerate() {
            let skip = &skips[2 - i];
            y = dec.forward(tape, &y, skip, mode)?;
        }
        let o = net.out.forward(tape, &y)?;
        Ok(BrabOutputs { restored: tape.sigmoid(&o) })
    }

    fn forward_core(
        &self,
        tape: &Tape<T>,
        x: &Tensor<T>,
        run_brab_deep: bool,
        mode: BnMode,
    ) -> Result<(DetOutputs<T>, Option<BrabOutputs<T>>)> {
        let s_det = self.det_shallow(tape, x, mode)?;
        let shallow = if self.cfg.enable_brab {
            Some(self.brab_shallow(tape, x, mode)?)
        } else {
            None
        };
        let s_det = match &self.lfamm {
            Some(f) => lfamm_apply(tape, &s_det, f)?,
            None => s_det,
        };
        let fused = match &shallow {
            Some(sh) => match &self.magff {
                Some(p) => magff_fuse(tape, &s_det, &sh.features, p, mode)?,
                None => tape.add(&s_det, &sh.features)?,
            },
            None => s_det,
        };
        let det = self.det_deep(tape, &fused, mode)?;
        let brab_out = match (&shallow, run_brab_deep) {
            (Some(sh), true) => Some(self.brab_deep(tape, sh, mode)?),
            _ => None,
        };
        Ok((det, brab_out))
    }

    /// Training-phase forward pass. Joint phase also runs the restoration
    /// decoder; the detached phase runs everything except it.
    pub fn forward_train(
        &self,
        tape: &Tape<T>,
        x: &Tensor<T>,
        phase: Phase,
        mode: BnMode,
    ) -> Result<(DetOutputs<T>, Option<BrabOutputs<T>>)> {
        match phase {
            Phase::Joint => self.forward_core(tape, x, true, mode),
            Phase::DetachedBrab => self.forward_core(tape, x, false, mode),
            Phase::Inference => Err(CoreError::Input(
                "forward_train called with Phase::Inference; use forward_infer".into(),
            )),
        }
    }

    /// Pruned inference pass: eval-mode statistics, restoration decoder
    /// never touched. Numerically identical to the detached-phase forward.
    pub fn forward_infer(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<DetOutputs<T>> {
        Ok(self.forward_core(tape, x, false, BnMode::Eval)?.0)
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.det_stem.collect("det.stem", &mut out);
        for (i, s) in self.det_stages.iter().enumerate() {
            s.collect(&format!("det.s{}", i + 1), &mut out);
        }
        for (i, u) in self.det_up.iter().enumerate() {
            u.collect(&format!("det.up{}", i + 1), &mut out);
        }
        self.head_hm.collect("det.head.hm", &mut out);
        self.head_wh.collect("det.head.wh", &mut out);
        self.head_reg.collect("det.head.reg", &mut out);
        if let Some(net) = &self.brab {
            for (i, e) in net.enc.iter().enumerate() {
                let zone = if i <= self.cfg.shallow_stage { "shallow" } else { "deep" };
                e.collect(&format!("brab.{zone}.enc{i}"), &mut out);
            }
            for (i, d) in net.dec.iter().enumerate() {
                d.collect(&format!("brab.deep.dec{i}"), &mut out);
            }
            net.out.collect("brab.deep.out", &mut out);
        }
        if let Some(m) = &self.magff {
            m.collect("magff", &mut out);
        }
        if let Some(f) = &self.lfamm {
            f.collect("lfamm", &mut out);
        }
        out
    }

    pub fn named_buffers(&self) -> Vec<(String, Rc<BnState<T>>)> {
        let mut out = Vec::new();
        self.det_stem.collect_state("det.stem", &mut out);
        for (i, s) in self.det_stages.iter().enumerate() {
            s.collect_state(&format!("det.s{}", i + 1), &mut out);
        }
        for (i, u) in self.det_up.iter().enumerate() {
            u.collect_state(&format!("det.up{}", i + 1), &mut out);
        }
        if let Some(net) = &self.brab {
            for (i, e) in net.enc.iter().enumerate() {
                let zone = if i <= self.cfg.shallow_stage { "shallow" } else { "deep" };
                e.collect_state(&format!("brab.{zone}.enc{i}"), &mut out);
            }
            for (i, d) in net.dec.iter().enumerate() {
                d.collect_state(&format!("brab.deep.dec{i}"), &mut out);
            }
        }
        if let Some(m) = &self.magff {
            m.collect_state("magff", &mut out);
        }
        out
    }

    /// True for tensors that exist only for restoration training and are
    /// pruned from inference checkpoints.
    pub fn is_deep_name(name: &str) -> bool {
        name.starts_with("brab.deep.")
    }

    /// `(slot, tensor)` pairs the optimizer may update in the given phase;
    /// slots index the full `named_parameters` order so Adam moments stay
    /// attached across the phase switch.
    pub fn params_for_phase(&self, phase: Phase) -> Vec<(usize, Tensor<T>)> {
        self.named_parameters()
            .into_iter()
            .enumerate()
            .filter(|(_, (name, _))| match phase {
                Phase::Joint => true,
                Phase::DetachedBrab | Phase::Inference => !Self::is_deep_name(name),
            })
            .map(|(i, (_, t))| (i, t))
            .collect()
    }

    pub fn param_count(&self, infer: bool) -> usize {
        self.named_parameters()
            .iter()
            .filter(|(name, _)| !infer || !Self::is_deep_name(name))
            .map(|(_, t)| t.numel())
            .sum()
    }
}
