//! Analytic multiply-add and parameter accounting over the op graph.
//! FLOP units: 1 per MAC, plus elementwise costs (bias add 1, BN 4,
//! ReLU 1, sigmoid 4, FFT 5·n·log2(n) per 1-D transform).

use dreb_tensor::Scalar;

use crate::model::{Model, ModelConfig, ATTENTION_REDUCTION, SE_REDUCTION};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostMode {
    Train,
    Infer,
}

fn conv(cin: u64, cout: u64, k: u64, h: u64, w: u64, bias: bool) -> u64 {
    cin * cout * k * k * h * w + if bias { cout * h * w } else { 0 }
}

fn bn(c: u64, h: u64, w: u64) -> u64 {
    4 * c * h * w
}

fn relu(c: u64, h: u64, w: u64) -> u64 {
    c * h * w
}

fn sigmoid(c: u64, h: u64, w: u64) -> u64 {
    4 * c * h * w
}

fn conv_bn_relu(cin: u64, cout: u64, k: u64, ho: u64, wo: u64) -> u64 {
    conv(cin, cout, k, ho, wo, false) + bn(cout, ho, wo) + relu(cout, ho, wo)
}

fn se_block(c: u64, h: u64, w: u64) -> u64 {
    let mid = (c / SE_REDUCTION as u64).max(1);
    // pool + two 1×1 convs on 1×1 maps + sigmoid gate + broadcast scale
    c * h * w + conv(c, mid, 1, 1, 1, true) + mid + conv(mid, c, 1, 1, 1, true)
        + sigmoid(c, 1, 1)
        + c * h * w
}

fn conv_block(cfg: &ModelConfig, cin: u64, cout: u64, stride: u64, se: bool, h: u64, w: u64) -> u64 {
    let (ho, wo) = (h / stride, w / stride);
    let mut f = conv_bn_relu(cin, cout, 3, ho, wo) + conv_bn_relu(cout, cout, 3, ho, wo);
    if se && cfg.variant == crate::model::Variant::Full {
        f += se_block(cout, ho, wo);
    }
    f
}

fn deconv_bn_relu(cin: u64, cout: u64, hin: u64, win: u64) -> u64 {
    conv(cin, cout, 4, hin, win, false) + bn(cout, 2 * hin, 2 * win) + relu(cout, 2 * hin, 2 * win)
}

fn fft2(c: u64, h: u64, w: u64) -> u64 {
    let lg = |n: u64| (n.max(2) as f64).log2().ceil() as u64;
    5 * c * h * w * (lg(h) + lg(w))
}

fn attention_branch(c: u64, h: u64, w: u64) -> u64 {
    let mid = c / ATTENTION_REDUCTION as u64;
    conv(c, mid, 1, h, w, false)
        + bn(mid, h, w)
        + relu(mid, h, w)
        + conv(mid, c, 1, h, w, false)
        + bn(c, h, w)
}

fn magff(c: u64, h: u64, w: u64) -> u64 {
    // Per stage: local branch at full map, global branch at 1×1 after the
    // pool, gate add+sigmoid, then the blend (sub, mul, add).
    let stage = attention_branch(c, h, w)
        + (c * h * w + attention_branch(c, 1, 1))
        + c * h * w
        + sigmoid(c, h, w)
        + 3 * c * h * w;
    2 * stage
}

fn lfamm(c: u64, h: u64, w: u64) -> u64 {
    let bins = c * h * (w / 2 + 1);
    fft2(c, h, w) + 2 * bins + fft2(c, h, w)
}

/// Exact multiply-add count over the forward graph plus the parameter
/// count, split by mode: `Infer` drops everything the pruned graph never
/// touches (the restoration decoder).
pub fn count_flops_params<T: Scalar>(model: &Model<T>, mode: CostMode) -> (u64, u64) {
    let cfg = &model.cfg;
    let b = cfg.base_channels as u64;
    let (h0, w0) = (cfg.input_hw.0 as u64, cfg.input_hw.1 as u64);
    let inc = cfg.in_channels as u64;
    let mut f = 0u64;

    // Detection stem + stages.
    f += conv_bn_relu(inc, b, 3, h0, w0);
    let mut ch = b;
    let (mut h, mut w) = (h0, w0);
    let mut shallow_dims = (0, 0, 0);
    for i in 1..=5u32 {
        let cout = cfg.stage_channels(i as usize) as u64;
        f += conv_block(cfg, ch, cout, 2, true, h, w);
        ch = cout;
        h /= 2;
        w /= 2;
        if i as usize == cfg.shallow_stage {
            shallow_dims = (ch, h, w);
        }
    }
    let (sc, sh, sw) = shallow_dims;

    // Deconvolutions + heads.
    let head_ch = cfg.head_channels() as u64;
    f += deconv_bn_relu(ch, head_ch, h, w);
    f += deconv_bn_relu(head_ch, head_ch, 2 * h, 2 * w);
    f += deconv_bn_relu(head_ch, head_ch, 4 * h, 4 * w);
    let (hh, hw) = (8 * h, 8 * w);
    let head = |cout: u64| {
        conv(head_ch, head_ch, 3, hh, hw, true) + relu(head_ch, hh, hw)
            + conv(head_ch, cout, 1, hh, hw, true)
    };
    f += head(cfg.num_classes as u64) + sigmoid(cfg.num_classes as u64, hh, hw);
    f += head(2) + head(2);

    if cfg.enable_brab {
        // Shallow encoder (always in the graph when BRAB is on).
        f += conv_block(cfg, inc, b, 1, false, h0, w0);
        let (mut eh, mut ew, mut ec) = (h0, w0, b);
        for j in 1..=3usize {
            let cout = (b << j) as u64;
            if j <= cfg.shallow_stage {
                f += conv_block(cfg, ec, cout, 2, false, eh, ew);
            } else if mode == CostMode::Train {
                f += conv_block(cfg, ec, cout, 2, false, eh, ew);
            }
            ec = cout;
            eh /= 2;
            ew /= 2;
        }
        if mode == CostMode::Train {
            // Decoder levels 8b->4b->2b->b with skip fusion, then output conv.
            let (mut dh, mut dw, mut dc) = (h0 / 8, w0 / 8, 8 * b);
            for _ in 0..3 {
                let cout = dc / 2;
                f += deconv_bn_relu(dc, cout, dh, dw);
                f += conv(2 * cout, cout, 1, 2 * dh, 2 * dw, false);
                f += conv_bn_relu(cout, cout, 3, 2 * dh, 2 * dw);
                dc = cout;
                dh *= 2;
                dw *= 2;
            }
            f += conv(b, inc, 1, h0, w0, true) + sigmoid(inc, h0, w0);
        }
        // Fusion of the two shallow taps.
        if cfg.enable_magff {
            f += magff(sc, sh, sw);
        } else {
            f += sc * sh * sw; // elementwise add
        }
    }
    if cfg.enable_lfamm {
        f += lfamm(sc, sh, sw);
    }

    let params = model.param_count(mode == CostMode::Infer) as u64;
    (f, params)
}
