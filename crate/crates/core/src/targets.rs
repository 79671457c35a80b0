//! Ground-truth encoding for the keypoint heads: per-class Gaussian center
//! heatmaps, width/height map, sub-cell offset map, and the positive mask.

use dreb_tensor::Scalar;

use crate::error::{CoreError, Result};

pub const OUTPUT_STRIDE: usize = 4;
pub const GAUSSIAN_MIN_OVERLAP: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthBox {
    pub class_id: usize,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl GroundTruthBox {
    pub fn new(class_id: usize, x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if !(x_max > x_min && y_max > y_min) {
            return Err(CoreError::Input(format!(
                "degenerate box ({x_min},{y_min})-({x_max},{y_max})"
            )));
        }
        Ok(GroundTruthBox { class_id, x_min, y_min, x_max, y_max })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }
}

/// Supervision bundle for one image at quarter resolution.
pub struct TargetMaps<T: Scalar> {
    /// [num_classes, H/4, W/4], peak exactly 1.0 at each annotated center.
    pub hm: Vec<T>,
    /// [2, H/4, W/4]: (w, h) in output cells at positive cells.
    pub wh: Vec<T>,
    /// [2, H/4, W/4]: sub-cell center offset in [0,1) at positive cells.
    pub reg: Vec<T>,
    /// [H/4, W/4] object-center cells.
    pub pos_mask: Vec<bool>,
    pub num_pos: usize,
    pub num_classes: usize,
    pub out_h: usize,
    pub out_w: usize,
    /// Boxes skipped because they fell entirely outside the image.
    pub skipped: usize,
}

/// Per-image target maps stacked along a batch axis for the loss kernels.
pub struct BatchTargets<T: Scalar> {
    pub hm: Vec<T>,
    pub wh: Vec<T>,
    pub reg: Vec<T>,
    /// Length N·H/4·W/4: positive cells per image.
    pub pos_mask: Vec<bool>,
    pub num_pos: usize,
}

pub fn stack_targets<T: Scalar>(list: &[TargetMaps<T>]) -> Result<BatchTargets<T>> {
    let first = list
        .first()
        .ok_or_else(|| CoreError::Input("stack_targets: empty batch".into()))?;
    let key = (first.num_classes, first.out_h, first.out_w);
    let mut out = BatchTargets {
        hm: Vec::new(),
        wh: Vec::new(),
        reg: Vec::new(),
        pos_mask: Vec::new(),
        num_pos: 0,
    };
    for t in list {
        if (t.num_classes, t.out_h, t.out_w) != key {
            return Err(CoreError::Input("stack_targets: inconsistent map shapes".into()));
        }
        out.hm.extend_from_slice(&t.hm);
        out.wh.extend_from_slice(&t.wh);
        out.reg.extend_from_slice(&t.reg);
        out.pos_mask.extend_from_slice(&t.pos_mask);
        out.num_pos += t.num_pos;
    }
    Ok(out)
}

/// Smallest of the three corner-perturbation radii that keep IoU with the
/// original h×w box at or above `min_overlap` (quadratic roots, floored
/// at 0).
pub fn gaussian_radius(h: f64, w: f64, min_overlap: f64) -> f64 {
    debug_assert!(min_overlap > 0.0 && min_overlap < 1.0);
    // Box shifted diagonally by r: (w−r)(h−r) ≥ o/(1+o)·2wh.
    let a1 = 1.0;
    let b1 = h + w;
    let c1 = w * h * (1.0 - min_overlap) / (1.0 + min_overlap);
    let r1 = (b1 - (b1 * b1 - 4.0 * a1 * c1).max(0.0).sqrt()) / (2.0 * a1);
    // Box shrunk on both sides: (w−2r)(h−2r) ≥ o·wh.
    let a2 = 4.0;
    let b2 = 2.0 * (h + w);
    let c2 = (1.0 - min_overlap) * w * h;
    let r2 = (b2 - (b2 * b2 - 4.0 * a2 * c2).max(0.0).sqrt()) / (2.0 * a2);
    // Box grown on both sides: wh / (w+2r)(h+2r) ≥ o.
    let a3 = 4.0 * min_overlap;
    let b3 = 2.0 * min_overlap * (h + w);
    let c3 = (min_overlap - 1.0) * w * h;
    let r3 = (-b3 + (b3 * b3 - 4.0 * a3 * c3).max(0.0).sqrt()) / (2.0 * a3);
    r1.min(r2).min(r3).max(0.0)
}

/// Encode boxes (input-pixel coordinates) into target maps for an
/// `img_h`×`img_w` image. Boxes are clipped to the image; boxes entirely
/// outside are skipped and counted.
pub fn encode_targets<T: Scalar>(
    boxes: &[GroundTruthBox],
    num_classes: usize,
    img_h: usize,
    img_w: usize,
) -> Result<TargetMaps<T>> {
    if img_h % OUTPUT_STRIDE != 0 || img_w % OUTPUT_STRIDE != 0 {
        return Err(CoreError::Input(format!(
            "image {img_h}x{img_w} not divisible by output stride {OUTPUT_STRIDE}"
        )));
    }
    let (oh, ow) = (img_h / OUTPUT_STRIDE, img_w / OUTPUT_STRIDE);
    let plane = oh * ow;
    let mut hm = vec![T::zero(); num_classes * plane];
    let mut wh = vec![T::zero(); 2 * plane];
    let mut reg = vec![T::zero(); 2 * plane];
    let mut pos_mask = vec![false; plane];
    let mut num_pos = 0usize;
    let mut skipped = 0usize;

    for b in boxes {
        if b.class_id >= num_classes {
            return Err(CoreError::Input(format!(
                "class id {} out of range 0..{num_classes}",
                b.class_id
            )));
        }
        let x_min = b.x_min.max(0.0).min(img_w as f64);
        let x_max = b.x_max.max(0.0).min(img_w as f64);
        let y_min = b.y_min.max(0.0).min(img_h as f64);
        let y_max = b.y_max.max(0.0).min(img_h as f64);
        if x_max - x_min <= 0.0 || y_max - y_min <= 0.0 {
            skipped += 1;
            continue;
        }
        let s = OUTPUT_STRIDE as f64;
        let (cw, ch) = ((x_max - x_min) / s, (y_max - y_min) / s);
        let (cx, cy) = ((x_min + x_max) / 2.0 / s, (y_min + y_max) / 2.0 / s);
        let ix = (cx.floor() as usize).min(ow - 1);
        let iy = (cy.floor() as usize).min(oh - 1);

        let radius = gaussian_radius(ch, cw, GAUSSIAN_MIN_OVERLAP).max(0.0);
        let sigma = (radius / 3.0).max(1e-12);
        let r = radius.ceil() as isize;
        let base = b.class_id * plane;
        for dy in -r..=r {
            for dx in -r..=r {
                let (px, py) = (ix as isize + dx, iy as isize + dy);
                if px < 0 || py < 0 || px >= ow as isize || py >= oh as isize {
                    continue;
                }
                let g = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                let cell = base + py as usize * ow + px as usize;
                if T::from_f64(g) > hm[cell] {
                    hm[cell] = T::from_f64(g);
                }
            }
        }
        // The annotated center is exactly 1 regardless of sigma.
        hm[base + iy * ow + ix] = T::one();

        let cell = iy * ow + ix;
        if !pos_mask[cell] {
            pos_mask[cell] = true;
            num_pos += 1;
        }
        // Center-cell collisions: the later box overwrites wh/reg.
        wh[cell] = T::from_f64(cw);
        wh[plane + cell] = T::from_f64(ch);
        reg[cell] = T::from_f64(cx - ix as f64);
        reg[plane + cell] = T::from_f64(cy - iy as f64);
    }

    Ok(TargetMaps { hm, wh, reg, pos_mask, num_pos, num_classes, out_h: oh, out_w: ow, skipped })
}
