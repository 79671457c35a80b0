//! Inverse of the head semantics: 3×3 local-maximum peaks on the class
//! heatmaps, expanded with the size and offset maps into boxes.

use dreb_tensor::Scalar;

use crate::metrics::Detection;
use crate::targets::OUTPUT_STRIDE;

/// Decode one image's head maps (`hm` [C,H,W] after sigmoid, `wh`/`reg`
/// [2,H,W]) into detections sorted by descending score (ties by cell
/// index). Peaks below `score_thresh` are dropped, then the best `k_max`
/// kept; boxes are clipped to the image.
pub fn decode_detections<T: Scalar>(
    hm: &[T],
    wh: &[T],
    reg: &[T],
    num_classes: usize,
    out_h: usize,
    out_w: usize,
    k_max: usize,
    score_thresh: f64,
    image_id: usize,
) -> Vec<Detection> {
    let plane = out_h * out_w;
    debug_assert_eq!(hm.len(), num_classes * plane);
    debug_assert_eq!(wh.len(), 2 * plane);
    debug_assert_eq!(reg.len(), 2 * plane);

    // 3×3 local maxima (plateaus kept: >= all neighbours).
    let mut peaks: Vec<(f64, usize, usize, usize)> = Vec::new();
    for c in 0..num_classes {
        let ch = &hm[c * plane..(c + 1) * plane];
        for y in 0..out_h {
            for x in 0..out_w {
                let v = ch[y * out_w + x].as_f64();
                if v <= score_thresh {
                    continue;
                }
                let mut is_max = true;
                'nb: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= out_h as i64 || nx >= out_w as i64 {
                            continue;
                        }
                        if ch[ny as usize * out_w + nx as usize].as_f64() > v {
                            is_max = false;
                            break 'nb;
                        }
                    }
                }
                if is_max {
                    peaks.push((v, c, y, x));
                }
            }
        }
    }
    // Descending score; ties resolved by cell index for determinism.
    peaks.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| (a.1, a.2, a.3).cmp(&(b.1, b.2, b.3)))
    });
    peaks.truncate(k_max);

    let s = OUTPUT_STRIDE as f64;
    let (img_w, img_h) = ((out_w * OUTPUT_STRIDE) as f64, (out_h * OUTPUT_STRIDE) as f64);
    peaks
        .into_iter()
        .map(|(score, c, y, x)| {
            let cell = y * out_w + x;
            let cx = s * (x as f64 + reg[cell].as_f64());
            let cy = s * (y as f64 + reg[plane + cell].as_f64());
            let bw = (s * wh[cell].as_f64()).max(0.0);
            let bh = (s * wh[plane + cell].as_f64()).max(0.0);
            Detection {
                image_id,
                class_id: c,
                score,
                x_min: (cx - bw / 2.0).clamp(0.0, img_w),
                y_min: (cy - bh / 2.0).clamp(0.0, img_h),
                x_max: (cx + bw / 2.0).clamp(0.0, img_w),
                y_max: (cy + bh / 2.0).clamp(0.0, img_h),
            }
        })
        .collect()
}
