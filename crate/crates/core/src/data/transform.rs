use super::SamplePair;
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::Tensor;

/// Corner-aligned bilinear resize of the last two axes: output pixel `i`
/// samples source coordinate `i · (H_src − 1) / (H_dst − 1)`.
pub fn resize_bilinear(image: &Tensor, target: [usize; 2]) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() < 2 {
        return Err(Error::dim(format!("resize needs at least 2 axes, got {shape:?}")));
    }
    let [th, tw] = target;
    if th == 0 || tw == 0 {
        return Err(Error::dim("resize target must be at least 1x1"));
    }
    let (sh, sw) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let planes = image.numel() / (sh * sw);
    let coord = |i: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if dst == 1 || src == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, pos - lo as f64)
    };
    let ys: Vec<_> = (0..th).map(|i| coord(i, sh, th)).collect();
    let xs: Vec<_> = (0..tw).map(|j| coord(j, sw, tw)).collect();
    let mut out = Vec::with_capacity(planes * th * tw);
    for p in 0..planes {
        let src = &image.data()[p * sh * sw..(p + 1) * sh * sw];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
                let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    let mut new_shape = shape.to_vec();
    let n = new_shape.len();
    new_shape[n - 2] = th;
    new_shape[n - 1] = tw;
    Tensor::from_vec(&new_shape, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeMode {
    /// min → 0, max → 1.
    UnitRange,
    /// Subtract mean, divide by (population) standard deviation.
    ZeroMean,
}

/// Constant images map to all zeros in either mode.
pub fn normalize(image: &Tensor, mode: NormalizeMode) -> Tensor {
    let d = image.data();
    let n = d.len() as f64;
    let out: Vec<f64> = match mode {
        NormalizeMode::UnitRange => {
            let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                d.iter().map(|v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.0; d.len()]
            }
        }
        NormalizeMode::ZeroMean => {
            let mean = d.iter().sum::<f64>() / n;
            let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std > 0.0 {
                d.iter().map(|v| (v - mean) / std).collect()
            } else {
                vec![0.0; d.len()]
            }
        }
    };
    Tensor::from_vec(image.shape(), out).expect("shape preserved")
}

/// Row-major sliding windows over image and mask jointly.
pub fn extract_patches(sample: &SamplePair, patch: usize, stride: usize) -> Result<Vec<SamplePair>> {
    let (h, w) = sample.extents();
    if patch == 0 || patch > h.min(w) {
        return Err(Error::dim(format!("patch {patch} does not fit a {h}x{w} image")));
    }
    if stride == 0 {
        return Err(Error::dim("patch stride must be at least 1"));
    }
    let c = sample.image.numel() / (h * w);
    let mut out = Vec::new();
    for y0 in (0..=h - patch).step_by(stride) {
        for x0 in (0..=w - patch).step_by(stride) {
            let mut img = Vec::with_capacity(c * patch * patch);
            for ch in 0..c {
                for y in y0..y0 + patch {
                    let row = (ch * h + y) * w;
                    img.extend_from_slice(&sample.image.data()[row + x0..row + x0 + patch]);
                }
            }
            let mut mask = Vec::with_capacity(patch * patch);
            for y in y0..y0 + patch {
                mask.extend_from_slice(&sample.mask.data()[y * w + x0..y * w + x0 + patch]);
            }
            out.push(SamplePair {
                image: Tensor::from_vec(&[c, patch, patch], img)?,
                mask: BinaryMask::new(&[patch, patch], mask)?,
                meta: sample.meta,
            });
        }
    }
    Ok(out)
}
