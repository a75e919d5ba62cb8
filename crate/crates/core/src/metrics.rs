//! Overlap metrics, segmentation losses, and thresholding.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower/upper clamp applied to probabilities before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;
pub const DEFAULT_SMOOTH: f64 = 1.0;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Strictly binary mask, `[H, W]` or `[N, 1, H, W]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    shape: Vec<usize>,
    data: Vec<u8>,
}

fn squeezed(shape: &[usize]) -> Vec<usize> {
    shape.iter().copied().filter(|&d| d != 1).collect()
}

/// Shapes agree once unit extents are dropped (`[1,1,H,W]` ~ `[H,W]`).
fn check_compatible(what: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if squeezed(a) != squeezed(b) {
        return Err(Error::dim(format!("{what}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

impl BinaryMask {
    pub fn new(shape: &[usize], data: Vec<u8>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.contains(&0) {
            return Err(Error::dim(format!("mask shape {shape:?} does not hold {} values", data.len())));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::dim(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![0; shape.iter().product()])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    /// Number of positive pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&self.shape, self.data.iter().map(|&v| f64::from(v)).collect())
            .expect("mask shape is valid")
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim(format!("cannot reshape mask {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

/// `2|P∩G| / (|P| + |G|)`, defined as 1 when both masks are empty.
pub fn dice_coefficient(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_compatible("dice_coefficient", pred.shape(), gt.shape())?;
    let inter = pred.data.iter().zip(&gt.data).filter(|(p, g)| **p == 1 && **g == 1).count();
    let total = pred.count() + gt.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

fn gt_on_tape(tape: &mut Tape, probs: Var, gt: &BinaryMask, what: &str) -> Result<Var> {
    let shape = tape.value(probs).shape().to_vec();
    check_compatible(what, &shape, gt.shape())?;
    let g = gt.to_tensor().reshape(&shape)?;
    Ok(tape.constant(g))
}

/// `1 − (2Σpg + ε) / (Σp + Σg + ε)`, pooled over every element of `probs`.
pub fn soft_dice_loss(tape: &mut Tape, probs: Var, gt: &BinaryMask, smooth: f64) -> Result<Var> {
    let g = gt_on_tape(tape, probs, gt, "soft_dice_loss")?;
    let pg = tape.mul(probs, g)?;
    let inter = tape.sum(pg);
    let num = tape.scale(inter, 2.0);
    let num = tape.add_scalar(num, smooth);
    let sp = tape.sum(probs);
    let den = tape.add_scalar(sp, gt.count() as f64 + smooth);
    let ratio = tape.div(num, den)?;
    let neg = tape.scale(ratio, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(tape: &mut Tape, probs: Var, gt: &BinaryMask) -> Result<Var> {
    let g = gt_on_tape(tape, probs, gt, "bce_loss")?;
    let p = tape.clamp(probs, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let log_p = tape.ln(p);
    let neg_p = tape.scale(p, -1.0);
    let one_minus_p = tape.add_scalar(neg_p, 1.0);
    let log_q = tape.ln(one_minus_p);
    let neg_g = tape.scale(g, -1.0);
    let one_minus_g = tape.add_scalar(neg_g, 1.0);
    let pos = tape.mul(g, log_p)?;
    let neg = tape.mul(one_minus_g, log_q)?;
    let ll = tape.add(pos, neg)?;
    let m = tape.mean(ll);
    Ok(tape.scale(m, -1.0))
}

/// `mask[i] = 1` iff `probs[i] >= t`.
pub fn threshold(probs: &Tensor, t: f64) -> BinaryMask {
    BinaryMask {
        shape: probs.shape().to_vec(),
        data: probs.data().iter().map(|&p| u8::from(p >= t)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image_dice: Vec<f64>,
    pub mean_dice: f64,
    pub threshold: f64,
    pub image_count: usize,
}

impl EvalReport {
    pub fn from_scores(per_image_dice: Vec<f64>, threshold: f64) -> Self {
        let image_count = per_image_dice.len();
        let mean_dice = if image_count == 0 {
            0.0
        } else {
            per_image_dice.iter().sum::<f64>() / image_count as f64
        };
        Self { per_image_dice, mean_dice, threshold, image_count }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(v: &[u8]) -> BinaryMask {
        BinaryMask::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn dice_identities() {
        let a = mask(&[1, 1, 0, 0, 1, 0, 0, 0]);
        assert_eq!(dice_coefficient(&a, &a).unwrap(), 1.0);
        let b = mask(&[0, 0, 1, 1, 0, 0, 0, 0]);
        assert_eq!(dice_coefficient(&a, &b).unwrap(), 0.0);
        let p = mask(&[1, 1, 1, 1, 0, 0, 0, 0]);
        let g = mask(&[0, 0, 1, 1, 1, 1, 0, 0]);
        assert_eq!(dice_coefficient(&p, &g).unwrap(), 0.5);
        let e = mask(&[0; 8]);
        assert_eq!(dice_coefficient(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn dice_shape_mismatch() {
        assert!(matches!(
            dice_coefficient(&mask(&[1, 0]), &mask(&[1, 0, 1])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(BinaryMask::new(&[2], vec![0, 2]).is_err());
    }

    #[test]
    fn threshold_ties_are_positive() {
        let p = Tensor::from_vec(&[3], vec![0.2, 0.5, 0.9]).unwrap();
        assert_eq!(threshold(&p, 0.5).data(), &[0, 1, 1]);
        assert_eq!(threshold(&p, 1e-12).data(), &[1, 1, 1]);
        assert_eq!(threshold(&p, 0.999_999).data(), &[0, 0, 0]);
    }

    #[test]
    fn threshold_round_trip() {
        let g = mask(&[0, 1, 1, 0, 1]);
        let back = threshold(&g.to_tensor(), 0.5);
        assert_eq!(dice_coefficient(&back, &g).unwrap(), 1.0);
    }

    #[test]
    fn soft_dice_values() {
        let g = BinaryMask::new(&[10, 10], vec![1; 100]).unwrap();
        let mut tape = Tape::new();
        let exact = tape.leaf(&g.to_tensor());
        let l = soft_dice_loss(&mut tape, exact, &g, 1.0).unwrap();
        assert!(tape.value(l).item().unwrap().abs() < 1e-15);

        let zeros = tape.leaf(&Tensor::zeros(&[10, 10]).unwrap());
        let l = soft_dice_loss(&mut tape, zeros, &g, 1.0).unwrap();
        assert!((tape.value(l).item().unwrap() - (1.0 - 1.0 / 101.0)).abs() < 1e-12);
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let g = mask(&[0, 1, 1, 0]);
        let mut tape = Tape::new();
        let p = tape.leaf(&Tensor::new(&[4], 0.5, false).unwrap());
        let l = bce_loss(&mut tape, p, &g).unwrap();
        assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_decreases_toward_gt() {
        let g = mask(&[0, 1, 1, 0]);
        let mut prev = f64::INFINITY;
        for eps in [0.4, 0.1, 1e-3, 1e-6, 0.0] {
            let p: Vec<f64> = g.data().iter().map(|&v| if v == 1 { 1.0 - eps } else { eps }).collect();
            let mut tape = Tape::new();
            let pv = tape.leaf(&Tensor::from_vec(&[4], p).unwrap());
            let lv = bce_loss(&mut tape, pv, &g).unwrap();
            let l = tape.value(lv).item().unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn report_mean_matches_entries() {
        let r = EvalReport::from_scores(vec![0.5, 1.0, 0.25], 0.5);
        assert_eq!(r.mean_dice, 1.75 / 3.0);
        assert_eq!(r.image_count, 3);
    }
}
