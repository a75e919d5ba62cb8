//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] is a plain value: shape, contents, and an optional gradient
//! buffer. Recording of operations for differentiation happens on a
//! [`Tape`](crate::autograd::Tape), which takes tensors in as leaves.

use crate::error::{Error, Result};

/// Initial contents for [`Tensor::new`].
#[derive(Debug, Clone, PartialEq)]
pub enum Fill {
    Scalar(f64),
    Values(Vec<f64>),
}

impl From<f64> for Fill {
    fn from(v: f64) -> Self {
        Fill::Scalar(v)
    }
}

impl From<Vec<f64>> for Fill {
    fn from(v: Vec<f64>) -> Self {
        Fill::Values(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::dim(format!("shape {shape:?} has a zero extent")));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: &[usize], fill: impl Into<Fill>, requires_grad: bool) -> Result<Self> {
        check_shape(shape)?;
        let n = numel(shape);
        let data = match fill.into() {
            Fill::Scalar(v) => vec![v; n],
            Fill::Values(v) => {
                if v.len() != n {
                    return Err(Error::dim(format!(
                        "shape {shape:?} needs {n} values, got {}",
                        v.len()
                    )));
                }
                v
            }
        };
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad,
            grad: None,
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::new(shape, data, false)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, 0.0, false)
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::dim(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::dim(format!(
                "gradient of length {} for tensor of shape {:?}",
                g.len(),
                self.shape
            )));
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if numel(shape) != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Extents of a 4-D tensor as `(n, c, h, w)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::dim(format!(
                "expected 4-D NCHW tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Copies channel range `[start, start + len)` out of a 4-D tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if len == 0 || start + len > c {
            return Err(Error::dim(format!(
                "channel slice {start}..{} out of range for {c} channels",
                start + len
            )));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Tensor::from_vec(&[n, len, h, w], out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_fill() {
        let t = Tensor::new(&[2, 2], 0.0, false).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        assert!(t.grad().is_none());
    }

    #[test]
    fn verbatim_contents() {
        let t = Tensor::new(&[3], vec![1.0, 2.0, 3.0], false).unwrap();
        assert_eq!(t.shape(), &[3]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let err = Tensor::new(&[2], vec![1.0, 2.0, 3.0], false).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Tensor::zeros(&[2, 0]).is_err());
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::new(&[2], 1.0, true).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }
}
