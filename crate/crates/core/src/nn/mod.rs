//! Differentiable neural operators and the layer types built from them.
//!
//! Operators act on [`Var`]s of a [`Tape`]. Layer types ([`Conv2dParams`],
//! [`SeparableConv2d`], [`ResidualBlock`], ...) do not own tensors; they hold
//! [`ParamId`]s into a [`ParamStore`], which is bound onto a tape once per
//! forward pass.

pub mod kernels;
mod params;

use crate::autograd::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::ConvGeom;
pub use params::{Init, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2` on each side.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn activation(tape: &mut Tape, kind: Activation, x: Var) -> Var {
    match kind {
        Activation::Relu => tape.relu(x),
        Activation::Sigmoid => tape.sigmoid(x),
    }
}

fn check_bias(tape: &Tape, b: Var, c_out: usize) -> Result<()> {
    if tape.value(b).numel() != c_out {
        return Err(Error::dim(format!(
            "bias has {} entries, expected {c_out}",
            tape.value(b).numel()
        )));
    }
    Ok(())
}

fn kernel4(tape: &Tape, w: Var) -> Result<(usize, usize, usize, usize)> {
    tape.value(w).dims4().map_err(|_| {
        Error::dim(format!(
            "kernel must be [out, in, kh, kw], got {:?}",
            tape.value(w).shape()
        ))
    })
}

/// Cross-correlation of `x: [N, Cin, H, W]` with `w: [Cout, Cin, k, k]` plus bias.
pub fn conv2d(tape: &mut Tape, x: Var, w: Var, b: Var, stride: usize, padding: Padding) -> Result<Var> {
    let (n, c_in, h, wd) = tape.value(x).dims4()?;
    let (c_out, wc_in, kh, kw) = kernel4(tape, w)?;
    if wc_in != c_in {
        return Err(Error::dim(format!(
            "conv2d: input has {c_in} channels, kernel expects {wc_in}"
        )));
    }
    if kh != kw {
        return Err(Error::dim(format!("conv2d: non-square kernel {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(Error::dim("conv2d: stride must be positive"));
    }
    check_bias(tape, b, c_out)?;
    let pad = match padding {
        Padding::Same => kh / 2,
        Padding::Valid => 0,
    };
    if h + 2 * pad < kh || wd + 2 * pad < kh {
        return Err(Error::dim(format!(
            "conv2d: {h}x{wd} input too small for {kh}x{kh} kernel"
        )));
    }
    let geom = ConvGeom { n, c_in, h, w: wd, c_out, k: kh, stride, pad };
    let out = kernels::conv2d_forward(tape.value(x).data(), tape.value(w).data(), tape.value(b).data(), &geom);
    let t = Tensor::from_vec(&[n, c_out, geom.out_h(), geom.out_w()], out)?;
    Ok(tape.push(t, Op::Conv2d { x, w, b, geom }, &[x, w, b]))
}

/// Per-channel same-padded convolution, stride 1. `w: [C, 1, k, k]`.
pub fn depthwise_conv2d(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let (n, c, h, wd) = tape.value(x).dims4()?;
    let (wc, one, k, kw) = kernel4(tape, w)?;
    if wc != c || one != 1 || k != kw || k % 2 == 0 {
        return Err(Error::dim(format!(
            "depthwise_conv2d: input has {c} channels, kernel shape is {:?}",
            tape.value(w).shape()
        )));
    }
    check_bias(tape, b, c)?;
    let out = kernels::depthwise_forward(
        tape.value(x).data(),
        tape.value(w).data(),
        tape.value(b).data(),
        n,
        c,
        h,
        wd,
        k,
    );
    let t = Tensor::from_vec(&[n, c, h, wd], out)?;
    Ok(tape.push(t, Op::Depthwise { x, w, b, k }, &[x, w, b]))
}

/// Transposed 2×2 stride-2 convolution doubling H and W. `w: [Cout, Cin, 2, 2]`.
pub fn upconv2d(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let (n, c_in, h, wd) = tape.value(x).dims4()?;
    let (c_out, wc_in, kh, kw) = kernel4(tape, w)?;
    if wc_in != c_in || (kh, kw) != (2, 2) {
        return Err(Error::dim(format!(
            "upconv2d: input has {c_in} channels, kernel shape is {:?}",
            tape.value(w).shape()
        )));
    }
    check_bias(tape, b, c_out)?;
    let out = kernels::upconv_forward(
        tape.value(x).data(),
        tape.value(w).data(),
        tape.value(b).data(),
        n,
        c_in,
        h,
        wd,
        c_out,
    );
    let t = Tensor::from_vec(&[n, c_out, 2 * h, 2 * wd], out)?;
    Ok(tape.push(t, Op::UpConv { x, w, b }, &[x, w, b]))
}

/// Per-channel transposed 2×2 stride-2 convolution. `w: [C, 1, 2, 2]`.
pub fn depthwise_upconv2d(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let (n, c, h, wd) = tape.value(x).dims4()?;
    if tape.value(w).shape() != [c, 1, 2, 2] {
        return Err(Error::dim(format!(
            "depthwise_upconv2d: input has {c} channels, kernel shape is {:?}",
            tape.value(w).shape()
        )));
    }
    check_bias(tape, b, c)?;
    let out = kernels::depthwise_upconv_forward(
        tape.value(x).data(),
        tape.value(w).data(),
        tape.value(b).data(),
        n,
        c,
        h,
        wd,
    );
    let t = Tensor::from_vec(&[n, c, 2 * h, 2 * wd], out)?;
    Ok(tape.push(t, Op::DepthwiseUpConv { x, w, b }, &[x, w, b]))
}

/// 2×2 max pooling with stride 2.
pub fn maxpool2d(tape: &mut Tape, x: Var) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!(
            "maxpool2d: extents {h}x{w} must both be even"
        )));
    }
    let (out, argmax) = kernels::maxpool_forward(tape.value(x).data(), n, c, h, w);
    let t = Tensor::from_vec(&[n, c, h / 2, w / 2], out)?;
    Ok(tape.push(t, Op::MaxPool { x, argmax }, &[x]))
}

/// Standard convolution layer. For body convolutions `kernel == 3`, for
/// pointwise `1`, and `2` when used as a transposed up-convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2dParams {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Self {
        let fan_in = c_in * kernel * kernel;
        let fan_out = c_out * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            Init::Uniform { fan_in, fan_out },
        );
        let bias = store.add(format!("{name}.bias"), &[c_out], Init::Zeros);
        Self { weight, bias, in_channels: c_in, out_channels: c_out, kernel }
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }

    /// Same-padded, stride 1.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        conv2d(tape, x, vars[self.weight.0], vars[self.bias.0], 1, Padding::Same)
    }

    /// As the 2×2 stride-2 transposed convolution.
    pub fn forward_up(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        upconv2d(tape, x, vars[self.weight.0], vars[self.bias.0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseConv2dParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub kernel: usize,
}

impl DepthwiseConv2dParams {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, kernel: usize) -> Self {
        let taps = kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            &[channels, 1, kernel, kernel],
            Init::Uniform { fan_in: taps, fan_out: taps },
        );
        let bias = store.add(format!("{name}.bias"), &[channels], Init::Zeros);
        Self { weight, bias, channels, kernel }
    }

    pub fn param_count(&self) -> usize {
        self.channels * self.kernel * self.kernel + self.channels
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        depthwise_conv2d(tape, x, vars[self.weight.0], vars[self.bias.0])
    }

    pub fn forward_up(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        depthwise_upconv2d(tape, x, vars[self.weight.0], vars[self.bias.0])
    }
}

/// Depthwise 3×3 followed by pointwise 1×1.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableConv2d {
    pub depthwise: DepthwiseConv2dParams,
    pub pointwise: Conv2dParams,
}

impl SeparableConv2d {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Self {
        Self {
            depthwise: DepthwiseConv2dParams::new(store, &format!("{name}.depthwise"), c_in, 3),
            pointwise: Conv2dParams::new(store, &format!("{name}.pointwise"), c_in, c_out, 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.depthwise.param_count() + self.pointwise.param_count()
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        separable_conv2d(
            tape,
            x,
            [vars[self.depthwise.weight.0], vars[self.depthwise.bias.0]],
            [vars[self.pointwise.weight.0], vars[self.pointwise.bias.0]],
        )
    }
}

/// `pointwise(depthwise(x))`, given `[weight, bias]` for each stage.
pub fn separable_conv2d(tape: &mut Tape, x: Var, depthwise: [Var; 2], pointwise: [Var; 2]) -> Result<Var> {
    let h = depthwise_conv2d(tape, x, depthwise[0], depthwise[1])?;
    conv2d(tape, h, pointwise[0], pointwise[1], 1, Padding::Same)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    Standard,
    Separable,
}

/// A same-padded 3×3 convolution of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvUnit {
    Standard(Conv2dParams),
    Separable(SeparableConv2d),
}

impl ConvUnit {
    pub fn new(store: &mut ParamStore, name: &str, kind: ConvKind, c_in: usize, c_out: usize) -> Self {
        match kind {
            ConvKind::Standard => ConvUnit::Standard(Conv2dParams::new(store, name, c_in, c_out, 3)),
            ConvKind::Separable => ConvUnit::Separable(SeparableConv2d::new(store, name, c_in, c_out)),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ConvUnit::Standard(p) => p.param_count(),
            ConvUnit::Separable(p) => p.param_count(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        match self {
            ConvUnit::Standard(p) => p.forward(tape, vars, x),
            ConvUnit::Separable(p) => p.forward(tape, vars, x),
        }
    }
}

/// Learned 2× upsampling: a transposed 2×2 stride-2 convolution, factored
/// into per-channel and 1×1 stages for the separable kind.
#[derive(Debug, Clone, PartialEq)]
pub enum UpConv {
    Standard(Conv2dParams),
    Separable {
        depthwise: DepthwiseConv2dParams,
        pointwise: Conv2dParams,
    },
}

impl UpConv {
    pub fn new(store: &mut ParamStore, name: &str, kind: ConvKind, c_in: usize, c_out: usize) -> Self {
        match kind {
            ConvKind::Standard => UpConv::Standard(Conv2dParams::new(store, name, c_in, c_out, 2)),
            ConvKind::Separable => UpConv::Separable {
                depthwise: DepthwiseConv2dParams::new(store, &format!("{name}.depthwise"), c_in, 2),
                pointwise: Conv2dParams::new(store, &format!("{name}.pointwise"), c_in, c_out, 1),
            },
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            UpConv::Standard(p) => p.param_count(),
            UpConv::Separable { depthwise, pointwise } => {
                depthwise.param_count() + pointwise.param_count()
            }
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        match self {
            UpConv::Standard(p) => p.forward_up(tape, vars, x),
            UpConv::Separable { depthwise, pointwise } => {
                let h = depthwise.forward_up(tape, vars, x)?;
                pointwise.forward(tape, vars, h)
            }
        }
    }
}

/// How a block's input reaches its output.
#[derive(Debug, Clone, PartialEq)]
pub enum Skip {
    /// Plain block, no shortcut.
    None,
    Identity,
    /// 1×1 convolution matching the shortcut's channels to the output.
    Projection(Conv2dParams),
}

/// Two convolutions with ReLU, optionally wrapped by a short residual
/// connection: `relu(conv2(relu(conv1(x)))) + skip(s)`.
///
/// The shortcut source `s` is normally the block input; decoder blocks feed
/// their upsampled (pre-concatenation) tensor instead.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub first: ConvUnit,
    pub second: ConvUnit,
    pub skip: Skip,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ResidualBlock {
    /// `skip_channels` is the channel count of the shortcut source, or
    /// `None` for a block without a residual connection.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: ConvKind,
        c_in: usize,
        c_out: usize,
        skip_channels: Option<usize>,
    ) -> Self {
        let first = ConvUnit::new(store, &format!("{name}.conv1"), kind, c_in, c_out);
        let second = ConvUnit::new(store, &format!("{name}.conv2"), kind, c_out, c_out);
        let skip = match skip_channels {
            None => Skip::None,
            Some(c) if c == c_out => Skip::Identity,
            Some(c) => Skip::Projection(Conv2dParams::new(store, &format!("{name}.proj"), c, c_out, 1)),
        };
        Self { first, second, skip, in_channels: c_in, out_channels: c_out }
    }

    pub fn param_count(&self) -> usize {
        let proj = match &self.skip {
            Skip::Projection(p) => p.param_count(),
            _ => 0,
        };
        self.first.param_count() + self.second.param_count() + proj
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        self.forward_with_shortcut(tape, vars, x, x)
    }

    pub fn forward_with_shortcut(&self, tape: &mut Tape, vars: &[Var], x: Var, shortcut: Var) -> Result<Var> {
        let c = tape.value(x).dims4()?.1;
        if c != self.in_channels {
            return Err(Error::dim(format!(
                "block expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let h = self.first.forward(tape, vars, x)?;
        let h = tape.relu(h);
        let h = self.second.forward(tape, vars, h)?;
        let h = tape.relu(h);
        match &self.skip {
            Skip::None => Ok(h),
            Skip::Identity => tape.add(h, shortcut),
            Skip::Projection(p) => {
                let s = conv2d(tape, shortcut, vars[p.weight.0], vars[p.bias.0], 1, Padding::Valid)?;
                tape.add(h, s)
            }
        }
    }
}

/// Convenience for single-block use: binds `store`, runs the block on `x`.
pub fn residual_forward(store: &ParamStore, block: &ResidualBlock, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let xv = tape.leaf(x);
    let y = block.forward(&mut tape, &vars, xv)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests;
