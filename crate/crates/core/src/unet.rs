//! The U-Net family: configuration, construction, forward pass, and exact
//! closed-form parameter accounting.
//!
//! Conventions fixed here (the counts depend on them):
//!
//! - `depth` counts resolution levels including the bottleneck, so a depth-7
//!   network pools six times.
//! - Level `l` has `base_filters · 2^l` channels; every block holds two
//!   same-padded 3×3 convolutions of the configured kind.
//! - Up-convolutions follow the configured kind too: a 2×2 stride-2
//!   transposed convolution, or its depthwise + pointwise factorization.
//! - Residual encoder blocks (and the bottleneck) project their input with
//!   a 1×1 convolution; residual decoder blocks add the upsampled tensor,
//!   which already has the output channel count.
//! - The head is a standard 1×1 convolution. Every convolution has a bias.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2dParams, ConvKind, ParamStore, ResidualBlock, UpConv};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_filters: usize,
    pub conv_kind: ConvKind,
    pub residual: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for UNetConfig {
    /// The proposed network: 7 levels, 16 base filters, separable, residual.
    fn default() -> Self {
        Self {
            depth: 7,
            base_filters: 16,
            conv_kind: ConvKind::Separable,
            residual: true,
            in_channels: 1,
            out_channels: 1,
        }
    }
}

impl UNetConfig {
    pub fn new(depth: usize, base_filters: usize, conv_kind: ConvKind, residual: bool) -> Self {
        Self { depth, base_filters, conv_kind, residual, in_channels: 1, out_channels: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("depth must be at least 1"));
        }
        if self.depth > 16 {
            return Err(Error::config(format!("depth {} is unreasonably large (max 16)", self.depth)));
        }
        if self.base_filters == 0 {
            return Err(Error::config("base_filters must be at least 1"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("in_channels and out_channels must be at least 1"));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// Spatial extents must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn check_extents(&self, h: usize, w: usize) -> Result<()> {
        let d = self.divisor();
        if !h.is_multiple_of(d) || !w.is_multiple_of(d) {
            return Err(Error::dim(format!(
                "input extents {h}x{w} must be divisible by {d} for a depth-{} network",
                self.depth
            )));
        }
        Ok(())
    }

    fn encoder_in(&self, level: usize) -> usize {
        if level == 0 {
            self.in_channels
        } else {
            self.channels(level - 1)
        }
    }
}

fn conv_count(c_in: usize, c_out: usize, k: usize) -> usize {
    c_in * c_out * k * k + c_out
}

fn unit_count(kind: ConvKind, c_in: usize, c_out: usize) -> usize {
    match kind {
        ConvKind::Standard => conv_count(c_in, c_out, 3),
        ConvKind::Separable => (9 * c_in + c_in) + conv_count(c_in, c_out, 1),
    }
}

fn up_count(kind: ConvKind, c_in: usize, c_out: usize) -> usize {
    match kind {
        ConvKind::Standard => conv_count(c_in, c_out, 2),
        ConvKind::Separable => (4 * c_in + c_in) + conv_count(c_in, c_out, 1),
    }
}

fn block_count(kind: ConvKind, c_in: usize, c_out: usize, shortcut: Option<usize>) -> usize {
    let proj = match shortcut {
        Some(s) if s != c_out => conv_count(s, c_out, 1),
        _ => 0,
    };
    unit_count(kind, c_in, c_out) + unit_count(kind, c_out, c_out) + proj
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    /// Encoder block (the bottleneck block at the deepest level).
    pub encoder_params: usize,
    /// Up-convolution into this level plus the decoder block; zero at the bottleneck.
    pub decoder_params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSummary {
    pub config: UNetConfig,
    pub per_level: Vec<LevelSummary>,
    pub head_params: usize,
    pub total_params: usize,
}

/// Closed-form parameter count, broken out per level and path.
pub fn count_params(config: &UNetConfig) -> Result<ArchSummary> {
    config.validate()?;
    let kind = config.conv_kind;
    let d = config.depth;
    let per_level: Vec<LevelSummary> = (0..d)
        .map(|l| {
            let c = config.channels(l);
            let c_in = config.encoder_in(l);
            let encoder_params = block_count(kind, c_in, c, config.residual.then_some(c_in));
            let decoder_params = if l + 1 < d {
                up_count(kind, config.channels(l + 1), c)
                    + block_count(kind, 2 * c, c, config.residual.then_some(c))
            } else {
                0
            };
            LevelSummary { level: l, in_ch: c_in, out_ch: c, encoder_params, decoder_params }
        })
        .collect();
    let head_params = conv_count(config.channels(0), config.out_channels, 1);
    let total_params = per_level
        .iter()
        .map(|l| l.encoder_params + l.decoder_params)
        .sum::<usize>()
        + head_params;
    Ok(ArchSummary { config: *config, per_level, head_params, total_params })
}

/// `1234` → `"1.23K"`, `5_309_123` → `"5.31M"`.
pub fn human_count(n: usize) -> String {
    let v = n as f64;
    if v >= 1e9 {
        format!("{:.2}B", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.2}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.2}K", v / 1e3)
    } else {
        n.to_string()
    }
}

impl ArchSummary {
    /// Aligned text table, one row per level plus head and total.
    pub fn render_table(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "depth={} base_filters={} conv={} residual={} in={} out={}",
            c.depth,
            c.base_filters,
            conv_kind_name(c.conv_kind),
            c.residual,
            c.in_channels,
            c.out_channels
        );
        let _ = writeln!(s, "{:>5}  {:>6}  {:>6}  {:>14}  {:>14}", "level", "in_ch", "out_ch", "encoder", "decoder");
        for l in &self.per_level {
            let _ = writeln!(
                s,
                "{:>5}  {:>6}  {:>6}  {:>14}  {:>14}",
                l.level, l.in_ch, l.out_ch, l.encoder_params, l.decoder_params
            );
        }
        let _ = writeln!(s, "{:>5}  {:>6}  {:>6}  {:>14}", "head", c.base_filters, c.out_channels, self.head_params);
        let _ = writeln!(s, "total: {} ({})", self.total_params, human_count(self.total_params));
        s
    }

    /// Rough training-time activation footprint for one `h × w` image in
    /// `f64`, forward values plus their gradients.
    pub fn estimate_activation_bytes(&self, h: usize, w: usize, batch: usize) -> u128 {
        let mut floats: u128 = 0;
        for l in &self.per_level {
            let pixels = (h as u128 * w as u128) >> (2 * l.level);
            let c = l.out_ch as u128;
            // Encoder: two conv outputs, two activations, shortcut sum, pooled copy.
            floats += pixels * (6 * c + l.in_ch as u128);
            if l.decoder_params > 0 {
                // Decoder: upsampled, concatenated, and the block's tensors.
                floats += pixels * 9 * c;
            }
        }
        floats * 2 * 8 * batch as u128
    }
}

pub fn conv_kind_name(kind: ConvKind) -> &'static str {
    match kind {
        ConvKind::Standard => "standard",
        ConvKind::Separable => "separable",
    }
}

/// A named configuration of the modification ladder and the parameter
/// figure reported for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub config: UNetConfig,
    pub claimed_params: f64,
}

/// Baseline, deepened, filter-reduced, separable, and separable + residual.
pub fn reference_variants() -> Vec<Variant> {
    use ConvKind::*;
    vec![
        Variant { name: "baseline-d4-f64", config: UNetConfig::new(4, 64, Standard, false), claimed_params: 10e6 },
        Variant { name: "deep-d7-f64", config: UNetConfig::new(7, 64, Standard, false), claimed_params: 600e6 },
        Variant { name: "deep-d7-f16", config: UNetConfig::new(7, 16, Standard, false), claimed_params: 37e6 },
        Variant { name: "deep-sep-d7-f16", config: UNetConfig::new(7, 16, Separable, false), claimed_params: 4.6e6 },
        Variant { name: "deep-sep-res-d7-f16", config: UNetConfig::new(7, 16, Separable, true), claimed_params: 5.3e6 },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLevel {
    pub up: UpConv,
    pub block: ResidualBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetModel {
    pub config: UNetConfig,
    pub params: ParamStore,
    /// Levels `0..depth-1`.
    pub encoders: Vec<ResidualBlock>,
    pub bottleneck: ResidualBlock,
    /// Indexed by level; `decoders[l]` upsamples from level `l + 1`.
    pub decoders: Vec<DecoderLevel>,
    pub head: Conv2dParams,
}

/// Builds the network for `config`. Parameters are created encoder levels
/// first, then the bottleneck, then decoder levels from deepest to
/// shallowest, then the head; within a layer weight precedes bias.
pub fn build_unet(config: &UNetConfig, seed: u64) -> Result<UNetModel> {
    config.validate()?;
    let kind = config.conv_kind;
    let d = config.depth;
    let mut store = ParamStore::new(seed);
    let shortcut = |c_in: usize| config.residual.then_some(c_in);

    let encoders = (0..d - 1)
        .map(|l| {
            let c_in = config.encoder_in(l);
            ResidualBlock::new(&mut store, &format!("enc{l}"), kind, c_in, config.channels(l), shortcut(c_in))
        })
        .collect();
    let c_in = config.encoder_in(d - 1);
    let bottleneck = ResidualBlock::new(&mut store, "bottleneck", kind, c_in, config.channels(d - 1), shortcut(c_in));
    let mut decoders: Vec<DecoderLevel> = (0..d - 1)
        .rev()
        .map(|l| {
            let c = config.channels(l);
            let up = UpConv::new(&mut store, &format!("dec{l}.up"), kind, config.channels(l + 1), c);
            let block = ResidualBlock::new(&mut store, &format!("dec{l}"), kind, 2 * c, c, shortcut(c));
            DecoderLevel { up, block }
        })
        .collect();
    decoders.reverse();
    let head = Conv2dParams::new(&mut store, "head", config.channels(0), config.out_channels, 1);

    Ok(UNetModel { config: *config, params: store, encoders, bottleneck, decoders, head })
}

impl UNetModel {
    pub fn seed(&self) -> u64 {
        self.params.seed()
    }

    /// Enumerated count of every scalar parameter.
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Records the forward pass on `tape`. `vars` come from `self.params.bind`.
    pub fn forward_on(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != self.config.in_channels {
            return Err(Error::dim(format!(
                "input has {c} channels, model expects {}",
                self.config.in_channels
            )));
        }
        self.config.check_extents(h, w)?;

        let mut skips = Vec::with_capacity(self.encoders.len());
        let mut h = x;
        for block in &self.encoders {
            let e = block.forward(tape, vars, h)?;
            skips.push(e);
            h = crate::nn::maxpool2d(tape, e)?;
        }
        h = self.bottleneck.forward(tape, vars, h)?;
        for (dec, skip) in self.decoders.iter().zip(skips).rev() {
            let up = dec.up.forward(tape, vars, h)?;
            let cat = tape.concat_channels(skip, up)?;
            h = dec.block.forward_with_shortcut(tape, vars, cat, up)?;
        }
        self.head.forward(tape, vars, h)
    }

    /// Logits for `x: [N, in_channels, H, W]`; no sigmoid applied.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.frozen_vars(&mut tape);
        let xv = tape.leaf(x);
        let y = self.forward_on(&mut tape, &vars, xv)?;
        Ok(tape.value(y).clone())
    }

    fn frozen_vars(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| {
                let mut c = t.clone();
                c.set_requires_grad(false);
                tape.constant(c)
            })
            .collect()
    }
}
