//! Define-by-run reverse-mode differentiation.
//!
//! Operations append nodes to a [`Tape`]; a node's inputs always precede it,
//! so the append order is a topological order and [`Tape::backward`] is a
//! single reverse sweep.

use crate::error::{Error, Result};
use crate::nn::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Sigmoid(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Concat(Var, Var),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Depthwise { x: Var, w: Var, b: Var, k: usize },
    UpConv { x: Var, w: Var, b: Var },
    DepthwiseUpConv { x: Var, w: Var, b: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records `t` as an input. It participates in differentiation iff
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let requires_grad = t.requires_grad();
        let mut value = t.clone();
        value.zero_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        t.zero_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of the last `backward` calls, if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Adds the gradient recorded for `v` into `target`'s gradient buffer.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) -> Result<()> {
        match self.grad(v) {
            Some(g) => target.accumulate_grad(g),
            None => Ok(()),
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn binary(&mut self, what: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(what, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data = t.data().iter().map(|x| f(*x)).collect();
        Tensor::from_vec(t.shape(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.unary(a, |x| c * x);
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.unary(a, |x| x + c);
        self.push(t, Op::AddScalar(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::ln);
        self.push(t, Op::Ln(a), &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.unary(a, |x| x.clamp(lo, hi));
        self.push(t, Op::Clamp(a, lo, hi), &[a])
    }

    /// Concatenates two NCHW tensors along channels, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::dim(format!(
                "concat_channels: {:?} and {:?} differ outside the channel axis",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let plane = h * w;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            out.extend_from_slice(&da[i * ca * plane..(i + 1) * ca * plane]);
            out.extend_from_slice(&db[i * cb * plane..(i + 1) * cb * plane]);
        }
        let t = Tensor::from_vec(&[n, ca + cb, h, w], out)?;
        Ok(self.push(t, Op::Concat(a, b), &[a, b]))
    }

    /// Propagates d`loss`/d(node) to every node that requires a gradient,
    /// adding into gradients left by earlier calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(Error::Graph(format!("{loss:?} is not on this tape")));
        };
        if !node.value.is_scalar() {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Graph(
                "loss does not depend on any tensor that requires a gradient".into(),
            ));
        }
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        pass[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = pass[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            for (input, ig) in self.input_grads(idx, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut pass[input.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn input_grads(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let out = self.nodes[idx].value.data();
        let map = |a: &[f64], f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            a.iter().zip(g).map(|(x, gi)| f(*x, *gi)).collect()
        };
        match &self.nodes[idx].op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::Mul(a, b) => vec![
                (*a, map(self.data(*b), &|y, gi| y * gi)),
                (*b, map(self.data(*a), &|x, gi| x * gi)),
            ],
            Op::Div(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let ga = map(db, &|y, gi| gi / y);
                let gb = da
                    .iter()
                    .zip(db)
                    .zip(g)
                    .map(|((x, y), gi)| -gi * x / (y * y))
                    .collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|gi| c * gi).collect())],
            Op::AddScalar(a) => vec![(*a, g.to_vec())],
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).numel()])],
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::Relu(a) => vec![(*a, map(self.data(*a), &|x, gi| if x > 0.0 { gi } else { 0.0 }))],
            Op::Sigmoid(a) => vec![(
                *a,
                out.iter().zip(g).map(|(s, gi)| gi * s * (1.0 - s)).collect(),
            )],
            Op::Ln(a) => vec![(*a, map(self.data(*a), &|x, gi| gi / x))],
            Op::Clamp(a, lo, hi) => vec![(
                *a,
                map(self.data(*a), &|x, gi| if x >= *lo && x <= *hi { gi } else { 0.0 }),
            )],
            Op::Concat(a, b) => {
                let (n, ca, h, w) = self.value(*a).dims4().expect("4-D");
                let cb = self.value(*b).dims4().expect("4-D").1;
                let plane = h * w;
                let (mut ga, mut gb) = (Vec::new(), Vec::new());
                for i in 0..n {
                    let base = i * (ca + cb) * plane;
                    ga.extend_from_slice(&g[base..base + ca * plane]);
                    gb.extend_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(self.data(*x), self.data(*w), g, geom);
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Depthwise { x, w, b, k } => {
                let (n, c, h, wd) = self.value(*x).dims4().expect("4-D");
                let (dx, dw, db) =
                    kernels::depthwise_backward(self.data(*x), self.data(*w), g, n, c, h, wd, *k);
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::UpConv { x, w, b } => {
                let (n, c, h, wd) = self.value(*x).dims4().expect("4-D");
                let c_out = self.value(*b).numel();
                let (dx, dw, db) =
                    kernels::upconv_backward(self.data(*x), self.data(*w), g, n, c, h, wd, c_out);
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::DepthwiseUpConv { x, w, b } => {
                let (n, c, h, wd) = self.value(*x).dims4().expect("4-D");
                let (dx, dw, db) =
                    kernels::depthwise_upconv_backward(self.data(*x), self.data(*w), g, n, c, h, wd);
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::MaxPool { x, argmax } => {
                vec![(*x, kernels::maxpool_backward(argmax, g, self.value(*x).numel()))]
            }
        }
    }
}
