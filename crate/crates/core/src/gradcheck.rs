//! Central finite-difference gradient checking.
//!
//! The function under test maps input vars to an output of any shape; it is
//! reduced to a scalar with a fixed random projection `L = Σ r·out`. The
//! numeric side evaluates forward passes only and forms the projection in
//! plain arithmetic, so it shares nothing with the backward rules it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    pub rel_tol: f64,
    /// Entries whose absolute error is below this pass regardless of `rel_tol`.
    pub abs_floor: f64,
    pub projection_seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { step: 1e-5, rel_tol: 1e-4, abs_floor: 1e-7, projection_seed: 0x5eed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn forward<F>(inputs: &[Tensor], f: &F) -> Result<Tensor>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

impl GradCheck {
    pub fn run<F>(&self, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let mut inputs: Vec<Tensor> = inputs.to_vec();
        for t in &mut inputs {
            t.set_requires_grad(true);
        }

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        let out_shape = tape.value(out).shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(self.projection_seed);
        let proj: Vec<f64> = (0..tape.value(out).numel())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let r = tape.constant(Tensor::from_vec(&out_shape, proj.clone())?);
        let weighted = tape.mul(out, r)?;
        let loss = tape.sum(weighted);
        tape.backward(loss)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(&inputs)
            .map(|(v, t)| tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();

        let project = |t: &Tensor| -> f64 { t.data().iter().zip(&proj).map(|(a, b)| a * b).sum() };
        let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, failures: Vec::new() };
        for i in 0..inputs.len() {
            for j in 0..inputs[i].numel() {
                let orig = inputs[i].data()[j];
                inputs[i].data_mut()[j] = orig + self.step;
                let plus = project(&forward(&inputs, &f)?);
                inputs[i].data_mut()[j] = orig - self.step;
                let minus = project(&forward(&inputs, &f)?);
                inputs[i].data_mut()[j] = orig;

                let numeric = (plus - minus) / (2.0 * self.step);
                let a = analytic[i][j];
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
                report.checked += 1;
                if abs > self.abs_floor {
                    report.max_rel_err = report.max_rel_err.max(rel);
                    if rel >= self.rel_tol {
                        report.failures.push(Mismatch { input: i, index: j, analytic: a, numeric });
                    }
                }
            }
        }
        Ok(report)
    }
}

/// Runs [`GradCheck::default`].
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    GradCheck::default().run(inputs, f)
}

/// Tensor of uniform values in `[lo, hi)` from a seeded stream.
pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("non-empty shape")
}
