//! Python bindings: configuration and parameter counting, phantom
//! synthesis, DICE, and a `Model` class for training and inference.
//!
//! Images cross the boundary as nested lists (rows of floats), masks as
//! rows of 0/1 integers.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lightseg::data::{generate_phantom as gen_phantom, read_manifest, synthesize_set, write_manifest, PhantomSpec, Split, SynthParams};
use lightseg::metrics::{dice_coefficient, threshold, BinaryMask};
use lightseg::nn::ConvKind;
use lightseg::train::{evaluate, load_checkpoint, predict_probs, save_checkpoint, train_samples, LossKind, TrainConfig};
use lightseg::unet::{build_unet, conv_kind_name, count_params as count, reference_variants, UNetConfig, UNetModel};
use lightseg::{Error, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Checkpoint(_) | Error::Graph(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn conv_kind(name: &str) -> PyResult<ConvKind> {
    match name {
        "standard" => Ok(ConvKind::Standard),
        "separable" => Ok(ConvKind::Separable),
        _ => Err(PyValueError::new_err(format!("conv must be 'standard' or 'separable', got '{name}'"))),
    }
}

fn config(depth: usize, filters: usize, conv: &str, residual: bool) -> PyResult<UNetConfig> {
    let cfg = UNetConfig::new(depth, filters, conv_kind(conv)?, residual);
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

fn rows_to_tensor(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("image must be a non-empty rectangular list of rows"));
    }
    Tensor::from_vec(&[1, 1, h, w], rows.concat()).map_err(py_err)
}

fn rows_to_mask(rows: &[Vec<u8>]) -> PyResult<BinaryMask> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("mask must be a non-empty rectangular list of rows"));
    }
    BinaryMask::new(&[h, w], rows.concat()).map_err(py_err)
}

fn to_rows<T: Clone>(data: &[T], w: usize) -> Vec<Vec<T>> {
    data.chunks(w).map(<[T]>::to_vec).collect()
}

/// Total trainable parameters of a configuration.
#[pyfunction]
#[pyo3(signature = (depth = 7, filters = 16, conv = "separable", residual = true))]
fn count_params(depth: usize, filters: usize, conv: &str, residual: bool) -> PyResult<usize> {
    Ok(count(&config(depth, filters, conv, residual)?).map_err(py_err)?.total_params)
}

/// Per-level parameter table as text.
#[pyfunction]
#[pyo3(signature = (depth = 7, filters = 16, conv = "separable", residual = true))]
fn param_table(depth: usize, filters: usize, conv: &str, residual: bool) -> PyResult<String> {
    Ok(count(&config(depth, filters, conv, residual)?).map_err(py_err)?.render_table())
}

/// `(name, depth, filters, conv, residual, params, claimed)` per variant.
#[pyfunction]
fn variants() -> PyResult<Vec<(String, usize, usize, String, bool, usize, f64)>> {
    reference_variants()
        .into_iter()
        .map(|v| {
            let c = v.config;
            let total = count(&c).map_err(py_err)?.total_params;
            Ok((v.name.to_string(), c.depth, c.base_filters, conv_kind_name(c.conv_kind).to_string(), c.residual, total, v.claimed_params))
        })
        .collect()
}

/// One phantom as `(image_rows, mask_rows)`.
#[pyfunction]
#[pyo3(signature = (height, width, spacing = 0.15, masses = 1, calcifications = 5, seed = 0, mass_mm = (5.0, 20.0), calc_mm = (0.3, 0.8), contrast = 0.3))]
#[allow(clippy::too_many_arguments)]
fn generate_phantom(
    height: usize,
    width: usize,
    spacing: f64,
    masses: usize,
    calcifications: usize,
    seed: u64,
    mass_mm: (f64, f64),
    calc_mm: (f64, f64),
    contrast: f64,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<u8>>)> {
    let spec = PhantomSpec {
        size: [height, width],
        pixel_spacing_mm: spacing,
        n_masses: masses,
        n_calcifications: calcifications,
        mass_diameter_mm: mass_mm,
        calc_diameter_mm: calc_mm,
        contrast,
        seed,
        ..PhantomSpec::default()
    };
    let s = gen_phantom(&spec).map_err(py_err)?;
    Ok((to_rows(s.image.data(), width), to_rows(s.mask.data(), width)))
}

/// Writes a phantom dataset with a manifest; returns the split counts.
#[pyfunction]
#[pyo3(signature = (out, count = 40, height = 128, width = 128, spacing = 0.6, seed = 0, split = None, masses = (1, 2), calcifications = (0, 6), mass_mm = (5.0, 20.0)))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    out: PathBuf,
    count: usize,
    height: usize,
    width: usize,
    spacing: f64,
    seed: u64,
    split: Option<(usize, usize, usize)>,
    masses: (usize, usize),
    calcifications: (usize, usize),
    mass_mm: (f64, f64),
) -> PyResult<(usize, usize, usize)> {
    let held = count / 8;
    let (a, b, c) = split.unwrap_or((count - 2 * held, held, held));
    let params = SynthParams {
        count,
        size: [height, width],
        pixel_spacing_mm: spacing,
        seed,
        split: [a, b, c],
        masses,
        calcifications,
        mass_diameter_mm: mass_mm,
        ..SynthParams::default()
    };
    let samples = synthesize_set(&params).map_err(py_err)?;
    let m = write_manifest(&samples, out).map_err(py_err)?;
    Ok((m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)))
}

/// DICE of two binary masks; 1.0 when both are empty.
#[pyfunction]
fn dice(pred: Vec<Vec<u8>>, gt: Vec<Vec<u8>>) -> PyResult<f64> {
    dice_coefficient(&rows_to_mask(&pred)?, &rows_to_mask(&gt)?).map_err(py_err)
}

#[pyclass(module = "lightseg")]
struct Model {
    inner: UNetModel,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (depth = 7, filters = 16, conv = "separable", residual = true, seed = 0))]
    fn new(depth: usize, filters: usize, conv: &str, residual: bool, seed: u64) -> PyResult<Self> {
        let inner = build_unet(&config(depth, filters, conv, residual)?, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = load_checkpoint(path).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, None, 0, path).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// `(depth, filters, conv, residual)`.
    #[getter]
    fn config(&self) -> (usize, usize, String, bool) {
        let c = &self.inner.config;
        (c.depth, c.base_filters, conv_kind_name(c.conv_kind).to_string(), c.residual)
    }

    /// Logits for one grayscale image.
    fn forward(&self, image: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = rows_to_tensor(&image)?;
        let y = self.inner.forward(&x).map_err(py_err)?;
        Ok(to_rows(y.data(), image[0].len()))
    }

    /// Binary mask for one grayscale image.
    #[pyo3(signature = (image, threshold = 0.5))]
    fn predict(&self, image: Vec<Vec<f64>>, threshold: f64) -> PyResult<Vec<Vec<u8>>> {
        let x = rows_to_tensor(&image)?;
        let probs = predict_probs(&self.inner, &x).map_err(py_err)?;
        Ok(to_rows(self::threshold(&probs, threshold).data(), image[0].len()))
    }

    /// Trains in place on a dataset directory; returns
    /// `(epoch, train_loss, val_dice)` per epoch.
    #[pyo3(signature = (data, epochs = 10, lr = 1e-3, seed = 0, loss = "dice_plus_bce"))]
    fn train(&mut self, data: PathBuf, epochs: usize, lr: f64, seed: u64, loss: &str) -> PyResult<Vec<(usize, f64, Option<f64>)>> {
        let loss = match loss {
            "dice" => LossKind::Dice,
            "dice_plus_bce" => LossKind::DicePlusBce,
            other => return Err(PyValueError::new_err(format!("unknown loss '{other}'"))),
        };
        let cfg = TrainConfig { epochs, learning_rate: lr, seed, loss, ..TrainConfig::default() };
        let m = read_manifest(&data).map_err(py_err)?;
        let train = m.load_split(Split::Train).map_err(py_err)?;
        let val = m.load_split(Split::Val).map_err(py_err)?;
        let h = train_samples(&mut self.inner, &train, &val, &cfg, |_| {}).map_err(py_err)?;
        Ok(h.per_epoch.iter().map(|r| (r.epoch, r.train_loss, r.val_mean_dice)).collect())
    }

    /// `(mean_dice, per_image_dice)` on one split of a dataset directory.
    #[pyo3(signature = (data, split = "test", threshold = 0.5))]
    fn evaluate(&self, data: PathBuf, split: &str, threshold: f64) -> PyResult<(f64, Vec<f64>)> {
        let split: Split = split.parse().map_err(PyValueError::new_err)?;
        let m = read_manifest(&data).map_err(py_err)?;
        let r = evaluate(&self.inner, &m, split, threshold).map_err(py_err)?;
        Ok((r.mean_dice, r.per_image_dice))
    }

    fn __repr__(&self) -> String {
        let (d, f, c, r) = self.config();
        format!("Model(depth={d}, filters={f}, conv='{c}', residual={}, params={})", if r { "True" } else { "False" }, self.param_count())
    }
}

#[pymodule]
#[pyo3(name = "lightseg")]
fn lightseg_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(param_table, m)?)?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
