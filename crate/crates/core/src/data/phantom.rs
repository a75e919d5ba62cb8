//! Mammography-like phantoms with exact lesion masks.
//!
//! The background is a smooth random tissue field inside a half-ellipse
//! breast outline anchored at the chest wall (left edge). Masses are
//! soft-edged bright ellipses; calcifications are small bright discs,
//! clustered inside a 10 mm disc half of the time when there are at least
//! three. The mask is the union of lesion supports.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{SampleMeta, SamplePair, Source, Split};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::tensor::Tensor;

const PLACEMENT_TRIES: usize = 2000;
const HALO: f64 = 1.2;
const CLUSTER_DIAMETER_MM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    /// `[H, W]` in pixels.
    pub size: [usize; 2],
    pub pixel_spacing_mm: f64,
    pub n_masses: usize,
    pub n_calcifications: usize,
    pub mass_diameter_mm: (f64, f64),
    pub calc_diameter_mm: (f64, f64),
    /// Multiplies the wavelengths of the background texture octaves.
    pub background_texture_scale: f64,
    /// Mass brightness above background; calcifications get 1.4× this.
    pub contrast: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: [1536, 1536],
            pixel_spacing_mm: 0.15,
            n_masses: 1,
            n_calcifications: 5,
            mass_diameter_mm: (5.0, 20.0),
            calc_diameter_mm: (0.3, 0.8),
            background_texture_scale: 1.0,
            contrast: 0.3,
            seed: 0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::config(format!("{name} range ({lo}, {hi}) must satisfy 0 < lo <= hi")));
    }
    Ok(())
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size[0] < 8 || self.size[1] < 8 {
            return Err(Error::config(format!("phantom size {:?} is below 8x8", self.size)));
        }
        if !(self.pixel_spacing_mm > 0.0) {
            return Err(Error::config("pixel spacing must be positive"));
        }
        if !(self.background_texture_scale > 0.0) || !(self.contrast > 0.0) {
            return Err(Error::config("texture scale and contrast must be positive"));
        }
        check_range("mass diameter", self.mass_diameter_mm)?;
        check_range("calcification diameter", self.calc_diameter_mm)
    }

    /// Calcification radius in pixels, never below one.
    pub fn calc_radius_px(&self, diameter_mm: f64) -> usize {
        ((diameter_mm / (2.0 * self.pixel_spacing_mm)).round() as usize).max(1)
    }
}

struct Breast {
    h: f64,
    w: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Breast {
    /// Normalized elliptical radius; `<= 1` inside.
    fn rho(&self, y: f64, x: f64) -> f64 {
        ((x / self.rx).powi(2) + ((y - self.cy) / self.ry).powi(2)).sqrt()
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= self.w - 1.0 && y <= self.h - 1.0 && self.rho(y, x) <= 1.0
    }

    /// Whole circle of radius `r` around `(y, x)` lies inside.
    fn contains_disc(&self, y: f64, x: f64, r: f64) -> bool {
        self.contains(y, x)
            && (0..24).all(|i| {
                let t = i as f64 * PI / 12.0;
                self.contains(y + r * t.sin(), x + r * t.cos())
            })
    }
}

struct Mass {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    angle: f64,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<SamplePair> {
    spec.validate()?;
    let [h, w] = spec.size;
    let (hf, wf) = (h as f64, w as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let breast = Breast {
        h: hf,
        w: wf,
        cy: hf / 2.0 + rng.random_range(-0.04..0.04) * hf,
        rx: wf * rng.random_range(0.75..0.92),
        ry: hf * rng.random_range(0.40..0.48),
    };

    // Tissue texture: four octaves of three random plane waves each.
    let mut waves = Vec::new();
    for k in 0..4 {
        let wavelength = spec.background_texture_scale * hf.min(wf) / f64::from(2u32 << k);
        let amp = 0.08 * 0.6f64.powi(k) / 3f64.sqrt();
        for _ in 0..3 {
            let theta = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            let f = 2.0 * PI / wavelength;
            waves.push((f * theta.cos(), f * theta.sin(), phase, amp));
        }
    }
    let noise_seed = rng.next_u64();
    let mut image = vec![0.0f64; h * w];
    image.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
        noise.set_stream(y as u64);
        let yf = y as f64;
        for (x, v) in row.iter_mut().enumerate() {
            let xf = x as f64;
            let n = noise.random_range(-0.015..0.015);
            if !breast.contains(yf, xf) {
                continue;
            }
            let thickness = (1.0 - breast.rho(yf, xf).powi(2)).max(0.0).sqrt();
            let field: f64 = waves
                .iter()
                .map(|(fx, fy, ph, amp)| amp * (fx * xf + fy * yf + ph).cos())
                .sum();
            *v = 0.35 * (0.55 + 0.45 * thickness) + field + n;
        }
    });
    let mut mask = vec![0u8; h * w];

    let mut masses: Vec<Mass> = Vec::with_capacity(spec.n_masses);
    for m in 0..spec.n_masses {
        let d = uniform(&mut rng, spec.mass_diameter_mm);
        let a = d / (2.0 * spec.pixel_spacing_mm);
        let b = a * rng.random_range(0.6..1.0);
        let angle = rng.random_range(0.0..PI);
        let placed = (0..PLACEMENT_TRIES).find_map(|_| {
            let cy = rng.random_range(0.0..hf);
            let cx = rng.random_range(0.0..wf);
            let fits = breast.contains_disc(cy, cx, HALO * a)
                && masses.iter().all(|o| {
                    ((o.cy - cy).powi(2) + (o.cx - cx).powi(2)).sqrt() > HALO * (o.a + a) + 2.0
                });
            fits.then_some((cy, cx))
        });
        let Some((cy, cx)) = placed else {
            return Err(Error::Generation(format!(
                "mass {m} ({d:.1} mm, radius {a:.1} px) does not fit inside the breast outline of a {h}x{w} phantom"
            )));
        };
        masses.push(Mass { cy, cx, a, b, angle });
    }
    for m in &masses {
        paint_mass(&mut image, &mut mask, w, h, m, spec.contrast);
    }

    if spec.n_calcifications > 0 {
        let clustered = spec.n_calcifications >= 3 && rng.random_bool(0.5);
        let cluster_r = CLUSTER_DIAMETER_MM / (2.0 * spec.pixel_spacing_mm);
        let cluster = if clustered {
            (0..PLACEMENT_TRIES).find_map(|_| {
                let cy = rng.random_range(0.0..hf);
                let cx = rng.random_range(0.0..wf);
                breast.contains(cy, cx).then_some((cy, cx))
            })
        } else {
            None
        };
        for c in 0..spec.n_calcifications {
            let d = uniform(&mut rng, spec.calc_diameter_mm);
            let r = spec.calc_radius_px(d);
            let placed = (0..PLACEMENT_TRIES).find_map(|_| {
                let (cy, cx) = match cluster {
                    Some((ky, kx)) => {
                        let t = rng.random_range(0.0..2.0 * PI);
                        let s = cluster_r * rng.random_range(0.0f64..1.0).sqrt();
                        ((ky + s * t.sin()).round(), (kx + s * t.cos()).round())
                    }
                    None => (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64),
                };
                let inside = cy >= 0.0
                    && cx >= 0.0
                    && cy < hf
                    && cx < wf
                    && breast.contains_disc(cy, cx, r as f64 + 0.5);
                inside.then_some((cy as usize, cx as usize))
            });
            let Some((cy, cx)) = placed else {
                return Err(Error::Generation(format!(
                    "calcification {c} does not fit inside the breast outline of a {h}x{w} phantom"
                )));
            };
            paint_dot(&mut image, &mut mask, w, cy, cx, r, 1.4 * spec.contrast);
        }
    }

    for v in &mut image {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(SamplePair {
        image: Tensor::from_vec(&[1, h, w], image)?,
        mask: BinaryMask::new(&[h, w], mask)?,
        meta: SampleMeta {
            pixel_spacing_mm: spec.pixel_spacing_mm,
            source: Source::Synthetic,
            split: Split::Train,
        },
    })
}

fn paint_mass(image: &mut [f64], mask: &mut [u8], w: usize, h: usize, m: &Mass, contrast: f64) {
    let reach = HALO * m.a + 1.0;
    let y0 = (m.cy - reach).floor().max(0.0) as usize;
    let y1 = ((m.cy + reach).ceil() as usize).min(h - 1);
    let x0 = (m.cx - reach).floor().max(0.0) as usize;
    let x1 = ((m.cx + reach).ceil() as usize).min(w - 1);
    let (s, c) = m.angle.sin_cos();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dy, dx) = (y as f64 - m.cy, x as f64 - m.cx);
            let u = (dx * c + dy * s) / m.a;
            let v = (-dx * s + dy * c) / m.b;
            let r = (u * u + v * v).sqrt();
            let idx = y * w + x;
            if r <= 1.0 {
                image[idx] += contrast * (0.75 + 0.25 * (1.0 - r * r));
                mask[idx] = 1;
            } else if r < HALO {
                image[idx] += contrast * 0.3 * (HALO - r) / (HALO - 1.0);
            }
        }
    }
}

fn paint_dot(image: &mut [f64], mask: &mut [u8], w: usize, cy: usize, cx: usize, r: usize, level: f64) {
    let ri = r as isize;
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            if dy * dy + dx * dx > ri * ri {
                continue;
            }
            let idx = (cy as isize + dy) as usize * w + (cx as isize + dx) as usize;
            image[idx] += level;
            mask[idx] = 1;
        }
    }
}

/// Parameters for synthesizing a whole split dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub count: usize,
    pub size: [usize; 2],
    pub pixel_spacing_mm: f64,
    /// Inclusive ranges of lesion counts per phantom.
    pub masses: (usize, usize),
    pub calcifications: (usize, usize),
    pub mass_diameter_mm: (f64, f64),
    pub calc_diameter_mm: (f64, f64),
    pub contrast: f64,
    pub seed: u64,
    /// Train / val / test counts, assigned in that order.
    pub split: [usize; 3],
}

impl Default for SynthParams {
    fn default() -> Self {
        let p = PhantomSpec::default();
        Self {
            count: 40,
            size: p.size,
            pixel_spacing_mm: p.pixel_spacing_mm,
            masses: (1, 2),
            calcifications: (0, 6),
            mass_diameter_mm: p.mass_diameter_mm,
            calc_diameter_mm: p.calc_diameter_mm,
            contrast: p.contrast,
            seed: 0,
            split: [30, 5, 5],
        }
    }
}

/// Phantom `i` draws its lesion counts and seed from ChaCha8 stream `i`
/// of `params.seed`, so every sample is independent of the others.
pub fn synthesize_set(params: &SynthParams) -> Result<Vec<SamplePair>> {
    if params.split.iter().sum::<usize>() != params.count {
        return Err(Error::config(format!(
            "split {}/{}/{} does not sum to count {}",
            params.split[0], params.split[1], params.split[2], params.count
        )));
    }
    if params.masses.0 > params.masses.1 || params.calcifications.0 > params.calcifications.1 {
        return Err(Error::config("lesion count ranges must satisfy lo <= hi"));
    }
    (0..params.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(i as u64);
            let spec = PhantomSpec {
                size: params.size,
                pixel_spacing_mm: params.pixel_spacing_mm,
                n_masses: rng.random_range(params.masses.0..=params.masses.1),
                n_calcifications: rng.random_range(params.calcifications.0..=params.calcifications.1),
                mass_diameter_mm: params.mass_diameter_mm,
                calc_diameter_mm: params.calc_diameter_mm,
                background_texture_scale: 1.0,
                contrast: params.contrast,
                seed: rng.next_u64(),
            };
            let mut s = generate_phantom(&spec)?;
            s.meta.split = if i < params.split[0] {
                Split::Train
            } else if i < params.split[0] + params.split[1] {
                Split::Val
            } else {
                Split::Test
            };
            Ok(s)
        })
        .collect()
}
