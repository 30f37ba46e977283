//! Seeded image perturbations: flip, brightness/contrast, speckle, blur and
//! affine warps, plus a logged pipeline that applies them stochastically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_flip: f64,
    pub p_brightness_contrast: f64,
    pub p_speckle: f64,
    pub p_blur: f64,
    pub p_affine: f64,
    pub brightness_delta_range: (f32, f32),
    pub contrast_factor_range: (f32, f32),
    pub speckle_gaussian_sigma: f32,
    pub speckle_mult_sigma: f32,
    pub blur_sigma_range: (f32, f32),
    pub affine_max_rotate_deg: f32,
    pub affine_max_translate_frac: f32,
    pub affine_scale_range: (f32, f32),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_flip: 0.5,
            p_brightness_contrast: 0.5,
            p_speckle: 0.5,
            p_blur: 0.25,
            p_affine: 0.25,
            brightness_delta_range: (-0.2, 0.2),
            contrast_factor_range: (0.8, 1.25),
            speckle_gaussian_sigma: 0.05,
            speckle_mult_sigma: 0.1,
            blur_sigma_range: (0.5, 2.0),
            affine_max_rotate_deg: 10.0,
            affine_max_translate_frac: 0.05,
            affine_scale_range: (0.95, 1.05),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Same magnitudes, every probability set to `p`.
    pub fn with_all_probabilities(mut self, p: f64) -> Self {
        self.p_flip = p;
        self.p_brightness_contrast = p;
        self.p_speckle = p;
        self.p_blur = p;
        self.p_affine = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.p_flip,
            self.p_brightness_contrast,
            self.p_speckle,
            self.p_blur,
            self.p_affine,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        let ranges = [
            self.brightness_delta_range,
            self.contrast_factor_range,
            self.blur_sigma_range,
            self.affine_scale_range,
        ];
        if ranges.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::InvalidConfig("empty parameter range".into()));
        }
        if self.contrast_factor_range.0 <= 0.0 || self.affine_scale_range.0 <= 0.0 {
            return Err(Error::InvalidConfig("contrast and scale factors must be positive".into()));
        }
        if !(self.speckle_gaussian_sigma > 0.0
            && self.speckle_mult_sigma > 0.0
            && self.blur_sigma_range.0 > 0.0)
        {
            return Err(Error::InvalidConfig("sigmas must be positive".into()));
        }
        if self.affine_max_rotate_deg < 0.0 || self.affine_max_translate_frac < 0.0 {
            return Err(Error::InvalidConfig("affine magnitudes must be non-negative".into()));
        }
        Ok(())
    }
}

/// One applied transform with its sampled parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Transform {
    HorizontalFlip,
    BrightnessContrast {
        delta: f32,
        factor: f32,
    },
    Speckle {
        gaussian_sigma: f32,
        mult_sigma: f32,
        noise_seed: u64,
    },
    GaussianBlur {
        sigma: f32,
    },
    RandomAffine {
        rotate_deg: f32,
        translate_x_frac: f32,
        translate_y_frac: f32,
        scale: f32,
    },
}

impl Transform {
    pub fn apply(&self, grid: &Grid<f32>) -> Grid<f32> {
        match *self {
            Transform::HorizontalFlip => horizontal_flip(grid),
            Transform::BrightnessContrast { delta, factor } => {
                brightness_contrast(grid, delta, factor)
            }
            Transform::Speckle {
                gaussian_sigma,
                mult_sigma,
                noise_seed,
            } => speckle(
                grid,
                gaussian_sigma,
                mult_sigma,
                &mut ChaCha8Rng::seed_from_u64(noise_seed),
            ),
            Transform::GaussianBlur { sigma } => gaussian_blur(grid, sigma),
            Transform::RandomAffine {
                rotate_deg,
                translate_x_frac,
                translate_y_frac,
                scale,
            } => random_affine(grid, rotate_deg, (translate_x_frac, translate_y_frac), scale),
        }
    }
}

/// Derives an independent per-item seed (SplitMix64 finalizer).
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn horizontal_flip(grid: &Grid<f32>) -> Grid<f32> {
    let mut out = grid.clone();
    for r in 0..out.height() {
        out.row_mut(r).reverse();
    }
    out
}

/// `x -> clamp(factor * (x - 0.5) + 0.5 + delta, 0, 1)`.
pub fn brightness_contrast(grid: &Grid<f32>, delta: f32, factor: f32) -> Grid<f32> {
    let (d, f) = (delta as f64, factor as f64);
    grid.map(|x| ((f * (x as f64 - 0.5) + 0.5 + d) as f32).clamp(0.0, 1.0))
}

/// Additive Gaussian noise followed by multiplicative Gaussian noise, drawn
/// per pixel in raster order from `rng`.
pub fn speckle<R: Rng + ?Sized>(
    grid: &Grid<f32>,
    gaussian_sigma: f32,
    mult_sigma: f32,
    rng: &mut R,
) -> Grid<f32> {
    let mut out = grid.clone();
    for v in out.as_mut_slice() {
        let g: f32 = rng.sample(StandardNormal);
        let m: f32 = rng.sample(StandardNormal);
        *v = ((*v + g * gaussian_sigma) * (1.0 + m * mult_sigma)).clamp(0.0, 1.0);
    }
    out
}

/// Normalized sampled Gaussian with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma as f64).ceil() as i64;
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / s2).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| (w / total) as f32).collect()
}

/// Mirror index without repeating the edge sample (`-1 -> 1`, `n -> n - 2`).
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as i64 {
        m = period - m;
    }
    m as usize
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(grid: &Grid<f32>, sigma: f32) -> Grid<f32> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (grid.width(), grid.height());
    if w == 0 || h == 0 {
        return grid.clone();
    }

    let mut horiz = Grid::new(w, h, 0.0f32);
    par::for_each_chunk_mut(horiz.as_mut_slice(), w, |r, out| {
        let src = grid.row(r);
        for (c, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (k, &wk) in kernel.iter().enumerate() {
                acc += wk * src[reflect(c as i64 + k as i64 - radius, w)];
            }
            *o = acc;
        }
    });

    let mut out = Grid::new(w, h, 0.0f32);
    par::for_each_chunk_mut(out.as_mut_slice(), w, |r, row| {
        for (k, &wk) in kernel.iter().enumerate() {
            let src = horiz.row(reflect(r as i64 + k as i64 - radius, h));
            for (o, &s) in row.iter_mut().zip(src) {
                *o += wk * s;
            }
        }
        for o in row.iter_mut() {
            *o = o.clamp(0.0, 1.0);
        }
    });
    out
}

#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Bilinear sample; zero outside the image.
#[inline]
fn sample_or_zero(grid: &Grid<f32>, x: f64, y: f64) -> f32 {
    let (w, h) = (grid.width(), grid.height());
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return 0.0;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let top = grid.at(y0, x0) + (grid.at(y0, x1) - grid.at(y0, x0)) * fx;
    let bot = grid.at(y1, x0) + (grid.at(y1, x1) - grid.at(y1, x0)) * fx;
    top + (bot - top) * fy
}

/// Rotation (degrees, counter-clockwise in image coordinates), translation
/// as a fraction of width/height, and isotropic scale, all about the image
/// centre. Implemented by inverse mapping with bilinear sampling; pixels
/// mapped from outside the source are 0.
pub fn random_affine(
    grid: &Grid<f32>,
    rotate_deg: f32,
    translate_frac: (f32, f32),
    scale: f32,
) -> Grid<f32> {
    let (w, h) = (grid.width(), grid.height());
    if w == 0 || h == 0 {
        return grid.clone();
    }
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let tx = translate_frac.0 as f64 * w as f64;
    let ty = translate_frac.1 as f64 * h as f64;
    let theta = (rotate_deg as f64).to_radians();
    let (sin, cos) = theta.sin_cos();
    let inv_scale = 1.0 / scale as f64;

    let mut out = Grid::new(w, h, 0.0f32);
    par::for_each_chunk_mut(out.as_mut_slice(), w, |r, row| {
        let dy = r as f64 - cy - ty;
        for (c, o) in row.iter_mut().enumerate() {
            let dx = c as f64 - cx - tx;
            // inverse rotation by -theta, then inverse scale
            let sx = (cos * dx + sin * dy) * inv_scale + cx;
            let sy = (-sin * dx + cos * dy) * inv_scale + cy;
            *o = sample_or_zero(grid, snap(sx), snap(sy)).clamp(0.0, 1.0);
        }
    });
    out
}

/// Applies each transform with its configured probability in the fixed order
/// flip, brightness/contrast, speckle, blur, affine. All randomness derives
/// from `cfg.seed`; the returned log replays to the same output.
pub fn apply_pipeline(grid: &Grid<f32>, cfg: &AugmentConfig) -> Result<(Grid<f32>, Vec<Transform>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::new();

    if rng.random::<f64>() < cfg.p_flip {
        log.push(Transform::HorizontalFlip);
    }
    if rng.random::<f64>() < cfg.p_brightness_contrast {
        let (dlo, dhi) = cfg.brightness_delta_range;
        let (flo, fhi) = cfg.contrast_factor_range;
        let delta = dlo + (dhi - dlo) * rng.random::<f32>();
        // log-uniform so that 0.8 and 1.25 are equally likely extremes
        let factor = (flo.ln() + (fhi.ln() - flo.ln()) * rng.random::<f32>()).exp();
        log.push(Transform::BrightnessContrast { delta, factor });
    }
    if rng.random::<f64>() < cfg.p_speckle {
        log.push(Transform::Speckle {
            gaussian_sigma: cfg.speckle_gaussian_sigma,
            mult_sigma: cfg.speckle_mult_sigma,
            noise_seed: rng.random(),
        });
    }
    if rng.random::<f64>() < cfg.p_blur {
        let (lo, hi) = cfg.blur_sigma_range;
        log.push(Transform::GaussianBlur {
            sigma: lo + (hi - lo) * rng.random::<f32>(),
        });
    }
    if rng.random::<f64>() < cfg.p_affine {
        let sym = |rng: &mut ChaCha8Rng, m: f32| (2.0 * rng.random::<f32>() - 1.0) * m;
        let rotate_deg = sym(&mut rng, cfg.affine_max_rotate_deg);
        let translate_x_frac = sym(&mut rng, cfg.affine_max_translate_frac);
        let translate_y_frac = sym(&mut rng, cfg.affine_max_translate_frac);
        let (lo, hi) = cfg.affine_scale_range;
        log.push(Transform::RandomAffine {
            rotate_deg,
            translate_x_frac,
            translate_y_frac,
            scale: lo + (hi - lo) * rng.random::<f32>(),
        });
    }

    Ok((replay(grid, &log), log))
}

/// Re-applies a transform log.
pub fn replay(grid: &Grid<f32>, log: &[Transform]) -> Grid<f32> {
    log.iter().fold(grid.clone(), |g, t| t.apply(&g))
}

/// One JSON object per line.
pub fn log_to_jsonl(log: &[Transform]) -> Result<String> {
    let mut out = String::new();
    for t in log {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn log_from_jsonl(text: &str) -> Result<Vec<Transform>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
