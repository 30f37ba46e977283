//! Synthetic OCT-like B-scans with analytically defined choroid boundaries.
//!
//! Lateral position `x` is in micrometres relative to the fovea column;
//! depth `y` is in micrometres from the top of the image. The upper
//! boundary is the quadratic `y_u(x)`. The lower boundary is the offset
//! curve `P(t) + T(t) n(t)`, where `n` is the unit normal of the upper boundary
//! pointing into the tissue. Thickness measured perpendicular to the upper
//! boundary is therefore exactly `T(x)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ingest::{self, BScan, MetadataSidecar, ScanMetadata, DEFAULT_LATERAL_SCALE_UM};
use crate::measure::{loci_columns, LocusThickness, MeasureConfig};
use crate::segment::{encode_pmap, ChoroidMask, ProbabilityMap};

/// Typical spectral-domain axial sampling (μm per pixel).
pub const DEFAULT_AXIAL_SCALE_UM: f64 = 3.87;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub background: f32,
    pub retina: f32,
    pub rpe: f32,
    pub choroid: f32,
    pub sclera: f32,
}

impl Default for Intensities {
    fn default() -> Self {
        Self {
            background: 0.08,
            retina: 0.5,
            rpe: 0.85,
            choroid: 0.35,
            sclera: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub meta: ScanMetadata,
    /// `(a0, a1, a2)`: upper boundary depth `a0 + a1 x + a2 x²` (μm).
    pub upper_poly: [f64; 3],
    /// `(t0, t1, t2)`: perpendicular thickness `t0 + t1 x + t2 x²` (μm).
    pub thickness_poly: [f64; 3],
    pub retina_thickness_um: f64,
    pub rpe_thickness_um: f64,
    pub intensities: Intensities,
    pub speckle_gaussian_sigma: f32,
    pub speckle_mult_sigma: f32,
    /// All-black rows at the top and bottom of the image.
    pub black_rows: (usize, usize),
    pub seed: u64,
}

fn poly(c: &[f64; 3], x: f64) -> f64 {
    c[0] + x * (c[1] + x * c[2])
}

fn poly_d(c: &[f64; 3], x: f64) -> f64 {
    c[1] + 2.0 * c[2] * x
}

impl PhantomSpec {
    /// Flat band of constant thickness across a 768 x 768 scan.
    pub fn flat(thickness_um: f64, top_um: f64, seed: u64) -> Self {
        Self {
            meta: ScanMetadata::new(768, 768, DEFAULT_LATERAL_SCALE_UM, DEFAULT_AXIAL_SCALE_UM)
                .with_fovea(384),
            upper_poly: [top_um, 0.0, 0.0],
            thickness_poly: [thickness_um, 0.0, 0.0],
            retina_thickness_um: 250.0,
            rpe_thickness_um: 30.0,
            intensities: Intensities::default(),
            speckle_gaussian_sigma: 0.03,
            speckle_mult_sigma: 0.15,
            black_rows: (12, 8),
            seed,
        }
    }

    /// Random curved phantom with plausible anatomy, deterministic in `seed`.
    pub fn randomized(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
        let fovea = u(300.0, 468.0).round() as usize;
        let upper_poly = [u(1150.0, 1450.0), u(-0.03, 0.03), u(-1.5e-5, 1.5e-5)];
        let thickness_poly = [u(180.0, 420.0), u(-0.01, 0.01), u(-3e-6, 3e-6)];
        let mut spec = Self::flat(0.0, 0.0, seed);
        spec.meta.fovea_col = Some(fovea);
        spec.upper_poly = upper_poly;
        spec.thickness_poly = thickness_poly;
        spec
    }

    pub fn fovea_col(&self) -> Result<usize> {
        self.meta
            .fovea_col
            .ok_or_else(|| Error::InvalidPhantom("fovea_col is required".into()))
    }

    /// Lateral position (μm from the fovea) of a pixel centre.
    pub fn col_to_x(&self, col: f64) -> f64 {
        (col - self.meta.fovea_col.unwrap_or(0) as f64) * self.meta.lateral_scale
    }

    pub fn upper(&self, x: f64) -> f64 {
        poly(&self.upper_poly, x)
    }

    pub fn upper_slope(&self, x: f64) -> f64 {
        poly_d(&self.upper_poly, x)
    }

    pub fn thickness(&self, x: f64) -> f64 {
        poly(&self.thickness_poly, x)
    }

    /// Point of the lower boundary generated from upper-boundary parameter `t`.
    pub fn lower_point(&self, t: f64) -> (f64, f64) {
        let s = self.upper_slope(t);
        let norm = (1.0 + s * s).sqrt();
        let th = self.thickness(t);
        (t - th * s / norm, self.upper(t) + th / norm)
    }

    /// Depth of the lower boundary at lateral position `x`.
    pub fn lower(&self, x: f64) -> f64 {
        // solve lower_point(t).0 == x; the map is close to the identity
        let mut t = x;
        for _ in 0..50 {
            let f = self.lower_point(t).0 - x;
            if f.abs() < 1e-10 {
                break;
            }
            let h = 1e-3;
            let df = (self.lower_point(t + h).0 - self.lower_point(t - h).0) / (2.0 * h);
            t -= f / df;
        }
        self.lower_point(t).1
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        let fovea = self.fovea_col()?;
        let _ = fovea;
        let t0 = self.thickness_poly[0];
        if !(100.0..=500.0).contains(&t0) {
            return Err(Error::InvalidPhantom(format!(
                "t0 = {t0} outside the plausible range [100, 500] μm"
            )));
        }
        let (w, h) = (self.meta.width_px, self.meta.height_px);
        let (top, bottom) = self.black_rows;
        if top + bottom >= h {
            return Err(Error::InvalidPhantom("black rows cover the image".into()));
        }
        let ax = self.meta.axial_scale;
        let min_y = top as f64 * ax;
        let max_y = (h - bottom - 1) as f64 * ax;
        // half-column sampling catches extrema between pixel centres
        for i in 0..=2 * (w - 1) {
            let x = self.col_to_x(i as f64 / 2.0);
            let th = self.thickness(x);
            if !(th > 0.0) {
                return Err(Error::InvalidPhantom(format!("thickness {th:.1} ≤ 0 at x = {x:.0} μm")));
            }
            let y_top = self.upper(x) - self.retina_thickness_um;
            let y_low = self.lower(x);
            if y_top < min_y || y_low > max_y {
                return Err(Error::InvalidPhantom(format!(
                    "boundaries exit the image at x = {x:.0} μm"
                )));
            }
            // offset curve must advance monotonically (no folding)
            let dx = self.lower_point(x + 0.5).0 - self.lower_point(x - 0.5).0;
            if !(dx > 0.0) {
                return Err(Error::InvalidPhantom("lower boundary folds over itself".into()));
            }
        }
        if !(self.speckle_gaussian_sigma >= 0.0 && self.speckle_mult_sigma >= 0.0) {
            return Err(Error::InvalidPhantom("speckle sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// Rendered scan with native-resolution ground truth.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub scan: BScan,
    pub mask: ChoroidMask,
    pub pmap: ProbabilityMap,
}

/// Rasterizes the band and renders layered, speckled intensities. A pixel is
/// choroid when its centre depth lies within `[upper(x), lower(x)]`.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (w, h) = (spec.meta.width_px, spec.meta.height_px);
    let ax = spec.meta.axial_scale;
    let cols: Vec<(f64, f64)> = (0..w)
        .map(|c| {
            let x = spec.col_to_x(c as f64);
            (spec.upper(x), spec.lower(x))
        })
        .collect();
    let lv = spec.intensities;
    let mask = Grid::from_fn(w, h, |r, c| {
        let y = r as f64 * ax;
        let (yu, yl) = cols[c];
        yu <= y && y <= yl
    });
    let clean = Grid::from_fn(w, h, |r, c| {
        let y = r as f64 * ax;
        let (yu, yl) = cols[c];
        if y < yu - spec.retina_thickness_um {
            lv.background
        } else if y < yu - spec.rpe_thickness_um {
            lv.retina
        } else if y < yu {
            lv.rpe
        } else if y <= yl {
            lv.choroid
        } else {
            lv.sclera
        }
    });
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pixels = augment::speckle(
        &clean,
        spec.speckle_gaussian_sigma,
        spec.speckle_mult_sigma,
        &mut rng,
    );
    let (top, bottom) = spec.black_rows;
    for r in (0..top).chain(h - bottom..h) {
        pixels.row_mut(r).fill(0.0);
    }
    let mask = ChoroidMask::new(mask);
    Ok(Phantom {
        scan: BScan::new(pixels, spec.meta.clone())?,
        pmap: ProbabilityMap::from_mask(&mask),
        mask,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMeasurements {
    pub fovea_col: usize,
    pub thickness: Vec<LocusThickness>,
    pub mean_thickness_um: f64,
    /// `∫ (lower - upper) dx` over the ROI: the column-integration quantity.
    pub area_vertical_mm2: f64,
    /// `∫ T(x) sqrt(1 + y_u'(x)²) dx` over the ROI: band area measured along
    /// the upper boundary.
    pub area_perpendicular_mm2: f64,
    pub roi_um: (f64, f64),
}

/// Composite Simpson rule with `intervals` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(2) + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Exact measurements for the phantom, using the same loci rounding and
/// ROI as the measurement module. The ROI is clipped to the image extent.
pub fn analytic_measurements_with(
    spec: &PhantomSpec,
    cfg: &MeasureConfig,
    intervals: usize,
) -> Result<AnalyticMeasurements> {
    spec.validate()?;
    let fovea = spec.fovea_col()?;
    let w = spec.meta.width_px;
    let cols = loci_columns(fovea, &spec.meta, cfg);
    if let Some(&c) = cols.iter().find(|&&c| c < 0 || c >= w as i64) {
        return Err(Error::InvalidPhantom(format!("locus column {c} outside the phantom")));
    }
    let thickness: Vec<LocusThickness> = cfg
        .thickness_offsets
        .iter()
        .zip(&cols)
        .map(|(&offset_um, &c)| LocusThickness {
            offset_um,
            col: c as usize,
            thickness_um: spec.thickness(spec.col_to_x(c as f64)),
        })
        .collect();
    let mean_thickness_um =
        thickness.iter().map(|l| l.thickness_um).sum::<f64>() / thickness.len() as f64;

    let lo = (-cfg.area_halfwidth).max(spec.col_to_x(-0.5));
    let hi = cfg.area_halfwidth.min(spec.col_to_x(w as f64 - 0.5));
    let area_vertical_mm2 = simpson(|x| spec.lower(x) - spec.upper(x), lo, hi, intervals) / 1e6;
    let area_perpendicular_mm2 = simpson(
        |x| {
            let s = spec.upper_slope(x);
            spec.thickness(x) * (1.0 + s * s).sqrt()
        },
        lo,
        hi,
        intervals,
    ) / 1e6;
    Ok(AnalyticMeasurements {
        fovea_col: fovea,
        thickness,
        mean_thickness_um,
        area_vertical_mm2,
        area_perpendicular_mm2,
        roi_um: (lo, hi),
    })
}

pub fn analytic_measurements(spec: &PhantomSpec, cfg: &MeasureConfig) -> Result<AnalyticMeasurements> {
    analytic_measurements_with(spec, cfg, 10_000)
}

#[derive(Serialize, Deserialize)]
pub struct TruthFile {
    pub spec: PhantomSpec,
    pub analytic: AnalyticMeasurements,
}

/// Encoded corpus files for one phantom: `<stem>.png` (16-bit image),
/// `<stem>.json` (metadata sidecar), `<stem>.truth.pmap` and
/// `<stem>.truth.json` (spec plus analytic measurements).
pub fn corpus_item_files(stem: &str, spec: &PhantomSpec, cfg: &MeasureConfig) -> Result<Vec<(String, Vec<u8>)>> {
    let phantom = generate(spec)?;
    let analytic = analytic_measurements(spec, cfg)?;
    let sidecar = serde_json::to_string_pretty(&MetadataSidecar::from_metadata(&spec.meta))? + "\n";
    let truth = serde_json::to_string_pretty(&TruthFile {
        spec: spec.clone(),
        analytic,
    })? + "\n";
    Ok(vec![
        (format!("{stem}.png"), ingest::encode_png16(&phantom.scan.pixels)?),
        (format!("{stem}.json"), sidecar.into_bytes()),
        (format!("{stem}.truth.pmap"), encode_pmap(phantom.pmap.grid())),
        (format!("{stem}.truth.json"), truth.into_bytes()),
    ])
}

pub fn write_corpus_item(dir: &Path, stem: &str, spec: &PhantomSpec, cfg: &MeasureConfig) -> Result<()> {
    for (name, bytes) in corpus_item_files(stem, spec, cfg)? {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_spec_is_rectangle() {
        let spec = PhantomSpec::flat(300.0, 1200.0, 1);
        let p = generate(&spec).unwrap();
        let first = (0..768).find(|&r| p.mask.grid().at(r, 0)).unwrap();
        let last = (0..768).rev().find(|&r| p.mask.grid().at(r, 0)).unwrap();
        for c in 0..768 {
            for r in 0..768 {
                assert_eq!(p.mask.grid().at(r, c), (first..=last).contains(&r));
            }
        }
        assert_eq!(first, (1200.0f64 / DEFAULT_AXIAL_SCALE_UM).ceil() as usize);
        assert_eq!(last, (1500.0f64 / DEFAULT_AXIAL_SCALE_UM).floor() as usize);
    }

    #[test]
    fn flat_analytic_values() {
        let spec = PhantomSpec::flat(300.0, 1200.0, 1);
        let a = analytic_measurements(&spec, &MeasureConfig::default()).unwrap();
        assert!(a.thickness.iter().all(|l| l.thickness_um == 300.0));
        assert!((a.area_vertical_mm2 - 1.8).abs() < 1e-9);
        assert!((a.area_perpendicular_mm2 - 1.8).abs() < 1e-9);
    }

    #[test]
    fn linear_profile_loci_exact() {
        let mut spec = PhantomSpec::flat(300.0, 1200.0, 1);
        spec.thickness_poly = [300.0, 0.01, 0.0];
        let a = analytic_measurements(&spec, &MeasureConfig::default()).unwrap();
        for l in &a.thickness {
            let x = (l.col as f64 - 384.0) * spec.meta.lateral_scale;
            assert_eq!(l.thickness_um, 300.0 + 0.01 * x);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = PhantomSpec::randomized(5);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.scan, b.scan);
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(generate(&other).unwrap().scan.pixels, a.scan.pixels);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = PhantomSpec::flat(50.0, 1200.0, 0);
        assert!(s.validate().is_err());
        s = PhantomSpec::flat(300.0, 2800.0, 0);
        assert!(matches!(s.validate(), Err(Error::InvalidPhantom(_))));
        s = PhantomSpec::flat(300.0, 1200.0, 0);
        s.meta.fovea_col = None;
        assert!(s.validate().is_err());
    }

    #[test]
    fn lower_inverts_offset_curve() {
        let spec = PhantomSpec::randomized(11);
        for t in [-3000.0, -100.0, 0.0, 2500.0] {
            let (x, y) = spec.lower_point(t);
            assert!((spec.lower(x) - y).abs() < 1e-8);
        }
    }

    #[test]
    fn simpson_integrates_cubic_exactly() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 4);
        assert!((v - (4.0 - 0.25 - 3.0 + 3.0)).abs() < 1e-12);
    }
}
