//! Perpendicular choroid thickness at fovea-anchored loci and choroid area
//! over a fovea-centred region of interest.
//!
//! Geometry is done in physical micrometres (`x = col * lateral_scale`,
//! `y = row * axial_scale`). OCT pixels are strongly anisotropic, so a normal
//! constructed in pixel space would not be perpendicular to the tissue.

use serde::{Deserialize, Serialize};

use crate::boundary::{tangent_at, BoundaryPair, DEFAULT_SMOOTHING_WINDOW, DEFAULT_TANGENT_HALF_WINDOW};
use crate::error::{Error, Result};
use crate::ingest::ScanMetadata;
use crate::segment::ChoroidMask;

/// Bisection stops once the bracketing interval is narrower than this (μm).
pub const RAY_TOLERANCE_UM: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaMode {
    /// Integrate `lower - upper` over the ROI columns.
    #[default]
    Integrate,
    /// Count positive mask pixels in the ROI columns.
    PixelCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureConfig {
    pub thickness_offsets: Vec<f64>,
    pub area_halfwidth: f64,
    pub ray_step: f64,
    pub smoothing_window: usize,
    pub tangent_half_window: usize,
    pub area_mode: AreaMode,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            thickness_offsets: vec![-2000.0, 0.0, 2000.0],
            area_halfwidth: 3000.0,
            ray_step: 1.0,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
            tangent_half_window: DEFAULT_TANGENT_HALF_WINDOW,
            area_mode: AreaMode::Integrate,
        }
    }
}

impl MeasureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thickness_offsets.is_empty() || self.thickness_offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidConfig("thickness offsets must be finite and non-empty".into()));
        }
        if !(self.area_halfwidth > 0.0) {
            return Err(Error::InvalidConfig("area_halfwidth must be positive".into()));
        }
        if !(self.ray_step > 0.0) {
            return Err(Error::InvalidConfig("ray_step must be positive".into()));
        }
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return Err(Error::InvalidConfig("smoothing_window must be odd".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureWarning {
    /// Part of the area ROI is not covered by segmented columns.
    RoiTruncated { missing_um: f64 },
    /// Columns inside the span were interpolated across.
    InterpolatedColumns { count: usize },
}

impl std::fmt::Display for MeasureWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeasureWarning::RoiTruncated { missing_um } => {
                write!(f, "roi_truncated({missing_um:.1}um)")
            }
            MeasureWarning::InterpolatedColumns { count } => {
                write!(f, "interpolated_columns({count})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocusThickness {
    pub offset_um: f64,
    pub col: usize,
    pub thickness_um: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThicknessProfile {
    pub loci: Vec<LocusThickness>,
    pub mean_um: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaResult {
    pub area_mm2: f64,
    /// Inclusive image columns overlapping the ROI.
    pub roi_cols: (usize, usize),
    pub warnings: Vec<MeasureWarning>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    pub fovea_col: usize,
    pub thickness: ThicknessProfile,
    pub area_mm2: f64,
    pub roi_cols: (usize, usize),
    pub warnings: Vec<MeasureWarning>,
}

impl Measurements {
    pub fn loci_cols(&self) -> Vec<usize> {
        self.thickness.loci.iter().map(|l| l.col).collect()
    }
}

/// Lower boundary as a piecewise-linear function of physical x.
fn lower_at_x(bnd: &BoundaryPair, x: f64, lat: f64, ax: f64) -> Option<f64> {
    let u = x / lat - bnd.col_start as f64;
    let last = (bnd.len() - 1) as f64;
    if !(0.0..=last).contains(&u) {
        return None;
    }
    let i = (u.floor() as usize).min(bnd.len() - 1);
    let j = (i + 1).min(bnd.len() - 1);
    let t = u - i as f64;
    Some((bnd.lower[i] + t * (bnd.lower[j] - bnd.lower[i])) * ax)
}

/// Length of the normal segment from the upper boundary at `locus_col` to
/// its first intersection with the lower boundary. `bnd` should already be
/// smoothed. The ray is marched in `cfg.ray_step` increments and the
/// crossing refined by bisection to [`RAY_TOLERANCE_UM`].
pub fn thickness_at(
    bnd: &BoundaryPair,
    locus_col: usize,
    meta: &ScanMetadata,
    cfg: &MeasureConfig,
) -> Result<f64> {
    let (lat, ax) = (meta.lateral_scale, meta.axial_scale);
    let (tx, ty) = tangent_at(bnd, locus_col, meta, cfg.tangent_half_window)?;
    // rotate the tangent a quarter turn toward increasing depth
    let (nx, ny) = (-ty, tx);
    let x0 = locus_col as f64 * lat;
    let y0 = bnd.upper_at(locus_col)? * ax;

    let gap = |s: f64| -> Option<f64> {
        lower_at_x(bnd, x0 + s * nx, lat, ax).map(|l| y0 + s * ny - l)
    };
    let exits = || Error::RoiExceedsSegmentation { col: locus_col };

    let g0 = gap(0.0).ok_or_else(exits)?;
    if g0 >= 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = cfg.ray_step;
    loop {
        let g = gap(hi).ok_or_else(exits)?;
        if g >= 0.0 {
            break;
        }
        lo = hi;
        hi += cfg.ray_step;
    }
    while hi - lo > RAY_TOLERANCE_UM {
        let mid = 0.5 * (lo + hi);
        match gap(mid) {
            Some(g) if g >= 0.0 => hi = mid,
            Some(_) => lo = mid,
            None => return Err(exits()),
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Loci columns: `fovea_col + round(offset / lateral_scale)`.
pub fn loci_columns(fovea_col: usize, meta: &ScanMetadata, cfg: &MeasureConfig) -> Vec<i64> {
    cfg.thickness_offsets
        .iter()
        .map(|o| fovea_col as i64 + (o / meta.lateral_scale).round() as i64)
        .collect()
}

/// Thickness at every configured locus and their arithmetic mean. Any locus
/// outside the span fails the whole measurement.
pub fn mean_thickness(
    bnd: &BoundaryPair,
    fovea_col: usize,
    meta: &ScanMetadata,
    cfg: &MeasureConfig,
) -> Result<ThicknessProfile> {
    cfg.validate()?;
    let cols = loci_columns(fovea_col, meta, cfg);
    let outside: Vec<i64> = cols.iter().copied().filter(|&c| !bnd.contains(c)).collect();
    if !outside.is_empty() {
        return Err(Error::LociOutsideSpan(outside));
    }
    let loci = cfg
        .thickness_offsets
        .iter()
        .zip(&cols)
        .map(|(&offset_um, &col)| {
            let col = col as usize;
            Ok(LocusThickness {
                offset_um,
                col,
                thickness_um: thickness_at(bnd, col, meta, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_um = loci.iter().map(|l| l.thickness_um).sum::<f64>() / loci.len() as f64;
    Ok(ThicknessProfile { loci, mean_um })
}

/// Per-column overlap (μm) of pixel footprints `[(c - 1/2) lat, (c + 1/2) lat]`
/// with the ROI `[x_f - h, x_f + h]`.
fn roi_weights(
    fovea_col: usize,
    meta: &ScanMetadata,
    halfwidth: f64,
) -> Result<(usize, usize, Vec<f64>)> {
    if fovea_col >= meta.width_px {
        return Err(Error::FoveaOutsideImage {
            fovea_col: fovea_col as i64,
            width: meta.width_px,
        });
    }
    let lat = meta.lateral_scale;
    let xf = fovea_col as f64 * lat;
    let (a, b) = (xf - halfwidth, xf + halfwidth);
    let first = ((a / lat - 0.5).ceil().max(0.0) as usize).min(meta.width_px - 1);
    let last = ((b / lat + 0.5).floor().max(0.0) as usize).min(meta.width_px - 1);
    let weights = (first..=last)
        .map(|c| {
            let lo = (c as f64 - 0.5) * lat;
            let hi = (c as f64 + 0.5) * lat;
            (hi.min(b) - lo.max(a)).max(0.0)
        })
        .collect();
    Ok((first, last, weights))
}

fn area_from_extents(
    fovea_col: usize,
    meta: &ScanMetadata,
    cfg: &MeasureConfig,
    extent_px: impl Fn(usize) -> Option<f64>,
) -> Result<AreaResult> {
    cfg.validate()?;
    let (first, last, weights) = roi_weights(fovea_col, meta, cfg.area_halfwidth)?;
    let mut area_um2 = 0.0;
    let mut covered = 0.0;
    for (c, w) in (first..=last).zip(&weights) {
        if let Some(e) = extent_px(c) {
            area_um2 += e.max(0.0) * meta.axial_scale * w;
            covered += w;
        }
    }
    let missing = 2.0 * cfg.area_halfwidth - covered;
    let mut warnings = Vec::new();
    if missing > 1e-6 {
        warnings.push(MeasureWarning::RoiTruncated { missing_um: missing });
    }
    Ok(AreaResult {
        area_mm2: area_um2 / 1e6,
        roi_cols: (first, last),
        warnings,
    })
}

/// `sum over ROI columns of (lower - upper) * axial * overlap`, in mm².
/// Columns outside the span contribute nothing and raise a truncation
/// warning.
pub fn choroid_area(
    bnd: &BoundaryPair,
    fovea_col: usize,
    meta: &ScanMetadata,
    cfg: &MeasureConfig,
) -> Result<AreaResult> {
    area_from_extents(fovea_col, meta, cfg, |c| {
        bnd.contains(c as i64)
            .then(|| bnd.lower[c - bnd.col_start] - bnd.upper[c - bnd.col_start])
    })
}

/// Pixel-counting variant: positive pixels per ROI column times the pixel
/// area, with the same fractional edge weights as [`choroid_area`].
pub fn choroid_area_pixels(
    mask: &ChoroidMask,
    fovea_col: usize,
    meta: &ScanMetadata,
    cfg: &MeasureConfig,
) -> Result<AreaResult> {
    let g = mask.grid();
    let mut counts = vec![0usize; g.width()];
    for r in 0..g.height() {
        for (c, &v) in g.row(r).iter().enumerate() {
            counts[c] += v as usize;
        }
    }
    let start = counts.iter().position(|&n| n > 0);
    let end = counts.iter().rposition(|&n| n > 0);
    area_from_extents(fovea_col, meta, cfg, |c| match (start, end) {
        (Some(s), Some(e)) if (s..=e).contains(&c) && c < counts.len() => Some(counts[c] as f64),
        _ => None,
    })
}

/// Thickness profile and area from a raw boundary pair; smooths first.
/// `mask` is needed only for [`AreaMode::PixelCount`].
pub fn measure_boundaries(
    raw: &BoundaryPair,
    mask: Option<&ChoroidMask>,
    fovea_col: usize,
    meta: &ScanMetadata,
    cfg: &MeasureConfig,
) -> Result<Measurements> {
    cfg.validate()?;
    let bnd = raw.smoothed(cfg.smoothing_window)?;
    let thickness = mean_thickness(&bnd, fovea_col, meta, cfg)?;
    let area = match (cfg.area_mode, mask) {
        (AreaMode::Integrate, _) => choroid_area(&bnd, fovea_col, meta, cfg)?,
        (AreaMode::PixelCount, Some(m)) => choroid_area_pixels(m, fovea_col, meta, cfg)?,
        (AreaMode::PixelCount, None) => {
            return Err(Error::InvalidConfig("pixel-count area needs the mask".into()))
        }
    };
    let mut warnings = area.warnings;
    let gaps = raw.gap_count();
    if gaps > 0 {
        warnings.push(MeasureWarning::InterpolatedColumns { count: gaps });
    }
    Ok(Measurements {
        fovea_col,
        thickness,
        area_mm2: area.area_mm2,
        roi_cols: area.roi_cols,
        warnings,
    })
}
