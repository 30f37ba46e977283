//! B-scan loading and model preprocessing: black-space cropping, bilinear
//! resizing to model resolution, standardization, and the inverse mapping
//! of model-resolution outputs back onto the native pixel grid.

use std::path::Path;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::par;

/// Lateral scale of a 768-pixel B-scan spanning 8.7 mm (30° field).
pub const DEFAULT_LATERAL_SCALE_UM: f64 = 8700.0 / 768.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eye {
    Right,
    Left,
    #[default]
    Unknown,
}

/// Physical scan geometry. Scales are micrometres per pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanMetadata {
    pub lateral_scale: f64,
    pub axial_scale: f64,
    pub width_px: usize,
    pub height_px: usize,
    pub edi: bool,
    pub eye: Eye,
    pub fovea_col: Option<usize>,
}

impl ScanMetadata {
    pub fn new(width_px: usize, height_px: usize, lateral_scale: f64, axial_scale: f64) -> Self {
        Self {
            lateral_scale,
            axial_scale,
            width_px,
            height_px,
            edi: true,
            eye: Eye::Unknown,
            fovea_col: None,
        }
    }

    pub fn with_fovea(mut self, col: usize) -> Self {
        self.fovea_col = Some(col);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lateral_scale.is_finite() && self.lateral_scale > 0.0) {
            return Err(Error::InvalidMetadata(format!(
                "lateral scale must be positive, got {}",
                self.lateral_scale
            )));
        }
        if !(self.axial_scale.is_finite() && self.axial_scale > 0.0) {
            return Err(Error::InvalidMetadata(format!(
                "axial scale must be positive, got {}",
                self.axial_scale
            )));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::InvalidMetadata("image dimensions must be positive".into()));
        }
        if let Some(f) = self.fovea_col {
            if f >= self.width_px {
                return Err(Error::InvalidMetadata(format!(
                    "fovea column {f} outside width {}",
                    self.width_px
                )));
            }
        }
        Ok(())
    }
}

/// JSON sidecar stored next to each image. Image dimensions come from the
/// image itself; the axial scale has no default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetadataSidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lateral_scale_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axial_scale_um: Option<f64>,
    #[serde(default = "default_edi")]
    pub edi: bool,
    #[serde(default)]
    pub eye: Eye,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fovea_col: Option<usize>,
}

fn default_edi() -> bool {
    true
}

impl MetadataSidecar {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn from_metadata(meta: &ScanMetadata) -> Self {
        Self {
            lateral_scale_um: Some(meta.lateral_scale),
            axial_scale_um: Some(meta.axial_scale),
            edi: meta.edi,
            eye: meta.eye,
            fovea_col: meta.fovea_col,
        }
    }

    /// Resolves against image dimensions. A missing lateral scale falls back
    /// to [`DEFAULT_LATERAL_SCALE_UM`]; a missing axial scale is an error.
    pub fn into_metadata(self, width_px: usize, height_px: usize) -> Result<ScanMetadata> {
        let axial_scale = self.axial_scale_um.ok_or_else(|| {
            Error::InvalidMetadata("axial_scale_um is required (no default exists)".into())
        })?;
        let meta = ScanMetadata {
            lateral_scale: self.lateral_scale_um.unwrap_or(DEFAULT_LATERAL_SCALE_UM),
            axial_scale,
            width_px,
            height_px,
            edi: self.edi,
            eye: self.eye,
            fovea_col: self.fovea_col,
        };
        meta.validate()?;
        Ok(meta)
    }
}

/// Grayscale B-scan, intensities normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BScan {
    pub pixels: Grid<f32>,
    pub meta: ScanMetadata,
}

impl BScan {
    pub fn new(pixels: Grid<f32>, meta: ScanMetadata) -> Result<Self> {
        meta.validate()?;
        if pixels.width() != meta.width_px || pixels.height() != meta.height_px {
            return Err(Error::DimensionMismatch {
                expected_w: meta.width_px,
                expected_h: meta.height_px,
                found_w: pixels.width(),
                found_h: pixels.height(),
            });
        }
        if let Some(v) = pixels
            .as_slice()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidMetadata(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self { pixels, meta })
    }
}

/// Rows removed by [`crop_black_space`], enough to invert the crop exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRecord {
    pub top_rows_removed: usize,
    pub bottom_rows_removed: usize,
    pub native_height: usize,
}

impl CropRecord {
    pub fn identity(native_height: usize) -> Self {
        Self {
            top_rows_removed: 0,
            bottom_rows_removed: 0,
            native_height,
        }
    }

    pub fn cropped_height(&self) -> usize {
        self.native_height - self.top_rows_removed - self.bottom_rows_removed
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_rows_removed + self.bottom_rows_removed >= self.native_height {
            return Err(Error::InvalidCrop(format!(
                "{} + {} rows removed from a {}-row image",
                self.top_rows_removed, self.bottom_rows_removed, self.native_height
            )));
        }
        Ok(())
    }

    pub fn to_native_row(&self, cropped_row: usize) -> usize {
        cropped_row + self.top_rows_removed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub model_height: usize,
    pub model_width: usize,
    pub standardize_shift: f32,
    pub standardize_scale: f32,
    /// Row maxima below this are treated as black padding.
    pub black_threshold: f32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            model_height: 544,
            model_width: 768,
            standardize_shift: 0.1,
            standardize_scale: 0.2,
            black_threshold: 0.01,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_height == 0 || self.model_width == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if self.standardize_scale == 0.0 || !self.standardize_scale.is_finite() {
            return Err(Error::InvalidConfig("standardize_scale must be nonzero".into()));
        }
        Ok(())
    }
}

/// Reads an 8/16-bit grayscale PNG or PGM and normalizes by the bit-depth
/// maximum. Dimensions must match `meta`.
pub fn load_bscan(path: &Path, meta: ScanMetadata) -> Result<BScan> {
    let pixels = read_grayscale(path)?;
    BScan::new(pixels, meta)
}

/// Reads a grayscale image, normalized to `[0, 1]`.
pub fn read_grayscale(path: &Path) -> Result<Grid<f32>> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / u8::MAX as f32)
            .collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| (v as f64 / u16::MAX as f64) as f32)
            .collect(),
        other => {
            return Err(Error::NotGrayscale {
                path: path.to_path_buf(),
                found: format!("{:?}", other.color()),
            })
        }
    };
    Grid::from_vec(w, h, data)
}

fn encode_png<P>(buf: image::ImageBuffer<P, Vec<P::Subpixel>>) -> Result<Vec<u8>>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
{
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Shape(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}

/// 16-bit grayscale PNG bytes for intensities in `[0, 1]`.
pub fn encode_png16(grid: &Grid<f32>) -> Result<Vec<u8>> {
    let raw: Vec<u16> = grid
        .as_slice()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) as f64 * u16::MAX as f64).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        grid.width() as u32,
        grid.height() as u32,
        raw,
    )
    .ok_or_else(|| Error::Shape("buffer does not match dimensions".into()))?;
    encode_png(buf)
}

/// 8-bit PNG bytes for a binary mask (0 / 255).
pub fn encode_mask_png(mask: &Grid<bool>) -> Result<Vec<u8>> {
    let raw: Vec<u8> = mask.as_slice().iter().map(|&v| if v { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .ok_or_else(|| Error::Shape("buffer does not match dimensions".into()))?;
    encode_png(buf)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes intensities in `[0, 1]` as a 16-bit grayscale PNG.
pub fn write_png16(path: &Path, grid: &Grid<f32>) -> Result<()> {
    write_bytes(path, &encode_png16(grid)?)
}

/// Writes a binary mask as an 8-bit PNG (0 / 255).
pub fn write_mask_png(path: &Path, mask: &Grid<bool>) -> Result<()> {
    write_bytes(path, &encode_mask_png(mask)?)
}

/// Removes the maximal runs of rows at the top and bottom whose maximum
/// intensity is below `cfg.black_threshold`. Interior dark rows are kept.
pub fn crop_black_space(scan: &BScan, cfg: &PreprocessConfig) -> Result<(BScan, CropRecord)> {
    let h = scan.pixels.height();
    let is_black = |r: usize| {
        scan.pixels
            .row(r)
            .iter()
            .all(|&v| v < cfg.black_threshold)
    };
    let top = (0..h).take_while(|&r| is_black(r)).count();
    if top == h {
        return Err(Error::AllBlack);
    }
    let bottom = (0..h).rev().take_while(|&r| is_black(r)).count();
    let record = CropRecord {
        top_rows_removed: top,
        bottom_rows_removed: bottom,
        native_height: h,
    };
    let pixels = scan.pixels.rows_range(top, h - bottom);
    let mut meta = scan.meta.clone();
    meta.height_px = pixels.height();
    Ok((BScan { pixels, meta }, record))
}

/// Source coordinate of output index `i` under corner-aligned sampling.
#[inline]
pub(crate) fn corner_aligned(i: usize, n_out: usize, n_in: usize) -> f64 {
    if n_out <= 1 || n_in <= 1 {
        0.0
    } else {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

/// Per-output-index `(lo, hi, frac)` interpolation taps.
fn linear_taps(n_out: usize, n_in: usize) -> Vec<(usize, usize, f32)> {
    (0..n_out)
        .map(|i| {
            let s = corner_aligned(i, n_out, n_in);
            let lo = (s.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, (s - lo as f64) as f32)
        })
        .collect()
}

/// Corner-aligned bilinear resampling of a single plane.
pub fn resize_bilinear(src: &Grid<f32>, out_h: usize, out_w: usize) -> Grid<f32> {
    let mut out = Grid::new(out_w, out_h, 0.0f32);
    if out_h == 0 || out_w == 0 {
        return out;
    }
    resize_plane_into(
        src.as_slice(),
        src.height(),
        src.width(),
        out.as_mut_slice(),
        out_h,
        out_w,
    );
    out
}

pub(crate) fn resize_plane_into(
    src: &[f32],
    in_h: usize,
    in_w: usize,
    dst: &mut [f32],
    out_h: usize,
    out_w: usize,
) {
    let xs = linear_taps(out_w, in_w);
    let ys = linear_taps(out_h, in_h);
    par::for_each_chunk_mut(dst, out_w, |r, row| {
        let (y0, y1, fy) = ys[r];
        let a = &src[y0 * in_w..(y0 + 1) * in_w];
        let b = &src[y1 * in_w..(y1 + 1) * in_w];
        for (o, &(x0, x1, fx)) in row.iter_mut().zip(&xs) {
            let top = a[x0] + (a[x1] - a[x0]) * fx;
            let bot = b[x0] + (b[x1] - b[x0]) * fx;
            *o = top + (bot - top) * fy;
        }
    });
}

/// Corner-aligned nearest-neighbour resampling.
pub fn resize_nearest<T: Copy + Default>(src: &Grid<T>, out_h: usize, out_w: usize) -> Grid<T> {
    let near = |i: usize, n_out: usize, n_in: usize| {
        (corner_aligned(i, n_out, n_in).round() as usize).min(n_in.saturating_sub(1))
    };
    let cols: Vec<usize> = (0..out_w).map(|c| near(c, out_w, src.width())).collect();
    Grid::from_fn(out_w, out_h, |r, c| {
        src.at(near(r, out_h, src.height()), cols[c])
    })
}

/// Bilinear resize of a cropped scan to model resolution.
pub fn resize_to_model(scan: &BScan, cfg: &PreprocessConfig) -> Grid<f32> {
    let mut out = resize_bilinear(&scan.pixels, cfg.model_height, cfg.model_width);
    for v in out.as_mut_slice() {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// `x -> (x - shift) / scale`, evaluated in f64.
pub fn standardize(grid: &Grid<f32>, cfg: &PreprocessConfig) -> Grid<f32> {
    let (shift, scale) = (cfg.standardize_shift as f64, cfg.standardize_scale as f64);
    grid.map(|x| ((x as f64 - shift) / scale) as f32)
}

/// Inverse of [`standardize`].
pub fn destandardize(grid: &Grid<f32>, cfg: &PreprocessConfig) -> Grid<f32> {
    let (shift, scale) = (cfg.standardize_shift as f64, cfg.standardize_scale as f64);
    grid.map(|y| (y as f64 * scale + shift) as f32)
}

/// Model-ready input plus the crop needed to map outputs back.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub input: Grid<f32>,
    pub crop: CropRecord,
    pub cropped_width: usize,
}

/// crop, resize, standardize.
pub fn preprocess(scan: &BScan, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    cfg.validate()?;
    let (cropped, crop) = crop_black_space(scan, cfg)?;
    let resized = resize_to_model(&cropped, cfg);
    Ok(Preprocessed {
        input: standardize(&resized, cfg),
        crop,
        cropped_width: cropped.pixels.width(),
    })
}

fn check_crop(crop: &CropRecord, meta: &ScanMetadata) -> Result<()> {
    crop.validate()?;
    if crop.native_height != meta.height_px {
        return Err(Error::InvalidCrop(format!(
            "record native height {} does not match scan height {}",
            crop.native_height, meta.height_px
        )));
    }
    Ok(())
}

fn repad<T: Copy>(cropped: Grid<T>, crop: &CropRecord, fill: T) -> Grid<T> {
    let w = cropped.width();
    let mut data = Vec::with_capacity(w * crop.native_height);
    data.resize(w * crop.top_rows_removed, fill);
    data.extend_from_slice(cropped.as_slice());
    data.resize(w * crop.native_height, fill);
    Grid::from_vec(w, crop.native_height, data).expect("repadded size is consistent")
}

/// Nearest-neighbour upsampling of a model-resolution mask to the cropped
/// native size, re-padded with empty rows.
pub fn map_mask_to_native(
    mask: &Grid<bool>,
    crop: &CropRecord,
    meta: &ScanMetadata,
) -> Result<Grid<bool>> {
    check_crop(crop, meta)?;
    let up = resize_nearest(mask, crop.cropped_height(), meta.width_px);
    Ok(repad(up, crop, false))
}

/// Bilinear upsampling of a model-resolution probability map to the cropped
/// native size, re-padded with zero probability.
pub fn map_probability_to_native(
    pmap: &Grid<f32>,
    crop: &CropRecord,
    meta: &ScanMetadata,
) -> Result<Grid<f32>> {
    check_crop(crop, meta)?;
    let mut up = resize_bilinear(pmap, crop.cropped_height(), meta.width_px);
    for v in up.as_mut_slice() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(repad(up, crop, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan_from(grid: Grid<f32>) -> BScan {
        let meta = ScanMetadata::new(grid.width(), grid.height(), 10.0, 4.0);
        BScan::new(grid, meta).unwrap()
    }

    #[test]
    fn default_lateral_scale() {
        assert!((DEFAULT_LATERAL_SCALE_UM - 11.328125).abs() < 1e-12);
    }

    #[test]
    fn metadata_rejects_bad_values() {
        let mut m = ScanMetadata::new(10, 10, 1.0, 1.0);
        assert!(m.validate().is_ok());
        m.axial_scale = 0.0;
        assert!(m.validate().is_err());
        let m = ScanMetadata::new(10, 10, 1.0, 1.0).with_fovea(10);
        assert!(m.validate().is_err());
    }

    #[test]
    fn sidecar_requires_axial_scale() {
        let s: MetadataSidecar = serde_json::from_str(r#"{"lateral_scale_um": 11.0}"#).unwrap();
        assert!(matches!(s.into_metadata(5, 5), Err(Error::InvalidMetadata(_))));
        let s: MetadataSidecar =
            serde_json::from_str(r#"{"axial_scale_um": 3.87, "eye": "left", "fovea_col": 2}"#)
                .unwrap();
        let m = s.into_metadata(5, 5).unwrap();
        assert_eq!(m.lateral_scale, DEFAULT_LATERAL_SCALE_UM);
        assert_eq!(m.eye, Eye::Left);
        assert_eq!(m.fovea_col, Some(2));
    }

    #[test]
    fn crop_edge_runs() {
        let g = Grid::from_fn(4, 30, |r, _| if (10..24).contains(&r) { 0.5 } else { 0.0 });
        let (c, rec) = crop_black_space(&scan_from(g), &PreprocessConfig::default()).unwrap();
        assert_eq!((rec.top_rows_removed, rec.bottom_rows_removed), (10, 6));
        assert_eq!(c.pixels.height(), 14);
        assert_eq!(c.meta.height_px, 14);
        assert_eq!(rec.to_native_row(0), 10);
    }

    #[test]
    fn crop_without_black_rows_is_identity() {
        let g = Grid::from_fn(5, 5, |r, c| 0.1 + (r * 5 + c) as f32 / 100.0);
        let scan = scan_from(g);
        let (c, rec) = crop_black_space(&scan, &PreprocessConfig::default()).unwrap();
        assert_eq!(rec, CropRecord::identity(5));
        assert_eq!(c.pixels, scan.pixels);
    }

    #[test]
    fn crop_all_black_errors() {
        let g = Grid::new(5, 5, 0.005f32);
        assert!(matches!(
            crop_black_space(&scan_from(g), &PreprocessConfig::default()),
            Err(Error::AllBlack)
        ));
    }

    #[test]
    fn crop_is_idempotent() {
        let g = Grid::from_fn(3, 20, |r, _| if r == 3 || r == 9 || r == 15 { 0.7 } else { 0.0 });
        let cfg = PreprocessConfig::default();
        let (once, _) = crop_black_space(&scan_from(g), &cfg).unwrap();
        let (twice, rec) = crop_black_space(&once, &cfg).unwrap();
        assert_eq!(rec, CropRecord::identity(once.pixels.height()));
        assert_eq!(once.pixels, twice.pixels);
    }

    #[test]
    fn resize_constant_and_identity() {
        let g = Grid::new(7, 5, 0.3f32);
        let r = resize_bilinear(&g, 11, 13);
        assert!(r.as_slice().iter().all(|&v| (v - 0.3).abs() < 1e-7));

        let g = Grid::from_fn(768, 544, |r, c| ((r * 31 + c * 17) % 97) as f32 / 97.0);
        let scan = scan_from(g.clone());
        assert_eq!(resize_to_model(&scan, &PreprocessConfig::default()), g);
    }

    #[test]
    fn standardize_values() {
        let cfg = PreprocessConfig::default();
        let g = Grid::from_vec(3, 1, vec![0.1f32, 0.3, 0.0]).unwrap();
        let s = standardize(&g, &cfg);
        assert!(s.at(0, 0).abs() < 1e-7);
        assert!((s.at(0, 1) - 1.0).abs() < 1e-6);
        assert!((s.at(0, 2) + 0.5).abs() < 1e-7);
    }

    #[test]
    fn mask_full_mask_repads_with_zeros() {
        let meta = ScanMetadata::new(6, 20, 1.0, 1.0);
        let crop = CropRecord {
            top_rows_removed: 3,
            bottom_rows_removed: 2,
            native_height: 20,
        };
        let mask = Grid::new(4, 4, true);
        let native = map_mask_to_native(&mask, &crop, &meta).unwrap();
        assert_eq!((native.width(), native.height()), (6, 20));
        for r in 0..20 {
            let expect = (3..18).contains(&r);
            assert!(native.row(r).iter().all(|&v| v == expect), "row {r}");
        }
    }

    #[test]
    fn mask_mapping_rejects_inconsistent_crop() {
        let meta = ScanMetadata::new(6, 20, 1.0, 1.0);
        let crop = CropRecord {
            top_rows_removed: 10,
            bottom_rows_removed: 10,
            native_height: 20,
        };
        assert!(map_mask_to_native(&Grid::new(2, 2, true), &crop, &meta).is_err());
        let crop = CropRecord::identity(19);
        assert!(map_mask_to_native(&Grid::new(2, 2, true), &crop, &meta).is_err());
    }
}
