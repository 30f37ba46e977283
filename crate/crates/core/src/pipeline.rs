//! Per-scan processing chain: probability map to measurements.

use crate::boundary::{extract_boundaries, BoundaryPair};
use crate::error::{Error, Result};
use crate::ingest::{BScan, PreprocessConfig, ScanMetadata};
use crate::measure::{measure_boundaries, MeasureConfig, Measurements};
use crate::segment::{binarize, largest_component, segment, ChoroidMask, ProbabilityMap, SegmenterBackend};

/// Default binarization threshold.
pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Clone, Debug)]
pub struct Segmentation {
    pub pmap: ProbabilityMap,
    /// Largest connected component of the thresholded map.
    pub mask: ChoroidMask,
}

#[derive(Clone, Debug)]
pub struct ScanResult {
    pub segmentation: Segmentation,
    pub boundaries: BoundaryPair,
    pub measurements: Measurements,
}

pub fn mask_from_pmap(pmap: &ProbabilityMap, threshold: f32) -> Result<ChoroidMask> {
    Ok(largest_component(&binarize(pmap, threshold)?))
}

pub fn segment_scan(
    scan: &BScan,
    scan_id: &str,
    backend: &SegmenterBackend,
    pre: &PreprocessConfig,
    threshold: f32,
) -> Result<Segmentation> {
    let pmap = segment(scan, scan_id, backend, pre)?;
    let mask = mask_from_pmap(&pmap, threshold)?;
    Ok(Segmentation { pmap, mask })
}

/// Boundaries and measurements for a binary mask. The fovea comes from
/// `meta.fovea_col`.
pub fn measure_mask(
    mask: &ChoroidMask,
    meta: &ScanMetadata,
    cfg: &MeasureConfig,
) -> Result<(BoundaryPair, Measurements)> {
    let fovea = meta.fovea_col.ok_or(Error::MissingFovea)?;
    if fovea >= meta.width_px {
        return Err(Error::FoveaOutsideImage {
            fovea_col: fovea as i64,
            width: meta.width_px,
        });
    }
    let raw = extract_boundaries(mask)?;
    let m = measure_boundaries(&raw, Some(mask), fovea, meta, cfg)?;
    Ok((raw, m))
}

pub fn process_scan(
    scan: &BScan,
    scan_id: &str,
    backend: &SegmenterBackend,
    pre: &PreprocessConfig,
    threshold: f32,
    cfg: &MeasureConfig,
) -> Result<ScanResult> {
    let segmentation = segment_scan(scan, scan_id, backend, pre, threshold)?;
    let (boundaries, measurements) = measure_mask(&segmentation.mask, &scan.meta, cfg)?;
    Ok(ScanResult {
        segmentation,
        boundaries,
        measurements,
    })
}
