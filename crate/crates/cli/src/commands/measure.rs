use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Result};
use choroid_core::pipeline::{mask_from_pmap, measure_mask};
use choroid_core::segment::read_map;
use log::{info, warn};

use super::{batch, ensure_dir};
use crate::config::RunConfig;
use crate::inputs::{list_with_suffix, stem_of, MetadataResolver};
use crate::report::{self, MeasurementRow};
use crate::RunSummary;

/// Measures every map ending in `suffix`. Problems with a single map become
/// an error row in the CSV rather than aborting the batch.
pub fn run(cfg: &RunConfig, suffix: &str, meta_dir: Option<&Path>) -> Result<RunSummary> {
    let input = cfg.input_dir()?;
    let out = ensure_dir(cfg.out_dir()?)?;
    let threshold = cfg.threshold()?;
    let mcfg = cfg.measure()?;
    let resolver = MetadataResolver::new(meta_dir.unwrap_or(input), cfg)?;
    let files = list_with_suffix(input, suffix)?;

    let mut seen = BTreeMap::new();
    for f in &files {
        if let Some(prev) = seen.insert(stem_of(f), f) {
            bail!(
                "{} and {} share a stem; narrow the selection with --suffix",
                prev.display(),
                f.display()
            );
        }
    }
    let mut summary = RunSummary::default();
    if files.is_empty() {
        warn!("no files ending in {suffix:?} in {}", input.display());
        summary.warnings += 1;
    }
    info!("measuring {} maps", files.len());

    let mut rows = Vec::with_capacity(files.len());
    batch(
        &files,
        cfg.workers(),
        |path| {
            let stem = stem_of(path);
            let map = match read_map(path) {
                Ok(m) => m,
                Err(e) => return MeasurementRow::failed(&stem, None, e.to_string()),
            };
            let meta = match resolver.resolve(&stem, map.width(), map.height()) {
                Ok(m) => m,
                Err(e) => return MeasurementRow::failed(&stem, None, format!("{e:#}")),
            };
            let result = mask_from_pmap(&map, threshold).and_then(|m| measure_mask(&m, &meta, &mcfg));
            match result {
                Ok((_, m)) => MeasurementRow::ok(&stem, &m),
                Err(e) => MeasurementRow::failed(&stem, meta.fovea_col, e.to_string()),
            }
        },
        |_, row| {
            if let Some(e) = &row.error {
                warn!("{}: {e}", row.file);
                summary.failed += 1;
                summary.warnings += 1;
            } else {
                summary.processed += 1;
                summary.warnings += row.warnings.len();
            }
            rows.push(row);
            Ok(())
        },
    )?;
    report::write_measurements(&out, &mcfg.thickness_offsets, &rows)?;
    Ok(summary)
}
