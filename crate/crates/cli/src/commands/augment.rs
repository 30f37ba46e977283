use anyhow::Result;
use choroid_core::augment::{apply_pipeline, log_to_jsonl, split_seed, AugmentConfig};
use choroid_core::ingest::{encode_png16, read_grayscale};
use log::warn;

use super::{batch, ensure_dir, write_file};
use crate::config::RunConfig;
use crate::inputs::{list_images, stem_of};
use crate::report::{self, Failure};
use crate::RunSummary;

/// Augments each image with its own seed (`split_seed(seed, index)` in
/// sorted file order). Writes `<stem>.png`, `<stem>.augment.jsonl` and a
/// copy of any sidecar.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let input = cfg.input_dir()?;
    let out = ensure_dir(cfg.out_dir()?)?;
    let base = cfg.augment.clone().unwrap_or_default();
    base.validate()?;
    let seed = cfg.seed.unwrap_or(base.seed);
    let images: Vec<(usize, std::path::PathBuf)> = list_images(input)?.into_iter().enumerate().collect();
    let mut summary = RunSummary::default();
    let mut failures = Vec::new();
    batch(
        &images,
        cfg.workers(),
        |(i, path)| -> Result<(Vec<u8>, String), String> {
            let grid = read_grayscale(path).map_err(|e| e.to_string())?;
            let c = AugmentConfig { seed: split_seed(seed, *i as u64), ..base.clone() };
            let (img, log) = apply_pipeline(&grid, &c).map_err(|e| e.to_string())?;
            Ok((
                encode_png16(&img).map_err(|e| e.to_string())?,
                log_to_jsonl(&log).map_err(|e| e.to_string())?,
            ))
        },
        |(_, path), result| {
            let stem = stem_of(path);
            match result {
                Ok((png, log)) => {
                    write_file(&out.join(format!("{stem}.png")), &png)?;
                    write_file(&out.join(format!("{stem}.augment.jsonl")), log.as_bytes())?;
                    let sidecar = input.join(format!("{stem}.json"));
                    if sidecar.is_file() {
                        std::fs::copy(&sidecar, out.join(format!("{stem}.json")))?;
                    }
                    summary.processed += 1;
                }
                Err(e) => {
                    warn!("{stem}: {e}");
                    summary.failed += 1;
                    summary.warnings += 1;
                    failures.push(Failure { file: stem, stage: "augment".into(), error: e });
                }
            }
            Ok(())
        },
    )?;
    report::write_failures(&out, &failures)?;
    Ok(summary)
}
