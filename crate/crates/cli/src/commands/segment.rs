use std::time::Instant;

use anyhow::{bail, Context, Result};
use choroid_core::ingest::{encode_mask_png, read_grayscale, BScan};
use choroid_core::nnexec::load_network;
use choroid_core::pipeline::{measure_mask, segment_scan, Segmentation};
use choroid_core::segment::{encode_pmap, MapSource, SegmenterBackend};
use log::{info, warn};

use super::{batch, ensure_dir, template_in, write_file};
use crate::config::{BackendKind, RunConfig};
use crate::inputs::{list_images, stem_of, MetadataResolver};
use crate::report::{self, Failure, MeasurementRow, TimingSummary};
use crate::RunSummary;

pub const ORACLE_PATTERN: &str = "{stem}.truth.pmap";

fn backend(cfg: &RunConfig) -> Result<SegmenterBackend> {
    let input = cfg.input_dir()?;
    Ok(match cfg.backend.unwrap_or(BackendKind::Cnn) {
        BackendKind::Cnn => {
            let (Some(spec), Some(weights)) = (&cfg.spec, &cfg.weights) else {
                bail!("the cnn backend needs --spec and --weights");
            };
            SegmenterBackend::EmbeddedCnn(
                load_network(spec, weights).context("loading the network")?,
            )
        }
        BackendKind::External => {
            let Some(p) = &cfg.maps else {
                bail!("the external backend needs --maps with a {{stem}} template");
            };
            SegmenterBackend::ExternalMap(MapSource::Pattern(template_in(input, p)))
        }
        BackendKind::Oracle => {
            let p = cfg.maps.as_deref().unwrap_or(ORACLE_PATTERN);
            SegmenterBackend::PhantomOracle(MapSource::Pattern(template_in(input, p)))
        }
    })
}

struct Processed {
    stem: String,
    seg: Segmentation,
    seconds: f64,
    row: Option<MeasurementRow>,
}

/// Segments every image in the input directory. Writes
/// `<stem>.pred.pmap`, `<stem>.mask.png`, `failures.csv`, the timing
/// report and, with `measure`, the measurements CSV/JSON.
pub fn run(cfg: &RunConfig, measure: bool) -> Result<RunSummary> {
    let input = cfg.input_dir()?;
    let out = ensure_dir(cfg.out_dir()?)?;
    let threshold = cfg.threshold()?;
    let pre = cfg.preprocess()?;
    let mcfg = cfg.measure()?;
    let workers = cfg.workers();
    let backend = backend(cfg)?;
    let resolver = MetadataResolver::new(input, cfg)?;
    let images = list_images(input)?;
    let mut summary = RunSummary::default();
    if images.is_empty() {
        warn!("no images found in {}", input.display());
        summary.warnings += 1;
    }
    info!("segmenting {} images with {} worker(s)", images.len(), workers);

    let started = Instant::now();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    let mut rows = Vec::new();
    batch(
        &images,
        workers,
        |path| -> Result<Processed, Failure> {
            let stem = stem_of(path);
            let fail = |stage: &str, e: String| Failure {
                file: stem.clone(),
                stage: stage.into(),
                error: e,
            };
            let t0 = Instant::now();
            let pixels = read_grayscale(path).map_err(|e| fail("load", e.to_string()))?;
            let meta = resolver
                .resolve(&stem, pixels.width(), pixels.height())
                .map_err(|e| fail("metadata", format!("{e:#}")))?;
            let scan = BScan::new(pixels, meta).map_err(|e| fail("load", e.to_string()))?;
            let seg = segment_scan(&scan, &stem, &backend, &pre, threshold)
                .map_err(|e| fail("segment", e.to_string()))?;
            let seconds = t0.elapsed().as_secs_f64();
            let row = measure.then(|| match measure_mask(&seg.mask, &scan.meta, &mcfg) {
                Ok((_, m)) => MeasurementRow::ok(&stem, &m),
                Err(e) => MeasurementRow::failed(&stem, scan.meta.fovea_col, e.to_string()),
            });
            Ok(Processed { stem, seg, seconds, row })
        },
        |_, result| {
            match result {
                Ok(p) => {
                    write_file(&out.join(format!("{}.pred.pmap", p.stem)), &encode_pmap(p.seg.pmap.grid()))?;
                    write_file(
                        &out.join(format!("{}.mask.png", p.stem)),
                        &encode_mask_png(p.seg.mask.grid())?,
                    )?;
                    if p.seg.mask.is_empty() {
                        warn!("{}: empty segmentation", p.stem);
                        summary.warnings += 1;
                    }
                    if let Some(r) = p.row {
                        if r.error.is_some() {
                            summary.warnings += 1;
                        }
                        rows.push(r);
                    }
                    timings.push((p.stem, p.seconds));
                    summary.processed += 1;
                }
                Err(f) => {
                    warn!("{}: {} failed: {}", f.file, f.stage, f.error);
                    summary.failed += 1;
                    summary.warnings += 1;
                    failures.push(f);
                }
            }
            Ok(())
        },
    )?;
    let wall = started.elapsed().as_secs_f64();

    report::write_failures(&out, &failures)?;
    let secs: Vec<f64> = timings.iter().map(|t| t.1).collect();
    let ts = TimingSummary::new(&secs, workers, wall);
    report::write_timing(&out, &timings, &ts)?;
    info!(
        "{:.3} ± {:.3} s/img over {} images, {:.2} s total",
        ts.mean_s, ts.sd_s, ts.images, ts.total_wall_s
    );
    if measure {
        report::write_measurements(&out, &mcfg.thickness_offsets, &rows)?;
    }
    Ok(summary)
}
