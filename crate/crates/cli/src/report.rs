//! Tabular outputs: measurement CSV and its JSON mirror, the failure
//! manifest, and timing reports.

use std::path::Path;

use anyhow::{bail, Context, Result};
use choroid_core::measure::{LocusThickness, Measurements};
use serde::{Deserialize, Serialize};

pub const MEASUREMENTS_CSV: &str = "measurements.csv";
pub const MEASUREMENTS_JSON: &str = "measurements.json";
pub const FAILURES_CSV: &str = "failures.csv";
/// Wall-clock reports live here; they differ between runs by nature.
pub const TIMING_DIR: &str = "timing";

/// CSV column for a thickness locus: `ct_m2000`, `ct_0`, `ct_p2000`.
pub fn locus_column(offset_um: f64) -> String {
    let mag = format!("{}", offset_um.abs()).replace('.', "_");
    if offset_um < 0.0 {
        format!("ct_m{mag}")
    } else if offset_um > 0.0 {
        format!("ct_p{mag}")
    } else {
        "ct_0".to_string()
    }
}

/// One image's measurements, or the reason it has none.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRow {
    /// Scan stem; rows from different runs pair on this key.
    pub file: String,
    pub fovea_col: Option<usize>,
    pub loci: Vec<LocusThickness>,
    pub ct_mean_um: Option<f64>,
    pub area_mm2: Option<f64>,
    pub roi_cols: Option<(usize, usize)>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MeasurementRow {
    pub fn ok(file: &str, m: &Measurements) -> Self {
        Self {
            file: file.to_string(),
            fovea_col: Some(m.fovea_col),
            loci: m.thickness.loci.clone(),
            ct_mean_um: Some(m.thickness.mean_um),
            area_mm2: Some(m.area_mm2),
            roi_cols: Some(m.roi_cols),
            warnings: m.warnings.iter().map(|w| w.to_string()).collect(),
            error: None,
        }
    }

    pub fn failed(file: &str, fovea_col: Option<usize>, error: String) -> Self {
        Self {
            file: file.to_string(),
            fovea_col,
            loci: Vec::new(),
            ct_mean_um: None,
            area_mm2: None,
            roi_cols: None,
            warnings: Vec::new(),
            error: Some(error),
        }
    }
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes `measurements.csv` and `measurements.json` to `dir`. Error rows
/// keep empty numeric fields and carry `error: ...` in `warnings`.
pub fn write_measurements(dir: &Path, offsets: &[f64], rows: &[MeasurementRow]) -> Result<()> {
    let path = dir.join(MEASUREMENTS_CSV);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["file".to_string(), "fovea_col".to_string()];
    header.extend(offsets.iter().map(|&o| locus_column(o)));
    header.extend(["ct_mean_um", "area_mm2", "warnings"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.file.clone(), r.fovea_col.map(|f| f.to_string()).unwrap_or_default()];
        for &o in offsets {
            let t = r.loci.iter().find(|l| l.offset_um == o).map(|l| l.thickness_um);
            rec.push(num(t));
        }
        rec.push(num(r.ct_mean_um));
        rec.push(num(r.area_mm2));
        let mut notes = r.warnings.clone();
        if let Some(e) = &r.error {
            notes.push(format!("error: {e}"));
        }
        rec.push(notes.join("; "));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(rows)? + "\n";
    std::fs::write(dir.join(MEASUREMENTS_JSON), json)?;
    Ok(())
}

/// Parsed row of a measurements CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub file: String,
    pub fovea_col: Option<usize>,
    pub loci: Vec<(String, Option<f64>)>,
    pub ct_mean_um: Option<f64>,
    pub area_mm2: Option<f64>,
    pub warnings: String,
}

impl MeasurementRecord {
    pub fn is_complete(&self) -> bool {
        self.ct_mean_um.is_some() && self.area_mm2.is_some()
    }
}

pub fn read_measurements(path: &Path) -> Result<Vec<MeasurementRecord>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let (Some(fi), Some(mi), Some(ai)) = (find("file"), find("ct_mean_um"), find("area_mm2")) else {
        bail!("{} is not a measurements CSV (needs file, ct_mean_um, area_mm2)", path.display());
    };
    let fov = find("fovea_col");
    let wi = find("warnings");
    let loci: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("ct_") && *h != "ct_mean_um")
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let parse = |s: Option<&str>, what: &str, row: usize| -> Result<Option<f64>> {
        match s.map(str::trim) {
            None | Some("") => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .with_context(|| format!("{} row {row}: bad {what} {v:?}", path.display())),
        }
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        out.push(MeasurementRecord {
            file: rec.get(fi).unwrap_or_default().to_string(),
            fovea_col: fov.and_then(|c| rec.get(c)).and_then(|v| v.trim().parse().ok()),
            loci: loci
                .iter()
                .map(|(c, name)| Ok((name.clone(), parse(rec.get(*c), name, row)?)))
                .collect::<Result<_>>()?,
            ct_mean_um: parse(rec.get(mi), "ct_mean_um", row)?,
            area_mm2: parse(rec.get(ai), "area_mm2", row)?,
            warnings: wi.and_then(|c| rec.get(c)).unwrap_or_default().to_string(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub file: String,
    pub stage: String,
    pub error: String,
}

/// Always written, header-only when nothing failed.
pub fn write_failures(dir: &Path, failures: &[Failure]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(FAILURES_CSV))?;
    w.write_record(["file", "stage", "error"])?;
    for f in failures {
        w.write_record([&f.file, &f.stage, &f.error])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub images: usize,
    pub workers: usize,
    pub mean_s: f64,
    pub sd_s: f64,
    pub total_wall_s: f64,
}

impl TimingSummary {
    pub fn new(per_image: &[f64], workers: usize, total_wall_s: f64) -> Self {
        let n = per_image.len();
        let mean_s = if n == 0 { 0.0 } else { per_image.iter().sum::<f64>() / n as f64 };
        let sd_s = if n < 2 {
            0.0
        } else {
            (per_image.iter().map(|t| (t - mean_s).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            images: n,
            workers,
            mean_s,
            sd_s,
            total_wall_s,
        }
    }
}

/// `timing/timing.csv` (per image) and `timing/summary.json`.
pub fn write_timing(dir: &Path, per_image: &[(String, f64)], summary: &TimingSummary) -> Result<()> {
    let tdir = dir.join(TIMING_DIR);
    std::fs::create_dir_all(&tdir)?;
    let mut w = csv::Writer::from_path(tdir.join("timing.csv"))?;
    w.write_record(["file", "seconds"])?;
    for (f, s) in per_image {
        w.write_record([f.clone(), format!("{s:.6}")])?;
    }
    w.flush()?;
    std::fs::write(tdir.join("summary.json"), serde_json::to_string_pretty(summary)? + "\n")?;
    Ok(())
}
