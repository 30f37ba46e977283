use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use choroid_core::segment::{binarize, read_map};
use choroid_core::stats::{self, agreement, AgreementReport, WelchTest};
use log::{info, warn};
use serde::Serialize;

use super::{ensure_dir, template_in, write_file};
use crate::config::RunConfig;
use crate::report::{read_measurements, MeasurementRecord};
use crate::svg;
use crate::{CompareArgs, RunSummary};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Clone, Debug, Serialize)]
pub struct MeasureComparison {
    #[serde(flatten)]
    pub agreement: AgreementReport,
    pub welch: WelchTest,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub pairs: Vec<(String, String)>,
    /// Pairs dropped because either side lacked a value.
    pub excluded: Vec<(String, String)>,
    pub thickness: MeasureComparison,
    pub area: MeasureComparison,
}

fn index(rows: Vec<MeasurementRecord>, path: &Path) -> Result<BTreeMap<String, MeasurementRecord>> {
    let mut m = BTreeMap::new();
    for r in rows {
        let file = r.file.clone();
        if m.insert(file.clone(), r).is_some() {
            bail!("{} lists {file:?} more than once", path.display());
        }
    }
    Ok(m)
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let h = rdr.headers()?.clone();
    let (Some(ia), Some(ib)) = (h.iter().position(|x| x == "a"), h.iter().position(|x| x == "b")) else {
        bail!("{} needs columns a,b", path.display());
    };
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok((r[ia].trim().to_string(), r[ib].trim().to_string()))
        })
        .collect()
}

/// Joins two series by file name, or by an explicit `a,b` manifest.
/// Any name without a partner is fatal.
pub fn pair(
    a: BTreeMap<String, MeasurementRecord>,
    b: BTreeMap<String, MeasurementRecord>,
    manifest: Option<Vec<(String, String)>>,
) -> Result<Vec<(MeasurementRecord, MeasurementRecord)>> {
    let names = match manifest {
        Some(m) => m,
        None => {
            let only_a: Vec<_> = a.keys().filter(|k| !b.contains_key(*k)).cloned().collect();
            let only_b: Vec<_> = b.keys().filter(|k| !a.contains_key(*k)).cloned().collect();
            if !only_a.is_empty() || !only_b.is_empty() {
                bail!("unpaired files: only in A {only_a:?}, only in B {only_b:?}");
            }
            a.keys().map(|k| (k.clone(), k.clone())).collect()
        }
    };
    let (mut a, mut b) = (a, b);
    names
        .into_iter()
        .map(|(na, nb)| {
            let ra = a.remove(&na).with_context(|| format!("{na:?} missing from series A"))?;
            let rb = b.remove(&nb).with_context(|| format!("{nb:?} missing from series B"))?;
            Ok((ra, rb))
        })
        .collect()
}

fn compare_measure(xs: &[f64], ys: &[f64]) -> Result<MeasureComparison> {
    Ok(MeasureComparison {
        agreement: agreement(xs, ys)?,
        welch: stats::ttest_welch(xs, ys)?,
    })
}

/// Mean Dice of binarized A against binarized B, and mean AUC of the raw
/// A map against binarized B.
fn segmentation_metrics(
    pairs: &[(String, String)],
    maps_a: &str,
    maps_b: &str,
    threshold: f32,
) -> Result<(f64, f64)> {
    let (mut dice, mut auc) = (0.0, 0.0);
    for (sa, sb) in pairs {
        let pa = read_map(Path::new(&maps_a.replace("{stem}", sa)))?;
        let pb = read_map(Path::new(&maps_b.replace("{stem}", sb)))?;
        let mb = binarize(&pb, threshold)?;
        dice += stats::dice(&binarize(&pa, threshold)?, &mb)?;
        auc += stats::auc(&pa, &mb).with_context(|| format!("AUC for {sa:?}"))?;
    }
    let n = pairs.len() as f64;
    Ok((dice / n, auc / n))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn report_csv(r: &CompareReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "measure", "n", "dice", "auc", "pearson_r", "spearman_r", "mae", "mean_diff", "sd_diff",
        "loa_low", "loa_high", "outside_loa_count", "slope", "slope_ci_low", "slope_ci_high",
        "intercept", "intercept_ci_low", "intercept_ci_high", "welch_t", "welch_dof", "welch_p",
    ])?;
    for (name, m) in [("thickness_um", &r.thickness), ("area_mm2", &r.area)] {
        let a = &m.agreement;
        let (ba, lf) = (&a.bland_altman, &a.linfit);
        w.write_record([
            name.to_string(),
            a.n.to_string(),
            fmt_opt(a.dice),
            fmt_opt(a.auc),
            a.pearson_r.to_string(),
            a.spearman_r.to_string(),
            a.mae.to_string(),
            ba.mean_diff.to_string(),
            ba.sd_diff.to_string(),
            ba.loa_low.to_string(),
            ba.loa_high.to_string(),
            ba.outside_loa_count.to_string(),
            lf.slope.to_string(),
            lf.slope_ci.0.to_string(),
            lf.slope_ci.1.to_string(),
            lf.intercept.to_string(),
            lf.intercept_ci.0.to_string(),
            lf.intercept_ci.1.to_string(),
            m.welch.t.to_string(),
            m.welch.dof.to_string(),
            m.welch.p.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

/// Compares series A (method under test) with series B (reference).
/// Writes `report.json`, `report.csv` and, unless disabled, four SVG plots.
pub fn run(cfg: &RunConfig, args: &CompareArgs) -> Result<RunSummary> {
    let out = ensure_dir(cfg.out_dir()?)?;
    let a = index(read_measurements(&args.a)?, &args.a)?;
    let b = index(read_measurements(&args.b)?, &args.b)?;
    let manifest = args.pairs.as_deref().map(read_pairs).transpose()?;
    let mut summary = RunSummary::default();

    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    for (ra, rb) in pair(a, b, manifest)? {
        let names = (ra.file.clone(), rb.file.clone());
        if ra.is_complete() && rb.is_complete() {
            pairs.push((names, ra, rb));
        } else {
            warn!("excluding {} / {}: missing measurements", names.0, names.1);
            summary.warnings += 1;
            excluded.push(names);
        }
    }
    if pairs.len() < 3 {
        bail!("{} complete pairs; at least 3 are needed", pairs.len());
    }
    let col = |f: fn(&MeasurementRecord) -> Option<f64>, side: usize| -> Vec<f64> {
        pairs
            .iter()
            .map(|(_, ra, rb)| f(if side == 0 { ra } else { rb }).unwrap_or(f64::NAN))
            .collect()
    };
    let (ta, tb) = (col(|r| r.ct_mean_um, 0), col(|r| r.ct_mean_um, 1));
    let (aa, ab) = (col(|r| r.area_mm2, 0), col(|r| r.area_mm2, 1));
    let mut report = CompareReport {
        pairs: pairs.iter().map(|p| p.0.clone()).collect(),
        excluded,
        thickness: compare_measure(&ta, &tb)?,
        area: compare_measure(&aa, &ab)?,
    };

    if let (Some(ma), Some(mb)) = (&args.maps_a, &args.maps_b) {
        let base_a = args.a.parent().unwrap_or(Path::new("."));
        let base_b = args.b.parent().unwrap_or(Path::new("."));
        let (dice, auc) =
            segmentation_metrics(&report.pairs, &template_in(base_a, ma), &template_in(base_b, mb), cfg.threshold()?)?;
        for m in [&mut report.thickness, &mut report.area] {
            m.agreement.dice = Some(dice);
            m.agreement.auc = Some(auc);
        }
    }

    write_file(&out.join(REPORT_JSON), (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    write_file(&out.join(REPORT_CSV), &report_csv(&report)?)?;
    if cfg.plots.unwrap_or(true) {
        let plots = [
            ("thickness_correlation.svg", svg::correlation_plot(
                "Mean choroidal thickness", "reference (μm)", "method (μm)", &tb, &ta,
                &report.thickness.agreement.linfit)),
            ("thickness_bland_altman.svg", svg::bland_altman_plot(
                "Mean choroidal thickness", "μm", &ta, &tb, &report.thickness.agreement.bland_altman)),
            ("area_correlation.svg", svg::correlation_plot(
                "Choroidal area", "reference (mm²)", "method (mm²)", &ab, &aa,
                &report.area.agreement.linfit)),
            ("area_bland_altman.svg", svg::bland_altman_plot(
                "Choroidal area", "mm²", &aa, &ab, &report.area.agreement.bland_altman)),
        ];
        for (name, body) in plots {
            write_file(&out.join(name), body.as_bytes())?;
        }
    }
    summary.processed = report.pairs.len();
    info!(
        "{} pairs: thickness MAE {:.3} μm, area MAE {:.5} mm²",
        summary.processed, report.thickness.agreement.mae, report.area.agreement.mae
    );
    Ok(summary)
}
