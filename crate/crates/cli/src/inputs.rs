//! Input discovery, file-name stems and per-image metadata resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use choroid_core::ingest::{MetadataSidecar, ScanMetadata};

use crate::config::RunConfig;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "pgm", "pnm"];

/// Suffixes of derived files; stripped (longest first) to recover a stem.
pub const DERIVED_SUFFIXES: [&str; 5] = [".pred.pmap", ".truth.pmap", ".mask.png", ".truth.json", ".pmap"];

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Scan identifier for an image or derived file: the file name without a
/// known derived suffix, or else without its extension.
pub fn stem_of(path: &Path) -> String {
    let name = file_name(path);
    for s in DERIVED_SUFFIXES {
        if let Some(stem) = name.strip_suffix(s) {
            return stem.to_string();
        }
    }
    match name.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() => stem.to_string(),
        _ => name,
    }
}

fn sorted_files(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && keep(&file_name(&path)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Raw B-scans in `dir` (PNG/PGM), excluding written masks.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    sorted_files(dir, |name| {
        let lower = name.to_ascii_lowercase();
        !lower.ends_with(".mask.png")
            && lower
                .rsplit_once('.')
                .is_some_and(|(_, ext)| IMAGE_EXTENSIONS.contains(&ext))
    })
}

/// Files in `dir` whose name ends with `suffix`.
pub fn list_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    sorted_files(dir, |name| name.ends_with(suffix))
}

/// `file,fovea_col` table keyed by stem.
#[derive(Clone, Debug, Default)]
pub struct FoveaTable(BTreeMap<String, usize>);

impl FoveaTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)
            .with_context(|| format!("opening fovea table {}", path.display()))?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (Some(fi), Some(ci)) = (col("file"), col("fovea_col")) else {
            bail!("{} needs columns `file` and `fovea_col`", path.display());
        };
        let mut map = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let file = rec.get(fi).unwrap_or_default().trim();
            let value = rec.get(ci).unwrap_or_default().trim();
            let fovea: usize = value
                .parse()
                .with_context(|| format!("{} row {}: bad fovea_col {value:?}", path.display(), i + 2))?;
            map.insert(stem_of(Path::new(file)), fovea);
        }
        Ok(Self(map))
    }

    pub fn get(&self, stem: &str) -> Option<usize> {
        self.0.get(stem).copied()
    }
}

/// Resolves metadata for `stem` at the given pixel size. Precedence, highest
/// first: fovea table, flags/config file, `<stem>.json` sidecar in
/// `sidecar_dir`, built-in defaults.
#[derive(Clone, Debug)]
pub struct MetadataResolver {
    pub sidecar_dir: PathBuf,
    pub lateral_um: Option<f64>,
    pub axial_um: Option<f64>,
    pub fovea_col: Option<usize>,
    pub fovea_table: Option<FoveaTable>,
}

impl MetadataResolver {
    pub fn new(sidecar_dir: &Path, cfg: &RunConfig) -> Result<Self> {
        let fovea_table = cfg.fovea_csv.as_deref().map(FoveaTable::read).transpose()?;
        Ok(Self {
            sidecar_dir: sidecar_dir.to_path_buf(),
            lateral_um: cfg.lateral_um,
            axial_um: cfg.axial_um,
            fovea_col: cfg.fovea_col,
            fovea_table,
        })
    }

    pub fn resolve(&self, stem: &str, width: usize, height: usize) -> Result<ScanMetadata> {
        let path = self.sidecar_dir.join(format!("{stem}.json"));
        let mut sidecar = if path.is_file() {
            MetadataSidecar::read(&path)?
        } else {
            MetadataSidecar::default()
        };
        if self.lateral_um.is_some() {
            sidecar.lateral_scale_um = self.lateral_um;
        }
        if self.axial_um.is_some() {
            sidecar.axial_scale_um = self.axial_um;
        }
        if let Some(f) = self.fovea_col {
            sidecar.fovea_col = Some(f);
        }
        if let Some(f) = self.fovea_table.as_ref().and_then(|t| t.get(stem)) {
            sidecar.fovea_col = Some(f);
        }
        Ok(sidecar.into_metadata(width, height)?)
    }
}
