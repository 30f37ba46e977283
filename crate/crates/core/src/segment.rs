//! Choroid segmentation: backends that produce a native-resolution
//! probability map, thresholding, and largest-component regularization.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ingest::{self, BScan, PreprocessConfig};
use crate::nnexec::Network;

/// Per-pixel choroid probability in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap(Grid<f32>);

impl ProbabilityMap {
    pub fn new(values: Grid<f32>) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidMap(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn from_mask(mask: &ChoroidMask) -> Self {
        Self(mask.grid().map(|b| if b { 1.0 } else { 0.0 }))
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f32> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }
}

/// Binary choroid region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChoroidMask(Grid<bool>);

impl ChoroidMask {
    pub fn new(values: Grid<bool>) -> Self {
        Self(values)
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<bool> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn count(&self) -> usize {
        self.0.as_slice().iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.0.as_slice().iter().any(|&v| v)
    }
}

/// Where an external or oracle map comes from.
#[derive(Clone, Debug)]
pub enum MapSource {
    /// Path template; `{stem}` is replaced by the scan identifier.
    Pattern(String),
    Map(ProbabilityMap),
}

impl MapSource {
    fn load(&self, scan_id: &str) -> Result<ProbabilityMap> {
        match self {
            MapSource::Map(m) => Ok(m.clone()),
            MapSource::Pattern(p) => {
                let path = PathBuf::from(p.replace("{stem}", scan_id));
                if !path.exists() {
                    return Err(Error::Backend(format!(
                        "probability map {} not found",
                        path.display()
                    )));
                }
                read_map(&path)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum SegmenterBackend {
    /// Runs the embedded CNN at model resolution.
    EmbeddedCnn(Network),
    /// Precomputed maps at model resolution (mapped back) or native
    /// resolution (used as-is).
    ExternalMap(MapSource),
    /// Ground truth at native resolution, passed through unchanged.
    PhantomOracle(MapSource),
}

/// Produces a native-resolution probability map for `scan`. `scan_id`
/// resolves `{stem}` in path-pattern backends.
pub fn segment(
    scan: &BScan,
    scan_id: &str,
    backend: &SegmenterBackend,
    cfg: &PreprocessConfig,
) -> Result<ProbabilityMap> {
    let (nw, nh) = (scan.meta.width_px, scan.meta.height_px);
    match backend {
        SegmenterBackend::PhantomOracle(src) => {
            let map = src.load(scan_id)?;
            check_dims(&map, nw, nh)?;
            Ok(map)
        }
        SegmenterBackend::ExternalMap(src) => {
            let map = src.load(scan_id)?;
            if (map.width(), map.height()) == (nw, nh) {
                return Ok(map);
            }
            check_dims(&map, cfg.model_width, cfg.model_height)?;
            let pre = ingest::preprocess(scan, cfg)?;
            let native = ingest::map_probability_to_native(map.grid(), &pre.crop, &scan.meta)?;
            ProbabilityMap::new(native)
        }
        SegmenterBackend::EmbeddedCnn(net) => {
            let input = net.input_spec();
            if (input.height, input.width) != (cfg.model_height, cfg.model_width) {
                return Err(Error::Backend(format!(
                    "network input {}x{} differs from model resolution {}x{}",
                    input.width, input.height, cfg.model_width, cfg.model_height
                )));
            }
            let pre = ingest::preprocess(scan, cfg)?;
            let probs = net.forward(&pre.input)?;
            let native = ingest::map_probability_to_native(&probs, &pre.crop, &scan.meta)?;
            ProbabilityMap::new(native)
        }
    }
}

fn check_dims(map: &ProbabilityMap, w: usize, h: usize) -> Result<()> {
    if (map.width(), map.height()) != (w, h) {
        return Err(Error::DimensionMismatch {
            expected_w: w,
            expected_h: h,
            found_w: map.width(),
            found_h: map.height(),
        });
    }
    Ok(())
}

/// `value >= threshold`.
pub fn binarize(pmap: &ProbabilityMap, threshold: f32) -> Result<ChoroidMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    Ok(ChoroidMask(pmap.grid().map(|v| v >= threshold)))
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    // the smaller raster index stays root, so roots are component anchors
    if ra < rb {
        parent[rb as usize] = ra;
    } else if rb < ra {
        parent[ra as usize] = rb;
    }
}

/// 8-connected labeling. Returns per-pixel labels (0 = background, 1.. in
/// raster order of each component's first pixel) and per-label sizes
/// (index 0 unused).
pub fn label_components(mask: &ChoroidMask) -> (Grid<u32>, Vec<usize>) {
    let g = mask.grid();
    let (w, h) = (g.width(), g.height());
    let mut parent: Vec<u32> = (0..(w * h) as u32).collect();
    for r in 0..h {
        for c in 0..w {
            if !g.at(r, c) {
                continue;
            }
            let i = (r * w + c) as u32;
            if c > 0 && g.at(r, c - 1) {
                union(&mut parent, i, i - 1);
            }
            if r > 0 {
                let up = ((r - 1) * w + c) as u32;
                if g.at(r - 1, c) {
                    union(&mut parent, i, up);
                }
                if c > 0 && g.at(r - 1, c - 1) {
                    union(&mut parent, i, up - 1);
                }
                if c + 1 < w && g.at(r - 1, c + 1) {
                    union(&mut parent, i, up + 1);
                }
            }
        }
    }
    let mut label_of_root = vec![0u32; w * h];
    let mut sizes = vec![0usize];
    let mut labels = Grid::new(w, h, 0u32);
    for i in 0..w * h {
        if !g.as_slice()[i] {
            continue;
        }
        let root = find(&mut parent, i as u32) as usize;
        if label_of_root[root] == 0 {
            sizes.push(0);
            label_of_root[root] = (sizes.len() - 1) as u32;
        }
        let l = label_of_root[root];
        sizes[l as usize] += 1;
        labels.as_mut_slice()[i] = l;
    }
    (labels, sizes)
}

/// Keeps the largest 8-connected component. Ties go to the component whose
/// first pixel comes first in raster order (topmost, then leftmost).
pub fn largest_component(mask: &ChoroidMask) -> ChoroidMask {
    let (labels, sizes) = label_components(mask);
    let Some(best) = (1..sizes.len()).reduce(|a, b| if sizes[b] > sizes[a] { b } else { a }) else {
        return mask.clone();
    };
    ChoroidMask(labels.map(|l| l == best as u32))
}

#[derive(Serialize, Deserialize)]
struct PmapHeader {
    height: usize,
    width: usize,
}

/// `.pmap`: one JSON header line `{"height":H,"width":W}` followed by `H*W`
/// little-endian f32 values in row-major order.
pub fn encode_pmap(grid: &Grid<f32>) -> Vec<u8> {
    let header = serde_json::to_string(&PmapHeader {
        height: grid.height(),
        width: grid.width(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(header.len() + 1 + grid.as_slice().len() * 4);
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for v in grid.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_pmap(bytes: &[u8]) -> Result<Grid<f32>> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::InvalidMap("missing header line".into()))?;
    let header: PmapHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::InvalidMap(format!("bad header: {e}")))?;
    let body = &bytes[nl + 1..];
    let n = header.height * header.width;
    if body.len() != n * 4 {
        return Err(Error::InvalidMap(format!(
            "expected {} bytes of data for {}x{}, found {}",
            n * 4,
            header.width,
            header.height,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Grid::from_vec(header.width, header.height, data)
}

pub fn write_pmap(path: &Path, map: &ProbabilityMap) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_pmap(map.grid()))
        .map_err(|e| Error::io(path, e))
}

/// Reads a `.pmap` file, or a 16-bit grayscale PNG interpreted as
/// `value / 65535`.
pub fn read_map(path: &Path) -> Result<ProbabilityMap> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let grid = if is_png {
        ingest::read_grayscale(path)?
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_pmap(&bytes)?
    };
    ProbabilityMap::new(grid)
}
