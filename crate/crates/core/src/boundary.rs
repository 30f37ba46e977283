//! Upper and lower choroid boundaries as functions of column.
//!
//! Row values use a pixel-edge convention: pixel row `r` covers the interval
//! `[r - 0.5, r + 0.5]`, so a column whose positive pixels run from `r0` to
//! `r1` has `upper = r0 - 0.5` and `lower = r1 + 0.5`. The vertical extent
//! `lower - upper` then equals the positive pixel count of a solid column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ScanMetadata;
use crate::segment::ChoroidMask;

pub const DEFAULT_SMOOTHING_WINDOW: usize = 31;
pub const DEFAULT_TANGENT_HALF_WINDOW: usize = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPair {
    /// Inclusive column span.
    pub col_start: usize,
    pub col_end: usize,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    /// Columns inside the span that had no positive pixel and were filled by
    /// linear interpolation.
    pub gaps: Vec<bool>,
    pub smoothing_window: usize,
}

impl BoundaryPair {
    pub fn len(&self) -> usize {
        self.col_end - self.col_start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, col: i64) -> bool {
        col >= self.col_start as i64 && col <= self.col_end as i64
    }

    fn index(&self, col: usize) -> Result<usize> {
        if self.contains(col as i64) {
            Ok(col - self.col_start)
        } else {
            Err(Error::OutsideSpan {
                col,
                start: self.col_start,
                end: self.col_end,
            })
        }
    }

    pub fn upper_at(&self, col: usize) -> Result<f64> {
        Ok(self.upper[self.index(col)?])
    }

    pub fn lower_at(&self, col: usize) -> Result<f64> {
        Ok(self.lower[self.index(col)?])
    }

    pub fn gap_count(&self) -> usize {
        self.gaps.iter().filter(|&&g| g).count()
    }

    /// Both boundaries smoothed with the same centred moving average.
    pub fn smoothed(&self, window: usize) -> Result<BoundaryPair> {
        let upper = smooth_boundary(&self.upper, window)?;
        let mut lower = smooth_boundary(&self.lower, window)?;
        for (l, &u) in lower.iter_mut().zip(&upper) {
            *l = l.max(u);
        }
        Ok(BoundaryPair {
            upper,
            lower,
            smoothing_window: window,
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-column extremes of a regularized mask. Interior empty columns are
/// linearly interpolated and flagged.
pub fn extract_boundaries(mask: &ChoroidMask) -> Result<BoundaryPair> {
    let g = mask.grid();
    let (w, h) = (g.width(), g.height());
    let mut extent: Vec<Option<(usize, usize)>> = vec![None; w];
    for r in 0..h {
        for (c, &v) in g.row(r).iter().enumerate() {
            if v {
                extent[c] = Some(match extent[c] {
                    None => (r, r),
                    Some((lo, _)) => (lo, r),
                });
            }
        }
    }
    let col_start = extent.iter().position(Option::is_some).ok_or(Error::EmptyMask)?;
    let col_end = extent.iter().rposition(Option::is_some).expect("nonempty");

    let n = col_end - col_start + 1;
    let mut upper = vec![0.0; n];
    let mut lower = vec![0.0; n];
    let mut gaps = vec![false; n];
    let mut prev: Option<usize> = None;
    for i in 0..n {
        if let Some((lo, hi)) = extent[col_start + i] {
            upper[i] = lo as f64 - 0.5;
            lower[i] = hi as f64 + 0.5;
            if let Some(p) = prev {
                for j in p + 1..i {
                    let t = (j - p) as f64 / (i - p) as f64;
                    upper[j] = upper[p] + t * (upper[i] - upper[p]);
                    lower[j] = lower[p] + t * (lower[i] - lower[p]);
                    gaps[j] = true;
                }
            }
            prev = Some(i);
        }
    }
    Ok(BoundaryPair {
        col_start,
        col_end,
        upper,
        lower,
        gaps,
        smoothing_window: 1,
    })
}

/// Centred moving average. Near the ends the window shrinks symmetrically,
/// so affine profiles are preserved everywhere.
pub fn smooth_boundary(rows: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "smoothing window must be odd and positive, got {window}"
        )));
    }
    let half = window / 2;
    let n = rows.len();
    Ok((0..n)
        .map(|i| {
            let k = half.min(i).min(n - 1 - i);
            let slice = &rows[i - k..=i + k];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

/// Unit tangent of the upper boundary at `col` in physical coordinates
/// (`x = col * lateral_scale`, `y = row * axial_scale`), oriented toward
/// increasing column. Uses a central difference over `+-half_window`
/// columns, falling back to a one-sided difference near the span ends.
pub fn tangent_at(
    bnd: &BoundaryPair,
    col: usize,
    meta: &ScanMetadata,
    half_window: usize,
) -> Result<(f64, f64)> {
    bnd.index(col)?;
    let (start, end) = (bnd.col_start, bnd.col_end);
    let w = half_window.max(1);
    let (c1, c2) = if col >= start + w && col + w <= end {
        (col - w, col + w)
    } else if col + w <= end {
        (col, col + w)
    } else if col >= start + w {
        (col - w, col)
    } else {
        (start, end)
    };
    if c1 == c2 {
        return Ok((1.0, 0.0));
    }
    let dx = (c2 - c1) as f64 * meta.lateral_scale;
    let dy = (bnd.upper_at(c2)? - bnd.upper_at(c1)?) * meta.axial_scale;
    let norm = dx.hypot(dy);
    Ok((dx / norm, dy / norm))
}
