//! Method-agreement statistics: segmentation overlap (Dice, ROC AUC) and
//! agreement of derived measurements (Pearson, Spearman, MAE, Bland-Altman,
//! least-squares fit with t-based confidence intervals, Welch's t-test).

use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;

use crate::error::{Error, Result};
use crate::grid::check_same_dims;
use crate::segment::{ChoroidMask, ProbabilityMap};

/// Normal 97.5% quantile used for the limits of agreement.
pub const LOA_MULTIPLIER: f64 = 1.96;

fn stats_err(msg: impl Into<String>) -> Error {
    Error::Stats(msg.into())
}

/// `2|A ∩ B| / (|A| + |B|)`; two empty masks agree perfectly (1.0).
pub fn dice(a: &ChoroidMask, b: &ChoroidMask) -> Result<f64> {
    check_same_dims(a.grid(), b.grid())?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.grid().as_slice().iter().zip(b.grid().as_slice()) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// 1-based ranks with ties assigned their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean((i+1)..=j)
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Mann-Whitney AUC with midrank ties.
pub fn auc_scores(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(stats_err("scores and labels differ in length"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(stats_err("AUC needs at least one positive and one negative"));
    }
    let ranks = midranks(scores);
    let r_pos: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((r_pos - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn auc(pmap: &ProbabilityMap, truth: &ChoroidMask) -> Result<f64> {
    check_same_dims(pmap.grid(), truth.grid())?;
    let scores: Vec<f64> = pmap.grid().as_slice().iter().map(|&v| v as f64).collect();
    auc_scores(&scores, truth.grid().as_slice())
}

fn check_pairs(xs: &[f64], ys: &[f64], min_n: usize) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(stats_err(format!(
            "series lengths differ ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < min_n {
        return Err(stats_err(format!("need at least {min_n} pairs, got {}", xs.len())));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator), two-pass.
fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pairs(xs, ys, 2)?;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(stats_err("correlation undefined for a zero-variance series"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of midranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pairs(xs, ys, 2)?;
    pearson(&midranks(xs), &midranks(ys))
}

pub fn mae(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pairs(xs, ys, 1)?;
    Ok(xs.iter().zip(ys).map(|(x, y)| (x - y).abs()).sum::<f64>() / xs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub outside_loa_count: usize,
    pub multiplier: f64,
}

/// Differences `x - y` against pair means. Limits of agreement are
/// `mean_diff ± multiplier * sd` with the n - 1 sample sd.
pub fn bland_altman_with(xs: &[f64], ys: &[f64], multiplier: f64) -> Result<BlandAltman> {
    check_pairs(xs, ys, 2)?;
    let diffs: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    let mean_diff = mean(&diffs);
    let sd_diff = sample_variance(&diffs).sqrt();
    let half = multiplier * sd_diff;
    let outside_loa_count = diffs.iter().filter(|d| (*d - mean_diff).abs() > half).count();
    Ok(BlandAltman {
        n: xs.len(),
        mean_diff,
        sd_diff,
        loa_low: mean_diff - half,
        loa_high: mean_diff + half,
        outside_loa_count,
        multiplier,
    })
}

pub fn bland_altman(xs: &[f64], ys: &[f64]) -> Result<BlandAltman> {
    bland_altman_with(xs, ys, LOA_MULTIPLIER)
}

/// Student t cumulative distribution.
pub fn t_cdf(t: f64, dof: f64) -> Result<f64> {
    if !(dof > 0.0) {
        return Err(stats_err(format!("degrees of freedom must be positive, got {dof}")));
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { 1.0 } else { 0.0 });
    }
    let x = dof / (dof + t * t);
    let tail = 0.5
        * checked_beta_reg(dof / 2.0, 0.5, x)
            .map_err(|e| stats_err(format!("incomplete beta: {e}")))?;
    Ok(if t >= 0.0 { 1.0 - tail } else { tail })
}

/// Inverse of [`t_cdf`] by bisection on the regularized incomplete beta.
pub fn t_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(stats_err(format!("quantile level {p} outside (0, 1)")));
    }
    if p < 0.5 {
        return t_quantile(1.0 - p, dof).map(|t| -t);
    }
    let mut hi = 1.0;
    while t_cdf(hi, dof)? < p {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(stats_err("t quantile did not bracket"));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, dof)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub slope_ci: (f64, f64),
    pub intercept_ci: (f64, f64),
    pub level: f64,
}

/// Ordinary least squares `y = slope * x + intercept` with two-sided
/// confidence intervals `estimate ± t_{(1+level)/2, n-2} * SE`.
pub fn linfit_ci(xs: &[f64], ys: &[f64], level: f64) -> Result<LinearFit> {
    check_pairs(xs, ys, 3)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(stats_err(format!("confidence level {level} outside (0, 1)")));
    }
    let n = xs.len() as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(stats_err("regression undefined: x has zero variance"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let s2 = ssr / (n - 2.0);
    let slope_se = (s2 / sxx).sqrt();
    let intercept_se = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
    let t = t_quantile(0.5 + level / 2.0, n - 2.0)?;
    Ok(LinearFit {
        n: xs.len(),
        slope,
        intercept,
        slope_se,
        intercept_se,
        slope_ci: (slope - t * slope_se, slope + t * slope_se),
        intercept_ci: (intercept - t * intercept_se, intercept + t * intercept_se),
        level,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
}

/// Welch's unequal-variance t-test with Satterthwaite degrees of freedom and
/// a two-sided p-value.
pub fn ttest_welch(xs: &[f64], ys: &[f64]) -> Result<WelchTest> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(stats_err("each sample needs at least two values"));
    }
    let (n1, n2) = (xs.len() as f64, ys.len() as f64);
    let (m1, m2) = (mean(xs), mean(ys));
    let (a, b) = (sample_variance(xs) / n1, sample_variance(ys) / n2);
    let se2 = a + b;
    if se2 == 0.0 {
        if m1 == m2 {
            return Ok(WelchTest {
                t: 0.0,
                dof: n1 + n2 - 2.0,
                p: 1.0,
            });
        }
        return Err(stats_err("both samples have zero variance"));
    }
    let t = (m1 - m2) / se2.sqrt();
    let dof = se2 * se2 / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
    let p = checked_beta_reg(dof / 2.0, 0.5, dof / (dof + t * t))
        .map_err(|e| stats_err(format!("incomplete beta: {e}")))?;
    Ok(WelchTest {
        t,
        dof,
        p: p.clamp(0.0, 1.0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub pearson_r: f64,
    pub spearman_r: f64,
    pub mae: f64,
    pub bland_altman: BlandAltman,
    pub linfit: LinearFit,
}

/// Full battery for paired measurement series (`xs` is the method under
/// test, `ys` the reference). Segmentation metrics are left empty.
pub fn agreement(xs: &[f64], ys: &[f64]) -> Result<AgreementReport> {
    Ok(AgreementReport {
        n: xs.len(),
        dice: None,
        auc: None,
        pearson_r: pearson(xs, ys)?,
        spearman_r: spearman(xs, ys)?,
        mae: mae(xs, ys)?,
        bland_altman: bland_altman(xs, ys)?,
        linfit: linfit_ci(ys, xs, 0.95)?,
    })
}
