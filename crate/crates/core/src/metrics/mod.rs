//! Classification, segmentation and measurement metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::Image;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(pred: &[bool], truth: &[bool]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch(pred.len(), truth.len()));
        }
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn ratio(num: u64, den: u64, what: &'static str) -> Result<f64> {
    if den == 0 {
        return Err(Error::UndefinedMetric(what));
    }
    Ok(num as f64 / den as f64)
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    ratio(c.tp + c.tn, c.total(), "accuracy")
}

pub fn precision(c: &ConfusionCounts) -> Result<f64> {
    ratio(c.tp, c.tp + c.fp, "precision")
}

pub fn recall(c: &ConfusionCounts) -> Result<f64> {
    ratio(c.tp, c.tp + c.fn_, "recall")
}

pub fn f1(c: &ConfusionCounts) -> Result<f64> {
    let p = precision(c)?;
    let r = recall(c)?;
    if p + r == 0.0 {
        return Err(Error::UndefinedMetric("f1"));
    }
    Ok(2.0 * p * r / (p + r))
}

/// Mann-Whitney form of the ROC area: the fraction of (positive, negative)
/// pairs ranked correctly, ties counting one half. Uses mid-ranks, so the
/// result is exact for any input.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::OneClassOnly);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives keeps mid-ranks integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u64;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * n_neg as u64) as f64)
}

/// A set of integer pixel coordinates `(x, y)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PointSet(pub BTreeSet<(i64, i64)>);

impl PointSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pixels with a non-zero value.
    pub fn from_mask(mask: &Image) -> Self {
        let mut s = BTreeSet::new();
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) != 0.0 {
                    s.insert((x as i64, y as i64));
                }
            }
        }
        Self(s)
    }

    /// Members with at least one 4-neighbor outside the set.
    pub fn boundary(&self) -> Self {
        let inside = |p: (i64, i64)| self.0.contains(&p);
        Self(
            self.0
                .iter()
                .copied()
                .filter(|&(x, y)| {
                    !(inside((x - 1, y)) && inside((x + 1, y)) && inside((x, y - 1)) && inside((x, y + 1)))
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.0.iter().copied()
    }
}

impl FromIterator<(i64, i64)> for PointSet {
    fn from_iter<I: IntoIterator<Item = (i64, i64)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// `2|P ∩ T| / (|P| + |T|)`; two empty sets agree perfectly.
pub fn dsc(p: &PointSet, t: &PointSet) -> f64 {
    let den = p.len() + t.len();
    if den == 0 {
        return 1.0;
    }
    let inter = p.0.intersection(&t.0).count();
    2.0 * inter as f64 / den as f64
}

fn dist(a: (i64, i64), b: (i64, i64)) -> f64 {
    ((a.0 - b.0) as f64).hypot((a.1 - b.1) as f64)
}

fn directed_hausdorff(from: &PointSet, to: &PointSet) -> f64 {
    from.iter()
        .map(|a| to.iter().map(|b| dist(a, b)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

pub fn hausdorff(p: &PointSet, t: &PointSet) -> Result<f64> {
    if p.is_empty() || t.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(directed_hausdorff(p, t).max(directed_hausdorff(t, p)))
}

pub fn mae(preds: &[f64], gts: &[f64]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch(preds.len(), gts.len()));
    }
    if preds.is_empty() {
        return Err(Error::Empty);
    }
    let sum: f64 = preds.iter().zip(gts).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / preds.len() as f64)
}

/// The landmarks behind an angle-of-progression measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AopGeometry {
    /// Far end of the symphysis axis.
    pub axis_start: (i64, i64),
    /// Axis end nearest the anchor; the axis ray points here.
    pub axis_end: (i64, i64),
    /// Rightmost symphysis pixel.
    pub anchor: (i64, i64),
    /// Head-contour pixel the tangent passes through.
    pub tangent_point: (i64, i64),
    pub degrees: f64,
}

/// Angle of progression between the pubic-symphysis axis and the tangent
/// from its rightmost point to the fetal-head contour.
pub fn aop(ps_mask: &Image, fh_mask: &Image) -> Result<f64> {
    aop_geometry(ps_mask, fh_mask).map(|g| g.degrees)
}

pub fn aop_geometry(ps_mask: &Image, fh_mask: &Image) -> Result<AopGeometry> {
    let ps = PointSet::from_mask(ps_mask);
    let fh = PointSet::from_mask(fh_mask);
    if ps.len() < 2 {
        return Err(Error::DegenerateMask("symphysis needs at least two pixels"));
    }
    if fh.is_empty() {
        return Err(Error::DegenerateMask("head mask is empty"));
    }

    // Farthest boundary pair; iteration is lexicographic, so the first
    // strict maximum is the lexicographically smallest pair.
    let rim: Vec<(i64, i64)> = ps.boundary().iter().collect();
    let mut best = (rim[0], rim[0]);
    let mut best_d2 = -1;
    for (i, &a) in rim.iter().enumerate() {
        for &b in &rim[i + 1..] {
            let d2 = (a.0 - b.0).pow(2) + (a.1 - b.1).pow(2);
            if d2 > best_d2 {
                best_d2 = d2;
                best = (a, b);
            }
        }
    }

    let anchor = ps
        .iter()
        .max_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("non-empty");
    if fh.0.contains(&anchor) {
        return Err(Error::DegenerateMask("anchor lies inside the head mask"));
    }
    let (a, b) = best;
    let (axis_start, axis_end) = if dist(b, anchor) < dist(a, anchor) { (a, b) } else { (b, a) };
    let axis = ((axis_end.0 - axis_start.0) as f64, (axis_end.1 - axis_start.1) as f64);

    // Angles about the anchor are taken relative to the head centroid so
    // the head never straddles the branch cut; the extreme in the
    // direction of increasing image-y is the inferior support line.
    let n = fh.len() as f64;
    let (cx, cy) = fh
        .iter()
        .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x as f64, sy + y as f64));
    let centre = (cx / n - anchor.0 as f64, cy / n - anchor.1 as f64);
    let rel_angle = |p: (i64, i64)| {
        let v = ((p.0 - anchor.0) as f64, (p.1 - anchor.1) as f64);
        (centre.0 * v.1 - centre.1 * v.0).atan2(centre.0 * v.0 + centre.1 * v.1)
    };
    let mut tangent_point = None;
    let mut best_angle = f64::NEG_INFINITY;
    for p in fh.boundary().iter() {
        let ang = rel_angle(p);
        if ang > best_angle {
            best_angle = ang;
            tangent_point = Some(p);
        }
    }
    let tangent_point = tangent_point.expect("non-empty boundary");
    let tangent = (
        (tangent_point.0 - anchor.0) as f64,
        (tangent_point.1 - anchor.1) as f64,
    );
    let cross = axis.0 * tangent.1 - axis.1 * tangent.0;
    let dot = axis.0 * tangent.0 + axis.1 * tangent.1;
    Ok(AopGeometry {
        axis_start,
        axis_end,
        anchor,
        tangent_point,
        degrees: cross.atan2(dot).abs().to_degrees(),
    })
}

/// Mean and the half-width `1.96 * sd / sqrt(n)` of a 95% interval.
pub fn ci95(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, actual: n });
    }
    let (mean, var) = mean_var(samples);
    Ok((mean, 1.96 * var.sqrt() / (n as f64).sqrt()))
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Welch's two-sided two-sample t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(Error::TooFewSamples { needed: 2, actual: s.len() });
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let x = df / (df + t * t);
    let p_value = statrs::function::beta::checked_beta_reg(df / 2.0, 0.5, x)
        .map_err(|e| Error::NonFinite(format!("t-test: {e}")))?;
    Ok(TTest { t, df, p_value })
}

pub fn t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    welch_t_test(a, b).map(|r| r.p_value)
}

#[cfg(test)]
mod tests;
