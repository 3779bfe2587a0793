//! Hard segmentation metrics on binary masks.
//!
//! Every ratio returns `None` when its denominator is zero; that marker is
//! carried through rows and CSV output and only [`aggregate`] decides what
//! to do with it.

use std::fmt;

use crate::error::{Error, Result};
use crate::mask::Mask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Both masks empty.
    pub fn is_empty_match(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }
}

pub fn confusion(pred: &Mask, truth: &Mask) -> Result<ConfusionCounts> {
    check_dims("confusion", pred, truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn check_dims(op: &'static str, a: &Mask, b: &Mask) -> Result<()> {
    if a.height() != b.height() {
        return Err(Error::shape(op, "height", a.height(), b.height()));
    }
    if a.width() != b.width() {
        return Err(Error::shape(op, "width", a.width(), b.width()));
    }
    Ok(())
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den != 0).then(|| num as f64 / den as f64)
}

/// `2TP / (2TP + FP + FN)`.
pub fn dsc(c: &ConfusionCounts) -> Option<f64> {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

/// `TP / (TP + (FP + FN) / 2)`, evaluated with the halves cleared so it is
/// bit-identical to [`dsc`].
pub fn f1(c: &ConfusionCounts) -> Option<f64> {
    ratio(2 * c.tp, 2 * c.tp + (c.fp + c.fn_))
}

/// `TP / (TP + FP + FN)`.
pub fn iou(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fp + c.fn_)
}

/// `TP / (TP + FN)`.
pub fn sensitivity(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fn_)
}

/// `TP / (TP + FP)`.
pub fn precision(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.tp, c.tp + c.fp)
}

fn sq_dist(a: (i64, i64), b: (i64, i64)) -> i64 {
    let dr = a.0 - b.0;
    let dc = a.1 - b.1;
    dr * dr + dc * dc
}

/// `max_{x∈X} min_{y∈Y} |x − y|`; `None` if either set is empty.
///
/// Works on exact integer squared distances. The inner scan stops as soon as
/// some `y` is closer than the running maximum, since that `x` can no longer
/// raise it.
pub fn directed_hausdorff(xs: &[(i64, i64)], ys: &[(i64, i64)]) -> Option<f64> {
    if xs.is_empty() || ys.is_empty() {
        return None;
    }
    let mut best: i64 = 0;
    for &x in xs {
        let mut nearest = i64::MAX;
        for &y in ys {
            let d = sq_dist(x, y);
            if d < nearest {
                nearest = d;
                if nearest <= best {
                    break;
                }
            }
        }
        best = best.max(nearest);
    }
    Some((best as f64).sqrt())
}

pub fn hausdorff(xs: &[(i64, i64)], ys: &[(i64, i64)]) -> Option<f64> {
    Some(directed_hausdorff(xs, ys)?.max(directed_hausdorff(ys, xs)?))
}

/// Which pixels form the Hausdorff point sets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HdPoints {
    #[default]
    Foreground,
    Boundary,
}

fn point_set(m: &Mask, kind: HdPoints) -> Vec<(i64, i64)> {
    match kind {
        HdPoints::Foreground => m.points(),
        HdPoints::Boundary => m.boundary_points(),
    }
}

pub fn mask_hausdorff(pred: &Mask, truth: &Mask, kind: HdPoints) -> Result<Option<f64>> {
    check_dims("mask_hausdorff", pred, truth)?;
    Ok(hausdorff(&point_set(pred, kind), &point_set(truth, kind)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub volume_id: String,
    pub slice_index: usize,
    pub dsc: Option<f64>,
    pub iou: Option<f64>,
    pub hd: Option<f64>,
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub counts: ConfusionCounts,
}

impl MetricsRow {
    /// Builds a row from counts alone; `hd` must be supplied separately.
    pub fn from_counts(volume_id: &str, slice_index: usize, counts: ConfusionCounts, hd: Option<f64>) -> Self {
        MetricsRow {
            volume_id: volume_id.to_string(),
            slice_index,
            dsc: dsc(&counts),
            iou: iou(&counts),
            hd,
            sensitivity: sensitivity(&counts),
            precision: precision(&counts),
            f1: f1(&counts),
            counts,
        }
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Dsc => self.dsc,
            Metric::Iou => self.iou,
            Metric::Hd => self.hd,
            Metric::Sensitivity => self.sensitivity,
            Metric::Precision => self.precision,
            Metric::F1 => self.f1,
        }
    }
}

/// All metrics for one slice, Hausdorff over foreground pixels.
pub fn evaluate_pair(pred: &Mask, truth: &Mask, volume_id: &str, slice_index: usize) -> Result<MetricsRow> {
    evaluate_pair_with(pred, truth, volume_id, slice_index, HdPoints::Foreground)
}

pub fn evaluate_pair_with(
    pred: &Mask,
    truth: &Mask,
    volume_id: &str,
    slice_index: usize,
    hd_points: HdPoints,
) -> Result<MetricsRow> {
    let counts = confusion(pred, truth)?;
    let hd = mask_hausdorff(pred, truth, hd_points)?;
    Ok(MetricsRow::from_counts(volume_id, slice_index, counts, hd))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Dsc,
    Iou,
    Hd,
    Sensitivity,
    Precision,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Dsc,
        Metric::Iou,
        Metric::Hd,
        Metric::Sensitivity,
        Metric::Precision,
        Metric::F1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Dsc => "dsc",
            Metric::Iou => "iou",
            Metric::Hd => "hd",
            Metric::Sensitivity => "sensitivity",
            Metric::Precision => "precision",
            Metric::F1 => "f1",
        }
    }

    /// Value assigned to a both-empty slice under [`AggMode::CountEmptyMatchAsOne`].
    fn empty_match_value(self) -> f64 {
        match self {
            Metric::Hd => 0.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How undefined values enter the mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggMode {
    /// Mode A: average only defined values.
    ExcludeUndefined,
    /// Mode B: both-empty slices score 1 (HD 0) first, then as mode A.
    CountEmptyMatchAsOne,
}

impl AggMode {
    pub fn label(self) -> &'static str {
        match self {
            AggMode::ExcludeUndefined => "modeA",
            AggMode::CountEmptyMatchAsOne => "modeB",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricStat {
    /// `None` when no row contributed.
    pub mean: Option<f64>,
    pub n_used: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mode: AggMode,
    pub n_rows: usize,
    pub stats: Vec<(Metric, MetricStat)>,
}

impl Summary {
    pub fn get(&self, metric: Metric) -> MetricStat {
        self.stats
            .iter()
            .find(|(m, _)| *m == metric)
            .map(|(_, s)| *s)
            .expect("summary holds every metric")
    }

    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.get(metric).mean
    }
}

/// Per-metric means in row order.
pub fn aggregate(rows: &[MetricsRow], mode: AggMode) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::invalid("aggregate", "no rows to aggregate"));
    }
    let stats = Metric::ALL
        .iter()
        .map(|&metric| {
            let mut sum = 0.0;
            let mut n_used = 0;
            for row in rows {
                let value = match (mode, row.counts.is_empty_match()) {
                    (AggMode::CountEmptyMatchAsOne, true) => Some(metric.empty_match_value()),
                    _ => row.get(metric),
                };
                if let Some(v) = value {
                    sum += v;
                    n_used += 1;
                }
            }
            let mean = (n_used > 0).then(|| sum / n_used as f64);
            (metric, MetricStat { mean, n_used })
        })
        .collect();
    Ok(Summary {
        mode,
        n_rows: rows.len(),
        stats,
    })
}
