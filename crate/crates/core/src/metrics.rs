//! Saliency evaluation: PLCC, ROC/AUC and NSS per frame, and the
//! frame → sequence → dataset aggregation.
//!
//! Maps are flattened `f64` slices of equal length. Ground truth passed to
//! AUC and NSS is binary: any value `>= 0.5` counts as positive. Statistics
//! are population statistics (divisor `N`).

use std::fmt;
use std::io::Write;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor5::Shape5;

/// Number of threshold steps; thresholds are `i / ROC_STEPS` for
/// `i = 0..=ROC_STEPS`.
pub const ROC_STEPS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Degenerate {
    ConstantSaliency,
    ConstantGt,
    EmptyGt,
    FullGt,
}

impl Degenerate {
    pub fn as_str(self) -> &'static str {
        match self {
            Degenerate::ConstantSaliency => "constant_saliency",
            Degenerate::ConstantGt => "constant_gt",
            Degenerate::EmptyGt => "empty_gt",
            Degenerate::FullGt => "full_gt",
        }
    }
}

/// One frame's scores; `None` marks a metric that is undefined on this frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScore {
    pub plcc: Option<f64>,
    pub auc: Option<f64>,
    pub nss: Option<f64>,
    pub flags: Vec<Degenerate>,
}

impl FrameScore {
    pub fn flags_string(&self) -> String {
        self.flags
            .iter()
            .map(|f| f.as_str())
            .collect::<Vec<_>>()
            .join("|")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Points ordered by descending threshold; the first threshold lies above
/// every map value in `[0, 1]` and the last is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

fn check_len(s: &[f64], g: &[f64]) -> Result<()> {
    if s.len() != g.len() {
        let shape = |n: usize| Shape5::new(1, 1, 1, n.max(1), 1).unwrap();
        return Err(Error::ShapeMismatch {
            op: "metrics",
            left: shape(s.len()),
            right: shape(g.len()),
        });
    }
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn is_constant(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

fn is_positive(g: f64) -> bool {
    g >= 0.5
}

/// Pearson correlation `cov(s, g) / (σ_s σ_g)`. `None` when either map is
/// constant. Not clamped: the result spans `[−1, 1]`.
pub fn plcc(s: &[f64], g: &[f64]) -> Result<Option<f64>> {
    check_len(s, g)?;
    if s.len() < 2 {
        return Ok(None);
    }
    if is_constant(s) || is_constant(g) {
        return Ok(None);
    }
    let (ms, ss) = mean_std(s);
    let (mg, sg) = mean_std(g);
    let n = s.len() as f64;
    let cov = s
        .iter()
        .zip(g)
        .map(|(a, b)| (a - ms) * (b - mg))
        .sum::<f64>()
        / n;
    Ok(Some(cov / (ss * sg)))
}

/// The ROC sweep `M = [s ≥ t]` with FPR `|M ∧ ¬G| / |¬G|` and TPR
/// `|M ∧ G| / |G|`, and its trapezoidal area with `(0,0)` and `(1,1)`
/// closing the curve. The area is `None` unless both classes are present.
pub fn roc_and_auc(s: &[f64], g: &[f64]) -> Result<(RocCurve, Option<f64>)> {
    check_len(s, g)?;
    let pos = g.iter().filter(|&&v| is_positive(v)).count();
    let neg = g.len() - pos;
    let thresholds = std::iter::once((ROC_STEPS + 1) as f64 / ROC_STEPS as f64)
        .chain((0..=ROC_STEPS).rev().map(|i| i as f64 / ROC_STEPS as f64));

    let mut points = Vec::with_capacity(ROC_STEPS + 2);
    for t in thresholds {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (&sv, &gv) in s.iter().zip(g) {
            if sv >= t {
                if is_positive(gv) {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        points.push(RocPoint {
            threshold: t,
            fpr: ratio(fp, neg),
            tpr: ratio(tp, pos),
        });
    }
    let curve = RocCurve { points };
    let auc = (pos > 0 && neg > 0).then(|| curve_area(&curve));
    Ok((curve, auc))
}

/// Trapezoidal area under `(fpr, tpr)` in curve order, closed by `(0,0)`
/// and `(1,1)`.
pub fn curve_area(curve: &RocCurve) -> f64 {
    let mut pts = Vec::with_capacity(curve.points.len() + 2);
    pts.push((0.0, 0.0));
    pts.extend(curve.points.iter().map(|p| (p.fpr, p.tpr)));
    pts.push((1.0, 1.0));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Mean of the standardized saliency `(s − μ_s)/σ_s` over GT-positive
/// pixels. `None` when there are no positives or `s` is constant.
pub fn nss(s: &[f64], g: &[f64]) -> Result<Option<f64>> {
    check_len(s, g)?;
    let pos: Vec<f64> = s
        .iter()
        .zip(g)
        .filter(|(_, &gv)| is_positive(gv))
        .map(|(&sv, _)| sv)
        .collect();
    if pos.is_empty() {
        return Ok(None);
    }
    if is_constant(s) {
        return Ok(None);
    }
    let (mu, sigma) = mean_std(s);
    Ok(Some(
        pos.iter().map(|v| (v - mu) / sigma).sum::<f64>() / pos.len() as f64,
    ))
}

/// All three metrics plus the degeneracy flags for one frame.
pub fn score_frame(s: &[f64], g: &[f64]) -> Result<(FrameScore, RocCurve)> {
    check_len(s, g)?;
    let mut flags = Vec::new();
    if is_constant(s) {
        flags.push(Degenerate::ConstantSaliency);
    }
    if is_constant(g) {
        flags.push(Degenerate::ConstantGt);
    }
    let pos = g.iter().filter(|&&v| is_positive(v)).count();
    if pos == 0 {
        flags.push(Degenerate::EmptyGt);
    }
    if pos == g.len() {
        flags.push(Degenerate::FullGt);
    }
    let (curve, auc) = roc_and_auc(s, g)?;
    let score = FrameScore {
        plcc: plcc(s, g)?,
        auc,
        nss: nss(s, g)?,
        flags,
    };
    Ok((score, curve))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanScores {
    pub plcc: Option<f64>,
    pub auc: Option<f64>,
    pub nss: Option<f64>,
}

/// Frames excluded from each metric's mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Excluded {
    pub plcc: usize,
    pub auc: usize,
    pub nss: usize,
}

impl fmt::Display for Excluded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = [("plcc", self.plcc), ("auc", self.auc), ("nss", self.nss)]
            .iter()
            .filter(|(_, n)| *n > 0)
            .map(|(m, n)| format!("excluded_{m}={n}"))
            .collect();
        write!(f, "{}", parts.join("|"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceReport {
    pub id: String,
    pub frames: Vec<(String, FrameScore)>,
    pub mean: MeanScores,
    pub excluded: Excluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub sequences: Vec<SequenceReport>,
    /// Unweighted mean of the defined sequence means.
    pub dataset: MeanScores,
    pub excluded: Excluded,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut missing) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => missing += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), missing)
}

/// A frame to aggregate: sequence id, frame id and its score.
pub type ScoredFrame = (String, String, FrameScore);

/// Groups frames by sequence in first-appearance order, averages each
/// metric over the frames where it is defined, then averages sequences.
pub fn aggregate(frames: impl IntoIterator<Item = ScoredFrame>) -> MetricReport {
    let mut groups: IndexMap<String, Vec<(String, FrameScore)>> = IndexMap::new();
    for (seq, frame, score) in frames {
        groups.entry(seq).or_default().push((frame, score));
    }
    let mut excluded = Excluded::default();
    let sequences: Vec<SequenceReport> = groups
        .into_iter()
        .map(|(id, frames)| {
            let (plcc, ep) = mean_defined(frames.iter().map(|f| f.1.plcc));
            let (auc, ea) = mean_defined(frames.iter().map(|f| f.1.auc));
            let (nss, en) = mean_defined(frames.iter().map(|f| f.1.nss));
            excluded.plcc += ep;
            excluded.auc += ea;
            excluded.nss += en;
            SequenceReport {
                id,
                frames,
                mean: MeanScores { plcc, auc, nss },
                excluded: Excluded {
                    plcc: ep,
                    auc: ea,
                    nss: en,
                },
            }
        })
        .collect();
    let dataset = MeanScores {
        plcc: mean_defined(sequences.iter().map(|s| s.mean.plcc)).0,
        auc: mean_defined(sequences.iter().map(|s| s.mean.auc)).0,
        nss: mean_defined(sequences.iter().map(|s| s.mean.nss)).0,
    };
    MetricReport {
        sequences,
        dataset,
        excluded,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl MetricReport {
    /// `level,id,plcc,auc,nss,flags` rows: every frame, then every sequence,
    /// then the dataset row with id `all`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "level,id,plcc,auc,nss,flags")?;
        for seq in &self.sequences {
            for (id, f) in &seq.frames {
                writeln!(
                    out,
                    "frame,{id},{},{},{},{}",
                    fmt_opt(f.plcc),
                    fmt_opt(f.auc),
                    fmt_opt(f.nss),
                    f.flags_string()
                )?;
            }
        }
        for seq in &self.sequences {
            let m = seq.mean;
            writeln!(
                out,
                "sequence,{},{},{},{},{}",
                seq.id,
                fmt_opt(m.plcc),
                fmt_opt(m.auc),
                fmt_opt(m.nss),
                seq.excluded
            )?;
        }
        let m = self.dataset;
        writeln!(
            out,
            "dataset,all,{},{},{},{}",
            fmt_opt(m.plcc),
            fmt_opt(m.auc),
            fmt_opt(m.nss),
            self.excluded
        )
    }
}

/// Pointwise mean of curves sharing one threshold grid.
pub fn mean_curve<'a>(curves: impl IntoIterator<Item = &'a RocCurve>) -> Option<RocCurve> {
    let mut iter = curves.into_iter();
    let first = iter.next()?;
    let mut acc: Vec<RocPoint> = first.points.clone();
    let mut n = 1usize;
    for c in iter {
        for (a, p) in acc.iter_mut().zip(&c.points) {
            a.fpr += p.fpr;
            a.tpr += p.tpr;
        }
        n += 1;
    }
    for a in acc.iter_mut() {
        a.fpr /= n as f64;
        a.tpr /= n as f64;
    }
    Some(RocCurve { points: acc })
}

impl RocCurve {
    /// `threshold,fpr,tpr`, six decimals, descending threshold.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "threshold,fpr,tpr")?;
        for p in &self.points {
            writeln!(out, "{:.6},{:.6},{:.6}", p.threshold, p.fpr, p.tpr)?;
        }
        Ok(())
    }
}
