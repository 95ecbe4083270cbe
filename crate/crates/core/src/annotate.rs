//! Annotation data model and the quality-assurance rules applied to it:
//! reprojection of smoothed canonical centers, outlier flagging, success-rate
//! curves, correction with replaced-fraction statistics, and filling of
//! missing frames.
//!
//! A frame is flagged (and replaced) when its distance is strictly larger
//! than the threshold, and counted as a success when strictly smaller.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{to_canonical, AlignMethod, AlignmentResult};
use crate::homography::{HomographyError, Point2};
use crate::smooth::{evaluate_at, Series, SmoothError, SmootherSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotateError {
    #[error("length mismatch: expected {expected} frames, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("no frame has both an annotation and a smoothed center")]
    NoEvaluableFrames,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Homography(#[from] HomographyError),
    #[error(transparent)]
    Smooth(#[from] SmoothError),
}

/// Axis-aligned box: top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(c: Point2, w: f64, h: f64) -> Self {
        Self::new(c.x - w / 2.0, c.y - h / 2.0, w, h)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h]
            .iter()
            .all(|v| v.is_finite())
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Same size, new center.
    pub fn recentered(&self, c: Point2) -> Self {
        Self::from_center(c, self.w, self.h)
    }

    /// Grows both sides by `factor` of their length, keeping the center.
    pub fn inflate(&self, factor: f64) -> Self {
        Self::from_center(
            self.center(),
            self.w * (1.0 + factor),
            self.h * (1.0 + factor),
        )
    }

    /// Intersection with `[0, width] x [0, height]`; `None` if empty.
    pub fn clip(&self, width: f64, height: f64) -> Option<Self> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(width);
        let y1 = (self.y + self.h).min(height);
        (x1 > x0 && y1 > y0).then(|| Self::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// Fraction of the box area lying inside the frame.
    pub fn fraction_inside(&self, width: f64, height: f64) -> f64 {
        self.clip(width, height)
            .map_or(0.0, |c| c.area() / self.area())
    }
}

/// Per-frame annotations of one sequence. `absent` marks frames where the
/// dataset states the object is not visible; those are never filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub boxes: Vec<Option<BBox>>,
    pub absent: Vec<bool>,
    pub occluded: Vec<bool>,
}

impl Trajectory {
    pub fn new(boxes: Vec<Option<BBox>>) -> Self {
        let n = boxes.len();
        Self {
            boxes,
            absent: vec![false; n],
            occluded: vec![false; n],
        }
    }

    pub fn with_absent(mut self, absent: Vec<bool>) -> Result<Self, AnnotateError> {
        check_len(self.len(), absent.len())?;
        self.absent = absent;
        Ok(self)
    }

    pub fn with_occluded(mut self, occluded: Vec<bool>) -> Result<Self, AnnotateError> {
        check_len(self.len(), occluded.len())?;
        self.occluded = occluded;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn centers(&self) -> Vec<Option<Point2>> {
        self.boxes.iter().map(|b| b.map(|b| b.center())).collect()
    }

    pub fn present_count(&self) -> usize {
        self.boxes.iter().filter(|b| b.is_some()).count()
    }
}

/// Object centers in frame-0 coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalTrajectory {
    pub points: Vec<Option<Point2>>,
}

impl CanonicalTrajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub threshold: f64,
    pub distances: Vec<Option<f64>>,
    pub flagged: Vec<bool>,
    pub evaluated: usize,
    pub flagged_count: usize,
}

impl OutlierReport {
    pub fn flagged_frames(&self) -> Vec<usize> {
        self.flagged
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionResult {
    pub threshold: f64,
    pub corrected: Trajectory,
    pub replaced_mask: Vec<bool>,
    pub replaced_count: usize,
    pub evaluated: usize,
    pub replaced_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplacedStat {
    pub threshold: f64,
    pub replaced_fraction: f64,
}

fn check_len(expected: usize, got: usize) -> Result<(), AnnotateError> {
    if expected == got {
        Ok(())
    } else {
        Err(AnnotateError::LengthMismatch { expected, got })
    }
}

fn check_threshold(t: f64) -> Result<(), AnnotateError> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(AnnotateError::InvalidThreshold(t))
    }
}

/// Maps canonical points back into each frame's own coordinates.
pub fn reproject(
    smoothed: &CanonicalTrajectory,
    alignment: &AlignmentResult,
) -> Result<Vec<Option<Point2>>, AnnotateError> {
    check_len(alignment.len(), smoothed.len())?;
    smoothed
        .points
        .iter()
        .zip(&alignment.frames)
        .map(|(p, f)| match (p, f.method) {
            (_, AlignMethod::Failed) | (None, _) => Ok(None),
            (Some(p), _) => Ok(Some(f.cumulative.invert()?.apply(*p)?)),
        })
        .collect()
}

/// Distance from each annotation center to the matching reprojected center.
pub fn distances(
    traj: &Trajectory,
    centers: &[Option<Point2>],
) -> Result<Vec<Option<f64>>, AnnotateError> {
    check_len(traj.len(), centers.len())?;
    Ok(traj
        .boxes
        .iter()
        .zip(centers)
        .map(|(b, c)| match (b, c) {
            (Some(b), Some(c)) => Some(b.center().distance(c)),
            _ => None,
        })
        .collect())
}

#[inline]
fn exceeds(d: Option<f64>, threshold: f64) -> bool {
    d.is_some_and(|d| d > threshold)
}

pub fn flag_outliers(d: &[Option<f64>], threshold: f64) -> Result<OutlierReport, AnnotateError> {
    check_threshold(threshold)?;
    let flagged: Vec<bool> = d.iter().map(|&d| exceeds(d, threshold)).collect();
    Ok(OutlierReport {
        threshold,
        distances: d.to_vec(),
        evaluated: d.iter().flatten().count(),
        flagged_count: flagged.iter().filter(|&&f| f).count(),
        flagged,
    })
}

/// Fraction of evaluable frames whose distance is below each threshold.
pub fn success_rate_curve(
    d: &[Option<f64>],
    thresholds: &[f64],
) -> Result<Vec<CurvePoint>, AnnotateError> {
    if thresholds.is_empty() {
        return Err(AnnotateError::EmptyGrid);
    }
    for &t in thresholds {
        check_threshold(t)?;
    }
    let present: Vec<f64> = d.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(AnnotateError::NoEvaluableFrames);
    }
    let n = present.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| CurvePoint {
            threshold: t,
            rate: present.iter().filter(|&&v| v < t).count() as f64 / n,
        })
        .collect())
}

/// Re-centers every box whose distance exceeds `threshold` on its smoothed
/// center. Box sizes are kept and boxes are not clipped to the frame.
pub fn correct(
    traj: &Trajectory,
    centers: &[Option<Point2>],
    threshold: f64,
) -> Result<CorrectionResult, AnnotateError> {
    check_threshold(threshold)?;
    let d = distances(traj, centers)?;
    let mut corrected = traj.clone();
    let mut replaced_mask = vec![false; traj.len()];
    for (i, di) in d.iter().enumerate() {
        if exceeds(*di, threshold) {
            if let (Some(b), Some(c)) = (traj.boxes[i], centers[i]) {
                corrected.boxes[i] = Some(b.recentered(c));
                replaced_mask[i] = true;
            }
        }
    }
    let evaluated = d.iter().flatten().count();
    let replaced_count = replaced_mask.iter().filter(|&&r| r).count();
    Ok(CorrectionResult {
        threshold,
        corrected,
        replaced_mask,
        replaced_count,
        evaluated,
        replaced_fraction: if evaluated == 0 {
            0.0
        } else {
            replaced_count as f64 / evaluated as f64
        },
    })
}

pub fn replaced_stats(
    traj: &Trajectory,
    centers: &[Option<Point2>],
    thresholds: &[f64],
) -> Result<Vec<ReplacedStat>, AnnotateError> {
    if thresholds.is_empty() {
        return Err(AnnotateError::EmptyGrid);
    }
    thresholds
        .iter()
        .map(|&t| {
            correct(traj, centers, t).map(|r| ReplacedStat {
                threshold: t,
                replaced_fraction: r.replaced_fraction,
            })
        })
        .collect()
}

/// Fills frames without an annotation. The center comes from the smoother's
/// local model of the canonical track, reprojected into the frame; the size
/// is interpolated linearly between the nearest annotated frames.
///
/// Frames flagged absent by the dataset, frames whose alignment failed, and
/// frames the smoother cannot reach stay empty.
pub fn extrapolate_missing(
    traj: &Trajectory,
    alignment: &AlignmentResult,
    spec: &SmootherSpec,
) -> Result<Trajectory, AnnotateError> {
    check_len(alignment.len(), traj.len())?;
    let canon = to_canonical(alignment, traj).map_err(|_| AnnotateError::LengthMismatch {
        expected: alignment.len(),
        got: traj.len(),
    })?;
    let xs: Vec<Option<f64>> = canon.points.iter().map(|p| p.map(|p| p.x)).collect();
    let ys: Vec<Option<f64>> = canon.points.iter().map(|p| p.map(|p| p.y)).collect();
    let (sx, sy) = (Series::from_options(&xs), Series::from_options(&ys));

    let mut out = traj.clone();
    for i in 0..traj.len() {
        if traj.boxes[i].is_some() || traj.absent[i] || alignment.is_failed(i) {
            continue;
        }
        let q = [i as i64];
        let (x, y) = match (evaluate_at(&sx, &q, spec), evaluate_at(&sy, &q, spec)) {
            (Ok(x), Ok(y)) => (x[0], y[0]),
            (Err(SmoothError::OutOfRange { .. } | SmoothError::NoSupport(_)), _)
            | (_, Err(SmoothError::OutOfRange { .. } | SmoothError::NoSupport(_))) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e.into()),
        };
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        let c = alignment.frames[i]
            .cumulative
            .invert()?
            .apply(Point2::new(x, y))?;
        if let Some((w, h)) = interpolate_size(&traj.boxes, i) {
            out.boxes[i] = Some(BBox::from_center(c, w, h));
        }
    }
    Ok(out)
}

fn interpolate_size(boxes: &[Option<BBox>], i: usize) -> Option<(f64, f64)> {
    let before = (0..i).rev().find_map(|j| boxes[j].map(|b| (j, b)));
    let after = (i + 1..boxes.len()).find_map(|j| boxes[j].map(|b| (j, b)));
    match (before, after) {
        (Some((j0, b0)), Some((j1, b1))) => {
            let s = (i - j0) as f64 / (j1 - j0) as f64;
            Some((b0.w + s * (b1.w - b0.w), b0.h + s * (b1.h - b0.h)))
        }
        (Some((_, b)), None) | (None, Some((_, b))) => Some((b.w, b.h)),
        (None, None) => None,
    }
}

/// Parses one box per line, `x,y,w,h`, separated by commas and/or
/// whitespace. Lines with non-finite values or a non-positive size (such as
/// `0,0,0,0` or `NaN,NaN,NaN,NaN`) are read as missing annotations.
pub fn parse_annotations(text: &str) -> Result<Trajectory, AnnotateError> {
    let mut boxes = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    let last = lines
        .iter()
        .rposition(|l| !l.trim().is_empty())
        .map_or(0, |p| p + 1);
    for (n, line) in lines[..last].iter().enumerate() {
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 4 {
            return Err(AnnotateError::Parse {
                line: n + 1,
                message: format!("expected 4 values, found {}", fields.len()),
            });
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse::<f64>().map_err(|_| AnnotateError::Parse {
                line: n + 1,
                message: format!("not a number: {f:?}"),
            })?;
        }
        let b = BBox::new(v[0], v[1], v[2], v[3]);
        boxes.push(b.is_valid().then_some(b));
    }
    Ok(Trajectory::new(boxes))
}

/// One `x,y,w,h` line per frame; missing frames are written as `0,0,0,0`.
pub fn format_annotations(traj: &Trajectory) -> String {
    let mut s = String::new();
    for b in &traj.boxes {
        match b {
            Some(b) => s.push_str(&format!("{},{},{},{}\n", b.x, b.y, b.w, b.h)),
            None => s.push_str("0,0,0,0\n"),
        }
    }
    s
}

/// Parses per-frame `0`/`1` flags, separated by newlines, commas or spaces.
pub fn parse_flags(text: &str) -> Result<Vec<bool>, AnnotateError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        for tok in line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
        {
            out.push(match tok {
                "0" => false,
                "1" => true,
                other => {
                    return Err(AnnotateError::Parse {
                        line: n + 1,
                        message: format!("expected 0 or 1, found {other:?}"),
                    })
                }
            });
        }
    }
    Ok(out)
}

pub fn format_flags(flags: &[bool]) -> String {
    flags
        .iter()
        .map(|&f| if f { "1\n" } else { "0\n" })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homography::Homography;
    use crate::smooth::SmoothMethod;
    use proptest::prelude::*;

    fn boxes_at(centers: &[Option<Point2>]) -> Trajectory {
        Trajectory::new(
            centers
                .iter()
                .map(|c| c.map(|c| BBox::from_center(c, 20.0, 10.0)))
                .collect(),
        )
    }

    fn identity_alignment(n: usize) -> AlignmentResult {
        AlignmentResult::from_cumulative(320, 240, &vec![Homography::identity(); n]).unwrap()
    }

    #[test]
    fn bbox_geometry() {
        let b = BBox::new(10.0, 20.0, 40.0, 20.0);
        assert_eq!(b.center(), Point2::new(30.0, 30.0));
        assert_eq!(b.inflate(0.25), BBox::new(5.0, 17.5, 50.0, 25.0));
        assert_eq!(
            BBox::new(-10.0, -10.0, 30.0, 30.0).clip(100.0, 100.0),
            Some(BBox::new(0.0, 0.0, 20.0, 20.0))
        );
        assert_eq!(BBox::new(200.0, 0.0, 10.0, 10.0).clip(100.0, 100.0), None);
        assert!(
            (BBox::new(-5.0, 0.0, 10.0, 10.0).fraction_inside(100.0, 100.0) - 0.5).abs() < 1e-12
        );
        assert!(!BBox::new(0.0, 0.0, 0.0, 5.0).is_valid());
    }

    #[test]
    fn reproject_with_identity_returns_canonical() {
        let pts = vec![
            Some(Point2::new(3.0, 4.0)),
            None,
            Some(Point2::new(-1.0, 8.5)),
        ];
        let out = reproject(
            &CanonicalTrajectory {
                points: pts.clone(),
            },
            &identity_alignment(3),
        )
        .unwrap();
        assert_eq!(out, pts);
    }

    #[test]
    fn reproject_inverts_to_canonical() {
        let cum: Vec<Homography> = (0..12)
            .map(|i| {
                let f = i as f64;
                Homography::similarity(
                    0.01 * f,
                    1.0 + 0.002 * f,
                    Point2::new(160.0, 120.0),
                    -3.0 * f,
                    1.5 * f,
                )
            })
            .collect();
        let mut align = AlignmentResult::from_cumulative(320, 240, &cum).unwrap();
        let traj = boxes_at(
            &(0..12)
                .map(|i| {
                    (i != 4).then(|| Point2::new(100.0 + 7.0 * i as f64, 80.0 - 2.0 * i as f64))
                })
                .collect::<Vec<_>>(),
        );
        let canon = to_canonical(&align, &traj).unwrap();
        let back = reproject(&canon, &align).unwrap();
        for (b, c) in traj.boxes.iter().zip(&back) {
            match (b, c) {
                (Some(b), Some(c)) => assert!(b.center().distance(c) < 1e-6),
                (None, None) => {}
                _ => panic!("presence mismatch"),
            }
        }
        align.fail_from(9);
        let back = reproject(&canon, &align).unwrap();
        assert!(back[9..].iter().all(Option::is_none));
        assert!(reproject(&canon, &identity_alignment(5)).is_err());
    }

    #[test]
    fn distance_examples() {
        let traj = boxes_at(&[
            Some(Point2::new(60.0, 80.0)),
            Some(Point2::new(5.0, 5.0)),
            None,
        ]);
        let d = distances(
            &traj,
            &[
                Some(Point2::new(0.0, 0.0)),
                Some(Point2::new(5.0, 5.0)),
                Some(Point2::new(1.0, 1.0)),
            ],
        )
        .unwrap();
        assert_eq!(d, vec![Some(100.0), Some(0.0), None]);
        assert!(matches!(
            distances(&traj, &[None]),
            Err(AnnotateError::LengthMismatch {
                expected: 3,
                got: 1
            })
        ));
    }

    #[test]
    fn flagging_is_strict() {
        let r = flag_outliers(&[Some(100.0), Some(100.1), None], 100.0).unwrap();
        assert_eq!(r.flagged, vec![false, true, false]);
        assert_eq!((r.evaluated, r.flagged_count), (2, 1));
        let r = flag_outliers(&[None, None], 100.0).unwrap();
        assert_eq!((r.evaluated, r.flagged_count), (0, 0));
        for bad in [0.0, -1.0, f64::NAN] {
            assert!(flag_outliers(&[Some(1.0)], bad).is_err());
        }
    }

    #[test]
    fn success_curve_examples() {
        let c = success_rate_curve(
            &[Some(5.0), Some(15.0), Some(25.0), None],
            &[10.0, 20.0, 30.0],
        )
        .unwrap();
        let rates: Vec<f64> = c.iter().map(|p| p.rate).collect();
        assert_eq!(rates, vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let c = success_rate_curve(&[Some(0.0); 4], &[1e-9, 1.0, 100.0]).unwrap();
        assert!(c.iter().all(|p| p.rate == 1.0));
        // equality counts as failure
        let c = success_rate_curve(&[Some(10.0)], &[10.0]).unwrap();
        assert_eq!(c[0].rate, 0.0);
        assert_eq!(
            success_rate_curve(&[Some(1.0)], &[]),
            Err(AnnotateError::EmptyGrid)
        );
        assert_eq!(
            success_rate_curve(&[None], &[1.0]),
            Err(AnnotateError::NoEvaluableFrames)
        );
    }

    #[test]
    fn correct_replaces_single_outlier() {
        let truth: Vec<Option<Point2>> = (0..100)
            .map(|i| Some(Point2::new(50.0 + i as f64, 60.0)))
            .collect();
        let mut noisy = truth.clone();
        noisy[37] = Some(Point2::new(50.0 + 37.0, 260.0));
        let traj = boxes_at(&noisy);
        let r = correct(&traj, &truth, 100.0).unwrap();
        assert_eq!(r.replaced_count, 1);
        assert!(r.replaced_mask[37]);
        assert!((r.replaced_fraction - 0.01).abs() < 1e-12);
        let b = r.corrected.boxes[37].unwrap();
        assert_eq!((b.w, b.h), (20.0, 10.0));
        assert_eq!(b.center(), truth[37].unwrap());
        for i in (0..100).filter(|&i| i != 37) {
            assert_eq!(r.corrected.boxes[i], traj.boxes[i]);
        }
    }

    #[test]
    fn correct_without_outliers_is_identity() {
        let c: Vec<Option<Point2>> = (0..10).map(|i| Some(Point2::new(i as f64, 3.0))).collect();
        let traj = boxes_at(&c);
        let r = correct(&traj, &c, 5.0).unwrap();
        assert_eq!(r.corrected, traj);
        assert_eq!(r.replaced_fraction, 0.0);
    }

    #[test]
    fn corrected_boxes_may_leave_the_frame() {
        let traj = Trajectory::new(vec![Some(BBox::new(10.0, 10.0, 40.0, 40.0))]);
        let r = correct(&traj, &[Some(Point2::new(-300.0, 30.0))], 100.0).unwrap();
        assert_eq!(
            r.corrected.boxes[0],
            Some(BBox::new(-320.0, 10.0, 40.0, 40.0))
        );
    }

    #[test]
    fn replaced_stats_decrease_with_threshold() {
        let c: Vec<Option<Point2>> = (0..50).map(|i| Some(Point2::new(i as f64, 0.0))).collect();
        let noisy: Vec<Option<Point2>> = c
            .iter()
            .enumerate()
            .map(|(i, p)| p.map(|p| Point2::new(p.x, (i % 37) as f64)))
            .collect();
        let s = replaced_stats(&boxes_at(&noisy), &c, &[30.0, 20.0, 10.0, 5.0, 1e12]).unwrap();
        for w in s.windows(2).take(3) {
            assert!(w[1].replaced_fraction >= w[0].replaced_fraction);
        }
        assert_eq!(s[4].replaced_fraction, 0.0);
    }

    #[test]
    fn extrapolate_keeps_full_annotation() {
        let c: Vec<Option<Point2>> = (0..30).map(|i| Some(Point2::new(i as f64, 5.0))).collect();
        let traj = boxes_at(&c);
        let out =
            extrapolate_missing(&traj, &identity_alignment(30), &SmootherSpec::default()).unwrap();
        assert_eq!(out, traj);
    }

    #[test]
    fn extrapolate_fills_linear_track() {
        let n = 61;
        let line = |i: usize| Point2::new(40.0 + 1.5 * i as f64, 100.0 - 0.7 * i as f64);
        let sparse: Vec<Option<Point2>> = (0..n).map(|i| (i % 5 == 0).then(|| line(i))).collect();
        let mut traj = boxes_at(&sparse);
        traj.boxes[10] = Some(BBox::from_center(line(10), 30.0, 10.0));
        for method in SmoothMethod::ALL {
            if method == SmoothMethod::MovMean || method == SmoothMethod::Gaussian {
                continue;
            }
            let spec = SmootherSpec::new(method);
            let out = extrapolate_missing(&traj, &identity_alignment(n), &spec).unwrap();
            for i in 0..n {
                let b = out.boxes[i].expect("filled");
                assert!(b.center().distance(&line(i)) < 0.5, "{method:?} frame {i}");
            }
            // size interpolated between frames 10 (w 30) and 15 (w 20)
            assert!((out.boxes[12].unwrap().w - 26.0).abs() < 1e-12);
        }
    }

    #[test]
    fn extrapolate_skips_failed_and_absent_frames() {
        let n = 80;
        let sparse: Vec<Option<Point2>> = (0..n)
            .map(|i| (i % 4 == 0 && i < 58).then(|| Point2::new(i as f64, 2.0 * i as f64)))
            .collect();
        let traj = boxes_at(&sparse)
            .with_absent((0..n).map(|i| i == 6).collect())
            .unwrap();
        let mut align = identity_alignment(n);
        align.fail_from(60);
        let out = extrapolate_missing(&traj, &align, &SmootherSpec::default()).unwrap();
        assert!(out.boxes[6].is_none());
        assert!(out.boxes[5].is_some() && out.boxes[59].is_some());
        assert!(out.boxes[60..].iter().all(Option::is_none));
    }

    #[test]
    fn annotation_file_round_trip() {
        let t =
            parse_annotations("1,2,3,4\n5 6\t7 8\n0,0,0,0\nNaN,NaN,NaN,NaN\n1.5, 2.25, 10, 20\n\n")
                .unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t.boxes[1], Some(BBox::new(5.0, 6.0, 7.0, 8.0)));
        assert!(t.boxes[2].is_none() && t.boxes[3].is_none());
        let text = format_annotations(&t);
        assert_eq!(text, "1,2,3,4\n5,6,7,8\n0,0,0,0\n0,0,0,0\n1.5,2.25,10,20\n");
        assert_eq!(parse_annotations(&text).unwrap(), t);
        assert!(matches!(
            parse_annotations("1,2,3\n"),
            Err(AnnotateError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_annotations("1,2,3,4\n1,x,3,4\n"),
            Err(AnnotateError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn flag_file_round_trip() {
        let f = parse_flags("0\n1\n1\n0\n").unwrap();
        assert_eq!(f, vec![false, true, true, false]);
        assert_eq!(parse_flags("0,1,0").unwrap(), vec![false, true, false]);
        assert_eq!(parse_flags(&format_flags(&f)).unwrap(), f);
        assert!(parse_flags("2\n").is_err());
    }

    proptest! {
        #[test]
        fn qa_rules_are_consistent(
            d in prop::collection::vec(prop::option::of(0.0f64..50.0), 1..40),
            taus in prop::collection::vec(0.5f64..60.0, 1..8),
        ) {
            let mut taus = taus;
            taus.sort_by(f64::total_cmp);
            let centers: Vec<Option<Point2>> = d.iter().map(|d| d.map(|_| Point2::new(0.0, 0.0))).collect();
            let traj = Trajectory::new(
                d.iter()
                    .map(|d| Some(BBox::from_center(Point2::new(d.unwrap_or(0.0), 0.0), 4.0, 4.0)))
                    .collect(),
            );
            if d.iter().any(Option::is_some) {
                let curve = success_rate_curve(&d, &taus).unwrap();
                for w in curve.windows(2) {
                    prop_assert!(w[1].rate >= w[0].rate);
                }
            }
            let stats = replaced_stats(&traj, &centers, &taus).unwrap();
            for w in stats.windows(2) {
                prop_assert!(w[1].replaced_fraction <= w[0].replaced_fraction);
            }
            for &t in &taus {
                let dist = distances(&traj, &centers).unwrap();
                let flags = flag_outliers(&dist, t).unwrap();
                let fixed = correct(&traj, &centers, t).unwrap();
                prop_assert_eq!(&flags.flagged, &fixed.replaced_mask);
                for (a, b) in traj.boxes.iter().zip(&fixed.corrected.boxes) {
                    let (a, b) = (a.unwrap(), b.unwrap());
                    prop_assert_eq!((a.w, a.h), (b.w, b.h));
                }
            }
        }
    }
}
