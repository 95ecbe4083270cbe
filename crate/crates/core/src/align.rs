//! Sequence registration: staged RANSAC tracking of keypoint inliers from
//! frame to frame, with ECC on the annotated target area as the fallback when
//! keypoints run short, and cumulative homographies back to frame 0.
//!
//! Pairwise homographies map frame `i` coordinates into frame `i - 1`, so the
//! chain `cumulative(i) = cumulative(i - 1) * pairwise(i)` maps frame `i`
//! into frame 0.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{BBox, CanonicalTrajectory, Trajectory};
use crate::ecc::{ecc_align, EccConfig, LevelTrace};
use crate::features::{
    describe_smoothed, detect, match_descriptors, BriefPattern, Descriptor, FeatureConfig,
    FeatureError, Keypoint,
};
use crate::homography::{
    estimate_ransac, Homography, HomographyError, Point2, PointPair, RansacConfig,
};
use crate::raster::GrayImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {index} is {width}x{height}, expected {expected_width}x{expected_height}")]
    FrameSizeMismatch {
        index: usize,
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error("sequence has {frames} frames but {other} entries")]
    LengthMismatch { frames: usize, other: usize },
    #[error("only {found} matches, need {needed}")]
    InsufficientMatches { found: usize, needed: usize },
    #[error("robust estimation failed: {0}")]
    NoConsensus(#[from] HomographyError),
    #[error("estimate too weak: {inliers} inliers, mean error {mean_error:.2} px")]
    PoorEstimate { inliers: usize, mean_error: f64 },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid alignment configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Which keypoints are validated against a fresh pairwise estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeypointTest {
    /// Keypoints detected in the current frame (default).
    Current,
    /// Keypoints detected in the previous frame, carried forward to their
    /// current-frame counterparts.
    Previous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub keypoint_threshold: usize,
    pub min_inliers: usize,
    pub max_pairwise_reproj: f64,
    /// Relative growth of the previous annotation box used as ECC template.
    pub ecc_template_inflation: f64,
    /// Matches inside the annotated box, grown by this factor, are left out
    /// of the frame-to-frame estimate so the moving object does not drag the
    /// background registration. `None` keeps every match.
    pub object_mask_inflation: Option<f64>,
    pub keypoint_test: KeypointTest,
    /// Largest descriptor distance accepted when validating a keypoint.
    pub max_test_distance: u32,
    pub feature: FeatureConfig,
    pub ransac: RansacConfig,
    pub ecc: EccConfig,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            keypoint_threshold: 20,
            min_inliers: 8,
            max_pairwise_reproj: 4.0,
            ecc_template_inflation: 0.25,
            object_mask_inflation: Some(0.25),
            keypoint_test: KeypointTest::Current,
            max_test_distance: 80,
            feature: FeatureConfig::default(),
            ransac: RansacConfig::default(),
            ecc: EccConfig {
                promote_on_finest: false,
                ..EccConfig::default()
            },
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if self.keypoint_threshold < 4 {
            return Err(AlignError::InvalidConfig("keypoint_threshold must be >= 4"));
        }
        if self.min_inliers < 4 {
            return Err(AlignError::InvalidConfig("min_inliers must be >= 4"));
        }
        if !(self.max_pairwise_reproj > 0.0) {
            return Err(AlignError::InvalidConfig("max_pairwise_reproj must be > 0"));
        }
        if !(self.ecc_template_inflation >= 0.0) {
            return Err(AlignError::InvalidConfig(
                "ecc_template_inflation must be >= 0",
            ));
        }
        self.feature.validate()?;
        self.ransac.validate()?;
        self.ecc
            .validate()
            .map_err(|_| AlignError::InvalidConfig("invalid ECC settings"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMethod {
    First,
    Keypoint,
    Ecc,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAlignment {
    #[serde(rename = "index")]
    pub frame_index: usize,
    pub method: AlignMethod,
    pub pairwise: Homography,
    pub cumulative: Homography,
    #[serde(rename = "inliers")]
    pub inlier_count: usize,
    pub rho: Option<f64>,
    /// Fingerprint of the tracked keypoint set after this frame.
    pub keypoint_state: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecc_trace: Option<Vec<LevelTrace>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<FrameAlignment>,
    pub failed_at: Option<usize>,
}

impl AlignmentResult {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_failed(&self, i: usize) -> bool {
        self.frames[i].method == AlignMethod::Failed
    }

    pub fn count(&self, method: AlignMethod) -> usize {
        self.frames.iter().filter(|f| f.method == method).count()
    }

    /// Builds a result from known frame-to-frame-0 transforms, e.g. a ground
    /// truth camera path. Frame 0 must map to the identity.
    pub fn from_cumulative(
        width: usize,
        height: usize,
        cumulative: &[Homography],
    ) -> Result<Self, HomographyError> {
        let mut frames = Vec::with_capacity(cumulative.len());
        for (i, c) in cumulative.iter().enumerate() {
            let pairwise = if i == 0 {
                Homography::identity()
            } else {
                cumulative[i - 1].invert()?.compose(c)
            };
            frames.push(FrameAlignment {
                frame_index: i,
                method: if i == 0 {
                    AlignMethod::First
                } else {
                    AlignMethod::Keypoint
                },
                pairwise,
                cumulative: *c,
                inlier_count: 0,
                rho: None,
                keypoint_state: 0,
                ecc_trace: None,
            });
        }
        Ok(Self {
            width,
            height,
            frames,
            failed_at: None,
        })
    }

    /// Marks frame `at` and every later frame as failed.
    pub fn fail_from(&mut self, at: usize) {
        if at >= self.frames.len() {
            return;
        }
        let keep = self.frames[at.saturating_sub(1)].cumulative;
        for f in &mut self.frames[at..] {
            f.method = AlignMethod::Failed;
            f.pairwise = Homography::identity();
            f.cumulative = keep;
            f.rho = None;
            f.inlier_count = 0;
        }
        self.failed_at = Some(self.failed_at.map_or(at, |f| f.min(at)));
    }
}

/// Tracked keypoints of one frame: the validated inliers and the full
/// detection, both with descriptors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RsrtState {
    pub inliers: Vec<(Keypoint, Descriptor)>,
    pub detected: Vec<(Keypoint, Descriptor)>,
}

impl RsrtState {
    /// Full detection on `img`; every describable keypoint starts as an inlier.
    pub fn fresh(img: &GrayImage, cfg: &FeatureConfig) -> Result<Self, AlignError> {
        let detected = detect_and_describe(img, cfg)?;
        Ok(Self {
            inliers: detected.clone(),
            detected,
        })
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for set in [&self.inliers, &self.detected] {
            set.len().hash(&mut h);
            for (k, d) in set {
                k.x.to_bits().hash(&mut h);
                k.y.to_bits().hash(&mut h);
                d.hash(&mut h);
            }
        }
        h.finish()
    }
}

fn detect_and_describe(
    img: &GrayImage,
    cfg: &FeatureConfig,
) -> Result<Vec<(Keypoint, Descriptor)>, AlignError> {
    let kps = detect(img, cfg)?;
    let smoothed = img.gaussian_blur(1.0).expect("valid sigma");
    let described = describe_smoothed(&smoothed, &BriefPattern::new(cfg.seed), &kps);
    Ok(described
        .index_map
        .iter()
        .zip(described.descriptors)
        .map(|(&i, d)| (kps[i], d))
        .collect())
}

/// Result of one staged RANSAC step.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStep {
    /// Maps current-frame coordinates into the previous frame.
    pub homography: Homography,
    pub state: RsrtState,
    pub inlier_count: usize,
    pub match_count: usize,
}

/// Spatial hash over keypoint positions for radius queries.
struct Grid<'a> {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
    items: &'a [(Keypoint, Descriptor)],
}

impl<'a> Grid<'a> {
    fn new(items: &'a [(Keypoint, Descriptor)], width: usize, height: usize, cell: f64) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 1;
        let rows = (height as f64 / cell).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, (k, _)) in items.iter().enumerate() {
            let c = ((k.x / cell).max(0.0) as usize).min(cols - 1);
            let r = ((k.y / cell).max(0.0) as usize).min(rows - 1);
            buckets[r * cols + c].push(i);
        }
        Self {
            cell,
            cols,
            rows,
            buckets,
            items,
        }
    }

    /// Nearest item within `radius` of `p` whose descriptor is within `max_distance` of `d`.
    fn nearest(&self, p: Point2, d: &Descriptor, radius: f64, max_distance: u32) -> Option<usize> {
        let c = (p.x / self.cell).floor() as i64;
        let r = (p.y / self.cell).floor() as i64;
        let mut best: Option<(usize, f64)> = None;
        for rr in r - 1..=r + 1 {
            for cc in c - 1..=c + 1 {
                if rr < 0 || cc < 0 || rr >= self.rows as i64 || cc >= self.cols as i64 {
                    continue;
                }
                for &i in &self.buckets[rr as usize * self.cols + cc as usize] {
                    let (k, kd) = &self.items[i];
                    let dist = (k.x - p.x).hypot(k.y - p.y);
                    if dist <= radius
                        && kd.hamming(d) <= max_distance
                        && best.is_none_or(|(_, bd)| dist < bd)
                    {
                        best = Some((i, dist));
                    }
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

const REFINE_RADIUS: i64 = 4;

/// Bilinear samples on the `(2r+1)^2` whole-pixel grid centred on `q`, which
/// all share the weights of `q`. The caller keeps the grid inside the image.
fn sample_patch(img: &GrayImage, q: Point2, r: i64) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let data = img.data();
    let (x0, y0) = (q.x.floor(), q.y.floor());
    let (fx, fy) = (q.x - x0, q.y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut out = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for dy in -r..=r {
        let ya = (y0 + dy) as usize;
        let yb = (ya + 1).min(h - 1);
        for dx in -r..=r {
            let xa = (x0 + dx) as usize;
            let xb = (xa + 1).min(w - 1);
            let top = data[ya * w + xa] * (1.0 - fx) + data[ya * w + xb] * fx;
            let bottom = data[yb * w + xa] * (1.0 - fx) + data[yb * w + xb] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Sub-pixel position in `cur` of the patch around `p` in `prev`, by
/// Gauss-Newton on a pure translation starting at `c`. `None` when the patch
/// is flat, leaves the image, or the estimate wanders more than a pixel.
fn refine_position(prev: &GrayImage, cur: &GrayImage, p: Point2, c: Point2) -> Option<Point2> {
    let r = REFINE_RADIUS as f64;
    let inside = |img: &GrayImage, q: Point2| {
        q.x - r >= 1.0
            && q.y - r >= 1.0
            && q.x + r <= img.width() as f64 - 2.0
            && q.y + r <= img.height() as f64 - 2.0
    };
    if !inside(prev, p) || !inside(cur, c) {
        return None;
    }
    let template = sample_patch(prev, p, REFINE_RADIUS);
    // the current patch carries a one-pixel rim for central differences
    let side = (2 * REFINE_RADIUS + 3) as usize;
    let mut q = c;
    for _ in 0..8 {
        let patch = sample_patch(cur, q, REFINE_RADIUS + 1);
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut k = 0;
        for row in 1..side - 1 {
            for col in 1..side - 1 {
                let i = row * side + col;
                let gx = 0.5 * (patch[i + 1] - patch[i - 1]);
                let gy = 0.5 * (patch[i + side] - patch[i - side]);
                let e = template[k] - patch[i];
                k += 1;
                a11 += gx * gx;
                a12 += gx * gy;
                a22 += gy * gy;
                b1 += gx * e;
                b2 += gy * e;
            }
        }
        let det = a11 * a22 - a12 * a12;
        if det <= 1e-12 * (a11 + a22).powi(2) || det <= 0.0 {
            return None;
        }
        let sx = (a22 * b1 - a12 * b2) / det;
        let sy = (a11 * b2 - a12 * b1) / det;
        q = Point2::new(q.x + sx, q.y + sy);
        if q.distance(&c) > 1.0 || !inside(cur, q) {
            return None;
        }
        if sx.hypot(sy) < 1e-3 {
            break;
        }
    }
    Some(q)
}

/// Image regions whose matches are kept out of the estimate, one per frame of
/// the pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Exclusion {
    pub prev: Option<BBox>,
    pub cur: Option<BBox>,
}

impl Exclusion {
    fn rejects(&self, p: Point2, c: Point2) -> bool {
        let inside = |b: &Option<BBox>, q: Point2| {
            b.is_some_and(|b| q.x >= b.x && q.x <= b.x + b.w && q.y >= b.y && q.y <= b.y + b.h)
        };
        inside(&self.prev, p) || inside(&self.cur, c)
    }
}

/// One staged RANSAC step from `prev_img` (tracked by `state`) to `cur_img`.
pub fn align_pair_rsrt(
    state: &RsrtState,
    prev_img: &GrayImage,
    cur_img: &GrayImage,
    cfg: &AlignConfig,
) -> Result<PairStep, AlignError> {
    align_pair_rsrt_excluding(state, prev_img, cur_img, &Exclusion::default(), cfg)
}

/// [`align_pair_rsrt`] with matches inside `exclude` left out of the robust
/// estimate. The match count tested against the keypoint threshold includes
/// them.
pub fn align_pair_rsrt_excluding(
    state: &RsrtState,
    prev_img: &GrayImage,
    cur_img: &GrayImage,
    exclude: &Exclusion,
    cfg: &AlignConfig,
) -> Result<PairStep, AlignError> {
    let current = detect_and_describe(cur_img, &cfg.feature)?;
    let prev_desc: Vec<Descriptor> = state.inliers.iter().map(|(_, d)| *d).collect();
    let cur_desc: Vec<Descriptor> = current.iter().map(|(_, d)| *d).collect();
    let matches = match_descriptors(&prev_desc, &cur_desc, &cfg.feature);
    if matches.len() < cfg.keypoint_threshold {
        return Err(AlignError::InsufficientMatches {
            found: matches.len(),
            needed: cfg.keypoint_threshold,
        });
    }
    let pairs: Vec<PointPair> = matches
        .iter()
        .filter_map(|m| {
            let (p, _) = state.inliers[m.idx_a];
            let (c, _) = current[m.idx_b];
            let (p, c) = (Point2::new(p.x, p.y), Point2::new(c.x, c.y));
            (!exclude.rejects(p, c))
                .then(|| PointPair::new(refine_position(prev_img, cur_img, p, c).unwrap_or(c), p))
        })
        .collect();
    let est = estimate_ransac(&pairs, &cfg.ransac)?;
    let mean_error = est.mean_inlier_error(&pairs);
    if est.inlier_count < cfg.min_inliers || mean_error > cfg.max_pairwise_reproj {
        return Err(AlignError::PoorEstimate {
            inliers: est.inlier_count,
            mean_error,
        });
    }
    let h = est.homography;
    let radius = cfg.max_pairwise_reproj;

    let mut passed = vec![false; current.len()];
    match cfg.keypoint_test {
        KeypointTest::Current => {
            let grid = Grid::new(&state.detected, prev_img.width(), prev_img.height(), radius);
            for (flag, (k, d)) in passed.iter_mut().zip(&current) {
                if let Ok(p) = h.apply(Point2::new(k.x, k.y)) {
                    *flag = grid.nearest(p, d, radius, cfg.max_test_distance).is_some();
                }
            }
        }
        KeypointTest::Previous => {
            let inv = h.invert()?;
            let grid = Grid::new(&current, cur_img.width(), cur_img.height(), radius);
            for (k, d) in &state.detected {
                if let Ok(p) = inv.apply(Point2::new(k.x, k.y)) {
                    if let Some(j) = grid.nearest(p, d, radius, cfg.max_test_distance) {
                        passed[j] = true;
                    }
                }
            }
        }
    }
    let inliers = current
        .iter()
        .zip(&passed)
        .filter(|(_, &p)| p)
        .map(|(kd, _)| *kd)
        .collect();
    Ok(PairStep {
        homography: h,
        state: RsrtState {
            inliers,
            detected: current,
        },
        inlier_count: est.inlier_count,
        match_count: matches.len(),
    })
}

struct EccStep {
    pairwise: Homography,
    rho: f64,
    trace: Vec<LevelTrace>,
}

/// Mean squared gradient magnitude inside `region`.
fn gradient_energy(img: &GrayImage, region: &BBox) -> f64 {
    let x0 = region.x.floor().max(1.0) as usize;
    let y0 = region.y.floor().max(1.0) as usize;
    let x1 = ((region.x + region.w).ceil() as usize).min(img.width() - 1);
    let y1 = ((region.y + region.h).ceil() as usize).min(img.height() - 1);
    let (mut sum, mut n) = (0.0, 0usize);
    for y in y0..y1 {
        for x in x0..x1 {
            let gx = 0.5 * (img.get(x + 1, y) - img.get(x - 1, y));
            let gy = 0.5 * (img.get(x, y + 1) - img.get(x, y - 1));
            sum += gx * gx + gy * gy;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

const BLUR_RATIO: f64 = 1.5;
const BLUR_CANDIDATES: [f64; 10] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0];

/// Blurs the sharper of the two frames until the gradient energy over the
/// template region matches the other one, so that a sharp frame and a
/// motion-blurred frame are compared at the same scale.
fn equalize_blur(prev: &GrayImage, cur: &GrayImage, region: &BBox) -> (GrayImage, GrayImage) {
    let (ep, ec) = (gradient_energy(prev, region), gradient_energy(cur, region));
    if !(ep > 0.0 && ec > 0.0) || (ep / ec).max(ec / ep) < BLUR_RATIO {
        return (prev.clone(), cur.clone());
    }
    let (sharp, goal) = if ep > ec { (prev, ec) } else { (cur, ep) };
    let best = BLUR_CANDIDATES
        .iter()
        .map(|&s| sharp.gaussian_blur(s).expect("valid sigma"))
        .min_by(|a, b| {
            let da = (gradient_energy(a, region) / goal).ln().abs();
            let db = (gradient_energy(b, region) / goal).ln().abs();
            da.total_cmp(&db)
        })
        .expect("non-empty candidates");
    if ep > ec {
        (best, cur.clone())
    } else {
        (prev.clone(), best)
    }
}

fn ecc_fallback(
    prev: &GrayImage,
    cur: &GrayImage,
    boxes: &Trajectory,
    i: usize,
    last_pairwise: &Homography,
    cfg: &AlignConfig,
) -> Option<EccStep> {
    let region = boxes.boxes[i - 1]?
        .inflate(cfg.ecc_template_inflation)
        .clip(prev.width() as f64, prev.height() as f64)?;
    let (prev, cur) = equalize_blur(prev, cur, &region);
    let attempt = |init: &Homography| -> Option<EccStep> {
        let res = ecc_align(&prev, &cur, &region, init, &cfg.ecc).ok()?;
        if res.rho < cfg.ecc.min_rho {
            return None;
        }
        Some(EccStep {
            pairwise: res.warp.invert().ok()?,
            rho: res.rho,
            trace: res.trace,
        })
    };
    // the ECC warp maps the previous frame into the current one
    let init = last_pairwise.invert().unwrap_or_default();
    attempt(&init).or_else(|| {
        if init == Homography::identity() {
            None
        } else {
            attempt(&Homography::identity())
        }
    })
}

/// Registers every frame to frame 0. Alignment failures are recorded in the
/// result: the failing frame and everything after it are tagged `Failed`.
pub fn align_sequence(
    frames: &[GrayImage],
    boxes: &Trajectory,
    cfg: &AlignConfig,
) -> Result<AlignmentResult, AlignError> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(AlignError::TooFewFrames(frames.len()));
    }
    if boxes.len() != frames.len() {
        return Err(AlignError::LengthMismatch {
            frames: frames.len(),
            other: boxes.len(),
        });
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    if let Some((index, f)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.width() != w || f.height() != h)
    {
        return Err(AlignError::FrameSizeMismatch {
            index,
            width: f.width(),
            height: f.height(),
            expected_width: w,
            expected_height: h,
        });
    }

    let mut state = RsrtState::fresh(&frames[0], &cfg.feature)?;
    // set after an ECC step: the stored state then describes an older frame
    let mut stale = false;
    let mut out = Vec::with_capacity(frames.len());
    out.push(FrameAlignment {
        frame_index: 0,
        method: AlignMethod::First,
        pairwise: Homography::identity(),
        cumulative: Homography::identity(),
        inlier_count: state.inliers.len(),
        rho: None,
        keypoint_state: state.fingerprint(),
        ecc_trace: None,
    });
    let mut failed_at = None;

    for i in 1..frames.len() {
        let last = out.last().expect("frame 0 is always present");
        let (last_cumulative, last_pairwise) = (last.cumulative, last.pairwise);
        if failed_at.is_some() {
            out.push(failed_frame(i, last_cumulative, state.fingerprint()));
            continue;
        }
        let (prev, cur) = (&frames[i - 1], &frames[i]);
        let exclude = match cfg.object_mask_inflation {
            Some(f) => Exclusion {
                prev: boxes.boxes[i - 1].map(|b| b.inflate(f)),
                cur: boxes.boxes[i].map(|b| b.inflate(f)),
            },
            None => Exclusion::default(),
        };
        let rsrt = if stale {
            RsrtState::fresh(prev, &cfg.feature)
                .and_then(|fresh| align_pair_rsrt_excluding(&fresh, prev, cur, &exclude, cfg))
        } else {
            align_pair_rsrt_excluding(&state, prev, cur, &exclude, cfg)
        };
        let frame = match rsrt {
            Ok(step) => {
                state = step.state;
                stale = false;
                FrameAlignment {
                    frame_index: i,
                    method: AlignMethod::Keypoint,
                    pairwise: step.homography,
                    cumulative: last_cumulative.compose(&step.homography),
                    inlier_count: step.inlier_count,
                    rho: None,
                    keypoint_state: state.fingerprint(),
                    ecc_trace: None,
                }
            }
            Err(_) => match ecc_fallback(prev, cur, boxes, i, &last_pairwise, cfg) {
                Some(step) => {
                    stale = true;
                    FrameAlignment {
                        frame_index: i,
                        method: AlignMethod::Ecc,
                        pairwise: step.pairwise,
                        cumulative: last_cumulative.compose(&step.pairwise),
                        inlier_count: 0,
                        rho: Some(step.rho),
                        keypoint_state: state.fingerprint(),
                        ecc_trace: Some(step.trace),
                    }
                }
                None => {
                    failed_at = Some(i);
                    failed_frame(i, last_cumulative, state.fingerprint())
                }
            },
        };
        out.push(frame);
    }
    Ok(AlignmentResult {
        width: w,
        height: h,
        frames: out,
        failed_at,
    })
}

fn failed_frame(i: usize, cumulative: Homography, fingerprint: u64) -> FrameAlignment {
    FrameAlignment {
        frame_index: i,
        method: AlignMethod::Failed,
        pairwise: Homography::identity(),
        cumulative,
        inlier_count: 0,
        rho: None,
        keypoint_state: fingerprint,
        ecc_trace: None,
    }
}

/// Maps annotation centers into frame-0 coordinates.
pub fn to_canonical(
    alignment: &AlignmentResult,
    traj: &Trajectory,
) -> Result<CanonicalTrajectory, AlignError> {
    if alignment.len() != traj.len() {
        return Err(AlignError::LengthMismatch {
            frames: alignment.len(),
            other: traj.len(),
        });
    }
    let points = alignment
        .frames
        .iter()
        .zip(&traj.boxes)
        .map(|(f, b)| match (f.method, b) {
            (AlignMethod::Failed, _) | (_, None) => None,
            (_, Some(b)) => f.cumulative.apply(b.center()).ok(),
        })
        .collect();
    Ok(CanonicalTrajectory { points })
}
