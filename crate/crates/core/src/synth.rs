//! Synthetic scenes with known ground truth: a value-noise background seen
//! through a random-walk camera, a textured rectangle moving along a smooth
//! path, and simulated human annotations (Gaussian jitter plus sparse large
//! outliers).
//!
//! World coordinates are the coordinates of frame 0. `true_camera[i]` maps
//! frame `i` pixels into frame 0, so it is directly comparable with the
//! cumulative homographies produced by alignment.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{AlignMethod, AlignmentResult};
use crate::annotate::{BBox, Trajectory};
use crate::homography::{frame_corners, Homography, HomographyError, Point2};
use crate::raster::{GrayImage, RasterError};

/// Minimum share of the object box that must stay inside every frame.
pub const MIN_INSIDE_FRACTION: f64 = 0.7;
const MAX_PLACEMENT_ATTEMPTS: usize = 500;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("object left the frame in all {0} sampled camera paths")]
    Placement(usize),
    #[error("length mismatch: scenario has {expected} frames, result has {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Homography(#[from] HomographyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraWalk {
    /// Per-frame translation standard deviation, pixels.
    pub translation_sigma: f64,
    /// Per-frame rotation standard deviation, degrees.
    pub rotation_sigma_deg: f64,
    /// Per-frame log-scale standard deviation.
    pub scale_sigma: f64,
    /// Per-frame translations are clamped to this length.
    pub max_step: f64,
}

impl Default for CameraWalk {
    fn default() -> Self {
        Self {
            translation_sigma: 0.0,
            rotation_sigma_deg: 0.0,
            scale_sigma: 0.0,
            max_step: 8.0,
        }
    }
}

impl CameraWalk {
    pub fn is_static(&self) -> bool {
        self.translation_sigma == 0.0 && self.rotation_sigma_deg == 0.0 && self.scale_sigma == 0.0
    }
}

/// Object center in world coordinates as a function of the frame index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectPath {
    Line {
        start: [f64; 2],
        velocity: [f64; 2],
    },
    Sinusoid {
        start: [f64; 2],
        velocity: [f64; 2],
        amplitude: [f64; 2],
        period: f64,
    },
    /// Catmull-Rom curve through `(frame, x, y)` knots, held constant
    /// outside the knot range.
    Spline {
        knots: Vec<[f64; 3]>,
    },
}

impl ObjectPath {
    pub fn at(&self, t: f64) -> Point2 {
        match self {
            ObjectPath::Line { start, velocity } => {
                Point2::new(start[0] + velocity[0] * t, start[1] + velocity[1] * t)
            }
            ObjectPath::Sinusoid {
                start,
                velocity,
                amplitude,
                period,
            } => {
                let s = (2.0 * std::f64::consts::PI * t / period).sin();
                Point2::new(
                    start[0] + velocity[0] * t + amplitude[0] * s,
                    start[1] + velocity[1] * t + amplitude[1] * s,
                )
            }
            ObjectPath::Spline { knots } => catmull_rom(knots, t),
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        match self {
            ObjectPath::Sinusoid { period, .. } if !(*period > 0.0) => {
                bad("sinusoid period must be positive")
            }
            ObjectPath::Spline { knots } if knots.len() < 2 => bad("spline needs at least 2 knots"),
            ObjectPath::Spline { knots } if knots.windows(2).any(|w| !(w[1][0] > w[0][0])) => {
                bad("spline knot frames must be strictly increasing")
            }
            _ => Ok(()),
        }
    }
}

fn catmull_rom(knots: &[[f64; 3]], t: f64) -> Point2 {
    let n = knots.len();
    if t <= knots[0][0] {
        return Point2::new(knots[0][1], knots[0][2]);
    }
    if t >= knots[n - 1][0] {
        return Point2::new(knots[n - 1][1], knots[n - 1][2]);
    }
    let k = knots.windows(2).position(|w| t < w[1][0]).unwrap_or(n - 2);
    let p = |i: isize| knots[i.clamp(0, n as isize - 1) as usize];
    let (p0, p1, p2, p3) = (
        p(k as isize - 1),
        p(k as isize),
        p(k as isize + 1),
        p(k as isize + 2),
    );
    let s = (t - p1[0]) / (p2[0] - p1[0]);
    let (s2, s3) = (s * s, s * s * s);
    let eval = |c: usize| {
        0.5 * (2.0 * p1[c]
            + (-p0[c] + p2[c]) * s
            + (2.0 * p0[c] - 5.0 * p1[c] + 4.0 * p2[c] - p3[c]) * s2
            + (-p0[c] + 3.0 * p1[c] - 3.0 * p2[c] + p3[c]) * s3)
    };
    Point2::new(eval(1), eval(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurFrame {
    pub frame: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub camera_walk: CameraWalk,
    pub object_path: ObjectPath,
    /// Object width and height, pixels.
    pub object_size: [f64; 2],
    pub jitter_sigma: f64,
    pub outlier_prob: f64,
    pub outlier_range: [f64; 2],
    pub blur_frames: Vec<BlurFrame>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            frames: 60,
            width: 320,
            height: 240,
            camera_walk: CameraWalk::default(),
            object_path: ObjectPath::Line {
                start: [160.0, 120.0],
                velocity: [0.0, 0.0],
            },
            object_size: [40.0, 30.0],
            jitter_sigma: 0.0,
            outlier_prob: 0.0,
            outlier_range: [50.0, 150.0],
            blur_frames: Vec::new(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// The end-to-end reference scene: 400 frames at 320x240, 3 px camera
    /// walk, jitter 4 px, 5% outliers of 50-150 px, two 3-frame blur bursts.
    pub fn reference() -> Self {
        let burst = |start: usize| (start..start + 3).map(|frame| BlurFrame { frame, sigma: 3.0 });
        Self {
            frames: 400,
            width: 320,
            height: 240,
            camera_walk: CameraWalk {
                translation_sigma: 3.0,
                rotation_sigma_deg: 0.1,
                scale_sigma: 0.001,
                max_step: 8.0,
            },
            object_path: ObjectPath::Sinusoid {
                start: [130.0, 110.0],
                velocity: [0.15, 0.0],
                amplitude: [25.0, 20.0],
                period: 150.0,
            },
            object_size: [40.0, 30.0],
            jitter_sigma: 4.0,
            outlier_prob: 0.05,
            outlier_range: [50.0, 150.0],
            blur_frames: burst(120).chain(burst(270)).collect(),
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        let cw = &self.camera_walk;
        if self.frames < 2 {
            return bad("need at least 2 frames");
        }
        if self.width < 32 || self.height < 32 {
            return bad("frames must be at least 32x32");
        }
        if !(0.0..=1.0).contains(&self.outlier_prob) {
            return bad("outlier_prob must lie in [0, 1]");
        }
        let sigmas = [
            self.jitter_sigma,
            cw.translation_sigma,
            cw.rotation_sigma_deg,
            cw.scale_sigma,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("standard deviations must be finite and non-negative");
        }
        if !(cw.max_step > 0.0) {
            return bad("max_step must be positive");
        }
        let [lo, hi] = self.outlier_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return bad("outlier_range must satisfy 0 <= min <= max");
        }
        let [ow, oh] = self.object_size;
        if !(ow >= 4.0 && oh >= 4.0 && ow < self.width as f64 && oh < self.height as f64) {
            return bad("object size must be at least 4 px and smaller than the frame");
        }
        if let Some(b) = self
            .blur_frames
            .iter()
            .find(|b| b.frame >= self.frames || !(b.sigma.is_finite() && b.sigma >= 0.0))
        {
            return Err(SynthError::InvalidConfig(format!(
                "blur frame {} (sigma {}) is out of range",
                b.frame, b.sigma
            )));
        }
        self.object_path.validate()
    }
}

/// Everything about a scenario except the rendered frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: ScenarioConfig,
    /// Frame `i` into frame 0.
    pub true_camera: Vec<Homography>,
    /// Frame `i` into frame `i - 1` (identity for frame 0).
    pub camera_steps: Vec<Homography>,
    pub true_centers: Vec<Point2>,
    pub canonical_centers: Vec<Point2>,
    pub true_boxes: Vec<BBox>,
    pub noisy_boxes: Vec<BBox>,
    pub outlier_frames: Vec<usize>,
    pub camera_attempts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScenario {
    pub frames: Vec<GrayImage>,
    pub truth: GroundTruth,
    pub noisy: Trajectory,
}

impl GroundTruthScenario {
    /// Frame count, taken from the ground truth so a scenario read back
    /// without its images still evaluates.
    pub fn len(&self) -> usize {
        self.truth.true_boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.true_boxes.is_empty()
    }

    pub fn true_trajectory(&self) -> Trajectory {
        Trajectory::new(self.truth.true_boxes.iter().copied().map(Some).collect())
    }

    pub fn is_outlier(&self, i: usize) -> bool {
        self.truth.outlier_frames.binary_search(&i).is_ok()
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Smoothly interpolated lattice noise in `[0, 1)`.
fn value_noise(x: f64, y: f64, cell: f64, seed: u64) -> f64 {
    let lattice = |i: i64, j: i64| {
        let z = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
            ^ seed;
        (mix(z) >> 11) as f64 / (1u64 << 53) as f64
    };
    let (fx, fy) = (x / cell, y / cell);
    let (ix, iy) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - ix, fy - iy);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let (i, j) = (ix as i64, iy as i64);
    let top = lattice(i, j) * (1.0 - sx) + lattice(i + 1, j) * sx;
    let bot = lattice(i, j + 1) * (1.0 - sx) + lattice(i + 1, j + 1) * sx;
    top * (1.0 - sy) + bot * sy
}

/// Two-octave background texture in world coordinates.
fn background(p: Point2, seed: u64) -> f64 {
    let coarse = value_noise(p.x, p.y, 24.0, mix(seed ^ 0xB6));
    let fine = value_noise(p.x, p.y, 5.0, mix(seed ^ 0xF1));
    0.15 + 0.7 * (0.45 * coarse + 0.55 * fine)
}

/// High-contrast object texture in object-local coordinates.
fn object_texture(u: f64, v: f64, seed: u64) -> f64 {
    let n = value_noise(u, v, 4.0, mix(seed ^ 0x0B));
    0.5 + 0.45 * (8.0 * (n - 0.5)).tanh()
}

/// Length of `[a, b]` intersected with the pixel footprint `[c - 0.5, c + 0.5]`.
fn overlap(a: f64, b: f64, c: f64) -> f64 {
    ((c + 0.5).min(b) - (c - 0.5).max(a)).max(0.0)
}

fn render_frame(cfg: &ScenarioConfig, camera: &Homography, object: &BBox) -> GrayImage {
    let seed = cfg.seed;
    GrayImage::from_fn(cfg.width, cfg.height, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let bg = camera
            .apply(Point2::new(fx, fy))
            .map_or(0.5, |p| background(p, seed));
        let cover =
            overlap(object.x, object.x + object.w, fx) * overlap(object.y, object.y + object.h, fy);
        if cover > 0.0 {
            let fg = object_texture(fx - object.x, fy - object.y, seed);
            cover * fg + (1.0 - cover) * bg
        } else {
            bg
        }
    })
    .expect("frame size validated")
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated")
}

fn sample_camera(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<Homography> {
    let cw = &cfg.camera_walk;
    let center = Point2::new(cfg.width as f64 / 2.0, cfg.height as f64 / 2.0);
    let mut steps = vec![Homography::identity()];
    if cw.is_static() {
        steps.resize(cfg.frames, Homography::identity());
        return steps;
    }
    let (nt, nr, ns) = (
        normal(cw.translation_sigma),
        normal(cw.rotation_sigma_deg.to_radians()),
        normal(cw.scale_sigma),
    );
    for _ in 1..cfg.frames {
        let (mut dx, mut dy) = (nt.sample(rng), nt.sample(rng));
        let len = dx.hypot(dy);
        if len > cw.max_step {
            dx *= cw.max_step / len;
            dy *= cw.max_step / len;
        }
        let angle = nr.sample(rng);
        let scale = ns.sample(rng).exp();
        steps.push(Homography::similarity(angle, scale, center, dx, dy));
    }
    steps
}

/// Renders a scenario. Deterministic given the configuration (including
/// its seed).
pub fn generate(cfg: &ScenarioConfig) -> Result<GroundTruthScenario, SynthError> {
    cfg.validate()?;
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let [ow, oh] = cfg.object_size;
    let canonical: Vec<Point2> = (0..cfg.frames)
        .map(|i| cfg.object_path.at(i as f64))
        .collect();

    let mut cam_rng = stream(cfg.seed, 1);
    let mut attempts = 0;
    let (steps, cumulative, centers) = loop {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(SynthError::Placement(MAX_PLACEMENT_ATTEMPTS));
        }
        let steps = sample_camera(cfg, &mut cam_rng);
        let mut cumulative = Vec::with_capacity(cfg.frames);
        let mut acc = Homography::identity();
        for s in &steps {
            acc = acc.compose(s);
            cumulative.push(acc);
        }
        let centers: Option<Vec<Point2>> = cumulative
            .iter()
            .zip(&canonical)
            .map(|(c, p)| c.invert().ok()?.apply(*p).ok())
            .collect();
        let Some(centers) = centers else { continue };
        let inside = centers
            .iter()
            .all(|c| BBox::from_center(*c, ow, oh).fraction_inside(w, h) >= MIN_INSIDE_FRACTION);
        if inside {
            break (steps, cumulative, centers);
        }
        if cfg.camera_walk.is_static() {
            return Err(SynthError::InvalidConfig(
                "object path leaves the frame of a static camera".into(),
            ));
        }
    };

    let true_boxes: Vec<BBox> = centers
        .iter()
        .map(|c| BBox::from_center(*c, ow, oh))
        .collect();

    let mut noise_rng = stream(cfg.seed, 3);
    let mut outlier_frames = Vec::new();
    let mut noisy_boxes = Vec::with_capacity(cfg.frames);
    for (i, c) in centers.iter().enumerate() {
        let (mut x, mut y) = (c.x, c.y);
        if cfg.jitter_sigma > 0.0 {
            let n = normal(cfg.jitter_sigma);
            x += n.sample(&mut noise_rng);
            y += n.sample(&mut noise_rng);
        }
        if noise_rng.random::<f64>() < cfg.outlier_prob {
            let [lo, hi] = cfg.outlier_range;
            let mag = if hi > lo {
                noise_rng.random_range(lo..hi)
            } else {
                lo
            };
            let angle = noise_rng.random_range(0.0..std::f64::consts::TAU);
            x += mag * angle.cos();
            y += mag * angle.sin();
            outlier_frames.push(i);
        }
        noisy_boxes.push(BBox::from_center(Point2::new(x, y), ow, oh));
    }

    let blur: BTreeMap<usize, f64> = cfg.blur_frames.iter().map(|b| (b.frame, b.sigma)).collect();
    let frames = cumulative
        .par_iter()
        .zip(true_boxes.par_iter())
        .enumerate()
        .map(|(i, (cam, b))| {
            let img = render_frame(cfg, cam, b);
            match blur.get(&i) {
                Some(&s) => img.gaussian_blur(s),
                None => Ok(img),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(GroundTruthScenario {
        frames,
        noisy: Trajectory::new(noisy_boxes.iter().copied().map(Some).collect()),
        truth: GroundTruth {
            config: cfg.clone(),
            true_camera: cumulative,
            camera_steps: steps,
            true_centers: centers,
            canonical_centers: canonical,
            true_boxes,
            noisy_boxes,
            outlier_frames,
            camera_attempts: attempts,
        },
    })
}

/// Pipeline products scored by [`evaluate`].
#[derive(Debug, Clone)]
pub struct PipelineOutput<'a> {
    pub alignment: &'a AlignmentResult,
    /// Smoothed centers reprojected into each frame.
    pub smoothed: &'a [Option<Point2>],
    pub corrected: &'a Trajectory,
    pub flagged: &'a [bool],
    pub timings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Largest frame-corner displacement between the estimated and true
    /// frame-to-frame-0 transforms; absent for failed frames.
    pub corner_error: Vec<Option<f64>>,
    pub final_corner_error: Option<f64>,
    pub max_corner_error: f64,
    pub noisy_rmse: f64,
    pub smoothed_rmse: f64,
    pub corrected_rmse: f64,
    /// corrected / noisy RMSE.
    pub improvement_ratio: f64,
    pub injected_outliers: usize,
    pub flagged: usize,
    pub true_positives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub method_counts: BTreeMap<String, usize>,
    pub timings: BTreeMap<String, f64>,
}

fn rmse<'a>(pairs: impl Iterator<Item = (Point2, &'a Point2)>) -> f64 {
    let (sum, n) = pairs.fold((0.0, 0usize), |(s, n), (a, b)| {
        let d = a.distance(b);
        (s + d * d, n + 1)
    });
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

pub fn evaluate(
    scenario: &GroundTruthScenario,
    out: &PipelineOutput,
) -> Result<Metrics, SynthError> {
    let n = scenario.len();
    let lens = [
        out.alignment.len(),
        out.smoothed.len(),
        out.corrected.len(),
        out.flagged.len(),
    ];
    if let Some(&got) = lens.iter().find(|&&l| l != n) {
        return Err(SynthError::LengthMismatch { expected: n, got });
    }
    let t = &scenario.truth;
    let corners = frame_corners(t.config.width as f64, t.config.height as f64);
    let corner_error: Vec<Option<f64>> = out
        .alignment
        .frames
        .iter()
        .zip(&t.true_camera)
        .map(|(f, truth)| {
            (f.method != AlignMethod::Failed).then(|| f.cumulative.max_deviation(truth, &corners))
        })
        .collect();

    let centers = |tr: &Trajectory| -> Vec<Option<Point2>> { tr.centers() };
    let noisy_rmse = rmse(
        centers(&scenario.noisy)
            .into_iter()
            .zip(&t.true_centers)
            .filter_map(|(a, b)| a.map(|a| (a, b))),
    );
    let corrected_rmse = rmse(
        centers(out.corrected)
            .into_iter()
            .zip(&t.true_centers)
            .filter_map(|(a, b)| a.map(|a| (a, b))),
    );
    let smoothed_rmse = rmse(
        out.smoothed
            .iter()
            .zip(&t.true_centers)
            .filter_map(|(a, b)| a.map(|a| (a, b))),
    );

    let flagged = out.flagged.iter().filter(|&&f| f).count();
    let true_positives = t.outlier_frames.iter().filter(|&&i| out.flagged[i]).count();
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);

    let mut method_counts = BTreeMap::new();
    for f in &out.alignment.frames {
        let key = serde_json::to_value(f.method)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        *method_counts.entry(key).or_insert(0) += 1;
    }

    Ok(Metrics {
        final_corner_error: corner_error.last().copied().flatten(),
        max_corner_error: corner_error.iter().flatten().copied().fold(0.0, f64::max),
        corner_error,
        noisy_rmse,
        smoothed_rmse,
        corrected_rmse,
        improvement_ratio: corrected_rmse / noisy_rmse,
        injected_outliers: t.outlier_frames.len(),
        flagged,
        true_positives,
        precision: ratio(true_positives, flagged),
        recall: ratio(true_positives, t.outlier_frames.len()),
        method_counts,
        timings: out.timings.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            frames: 12,
            width: 96,
            height: 72,
            object_path: ObjectPath::Line {
                start: [40.0, 30.0],
                velocity: [1.0, 0.5],
            },
            object_size: [16.0, 12.0],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn static_camera_gives_identity_chain() {
        let s = generate(&small()).unwrap();
        assert!(s
            .truth
            .true_camera
            .iter()
            .all(|h| *h == Homography::identity()));
        assert_eq!(s.truth.true_centers, s.truth.canonical_centers);
    }

    #[test]
    fn noiseless_annotations_equal_truth() {
        let s = generate(&small()).unwrap();
        assert_eq!(s.noisy, s.true_trajectory());
        assert!(s.truth.outlier_frames.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig {
            camera_walk: CameraWalk {
                translation_sigma: 1.0,
                rotation_sigma_deg: 0.2,
                scale_sigma: 0.002,
                max_step: 8.0,
            },
            jitter_sigma: 2.0,
            outlier_prob: 0.3,
            outlier_range: [10.0, 20.0],
            blur_frames: vec![BlurFrame {
                frame: 3,
                sigma: 1.5,
            }],
            seed: 99,
            ..small()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate(&ScenarioConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn camera_chain_is_consistent() {
        let cfg = ScenarioConfig {
            camera_walk: CameraWalk {
                translation_sigma: 2.0,
                rotation_sigma_deg: 0.3,
                scale_sigma: 0.003,
                max_step: 3.0,
            },
            frames: 30,
            ..ScenarioConfig::default()
        };
        let s = generate(&cfg).unwrap();
        let t = &s.truth;
        let corners = frame_corners(320.0, 240.0);
        let mut acc = Homography::identity();
        for (i, step) in t.camera_steps.iter().enumerate() {
            acc = acc.compose(step);
            assert!(acc.max_deviation(&t.true_camera[i], &corners) < 1e-9);
            if i > 0 {
                let m = step.matrix();
                let (dx, dy) = (m[(0, 2)], m[(1, 2)]);
                // translation part about the image center is clamped
                let c = step.apply(Point2::new(160.0, 120.0)).unwrap();
                assert!((c.x - 160.0).hypot(c.y - 120.0) <= 3.0 + 1e-9, "{dx} {dy}");
            }
        }
        for b in &t.true_boxes {
            assert!(b.fraction_inside(320.0, 240.0) >= MIN_INSIDE_FRACTION);
        }
    }

    #[test]
    fn true_centers_follow_the_camera() {
        let cfg = ScenarioConfig {
            camera_walk: CameraWalk {
                translation_sigma: 2.0,
                ..CameraWalk::default()
            },
            frames: 20,
            ..ScenarioConfig::default()
        };
        let s = generate(&cfg).unwrap();
        for (i, c) in s.truth.true_centers.iter().enumerate() {
            let back = s.truth.true_camera[i].apply(*c).unwrap();
            assert!(back.distance(&s.truth.canonical_centers[i]) < 1e-9);
        }
    }

    #[test]
    fn outlier_count_matches_bernoulli_draws() {
        let base = ScenarioConfig {
            frames: 400,
            width: 64,
            height: 48,
            object_path: ObjectPath::Line {
                start: [32.0, 24.0],
                velocity: [0.0, 0.0],
            },
            object_size: [10.0, 8.0],
            jitter_sigma: 4.0,
            outlier_prob: 0.05,
            ..ScenarioConfig::default()
        };
        let (mean, sd) = (0.05 * 400.0, (400.0f64 * 0.05 * 0.95).sqrt());
        let mut total = 0.0;
        for seed in 0..50 {
            let s = generate(&ScenarioConfig {
                seed,
                ..base.clone()
            })
            .unwrap();
            let t = &s.truth;
            // the recorded set is exactly the frames whose offset exceeds the
            // jitter by the outlier magnitude
            for i in 0..400 {
                let d = t.noisy_boxes[i].center().distance(&t.true_centers[i]);
                if s.is_outlier(i) {
                    assert!(d > 50.0 - 6.0 * 4.0 * 2f64.sqrt());
                } else {
                    assert!(d < 6.0 * 4.0 * 2f64.sqrt());
                }
            }
            let k = t.outlier_frames.len() as f64;
            assert!((k - mean).abs() <= 3.0 * sd, "seed {seed}: {k}");
            total += k;
        }
        assert!((total / 50.0 - mean).abs() <= 3.0 * sd / 50f64.sqrt());
    }

    #[test]
    fn spline_passes_through_knots() {
        let p = ObjectPath::Spline {
            knots: vec![[0.0, 10.0, 10.0], [10.0, 30.0, 15.0], [25.0, 40.0, 40.0]],
        };
        assert_eq!(p.at(10.0), Point2::new(30.0, 15.0));
        assert_eq!(p.at(-5.0), Point2::new(10.0, 10.0));
        assert_eq!(p.at(99.0), Point2::new(40.0, 40.0));
        let a = p.at(9.999);
        assert!(a.distance(&Point2::new(30.0, 15.0)) < 0.01);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            ScenarioConfig {
                frames: 1,
                ..small()
            },
            ScenarioConfig {
                outlier_prob: 1.5,
                ..small()
            },
            ScenarioConfig {
                jitter_sigma: -1.0,
                ..small()
            },
            ScenarioConfig {
                outlier_range: [20.0, 10.0],
                ..small()
            },
            ScenarioConfig {
                blur_frames: vec![BlurFrame {
                    frame: 50,
                    sigma: 1.0,
                }],
                ..small()
            },
            ScenarioConfig {
                object_path: ObjectPath::Line {
                    start: [500.0, 30.0],
                    velocity: [0.0, 0.0],
                },
                ..small()
            },
        ];
        for cfg in bad {
            assert!(generate(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn evaluate_trivial_cases() {
        let cfg = ScenarioConfig {
            jitter_sigma: 3.0,
            seed: 5,
            ..small()
        };
        let s = generate(&cfg).unwrap();
        let align = AlignmentResult::from_cumulative(96, 72, &s.truth.true_camera).unwrap();
        let truth: Vec<Option<Point2>> = s.truth.true_centers.iter().copied().map(Some).collect();
        let flags = vec![false; s.len()];
        let perfect = s.true_trajectory();
        let m = evaluate(
            &s,
            &PipelineOutput {
                alignment: &align,
                smoothed: &truth,
                corrected: &perfect,
                flagged: &flags,
                timings: BTreeMap::new(),
            },
        )
        .unwrap();
        assert_eq!(m.corrected_rmse, 0.0);
        assert_eq!(m.smoothed_rmse, 0.0);
        assert_eq!(m.final_corner_error, Some(0.0));
        let m = evaluate(
            &s,
            &PipelineOutput {
                alignment: &align,
                smoothed: &truth,
                corrected: &s.noisy,
                flagged: &flags,
                timings: BTreeMap::new(),
            },
        )
        .unwrap();
        assert_eq!(m.improvement_ratio, 1.0);
        assert!(m.noisy_rmse > 0.0);
        assert!(evaluate(
            &s,
            &PipelineOutput {
                alignment: &align,
                smoothed: &truth[1..],
                corrected: &s.noisy,
                flagged: &flags,
                timings: BTreeMap::new(),
            },
        )
        .is_err());
    }
}
