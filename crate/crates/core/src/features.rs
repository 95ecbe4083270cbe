//! Segment-test corners, BRIEF-style binary descriptors and Hamming matching
//! between consecutive frames.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::GrayImage;

/// Minimum image side accepted by [`detect`].
pub const MIN_DETECT_SIZE: usize = 32;
/// Keypoints closer than this to any border cannot be described.
pub const DESCRIBE_MARGIN: f64 = 16.0;
const PATTERN_SIGMA: f64 = 4.0;
const PATTERN_RADIUS: f64 = 15.0;
const SMOOTHING_SIGMA: f64 = 1.0;
const ARC_LENGTH: usize = 9;

/// Bresenham circle of radius 3, clockwise from twelve o'clock.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error(
        "image is {width}x{height}, detection needs at least {MIN_DETECT_SIZE}x{MIN_DETECT_SIZE}"
    )]
    ImageTooSmall { width: usize, height: usize },
    #[error("invalid feature configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// 256-bit binary descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i / 64] ^= 1 << (i % 64);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub idx_a: usize,
    pub idx_b: usize,
    pub distance: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub detector_threshold: f64,
    pub max_keypoints: usize,
    pub nms_radius: f64,
    pub ratio_test: f64,
    pub cross_check: bool,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            detector_threshold: 0.06,
            max_keypoints: 1000,
            nms_radius: 5.0,
            ratio_test: 0.8,
            cross_check: true,
            seed: 0x5eed,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(self.detector_threshold > 0.0) {
            return Err(FeatureError::InvalidConfig(
                "detector_threshold must be > 0",
            ));
        }
        if !(self.nms_radius > 0.0) {
            return Err(FeatureError::InvalidConfig("nms_radius must be > 0"));
        }
        if !(self.ratio_test > 0.0 && self.ratio_test <= 1.0) {
            return Err(FeatureError::InvalidConfig("ratio_test must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Whether the 16-bit ring mask holds a run of at least `ARC_LENGTH` set bits,
/// wrapping past bit 15.
fn has_arc(mask: u32) -> bool {
    let mut run = mask | (mask << 16);
    for _ in 1..ARC_LENGTH {
        run &= run >> 1;
    }
    run != 0
}

/// Segment test at flat index `i`; `ring_offsets` is the circle as flat offsets.
fn segment_score(
    data: &[f64],
    i: usize,
    ring_offsets: &[isize; 16],
    threshold: f64,
) -> Option<f64> {
    let c = data[i];
    let at = |k: usize| data[(i as isize + ring_offsets[k]) as usize];
    let (hi, lo) = (c + threshold, c - threshold);
    // any arc of 9 covers at least two of the four compass pixels
    let compass = [at(0), at(4), at(8), at(12)];
    let bright = compass.iter().filter(|&&p| p > hi).count();
    let dark = compass.iter().filter(|&&p| p < lo).count();
    if bright < 2 && dark < 2 {
        return None;
    }
    let mut ring = [0.0f64; 16];
    let (mut bright_mask, mut dark_mask) = (0u32, 0u32);
    for (k, v) in ring.iter_mut().enumerate() {
        *v = at(k);
        bright_mask |= u32::from(*v > hi) << k;
        dark_mask |= u32::from(*v < lo) << k;
    }
    let brighter = has_arc(bright_mask);
    let darker = has_arc(dark_mask);
    if !brighter && !darker {
        return None;
    }
    let sum_where = |pred: &dyn Fn(f64) -> bool| -> f64 {
        ring.iter()
            .filter(|&&p| pred(p))
            .map(|p| (p - c).abs())
            .sum()
    };
    let mut score: f64 = 0.0;
    if brighter {
        score = score.max(sum_where(&|p| p > hi));
    }
    if darker {
        score = score.max(sum_where(&|p| p < lo));
    }
    Some(score)
}

/// Segment-test corners, non-maximum suppressed and sorted by descending score.
pub fn detect(img: &GrayImage, cfg: &FeatureConfig) -> Result<Vec<Keypoint>, FeatureError> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    if w < MIN_DETECT_SIZE || h < MIN_DETECT_SIZE {
        return Err(FeatureError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let ring_offsets = CIRCLE.map(|(dx, dy)| dy as isize * w as isize + dx as isize);
    let data = img.data();
    let mut candidates = Vec::new();
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            let i = y * w + x;
            if let Some(score) = segment_score(data, i, &ring_offsets, cfg.detector_threshold) {
                candidates.push(Keypoint {
                    x: x as f64,
                    y: y as f64,
                    score,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });

    // bucket grid with cell side nms_radius: conflicts live in the 3x3 neighbourhood
    let cell = cfg.nms_radius;
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); gw * gh];
    let mut kept: Vec<Keypoint> = Vec::new();
    for kp in candidates {
        if kept.len() >= cfg.max_keypoints {
            break;
        }
        let gx = (kp.x / cell) as usize;
        let gy = (kp.y / cell) as usize;
        let clash = (gy.saturating_sub(1)..=(gy + 1).min(gh - 1)).any(|yy| {
            (gx.saturating_sub(1)..=(gx + 1).min(gw - 1)).any(|xx| {
                grid[yy * gw + xx].iter().any(|&k| {
                    let o = &kept[k];
                    (o.x - kp.x).hypot(o.y - kp.y) < cfg.nms_radius
                })
            })
        });
        if !clash {
            grid[gy * gw + gx].push(kept.len());
            kept.push(kp);
        }
    }
    Ok(kept)
}

/// Fixed sampling pattern of 256 point pairs, drawn once per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct BriefPattern {
    pairs: Vec<[(f64, f64); 2]>,
}

impl BriefPattern {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, PATTERN_SIGMA).expect("positive sigma");
        let mut draw = || loop {
            let v: f64 = normal.sample(&mut rng).round();
            if v.abs() <= PATTERN_RADIUS {
                return v;
            }
        };
        let mut pairs = Vec::with_capacity(256);
        while pairs.len() < 256 {
            let a = (draw(), draw());
            let b = (draw(), draw());
            if a != b {
                pairs.push([a, b]);
            }
        }
        Self { pairs }
    }

    /// Offsets are whole pixels, so every sample shares the bilinear weights
    /// of `(x, y)`; the keypoint must be describable.
    fn describe_at(&self, smoothed: &GrayImage, x: f64, y: f64) -> Descriptor {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let w = smoothed.width() as isize;
        let data = smoothed.data();
        let sample = |o: (f64, f64)| {
            let i = (y0 + o.1) as isize * w + (x0 + o.0) as isize;
            let i = i as usize;
            let top = data[i] * (1.0 - fx) + data[i + 1] * fx;
            let bottom = data[i + w as usize] * (1.0 - fx) + data[i + w as usize + 1] * fx;
            top * (1.0 - fy) + bottom * fy
        };
        let mut d = Descriptor::default();
        for (i, [a, b]) in self.pairs.iter().enumerate() {
            if sample(*a) < sample(*b) {
                d.0[i / 64] |= 1 << (i % 64);
            }
        }
        d
    }
}

pub fn describable(img: &GrayImage, kp: &Keypoint) -> bool {
    kp.x >= DESCRIBE_MARGIN
        && kp.y >= DESCRIBE_MARGIN
        && kp.x <= img.width() as f64 - 1.0 - DESCRIBE_MARGIN
        && kp.y <= img.height() as f64 - 1.0 - DESCRIBE_MARGIN
}

/// Descriptors plus, for each one, the index of the keypoint it describes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Described {
    pub descriptors: Vec<Descriptor>,
    pub index_map: Vec<usize>,
}

/// Binary descriptors on a σ=1 smoothed copy; keypoints too close to the
/// border are skipped and absent from `index_map`.
pub fn describe(img: &GrayImage, kps: &[Keypoint], cfg: &FeatureConfig) -> Described {
    let smoothed = img
        .gaussian_blur(SMOOTHING_SIGMA)
        .expect("constant sigma is valid");
    describe_smoothed(&smoothed, &BriefPattern::new(cfg.seed), kps)
}

pub(crate) fn describe_smoothed(
    smoothed: &GrayImage,
    pattern: &BriefPattern,
    kps: &[Keypoint],
) -> Described {
    let mut out = Described::default();
    for (i, kp) in kps.iter().enumerate() {
        if describable(smoothed, kp) {
            out.descriptors
                .push(pattern.describe_at(smoothed, kp.x, kp.y));
            out.index_map.push(i);
        }
    }
    out
}

/// Nearest-neighbour matching with a distance ratio test and optional
/// mutual-consistency check. Ties go to the lowest index in both directions.
pub fn match_descriptors(da: &[Descriptor], db: &[Descriptor], cfg: &FeatureConfig) -> Vec<Match> {
    // nearest `da` entry for every `db` entry, filled during the forward pass
    let mut back: Vec<Option<(u32, usize)>> = vec![None; db.len()];
    let mut forward = Vec::with_capacity(da.len());
    for (i, d) in da.iter().enumerate() {
        let mut best: Option<(usize, u32)> = None;
        let mut second: Option<u32> = None;
        for (j, other) in db.iter().enumerate() {
            let dist = d.hamming(other);
            if back[j].is_none_or(|(b, _)| dist < b) {
                back[j] = Some((dist, i));
            }
            match best {
                Some((_, b)) if dist >= b => {
                    if second.is_none_or(|s| dist < s) {
                        second = Some(dist);
                    }
                }
                _ => {
                    second = best.map(|(_, b)| b);
                    best = Some((j, dist));
                }
            }
        }
        forward.push(best.map(|(j, b)| (j, b, second)));
    }
    let mut out = Vec::new();
    for (i, f) in forward.into_iter().enumerate() {
        let Some((j, best, second)) = f else {
            continue;
        };
        let passes_ratio = match second {
            None => true,
            Some(0) => false,
            Some(s) => (best as f64) / (s as f64) < cfg.ratio_test,
        };
        if !passes_ratio {
            continue;
        }
        if cfg.cross_check && back[j].map(|(_, k)| k) != Some(i) {
            continue;
        }
        out.push(Match {
            idx_a: i,
            idx_b: j,
            distance: best,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random::<f64>()).unwrap()
    }

    fn blocky_texture(w: usize, h: usize, seed: u64) -> GrayImage {
        // 6px random blocks, smoothed a little: plenty of corners
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bw = w / 6 + 2;
        let bh = h / 6 + 2;
        let cells: Vec<f64> = (0..bw * bh).map(|_| rng.random::<f64>()).collect();
        GrayImage::from_fn(w, h, |x, y| cells[(y / 6) * bw + x / 6])
            .unwrap()
            .gaussian_blur(0.8)
            .unwrap()
    }

    #[test]
    fn constant_image_has_no_corners() {
        let img = GrayImage::constant(64, 64, 0.4).unwrap();
        assert!(detect(&img, &FeatureConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn small_images_are_rejected() {
        let img = GrayImage::constant(31, 64, 0.4).unwrap();
        assert!(matches!(
            detect(&img, &FeatureConfig::default()),
            Err(FeatureError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn square_corners_are_found() {
        let img = GrayImage::from_fn(64, 64, |x, y| {
            if (30..34).contains(&x) && (30..34).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let cfg = FeatureConfig {
            nms_radius: 1.0,
            ..FeatureConfig::default()
        };
        let kps = detect(&img, &cfg).unwrap();
        for (cx, cy) in [(30.0, 30.0), (34.0, 30.0), (30.0, 34.0), (34.0, 34.0)] {
            assert!(
                kps.iter().any(|k| (k.x - cx).hypot(k.y - cy) <= 3.0),
                "no keypoint near ({cx},{cy})"
            );
        }
    }

    #[test]
    fn detection_respects_limits() {
        let img = blocky_texture(160, 120, 4);
        let cfg = FeatureConfig {
            max_keypoints: 50,
            ..FeatureConfig::default()
        };
        let kps = detect(&img, &cfg).unwrap();
        assert_eq!(kps.len(), 50);
        assert!(kps.windows(2).all(|w| w[0].score >= w[1].score));
        for (i, a) in kps.iter().enumerate() {
            for b in &kps[i + 1..] {
                assert!((a.x - b.x).hypot(a.y - b.y) >= cfg.nms_radius);
            }
        }
    }

    #[test]
    fn detection_is_translation_equivariant() {
        let big = blocky_texture(140, 120, 9);
        let a = big.crop(7, 5, 120, 100).unwrap();
        let b = big.crop(0, 0, 120, 100).unwrap();
        let cfg = FeatureConfig::default();
        let ka = detect(&a, &cfg).unwrap();
        let kb = detect(&b, &cfg).unwrap();
        // b's content at (x, y) equals a's at (x - 7, y - 5)
        let interior = |k: &Keypoint, w: f64, h: f64| {
            k.x >= 16.0 && k.y >= 16.0 && k.x <= w - 17.0 && k.y <= h - 17.0
        };
        let inner_a: Vec<_> = ka
            .iter()
            .filter(|k| {
                interior(
                    &Keypoint {
                        x: k.x + 7.0,
                        y: k.y + 5.0,
                        score: 0.0,
                    },
                    120.0,
                    100.0,
                ) && interior(k, 120.0, 100.0)
            })
            .collect();
        assert!(inner_a.len() > 20);
        for k in inner_a {
            assert!(
                kb.iter()
                    .any(|o| (o.x - (k.x + 7.0)).hypot(o.y - (k.y + 5.0)) <= 1.0),
                "{k:?} has no shifted counterpart"
            );
        }
    }

    #[test]
    fn describe_is_deterministic_and_filters_border() {
        let img = random_image(64, 64, 1);
        let kps = [
            Keypoint {
                x: 32.0,
                y: 32.0,
                score: 1.0,
            },
            Keypoint {
                x: 5.0,
                y: 32.0,
                score: 1.0,
            },
            Keypoint {
                x: 40.0,
                y: 20.0,
                score: 1.0,
            },
        ];
        let cfg = FeatureConfig::default();
        let a = describe(&img, &kps, &cfg);
        let b = describe(&img, &kps, &cfg);
        assert_eq!(a, b);
        assert_eq!(a.index_map, vec![0, 2]);
    }

    #[test]
    fn descriptors_tolerate_gain_and_bias() {
        let cfg = FeatureConfig::default();
        for seed in 0..20 {
            let img = random_image(64, 64, seed);
            let adj = img.map_affine(0.9, 0.05);
            let kp = [Keypoint {
                x: 32.0,
                y: 30.0,
                score: 1.0,
            }];
            let a = describe(&img, &kp, &cfg).descriptors[0];
            let b = describe(&adj, &kp, &cfg).descriptors[0];
            assert!(a.hamming(&b) <= 16);
        }
    }

    #[test]
    fn unrelated_images_disagree_on_half_the_bits() {
        let cfg = FeatureConfig::default();
        let kp = [Keypoint {
            x: 32.0,
            y: 32.0,
            score: 1.0,
        }];
        let d: Vec<f64> = (0..100)
            .map(|trial| {
                let a = describe(&random_image(64, 64, 2 * trial), &kp, &cfg).descriptors[0];
                let b = describe(&random_image(64, 64, 2 * trial + 1), &kp, &cfg).descriptors[0];
                a.hamming(&b) as f64
            })
            .collect();
        let mean = d.iter().sum::<f64>() / 100.0;
        assert!((mean - 128.0).abs() <= 30.0, "mean {mean}");
        assert!((mean - 128.0).abs() < 8.0, "mean {mean}");
        // pairs share smoothed pixels, so single trials spread wider than
        // 256 independent bits would (sd 8)
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
        assert!(sd < 25.0, "sd {sd}");
    }

    #[test]
    fn identical_sets_match_themselves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set: Vec<Descriptor> = (0..40)
            .map(|_| Descriptor([rng.random(), rng.random(), rng.random(), rng.random()]))
            .collect();
        let m = match_descriptors(&set, &set, &FeatureConfig::default());
        assert_eq!(m.len(), 40);
        assert!(m.iter().all(|m| m.idx_a == m.idx_b && m.distance == 0));
    }

    #[test]
    fn ratio_test_on_constructed_distances() {
        let cfg = FeatureConfig::default();
        let base = Descriptor([0xdead_beef, 0x1234, 0, u64::MAX]);
        let mut flipped = base;
        flipped.flip(3);
        // best 0, second 1: ratio 0 passes
        let m = match_descriptors(&[base], &[base, flipped], &cfg);
        assert_eq!(
            m,
            vec![Match {
                idx_a: 0,
                idx_b: 0,
                distance: 0
            }]
        );

        // best 10, second 11: ratio 0.909 fails
        let mut ten = base;
        (0..10).for_each(|i| ten.flip(i));
        let mut eleven = base;
        (100..111).for_each(|i| eleven.flip(i));
        assert!(match_descriptors(&[base], &[ten, eleven], &cfg).is_empty());
        assert!(match_descriptors(&[base], &[], &cfg).is_empty());
    }

    #[test]
    fn cross_checked_matches_are_one_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<Descriptor> = (0..60)
            .map(|_| Descriptor([rng.random(), rng.random(), rng.random(), rng.random()]))
            .collect();
        let b: Vec<Descriptor> = a
            .iter()
            .map(|d| {
                let mut d = *d;
                for _ in 0..20 {
                    d.flip(rng.random_range(0..256));
                }
                d
            })
            .collect();
        let m = match_descriptors(&a, &b, &FeatureConfig::default());
        let mut seen_a = std::collections::HashSet::new();
        let mut seen_b = std::collections::HashSet::new();
        for x in &m {
            assert!(seen_a.insert(x.idx_a));
            assert!(seen_b.insert(x.idx_b));
        }
        assert!(m.len() > 50);
    }
}
