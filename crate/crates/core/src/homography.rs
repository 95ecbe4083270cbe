//! Planar projective transforms: application, composition, inversion, and
//! estimation from point correspondences (normalized DLT and RANSAC).

use nalgebra::{Matrix3, SMatrix, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const AT_INFINITY: f64 = 1e-12;
const MIN_DET: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomographyError {
    #[error("point maps to infinity (w = {0:e})")]
    PointAtInfinity(f64),
    #[error("matrix is singular or not finite")]
    Singular,
    #[error("degenerate point configuration")]
    Degenerate,
    #[error("need at least 4 correspondences, got {0}")]
    InsufficientPairs(usize),
    #[error("no consensus: best hypothesis had {0} inliers")]
    NoConsensus(usize),
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Correspondence between a point in image A (`src`) and image B (`dst`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub src: Point2,
    pub dst: Point2,
}

impl PointPair {
    pub fn new(src: Point2, dst: Point2) -> Self {
        Self { src, dst }
    }
}

/// Invertible 3x3 projective transform, stored normalized (`m[2][2] == 1`, or
/// unit Frobenius norm with non-negative trace when that entry vanishes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Self(Matrix3::new(sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation by `angle` radians and isotropic `scale` about `center`,
    /// followed by a translation.
    pub fn similarity(angle: f64, scale: f64, center: Point2, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let to_origin = Matrix3::new(1.0, 0.0, -center.x, 0.0, 1.0, -center.y, 0.0, 0.0, 1.0);
        let rot = Matrix3::new(
            scale * c,
            -scale * s,
            0.0,
            scale * s,
            scale * c,
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let back = Matrix3::new(
            1.0,
            0.0,
            center.x + tx,
            0.0,
            1.0,
            center.y + ty,
            0.0,
            0.0,
            1.0,
        );
        Self(back * rot * to_origin)
    }

    /// Validates and normalizes an arbitrary matrix.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, HomographyError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(HomographyError::Singular);
        }
        let n = normalize(m).ok_or(HomographyError::Singular)?;
        if n.determinant().abs() <= MIN_DET {
            return Err(HomographyError::Singular);
        }
        Ok(Self(n))
    }

    pub fn from_row_major(v: [f64; 9]) -> Result<Self, HomographyError> {
        Self::from_matrix(Matrix3::from_row_slice(&v))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn apply(&self, p: Point2) -> Result<Point2, HomographyError> {
        let m = &self.0;
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        if w.abs() < AT_INFINITY || !w.is_finite() {
            return Err(HomographyError::PointAtInfinity(w));
        }
        Ok(Point2::new(
            (m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w,
            (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w,
        ))
    }

    /// `compose(a, b)` applies `b` first, then `a`.
    pub fn compose(&self, inner: &Homography) -> Homography {
        // product of two invertible matrices stays invertible
        let m = normalize(self.0 * inner.0).unwrap_or(self.0 * inner.0);
        Homography(m)
    }

    pub fn invert(&self) -> Result<Homography, HomographyError> {
        let inv = self.0.try_inverse().ok_or(HomographyError::Singular)?;
        Self::from_matrix(inv)
    }

    /// Largest displacement between the images of `points` under `self` and `other`.
    pub fn max_deviation(&self, other: &Homography, points: &[Point2]) -> f64 {
        points
            .iter()
            .map(|p| match (self.apply(*p), other.apply(*p)) {
                (Ok(a), Ok(b)) => a.distance(&b),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

impl Serialize for Homography {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(d)?;
        Homography::from_row_major(v).map_err(serde::de::Error::custom)
    }
}

fn normalize(m: Matrix3<f64>) -> Option<Matrix3<f64>> {
    let frob = m.norm();
    if frob == 0.0 || !frob.is_finite() {
        return None;
    }
    let corner = m[(2, 2)];
    if corner.abs() > 1e-10 * frob {
        let mut n = m / corner;
        n[(2, 2)] = 1.0;
        Some(n)
    } else {
        let n = m / frob;
        Some(if n.trace() < 0.0 { -n } else { n })
    }
}

/// Image corners of a `width x height` frame, clockwise from the origin.
pub fn frame_corners(width: f64, height: f64) -> [Point2; 4] {
    [
        Point2::new(0.0, 0.0),
        Point2::new(width, 0.0),
        Point2::new(width, height),
        Point2::new(0.0, height),
    ]
}

/// Reprojection error `|H src - dst|`; infinite when `src` maps to infinity.
pub fn transfer_error(h: &Homography, pair: &PointPair) -> f64 {
    h.apply(pair.src)
        .map(|p| p.distance(&pair.dst))
        .unwrap_or(f64::INFINITY)
}

/// Translate to the centroid and scale to mean distance sqrt(2).
fn hartley(points: impl Iterator<Item = Point2> + Clone) -> Option<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points
        .clone()
        .fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean = points.map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if mean <= 1e-300 || !mean.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Some(Matrix3::new(
        s,
        0.0,
        -s * cx,
        0.0,
        s,
        -s * cy,
        0.0,
        0.0,
        1.0,
    ))
}

fn transform(t: &Matrix3<f64>, p: Point2) -> Point2 {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

fn collinear(a: Point2, b: Point2, c: Point2, tol: f64) -> bool {
    ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)).abs() <= tol
}

fn minimal_set_degenerate(points: &[Point2]) -> bool {
    debug_assert_eq!(points.len(), 4);
    let scale = points
        .iter()
        .flat_map(|p| [p.x.abs(), p.y.abs()])
        .fold(1.0, f64::max);
    let tol = 1e-9 * scale * scale;
    (0..4).any(|skip| {
        let t: Vec<Point2> = (0..4).filter(|&i| i != skip).map(|i| points[i]).collect();
        collinear(t[0], t[1], t[2], tol)
    })
}

/// Least-squares DLT with isotropic normalization of both point sets.
pub fn estimate_dlt(pairs: &[PointPair]) -> Result<Homography, HomographyError> {
    if pairs.len() < 4 {
        return Err(HomographyError::InsufficientPairs(pairs.len()));
    }
    if pairs.len() == 4 {
        let src: Vec<Point2> = pairs.iter().map(|p| p.src).collect();
        let dst: Vec<Point2> = pairs.iter().map(|p| p.dst).collect();
        if minimal_set_degenerate(&src) || minimal_set_degenerate(&dst) {
            return Err(HomographyError::Degenerate);
        }
    }
    let ts = hartley(pairs.iter().map(|p| p.src)).ok_or(HomographyError::Degenerate)?;
    let td = hartley(pairs.iter().map(|p| p.dst)).ok_or(HomographyError::Degenerate)?;

    // accumulate A^T A of the 2n x 9 system; its null vector is the solution
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for pair in pairs {
        let s = transform(&ts, pair.src);
        let d = transform(&td, pair.dst);
        let r1 = [-s.x, -s.y, -1.0, 0.0, 0.0, 0.0, d.x * s.x, d.x * s.y, d.x];
        let r2 = [0.0, 0.0, 0.0, -s.x, -s.y, -1.0, d.y * s.x, d.y * s.y, d.y];
        for r in [r1, r2] {
            for i in 0..9 {
                for j in 0..9 {
                    ata[(i, j)] += r[i] * r[j];
                }
            }
        }
    }
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[8]].abs().max(f64::MIN_POSITIVE);
    // a second (near-)zero eigenvalue means the null space is not one-dimensional
    if eig.eigenvalues[order[1]].abs() <= 1e-20 * largest {
        return Err(HomographyError::Degenerate);
    }
    let h = eig.eigenvectors.column(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(HomographyError::Degenerate)?;
    Homography::from_matrix(td_inv * hn * ts).map_err(|_| HomographyError::Degenerate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub inlier_threshold: f64,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            inlier_threshold: 3.0,
            confidence: 0.995,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), HomographyError> {
        if !(self.inlier_threshold > 0.0) {
            return Err(HomographyError::InvalidConfig(
                "inlier_threshold must be > 0",
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(HomographyError::InvalidConfig(
                "confidence must be in (0, 1)",
            ));
        }
        if self.max_iterations == 0 {
            return Err(HomographyError::InvalidConfig(
                "max_iterations must be >= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacEstimate {
    pub homography: Homography,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    pub iterations: usize,
}

impl RansacEstimate {
    /// Mean transfer error over the inlier set.
    pub fn mean_inlier_error(&self, pairs: &[PointPair]) -> f64 {
        if self.inlier_count == 0 {
            return f64::INFINITY;
        }
        pairs
            .iter()
            .zip(&self.inliers)
            .filter(|(_, &k)| k)
            .map(|(p, _)| transfer_error(&self.homography, p))
            .sum::<f64>()
            / self.inlier_count as f64
    }
}

struct Consensus {
    mask: Vec<bool>,
    count: usize,
    sse: f64,
}

fn score(h: &Homography, pairs: &[PointPair], threshold: f64) -> Consensus {
    let mut mask = vec![false; pairs.len()];
    let mut count = 0;
    let mut sse = 0.0;
    for (m, p) in mask.iter_mut().zip(pairs) {
        let e = transfer_error(h, p);
        if e < threshold {
            *m = true;
            count += 1;
            sse += e * e;
        }
    }
    Consensus { mask, count, sse }
}

impl Consensus {
    fn beats(&self, other: &Consensus) -> bool {
        self.count > other.count || (self.count == other.count && self.sse < other.sse)
    }
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> usize {
    let p = inlier_ratio.powi(4);
    if p >= 1.0 {
        return 1;
    }
    if p <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Hypothesize-and-verify over minimal 4-point samples, refit by DLT on the
/// final consensus set. Deterministic for a given `cfg.seed`.
pub fn estimate_ransac(
    pairs: &[PointPair],
    cfg: &RansacConfig,
) -> Result<RansacEstimate, HomographyError> {
    cfg.validate()?;
    if pairs.len() < 4 {
        return Err(HomographyError::InsufficientPairs(pairs.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Homography, Consensus)> = None;
    let mut needed = cfg.max_iterations;
    let mut iterations = 0;
    let mut sample = Vec::with_capacity(4);

    while iterations < needed.min(cfg.max_iterations) {
        iterations += 1;
        sample.clear();
        sample.extend(
            index::sample(&mut rng, pairs.len(), 4)
                .into_iter()
                .map(|i| pairs[i]),
        );
        let Ok(h) = estimate_dlt(&sample) else {
            continue;
        };
        let c = score(&h, pairs, cfg.inlier_threshold);
        if best.as_ref().is_none_or(|(_, b)| c.beats(b)) {
            needed = required_iterations(c.count as f64 / pairs.len() as f64, cfg.confidence);
            best = Some((h, c));
        }
    }

    let (h, c) = match best {
        Some(b) if b.1.count >= 4 => b,
        Some(b) => return Err(HomographyError::NoConsensus(b.1.count)),
        None => return Err(HomographyError::NoConsensus(0)),
    };
    let support: Vec<PointPair> = pairs
        .iter()
        .zip(&c.mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| *p)
        .collect();
    let (homography, consensus) = match estimate_dlt(&support) {
        Ok(refit) => {
            let rc = score(&refit, pairs, cfg.inlier_threshold);
            if rc.count >= c.count {
                (refit, rc)
            } else {
                (h, c)
            }
        }
        Err(_) => (h, c),
    };
    Ok(RansacEstimate {
        homography,
        inlier_count: consensus.count,
        inliers: consensus.mask,
        iterations,
    })
}
