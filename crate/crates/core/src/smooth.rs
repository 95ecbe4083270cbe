//! Trajectory smoothers: moving average, Gaussian kernel, Savitzky-Golay and
//! robust Lowess, with support for missing samples and evaluation at
//! timestamps that carry no data.
//!
//! Windows are measured in frames. Missing entries are excluded from every
//! local fit rather than interpolated beforehand.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::CanonicalTrajectory;
use crate::homography::Point2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmoothError {
    #[error("need at least {needed} present points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid smoother settings: {0}")]
    InvalidSpec(String),
    #[error("query t = {query} lies outside the supported range [{lo}, {hi}]")]
    OutOfRange { query: i64, lo: i64, hi: i64 },
    #[error("no present samples near t = {0}")]
    NoSupport(i64),
    #[error("series timestamps must be strictly increasing and match value count")]
    MalformedSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothMethod {
    #[serde(alias = "movmean")]
    MovMean,
    Gaussian,
    #[serde(alias = "sg")]
    SavitzkyGolay,
    Lowess,
}

impl SmoothMethod {
    pub fn name(self) -> &'static str {
        match self {
            SmoothMethod::MovMean => "movmean",
            SmoothMethod::Gaussian => "gaussian",
            SmoothMethod::SavitzkyGolay => "savitzky_golay",
            SmoothMethod::Lowess => "lowess",
        }
    }

    pub const ALL: [SmoothMethod; 4] = [
        SmoothMethod::MovMean,
        SmoothMethod::Gaussian,
        SmoothMethod::SavitzkyGolay,
        SmoothMethod::Lowess,
    ];
}

impl std::str::FromStr for SmoothMethod {
    type Err = SmoothError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "movmean" | "moving_average" => Ok(SmoothMethod::MovMean),
            "gaussian" => Ok(SmoothMethod::Gaussian),
            "sg" | "savgol" | "savitzky_golay" | "savitzky-golay" => {
                Ok(SmoothMethod::SavitzkyGolay)
            }
            "lowess" => Ok(SmoothMethod::Lowess),
            other => Err(SmoothError::InvalidSpec(format!(
                "unknown method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherSpec {
    pub method: SmoothMethod,
    /// Odd window length in frames (moving average, Savitzky-Golay).
    pub window: usize,
    /// Gaussian kernel width in frames; support is `ceil(3 sigma)`.
    pub sigma: f64,
    pub poly_order: usize,
    /// Lowess neighbourhood as a fraction of the present samples (minimum 5).
    pub fraction: f64,
    pub robust_iters: usize,
}

impl Default for SmootherSpec {
    fn default() -> Self {
        Self::new(SmoothMethod::SavitzkyGolay)
    }
}

impl SmootherSpec {
    pub fn new(method: SmoothMethod) -> Self {
        Self {
            method,
            window: 11,
            sigma: 2.0,
            poly_order: 2,
            fraction: 0.1,
            robust_iters: 2,
        }
    }

    pub fn validate(&self) -> Result<(), SmoothError> {
        let bad = |m: &str| Err(SmoothError::InvalidSpec(m.to_string()));
        if self.window < 3 || self.window.is_multiple_of(2) {
            return bad("window must be odd and >= 3");
        }
        match self.method {
            SmoothMethod::SavitzkyGolay if self.poly_order >= self.window => {
                bad("poly_order must be < window")
            }
            SmoothMethod::Gaussian if !(self.sigma > 0.0 && self.sigma.is_finite()) => {
                bad("sigma must be > 0")
            }
            SmoothMethod::Lowess if !(self.fraction > 0.0 && self.fraction <= 1.0) => {
                bad("fraction must be in (0, 1]")
            }
            _ => Ok(()),
        }
    }

    fn min_points(&self) -> usize {
        match self.method {
            SmoothMethod::MovMean | SmoothMethod::SavitzkyGolay => self.window,
            SmoothMethod::Gaussian | SmoothMethod::Lowess => 5,
        }
    }

    fn half(&self) -> i64 {
        (self.window / 2) as i64
    }
}

/// Values over strictly increasing frame indices, with a presence mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub t: Vec<i64>,
    pub v: Vec<f64>,
    pub present: Vec<bool>,
}

impl Series {
    pub fn new(t: Vec<i64>, v: Vec<f64>, present: Vec<bool>) -> Result<Self, SmoothError> {
        if t.len() != v.len() || t.len() != present.len() || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SmoothError::MalformedSeries);
        }
        if v.iter().zip(&present).any(|(x, &p)| p && !x.is_finite()) {
            return Err(SmoothError::MalformedSeries);
        }
        Ok(Self { t, v, present })
    }

    /// Dense series `t = 0..n` from optional values.
    pub fn from_options(values: &[Option<f64>]) -> Self {
        Self {
            t: (0..values.len() as i64).collect(),
            v: values.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            present: values.iter().map(Option::is_some).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.present[i].then_some(self.v[i])
    }

    fn samples(&self) -> Samples {
        let (t, v) = self
            .t
            .iter()
            .zip(&self.v)
            .zip(&self.present)
            .filter(|(_, &p)| p)
            .map(|((&t, &v), _)| (t, v))
            .unzip();
        Samples { t, v }
    }
}

/// Present samples only, in time order.
struct Samples {
    t: Vec<i64>,
    v: Vec<f64>,
}

impl Samples {
    fn len(&self) -> usize {
        self.t.len()
    }

    fn first(&self) -> i64 {
        self.t[0]
    }

    fn last(&self) -> i64 {
        self.t[self.t.len() - 1]
    }

    /// Index range of samples with `lo <= t <= hi`.
    fn range(&self, lo: i64, hi: i64) -> std::ops::Range<usize> {
        let a = self.t.partition_point(|&t| t < lo);
        let b = self.t.partition_point(|&t| t <= hi);
        a..b.max(a)
    }
}

fn movmean_at(s: &Samples, q: i64, half: i64) -> Result<f64, SmoothError> {
    let k = if q >= s.first() && q <= s.last() {
        half.min(q - s.first()).min(s.last() - q)
    } else {
        half
    };
    let r = s.range(q - k, q + k);
    if r.is_empty() {
        return Err(SmoothError::NoSupport(q));
    }
    let n = r.len() as f64;
    Ok(s.v[r].iter().sum::<f64>() / n)
}

fn gaussian_at(s: &Samples, q: i64, sigma: f64) -> Result<f64, SmoothError> {
    let radius = (3.0 * sigma).ceil() as i64;
    let r = s.range(q - radius, q + radius);
    let (mut acc, mut wsum) = (0.0, 0.0);
    for i in r {
        let d = (s.t[i] - q) as f64;
        let w = (-d * d / (2.0 * sigma * sigma)).exp();
        acc += w * s.v[i];
        wsum += w;
    }
    if wsum <= 0.0 {
        return Err(SmoothError::NoSupport(q));
    }
    Ok(acc / wsum)
}

fn savgol_at(s: &Samples, q: i64, half: i64, order: usize) -> Result<f64, SmoothError> {
    let (first, last) = (s.first(), s.last());
    let (mut lo, mut hi) = (q - half, q + half);
    // keep the window inside the data so boundary points get a one-sided fit
    if lo < first {
        lo = first;
        hi = first + 2 * half;
    }
    if hi > last {
        hi = last;
        lo = (last - 2 * half).max(first.min(lo));
    }
    let needed = order + 1;
    let mut r = s.range(lo, hi);
    while r.len() < needed {
        if lo <= first && hi >= last {
            return Err(SmoothError::TooFewPoints {
                needed,
                got: r.len(),
            });
        }
        lo -= 1;
        hi += 1;
        r = s.range(lo, hi);
    }
    let scale = ((hi - lo) as f64 / 2.0).max(1.0);
    let n = r.len();
    let mut a = DMatrix::<f64>::zeros(n, needed);
    let mut b = DVector::<f64>::zeros(n);
    for (row, i) in r.enumerate() {
        let u = (s.t[i] - q) as f64 / scale;
        let mut p = 1.0;
        for c in 0..needed {
            a[(row, c)] = p;
            p *= u;
        }
        b[row] = s.v[i];
    }
    let svd = a.svd(true, true);
    let coef = svd
        .solve(&b, 1e-12)
        .map_err(|e| SmoothError::InvalidSpec(e.to_string()))?;
    Ok(coef[0])
}

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let c = 1.0 - u * u * u;
        c * c * c
    }
}

fn bisquare(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let c = 1.0 - u * u;
        c * c
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Lowess<'a> {
    s: &'a Samples,
    k: usize,
    robust: Vec<f64>,
}

impl<'a> Lowess<'a> {
    fn new(s: &'a Samples, spec: &SmootherSpec) -> Self {
        let k = ((spec.fraction * s.len() as f64).ceil() as usize)
            .max(5)
            .min(s.len());
        let mut this = Self {
            s,
            k,
            robust: vec![1.0; s.len()],
        };
        for _ in 0..spec.robust_iters {
            let residuals: Vec<f64> = (0..s.len()).map(|i| s.v[i] - this.fit_at(s.t[i])).collect();
            let mad = median(residuals.iter().map(|r| r.abs()).collect());
            if mad <= 0.0 {
                break;
            }
            this.robust = residuals
                .iter()
                .map(|r| bisquare(r / (6.0 * mad)))
                .collect();
        }
        this
    }

    /// Indices of the `k` samples nearest to `q` (ties resolved toward earlier times).
    fn neighbours(&self, q: i64) -> std::ops::Range<usize> {
        let t = &self.s.t;
        let mut lo = t.partition_point(|&x| x < q);
        let mut hi = lo;
        while hi - lo < self.k {
            let take_left = match (lo > 0, hi < t.len()) {
                (true, true) => q - t[lo - 1] <= t[hi] - q,
                (true, false) => true,
                (false, true) => false,
                (false, false) => break,
            };
            if take_left {
                lo -= 1;
            } else {
                hi += 1;
            }
        }
        lo..hi
    }

    fn fit_at(&self, q: i64) -> f64 {
        let r = self.neighbours(q);
        let h = r
            .clone()
            .map(|i| (self.s.t[i] - q).abs())
            .max()
            .unwrap_or(0)
            .max(1) as f64;
        let weights: Vec<(usize, f64)> = r
            .clone()
            .map(|i| {
                (
                    i,
                    tricube((self.s.t[i] - q).abs() as f64 / h) * self.robust[i],
                )
            })
            .collect();
        let weights = if weights.iter().map(|w| w.1).sum::<f64>() > 0.0 {
            weights
        } else {
            r.map(|i| (i, tricube((self.s.t[i] - q).abs() as f64 / h)))
                .collect()
        };
        weighted_line_at(self.s, &weights, q)
    }
}

/// Weighted least-squares line evaluated at `q`; falls back to the weighted
/// mean when the abscissae carry no spread.
fn weighted_line_at(s: &Samples, weights: &[(usize, f64)], q: i64) -> f64 {
    let sw: f64 = weights.iter().map(|w| w.1).sum();
    if sw <= 0.0 {
        // every weight vanished: plain average of the neighbourhood
        let n = weights.len() as f64;
        return weights.iter().map(|&(i, _)| s.v[i]).sum::<f64>() / n;
    }
    let tm = weights
        .iter()
        .map(|&(i, w)| w * (s.t[i] - q) as f64)
        .sum::<f64>()
        / sw;
    let vm = weights.iter().map(|&(i, w)| w * s.v[i]).sum::<f64>() / sw;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(i, w) in weights {
        let dx = (s.t[i] - q) as f64 - tm;
        sxy += w * dx * (s.v[i] - vm);
        sxx += w * dx * dx;
    }
    if sxx <= 1e-12 * sw {
        return vm;
    }
    vm - (sxy / sxx) * tm
}

fn check_points(spec: &SmootherSpec, s: &Samples) -> Result<(), SmoothError> {
    let needed = spec.min_points();
    if s.len() < needed {
        return Err(SmoothError::TooFewPoints {
            needed,
            got: s.len(),
        });
    }
    Ok(())
}

fn evaluate_samples(
    s: &Samples,
    queries: &[i64],
    spec: &SmootherSpec,
) -> Result<Vec<f64>, SmoothError> {
    match spec.method {
        SmoothMethod::MovMean => queries
            .iter()
            .map(|&q| movmean_at(s, q, spec.half()))
            .collect(),
        SmoothMethod::Gaussian => queries
            .iter()
            .map(|&q| gaussian_at(s, q, spec.sigma))
            .collect(),
        SmoothMethod::SavitzkyGolay => queries
            .iter()
            .map(|&q| savgol_at(s, q, spec.half(), spec.poly_order))
            .collect(),
        SmoothMethod::Lowess => {
            let lw = Lowess::new(s, spec);
            Ok(queries.iter().map(|&q| lw.fit_at(q)).collect())
        }
    }
}

/// Smooths the present entries; absent entries stay absent.
pub fn smooth_series(series: &Series, spec: &SmootherSpec) -> Result<Series, SmoothError> {
    spec.validate()?;
    let s = series.samples();
    check_points(spec, &s)?;
    let fitted = evaluate_samples(&s, &s.t, spec)?;
    let mut v = vec![f64::NAN; series.len()];
    let mut it = fitted.into_iter();
    for (slot, &p) in v.iter_mut().zip(&series.present) {
        if p {
            *slot = it.next().expect("one fitted value per present sample");
        }
    }
    Ok(Series {
        t: series.t.clone(),
        v,
        present: series.present.clone(),
    })
}

/// Evaluates the smoother's local model at arbitrary frame indices, including
/// frames without data, up to one window beyond the data range.
pub fn evaluate_at(
    series: &Series,
    queries: &[i64],
    spec: &SmootherSpec,
) -> Result<Vec<f64>, SmoothError> {
    spec.validate()?;
    let s = series.samples();
    check_points(spec, &s)?;
    let margin = spec.window as i64;
    let (lo, hi) = (s.first() - margin, s.last() + margin);
    if let Some(&q) = queries.iter().find(|&&q| q < lo || q > hi) {
        return Err(SmoothError::OutOfRange { query: q, lo, hi });
    }
    evaluate_samples(&s, queries, spec)
}

/// Smooths canonical x(t) and y(t) independently with the same settings.
pub fn smooth_canonical(
    traj: &CanonicalTrajectory,
    spec: &SmootherSpec,
) -> Result<CanonicalTrajectory, SmoothError> {
    let xs: Vec<Option<f64>> = traj.points.iter().map(|p| p.map(|p| p.x)).collect();
    let ys: Vec<Option<f64>> = traj.points.iter().map(|p| p.map(|p| p.y)).collect();
    let sx = smooth_series(&Series::from_options(&xs), spec)?;
    let sy = smooth_series(&Series::from_options(&ys), spec)?;
    Ok(CanonicalTrajectory {
        points: (0..traj.points.len())
            .map(|i| match (sx.get(i), sy.get(i)) {
                (Some(x), Some(y)) => Some(Point2::new(x, y)),
                _ => None,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn dense(v: Vec<f64>) -> Series {
        let n = v.len();
        Series::new((0..n as i64).collect(), v, vec![true; n]).unwrap()
    }

    fn all_specs() -> Vec<SmootherSpec> {
        SmoothMethod::ALL
            .iter()
            .map(|&m| SmootherSpec::new(m))
            .collect()
    }

    #[test]
    fn constants_are_preserved() {
        let s = dense(vec![7.0; 40]);
        for spec in all_specs() {
            let out = smooth_series(&s, &spec).unwrap();
            for v in &out.v {
                assert!((v - 7.0).abs() < 1e-9, "{:?}: {v}", spec.method);
            }
        }
    }

    #[test]
    fn savgol_reproduces_quadratic_everywhere() {
        let f = |t: f64| 0.5 * t * t - 3.0 * t + 2.0;
        let s = dense((0..=40).map(|t| f(t as f64)).collect());
        let out = smooth_series(&s, &SmootherSpec::new(SmoothMethod::SavitzkyGolay)).unwrap();
        for (t, v) in out.t.iter().zip(&out.v) {
            assert!((v - f(*t as f64)).abs() < 1e-9, "t={t}: {v}");
        }
    }

    #[test]
    fn movmean_shrinks_window_at_edges() {
        let spec = SmootherSpec {
            window: 3,
            ..SmootherSpec::new(SmoothMethod::MovMean)
        };
        let out = smooth_series(&dense(vec![0.0, 0.0, 3.0, 0.0, 0.0]), &spec).unwrap();
        assert_eq!(out.v, vec![0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn smoothing_reduces_noise_on_sinusoid() {
        let truth: Vec<f64> = (0..200)
            .map(|t| 20.0 * (2.0 * std::f64::consts::PI * t as f64 / 100.0).sin())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let noise = Normal::new(0.0, 4.0).unwrap();
        let noisy: Vec<f64> = truth.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let rmse = |a: &[f64]| {
            (a.iter()
                .zip(&truth)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                / a.len() as f64)
                .sqrt()
        };
        let before = rmse(&noisy);
        for spec in all_specs() {
            let out = smooth_series(&dense(noisy.clone()), &spec).unwrap();
            let after = rmse(&out.v);
            assert!(after < before, "{:?}: {after} !< {before}", spec.method);
        }
    }

    #[test]
    fn absent_entries_stay_absent_and_are_ignored() {
        let mut present = vec![true; 30];
        present[4] = false;
        present[17] = false;
        let v: Vec<f64> = (0..30)
            .map(|i| if i == 4 || i == 17 { 1e6 } else { 3.0 })
            .collect();
        let s = Series::new((0..30).collect(), v, present).unwrap();
        for spec in all_specs() {
            let out = smooth_series(&s, &spec).unwrap();
            assert!(out.get(4).is_none() && out.get(17).is_none());
            for i in (0..30).filter(|&i| i != 4 && i != 17) {
                assert!((out.v[i] - 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn too_few_points_and_bad_specs() {
        let s = dense(vec![1.0; 4]);
        for spec in all_specs() {
            assert!(matches!(
                smooth_series(&s, &spec),
                Err(SmoothError::TooFewPoints { .. })
            ));
        }
        let even = SmootherSpec {
            window: 10,
            ..SmootherSpec::default()
        };
        assert!(matches!(even.validate(), Err(SmoothError::InvalidSpec(_))));
        let high = SmootherSpec {
            window: 5,
            poly_order: 5,
            ..SmootherSpec::default()
        };
        assert!(high.validate().is_err());
        assert!(Series::new(vec![0, 0], vec![1.0, 2.0], vec![true, true]).is_err());
    }

    #[test]
    fn single_point_canonical_is_rejected() {
        let mut points = vec![None; 20];
        points[3] = Some(Point2::new(1.0, 2.0));
        let traj = CanonicalTrajectory { points };
        assert!(matches!(
            smooth_canonical(&traj, &SmootherSpec::default()),
            Err(SmoothError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn canonical_constant_and_jittered_line() {
        let traj = CanonicalTrajectory {
            points: vec![Some(Point2::new(10.0, 20.0)); 30],
        };
        let out = smooth_canonical(&traj, &SmootherSpec::default()).unwrap();
        for p in out.points.iter().flatten() {
            assert!((p.x - 10.0).abs() < 1e-9 && (p.y - 20.0).abs() < 1e-9);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let jitter = Normal::new(0.0, 2.0).unwrap();
        let line = |t: f64| Point2::new(5.0 + 1.5 * t, 40.0 - 0.5 * t);
        let traj = CanonicalTrajectory {
            points: (0..80)
                .map(|t| {
                    let p = line(t as f64);
                    Some(Point2::new(
                        p.x + jitter.sample(&mut rng),
                        p.y + jitter.sample(&mut rng),
                    ))
                })
                .collect(),
        };
        let err = |tr: &CanonicalTrajectory| {
            tr.points
                .iter()
                .enumerate()
                .map(|(t, p)| p.unwrap().distance(&line(t as f64)).powi(2))
                .sum::<f64>()
        };
        for spec in all_specs() {
            let out = smooth_canonical(&traj, &spec).unwrap();
            assert!(err(&out) < err(&traj), "{:?}", spec.method);
        }
    }

    #[test]
    fn lowess_reproduces_line_at_gaps() {
        let t: Vec<i64> = (0..=10).map(|i| 2 * i).collect();
        let v: Vec<f64> = t.iter().map(|&t| 2.0 * t as f64 + 1.0).collect();
        let s = Series::new(t, v, vec![true; 11]).unwrap();
        let out = evaluate_at(&s, &[3], &SmootherSpec::new(SmoothMethod::Lowess)).unwrap();
        assert!((out[0] - 7.0).abs() < 1e-6);
    }

    #[test]
    fn savgol_reproduces_quadratic_at_gaps() {
        let f = |t: f64| 0.25 * t * t - 2.0 * t + 5.0;
        let t: Vec<i64> = (0..=30).map(|i| 2 * i).collect();
        let v: Vec<f64> = t.iter().map(|&t| f(t as f64)).collect();
        let s = Series::new(t, v, vec![true; 31]).unwrap();
        let queries: Vec<i64> = (0..30).map(|i| 2 * i + 1).collect();
        let out = evaluate_at(&s, &queries, &SmootherSpec::default()).unwrap();
        for (q, v) in queries.iter().zip(out) {
            assert!((v - f(*q as f64)).abs() < 1e-6);
        }
    }

    #[test]
    fn sparse_sinusoid_is_interpolated() {
        let f = |t: f64| 20.0 * (2.0 * std::f64::consts::PI * t / 60.0).sin();
        let t: Vec<i64> = (0..=60).map(|i| 5 * i).collect();
        let v: Vec<f64> = t.iter().map(|&t| f(t as f64)).collect();
        let s = Series::new(t, v, vec![true; 61]).unwrap();
        let queries: Vec<i64> = (0..300).filter(|q| q % 5 != 0).collect();
        let out = evaluate_at(&s, &queries, &SmootherSpec::default()).unwrap();
        let worst = queries
            .iter()
            .zip(&out)
            .map(|(&q, v)| (v - f(q as f64)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.5, "max error {worst}");
    }

    #[test]
    fn queries_far_outside_are_rejected() {
        let s = dense((0..30).map(|i| i as f64).collect());
        assert!(matches!(
            evaluate_at(&s, &[50], &SmootherSpec::default()),
            Err(SmoothError::OutOfRange { .. })
        ));
        assert!(evaluate_at(&s, &[35], &SmootherSpec::default()).is_ok());
    }

    fn arb_series() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 12..60)
    }

    proptest! {
        #[test]
        fn shift_equivariance(v in arb_series(), c in -100.0f64..100.0) {
            let base = dense(v.clone());
            let shifted = dense(v.iter().map(|x| x + c).collect());
            for spec in all_specs() {
                let a = smooth_series(&base, &spec).unwrap();
                let b = smooth_series(&shifted, &spec).unwrap();
                for (x, y) in a.v.iter().zip(&b.v) {
                    prop_assert!((x + c - y).abs() <= 1e-9 * (1.0 + y.abs()), "{:?}", spec.method);
                }
            }
        }

        #[test]
        fn scale_equivariance(v in arb_series(), a in 0.05f64..20.0) {
            let base = dense(v.clone());
            let scaled = dense(v.iter().map(|x| x * a).collect());
            for spec in all_specs() {
                let s1 = smooth_series(&base, &spec).unwrap();
                let s2 = smooth_series(&scaled, &spec).unwrap();
                let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) * a;
                for (x, y) in s1.v.iter().zip(&s2.v) {
                    prop_assert!((x * a - y).abs() <= 1e-9 * scale.max(1e-12), "{:?}", spec.method);
                }
            }
        }

        #[test]
        fn kernel_smoothers_are_convex(v in arb_series()) {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for m in [SmoothMethod::MovMean, SmoothMethod::Gaussian] {
                let out = smooth_series(&dense(v.clone()), &SmootherSpec::new(m)).unwrap();
                for x in &out.v {
                    prop_assert!(*x >= lo - 1e-12 && *x <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn savgol_reproduces_polynomials(c0 in -5.0f64..5.0, c1 in -1.0f64..1.0, c2 in -0.1f64..0.1, c3 in -0.01f64..0.01, n in 15usize..50) {
            let f = |t: f64| c0 + c1 * t + c2 * t * t + c3 * t * t * t;
            let s = dense((0..n).map(|t| f(t as f64)).collect());
            let spec = SmootherSpec { poly_order: 3, ..SmootherSpec::default() };
            let out = smooth_series(&s, &spec).unwrap();
            for (t, v) in out.t.iter().zip(&out.v) {
                prop_assert!((v - f(*t as f64)).abs() <= 1e-9 * (1.0 + f(*t as f64).abs()));
            }
        }
    }
}
