//! Enhanced-correlation-coefficient template alignment.
//!
//! Maximizes the zero-mean normalized correlation between a template region
//! and the warped target with forward-additive Gauss-Newton style updates,
//! coarse to fine over a 2x2 box pyramid. The warp maps template coordinates
//! into target coordinates: `target(W(x)) ~ template(x)`.
//!
//! Warps are parameterized in coordinates centred on the template region so
//! that translation, affine and projective parameters stay well scaled.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::BBox;
use crate::homography::Homography;
use crate::raster::{GradientPair, GrayImage};

const MIN_REGION_AREA: f64 = 64.0;
const MIN_LEVEL_SIDE: usize = 8;
const RHO_TOLERANCE: f64 = 1e-6;
const MAX_HALVINGS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EccError {
    #[error("template region lies outside the template image")]
    RegionOutOfBounds,
    #[error("template region area {0:.1} px² is below the 64 px² minimum")]
    RegionTooSmall(f64),
    #[error("template region has near-zero intensity variance")]
    DegenerateTemplate,
    #[error("no convergence within the iteration budget (rho = {rho:.4})")]
    NonConvergence { rho: f64 },
    #[error("warp left the target image")]
    LostOverlap,
    #[error("invalid ECC configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpModel {
    Translation,
    Affine,
    Homography,
}

impl std::str::FromStr for WarpModel {
    type Err = EccError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "translation" => Ok(WarpModel::Translation),
            "affine" => Ok(WarpModel::Affine),
            "homography" => Ok(WarpModel::Homography),
            _ => Err(EccError::InvalidConfig("unknown warp model")),
        }
    }
}

impl WarpModel {
    pub fn parameter_count(self) -> usize {
        match self {
            WarpModel::Translation => 2,
            WarpModel::Affine => 6,
            WarpModel::Homography => 8,
        }
    }

    fn params(self, m: &Matrix3<f64>) -> DVector<f64> {
        match self {
            WarpModel::Translation => DVector::from_vec(vec![m[(0, 2)], m[(1, 2)]]),
            WarpModel::Affine => DVector::from_vec(vec![
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
            ]),
            WarpModel::Homography => DVector::from_vec(vec![
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 0)],
                m[(2, 1)],
            ]),
        }
    }

    fn matrix(self, p: &DVector<f64>) -> Matrix3<f64> {
        match self {
            WarpModel::Translation => Matrix3::new(1.0, 0.0, p[0], 0.0, 1.0, p[1], 0.0, 0.0, 1.0),
            WarpModel::Affine => Matrix3::new(p[0], p[1], p[2], p[3], p[4], p[5], 0.0, 0.0, 1.0),
            WarpModel::Homography => {
                Matrix3::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 1.0)
            }
        }
    }

    /// Projects a normalized matrix onto this model's parameter manifold.
    fn restrict(self, m: &Matrix3<f64>) -> Matrix3<f64> {
        let m = if m[(2, 2)].abs() > 1e-12 {
            m / m[(2, 2)]
        } else {
            *m
        };
        match self {
            WarpModel::Translation => {
                Matrix3::new(1.0, 0.0, m[(0, 2)], 0.0, 1.0, m[(1, 2)], 0.0, 0.0, 1.0)
            }
            WarpModel::Affine => Matrix3::new(
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
                0.0,
                0.0,
                1.0,
            ),
            WarpModel::Homography => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EccConfig {
    pub max_iterations: usize,
    pub epsilon: f64,
    pub pyramid_levels: usize,
    pub model: WarpModel,
    /// Refine an affine model as a full homography on the finest level.
    pub promote_on_finest: bool,
    pub min_rho: f64,
    /// Gaussian blur applied to both images before alignment; 0 disables it.
    pub presmooth_sigma: f64,
}

impl Default for EccConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            epsilon: 1e-4,
            pyramid_levels: 3,
            model: WarpModel::Affine,
            promote_on_finest: true,
            min_rho: 0.6,
            presmooth_sigma: 0.0,
        }
    }
}

impl EccConfig {
    pub fn validate(&self) -> Result<(), EccError> {
        if self.max_iterations == 0 {
            return Err(EccError::InvalidConfig("max_iterations must be >= 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(EccError::InvalidConfig("epsilon must be > 0"));
        }
        if self.pyramid_levels == 0 {
            return Err(EccError::InvalidConfig("pyramid_levels must be >= 1"));
        }
        if !(self.presmooth_sigma.is_finite() && self.presmooth_sigma >= 0.0) {
            return Err(EccError::InvalidConfig("presmooth_sigma must be >= 0"));
        }
        Ok(())
    }
}

/// Correlation trace of one pyramid level; entry 0 is the starting value and
/// every later entry is an accepted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub level: usize,
    pub model: WarpModel,
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EccResult {
    pub warp: Homography,
    pub rho: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<LevelTrace>,
}

/// Zero-mean normalized correlation; 0 when either input has no variance.
pub fn correlation_coefficient(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        ab += dx * dy;
        aa += dx * dx;
        bb += dy * dy;
    }
    if aa <= 0.0 || bb <= 0.0 {
        0.0
    } else {
        (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Maps full-resolution pixel coordinates onto pyramid level `l`.
fn to_level(v: f64, l: usize) -> f64 {
    let s = (1u64 << l) as f64;
    (v + 0.5) / s - 0.5
}

struct Level {
    target: GrayImage,
    gradients: GradientPair,
    // template samples in region-centred coordinates
    coords: Vec<(f64, f64)>,
    values: Vec<f64>,
    center: (f64, f64),
}

struct Evaluation {
    rho: f64,
    warped: Vec<f64>,
    template: Vec<f64>,
    jacobian: DMatrix<f64>,
}

impl Level {
    fn build(template: &GrayImage, target: GrayImage, region: &BBox, l: usize) -> Option<Level> {
        let x0 = to_level(region.x, l).ceil().max(0.0) as usize;
        let y0 = to_level(region.y, l).ceil().max(0.0) as usize;
        let x1 = to_level(region.x + region.w - 1.0, l)
            .floor()
            .min(template.width() as f64 - 1.0);
        let y1 = to_level(region.y + region.h - 1.0, l)
            .floor()
            .min(template.height() as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            return None;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        if x1 + 1 < x0 + MIN_LEVEL_SIDE || y1 + 1 < y0 + MIN_LEVEL_SIDE {
            return None;
        }
        let center = (
            to_level(region.x + (region.w - 1.0) / 2.0, l),
            to_level(region.y + (region.h - 1.0) / 2.0, l),
        );
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                coords.push((x as f64 - center.0, y as f64 - center.1));
                values.push(template.get(x, y));
            }
        }
        let gradients = target.gradients().ok()?;
        Some(Level {
            target,
            gradients,
            coords,
            values,
            center,
        })
    }

    fn evaluate(&self, model: WarpModel, m: &Matrix3<f64>) -> Option<Evaluation> {
        let n_params = model.parameter_count();
        let (w, h) = (self.target.width() as f64, self.target.height() as f64);
        let mut warped = Vec::with_capacity(self.coords.len());
        let mut template = Vec::with_capacity(self.coords.len());
        let mut rows: Vec<f64> = Vec::with_capacity(self.coords.len() * n_params);
        for (&(u, v), &t) in self.coords.iter().zip(&self.values) {
            let den = m[(2, 0)] * u + m[(2, 1)] * v + m[(2, 2)];
            if den.abs() < 1e-9 {
                continue;
            }
            let xw = (m[(0, 0)] * u + m[(0, 1)] * v + m[(0, 2)]) / den;
            let yw = (m[(1, 0)] * u + m[(1, 1)] * v + m[(1, 2)]) / den;
            let (tx, ty) = (xw + self.center.0, yw + self.center.1);
            if !(tx >= 0.0 && ty >= 0.0 && tx <= w - 1.0 && ty <= h - 1.0) {
                continue;
            }
            let (ix, iy) = self.gradients.sample(tx, ty);
            warped.push(self.target.sample_bilinear(tx, ty));
            template.push(t);
            match model {
                WarpModel::Translation => rows.extend_from_slice(&[ix, iy]),
                WarpModel::Affine => {
                    rows.extend_from_slice(&[ix * u, ix * v, ix, iy * u, iy * v, iy])
                }
                WarpModel::Homography => {
                    let g = -(ix * xw + iy * yw);
                    rows.extend_from_slice(&[
                        ix * u / den,
                        ix * v / den,
                        ix / den,
                        iy * u / den,
                        iy * v / den,
                        iy / den,
                        g * u / den,
                        g * v / den,
                    ]);
                }
            }
        }
        if warped.len() < (self.coords.len() / 4).max(n_params + 1) {
            return None;
        }
        let rho = correlation_coefficient(&template, &warped);
        let n = warped.len();
        Some(Evaluation {
            rho,
            warped,
            template,
            jacobian: DMatrix::from_row_slice(n, n_params, &rows),
        })
    }
}

fn zero_mean(v: &[f64]) -> DVector<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    DVector::from_iterator(v.len(), v.iter().map(|x| x - m))
}

/// One ECC update direction, or `None` when the correlation cannot increase.
fn update_direction(e: &Evaluation) -> Option<DVector<f64>> {
    let g = &e.jacobian;
    let t = zero_mean(&e.template);
    let iw = zero_mean(&e.warped);
    let hessian = g.transpose() * g;
    let chol = hessian.clone().cholesky();
    let solve = |rhs: &DVector<f64>| -> Option<DVector<f64>> {
        match &chol {
            Some(c) => Some(c.solve(rhs)),
            None => hessian.clone().lu().solve(rhs),
        }
    };
    let gi = g.transpose() * &iw;
    let gt = g.transpose() * &t;
    let h_gi = solve(&gi)?;
    let lambda_n = iw.norm_squared() - gi.dot(&h_gi);
    let lambda_d = t.dot(&iw) - gt.dot(&h_gi);
    if !(lambda_d > 0.0) || !(lambda_n > 0.0) {
        return None;
    }
    let lambda = lambda_n / lambda_d;
    let err = &t * lambda - &iw;
    let dp = solve(&(g.transpose() * err))?;
    dp.iter().all(|v| v.is_finite()).then_some(dp)
}

struct LevelOutcome {
    matrix: Matrix3<f64>,
    rho: f64,
    converged: bool,
    trace: Vec<f64>,
}

fn run_level(
    level: &Level,
    model: WarpModel,
    start: Matrix3<f64>,
    cfg: &EccConfig,
) -> Result<LevelOutcome, EccError> {
    let mut params = model.params(&model.restrict(&start));
    let mut current = level
        .evaluate(model, &model.matrix(&params))
        .ok_or(EccError::LostOverlap)?;
    let mut trace = vec![current.rho];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let Some(mut step) = update_direction(&current) else {
            break;
        };
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &params + &step;
            if let Some(e) = level.evaluate(model, &model.matrix(&candidate)) {
                if e.rho >= current.rho - RHO_TOLERANCE {
                    accepted = Some((candidate, e));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((candidate, e)) = accepted else {
            break;
        };
        params = candidate;
        current = e;
        trace.push(current.rho);
        if step.norm() < cfg.epsilon {
            converged = true;
            break;
        }
    }
    Ok(LevelOutcome {
        matrix: model.matrix(&params),
        rho: current.rho,
        converged,
        trace,
    })
}

fn translate(tx: f64, ty: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0)
}

fn rescale_local(m: &Matrix3<f64>, factor: f64) -> Matrix3<f64> {
    // S m S^-1 with S = diag(factor, factor, 1)
    let s = Matrix3::new(factor, 0.0, 0.0, 0.0, factor, 0.0, 0.0, 0.0, 1.0);
    let s_inv = Matrix3::new(
        1.0 / factor,
        0.0,
        0.0,
        0.0,
        1.0 / factor,
        0.0,
        0.0,
        0.0,
        1.0,
    );
    let r = s * m * s_inv;
    r / r[(2, 2)]
}

/// Aligns `template_region` of `template` against `target`, starting from `init`.
pub fn ecc_align(
    template: &GrayImage,
    target: &GrayImage,
    template_region: &BBox,
    init: &Homography,
    cfg: &EccConfig,
) -> Result<EccResult, EccError> {
    cfg.validate()?;
    let r = template_region;
    if !(r.x >= 0.0
        && r.y >= 0.0
        && r.x + r.w <= template.width() as f64
        && r.y + r.h <= template.height() as f64)
    {
        return Err(EccError::RegionOutOfBounds);
    }
    if r.w * r.h < MIN_REGION_AREA {
        return Err(EccError::RegionTooSmall(r.w * r.h));
    }

    let mut levels: Vec<Level> = Vec::new();
    let (mut tpl, mut tgt) = if cfg.presmooth_sigma > 0.0 {
        (
            template
                .gaussian_blur(cfg.presmooth_sigma)
                .expect("sigma validated"),
            target
                .gaussian_blur(cfg.presmooth_sigma)
                .expect("sigma validated"),
        )
    } else {
        (template.clone(), target.clone())
    };
    for l in 0..cfg.pyramid_levels {
        if l > 0 {
            match (tpl.downsample2(), tgt.downsample2()) {
                (Some(a), Some(b)) => {
                    tpl = a;
                    tgt = b;
                }
                _ => break,
            }
        }
        match Level::build(&tpl, tgt.clone(), r, l) {
            Some(level) => levels.push(level),
            None if l == 0 => return Err(EccError::RegionTooSmall(r.w * r.h)),
            None => break,
        }
    }
    {
        let finest = &levels[0];
        let n = finest.values.len() as f64;
        let mean = finest.values.iter().sum::<f64>() / n;
        let var = finest
            .values
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n;
        if var < 1e-8 {
            return Err(EccError::DegenerateTemplate);
        }
    }

    let c0 = levels[0].center;
    // region-centred form of the initial warp at full resolution
    let local0 = translate(-c0.0, -c0.1) * init.matrix() * translate(c0.0, c0.1);
    let local0 = local0 / local0[(2, 2)];
    let coarsest = levels.len() - 1;
    let mut local = rescale_local(&local0, 1.0 / (1u64 << coarsest) as f64);

    let mut trace = Vec::new();
    let mut outcome = None;
    for l in (0..levels.len()).rev() {
        let model = if l == 0 && cfg.model == WarpModel::Affine && cfg.promote_on_finest {
            WarpModel::Homography
        } else {
            cfg.model
        };
        let out = run_level(&levels[l], model, local, cfg)?;
        trace.push(LevelTrace {
            level: l,
            model,
            rho: out.trace.clone(),
        });
        local = if l > 0 {
            rescale_local(&out.matrix, 2.0)
        } else {
            out.matrix
        };
        outcome = Some(out);
    }
    let out = outcome.expect("at least one level");
    if !out.converged && out.rho < cfg.min_rho {
        return Err(EccError::NonConvergence { rho: out.rho });
    }
    let global = translate(c0.0, c0.1) * out.matrix * translate(-c0.0, -c0.1);
    let warp = Homography::from_matrix(global).map_err(|_| EccError::LostOverlap)?;
    Ok(EccResult {
        warp,
        rho: out.rho,
        converged: out.converged,
        iterations: trace.iter().map(|t| t.rho.len() - 1).sum(),
        trace,
    })
}
