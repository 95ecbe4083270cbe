//! Grayscale rasters with sub-pixel sampling, finite-difference gradients and
//! separable Gaussian blur.
//!
//! Intensities live in `[0, 1]`. Sampling clamps to the border; blurring
//! mirrors the image about its edges (half-sample symmetric), which keeps both
//! constant images and the total intensity sum unchanged.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("data length {len} does not match {width}x{height}")]
    LengthMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("intensity {value} at index {index} is outside [0, 1]")]
    IntensityOutOfRange { index: usize, value: f64 },
    #[error("image is {width}x{height}, need at least {min_width}x{min_height}")]
    TooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
    },
    #[error("blur sigma must be non-negative and finite, got {0}")]
    InvalidSigma(f64),
}

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Per-pixel horizontal and vertical derivatives of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage { width, height });
        }
        if data.len() != width * height {
            return Err(RasterError::LengthMismatch {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(RasterError::IntensityOutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)`; results are clamped into `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage { width, height });
        }
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self, RasterError> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Converts 8-bit luma into normalized intensities.
    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, RasterError> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    /// Converts interleaved 8-bit RGB into luma.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self, RasterError> {
        if rgb.len() != width * height * 3 {
            return Err(RasterError::LengthMismatch {
                width,
                height,
                len: rgb.len() / 3,
            });
        }
        let data = rgb
            .chunks_exact(3)
            .map(|p| {
                (0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
                    / 255.0
            })
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        Self::new(width, height, data)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear interpolation with clamp-to-edge outside the pixel grid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        sample_plane(&self.data, self.width, self.height, x, y)
    }

    /// Central differences in the interior, one-sided differences on the border.
    pub fn gradients(&self) -> Result<GradientPair, RasterError> {
        if self.width < 3 || self.height < 3 {
            return Err(RasterError::TooSmall {
                width: self.width,
                height: self.height,
                min_width: 3,
                min_height: 3,
            });
        }
        let (w, h) = (self.width, self.height);
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                gx[i] = if x == 0 {
                    self.get(1, y) - self.get(0, y)
                } else if x == w - 1 {
                    self.get(w - 1, y) - self.get(w - 2, y)
                } else {
                    0.5 * (self.get(x + 1, y) - self.get(x - 1, y))
                };
                gy[i] = if y == 0 {
                    self.get(x, 1) - self.get(x, 0)
                } else if y == h - 1 {
                    self.get(x, h - 1) - self.get(x, h - 2)
                } else {
                    0.5 * (self.get(x, y + 1) - self.get(x, y - 1))
                };
            }
        }
        Ok(GradientPair {
            width: w,
            height: h,
            gx,
            gy,
        })
    }

    /// Separable Gaussian blur with a truncated (radius `ceil(3σ)`) normalized
    /// kernel. `sigma == 0` returns a copy of the input.
    pub fn gaussian_blur(&self, sigma: f64) -> Result<GrayImage, RasterError> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(RasterError::InvalidSigma(sigma));
        }
        if sigma == 0.0 {
            return Ok(self.clone());
        }
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as isize;
        let (w, h) = (self.width, self.height);

        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let row = &self.data[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                if x as isize >= r && x as isize + r < w as isize {
                    let taps = &row[x - r as usize..];
                    for (kv, v) in kernel.iter().zip(taps) {
                        acc += kv * v;
                    }
                } else {
                    for (k, kv) in kernel.iter().enumerate() {
                        acc += kv * row[mirror(x as isize + k as isize - r, w)];
                    }
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let rows: Vec<usize> = (0..kernel.len())
                .map(|k| mirror(y as isize + k as isize - r, h) * w)
                .collect();
            for x in 0..w {
                let mut acc = 0.0;
                for (kv, base) in kernel.iter().zip(&rows) {
                    acc += kv * tmp[base + x];
                }
                out[y * w + x] = acc.clamp(0.0, 1.0);
            }
        }
        Ok(GrayImage {
            width: w,
            height: h,
            data: out,
        })
    }

    /// 2x2 box downsampling; odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Option<GrayImage> {
        let (w, h) = (self.width / 2, self.height / 2);
        if w == 0 || h == 0 {
            return None;
        }
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = self.get(2 * x, 2 * y)
                    + self.get(2 * x + 1, 2 * y)
                    + self.get(2 * x, 2 * y + 1)
                    + self.get(2 * x + 1, 2 * y + 1);
                data.push(0.25 * s);
            }
        }
        Some(GrayImage {
            width: w,
            height: h,
            data,
        })
    }

    /// Copies the sub-rectangle starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Option<GrayImage> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return None;
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + width]);
        }
        Some(GrayImage {
            width,
            height,
            data,
        })
    }

    /// Applies `v -> gain * v + bias`, clamped to `[0, 1]`.
    pub fn map_affine(&self, gain: f64, bias: f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|v| (gain * v + bias).clamp(0.0, 1.0))
                .collect(),
        }
    }
}

impl GradientPair {
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        (
            sample_plane(&self.gx, self.width, self.height, x, y),
            sample_plane(&self.gy, self.width, self.height, x, y),
        )
    }
}

/// Normalized, truncated 1-D Gaussian with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

fn sample_plane(data: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, (w - 1) as f64)
    };
    let y = if y.is_nan() {
        0.0
    } else {
        y.clamp(0.0, (h - 1) as f64)
    };
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = data[y0 * w + x0] * (1.0 - fx) + data[y0 * w + x1] * fx;
    let bottom = data[y1 * w + x0] * (1.0 - fx) + data[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            GrayImage::new(2, 2, vec![0.0; 3]),
            Err(RasterError::LengthMismatch { .. })
        ));
        assert!(matches!(
            GrayImage::new(1, 1, vec![1.5]),
            Err(RasterError::IntensityOutOfRange { .. })
        ));
        assert!(GrayImage::new(0, 4, vec![]).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn sampling_examples() {
        let mut data = vec![0.0; 5 * 5];
        data[3 * 5 + 2] = 0.5;
        data[0] = 0.25;
        let img = GrayImage::new(5, 5, data).unwrap();
        assert_eq!(img.sample_bilinear(2.0, 3.0), 0.5);
        assert_eq!(img.sample_bilinear(-5.0, -5.0), img.get(0, 0));

        let pair = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!((pair.sample_bilinear(0.5, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradients_of_constant_and_ramp() {
        let c = GrayImage::constant(7, 6, 0.3).unwrap();
        let g = c.gradients().unwrap();
        assert!(g.gx.iter().chain(g.gy.iter()).all(|v| *v == 0.0));

        let ramp = GrayImage::from_fn(10, 5, |x, _| 0.1 * x as f64).unwrap();
        let g = ramp.gradients().unwrap();
        for x in 1..9 {
            assert!((g.gx[2 * 10 + x] - 0.1).abs() < 1e-12);
            assert_eq!(g.gy[2 * 10 + x], 0.0);
        }
    }

    #[test]
    fn gradients_need_three_by_three() {
        let img = GrayImage::constant(2, 5, 0.0).unwrap();
        assert!(matches!(img.gradients(), Err(RasterError::TooSmall { .. })));
    }

    #[test]
    fn gradients_match_finite_differences_of_sampler() {
        let img = random_image(16, 16, 11);
        let g = img.gradients().unwrap();
        let step = 1e-3;
        for y in 1..15 {
            for x in 1..15 {
                let (xf, yf) = (x as f64, y as f64);
                let fdx = (img.sample_bilinear(xf + step, yf) - img.sample_bilinear(xf - step, yf))
                    / (2.0 * step);
                let fdy = (img.sample_bilinear(xf, yf + step) - img.sample_bilinear(xf, yf - step))
                    / (2.0 * step);
                assert!((g.gx[y * 16 + x] - fdx).abs() < 1e-2);
                assert!((g.gy[y * 16 + x] - fdy).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn blur_identity_and_constant() {
        let img = random_image(9, 7, 3);
        assert_eq!(img.gaussian_blur(0.0).unwrap(), img);
        let c = GrayImage::constant(12, 9, 0.7).unwrap();
        let b = c.gaussian_blur(2.0).unwrap();
        assert!(b.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
        assert!(matches!(
            img.gaussian_blur(-1.0),
            Err(RasterError::InvalidSigma(_))
        ));
    }

    #[test]
    fn blur_of_impulse_is_discretized_kernel() {
        let sigma = 1.5;
        let mut data = vec![0.0; 21 * 21];
        data[10 * 21 + 10] = 1.0;
        let img = GrayImage::new(21, 21, data).unwrap();
        let out = img.gaussian_blur(sigma).unwrap();

        // direct evaluation of the truncated separable kernel
        let r = (3.0 * sigma).ceil() as i64;
        let norm: f64 = (-r..=r)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .sum();
        let mut total = 0.0;
        for y in 0..21i64 {
            for x in 0..21i64 {
                let (dx, dy) = (x - 10, y - 10);
                let expected = if dx.abs() <= r && dy.abs() <= r {
                    (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() / (norm * norm)
                } else {
                    0.0
                };
                let got = out.get(x as usize, y as usize);
                assert!(
                    (got - expected).abs() < 1e-12,
                    "({x},{y}) {got} vs {expected}"
                );
                total += got;
            }
        }
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = GrayImage::new(4, 2, vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0, 0.5, 0.5]).unwrap();
        let d = img.downsample2().unwrap();
        assert_eq!((d.width(), d.height()), (2, 1));
        assert_eq!(d.data(), &[0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn blur_preserves_total_intensity(
            seed in 0u64..1000,
            w in 1usize..24,
            h in 1usize..24,
            sigma in 0.1f64..6.0,
        ) {
            // keep values away from 1 so the output clamp never engages
            let img = GrayImage::from_fn(w, h, {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                move |_, _| 0.9 * rng.random::<f64>()
            }).unwrap();
            let out = img.gaussian_blur(sigma).unwrap();
            let before: f64 = img.data().iter().sum();
            let after: f64 = out.data().iter().sum();
            prop_assert!((before - after).abs() <= 1e-6 * before.abs().max(1e-12));
        }

        #[test]
        fn sampling_is_lipschitz(seed in 0u64..500, x in 0.0f64..14.0, y in 0.0f64..14.0, d in 0.0f64..1.0) {
            let img = random_image(16, 16, seed);
            // bilinear slope along x is bounded by the largest forward difference
            let max_step = (0..16).flat_map(|yy| (0..15).map(move |xx| (xx, yy)))
                .map(|(xx, yy)| (img.get(xx + 1, yy) - img.get(xx, yy)).abs())
                .fold(0.0, f64::max);
            let diff = (img.sample_bilinear(x, y) - img.sample_bilinear(x + d, y)).abs();
            prop_assert!(diff <= d * max_step + 1e-12);
        }
    }
}
