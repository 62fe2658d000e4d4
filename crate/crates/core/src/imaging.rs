//! Grayscale rasters, pyramids, gradients, sub-pixel sampling and noise.
//!
//! All intensities are `f64` in `[0, 1]`. Pixel `(x, y)` sits at integer
//! coordinates, so a sample at `(3.0, 5.0)` returns the stored value exactly.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("cannot read image {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot write image {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("unsupported pixel format in {0}")]
    UnsupportedFormat(String),
    #[error("image data length {len} does not match {width}x{height}")]
    BadDimensions {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("intensity {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("image {width}x{height} too small for {levels} pyramid levels (coarsest side must be >= {min_side})")]
    PyramidTooDeep {
        width: usize,
        height: usize,
        levels: usize,
        min_side: usize,
    },
    #[error("pyramid needs at least one level")]
    NoLevels,
    #[error("gradient needs an image of at least 3x3, got {0}x{1}")]
    TooSmallForGradient(usize, usize),
    #[error("noise variance must be non-negative, got {0}")]
    NegativeVariance(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if data.len() != width * height {
            return Err(ImagingError::BadDimensions {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImagingError::OutOfRange(bad));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel; values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel access with replicated borders.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    pub fn sample(&self, x: f64, y: f64) -> Sample {
        sample_bilinear(self, x, y)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / self.data.len() as f64
    }

    /// Nearest-neighbor upsampling to an arbitrary target size.
    pub fn upsample_nearest(&self, width: usize, height: usize) -> Self {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Self::from_fn(width, height, |x, y| {
            let src_x = ((x as f64 * sx) as usize).min(self.width - 1);
            let src_y = ((y as f64 * sy) as usize).min(self.height - 1);
            self.get(src_x, src_y)
        })
    }

    /// 8-bit quantization used when writing frames.
    pub fn to_luma8(&self) -> image::GrayImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    /// 16-bit quantization, for lossless-enough round trips of synthetic frames.
    pub fn to_luma16(&self) -> image::ImageBuffer<image::Luma<u16>, Vec<u16>> {
        let words = self
            .data
            .iter()
            .map(|v| (v * 65535.0).round().clamp(0.0, 65535.0) as u16)
            .collect();
        image::ImageBuffer::from_raw(self.width as u32, self.height as u32, words)
            .expect("buffer length matches dimensions")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImagingError> {
        let path = path.as_ref();
        self.to_luma8()
            .save(path)
            .map_err(|source| ImagingError::Write {
                path: path.display().to_string(),
                source,
            })
    }
}

/// Reads a PGM or PNG file. Color inputs are converted with Rec.601 luma weights.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage, ImagingError> {
    let path = path.as_ref();
    let dynamic = image::open(path).map_err(|source| ImagingError::Read {
        path: path.display().to_string(),
        source,
    })?;
    from_dynamic(dynamic, &path.display().to_string())
}

fn from_dynamic(dynamic: image::DynamicImage, name: &str) -> Result<GrayImage, ImagingError> {
    use image::DynamicImage as D;
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let data: Vec<f64> = match dynamic {
        D::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        D::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        D::ImageLuma16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        D::ImageLumaA16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        D::ImageRgb8(buf) => buf
            .pixels()
            .map(|p| rec601(p.0[0], p.0[1], p.0[2]) / 255.0)
            .collect(),
        D::ImageRgba8(buf) => buf
            .pixels()
            .map(|p| rec601(p.0[0], p.0[1], p.0[2]) / 255.0)
            .collect(),
        D::ImageRgb16(buf) => buf
            .pixels()
            .map(|p| rec601(p.0[0], p.0[1], p.0[2]) / 65535.0)
            .collect(),
        D::ImageRgba16(buf) => buf
            .pixels()
            .map(|p| rec601(p.0[0], p.0[1], p.0[2]) / 65535.0)
            .collect(),
        _ => return Err(ImagingError::UnsupportedFormat(name.to_string())),
    };
    GrayImage::new(
        width,
        height,
        data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
}

fn rec601<T: Into<f64>>(r: T, g: T, b: T) -> f64 {
    0.299 * r.into() + 0.587 * g.into() + 0.114 * b.into()
}

/// Multi-resolution stack, level 0 finest. Level `l` has `floor(dim / 2^l)` pixels per side.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<GrayImage>,
}

impl Pyramid {
    /// Builds `levels` levels with a separable `[1 4 6 4 1]/16` blur before each 2x decimation.
    /// `min_side` is the smallest admissible side length of the coarsest level.
    pub fn build(img: &GrayImage, levels: usize, min_side: usize) -> Result<Self, ImagingError> {
        if levels == 0 {
            return Err(ImagingError::NoLevels);
        }
        let coarsest = |d: usize| d >> (levels - 1);
        if coarsest(img.width) < min_side.max(1) || coarsest(img.height) < min_side.max(1) {
            return Err(ImagingError::PyramidTooDeep {
                width: img.width,
                height: img.height,
                levels,
                min_side,
            });
        }
        let mut out = Vec::with_capacity(levels);
        out.push(img.clone());
        for _ in 1..levels {
            let prev = out.last().expect("at least one level");
            out.push(downsample(prev));
        }
        Ok(Self { levels: out })
    }

    pub fn levels(&self) -> &[GrayImage] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &GrayImage {
        &self.levels[l]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn blur_binomial(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let mut horizontal = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            horizontal[y * w + x] = BINOMIAL5
                .iter()
                .enumerate()
                .map(|(k, c)| c * img.get_clamped(x as isize + k as isize - 2, y as isize))
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = BINOMIAL5
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let yy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                    c * horizontal[yy * w + x]
                })
                .sum::<f64>()
                .clamp(0.0, 1.0);
        }
    }
    GrayImage {
        width: w,
        height: h,
        data: out,
    }
}

fn downsample(img: &GrayImage) -> GrayImage {
    let blurred = blur_binomial(img);
    let (w, h) = (img.width / 2, img.height / 2);
    GrayImage::from_fn(w, h, |x, y| blurred.get(2 * x, 2 * y))
}

/// Result of a bilinear lookup; `clamped` is set when the coordinate left the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub clamped: bool,
}

pub fn sample_bilinear(img: &GrayImage, x: f64, y: f64) -> Sample {
    let (value, clamped) = bilinear(img.width, img.height, &img.data, x, y);
    Sample { value, clamped }
}

fn bilinear(width: usize, height: usize, data: &[f64], x: f64, y: f64) -> (f64, bool) {
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    let clamped = !(x >= 0.0 && x <= max_x && y >= 0.0 && y <= max_y);
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let x0 = (x.floor() as usize).min(width.saturating_sub(2));
    let y0 = (y.floor() as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |xx: usize, yy: usize| data[yy * width + xx];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    (top * (1.0 - fy) + bottom * fy, clamped)
}

/// Per-pixel central-difference gradient with replicated borders.
#[derive(Debug, Clone)]
pub struct GradientField {
    width: usize,
    height: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> [f64; 2] {
        let k = y * self.width + x;
        [self.gx[k], self.gy[k]]
    }

    /// Bilinear interpolation of both components; `clamped` as in [`sample_bilinear`].
    pub fn sample(&self, x: f64, y: f64) -> ([f64; 2], bool) {
        let (gx, clamped) = bilinear(self.width, self.height, &self.gx, x, y);
        let (gy, _) = bilinear(self.width, self.height, &self.gy, x, y);
        ([gx, gy], clamped)
    }
}

pub fn gradient(img: &GrayImage) -> Result<GradientField, ImagingError> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(ImagingError::TooSmallForGradient(w, h));
    }
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            gx[y * w + x] = 0.5 * (img.get_clamped(xi + 1, yi) - img.get_clamped(xi - 1, yi));
            gy[y * w + x] = 0.5 * (img.get_clamped(xi, yi + 1) - img.get_clamped(xi, yi - 1));
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gy,
    })
}

/// Raw i.i.d. zero-mean Gaussian samples, before any clamping.
pub fn noise_field(len: usize, variance: f64, seed: u64) -> Result<Vec<f64>, ImagingError> {
    if variance < 0.0 || variance.is_nan() {
        return Err(ImagingError::NegativeVariance(variance));
    }
    if variance == 0.0 {
        return Ok(vec![0.0; len]);
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite positive std dev");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| normal.sample(&mut rng)).collect())
}

/// Adds Gaussian noise of the given variance and clamps back to `[0, 1]`.
pub fn add_gaussian_noise(
    img: &GrayImage,
    variance: f64,
    seed: u64,
) -> Result<GrayImage, ImagingError> {
    let noise = noise_field(img.data.len(), variance, seed)?;
    if variance == 0.0 {
        return Ok(img.clone());
    }
    let data = img
        .data
        .iter()
        .zip(noise)
        .map(|(v, n)| (v + n).clamp(0.0, 1.0))
        .collect();
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data,
    })
}

/// Seed for frame `index` of a sequence, derived from a base seed (splitmix64 mix).
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
