//! Centered orthonormal 2D Fourier transforms and the single-coil Cartesian
//! acquisition model `k_us = M ∘ (F x + n)`.
//!
//! DC sits at `(⌊H/2⌋, ⌊W/2⌋)` for both even and odd sizes.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::masks::Mask;
use crate::seed;

/// Scale of the signed log transform applied to k-space before it enters the
/// network.
pub const LOG_SCALE: f64 = 1e5;

/// Real-valued H×W image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Complex-valued H×W grid (k-space or complex image), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "image",
                format!("{height}×{width} needs {} values, got {}", height * width, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "image" });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Rows `y0..y1`, columns `x0..x1`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop [{x0},{y0},{x1},{y1}) outside {}×{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x1]);
        }
        Ok(Self {
            height: y1 - y0,
            width: x1 - x0,
            data,
        })
    }

    pub fn to_complex(&self) -> ComplexGrid {
        ComplexGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    /// Raw little-endian f32, row-major.
    pub fn to_f32_le_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect()
    }

    pub fn from_f32_le_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let n = height * width;
        if bytes.len() != 4 * n {
            return Err(Error::shape(
                "image",
                format!("expected {} bytes for {height}×{width}, got {}", 4 * n, bytes.len()),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(height, width, data)
    }

    /// Rounds every pixel to the nearest f32 so the image survives the
    /// on-disk format unchanged.
    pub fn quantize_f32(mut self) -> Self {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
        self
    }
}

impl ComplexGrid {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "complex_grid",
                format!("{height}×{width} needs {} values, got {}", height * width, data.len()),
            ));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite { op: "complex_grid" });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> Complex64 {
        self.data[y * self.width + x]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn abs(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|c| c.norm()).collect(),
        }
    }

    pub fn re(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|c| c.re).collect(),
        }
    }

    /// Elementwise map; the result is re-validated for finiteness.
    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Result<Self> {
        Self::new(self.height, self.width, self.data.iter().map(|&c| f(c)).collect())
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self::new(self.height, self.width, data)
    }

    /// `alpha * self + other`.
    pub fn axpy(&self, alpha: Complex64, other: &Self) -> Result<Self> {
        self.check_same(other, "axpy")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| alpha * a + b)
            .collect();
        Self::new(self.height, self.width, data)
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(
                op,
                format!(
                    "{}×{} vs {}×{}",
                    self.height, self.width, other.height, other.width
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Raw little-endian f32 `(re, im)` pairs, row-major.
    pub fn to_f32_le_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|c| {
                let mut b = [0u8; 8];
                b[..4].copy_from_slice(&(c.re as f32).to_le_bytes());
                b[4..].copy_from_slice(&(c.im as f32).to_le_bytes());
                b
            })
            .collect()
    }

    pub fn from_f32_le_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let n = height * width;
        if bytes.len() != 8 * n {
            return Err(Error::shape(
                "complex_grid",
                format!("expected {} bytes for {height}×{width}, got {}", 8 * n, bytes.len()),
            ));
        }
        let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        let data = bytes
            .chunks_exact(8)
            .map(|c| Complex64::new(f(&c[..4]), f(&c[4..])))
            .collect();
        Self::new(height, width, data)
    }
}

struct Plans {
    rows_fwd: Arc<dyn Fft<f64>>,
    rows_inv: Arc<dyn Fft<f64>>,
    cols_fwd: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
}

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, usize), Arc<Plans>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plans(h: usize, w: usize) -> Arc<Plans> {
    PLANNER.with(|p| {
        let (planner, cache) = &mut *p.borrow_mut();
        cache
            .entry((h, w))
            .or_insert_with(|| {
                Arc::new(Plans {
                    rows_fwd: planner.plan_fft_forward(w),
                    rows_inv: planner.plan_fft_inverse(w),
                    cols_fwd: planner.plan_fft_forward(h),
                    cols_inv: planner.plan_fft_inverse(h),
                })
            })
            .clone()
    })
}

fn centered_transform(k: &ComplexGrid, inverse: bool) -> ComplexGrid {
    let (h, w) = (k.height, k.width);
    let p = plans(h, w);
    let (rows, cols) = if inverse {
        (&p.rows_inv, &p.cols_inv)
    } else {
        (&p.rows_fwd, &p.cols_fwd)
    };
    let (sh, sw) = (h / 2, w / 2);

    // ifftshift on the way in
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        let sy = (y + sh) % h;
        for x in 0..w {
            buf[y * w + x] = k.data[sy * w + (x + sw) % w];
        }
    }
    rows.process(&mut buf);

    let mut t = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            t[x * h + y] = buf[y * w + x];
        }
    }
    cols.process(&mut t);

    // transpose back, fftshift and scale on the way out
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for x in 0..w {
        let dx = (x + sw) % w;
        for y in 0..h {
            out[((y + sh) % h) * w + dx] = t[x * h + y] * scale;
        }
    }
    ComplexGrid {
        height: h,
        width: w,
        data: out,
    }
}

/// Centered orthonormal forward 2D DFT.
pub fn fft2c(x: &ComplexGrid) -> ComplexGrid {
    centered_transform(x, false)
}

/// Exact inverse of [`fft2c`].
pub fn ifft2c(k: &ComplexGrid) -> ComplexGrid {
    centered_transform(k, true)
}

pub fn fft2c_image(x: &Image) -> ComplexGrid {
    fft2c(&x.to_complex())
}

/// Undersampled acquisition of `x`: noise with complex variance `sigma²` is
/// added to every k-space entry, then unsampled columns are zeroed.
pub fn apply_forward_model(x: &Image, mask: &Mask, sigma: f64, seed: u64) -> Result<ComplexGrid> {
    acquire(&fft2c_image(x), mask, sigma, seed)
}

/// [`apply_forward_model`] starting from an already transformed `F x`.
pub fn acquire(full: &ComplexGrid, mask: &Mask, sigma: f64, seed: u64) -> Result<ComplexGrid> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if mask.width() != full.width {
        return Err(Error::shape(
            "forward_model",
            format!("mask width {} vs grid width {}", mask.width(), full.width),
        ));
    }
    let mut k = full.clone();
    if sigma > 0.0 {
        let mut rng = seed::rng(seed);
        let s = sigma / std::f64::consts::SQRT_2;
        for c in k.data_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *c += Complex64::new(s * re, s * im);
        }
    }
    mask.apply(&k)
}

/// Magnitude of the inverse transform of zero-filled k-space.
pub fn zero_fill_recon(k_us: &ComplexGrid) -> Image {
    ifft2c(k_us).abs()
}

#[inline]
pub fn signed_log(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p() * LOG_SCALE
}

#[inline]
pub fn signed_exp(t: f64) -> f64 {
    t.signum() * (t.abs() / LOG_SCALE).exp_m1()
}

/// Signed log applied independently to real and imaginary parts:
/// `t(v) = sign(v) · ln(1 + |v|) · 1e5`.
pub fn log_transform(k: &ComplexGrid) -> ComplexGrid {
    ComplexGrid {
        height: k.height,
        width: k.width,
        data: k
            .data
            .iter()
            .map(|c| Complex64::new(signed_log(c.re), signed_log(c.im)))
            .collect(),
    }
}

pub fn inverse_log_transform(k_t: &ComplexGrid) -> Result<ComplexGrid> {
    k_t.map(|c| Complex64::new(signed_exp(c.re), signed_exp(c.im)))
}

/// 1×2×H×W tensor: channel 0 real part, channel 1 imaginary part.
pub fn pack_channels<T: Real>(k: &ComplexGrid) -> Tensor<T> {
    let n = k.height * k.width;
    let mut data = Vec::with_capacity(2 * n);
    data.extend(k.data.iter().map(|c| T::from_f64(c.re)));
    data.extend(k.data.iter().map(|c| T::from_f64(c.im)));
    Tensor::new(vec![1, 2, k.height, k.width], data).expect("shape matches by construction")
}

pub fn unpack_channels<T: Real>(t: &Tensor<T>) -> Result<ComplexGrid> {
    let (n, c, h, w) = t.dims4("unpack_channels")?;
    if n != 1 || c != 2 {
        return Err(Error::shape(
            "unpack_channels",
            format!("expected 1×2×H×W, got {:?}", t.shape()),
        ));
    }
    let (re, im) = t.data().split_at(h * w);
    let data = re
        .iter()
        .zip(im)
        .map(|(&r, &i)| Complex64::new(r.to_f64(), i.to_f64()))
        .collect();
    ComplexGrid::new(h, w, data)
}
