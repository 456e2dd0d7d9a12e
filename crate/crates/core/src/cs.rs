//! Compressed-sensing reference: proximal gradient on
//! `½‖M∘F x − k_us‖² + λ·TV(x)` over real images.
//!
//! The TV proximal step uses Chambolle's dual projection iteration with
//! isotropic forward differences and Neumann boundaries. The dual field is
//! carried across outer iterations, and an outer step that would raise the
//! objective is rejected (the iterate stays put while the dual keeps
//! converging).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{self, ComplexGrid, Image};
use crate::masks::Mask;

/// Step of the dual iteration; 1/8 is the convergent bound for the 2D
/// forward-difference gradient.
const DUAL_STEP: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsConfig {
    pub lambda: f64,
    pub outer_iters: usize,
    pub prox_inner_iters: usize,
    pub step_size: f64,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            outer_iters: 60,
            prox_inner_iters: 10,
            step_size: 1.0,
        }
    }
}

/// Tuned on family-A validation phantoms at R = 4.
pub const DEFAULT_LAMBDA: f64 = 0.005;

impl CsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "step_size must be in (0, 1], got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// Dual variable of the TV prox: one 2-vector per pixel.
#[derive(Debug, Clone)]
struct Dual {
    px: Vec<f64>,
    py: Vec<f64>,
}

impl Dual {
    fn zeros(n: usize) -> Self {
        Self {
            px: vec![0.0; n],
            py: vec![0.0; n],
        }
    }
}

/// Forward differences with a zero difference past the last row/column.
fn gradient(h: usize, w: usize, x: &[f64], gx: &mut [f64], gy: &mut [f64]) {
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            gx[k] = if j + 1 < w { x[k + 1] - x[k] } else { 0.0 };
            gy[k] = if i + 1 < h { x[k + w] - x[k] } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`gradient`].
fn divergence(h: usize, w: usize, px: &[f64], py: &[f64], out: &mut [f64]) {
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let dx = match j {
                _ if w == 1 => 0.0,
                0 => px[k],
                _ if j == w - 1 => -px[k - 1],
                _ => px[k] - px[k - 1],
            };
            let dy = match i {
                _ if h == 1 => 0.0,
                0 => py[k],
                _ if i == h - 1 => -py[k - w],
                _ => py[k] - py[k - w],
            };
            out[k] = dx + dy;
        }
    }
}

/// Isotropic total variation.
pub fn tv(x: &Image) -> f64 {
    let (h, w) = (x.height(), x.width());
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    gradient(h, w, x.data(), &mut gx, &mut gy);
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).sum()
}

fn prox_tv(h: usize, w: usize, y: &[f64], weight: f64, iters: usize, dual: &mut Dual) -> Vec<f64> {
    if weight == 0.0 {
        return y.to_vec();
    }
    let n = h * w;
    let mut div = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    for _ in 0..iters {
        divergence(h, w, &dual.px, &dual.py, &mut div);
        for k in 0..n {
            t[k] = div[k] - y[k] / weight;
        }
        gradient(h, w, &t, &mut gx, &mut gy);
        for k in 0..n {
            let norm = gx[k].hypot(gy[k]);
            let denom = 1.0 + DUAL_STEP * norm;
            dual.px[k] = (dual.px[k] + DUAL_STEP * gx[k]) / denom;
            dual.py[k] = (dual.py[k] + DUAL_STEP * gy[k]) / denom;
        }
    }
    divergence(h, w, &dual.px, &dual.py, &mut div);
    y.iter().zip(&div).map(|(v, d)| v - weight * d).collect()
}

/// Approximate `argmin_x ½‖x − y‖² + weight·TV(x)` after `inner_iters`
/// dual iterations from a zero dual.
pub fn tv_denoise(y: &Image, weight: f64, inner_iters: usize) -> Result<Image> {
    if !(weight >= 0.0) || !weight.is_finite() {
        return Err(Error::InvalidArgument(format!("tv weight must be >= 0, got {weight}")));
    }
    let (h, w) = (y.height(), y.width());
    let mut dual = Dual::zeros(h * w);
    Image::new(h, w, prox_tv(h, w, y.data(), weight, inner_iters, &mut dual))
}

fn forward(x: &[f64], h: usize, w: usize, mask: &Mask) -> Result<ComplexGrid> {
    let grid = ComplexGrid::new(h, w, x.iter().map(|&v| Complex64::new(v, 0.0)).collect())?;
    mask.apply(&kspace::fft2c(&grid))
}

fn data_term(x: &[f64], h: usize, w: usize, k_us: &ComplexGrid, mask: &Mask) -> Result<(f64, ComplexGrid)> {
    let residual = forward(x, h, w, mask)?.sub(k_us)?;
    let r = residual.norm();
    Ok((0.5 * r * r, residual))
}

/// `½‖M∘F x − k_us‖² + λ·TV(x)` for a real image.
pub fn cs_objective(x: &Image, k_us: &ComplexGrid, mask: &Mask, lambda: f64) -> Result<f64> {
    check_dims(k_us, mask)?;
    let (d, _) = data_term(x.data(), x.height(), x.width(), k_us, mask)?;
    Ok(d + lambda * tv(x))
}

fn check_dims(k_us: &ComplexGrid, mask: &Mask) -> Result<()> {
    if mask.width() != k_us.width() {
        return Err(Error::shape(
            "cs_reconstruct",
            format!("mask width {} vs k-space width {}", mask.width(), k_us.width()),
        ));
    }
    Ok(())
}

/// Reconstruction plus the objective after every outer iteration (entry 0
/// is the zero-filled start).
pub fn cs_reconstruct_trace(k_us: &ComplexGrid, mask: &Mask, config: &CsConfig) -> Result<(Image, Vec<f64>)> {
    config.validate()?;
    check_dims(k_us, mask)?;
    let (h, w) = (k_us.height(), k_us.width());
    let lambda = config.lambda;
    let mut x = kspace::zero_fill_recon(k_us).data().to_vec();
    let objective = |x: &[f64], data: f64| -> Result<f64> { Ok(data + lambda * tv(&Image::new(h, w, x.to_vec())?)) };
    let (data, mut residual) = data_term(&x, h, w, k_us, mask)?;
    let mut current = objective(&x, data)?;
    let mut trace = vec![current];
    let mut dual = Dual::zeros(h * w);

    for _ in 0..config.outer_iters {
        let grad = kspace::ifft2c(&mask.apply(&residual)?);
        let y: Vec<f64> = x
            .iter()
            .zip(grad.data())
            .map(|(v, g)| v - config.step_size * g.re)
            .collect();
        let candidate = prox_tv(h, w, &y, config.step_size * lambda, config.prox_inner_iters, &mut dual);
        let (cd, cr) = data_term(&candidate, h, w, k_us, mask)?;
        let value = objective(&candidate, cd)?;
        if value <= current {
            x = candidate;
            residual = cr;
            current = value;
        }
        trace.push(current);
    }
    let image = Image::new(h, w, x.into_iter().map(|v| v.max(0.0)).collect())?;
    Ok((image, trace))
}

/// Final non-negative CS reconstruction.
pub fn cs_reconstruct(k_us: &ComplexGrid, mask: &Mask, config: &CsConfig) -> Result<Image> {
    cs_reconstruct_trace(k_us, mask, config).map(|(x, _)| x)
}
