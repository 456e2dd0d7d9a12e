//! Total-variation CS oracles.

use primed_core::cs::{cs_reconstruct, cs_reconstruct_trace, tv_denoise, CsConfig};
use primed_core::kspace::{apply_forward_model, fft2c, zero_fill_recon, ComplexGrid, Image};
use primed_core::masks::{gen_mask, Mask, MaskPattern, MaskSpec};
use primed_core::metrics::nmse;
use primed_core::phantom::{gen_phantom, Family};
use primed_core::seed;
use rand::Rng;

use super::Check;

/// Forward differences, zero past the last row/column.
fn grad(h: usize, w: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            if j + 1 < w {
                gx[k] = x[k + 1] - x[k];
            }
            if i + 1 < h {
                gy[k] = x[k + w] - x[k];
            }
        }
    }
    (gx, gy)
}

/// Exact transpose of [`grad`], built by accumulation.
fn grad_t(h: usize, w: usize, px: &[f64], py: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            if j + 1 < w {
                out[k + 1] += px[k];
                out[k] -= px[k];
            }
            if i + 1 < h {
                out[k + w] += py[k];
                out[k] -= py[k];
            }
        }
    }
    out
}

pub fn tv_ref(h: usize, w: usize, x: &[f64]) -> f64 {
    let (gx, gy) = grad(h, w, x);
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).sum()
}

/// `argmin ½‖x − y‖² + weight·TV(x)` by the primal-dual hybrid gradient
/// method (τσ‖∇‖² < 1) run to a fixed point.
pub fn pdhg_prox(h: usize, w: usize, y: &[f64], weight: f64, iters: usize) -> Vec<f64> {
    let n = h * w;
    let (tau, sigma) = (0.25, 0.45);
    let mut x = y.to_vec();
    let mut xbar = x.clone();
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    for _ in 0..iters {
        let (gx, gy) = grad(h, w, &xbar);
        for k in 0..n {
            let (ax, ay) = (px[k] + sigma * gx[k], py[k] + sigma * gy[k]);
            let s = (ax.hypot(ay) / weight).max(1.0);
            px[k] = ax / s;
            py[k] = ay / s;
        }
        let kt = grad_t(h, w, &px, &py);
        let prev = x.clone();
        for k in 0..n {
            x[k] = (prev[k] - tau * kt[k] + tau * y[k]) / (1.0 + tau);
            xbar[k] = 2.0 * x[k] - prev[k];
        }
    }
    x
}

fn prox_objective(y: &[f64], x: &[f64], weight: f64, h: usize, w: usize) -> f64 {
    0.5 * x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + weight * tv_ref(h, w, x)
}

/// Data term plus λ·TV, computed without the library's CS code.
pub fn objective_ref(x: &Image, k_us: &ComplexGrid, mask: &Mask, lambda: f64) -> f64 {
    let r = mask.apply(&fft2c(&x.to_complex())).unwrap().sub(k_us).unwrap().norm();
    0.5 * r * r + lambda * tv_ref(x.height(), x.width(), x.data())
}

pub fn prox_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let mut worst: f64 = 0.0;
    let mut obj_gap: f64 = 0.0;
    for s in 0..5u64 {
        let mut rng = seed::rng(300 + s);
        let y: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        let weight = [0.05, 0.1, 0.2, 0.4, 1.0][s as usize];
        let reference = pdhg_prox(4, 4, &y, weight, 200_000);
        let got = tv_denoise(&Image::new(4, 4, y.clone()).unwrap(), weight, 20_000).unwrap();
        worst = worst.max(got.data().iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        obj_gap = obj_gap.max(prox_objective(&y, got.data(), weight, 4, 4) - prox_objective(&y, &reference, weight, 4, 4));
    }
    out.push(Check::below("tv_denoise vs primal-dual 4×4 prox (max abs)", worst, 1e-3));
    out.push(Check::below("tv_denoise objective excess over the reference", obj_gap.max(0.0), 1e-6));

    let y = Image::from_fn(4, 4, |i, j| (i * 4 + j) as f64 / 7.0).unwrap();
    out.push(Check::new(
        "tv_denoise with weight 0 returns y",
        tv_denoise(&y, 0.0, 50).unwrap() == y,
        "exact",
    ));
    let c = Image::from_fn(6, 5, |_, _| 0.37).unwrap();
    let cd = tv_denoise(&c, 2.0, 100).unwrap();
    out.push(Check::below(
        "tv_denoise leaves a constant image unchanged",
        cd.data().iter().map(|v| (v - 0.37).abs()).fold(0.0, f64::max),
        1e-12,
    ));

    let img = gen_phantom(Family::A, 32, 32, 5).unwrap().image;
    let mean = img.data().iter().sum::<f64>() / img.data().len() as f64;
    let mut last = f64::INFINITY;
    let mut shrinks = true;
    let mut devs = Vec::new();
    for weight in [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0] {
        let d = tv_denoise(&img, weight, 3000).unwrap();
        let dev = d.data().iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        shrinks &= dev <= last + 1e-9;
        last = dev;
        devs.push(dev);
    }
    out.push(Check::new(
        "max deviation from the mean shrinks as the weight grows",
        shrinks && last < 1e-2,
        format!("{devs:.3?}"),
    ));

    let mut expansive: f64 = 0.0;
    for s in 0..20u64 {
        let a = super::fourier::random_image(8, 8, 400 + s);
        let b = super::fourier::random_image(8, 8, 500 + s);
        let pa = tv_denoise(&a, 0.2, 50).unwrap();
        let pb = tv_denoise(&b, 0.2, 50).unwrap();
        let dp: f64 = pa.data().iter().zip(pb.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        expansive = expansive.max(dp - d);
    }
    out.push(Check::below("tv_denoise is non-expansive on 20 pairs", expansive.max(0.0), 1e-8));
    out
}

/// Random CS instance: smooth random image, random-pattern mask.
#[allow(clippy::approx_constant)]
fn instance(s: u64) -> (Image, Mask, ComplexGrid) {
    let mut rng = seed::rng(600 + s);
    let (h, w) = (16 + 8 * (s as usize % 3), 16 + 8 * (s as usize % 2));
    let f1 = rng.random_range(0.5..3.0);
    let f2 = rng.random_range(0.5..3.0);
    let x = Image::from_fn(h, w, |i, j| {
        let (u, v) = (i as f64 / h as f64, j as f64 / w as f64);
        let block = if (u - 0.5).abs() < 0.2 && (v - 0.4).abs() < 0.25 { 0.5 } else { 0.0 };
        0.3 + 0.2 * (6.28 * f1 * u).sin() * (6.28 * f2 * v).cos() + block
    })
    .unwrap();
    let pattern = if s.is_multiple_of(2) { MaskPattern::RandomUniform } else { MaskPattern::EquispacedRandomOffset };
    let mask = gen_mask(&MaskSpec::new(w, 4, 0.08, pattern, s)).unwrap();
    let sigma = if s % 4 == 3 { 0.01 } else { 0.0 };
    let k = apply_forward_model(&x, &mask, sigma, s).unwrap();
    (x, mask, k)
}

pub fn monotonicity_checks(instances: u64) -> Vec<Check> {
    let mut worst_rise: f64 = 0.0;
    let mut start_err: f64 = 0.0;
    let mut accepted = 0;
    let mut steps = 0;
    for s in 0..instances {
        let (_, mask, k) = instance(s);
        let lambda = [0.001, 0.005, 0.02, 0.05][s as usize % 4];
        let config = CsConfig {
            lambda,
            outer_iters: 40,
            prox_inner_iters: 5,
            step_size: 1.0,
        };
        let (_, trace) = cs_reconstruct_trace(&k, &mask, &config).unwrap();
        let zf = zero_fill_recon(&k);
        start_err = start_err.max((trace[0] - objective_ref(&zf, &k, &mask, lambda)).abs() / trace[0]);
        for pair in trace.windows(2) {
            worst_rise = worst_rise.max(pair[1] - pair[0]);
            steps += 1;
            if pair[1] < pair[0] {
                accepted += 1;
            }
        }
    }
    vec![
        Check::below(format!("CS objective non-increasing on {instances} instances"), worst_rise.max(0.0), 1e-8),
        Check::below("CS starting objective vs independent evaluation (relative)", start_err, 1e-12),
        Check::new(
            "CS iterations make progress",
            accepted * 2 > steps,
            format!("{accepted} of {steps} outer steps decrease the objective"),
        ),
    ]
}

/// λ = 0 stationarity: with a full mask, and with a mask symmetric about the
/// DC column on an even image whose zero-filled reconstruction is real and
/// positive, the iteration never leaves the zero-filled start.
pub fn stationarity_checks() -> Vec<Check> {
    let config = CsConfig {
        lambda: 0.0,
        outer_iters: 25,
        prox_inner_iters: 5,
        step_size: 1.0,
    };
    let (h, w) = (16, 32);
    let x = Image::from_fn(h, w, |i, j| {
        let (di, dj) = (i as f64 - 8.0, j as f64 - 16.0);
        let two_pi = std::f64::consts::TAU;
        1.0 + 0.3 * (two_pi * 2.0 * dj / w as f64).cos() * (two_pi * di / h as f64).cos() + 0.2 * (two_pi * 9.0 * dj / w as f64).cos()
    })
    .unwrap();
    let full = Mask::from_sampled(vec![true; w], None);
    let k_full = apply_forward_model(&x, &full, 0.0, 0).unwrap();
    let full_err = max_abs(&cs_reconstruct(&k_full, &full, &config).unwrap(), &zero_fill_recon(&k_full));

    // columns DC±9 are dropped, so the 9-cycle term is missing from k_us
    let sampled: Vec<bool> = (0..w).map(|c| (c as i64 - 16).abs() <= 4 || (c as i64 - 16).abs() == 12).collect();
    let sym = Mask::from_sampled(sampled, None);
    let k_sym = apply_forward_model(&x, &sym, 0.0, 0).unwrap();
    let zf = zero_fill_recon(&k_sym);
    let sym_err = max_abs(&cs_reconstruct(&k_sym, &sym, &config).unwrap(), &zf);
    vec![
        Check::below("λ=0, full mask: zero-fill is a fixed point", full_err, 1e-10),
        Check::below("λ=0, symmetric mask, even image: zero-fill is stationary", sym_err, 1e-10),
        Check::new(
            "stationary case is genuinely undersampled",
            nmse(&zf, &x).unwrap() > 1e-3,
            format!("zero-fill nmse {:.3e}", nmse(&zf, &x).unwrap()),
        ),
    ]
}

fn max_abs(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// The frozen triple: 64×64 family-A phantom with seed 7, random R=4 mask
/// with seed 7, noiseless acquisition, default CS settings.
pub const GOLDEN_SEED: u64 = 7;
pub const GOLDEN_ZERO_FILL_NMSE: f64 = 2.654469004779e-2;
pub const GOLDEN_CS_NMSE: f64 = 1.007391016218e-2;

pub fn golden() -> (f64, f64) {
    let x = gen_phantom(Family::A, 64, 64, GOLDEN_SEED).unwrap().image;
    let mask = gen_mask(&MaskSpec::new(64, 4, 0.08, MaskPattern::RandomUniform, GOLDEN_SEED)).unwrap();
    let k = apply_forward_model(&x, &mask, 0.0, 0).unwrap();
    let zf = nmse(&zero_fill_recon(&k), &x).unwrap();
    let cs = nmse(&cs_reconstruct(&k, &mask, &CsConfig::default()).unwrap(), &x).unwrap();
    (zf, cs)
}

pub fn golden_checks() -> Vec<Check> {
    let (zf, cs) = golden();
    vec![
        Check::new(
            "CS beats zero-fill NMSE by at least 30% on the golden triple",
            cs <= 0.7 * zf,
            format!("cs {cs:.6e} vs zero-fill {zf:.6e} (ratio {:.3})", cs / zf),
        ),
        Check::new(
            "golden NMSE values reproduce",
            (zf - GOLDEN_ZERO_FILL_NMSE).abs() <= 1e-9 * zf && (cs - GOLDEN_CS_NMSE).abs() <= 1e-9 * cs,
            format!("zero-fill {zf:.12e}, cs {cs:.12e}"),
        ),
    ]
}

/// Changing the mask changes the CS output (the data term sees it).
pub fn mask_awareness() -> Check {
    let x = gen_phantom(Family::B, 32, 32, 3).unwrap().image;
    let m1 = gen_mask(&MaskSpec::new(32, 4, 0.08, MaskPattern::RandomUniform, 1)).unwrap();
    let m2 = gen_mask(&MaskSpec::new(32, 4, 0.08, MaskPattern::RandomUniform, 2)).unwrap();
    let k = apply_forward_model(&x, &m1, 0.0, 0).unwrap();
    let a = cs_reconstruct(&k, &m1, &CsConfig::default()).unwrap();
    let b = cs_reconstruct(&k, &m2, &CsConfig::default()).unwrap();
    Check::new("CS output depends on the mask", max_abs(&a, &b) > 0.0, format!("{:.3e}", max_abs(&a, &b)))
}
