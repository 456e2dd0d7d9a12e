//! Fourier transform, forward model and signed-log checks.

use num_complex::Complex64;
use primed_core::kspace::{
    apply_forward_model, fft2c, ifft2c, inverse_log_transform, log_transform, signed_exp, signed_log,
    zero_fill_recon, ComplexGrid, Image,
};
use primed_core::masks::{gen_mask, Mask, MaskPattern, MaskSpec};
use primed_core::seed;
use rand::Rng;

use super::Check;

pub fn random_grid(h: usize, w: usize, s: u64) -> ComplexGrid {
    let mut rng = seed::rng(s);
    let data = (0..h * w)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    ComplexGrid::new(h, w, data).unwrap()
}

pub fn random_image(h: usize, w: usize, s: u64) -> Image {
    let mut rng = seed::rng(s);
    Image::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn max_diff(a: &ComplexGrid, b: &ComplexGrid) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Naive centered orthonormal DFT, O((HW)^2), used as the transform oracle.
pub fn naive_fft2c(x: &ComplexGrid) -> ComplexGrid {
    let (h, w) = (x.height(), x.width());
    let (ch, cw) = ((h / 2) as f64, (w / 2) as f64);
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut out = Vec::with_capacity(h * w);
    for ku in 0..h {
        for kv in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * ((ku as f64 - ch) * (y as f64 - ch) / h as f64 + (kv as f64 - cw) * (xx as f64 - cw) / w as f64);
                    acc += x.get(y, xx) * Complex64::from_polar(1.0, phase);
                }
            }
            out.push(acc * norm);
        }
    }
    ComplexGrid::new(h, w, out).unwrap()
}

const TOL: f64 = 1e-10;

pub fn suite() -> Vec<Check> {
    let mut out = Vec::new();

    let mut parseval: f64 = 0.0;
    let mut roundtrip: f64 = 0.0;
    for (i, &(h, w)) in [(1, 1), (4, 4), (5, 7), (32, 32), (64, 48), (128, 128)].iter().enumerate() {
        let x = random_grid(h, w, 10 + i as u64);
        let k = fft2c(&x);
        parseval = parseval.max((k.norm() - x.norm()).abs() / x.norm());
        roundtrip = roundtrip.max(max_diff(&ifft2c(&k), &x));
    }
    out.push(Check::below("Parseval up to 128×128 (relative)", parseval, TOL));
    out.push(Check::below("ifft2c(fft2c(x)) round trip", roundtrip, TOL));

    let mut naive: f64 = 0.0;
    for (i, &(h, w)) in [(4, 4), (5, 6), (7, 3)].iter().enumerate() {
        let x = random_grid(h, w, 40 + i as u64);
        naive = naive.max(max_diff(&fft2c(&x), &naive_fft2c(&x)));
    }
    out.push(Check::below("fft2c equals naive centered DFT (even and odd sizes)", naive, TOL));

    let delta = Image::from_fn(4, 4, |i, j| f64::from(u8::from(i == 2 && j == 2))).unwrap();
    let kd = fft2c(&delta.to_complex());
    let delta_err = kd.data().iter().map(|v| (v - Complex64::new(0.25, 0.0)).norm()).fold(0.0, f64::max);
    out.push(Check::below("delta at center -> constant 0.25", delta_err, TOL));

    let ones = Image::from_fn(4, 4, |_, _| 1.0).unwrap();
    let ko = fft2c(&ones.to_complex());
    let ones_err = (0..4)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .map(|(i, j)| {
            let want = if (i, j) == (2, 2) { 4.0 } else { 0.0 };
            (ko.get(i, j) - Complex64::new(want, 0.0)).norm()
        })
        .fold(0.0, f64::max);
    out.push(Check::below("constant 1 -> single entry 4 at center", ones_err, TOL));
    let back = ifft2c(&ko);
    out.push(Check::below(
        "ifft2c of center 4 -> all ones",
        back.data().iter().map(|v| (v - Complex64::new(1.0, 0.0)).norm()).fold(0.0, f64::max),
        TOL,
    ));

    // symmetric about the DC pixel (4, 4)
    let even = Image::from_fn(9, 9, |i, j| {
        let (di, dj) = (i as f64 - 4.0, j as f64 - 4.0);
        (-(di * di + 0.5 * dj * dj) / 6.0).exp()
    })
    .unwrap();
    let imag = fft2c(&even.to_complex()).data().iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    out.push(Check::below("even real image has real spectrum", imag, TOL));

    let k = random_grid(16, 32, 60);
    let mut idem = true;
    for (s, pattern) in [MaskPattern::EquispacedFixed, MaskPattern::EquispacedRandomOffset, MaskPattern::RandomUniform]
        .into_iter()
        .enumerate()
    {
        let m = gen_mask(&MaskSpec::new(32, 4, 0.08, pattern, s as u64)).unwrap();
        let once = m.apply(&k).unwrap();
        idem &= m.apply(&once).unwrap() == once;
        idem &= (0..32)
            .filter(|&c| !m.is_sampled(c))
            .all(|c| (0..16).all(|r| once.get(r, c) == Complex64::new(0.0, 0.0)));
    }
    out.push(Check::new("mask idempotence and exact zeros", idem, "three patterns"));

    let mut rel: f64 = 0.0;
    let mut mags = vec![0.0];
    let mut m = 1e-9;
    while m <= 1e6 {
        mags.extend([m, 2.5 * m, 5.0 * m]);
        m *= 10.0;
    }
    for &v in &mags {
        for s in [1.0, -1.0] {
            let x = s * v;
            let back = signed_exp(signed_log(x));
            let err = if x == 0.0 { back.abs() } else { ((back - x) / x).abs() };
            rel = rel.max(err);
        }
    }
    let g = random_grid(8, 8, 61).map(|v| v * 1e4).unwrap();
    let g_back = inverse_log_transform(&log_transform(&g)).unwrap();
    let grid_rel = g
        .data()
        .iter()
        .zip(g_back.data())
        .map(|(a, b)| (a - b).norm() / a.norm())
        .fold(0.0, f64::max);
    out.push(Check::below("signed-log round trip over [0, 1e6] (relative)", rel.max(grid_rel), 1e-6));
    out.push(Check::new(
        "signed-log analytic values",
        signed_log(0.0) == 0.0
            && (signed_log(std::f64::consts::E - 1.0) - 1e5).abs() < 1e-9
            && (signed_log(1.0 - std::f64::consts::E) + 1e5).abs() < 1e-9,
        "t(0)=0, t(e-1)=1e5, t(1-e)=-1e5",
    ));
    out
}

/// Monte-Carlo variance of the acquisition noise.
pub fn noise_variance(sigma: f64, draws: usize) -> f64 {
    let zero = Image::zeros(16, 16);
    let full = Mask::from_sampled(vec![true; 16], None);
    let per = 256;
    let mut acc = 0.0;
    let mut n = 0usize;
    let mut s = 0;
    while n < draws {
        let k = apply_forward_model(&zero, &full, sigma, s).unwrap();
        acc += k.data().iter().map(|v| v.norm_sqr()).sum::<f64>();
        n += per;
        s += 1;
    }
    acc / n as f64
}

/// `‖recon(k1) − recon(k2)‖ ≤ ‖k1 − k2‖` on random pairs.
pub fn zero_fill_lipschitz(pairs: usize) -> bool {
    (0..pairs as u64).all(|s| {
        let a = random_grid(12, 10, 100 + s);
        let b = random_grid(12, 10, 200 + s);
        let ra = zero_fill_recon(&a);
        let rb = zero_fill_recon(&b);
        let d: f64 = ra.data().iter().zip(rb.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        d <= a.sub(&b).unwrap().norm() + 1e-12
    })
}
