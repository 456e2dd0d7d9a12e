//! Metric oracles: closed forms, a brute-force SSIM, a quadrature Student-t
//! tail and a sign-flip permutation test.

use primed_core::kspace::Image;
use primed_core::metrics::{nmse, paired_t_test, psnr, ssim, student_t_two_sided, SSIM_K1, SSIM_K2};
use primed_core::seed;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::fourier::random_image;
use super::Check;

/// Per-window SSIM written directly from the definition with two-pass
/// moments, averaged over valid 7×7 windows. Data range = `max(x)`.
pub fn brute_ssim(xhat: &Image, x: &Image) -> f64 {
    brute_ssim_with_range(xhat, x, x.max())
}

pub fn brute_ssim_with_range(xhat: &Image, x: &Image, l: f64) -> f64 {
    let (c1, c2) = ((SSIM_K1 * l).powi(2), (SSIM_K2 * l).powi(2));
    let k = 7;
    let (h, w) = (x.height(), x.width());
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for y in y0..y0 + k {
                for c in x0..x0 + k {
                    a.push(xhat.get(y, c));
                    b.push(x.get(y, c));
                }
            }
            let n = a.len() as f64;
            let ma = a.iter().sum::<f64>() / n;
            let mb = b.iter().sum::<f64>() / n;
            let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / (n - 1.0);
            let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / (n - 1.0);
            let cov = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / (n - 1.0);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Two-sided Student-t tail by composite Simpson integration of the density
/// over `[0, |t|]`, with the normalizing constant from `ln Γ`.
pub fn quadrature_t_tail(t: f64, df: usize) -> f64 {
    let v = df as f64;
    let ln_c = statrs::function::gamma::ln_gamma((v + 1.0) / 2.0)
        - statrs::function::gamma::ln_gamma(v / 2.0)
        - 0.5 * (v * std::f64::consts::PI).ln();
    let pdf = |x: f64| (ln_c - (v + 1.0) / 2.0 * (1.0 + x * x / v).ln()).exp();
    let n = 20_000;
    let hstep = t.abs() / n as f64;
    let mut s = pdf(0.0) + pdf(t.abs());
    for i in 1..n {
        let x = i as f64 * hstep;
        s += if i % 2 == 1 { 4.0 * pdf(x) } else { 2.0 * pdf(x) };
    }
    let half = s * hstep / 3.0;
    1.0 - 2.0 * half
}

fn t_stat(d: &[f64]) -> f64 {
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    m / (sd / n.sqrt())
}

/// Randomized sign-flip permutation p-value of the paired t statistic.
pub fn permutation_p(d: &[f64], draws: usize, s: u64) -> f64 {
    let t_obs = t_stat(d).abs();
    let mut rng = seed::rng(s);
    let mut hits = 0;
    let mut flipped = d.to_vec();
    for _ in 0..draws {
        for (f, v) in flipped.iter_mut().zip(d) {
            *f = if rng.random::<bool>() { *v } else { -*v };
        }
        if t_stat(&flipped).abs() >= t_obs - 1e-12 {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

pub fn apply(x: &Image, f: impl Fn(f64) -> f64) -> Image {
    Image::new(x.height(), x.width(), x.data().iter().map(|&v| f(v)).collect()).unwrap()
}

pub fn suite() -> Vec<Check> {
    let mut out = Vec::new();
    let x = apply(&random_image(12, 12, 1), |v| v + 0.1);
    let mut scale_err: f64 = 0.0;
    for a in [0.0, 0.5, 1.0, 2.0, 3.7] {
        let got = nmse(&apply(&x, |v| a * v), &x).unwrap();
        scale_err = scale_err.max((got - (a - 1.0) * (a - 1.0)).abs());
    }
    out.push(Check::below("nmse(a·x, x) = (a-1)^2", scale_err, 1e-12));

    let base = random_image(10, 10, 2);
    let unit = apply(&base, |v| v / base.max());
    let p20 = psnr(&apply(&unit, |v| v + 0.1), &unit).unwrap();
    out.push(Check::below("psnr of +0.1 on max-1 image = 20 dB", (p20 - 20.0).abs(), 1e-9));
    let mut rng = seed::rng(3);
    let noise: Vec<f64> = (0..100).map(|_| rng.random_range(-0.2..0.2)).collect();
    let noisy = |amp: f64| Image::new(10, 10, unit.data().iter().zip(&noise).map(|(v, n)| v + amp * n).collect()).unwrap();
    let gain = psnr(&noisy(0.5), &unit).unwrap() - psnr(&noisy(1.0), &unit).unwrap();
    out.push(Check::below(
        "halving the error adds 20·log10(2) dB",
        (gain - 20.0 * 2f64.log10()).abs(),
        1e-9,
    ));
    out.push(Check::new(
        "psnr(x, x) is capped at 100 dB",
        psnr(&unit, &unit).unwrap() == 100.0,
        "cap",
    ));

    let mut ssim_err: f64 = 0.0;
    let mut sym_err: f64 = 0.0;
    for s in 0..50 {
        let a = random_image(16, 16, 100 + s);
        let b = apply(&random_image(16, 16, 200 + s), |v| 0.5 * v + 0.3);
        ssim_err = ssim_err.max((ssim(&a, &b).unwrap() - brute_ssim(&a, &b)).abs());
        let range = 1.3;
        let ab = primed_core::metrics::ssim_with_range(&a, &b, range).unwrap();
        let ba = primed_core::metrics::ssim_with_range(&b, &a, range).unwrap();
        sym_err = sym_err.max((ab - ba).abs());
    }
    out.push(Check::below("ssim vs brute force on 50 random 16×16 pairs", ssim_err, 1e-6));
    out.push(Check::below("ssim symmetric at a fixed data range", sym_err, 1e-12));

    let (c, d) = (0.4, 0.25);
    let ca = Image::from_fn(9, 9, |_, _| c).unwrap();
    let cb = Image::from_fn(9, 9, |_, _| c + d).unwrap();
    let c1 = (SSIM_K1 * (c + d)).powi(2);
    let closed = (2.0 * c * (c + d) + c1) / (c * c + (c + d) * (c + d) + c1);
    out.push(Check::below(
        "ssim of two constants matches the closed form",
        (ssim(&ca, &cb).unwrap() - closed).abs(),
        1e-12,
    ));

    let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
    out.push(Check::new(
        "t-test example t = 2√3, df = 2, p ≈ 0.0742",
        (r.t_statistic - 2.0 * 3f64.sqrt()).abs() < 1e-12 && r.degrees_of_freedom == 2 && (r.p_value - 0.0742).abs() < 1e-3,
        format!("t {:.6}, p {:.6}", r.t_statistic, r.p_value),
    ));
    let same = paired_t_test(&[0.3, 0.1, 0.9], &[0.3, 0.1, 0.9]).unwrap();
    out.push(Check::new("t-test a = b gives t 0, p 1", same.t_statistic == 0.0 && same.p_value == 1.0, "degenerate"));

    let mut quad: f64 = 0.0;
    for (t, df) in [(0.3, 1), (2.0, 3), (3.4641, 2), (1.1, 7), (2.5, 20), (4.0, 49), (0.05, 99)] {
        quad = quad.max((student_t_two_sided(t, df) - quadrature_t_tail(t, df)).abs());
    }
    out.push(Check::below("t tail vs Simpson quadrature of the density", quad, 1e-8));

    let mut mono = true;
    let b: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
    let jitter: Vec<f64> = (0..10).map(|i| (i as f64 * 1.3).cos() * 0.2).collect();
    let mut last = f64::INFINITY;
    for k in 0..40 {
        let a: Vec<f64> = b.iter().zip(&jitter).map(|(v, j)| v + j + 0.02 * k as f64).collect();
        let p = paired_t_test(&a, &b).unwrap().p_value;
        if k > 0 && b.iter().zip(&a).map(|(x, y)| y - x).sum::<f64>() > 0.0 {
            mono &= p <= last;
        }
        last = p;
    }
    out.push(Check::new("p decreases as a constant offset grows", mono, "40 offsets"));

    out.extend(permutation_checks());
    out
}

/// The t-test p-value against a randomized sign-flip permutation test on
/// normal differences (n = 12, 20 000 flips). The permutation distribution
/// is conditional on |d| and differs from Student's t by O(1/n), so the
/// tolerance is 4 Monte-Carlo standard errors plus 0.01.
pub fn permutation_checks() -> Vec<Check> {
    let draws = 20_000;
    let mut worst: f64 = 0.0;
    let mut rng = seed::rng(77);
    for (i, shift) in [0.0, 0.3, 0.6, 0.9, 1.2].iter().enumerate() {
        let d: Vec<f64> = (0..12)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + shift
            })
            .collect();
        let zeros = vec![0.0; d.len()];
        let p = paired_t_test(&d, &zeros).unwrap().p_value;
        let perm = permutation_p(&d, draws, 1000 + i as u64);
        let se = (perm.max(1.0 / draws as f64) * (1.0 - perm) / draws as f64).sqrt();
        worst = worst.max((p - perm).abs() / (4.0 * se + 0.01));
    }
    vec![Check::new(
        "t-test p agrees with sign-flip permutation p",
        worst <= 1.0,
        format!("worst |diff| / (4 SE + 0.01) = {worst:.3}"),
    )]
}
