//! Central finite-difference gradient checks.

use primed_core::autodiff::{Tape, Tensor, Var};
use primed_core::error::Result;
use primed_core::model::{build_unet, UnetConfig, UnetModel};
use primed_core::seed;
use rand::seq::SliceRandom;
use rand::Rng;

use super::Check;

pub type Build<'a> = &'a dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, s: u64) -> Tensor<f64> {
    let mut rng = seed::rng(s);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values at least `gap` away from zero, random sign.
pub fn away_from_zero(shape: &[usize], gap: f64, s: u64) -> Tensor<f64> {
    let mut rng = seed::rng(s);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(gap..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// A permutation of well-separated levels, so no max-pool window has
/// near-ties.
pub fn distinct(shape: &[usize], s: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - n as f64 * 0.05).collect();
    levels.shuffle(&mut seed::rng(s));
    Tensor::new(shape.to_vec(), levels).unwrap()
}

fn offset_target(y: &Tensor<f64>, s: u64) -> Tensor<f64> {
    let mut rng = seed::rng(s);
    let data = y
        .data()
        .iter()
        .map(|v| {
            let off = rng.random_range(0.5..1.5);
            if rng.random::<bool>() {
                v + off
            } else {
                v - off
            }
        })
        .collect();
    Tensor::new(y.shape().to_vec(), data).unwrap()
}

/// Scalar objective `sum |f(inputs) - target|`, with the target offset from
/// the unperturbed output by at least 0.5 per entry so the absolute value
/// stays on one linear piece under small perturbations.
fn objective(inputs: &[Tensor<f64>], f: Build, target: &Tensor<f64>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false).unwrap()).collect();
    let y = f(&mut tape, &vars).unwrap();
    tape.value(y)
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// Largest relative error between backprop and central differences over
/// every element of every input. Relative error uses
/// `max(|analytic|, |numeric|, floor)` as denominator.
pub fn max_rel_error(inputs: &[Tensor<f64>], h: f64, s: u64, floor: f64, f: Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true).unwrap()).collect();
    let y = f(&mut tape, &vars).unwrap();
    let target = offset_target(tape.value(y), s);
    let n = tape.value(y).numel() as f64;
    let t = tape.leaf(target.clone(), false).unwrap();
    let mean = tape.l1_loss(y, t).unwrap();
    let loss = tape.scale(mean, n).unwrap();
    tape.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (objective(&plus, f, &target) - objective(&minus, f, &target)) / (2.0 * h);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

const OP_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;
const H: f64 = 1e-3;

/// Every differentiable op on random small tensors.
pub fn op_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let mut check = |name: &str, inputs: Vec<Tensor<f64>>, f: Build| {
        let err = max_rel_error(&inputs, H, 17, 1e-6, f);
        out.push(Check::below(format!("gradcheck {name}"), err, OP_TOL));
    };

    check(
        "conv2d 3x3",
        vec![uniform(&[1, 2, 5, 5], -1.0, 1.0, 1), uniform(&[4, 2, 3, 3], -1.0, 1.0, 2), uniform(&[4], -1.0, 1.0, 3)],
        &|t, v| t.conv2d(v[0], v[1], v[2]),
    );
    check(
        "conv2d 1x1 batch 2",
        vec![uniform(&[2, 3, 4, 3], -1.0, 1.0, 4), uniform(&[2, 3, 1, 1], -1.0, 1.0, 5), uniform(&[2], -1.0, 1.0, 6)],
        &|t, v| t.conv2d(v[0], v[1], v[2]),
    );
    check("relu", vec![away_from_zero(&[2, 3, 4, 4], 0.01, 7)], &|t, v| t.relu(v[0]));
    check("maxpool2", vec![distinct(&[2, 2, 4, 6], 8)], &|t, v| t.maxpool2(v[0]));
    check("upsample_bilinear2", vec![uniform(&[1, 1, 3, 3], -1.0, 1.0, 9)], &|t, v| {
        t.upsample_bilinear2(v[0])
    });
    check(
        "upsample_bilinear2 rectangular",
        vec![uniform(&[2, 2, 2, 3], -1.0, 1.0, 10)],
        &|t, v| t.upsample_bilinear2(v[0]),
    );
    check(
        "concat_channels",
        vec![uniform(&[2, 2, 3, 3], -1.0, 1.0, 11), uniform(&[2, 1, 3, 3], -1.0, 1.0, 12)],
        &|t, v| t.concat_channels(v[0], v[1]),
    );
    check(
        "add",
        vec![uniform(&[1, 2, 3, 3], -1.0, 1.0, 13), uniform(&[1, 2, 3, 3], -1.0, 1.0, 14)],
        &|t, v| t.add(v[0], v[1]),
    );
    check("add(x, x)", vec![uniform(&[1, 1, 3, 3], -1.0, 1.0, 15)], &|t, v| t.add(v[0], v[0]));
    check("scale", vec![uniform(&[1, 2, 3, 3], -1.0, 1.0, 16)], &|t, v| t.scale(v[0], -2.5));
    check("instance_norm", vec![uniform(&[2, 3, 4, 4], -1.0, 1.0, 17)], &|t, v| {
        t.instance_norm(v[0], 1e-5)
    });
    let target = distinct(&[1, 2, 3, 3], 18);
    check("l1_loss", vec![distinct(&[1, 2, 3, 3], 19).map(|v| v + 0.05)], &move |t, v| {
        let tt = t.leaf(target.clone(), false)?;
        t.l1_loss(v[0], tt)
    });
    out
}

/// Tiny model with every weight and bias random. The zero-initialized last
/// layer would otherwise block all upstream gradients, and zero biases put
/// the head exactly on a relu kink wherever its inputs all vanish.
pub fn randomized_model(in_channels: usize, s: u64) -> UnetModel<f64> {
    let mut model = build_unet::<f64>(UnetConfig::new(in_channels, 1, 2), s).unwrap();
    let n = model.params().len();
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        if i >= n - 2 || p.name.ends_with(".bias") {
            p.value = uniform(p.value.shape(), -0.5, 0.5, s + 100 + i as u64);
        }
    }
    model
}

/// End-to-end check of the depth-1, 2-channel-base U-Net on an 8×8 input:
/// gradients with respect to every parameter and the k-space input.
pub fn model_check(in_channels: usize) -> Check {
    let model = randomized_model(in_channels, 3);
    let scale = model.config().io_scale;
    let mut inputs: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
    let np = inputs.len();
    inputs.push(uniform(&[1, 2, 8, 8], -scale, scale, 4));
    if in_channels == 3 {
        let cols: Vec<f64> = (0..8).map(|c| f64::from(u8::from(c % 3 == 0))).collect();
        let data = (0..64).map(|i| cols[i % 8]).collect();
        inputs.push(Tensor::new(vec![1, 1, 8, 8], data).unwrap());
    }
    let f = move |tape: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        Ok(model.forward_with_params(tape, &v[..np], v[np], v.get(np + 1).copied())?.0)
    };
    // biases feeding an instance norm have an exactly zero gradient; the
    // floor keeps round-off in those finite differences (about 1e-7 against
    // gradients of order 1e3) from counting as relative error
    let err = max_rel_error(&inputs, 1e-5, 5, 1e-3, &f);
    Check::below(
        format!("gradcheck unet depth 1 base 2 in {in_channels} (8×8)"),
        err,
        MODEL_TOL,
    )
}

