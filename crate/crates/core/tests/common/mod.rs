#![allow(dead_code)]

use hintreg::data::TensorSamples;
use hintreg::losses::{cross_entropy, full_objective, objective_gradients, HintConfig, Measure};
use hintreg::network::NetworkSplit;
use hintreg::optim::{Optimizer, OptimizerKind, TrainSchedule};
use hintreg::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Below this magnitude the central difference is dominated by rounding
/// in the objective, so errors are measured relative to the floor instead.
pub const GRAD_FLOOR: f64 = 1e-4;

/// Largest relative error between analytic and central-difference
/// gradients (step `h`) over `per_tensor` sampled entries of every
/// parameter tensor.
pub fn objective_gradient_error(
    net: &mut NetworkSplit,
    x: &Tensor,
    labels: &[usize],
    config: &HintConfig,
    per_tensor: usize,
    seed: u64,
    h: f64,
) -> f64 {
    let (_, grads) = objective_gradients(net, x, labels, config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for layer in 0..net.depth() {
        for bias in [false, true] {
            let n = if bias {
                net.layers()[layer].bias().len()
            } else {
                net.layers()[layer].weight().len()
            };
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx.truncate(per_tensor);
            let analytic = grads.param(layer, bias).expect("full objective reaches every layer");
            for &i in &idx {
                let eval = |delta: f64| {
                    let mut probe = net.clone();
                    let l = &mut probe.layers_mut()[layer];
                    let t = if bias { l.bias_mut() } else { l.weight_mut() };
                    t.data_mut()[i] += delta;
                    full_objective(&mut probe, x, labels, config).unwrap().total
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

/// Double-loop enumeration of the hint penalty over ordered pairs.
pub fn brute_force_hint(reps: &Tensor, labels: &[usize], measure: Measure) -> f64 {
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        match measure {
            Measure::Sed => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Measure::Nmd => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64,
            Measure::As => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                (dot / (na * nb)).clamp(-1.0, 1.0).acos()
            }
        }
    };
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut per_class = Vec::new();
    for c in classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let n = members.len();
        if n < 2 {
            continue;
        }
        let mut outer = 0.0;
        for &i in &members {
            let mut inner = 0.0;
            for &j in &members {
                if i != j {
                    inner += dist(reps.row(i), reps.row(j));
                }
            }
            outer += inner / (n as f64 - 1.0);
        }
        per_class.push(outer / n as f64);
    }
    if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, shape: &[usize], classes: usize) -> (Tensor, Vec<usize>) {
    let x = Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0)).unwrap();
    let labels = (0..shape[0]).map(|_| rng.gen_range(0..classes)).collect();
    (x, labels)
}

/// Two Gaussian blobs in the plane, centred at (−1.5, −1.5) and (1.5, 1.5).
pub fn blobs(n: usize, seed: u64) -> TensorSamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr_normal();
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let centre = if c == 0 { -1.5 } else { 1.5 };
        x.push(centre + 0.5 * normal(&mut rng));
        x.push(centre + 0.5 * normal(&mut rng));
        y.push(c);
    }
    TensorSamples::new(Tensor::new(vec![n, 2], x).unwrap(), y).unwrap()
}

/// Box–Muller standard normal.
fn rand_distr_normal() -> impl Fn(&mut ChaCha8Rng) -> f64 {
    |rng| {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Plain single-optimizer training loop written independently of the
/// library trainer: same shuffling, cross-entropy steps only.
pub fn single_optimizer_baseline(
    mut net: NetworkSplit,
    data: &TensorSamples,
    schedule: &TrainSchedule,
    gamma: f64,
) -> NetworkSplit {
    let mut opt = Optimizer::new(schedule.optimizer);
    for epoch in 1..=schedule.max_epochs {
        let mut perm: Vec<usize> = (0..data.labels.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        rng.set_stream(epoch as u64);
        perm.shuffle(&mut rng);
        for chunk in perm.chunks(schedule.batch_size) {
            if chunk.len() < 2 && chunk.len() != schedule.batch_size {
                continue;
            }
            let x = data.inputs.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let last = net.depth() - 1;
            let taps = net.forward_with_taps(&x).unwrap();
            let (_, dprobs) = cross_entropy(taps.probs(), &labels).unwrap();
            let mut grads = net.backward_from(last, &dprobs).unwrap();
            grads.scale(gamma);
            opt.step(&mut net, &grads).unwrap();
        }
    }
    net
}

pub fn bits(net: &NetworkSplit, layers: std::ops::Range<usize>) -> Vec<u64> {
    net.layers()[layers]
        .iter()
        .flat_map(|l| l.weight().data().iter().chain(l.bias().data()))
        .map(|v| v.to_bits())
        .collect()
}

/// Three well-separated classes in 6 dimensions with per-sample noise.
pub fn toy(n: usize, seed: u64) -> TensorSamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * 6);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 3;
        for d in 0..6 {
            let centre = if d % 3 == c { 1.0 } else { 0.0 };
            x.push(centre + rng.gen_range(-0.3..0.3));
        }
        y.push(c);
    }
    TensorSamples::new(Tensor::new(vec![n, 6], x).unwrap(), y).unwrap()
}

pub fn adadelta() -> OptimizerKind {
    OptimizerKind::default()
}
