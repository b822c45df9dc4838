//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use aoi_core::dqn::{QNetwork, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Worst relative error `|a - n| / max(|a|, |n|, 1e-6)` between the analytic
/// gradient and central differences, over every parameter and `batches`
/// random batches on a fresh random network. Batches with a hidden unit so
/// close to its kink that a perturbation could cross it are redrawn, since
/// the loss is not differentiable there.
pub fn gradient_check(sizes: &[usize], batches: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < batches {
        let net = QNetwork::glorot(sizes, &mut rng).unwrap();
        let n = rng.gen_range(1..=8);
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..sizes[0]).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let outputs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..sizes[sizes.len() - 1])).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if near_kink(&net, &inputs, 1e2 * h) {
            continue;
        }
        let batch: Vec<Sample> = (0..n)
            .map(|i| Sample {
                input: &inputs[i],
                output: outputs[i],
                target: targets[i],
            })
            .collect();
        let (_, analytic) = net.loss_and_gradient(&batch).unwrap();
        let base = net.params();
        let mut probe = net.clone();
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] = base[k] + h;
            probe.set_params(&p).unwrap();
            let up = probe.loss_and_gradient(&batch).unwrap().0;
            p[k] = base[k] - h;
            probe.set_params(&p).unwrap();
            let down = probe.loss_and_gradient(&batch).unwrap().0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        checked += 1;
    }
    worst
}

/// True when some hidden pre-activation lies within `margin` of zero.
fn near_kink(net: &QNetwork, inputs: &[Vec<f64>], margin: f64) -> bool {
    let layers = net.layers();
    inputs.iter().any(|x| {
        let mut a = x.clone();
        for l in &layers[..layers.len() - 1] {
            let z: Vec<f64> = (0..l.outputs)
                .map(|o| l.biases[o] + (0..l.inputs).map(|i| l.weights[o * l.inputs + i] * a[i]).sum::<f64>())
                .collect();
            if z.iter().any(|v| v.abs() < margin) {
                return true;
            }
            a = z.into_iter().map(|v| v.max(0.0)).collect();
        }
        false
    })
}
