//! Central-difference gradient harness on a tiny model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shmrep::losses::{total_loss_grad, vicreg_grad, LossInputs, LossWeights};
use shmrep::model::{Activation, ConvStage, DualLatentAutoencoder, HeadInput, ModelConfig, OutputGrads};
use shmrep::tensor::{Matrix, Tensor3};

pub const STEP: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

pub fn tiny(head_input: HeadInput, activation: Activation) -> ModelConfig {
    ModelConfig {
        channels: 2,
        window: 64,
        latent_dim: 4,
        stages: vec![
            ConvStage { channels: 3, kernel: 7, stride: 4 },
            ConvStage { channels: 4, kernel: 5, stride: 2 },
        ],
        head_input,
        psd_hidden: 6,
        psd_layers: 3,
        psd_bins: 33,
        activation,
        seed: 11,
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 3], lo: f64, hi: f64) -> Tensor3 {
    let n = dims.iter().product();
    Tensor3::from_vec(dims, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

struct Problem {
    x: Tensor3,
    s: Tensor3,
    baseline: Vec<usize>,
    weights: LossWeights,
}

fn loss_and_grad(model: &DualLatentAutoencoder, pb: &Problem) -> (f64, Vec<f64>) {
    let with_psd = pb.weights.lambda2 != 0.0;
    let (out, cache) = model.forward(&pb.x, with_psd).unwrap();
    let inp = LossInputs {
        x: &pb.x,
        x_hat: &out.x_hat,
        s: with_psd.then_some(&pb.s),
        s_hat: out.s_hat.as_ref(),
        z_dmg: &out.latents.z_dmg,
        baseline_rows: &pb.baseline,
    };
    let (b, g) = total_loss_grad(&inp, &pb.weights).unwrap();
    let grads = OutputGrads { z_dmg: g.z_dmg, z_ndmg: None, x_hat: g.x_hat, s_hat: g.s_hat };
    (b.total, model.backward(&cache, &grads))
}

/// Worst relative error between analytic and central-difference parameter
/// gradients over a spread of probes in every parameter slot.
pub fn model_grad_error(cfg: ModelConfig, weights: LossWeights) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pb = Problem {
        x: random_tensor(&mut rng, [6, 2, 64], -1.5, 1.5),
        s: random_tensor(&mut rng, [6, 2, 33], 0.0, 1.0),
        baseline: vec![0, 1, 3, 4, 5],
        weights,
    };
    let mut model = DualLatentAutoencoder::new(cfg).unwrap();
    let (_, analytic) = loss_and_grad(&model, &pb);
    let probes: Vec<usize> = model
        .params()
        .slots
        .iter()
        .flat_map(|s| {
            let r = s.range();
            let stride = (r.len() / 5).max(1);
            r.step_by(stride).collect::<Vec<_>>()
        })
        .collect();
    let mut worst = 0.0f64;
    for &i in &probes {
        let orig = model.params().data[i];
        model.params_mut()[i] = orig + STEP;
        let (lp, _) = loss_and_grad(&model, &pb);
        model.params_mut()[i] = orig - STEP;
        let (lm, _) = loss_and_grad(&model, &pb);
        model.params_mut()[i] = orig;
        let numeric = (lp - lm) / (2.0 * STEP);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

/// Worst relative error of the VICReg latent gradients for both branches.
pub fn vicreg_grad_error(w: LossWeights) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, h) = (5, 4);
    let mut z1 = Matrix::from_vec(n, h, (0..n * h).map(|_| rng.random_range(-0.6..0.6)).collect()).unwrap();
    let mut z2 = Matrix::from_vec(n, h, (0..n * h).map(|_| rng.random_range(-0.6..0.6)).collect()).unwrap();
    // one wide dimension so the variance hinge is inactive there
    for i in 0..n {
        z1.data[i * h] *= 8.0;
        z2.data[i * h] *= 8.0;
    }
    let (_, d1, d2) = vicreg_grad(&z1, &z2, &w).unwrap();
    let l3 = |a: &Matrix, b: &Matrix| vicreg_grad(a, b, &w).unwrap().0.l3;
    let mut worst = 0.0f64;
    for k in 0..n * h {
        for branch in 0..2 {
            let (mut p, mut m) = ([z1.clone(), z2.clone()], [z1.clone(), z2.clone()]);
            p[branch].data[k] += STEP;
            m[branch].data[k] -= STEP;
            let numeric = (l3(&p[0], &p[1]) - l3(&m[0], &m[1])) / (2.0 * STEP);
            let a = if branch == 0 { d1.data[k] } else { d2.data[k] };
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

/// Weight settings isolating L1, L2 and each VICReg term, in that order.
pub fn isolated_terms() -> Vec<(&'static str, LossWeights)> {
    let none = LossWeights { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, lambda_inv: 0.0, lambda_var: 0.0, lambda_cov: 0.0 };
    vec![
        ("L1", LossWeights { lambda1: 1.0, ..none }),
        ("L2", LossWeights { lambda2: 1.0, ..none }),
        ("invariance", LossWeights { lambda3: 1.0, lambda_inv: 1.0, ..none }),
        ("variance", LossWeights { lambda3: 1.0, lambda_var: 1.0, ..none }),
        ("covariance", LossWeights { lambda3: 1.0, lambda_cov: 1.0, ..none }),
    ]
}
