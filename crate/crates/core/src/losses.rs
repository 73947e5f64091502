//! Training objectives: time-domain reconstruction, PSD reconstruction and
//! VICReg on baseline pairs of `z_dmg`, combined with fixed weights.
//!
//! Every loss comes with its analytic gradient so the training loop can
//! backpropagate without an autodiff engine.

use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, Tensor3};
use crate::{Error, Result};

/// ε inside the per-dimension standard deviation of the variance term.
pub const VAR_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda_inv: f64,
    pub lambda_var: f64,
    pub lambda_cov: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 100.0,
            lambda2: 100.0,
            lambda3: 1.0,
            lambda_inv: 25.0,
            lambda_var: 25.0,
            lambda_cov: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda_inv,
            self.lambda_var,
            self.lambda_cov,
        ];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l_inv: f64,
    pub l_var: f64,
    pub l_cov: f64,
    /// Set when the batch had fewer than two baseline pairs.
    pub l3_skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VicregTerms {
    pub l3: f64,
    pub l_inv: f64,
    pub l_var: f64,
    pub l_cov: f64,
}

fn check_same(a: &Tensor3, b: &Tensor3) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::contract(format!("shape mismatch {:?} vs {:?}", a.dims, b.dims)));
    }
    if a.data.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    Ok(())
}

/// Per-sample MSE over the last two axes, averaged over the batch, and its
/// gradient with respect to `pred`.
fn batch_mse(target: &Tensor3, pred: &Tensor3) -> Result<(f64, Vec<f64>)> {
    check_same(target, pred)?;
    let n = target.data.len() as f64;
    let mut grad = vec![0.0; target.data.len()];
    let mut sum = 0.0;
    for ((g, t), p) in grad.iter_mut().zip(&target.data).zip(&pred.data) {
        let r = p - t;
        sum += r * r;
        *g = 2.0 * r / n;
    }
    Ok((sum / n, grad))
}

/// Time-domain reconstruction loss (mean squared error per C×T window, batch-averaged).
pub fn loss_time(x: &Tensor3, x_hat: &Tensor3) -> Result<f64> {
    batch_mse(x, x_hat).map(|r| r.0)
}

/// PSD reconstruction loss (mean squared error per C×K spectrum, batch-averaged).
pub fn loss_psd(s: &Tensor3, s_hat: &Tensor3) -> Result<f64> {
    batch_mse(s, s_hat).map(|r| r.0)
}

pub fn loss_time_grad(x: &Tensor3, x_hat: &Tensor3) -> Result<(f64, Vec<f64>)> {
    batch_mse(x, x_hat)
}

pub fn loss_psd_grad(s: &Tensor3, s_hat: &Tensor3) -> Result<(f64, Vec<f64>)> {
    batch_mse(s, s_hat)
}

fn column_means(z: &Matrix) -> Vec<f64> {
    let mut m = vec![0.0; z.cols];
    for row in z.iter_rows() {
        m.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    m.iter_mut().for_each(|a| *a /= z.rows as f64);
    m
}

fn centered(z: &Matrix) -> Matrix {
    let m = column_means(z);
    let mut c = z.clone();
    for r in 0..c.rows {
        c.row_mut(r).iter_mut().zip(&m).for_each(|(v, mu)| *v -= mu);
    }
    c
}

/// Hinge on per-dimension std, and its gradient.
fn variance_term(z: &Matrix) -> (f64, Matrix) {
    let (n, h) = (z.rows, z.cols);
    let zc = centered(z);
    let mut grad = Matrix::zeros(n, h);
    let mut loss = 0.0;
    for j in 0..h {
        let var = (0..n).map(|i| zc.data[i * h + j].powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = (var + VAR_EPS).sqrt();
        if std < 1.0 {
            loss += 1.0 - std;
            for i in 0..n {
                grad.data[i * h + j] = -zc.data[i * h + j] / (h as f64 * std * (n - 1) as f64);
            }
        }
    }
    (loss / h as f64, grad)
}

/// Sum of squared off-diagonal covariances divided by H, and its gradient.
fn covariance_term(z: &Matrix) -> (f64, Matrix) {
    let (n, h) = (z.rows, z.cols);
    let zc = centered(z);
    let denom = (n - 1) as f64;
    let mut cov = vec![0.0; h * h];
    crate::tensor::gemm(h, n, h, 1.0 / denom, &zc.data, true, &zc.data, false, 0.0, &mut cov);
    let mut loss = 0.0;
    let mut g = vec![0.0; h * h];
    for i in 0..h {
        for j in 0..h {
            if i != j {
                let c = cov[i * h + j];
                loss += c * c;
                g[i * h + j] = 2.0 * c / h as f64;
            }
        }
    }
    // d/dZ of f(C) with C = Zcᵀ Zc / (n-1) and symmetric G is 2 Zc G / (n-1);
    // columns of Zc G already sum to zero so centering adds nothing.
    let mut grad = Matrix::zeros(n, h);
    crate::tensor::gemm(n, h, h, 2.0 / denom, &zc.data, false, &g, false, 0.0, &mut grad.data);
    (loss / h as f64, grad)
}

/// VICReg loss between paired branches, with gradients for both branches.
pub fn vicreg_grad(z1: &Matrix, z2: &Matrix, w: &LossWeights) -> Result<(VicregTerms, Matrix, Matrix)> {
    if z1.rows != z2.rows || z1.cols != z2.cols {
        return Err(Error::contract("vicreg branches must have equal shapes"));
    }
    if z1.rows < 2 {
        return Err(Error::InsufficientPairs(z1.rows));
    }
    let (n, h) = (z1.rows, z1.cols);
    let scale = 1.0 / (n * h) as f64;

    let mut l_inv = 0.0;
    let mut d1 = Matrix::zeros(n, h);
    let mut d2 = Matrix::zeros(n, h);
    for k in 0..n * h {
        let r = z1.data[k] - z2.data[k];
        l_inv += r * r;
        d1.data[k] = w.lambda_inv * 2.0 * r * scale;
        d2.data[k] = -w.lambda_inv * 2.0 * r * scale;
    }
    l_inv *= scale;

    let (v1, gv1) = variance_term(z1);
    let (v2, gv2) = variance_term(z2);
    let (c1, gc1) = covariance_term(z1);
    let (c2, gc2) = covariance_term(z2);
    for k in 0..n * h {
        d1.data[k] += w.lambda_var * gv1.data[k] + w.lambda_cov * gc1.data[k];
        d2.data[k] += w.lambda_var * gv2.data[k] + w.lambda_cov * gc2.data[k];
    }
    let (l_var, l_cov) = (v1 + v2, c1 + c2);
    let terms = VicregTerms {
        l3: w.lambda_inv * l_inv + w.lambda_var * l_var + w.lambda_cov * l_cov,
        l_inv,
        l_var,
        l_cov,
    };
    Ok((terms, d1, d2))
}

/// VICReg loss between paired `(D/2)×H` branches.
pub fn vicreg(z1: &Matrix, z2: &Matrix, w: &LossWeights) -> Result<VicregTerms> {
    vicreg_grad(z1, z2, w).map(|r| r.0)
}

/// Split baseline row indices into the 1st, 3rd, … and 2nd, 4th, … positions.
/// An odd trailing row is dropped.
pub fn pair_baseline(baseline_rows: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let pairs = baseline_rows.len() / 2;
    let first = (0..pairs).map(|i| baseline_rows[2 * i]).collect();
    let second = (0..pairs).map(|i| baseline_rows[2 * i + 1]).collect();
    (first, second)
}

/// Batch tensors the total loss is evaluated on.
pub struct LossInputs<'a> {
    pub x: &'a Tensor3,
    pub x_hat: &'a Tensor3,
    pub s: Option<&'a Tensor3>,
    pub s_hat: Option<&'a Tensor3>,
    pub z_dmg: &'a Matrix,
    /// Batch rows belonging to the baseline subset, in batch order.
    pub baseline_rows: &'a [usize],
}

/// Gradients of the total loss with respect to the model outputs.
pub struct LossGrads {
    pub x_hat: Option<Vec<f64>>,
    pub s_hat: Option<Vec<f64>>,
    pub z_dmg: Option<Vec<f64>>,
}

/// Weighted total loss and its output gradients. Terms whose weight is zero
/// are still evaluated for logging when their inputs are present, but
/// contribute no gradient.
pub fn total_loss_grad(inp: &LossInputs, w: &LossWeights) -> Result<(LossBreakdown, LossGrads)> {
    let mut out = LossBreakdown::default();
    let mut grads = LossGrads { x_hat: None, s_hat: None, z_dmg: None };

    let (l1, mut g1) = loss_time_grad(inp.x, inp.x_hat)?;
    out.l1 = l1;
    if w.lambda1 != 0.0 {
        g1.iter_mut().for_each(|g| *g *= w.lambda1);
        grads.x_hat = Some(g1);
    }

    if let (Some(s), Some(s_hat)) = (inp.s, inp.s_hat) {
        let (l2, mut g2) = loss_psd_grad(s, s_hat)?;
        out.l2 = l2;
        if w.lambda2 != 0.0 {
            g2.iter_mut().for_each(|g| *g *= w.lambda2);
            grads.s_hat = Some(g2);
        }
    }

    let (odd, even) = pair_baseline(inp.baseline_rows);
    match vicreg_grad(&inp.z_dmg.select_rows(&odd), &inp.z_dmg.select_rows(&even), w) {
        Ok((terms, d1, d2)) => {
            out.l3 = terms.l3;
            out.l_inv = terms.l_inv;
            out.l_var = terms.l_var;
            out.l_cov = terms.l_cov;
            if w.lambda3 != 0.0 {
                let h = inp.z_dmg.cols;
                let mut dz = vec![0.0; inp.z_dmg.data.len()];
                for (k, (&a, &b)) in odd.iter().zip(&even).enumerate() {
                    for j in 0..h {
                        dz[a * h + j] += w.lambda3 * d1.data[k * h + j];
                        dz[b * h + j] += w.lambda3 * d2.data[k * h + j];
                    }
                }
                grads.z_dmg = Some(dz);
            }
        }
        Err(Error::InsufficientPairs(_)) => out.l3_skipped = true,
        Err(e) => return Err(e),
    }

    out.total = w.lambda1 * out.l1 + w.lambda2 * out.l2 + w.lambda3 * out.l3;
    Ok((out, grads))
}

pub fn total_loss(inp: &LossInputs, w: &LossWeights) -> Result<LossBreakdown> {
    total_loss_grad(inp, w).map(|r| r.0)
}
