use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, Real};

/// Upper bound on the logit scale `exp(t)`.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Sum over the batch rows.
    #[default]
    Sum,
    Mean,
}

/// Loss of one direction (modality a → b) and its gradients.
#[derive(Debug, Clone)]
pub struct PairLoss<T> {
    pub loss: T,
    pub grad_a: Matrix<T>,
    pub grad_b: Matrix<T>,
    pub grad_t: T,
}

/// Row-normalized copy plus the original row norms.
pub(crate) fn normalize_rows<T: Real>(m: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm <= T::zero() || !norm.is_finite() {
            return Err(Error::usage(format!("row {r} has zero or non-finite norm")));
        }
        for x in row.iter_mut() {
            *x = *x / norm;
        }
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Back-propagates through `x̂ = x/‖x‖`: `dx = (dx̂ − x̂(x̂·dx̂))/‖x‖`.
fn unnormalize_grad<T: Real>(unit: &Matrix<T>, norms: &[T], grad_unit: &Matrix<T>) -> Matrix<T> {
    let mut out = grad_unit.clone();
    for (r, &norm) in norms.iter().enumerate().take(unit.rows()) {
        let u = unit.row(r);
        let proj: T = u.iter().zip(grad_unit.row(r)).map(|(&a, &b)| a * b).sum();
        for (o, &ui) in out.row_mut(r).iter_mut().zip(u) {
            *o = (*o - ui * proj) / norm;
        }
    }
    out
}

/// The logit scale used for temperature `t` and `d scale / d t`.
pub fn logit_scale<T: Real>(t: T) -> (T, T) {
    let s = t.exp();
    let cap = T::lit(MAX_LOGIT_SCALE);
    if s > cap {
        (cap, T::zero())
    } else {
        (s, s)
    }
}

/// Cross-entropy of each row of `logits = â·b̂ᵀ·exp(t)` against the diagonal.
///
/// `ea` and `eb` are n×d with matching rows; row i of `ea` is the positive
/// for row i of `eb`. With [`Reduction::Sum`] the batch terms are summed.
pub fn contrastive_pair_loss<T: Real>(
    ea: &Matrix<T>,
    eb: &Matrix<T>,
    t: T,
    reduction: Reduction,
) -> Result<PairLoss<T>> {
    if ea.shape() != eb.shape() {
        return Err(Error::usage(format!(
            "contrastive loss needs equal shapes, got {:?} and {:?}",
            ea.shape(),
            eb.shape()
        )));
    }
    let n = ea.rows();
    if n == 0 {
        return Err(Error::usage("contrastive loss needs at least one row"));
    }
    let (a_hat, a_norms) = normalize_rows(ea)?;
    let (b_hat, b_norms) = normalize_rows(eb)?;
    let (scale, dscale_dt) = logit_scale(t);
    let cosines = a_hat.matmul_t(&b_hat)?;

    let weight = match reduction {
        Reduction::Sum => T::one(),
        Reduction::Mean => T::one() / T::lit(n as f64),
    };
    let mut loss = T::zero();
    // dL/dlogits = softmax − I, later scaled by the reduction weight.
    let mut dlogits = Matrix::zeros(n, n);
    for i in 0..n {
        let row = cosines.row(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &c| m.max(c * scale));
        let exps: Vec<T> = row.iter().map(|&c| (c * scale - max).exp()).collect();
        let denom: T = exps.iter().copied().sum();
        loss += denom.ln() + max - row[i] * scale;
        let out = dlogits.row_mut(i);
        for j in 0..n {
            out[j] = exps[j] / denom * weight;
        }
        out[i] -= weight;
    }
    loss *= weight;

    let grad_t = dlogits
        .as_slice()
        .iter()
        .zip(cosines.as_slice())
        .map(|(&g, &c)| g * c)
        .sum::<T>()
        * dscale_dt;
    let mut grad_a_hat = dlogits.matmul(&b_hat)?;
    grad_a_hat.scale(scale);
    let mut grad_b_hat = dlogits.t_matmul(&a_hat)?;
    grad_b_hat.scale(scale);

    Ok(PairLoss {
        loss,
        grad_a: unnormalize_grad(&a_hat, &a_norms, &grad_a_hat),
        grad_b: unnormalize_grad(&b_hat, &b_norms, &grad_b_hat),
        grad_t,
    })
}
