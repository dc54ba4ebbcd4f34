//! The three training losses: softmax cross-entropy, mean squared error,
//! and the KL activation-sparsity penalty.

use super::{Tape, Tensor};
use crate::error::{Error, Result};

fn finite_scalar(op: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Mean over the batch of `-log softmax(logits)[label]`, computed with the
/// max-shifted log-sum-exp.
pub fn cross_entropy(tape: &Tape, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::Dimension {
            op: "cross_entropy",
            detail: format!(
                "logits {:?} vs {} labels",
                logits.shape(),
                labels.len()
            ),
        });
    }
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data {
            what: format!("label {bad} out of range for {classes} classes"),
        });
    }

    let mut total = 0.0;
    let mut softmax = vec![0.0; batch * classes];
    {
        let ld = logits.data();
        for i in 0..batch {
            let row = &ld[i * classes..(i + 1) * classes];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                softmax[i * classes + j] = e;
                denom += e;
            }
            for s in &mut softmax[i * classes..(i + 1) * classes] {
                *s /= denom;
            }
            let lse = m + denom.ln();
            total += lse - row[labels[i]];
        }
    }
    let loss = finite_scalar("cross_entropy", total / batch as f64)?;

    let track = tape.should_record(&[logits]);
    let out = Tensor::from_parts(vec![loss], vec![1], track);
    if track {
        let (logits, out_h) = (logits.clone(), out.clone());
        let labels = labels.to_vec();
        tape.record("cross_entropy", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            let scale = g[0] / batch as f64;
            let mut dl = vec![0.0; batch * classes];
            for i in 0..batch {
                for j in 0..classes {
                    let indicator = if j == labels[i] { 1.0 } else { 0.0 };
                    dl[i * classes + j] = (softmax[i * classes + j] - indicator) * scale;
                }
            }
            gm.accumulate(&logits, dl);
        });
    }
    Ok(out)
}

/// `(1/N) * sum_i ||x_i - x_hat_i||^2` where `N` is the batch count
/// (the leading extent for rank >= 2, otherwise 1).
pub fn mse(tape: &Tape, x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    if x.shape() != x_hat.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            left: x.shape().to_vec(),
            right: x_hat.shape().to_vec(),
        });
    }
    let n = if x.rank() >= 2 { x.shape()[0] } else { 1 } as f64;
    let total: f64 = x
        .data()
        .iter()
        .zip(x_hat.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let loss = finite_scalar("mse", total / n)?;

    let track = tape.should_record(&[x, x_hat]);
    let out = Tensor::from_parts(vec![loss], vec![1], track);
    if track {
        let (x, x_hat, out_h) = (x.clone(), x_hat.clone(), out.clone());
        tape.record("mse", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            let scale = 2.0 * g[0] / n;
            if x.requires_grad() {
                let dx: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(x_hat.data().iter())
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                gm.accumulate(&x, dx);
            }
            if x_hat.requires_grad() {
                let dh: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(x_hat.data().iter())
                    .map(|(a, b)| -scale * (a - b))
                    .collect();
                gm.accumulate(&x_hat, dh);
            }
        });
    }
    Ok(out)
}

const KL_CLAMP: f64 = 1e-7;

/// KL activation-sparsity penalty
/// `sum_j rho*ln(rho/a_j) + (1-rho)*ln((1-rho)/(1-a_j))` with each mean
/// activation clamped into `(1e-7, 1 - 1e-7)` first.
pub fn kl_sparsity(tape: &Tape, mean_activations: &Tensor, rho: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rho) || rho == 0.0 {
        return Err(Error::Config {
            what: format!("sparsity target rho {rho} outside (0, 1)"),
        });
    }
    let clamped: Vec<f64> = mean_activations
        .data()
        .iter()
        .map(|&a| a.clamp(KL_CLAMP, 1.0 - KL_CLAMP))
        .collect();
    let loss: f64 = clamped
        .iter()
        .map(|&a| rho * (rho / a).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - a)).ln())
        .sum();
    let loss = finite_scalar("kl_sparsity", loss)?;

    let track = tape.should_record(&[mean_activations]);
    let out = Tensor::from_parts(vec![loss], vec![1], track);
    if track {
        let (acts, out_h) = (mean_activations.clone(), out.clone());
        tape.record("kl_sparsity", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            // zero gradient where the clamp was active
            let da: Vec<f64> = acts
                .data()
                .iter()
                .map(|&a| {
                    if a <= KL_CLAMP || a >= 1.0 - KL_CLAMP {
                        0.0
                    } else {
                        g[0] * (-rho / a + (1.0 - rho) / (1.0 - a))
                    }
                })
                .collect();
            gm.accumulate(&acts, da);
        });
    }
    Ok(out)
}
