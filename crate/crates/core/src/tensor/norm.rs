//! Batch normalization over the batch axis (rank 2) or batch and spatial
//! axes (ranks 3 and 4), with running statistics for evaluation.

use super::ops::Phase;
use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Exponential-moving-average statistics tracked across training batches.
#[derive(Clone, Debug)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// Fresh stats for `channels` features: mean 0, variance 1.
    pub fn new(channels: usize) -> RunningStats {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// View any supported rank as `[batch, channels, inner]`.
fn bci(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [b, c] => Ok((*b, *c, 1)),
        [b, c, l] => Ok((*b, *c, *l)),
        [b, c, h, w] => Ok((*b, *c, h * w)),
        other => Err(Error::Dimension {
            op: "batchnorm",
            detail: format!("unsupported rank for shape {other:?}"),
        }),
    }
}

/// Normalize `x` per channel. Train mode uses batch statistics and folds
/// them into `stats` with the given momentum; eval mode reads `stats`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm(
    tape: &Tape,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    phase: Phase,
    eps: f64,
    momentum: f64,
) -> Result<Tensor> {
    let (batch, channels, inner) = bci(x)?;
    if gamma.len() != channels || beta.len() != channels || stats.mean.len() != channels {
        return Err(Error::ShapeMismatch {
            op: "batchnorm",
            left: x.shape().to_vec(),
            right: gamma.shape().to_vec(),
        });
    }
    if phase == Phase::Train && batch < 2 {
        return Err(Error::Config {
            what: "batchnorm requires batch >= 2 in train mode".into(),
        });
    }

    let n = (batch * inner) as f64;
    let (mean, var) = match phase {
        Phase::Train => {
            let xd = x.data();
            let mut mean = vec![0.0; channels];
            let mut var = vec![0.0; channels];
            for b in 0..batch {
                for c in 0..channels {
                    let base = (b * channels + c) * inner;
                    for i in 0..inner {
                        mean[c] += xd[base + i];
                    }
                }
            }
            for m in mean.iter_mut() {
                *m /= n;
            }
            for b in 0..batch {
                for c in 0..channels {
                    let base = (b * channels + c) * inner;
                    for i in 0..inner {
                        let d = xd[base + i] - mean[c];
                        var[c] += d * d;
                    }
                }
            }
            for v in var.iter_mut() {
                *v /= n;
            }
            // Running variance uses the unbiased estimate.
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            for c in 0..channels {
                stats.mean[c] = (1.0 - momentum) * stats.mean[c] + momentum * mean[c];
                stats.var[c] = (1.0 - momentum) * stats.var[c] + momentum * var[c] * unbias;
            }
            (mean, var)
        }
        Phase::Eval => (stats.mean.clone(), stats.var.clone()),
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = vec![0.0; x.len()];
    {
        let xd = x.data();
        let gd = gamma.data();
        let bd = beta.data();
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * inner;
                for i in 0..inner {
                    let xh = (xd[base + i] - mean[c]) * inv_std[c];
                    out[base + i] = gd[c] * xh + bd[c];
                }
            }
        }
    }

    let track = tape.should_record(&[x, gamma, beta]);
    let out = Tensor::from_parts(out, x.shape().to_vec(), track);
    if track {
        let (x, gamma, out_h) = (x.clone(), gamma.clone(), out.clone());
        let beta = beta.clone();
        tape.record("batchnorm", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            let xd = x.data();
            let gd = gamma.data();
            let mut dgamma = vec![0.0; channels];
            let mut dbeta = vec![0.0; channels];
            for b in 0..batch {
                for c in 0..channels {
                    let base = (b * channels + c) * inner;
                    for i in 0..inner {
                        let xh = (xd[base + i] - mean[c]) * inv_std[c];
                        dgamma[c] += g[base + i] * xh;
                        dbeta[c] += g[base + i];
                    }
                }
            }
            if x.requires_grad() {
                let mut dx = vec![0.0; xd.len()];
                match phase {
                    Phase::Train => {
                        // Batch statistics depend on x, so fold their
                        // contributions back in per channel.
                        for c in 0..channels {
                            let mut sum_dxhat = 0.0;
                            let mut sum_dxhat_xc = 0.0;
                            for b in 0..batch {
                                let base = (b * channels + c) * inner;
                                for i in 0..inner {
                                    let dxhat = g[base + i] * gd[c];
                                    sum_dxhat += dxhat;
                                    sum_dxhat_xc += dxhat * (xd[base + i] - mean[c]);
                                }
                            }
                            let dvar = sum_dxhat_xc * -0.5 * inv_std[c].powi(3);
                            let dmean = -sum_dxhat * inv_std[c];
                            for b in 0..batch {
                                let base = (b * channels + c) * inner;
                                for i in 0..inner {
                                    let xc = xd[base + i] - mean[c];
                                    let dxhat = g[base + i] * gd[c];
                                    dx[base + i] =
                                        dxhat * inv_std[c] + dvar * 2.0 * xc / n + dmean / n;
                                }
                            }
                        }
                    }
                    Phase::Eval => {
                        for b in 0..batch {
                            for c in 0..channels {
                                let base = (b * channels + c) * inner;
                                for i in 0..inner {
                                    dx[base + i] = g[base + i] * gd[c] * inv_std[c];
                                }
                            }
                        }
                    }
                }
                gm.accumulate(&x, dx);
            }
            drop(xd);
            drop(gd);
            gm.accumulate(&gamma, dgamma);
            gm.accumulate(&beta, dbeta);
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_output_has_zero_mean_unit_variance() {
        let tape = Tape::disabled();
        let x = Tensor::new(vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0], &[4, 2]).unwrap();
        let gamma = Tensor::new(vec![1.0, 1.0], &[2]).unwrap();
        let beta = Tensor::new(vec![0.0, 0.0], &[2]).unwrap();
        let mut stats = RunningStats::new(2);
        let y = batchnorm(&tape, &x, &gamma, &beta, &mut stats, Phase::Train, 1e-5, 0.1).unwrap();
        let yd = y.value();
        for c in 0..2 {
            let col: Vec<f64> = (0..4).map(|b| yd[b * 2 + c]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 4.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-8, "mean {mean}");
            // normalized with eps, so variance is just shy of 1
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn zero_gamma_leaves_only_beta() {
        let tape = Tape::disabled();
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let gamma = Tensor::new(vec![0.0, 0.0], &[2]).unwrap();
        let beta = Tensor::new(vec![5.0, -1.0], &[2]).unwrap();
        let mut stats = RunningStats::new(2);
        let y = batchnorm(&tape, &x, &gamma, &beta, &mut stats, Phase::Train, 1e-5, 0.1).unwrap();
        assert_eq!(y.value(), vec![5.0, -1.0, 5.0, -1.0]);
    }

    #[test]
    fn matches_direct_formula() {
        let tape = Tape::disabled();
        let data = vec![0.5, -1.5, 2.0, 0.25, -0.75, 1.0];
        let x = Tensor::new(data.clone(), &[3, 2]).unwrap();
        let gamma = Tensor::new(vec![1.5, 0.5], &[2]).unwrap();
        let beta = Tensor::new(vec![0.1, -0.2], &[2]).unwrap();
        let mut stats = RunningStats::new(2);
        let eps = 1e-5;
        let y = batchnorm(&tape, &x, &gamma, &beta, &mut stats, Phase::Train, eps, 0.1).unwrap();

        for c in 0..2 {
            let col: Vec<f64> = (0..3).map(|b| data[b * 2 + c]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 3.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
            for b in 0..3 {
                let expect = [1.5, 0.5][c] * (data[b * 2 + c] - mean) / (var + eps).sqrt()
                    + [0.1, -0.2][c];
                assert!((y.value()[b * 2 + c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_of_one_in_train_mode_is_an_error() {
        let tape = Tape::disabled();
        let x = Tensor::new(vec![1.0, 2.0], &[1, 2]).unwrap();
        let gamma = Tensor::new(vec![1.0, 1.0], &[2]).unwrap();
        let beta = Tensor::new(vec![0.0, 0.0], &[2]).unwrap();
        let mut stats = RunningStats::new(2);
        let err = batchnorm(&tape, &x, &gamma, &beta, &mut stats, Phase::Train, 1e-5, 0.1);
        assert!(matches!(err, Err(Error::Config { .. })));
        // same input is fine in eval mode
        assert!(batchnorm(&tape, &x, &gamma, &beta, &mut stats, Phase::Eval, 1e-5, 0.1).is_ok());
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let tape = Tape::disabled();
        let gamma = Tensor::new(vec![1.0], &[1]).unwrap();
        let beta = Tensor::new(vec![0.0], &[1]).unwrap();
        let mut stats = RunningStats::new(1);
        stats.mean[0] = 2.0;
        stats.var[0] = 4.0;
        let x = Tensor::new(vec![4.0], &[1, 1]).unwrap();
        let y = batchnorm(&tape, &x, &gamma, &beta, &mut stats, Phase::Eval, 0.0, 0.1).unwrap();
        assert!((y.item() - 1.0).abs() < 1e-12);
    }
}
