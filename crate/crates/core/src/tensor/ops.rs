//! Elementwise, affine, and shape-moving operations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor};
use crate::error::{Error, Result};

fn shape_err(op: &'static str, left: &Tensor, right: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

/// Affine map `out[i, j] = sum_k x[i, k] * w[k, j] + b[j]`.
pub fn dense(tape: &Tape, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[0] {
        return Err(shape_err("dense", x, w));
    }
    let (batch, inner) = (x.shape()[0], x.shape()[1]);
    let out_dim = w.shape()[1];
    if b.len() != out_dim {
        return Err(shape_err("dense", w, b));
    }

    let mut out = vec![0.0; batch * out_dim];
    {
        let xd = x.data();
        let wd = w.data();
        let bd = b.data();
        for i in 0..batch {
            let row = &mut out[i * out_dim..(i + 1) * out_dim];
            row.copy_from_slice(&bd);
            for k in 0..inner {
                let xv = xd[i * inner + k];
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wd[k * out_dim..(k + 1) * out_dim];
                for (o, wv) in row.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
    }

    let track = tape.should_record(&[x, w, b]);
    let out = Tensor::from_parts(out, vec![batch, out_dim], track);
    if track {
        let (x, w, b, out_h) = (x.clone(), w.clone(), b.clone(), out.clone());
        tape.record("dense", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            let xd = x.data();
            let wd = w.data();
            if x.requires_grad() {
                // dx = g . w^T
                let mut dx = vec![0.0; batch * inner];
                for i in 0..batch {
                    for k in 0..inner {
                        let mut acc = 0.0;
                        let wrow = &wd[k * out_dim..(k + 1) * out_dim];
                        let grow = &g[i * out_dim..(i + 1) * out_dim];
                        for (wv, gv) in wrow.iter().zip(grow) {
                            acc += wv * gv;
                        }
                        dx[i * inner + k] = acc;
                    }
                }
                gm.accumulate(&x, dx);
            }
            if w.requires_grad() {
                // dw = x^T . g
                let mut dw = vec![0.0; inner * out_dim];
                for i in 0..batch {
                    let grow = &g[i * out_dim..(i + 1) * out_dim];
                    for k in 0..inner {
                        let xv = xd[i * inner + k];
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &mut dw[k * out_dim..(k + 1) * out_dim];
                        for (dv, gv) in wrow.iter_mut().zip(grow) {
                            *dv += xv * gv;
                        }
                    }
                }
                gm.accumulate(&w, dw);
            }
            if b.requires_grad() {
                let mut db = vec![0.0; out_dim];
                for i in 0..batch {
                    for j in 0..out_dim {
                        db[j] += g[i * out_dim + j];
                    }
                }
                gm.accumulate(&b, db);
            }
        });
    }
    Ok(out)
}

/// Elementwise sum of two same-shape tensors.
pub fn add(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("add", a, b));
    }
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    let track = tape.should_record(&[a, b]);
    let out = Tensor::from_parts(data, a.shape().to_vec(), track);
    if track {
        let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
        tape.record("add", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            gm.accumulate(&a, g.clone());
            gm.accumulate(&b, g);
        });
    }
    Ok(out)
}

/// Elementwise product of two same-shape tensors.
pub fn mul(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("mul", a, b));
    }
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    let track = tape.should_record(&[a, b]);
    let out = Tensor::from_parts(data, a.shape().to_vec(), track);
    if track {
        let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
        tape.record("mul", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            if a.requires_grad() {
                let bd = b.data();
                gm.accumulate(&a, g.iter().zip(bd.iter()).map(|(gv, bv)| gv * bv).collect());
            }
            if b.requires_grad() {
                let ad = a.data();
                gm.accumulate(&b, g.iter().zip(ad.iter()).map(|(gv, av)| gv * av).collect());
            }
        });
    }
    Ok(out)
}

/// Multiply every element by a constant.
pub fn scale(tape: &Tape, x: &Tensor, c: f64) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|v| v * c).collect();
    let track = tape.should_record(&[x]);
    let out = Tensor::from_parts(data, x.shape().to_vec(), track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record("scale", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            gm.accumulate(&x, g.iter().map(|v| v * c).collect());
        });
    }
    out
}

/// Sum of all elements, as a one-element tensor.
pub fn sum_all(tape: &Tape, x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().sum();
    let track = tape.should_record(&[x]);
    let out = Tensor::from_parts(vec![s], vec![1], track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record("sum_all", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            gm.accumulate(&x, vec![g[0]; x.len()]);
        });
    }
    out
}

/// Column means of a `[batch, features]` tensor.
pub fn mean_rows(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::Dimension {
            op: "mean_rows",
            detail: format!("expected rank 2, got shape {:?}", x.shape()),
        });
    }
    let (batch, feat) = (x.shape()[0], x.shape()[1]);
    let mut data = vec![0.0; feat];
    {
        let xd = x.data();
        for i in 0..batch {
            for j in 0..feat {
                data[j] += xd[i * feat + j];
            }
        }
        for v in data.iter_mut() {
            *v /= batch as f64;
        }
    }
    let track = tape.should_record(&[x]);
    let out = Tensor::from_parts(data, vec![feat], track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record("mean_rows", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            let inv = 1.0 / batch as f64;
            let mut dx = vec![0.0; batch * feat];
            for i in 0..batch {
                for j in 0..feat {
                    dx[i * feat + j] = g[j] * inv;
                }
            }
            gm.accumulate(&x, dx);
        });
    }
    Ok(out)
}

/// Supported nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

fn sigmoid_f(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Elementwise nonlinearity with its analytic derivative on the tape.
pub fn activation(tape: &Tape, x: &Tensor, kind: Activation) -> Tensor {
    let data: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| match kind {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => sigmoid_f(v),
            Activation::Tanh => v.tanh(),
        })
        .collect();
    let track = tape.should_record(&[x]);
    let out = Tensor::from_parts(data, x.shape().to_vec(), track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record("activation", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            let yd = out_h.data();
            let xd = x.data();
            let dx: Vec<f64> = match kind {
                Activation::Relu => g
                    .iter()
                    .zip(xd.iter())
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect(),
                Activation::Sigmoid => g
                    .iter()
                    .zip(yd.iter())
                    .map(|(gv, &yv)| gv * yv * (1.0 - yv))
                    .collect(),
                Activation::Tanh => g
                    .iter()
                    .zip(yd.iter())
                    .map(|(gv, &yv)| gv * (1.0 - yv * yv))
                    .collect(),
            };
            drop(yd);
            gm.accumulate(&x, dx);
        });
    }
    out
}

pub fn relu(tape: &Tape, x: &Tensor) -> Tensor {
    activation(tape, x, Activation::Relu)
}

pub fn sigmoid(tape: &Tape, x: &Tensor) -> Tensor {
    activation(tape, x, Activation::Sigmoid)
}

pub fn tanh(tape: &Tape, x: &Tensor) -> Tensor {
    activation(tape, x, Activation::Tanh)
}

/// Train/eval switch shared by dropout and batch normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Inverted dropout: train mode zeroes each element with probability `p`
/// and scales survivors by `1/(1-p)`; eval mode is the identity.
pub fn dropout(tape: &Tape, x: &Tensor, p: f64, phase: Phase, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config {
            what: format!("dropout probability {p} outside [0, 1)"),
        });
    }
    if phase == Phase::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let inv = 1.0 / keep;
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { inv })
        .collect();
    let data: Vec<f64> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    let track = tape.should_record(&[x]);
    let out = Tensor::from_parts(data, x.shape().to_vec(), track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record("dropout", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            gm.accumulate(&x, g.iter().zip(&mask).map(|(gv, m)| gv * m).collect());
        });
    }
    Ok(out)
}

/// Copy into a new shape with the same element count.
pub fn reshape(tape: &Tape, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if n != x.len() {
        return Err(Error::Dimension {
            op: "reshape",
            detail: format!("cannot view {:?} as {:?}", x.shape(), shape),
        });
    }
    let track = tape.should_record(&[x]);
    let out = Tensor::from_parts(x.value(), shape.to_vec(), track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record("reshape", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            gm.accumulate(&x, g);
        });
    }
    Ok(out)
}

/// Collapse all trailing axes into one: `[b, ...] -> [b, rest]`.
pub fn flatten(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let b = x.shape()[0];
    reshape(tape, x, &[b, x.len() / b])
}

/// Concatenate two rank-2 tensors along the feature axis.
pub fn concat_cols(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0] {
        return Err(shape_err("concat_cols", a, b));
    }
    let batch = a.shape()[0];
    let (fa, fb) = (a.shape()[1], b.shape()[1]);
    let mut data = Vec::with_capacity(batch * (fa + fb));
    {
        let ad = a.data();
        let bd = b.data();
        for i in 0..batch {
            data.extend_from_slice(&ad[i * fa..(i + 1) * fa]);
            data.extend_from_slice(&bd[i * fb..(i + 1) * fb]);
        }
    }
    let track = tape.should_record(&[a, b]);
    let out = Tensor::from_parts(data, vec![batch, fa + fb], track);
    if track {
        let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
        tape.record("concat_cols", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            let w = fa + fb;
            if a.requires_grad() {
                let mut da = vec![0.0; batch * fa];
                for i in 0..batch {
                    da[i * fa..(i + 1) * fa].copy_from_slice(&g[i * w..i * w + fa]);
                }
                gm.accumulate(&a, da);
            }
            if b.requires_grad() {
                let mut db = vec![0.0; batch * fb];
                for i in 0..batch {
                    db[i * fb..(i + 1) * fb].copy_from_slice(&g[i * w + fa..(i + 1) * w]);
                }
                gm.accumulate(&b, db);
            }
        });
    }
    Ok(out)
}

/// Extract time step `t` of a `[batch, steps, features]` tensor.
pub fn select_step(tape: &Tape, x: &Tensor, t: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Dimension {
            op: "select_step",
            detail: format!("expected rank 3, got shape {:?}", x.shape()),
        });
    }
    let (batch, steps, feat) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if t >= steps {
        return Err(Error::Dimension {
            op: "select_step",
            detail: format!("step {t} out of {steps}"),
        });
    }
    let mut data = Vec::with_capacity(batch * feat);
    {
        let xd = x.data();
        for i in 0..batch {
            let base = (i * steps + t) * feat;
            data.extend_from_slice(&xd[base..base + feat]);
        }
    }
    let track = tape.should_record(&[x]);
    let out = Tensor::from_parts(data, vec![batch, feat], track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        tape.record("select_step", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            let mut dx = vec![0.0; batch * steps * feat];
            for i in 0..batch {
                let base = (i * steps + t) * feat;
                dx[base..base + feat].copy_from_slice(&g[i * feat..(i + 1) * feat]);
            }
            gm.accumulate(&x, dx);
        });
    }
    Ok(out)
}
