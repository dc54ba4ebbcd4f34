//! Cross-correlation style convolutions (no kernel flip) and the 2-D
//! transposed variant used by convolutional decoder stacks.

use super::{Tape, Tensor};
use crate::error::{Error, Result};

fn out_extent(op: &'static str, input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::Dimension {
            op,
            detail: format!("kernel {kernel} exceeds padded extent {padded}"),
        });
    }
    let out = (padded - kernel) / stride + 1;
    if out == 0 {
        return Err(Error::Dimension {
            op,
            detail: format!("non-positive output extent for input {input}, kernel {kernel}, stride {stride}, pad {pad}"),
        });
    }
    Ok(out)
}

/// 1-D convolution: `x [batch, ch_in, len]`, `w [ch_out, ch_in, k]`,
/// `b [ch_out]`.
pub fn conv1d(tape: &Tape, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    if x.rank() != 3 || w.rank() != 3 || x.shape()[1] != w.shape()[1] {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let (batch, ch_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ch_out, k) = (w.shape()[0], w.shape()[2]);
    if b.len() != ch_out {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            left: w.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let len_out = out_extent("conv1d", len, k, stride, padding)?;

    let mut out = vec![0.0; batch * ch_out * len_out];
    {
        let xd = x.data();
        let wd = w.data();
        let bd = b.data();
        for bi in 0..batch {
            for co in 0..ch_out {
                let obase = (bi * ch_out + co) * len_out;
                for lo in 0..len_out {
                    let mut acc = bd[co];
                    let start = (lo * stride) as isize - padding as isize;
                    for ci in 0..ch_in {
                        let xbase = (bi * ch_in + ci) * len;
                        let wbase = (co * ch_in + ci) * k;
                        for kk in 0..k {
                            let i = start + kk as isize;
                            if i >= 0 && (i as usize) < len {
                                acc += xd[xbase + i as usize] * wd[wbase + kk];
                            }
                        }
                    }
                    out[obase + lo] = acc;
                }
            }
        }
    }

    let track = tape.should_record(&[x, w, b]);
    let out = Tensor::from_parts(out, vec![batch, ch_out, len_out], track);
    if track {
        let (x, w, b, out_h) = (x.clone(), w.clone(), b.clone(), out.clone());
        tape.record("conv1d", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            let xd = x.data();
            let wd = w.data();
            let mut dx = if x.requires_grad() { vec![0.0; xd.len()] } else { Vec::new() };
            let mut dw = if w.requires_grad() { vec![0.0; wd.len()] } else { Vec::new() };
            let mut db = if b.requires_grad() { vec![0.0; ch_out] } else { Vec::new() };
            for bi in 0..batch {
                for co in 0..ch_out {
                    let obase = (bi * ch_out + co) * len_out;
                    for lo in 0..len_out {
                        let gv = g[obase + lo];
                        if gv == 0.0 {
                            continue;
                        }
                        if !db.is_empty() {
                            db[co] += gv;
                        }
                        let start = (lo * stride) as isize - padding as isize;
                        for ci in 0..ch_in {
                            let xbase = (bi * ch_in + ci) * len;
                            let wbase = (co * ch_in + ci) * k;
                            for kk in 0..k {
                                let i = start + kk as isize;
                                if i >= 0 && (i as usize) < len {
                                    if !dx.is_empty() {
                                        dx[xbase + i as usize] += gv * wd[wbase + kk];
                                    }
                                    if !dw.is_empty() {
                                        dw[wbase + kk] += gv * xd[xbase + i as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            drop(xd);
            drop(wd);
            if !dx.is_empty() {
                gm.accumulate(&x, dx);
            }
            if !dw.is_empty() {
                gm.accumulate(&w, dw);
            }
            if !db.is_empty() {
                gm.accumulate(&b, db);
            }
        });
    }
    Ok(out)
}

/// 2-D convolution: `x [batch, ch_in, h, w]`, `w [ch_out, ch_in, kh, kw]`,
/// `b [ch_out]`. Stride and padding apply to both spatial axes.
pub fn conv2d(tape: &Tape, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    if x.rank() != 4 || w.rank() != 4 || x.shape()[1] != w.shape()[1] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let (batch, ch_in, h, wd_in) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ch_out, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    if b.len() != ch_out {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: w.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let h_out = out_extent("conv2d", h, kh, stride, padding)?;
    let w_out = out_extent("conv2d", wd_in, kw, stride, padding)?;

    let mut out = vec![0.0; batch * ch_out * h_out * w_out];
    {
        let xd = x.data();
        let wdat = w.data();
        let bd = b.data();
        for bi in 0..batch {
            for co in 0..ch_out {
                let obase = (bi * ch_out + co) * h_out * w_out;
                for ho in 0..h_out {
                    let rstart = (ho * stride) as isize - padding as isize;
                    for wo in 0..w_out {
                        let cstart = (wo * stride) as isize - padding as isize;
                        let mut acc = bd[co];
                        for ci in 0..ch_in {
                            let xbase = ((bi * ch_in + ci) * h) * wd_in;
                            let wbase = ((co * ch_in + ci) * kh) * kw;
                            for r in 0..kh {
                                let ir = rstart + r as isize;
                                if ir < 0 || ir as usize >= h {
                                    continue;
                                }
                                let xrow = xbase + ir as usize * wd_in;
                                let wrow = wbase + r * kw;
                                for c in 0..kw {
                                    let ic = cstart + c as isize;
                                    if ic >= 0 && (ic as usize) < wd_in {
                                        acc += xd[xrow + ic as usize] * wdat[wrow + c];
                                    }
                                }
                            }
                        }
                        out[obase + ho * w_out + wo] = acc;
                    }
                }
            }
        }
    }

    let track = tape.should_record(&[x, w, b]);
    let out = Tensor::from_parts(out, vec![batch, ch_out, h_out, w_out], track);
    if track {
        let (x, w, b, out_h) = (x.clone(), w.clone(), b.clone(), out.clone());
        tape.record("conv2d", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            let xd = x.data();
            let wdat = w.data();
            let mut dx = if x.requires_grad() { vec![0.0; xd.len()] } else { Vec::new() };
            let mut dw = if w.requires_grad() { vec![0.0; wdat.len()] } else { Vec::new() };
            let mut db = if b.requires_grad() { vec![0.0; ch_out] } else { Vec::new() };
            for bi in 0..batch {
                for co in 0..ch_out {
                    let obase = (bi * ch_out + co) * h_out * w_out;
                    for ho in 0..h_out {
                        let rstart = (ho * stride) as isize - padding as isize;
                        for wo in 0..w_out {
                            let gv = g[obase + ho * w_out + wo];
                            if gv == 0.0 {
                                continue;
                            }
                            if !db.is_empty() {
                                db[co] += gv;
                            }
                            let cstart = (wo * stride) as isize - padding as isize;
                            for ci in 0..ch_in {
                                let xbase = ((bi * ch_in + ci) * h) * wd_in;
                                let wbase = ((co * ch_in + ci) * kh) * kw;
                                for r in 0..kh {
                                    let ir = rstart + r as isize;
                                    if ir < 0 || ir as usize >= h {
                                        continue;
                                    }
                                    let xrow = xbase + ir as usize * wd_in;
                                    let wrow = wbase + r * kw;
                                    for c in 0..kw {
                                        let ic = cstart + c as isize;
                                        if ic >= 0 && (ic as usize) < wd_in {
                                            if !dx.is_empty() {
                                                dx[xrow + ic as usize] += gv * wdat[wrow + c];
                                            }
                                            if !dw.is_empty() {
                                                dw[wrow + c] += gv * xd[xrow + ic as usize];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            drop(xd);
            drop(wdat);
            if !dx.is_empty() {
                gm.accumulate(&x, dx);
            }
            if !dw.is_empty() {
                gm.accumulate(&w, dw);
            }
            if !db.is_empty() {
                gm.accumulate(&b, db);
            }
        });
    }
    Ok(out)
}

/// Transposed 2-D convolution: `x [batch, ch_in, h, w]`,
/// `w [ch_in, ch_out, kh, kw]`, output extent
/// `(in - 1) * stride - 2 * padding + kernel + output_padding`.
pub fn conv_transpose2d(
    tape: &Tape,
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    if x.rank() != 4 || w.rank() != 4 || x.shape()[1] != w.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    if output_padding >= stride {
        return Err(Error::Dimension {
            op: "conv_transpose2d",
            detail: format!("output_padding {output_padding} must be < stride {stride}"),
        });
    }
    let (batch, ch_in, h, wd_in) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ch_out, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
    if b.len() != ch_out {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d",
            left: w.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let ext = |i: usize, k: usize| -> Result<usize> {
        let raw = (i - 1) * stride + k + output_padding;
        if raw <= 2 * padding {
            return Err(Error::Dimension {
                op: "conv_transpose2d",
                detail: format!("non-positive output extent for input {i}, kernel {k}"),
            });
        }
        Ok(raw - 2 * padding)
    };
    let h_out = ext(h, kh)?;
    let w_out = ext(wd_in, kw)?;

    let mut out = vec![0.0; batch * ch_out * h_out * w_out];
    {
        let xd = x.data();
        let wdat = w.data();
        let bd = b.data();
        for v in out.iter_mut() {
            *v = 0.0;
        }
        for bi in 0..batch {
            for co in 0..ch_out {
                let obase = (bi * ch_out + co) * h_out * w_out;
                for v in &mut out[obase..obase + h_out * w_out] {
                    *v = bd[co];
                }
            }
            for ci in 0..ch_in {
                let xbase = ((bi * ch_in + ci) * h) * wd_in;
                for hi in 0..h {
                    for wi in 0..wd_in {
                        let xv = xd[xbase + hi * wd_in + wi];
                        if xv == 0.0 {
                            continue;
                        }
                        for co in 0..ch_out {
                            let obase = (bi * ch_out + co) * h_out * w_out;
                            let wbase = ((ci * ch_out + co) * kh) * kw;
                            for r in 0..kh {
                                let or = (hi * stride + r) as isize - padding as isize;
                                if or < 0 || or as usize >= h_out {
                                    continue;
                                }
                                let orow = obase + or as usize * w_out;
                                let wrow = wbase + r * kw;
                                for c in 0..kw {
                                    let oc = (wi * stride + c) as isize - padding as isize;
                                    if oc >= 0 && (oc as usize) < w_out {
                                        out[orow + oc as usize] += xv * wdat[wrow + c];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let track = tape.should_record(&[x, w, b]);
    let out = Tensor::from_parts(out, vec![batch, ch_out, h_out, w_out], track);
    if track {
        let (x, w, b, out_h) = (x.clone(), w.clone(), b.clone(), out.clone());
        tape.record("conv_transpose2d", move |gm| {
            let Some(g) = gm.out_grad(&out_h) else { return };
            let xd = x.data();
            let wdat = w.data();
            let mut dx = if x.requires_grad() { vec![0.0; xd.len()] } else { Vec::new() };
            let mut dw = if w.requires_grad() { vec![0.0; wdat.len()] } else { Vec::new() };
            let mut db = if b.requires_grad() { vec![0.0; ch_out] } else { Vec::new() };
            if !db.is_empty() {
                for bi in 0..batch {
                    for co in 0..ch_out {
                        let obase = (bi * ch_out + co) * h_out * w_out;
                        db[co] += g[obase..obase + h_out * w_out].iter().sum::<f64>();
                    }
                }
            }
            for bi in 0..batch {
                for ci in 0..ch_in {
                    let xbase = ((bi * ch_in + ci) * h) * wd_in;
                    for hi in 0..h {
                        for wi in 0..wd_in {
                            let xv = xd[xbase + hi * wd_in + wi];
                            let mut acc = 0.0;
                            for co in 0..ch_out {
                                let obase = (bi * ch_out + co) * h_out * w_out;
                                let wbase = ((ci * ch_out + co) * kh) * kw;
                                for r in 0..kh {
                                    let or = (hi * stride + r) as isize - padding as isize;
                                    if or < 0 || or as usize >= h_out {
                                        continue;
                                    }
                                    let orow = obase + or as usize * w_out;
                                    let wrow = wbase + r * kw;
                                    for c in 0..kw {
                                        let oc = (wi * stride + c) as isize - padding as isize;
                                        if oc >= 0 && (oc as usize) < w_out {
                                            let gv = g[orow + oc as usize];
                                            if !dx.is_empty() {
                                                acc += gv * wdat[wrow + c];
                                            }
                                            if !dw.is_empty() {
                                                dw[wrow + c] += gv * xv;
                                            }
                                        }
                                    }
                                }
                            }
                            if !dx.is_empty() {
                                dx[xbase + hi * wd_in + wi] = acc;
                            }
                        }
                    }
                }
            }
            drop(xd);
            drop(wdat);
            if !dx.is_empty() {
                gm.accumulate(&x, dx);
            }
            if !dw.is_empty() {
                gm.accumulate(&w, dw);
            }
            if !db.is_empty() {
                gm.accumulate(&b, db);
            }
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::new(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let tape = Tape::disabled();
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 4]);
        let w = t(&[1.0], &[1, 1, 1]);
        let b = t(&[0.0], &[1]);
        let y = conv1d(&tape, &x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.value(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn sliding_window_sum() {
        let tape = Tape::disabled();
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 4]);
        let w = t(&[1.0, 1.0], &[1, 1, 2]);
        let b = t(&[0.0], &[1]);
        let y = conv1d(&tape, &x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.value(), vec![3.0, 5.0, 7.0]);
        assert_eq!(y.shape(), &[1, 1, 3]);
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        let tape = Tape::disabled();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = [0.3];
        let y = conv2d(
            &tape,
            &t(&x, &[1, 1, 5, 5]),
            &t(&w, &[1, 1, 3, 3]),
            &t(&b, &[1]),
            1,
            0,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);

        // six nested loops, no shared code with the op
        let mut expect = vec![0.0; 9];
        for ho in 0..3usize {
            for wo in 0..3usize {
                let mut acc = b[0];
                for ci in 0..1 {
                    let _ = ci;
                    for r in 0..3 {
                        for c in 0..3 {
                            acc += x[(ho + r) * 5 + (wo + c)] * w[r * 3 + c];
                        }
                    }
                }
                expect[ho * 3 + wo] = acc;
            }
        }
        for (a, e) in y.value().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_output_extent_is_an_error() {
        let tape = Tape::disabled();
        let x = t(&[1.0, 2.0], &[1, 1, 2]);
        let w = t(&[1.0, 1.0, 1.0], &[1, 1, 3]);
        let b = t(&[0.0], &[1]);
        assert!(conv1d(&tape, &x, &w, &b, 1, 0).is_err());
    }

    #[test]
    fn conv_transpose_output_extent() {
        let tape = Tape::disabled();
        let x = t(&(0..16).map(f64::from).collect::<Vec<_>>(), &[1, 1, 4, 4]);
        let w = t(&[1.0; 9], &[1, 1, 3, 3]);
        let b = t(&[0.0], &[1]);
        let y = conv_transpose2d(&tape, &x, &w, &b, 2, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 8, 8]);
    }

    #[test]
    fn conv_transpose_inverts_stride_one_identity() {
        // A 1x1 unit kernel with stride 1 reproduces the input.
        let tape = Tape::disabled();
        let x = t(&[1.0, -2.0, 3.0, 0.5], &[1, 1, 2, 2]);
        let w = t(&[1.0], &[1, 1, 1, 1]);
        let b = t(&[0.0], &[1]);
        let y = conv_transpose2d(&tape, &x, &w, &b, 1, 0, 0).unwrap();
        assert_eq!(y.value(), x.value());
    }
}
