//! Max pooling with argmax gradient routing. Ties resolve to the lowest
//! flat index so backward passes are deterministic.

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Shared kernel: window bounds per output position, scan for max,
/// remember the winning flat index.
fn pool_windows(
    xd: &[f64],
    base: usize,
    bounds: &[(usize, usize)],
    out: &mut Vec<f64>,
    argmax: &mut Vec<usize>,
) {
    for &(lo, hi) in bounds {
        let mut best = f64::NEG_INFINITY;
        let mut best_i = base + lo;
        for i in lo..hi {
            let v = xd[base + i];
            if v > best {
                best = v;
                best_i = base + i;
            }
        }
        out.push(best);
        argmax.push(best_i);
    }
}

fn record_routing(tape: &Tape, x: &Tensor, out: &Tensor, argmax: Vec<usize>, name: &'static str) {
    let (x, out_h) = (x.clone(), out.clone());
    tape.record(name, move |gm| {
        let Some(g) = gm.out_grad(&out_h) else { return };
        let mut dx = vec![0.0; x.len()];
        for (gi, &src) in g.iter().zip(&argmax) {
            dx[src] += gi;
        }
        gm.accumulate(&x, dx);
    });
}

/// 1-D max pooling over `x [batch, ch, len]`.
pub fn maxpool1d(tape: &Tape, x: &Tensor, size: usize, stride: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Dimension {
            op: "maxpool1d",
            detail: format!("expected rank 3, got shape {:?}", x.shape()),
        });
    }
    let (batch, ch, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if size == 0 || stride == 0 || size > len {
        return Err(Error::Dimension {
            op: "maxpool1d",
            detail: format!("pool size {size} (stride {stride}) on extent {len}"),
        });
    }
    let len_out = (len - size) / stride + 1;
    let bounds: Vec<(usize, usize)> = (0..len_out).map(|i| (i * stride, i * stride + size)).collect();

    let mut out = Vec::with_capacity(batch * ch * len_out);
    let mut argmax = Vec::with_capacity(batch * ch * len_out);
    {
        let xd = x.data();
        for bc in 0..batch * ch {
            pool_windows(&xd, bc * len, &bounds, &mut out, &mut argmax);
        }
    }

    let track = tape.should_record(&[x]);
    let out = Tensor::from_parts(out, vec![batch, ch, len_out], track);
    if track {
        record_routing(tape, x, &out, argmax, "maxpool1d");
    }
    Ok(out)
}

/// 2-D max pooling over `x [batch, ch, h, w]` with a square window.
pub fn maxpool2d(tape: &Tape, x: &Tensor, size: usize, stride: usize) -> Result<Tensor> {
    maxpool2d_padded(tape, x, size, stride, 0)
}

/// 2-D max pooling with symmetric zero-free padding: padded positions are
/// simply excluded from the window scan.
pub fn maxpool2d_padded(tape: &Tape, x: &Tensor, size: usize, stride: usize, padding: usize) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::Dimension {
            op: "maxpool2d",
            detail: format!("expected rank 4, got shape {:?}", x.shape()),
        });
    }
    let (batch, ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if size == 0 || stride == 0 || size > h + 2 * padding || size > w + 2 * padding {
        return Err(Error::Dimension {
            op: "maxpool2d",
            detail: format!("pool size {size} on extents {h}x{w} (padding {padding})"),
        });
    }
    let h_out = (h + 2 * padding - size) / stride + 1;
    let w_out = (w + 2 * padding - size) / stride + 1;

    let mut out = Vec::with_capacity(batch * ch * h_out * w_out);
    let mut argmax = Vec::with_capacity(out.capacity());
    {
        let xd = x.data();
        for bc in 0..batch * ch {
            let base = bc * h * w;
            for ho in 0..h_out {
                for wo in 0..w_out {
                    let r0 = (ho * stride) as isize - padding as isize;
                    let c0 = (wo * stride) as isize - padding as isize;
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for r in r0..r0 + size as isize {
                        if r < 0 || r as usize >= h {
                            continue;
                        }
                        for c in c0..c0 + size as isize {
                            if c < 0 || c as usize >= w {
                                continue;
                            }
                            let idx = base + r as usize * w + c as usize;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_i = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }

    let track = tape.should_record(&[x]);
    let out = Tensor::from_parts(out, vec![batch, ch, h_out, w_out], track);
    if track {
        record_routing(tape, x, &out, argmax, "maxpool2d");
    }
    Ok(out)
}

/// Window bounds for adaptive pooling: window `i` of a length-`len` axis
/// reduced to `target` spans `[floor(i*len/target), ceil((i+1)*len/target))`.
fn adaptive_bounds(len: usize, target: usize) -> Vec<(usize, usize)> {
    (0..target)
        .map(|i| {
            let lo = i * len / target;
            let hi = ((i + 1) * len).div_ceil(target);
            (lo, hi)
        })
        .collect()
}

/// 1-D adaptive max pooling: output length equals `target` for any input.
pub fn adaptive_maxpool1d(tape: &Tape, x: &Tensor, target: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Dimension {
            op: "adaptive_maxpool1d",
            detail: format!("expected rank 3, got shape {:?}", x.shape()),
        });
    }
    let (batch, ch, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if target == 0 || target > len {
        return Err(Error::Dimension {
            op: "adaptive_maxpool1d",
            detail: format!("target {target} exceeds input extent {len}"),
        });
    }
    let bounds = adaptive_bounds(len, target);
    let mut out = Vec::with_capacity(batch * ch * target);
    let mut argmax = Vec::with_capacity(out.capacity());
    {
        let xd = x.data();
        for bc in 0..batch * ch {
            pool_windows(&xd, bc * len, &bounds, &mut out, &mut argmax);
        }
    }
    let track = tape.should_record(&[x]);
    let out = Tensor::from_parts(out, vec![batch, ch, target], track);
    if track {
        record_routing(tape, x, &out, argmax, "adaptive_maxpool1d");
    }
    Ok(out)
}

/// 2-D adaptive max pooling to a fixed `(target_h, target_w)` output.
pub fn adaptive_maxpool2d(tape: &Tape, x: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::Dimension {
            op: "adaptive_maxpool2d",
            detail: format!("expected rank 4, got shape {:?}", x.shape()),
        });
    }
    let (batch, ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if target_h == 0 || target_w == 0 || target_h > h || target_w > w {
        return Err(Error::Dimension {
            op: "adaptive_maxpool2d",
            detail: format!("target {target_h}x{target_w} exceeds input {h}x{w}"),
        });
    }
    let rb = adaptive_bounds(h, target_h);
    let cb = adaptive_bounds(w, target_w);
    let mut out = Vec::with_capacity(batch * ch * target_h * target_w);
    let mut argmax = Vec::with_capacity(out.capacity());
    {
        let xd = x.data();
        for bc in 0..batch * ch {
            let base = bc * h * w;
            for &(rlo, rhi) in &rb {
                for &(clo, chi) in &cb {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = base + rlo * w + clo;
                    for r in rlo..rhi {
                        for c in clo..chi {
                            let idx = base + r * w + c;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_i = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }
    let track = tape.should_record(&[x]);
    let out = Tensor::from_parts(out, vec![batch, ch, target_h, target_w], track);
    if track {
        record_routing(tape, x, &out, argmax, "adaptive_maxpool2d");
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
    fn pairwise_max() {
        let tape = Tape::disabled();
        let x = t(&[1.0, 3.0, 2.0, 4.0], &[1, 1, 4]);
        let y = maxpool1d(&tape, &x, 2, 2).unwrap();
        assert_eq!(y.value(), vec![3.0, 4.0]);
    }

    #[test]
    fn constant_input_ties_route_to_first_index() {
        let tape = Tape::new();
        let x = Tensor::tracked(vec![5.0; 6], &[1, 1, 6]).unwrap();
        let y = maxpool1d(&tape, &x, 2, 2).unwrap();
        assert_eq!(y.value(), vec![5.0; 3]);
        let loss = super::super::ops::sum_all(&tape, &y);
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn matches_window_scan_oracle() {
        let tape = Tape::disabled();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..2 * 2 * 8).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x = t(&data, &[2, 2, 8]);
        let y = maxpool1d(&tape, &x, 2, 2).unwrap();

        let mut expect = Vec::new();
        for bc in 0..4 {
            for w in 0..4 {
                let lo = bc * 8 + w * 2;
                expect.push(data[lo].max(data[lo + 1]));
            }
        }
        assert_eq!(y.value(), expect);
    }

    #[test]
    fn pool_larger_than_input_is_an_error() {
        let tape = Tape::disabled();
        let x = t(&[1.0, 2.0], &[1, 1, 2]);
        assert!(maxpool1d(&tape, &x, 3, 1).is_err());
    }

    #[test]
    fn adaptive_identity_when_target_equals_input() {
        let tape = Tape::disabled();
        let data: Vec<f64> = (0..8).map(f64::from).collect();
        let x = t(&data, &[1, 1, 8]);
        let y = adaptive_maxpool1d(&tape, &x, 8).unwrap();
        assert_eq!(y.value(), data);
    }

    #[test]
    fn adaptive_window_formula_by_hand() {
        let tape = Tape::disabled();
        let data: Vec<f64> = (1..=10).map(f64::from).collect();
        let x = t(&data, &[1, 1, 10]);
        let y = adaptive_maxpool1d(&tape, &x, 5).unwrap();
        assert_eq!(y.value(), vec![2.0, 4.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn adaptive_target_one_is_global_max() {
        let tape = Tape::disabled();
        let x = t(&[3.0, -1.0, 7.0, 2.0], &[1, 1, 4]);
        let y = adaptive_maxpool1d(&tape, &x, 1).unwrap();
        assert_eq!(y.value(), vec![7.0]);
    }

    #[test]
    fn adaptive_target_above_input_is_an_error() {
        let tape = Tape::disabled();
        let x = t(&[1.0, 2.0], &[1, 1, 2]);
        assert!(adaptive_maxpool1d(&tape, &x, 3).is_err());
        let x2 = t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        assert!(adaptive_maxpool2d(&tape, &x2, 3, 1).is_err());
    }

    #[test]
    fn maxpool2d_matches_scan() {
        let tape = Tape::disabled();
        let data: Vec<f64> = vec![1.0, 2.0, 5.0, 4.0, 3.0, 0.0, -1.0, 2.0, 8.0, 1.0, 0.0, 3.0, 2.0, 2.0, 2.0, 9.0];
        let x = t(&data, &[1, 1, 4, 4]);
        let y = maxpool2d(&tape, &x, 2, 2).unwrap();
        assert_eq!(y.value(), vec![3.0, 5.0, 8.0, 9.0]);
    }
}
