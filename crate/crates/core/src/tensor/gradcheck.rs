//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Relative error with an absolute floor of one, so vanishing gradients
/// compare on an absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Outcome of one finite-difference sweep.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Compare the analytic gradient of `forward` against central finite
/// differences at step `h`, over up to `max_coords` coordinates of each
/// tensor in `tensors` (sampled without replacement when a tensor is
/// larger than that).
///
/// `forward` must rebuild the same computation every call; stochastic
/// layers must be driven by a freshly reseeded generator inside it.
pub fn check_gradients(
    tensors: &[Tensor],
    forward: &mut dyn FnMut(&Tape) -> Result<Tensor>,
    h: f64,
    max_coords: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport> {
    for t in tensors {
        if !t.requires_grad() {
            return Err(Error::Usage {
                what: "check_gradients requires tracked tensors".into(),
            });
        }
        t.clear_grad();
    }

    let tape = Tape::new();
    let loss = forward(&tape)?;
    if loss.len() != 1 {
        return Err(Error::Usage {
            what: "check_gradients requires a scalar loss".into(),
        });
    }
    tape.backward(&loss)?;

    let mut max_err = 0.0f64;
    let mut checked = 0;
    for t in tensors {
        let analytic = t.grad().unwrap_or_else(|| vec![0.0; t.len()]);
        let coords: Vec<usize> = if t.len() <= max_coords {
            (0..t.len()).collect()
        } else {
            sample(rng, t.len(), max_coords).into_vec()
        };
        for &i in &coords {
            let mut data = t.value();
            let saved = data[i];

            data[i] = saved + h;
            t.set_data(data.clone());
            let up = forward(&Tape::disabled())?.item();

            data[i] = saved - h;
            t.set_data(data.clone());
            let down = forward(&Tape::disabled())?.item();

            data[i] = saved;
            t.set_data(data);

            let numeric = (up - down) / (2.0 * h);
            let err = rel_err(analytic[i], numeric);
            if err > max_err {
                max_err = err;
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_err,
        coords_checked: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;
    use rand::SeedableRng;

    #[test]
    fn detects_a_correct_gradient() {
        let x = Tensor::tracked(vec![0.3, -0.7, 1.2], &[3]).unwrap();
        let xc = x.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = check_gradients(
            &[x],
            &mut |tape| {
                let sq = ops::mul(tape, &xc, &xc)?;
                Ok(ops::sum_all(tape, &sq))
            },
            1e-4,
            16,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "{report:?}");
    }

    #[test]
    fn tanh_gradient_matches_finite_differences() {
        let x = Tensor::tracked(vec![0.1, -1.3, 2.7, 0.0, -0.4], &[5]).unwrap();
        let xc = x.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = check_gradients(
            &[x],
            &mut |tape| {
                let y = ops::tanh(tape, &xc);
                // weighted sum so every coordinate matters differently
                let w = Tensor::new(vec![1.0, -0.5, 2.0, 0.3, 1.7], &[5]).unwrap();
                let wy = ops::mul(tape, &y, &w)?;
                Ok(ops::sum_all(tape, &wy))
            },
            1e-4,
            16,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }
}
