//! Input constructors: non-overlapping windowing, half-spectrum FFT,
//! STFT and wavelet images, slicing-image reshape, and bilinear resize.

use std::f64::consts::PI;

use crate::datasets::SignalRecord;
use crate::error::{Error, Result};

/// Default window length in samples.
pub const WINDOW_LEN: usize = 1024;

/// A fixed-length slice of one record. `source_offset` is the sample index
/// of the window start in its parent record; windows from the same record
/// never overlap.
#[derive(Clone, Debug)]
pub struct Window1D {
    pub values: Vec<f64>,
    pub source_offset: usize,
    pub label: usize,
    /// Index of the parent record in the loaded record list.
    pub record_index: usize,
}

/// A dense grayscale image sample.
#[derive(Clone, Debug)]
pub struct ImageSample {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub label: usize,
}

impl ImageSample {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, label: usize) -> ImageSample {
        debug_assert_eq!(height * width, pixels.len());
        ImageSample {
            height,
            width,
            pixels,
            label,
        }
    }

    pub fn constant(height: usize, width: usize, v: f64, label: usize) -> ImageSample {
        ImageSample::new(height, width, vec![v; height * width], label)
    }
}

/// Cut a record into `floor(len / window)` non-overlapping windows at
/// offsets `0, window, 2*window, ...`; the trailing remainder is dropped.
pub fn window_slice(record: &SignalRecord, record_index: usize, length: usize) -> Result<Vec<Window1D>> {
    if record.samples.len() < length {
        return Err(Error::EmptyDataset {
            record: record.file_path.clone(),
            detail: format!(
                "{} samples is shorter than one {length}-sample window",
                record.samples.len()
            ),
        });
    }
    let count = record.samples.len() / length;
    Ok((0..count)
        .map(|i| Window1D {
            values: record.samples[i * length..(i + 1) * length].to_vec(),
            source_offset: i * length,
            label: record.class_id,
            record_index,
        })
        .collect())
}

/// In-place radix-2 decimation-in-time FFT. Twiddles are computed per
/// stage from exact angles rather than by recurrence.
fn fft_inplace(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let ang = -2.0 * PI * k as f64 / len as f64;
                let (wr, wi) = (ang.cos(), ang.sin());
                let (ur, ui) = (re[start + k], im[start + k]);
                let (ar, ai) = (re[start + k + half], im[start + k + half]);
                let (vr, vi) = (ar * wr - ai * wi, ar * wi + ai * wr);
                re[start + k] = ur + vr;
                im[start + k] = ui + vi;
                re[start + k + half] = ur - vr;
                im[start + k + half] = ui - vi;
            }
        }
        len <<= 1;
    }
}

/// Amplitude spectrum `|DFT(x)|` truncated to the first `len/2` bins.
pub fn fft_halfspectrum(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 || n % 2 != 0 || !n.is_power_of_two() {
        return Err(Error::Config {
            what: format!("half-spectrum needs an even power-of-two length, got {n}"),
        });
    }
    let mut re = values.to_vec();
    let mut im = vec![0.0; n];
    fft_inplace(&mut re, &mut im);
    Ok((0..n / 2).map(|k| (re[k] * re[k] + im[k] * im[k]).sqrt()).collect())
}

/// STFT frame count and one-sided bin count for the fixed 64/32 analysis.
pub const STFT_SIZE: usize = 33;
const STFT_WIN: usize = 64;
const STFT_HOP: usize = 32;

/// Reflect padding without repeating the edge sample.
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    debug_assert!(pad < n);
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(x[i]);
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        out.push(x[n - 2 - i]);
    }
    out
}

/// Magnitude STFT of a 1024-sample window: periodic Hanning window of 64,
/// hop 32, centered frames over reflect padding. Rows are the 33 one-sided
/// frequency bins, columns the 33 frames.
pub fn stft_image(window: &Window1D) -> Result<ImageSample> {
    let x = &window.values;
    if x.len() != WINDOW_LEN {
        return Err(Error::Config {
            what: format!("stft expects {WINDOW_LEN}-sample windows, got {}", x.len()),
        });
    }
    let hann: Vec<f64> = (0..STFT_WIN)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / STFT_WIN as f64).cos()))
        .collect();
    let padded = reflect_pad(x, STFT_WIN / 2);
    let frames = x.len() / STFT_HOP + 1;
    debug_assert_eq!(frames, STFT_SIZE);

    let bins = STFT_WIN / 2 + 1;
    let mut pixels = vec![0.0; bins * frames];
    let mut re = vec![0.0; STFT_WIN];
    let mut im = vec![0.0; STFT_WIN];
    for f in 0..frames {
        let start = f * STFT_HOP;
        for i in 0..STFT_WIN {
            re[i] = padded[start + i] * hann[i];
            im[i] = 0.0;
        }
        fft_inplace(&mut re, &mut im);
        for k in 0..bins {
            pixels[k * frames + f] = (re[k] * re[k] + im[k] * im[k]).sqrt();
        }
    }
    Ok(ImageSample::new(bins, frames, pixels, window.label))
}

/// Sample length consumed by the wavelet path.
pub const CWT_LEN: usize = 100;

/// Magnitude continuous wavelet transform of a 100-sample vector over
/// integer scales 1..=100 with a Morlet mother wavelet (center frequency
/// 6), evaluated by direct convolution. Rows are scales, columns time.
pub fn cwt_image(values: &[f64], label: usize) -> Result<ImageSample> {
    if values.len() != CWT_LEN {
        return Err(Error::Config {
            what: format!("cwt expects {CWT_LEN}-sample input, got {}", values.len()),
        });
    }
    const OMEGA0: f64 = 6.0;
    let norm0 = PI.powf(-0.25);
    let n = values.len() as isize;
    let mut pixels = vec![0.0; CWT_LEN * CWT_LEN];
    for s in 1..=CWT_LEN {
        let a = s as f64;
        let reach = (4.0 * a).ceil() as isize;
        let scale_norm = norm0 / a.sqrt();
        for b in 0..CWT_LEN as isize {
            let (mut acc_re, mut acc_im) = (0.0, 0.0);
            let lo = (b - reach).max(0);
            let hi = (b + reach).min(n - 1);
            for t in lo..=hi {
                let arg = (t - b) as f64 / a;
                let env = (-0.5 * arg * arg).exp();
                // conjugate Morlet: e^{-i omega0 arg} * gaussian
                acc_re += values[t as usize] * env * (OMEGA0 * arg).cos();
                acc_im -= values[t as usize] * env * (OMEGA0 * arg).sin();
            }
            pixels[(s - 1) * CWT_LEN + b as usize] =
                scale_norm * (acc_re * acc_re + acc_im * acc_im).sqrt();
        }
    }
    Ok(ImageSample::new(CWT_LEN, CWT_LEN, pixels, label))
}

/// Row-major reshape of a 1024-sample window into a 32x32 image.
pub fn slice_image(window: &Window1D) -> Result<ImageSample> {
    if window.values.len() != WINDOW_LEN {
        return Err(Error::Config {
            what: format!(
                "slice image expects {WINDOW_LEN}-sample windows, got {}",
                window.values.len()
            ),
        });
    }
    Ok(ImageSample::new(32, 32, window.values.clone(), window.label))
}

/// Bilinear resize with corner alignment.
pub fn resize_image(img: &ImageSample, target_h: usize, target_w: usize) -> Result<ImageSample> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::Config {
            what: "resize targets must be positive".into(),
        });
    }
    if target_h == img.height && target_w == img.width {
        return Ok(img.clone());
    }
    let src_pos = |t: usize, target: usize, source: usize| -> f64 {
        if target == 1 {
            (source - 1) as f64 / 2.0
        } else {
            t as f64 * (source - 1) as f64 / (target - 1) as f64
        }
    };
    let mut pixels = Vec::with_capacity(target_h * target_w);
    for r in 0..target_h {
        let fr = src_pos(r, target_h, img.height);
        let r0 = fr.floor() as usize;
        let r1 = (r0 + 1).min(img.height - 1);
        let dr = fr - r0 as f64;
        for c in 0..target_w {
            let fc = src_pos(c, target_w, img.width);
            let c0 = fc.floor() as usize;
            let c1 = (c0 + 1).min(img.width - 1);
            let dc = fc - c0 as f64;
            let top = img.pixels[r0 * img.width + c0] * (1.0 - dc)
                + img.pixels[r0 * img.width + c1] * dc;
            let bot = img.pixels[r1 * img.width + c0] * (1.0 - dc)
                + img.pixels[r1 * img.width + c1] * dc;
            pixels.push(top * (1.0 - dr) + bot * dr);
        }
    }
    Ok(ImageSample::new(target_h, target_w, pixels, img.label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::SignalRecord;

    fn record(samples: Vec<f64>) -> SignalRecord {
        SignalRecord {
            samples,
            sampling_rate_hz: 12_000.0,
            dataset_id: "test".into(),
            file_path: "test.mat".into(),
            channel_name: "ch0".into(),
            condition: Default::default(),
            class_id: 3,
        }
    }

    /// Naive O(N^2) DFT magnitude, independent of the FFT path.
    fn naive_halfspectrum(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn window_counts_follow_floor_rule() {
        let r = record(vec![0.0; 2048]);
        let w = window_slice(&r, 0, 1024).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].source_offset, 0);
        assert_eq!(w[1].source_offset, 1024);
        assert_eq!(w[0].label, 3);

        let r = record(vec![0.0; 2047]);
        assert_eq!(window_slice(&r, 0, 1024).unwrap().len(), 1);

        let r = record(vec![0.0; 120_000]);
        assert_eq!(window_slice(&r, 0, 1024).unwrap().len(), 117);
    }

    #[test]
    fn short_record_is_an_empty_dataset_error() {
        let r = record(vec![0.0; 100]);
        let err = window_slice(&r, 0, 1024).unwrap_err();
        assert!(err.to_string().contains("test.mat"));
    }

    #[test]
    fn windows_are_disjoint_and_cover_prefix() {
        let r = record((0..5000).map(f64::from).collect());
        let ws = window_slice(&r, 0, 1024).unwrap();
        assert_eq!(ws.len(), 4);
        for (i, w) in ws.iter().enumerate() {
            assert_eq!(w.source_offset, i * 1024);
            assert_eq!(w.values[0], (i * 1024) as f64);
        }
        for a in &ws {
            for b in &ws {
                if a.source_offset != b.source_offset {
                    assert!(a.source_offset.abs_diff(b.source_offset) >= 1024);
                }
            }
        }
    }

    #[test]
    fn zero_window_has_zero_spectrum() {
        let hs = fft_halfspectrum(&vec![0.0; 1024]).unwrap();
        assert_eq!(hs.len(), 512);
        assert!(hs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_tone_hits_a_single_bin() {
        let x: Vec<f64> = (0..1024)
            .map(|n| (2.0 * PI * 8.0 * n as f64 / 1024.0).cos())
            .collect();
        let hs = fft_halfspectrum(&x).unwrap();
        assert!((hs[8] - 512.0).abs() < 1e-9, "bin 8 = {}", hs[8]);
        for (k, &v) in hs.iter().enumerate() {
            if k != 8 {
                assert!(v < 1e-9, "bin {k} = {v}");
            }
        }
    }

    #[test]
    fn fft_matches_naive_dft_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for n in [64usize, 256, 1024] {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = fft_halfspectrum(&x).unwrap();
            let slow = naive_halfspectrum(&x);
            let max_err = fast
                .iter()
                .zip(&slow)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_err < 1e-8, "n={n}, err={max_err}");
        }
    }

    #[test]
    fn odd_or_non_power_of_two_length_is_rejected() {
        assert!(fft_halfspectrum(&vec![0.0; 513]).is_err());
        assert!(fft_halfspectrum(&vec![0.0; 640]).is_err());
    }

    #[test]
    fn stft_shape_is_always_33x33() {
        let w = Window1D {
            values: vec![0.0; 1024],
            source_offset: 0,
            label: 0,
            record_index: 0,
        };
        let img = stft_image(&w).unwrap();
        assert_eq!((img.height, img.width), (33, 33));
        assert!(img.pixels.iter().all(|&v| v == 0.0));

        let w2 = Window1D {
            values: (0..1024).map(|n| (n as f64 * 0.013).sin()).collect(),
            ..w
        };
        let img2 = stft_image(&w2).unwrap();
        assert_eq!((img2.height, img2.width), (33, 33));
    }

    #[test]
    fn stft_rejects_other_lengths() {
        let w = Window1D {
            values: vec![0.0; 512],
            source_offset: 0,
            label: 0,
            record_index: 0,
        };
        assert!(stft_image(&w).is_err());
    }

    #[test]
    fn stationary_tone_dominates_one_stft_row() {
        // bin 8 of the 64-point grid: frequency 8/64 cycles per sample
        let w = Window1D {
            values: (0..1024)
                .map(|n| (2.0 * PI * 8.0 * n as f64 / 64.0).cos())
                .collect(),
            source_offset: 0,
            label: 0,
            record_index: 0,
        };
        let img = stft_image(&w).unwrap();
        for f in 0..33 {
            let col: Vec<f64> = (0..33).map(|r| img.pixels[r * 33 + f]).collect();
            let argmax = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if f == 0 || f == 32 {
                // edge frames see the phase-flipped reflection fold; the
                // peak may leak into an adjacent bin
                assert!(argmax.abs_diff(8) <= 1, "edge frame {f}: argmax {argmax}");
            } else {
                assert_eq!(argmax, 8, "frame {f}");
            }
        }
    }

    #[test]
    fn cwt_shape_and_zero_input() {
        let img = cwt_image(&vec![0.0; 100], 1).unwrap();
        assert_eq!((img.height, img.width), (100, 100));
        assert!(img.pixels.iter().all(|&v| v == 0.0));
        assert!(cwt_image(&vec![0.0; 99], 0).is_err());
    }

    #[test]
    fn impulse_response_peaks_at_impulse_column_for_small_scales() {
        let mut x = vec![0.0; 100];
        x[50] = 1.0;
        let img = cwt_image(&x, 0).unwrap();
        for s in 0..5 {
            let row = &img.pixels[s * 100..(s + 1) * 100];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, 50, "scale {}", s + 1);
        }
    }

    #[test]
    fn slice_image_index_arithmetic() {
        let w = Window1D {
            values: (0..1024).map(f64::from).collect(),
            source_offset: 0,
            label: 0,
            record_index: 0,
        };
        let img = slice_image(&w).unwrap();
        assert_eq!(img.pixels[31], 31.0); // pixel (0, 31)
        assert_eq!(img.pixels[32], 32.0); // pixel (1, 0)

        // flatten inverts the reshape and energy is preserved
        assert_eq!(img.pixels, w.values);
        let e_in: f64 = w.values.iter().map(|v| v * v).sum();
        let e_out: f64 = img.pixels.iter().map(|v| v * v).sum();
        assert_eq!(e_in, e_out);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ImageSample::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], 0);
        let same = resize_image(&img, 2, 2).unwrap();
        assert_eq!(same.pixels, img.pixels);

        let flat = ImageSample::constant(3, 5, 2.5, 0);
        let up = resize_image(&flat, 30, 50).unwrap();
        assert!(up.pixels.iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn resize_center_pixel_by_hand() {
        let img = ImageSample::new(2, 2, vec![0.0, 1.0, 2.0, 3.0], 0);
        let up = resize_image(&img, 3, 3).unwrap();
        assert!((up.pixels[4] - 1.5).abs() < 1e-12);
        // corners align
        assert_eq!(up.pixels[0], 0.0);
        assert_eq!(up.pixels[2], 1.0);
        assert_eq!(up.pixels[6], 2.0);
        assert_eq!(up.pixels[8], 3.0);
    }
}
