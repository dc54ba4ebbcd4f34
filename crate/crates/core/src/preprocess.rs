//! Per-sample normalization, the augmentation operators, and the
//! transform -> augment -> normalize pipeline applied to every window.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{self, ImageSample, Window1D};

/// The five input constructions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Time,
    Fft,
    Stft,
    Cwt,
    Slice,
}

impl InputKind {
    pub fn parse(s: &str) -> Result<InputKind> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "time" => InputKind::Time,
            "fft" => InputKind::Fft,
            "stft" => InputKind::Stft,
            "cwt" => InputKind::Cwt,
            "slice" => InputKind::Slice,
            other => {
                return Err(Error::Config {
                    what: format!("unknown input type `{other}`"),
                })
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            InputKind::Time => "time",
            InputKind::Fft => "fft",
            InputKind::Stft => "stft",
            InputKind::Cwt => "cwt",
            InputKind::Slice => "slice",
        }
    }

    /// Whether this input is an image (rank 2) rather than a vector.
    pub fn is_image(&self) -> bool {
        matches!(self, InputKind::Stft | InputKind::Cwt | InputKind::Slice)
    }
}

/// Per-sample normalization methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    MaxMin,
    Pm1,
    ZScore,
    None,
}

impl Normalization {
    pub fn parse(s: &str) -> Result<Normalization> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "maxmin" | "max-min" | "0-1" => Normalization::MaxMin,
            "pm1" | "-1-1" | "minus-one-one" => Normalization::Pm1,
            "zscore" | "z-score" => Normalization::ZScore,
            "none" => Normalization::None,
            other => {
                return Err(Error::Config {
                    what: format!("unknown normalization `{other}`"),
                })
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Normalization::MaxMin => "maxmin",
            Normalization::Pm1 => "pm1",
            Normalization::ZScore => "zscore",
            Normalization::None => "none",
        }
    }
}

/// Normalize one sample in place using its own statistics. Constant
/// samples come back all zero instead of dividing by zero.
pub fn normalize(x: &mut [f64], method: Normalization) {
    if x.is_empty() {
        return;
    }
    match method {
        Normalization::None => {}
        Normalization::MaxMin | Normalization::Pm1 => {
            let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == min {
                x.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            let span = max - min;
            match method {
                Normalization::MaxMin => x.iter_mut().for_each(|v| *v = (*v - min) / span),
                _ => x.iter_mut().for_each(|v| *v = -1.0 + 2.0 * (*v - min) / span),
            }
        }
        Normalization::ZScore => {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            if var == 0.0 {
                x.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            let std = var.sqrt();
            x.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
    }
}

/// 1-D augmentation operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment1d {
    AddGaussian,
    Scale,
    Stretch,
    Crop,
}

/// 2-D augmentation operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment2d {
    Scale,
    Crop,
}

/// Additive noise std: the noise is N(0, 0.01) read as variance 0.01.
const NOISE_STD: f64 = 0.1;
/// Scale factor distribution N(1, 0.01), same variance reading.
const SCALE_STD: f64 = 0.1;
/// Masked run lengths for the crop operators.
const CROP_LEN_1D: usize = 10;
const CROP_LEN_2D: usize = 20;
/// Stretch resampling proportion range.
const STRETCH_LO: f64 = 0.8;
const STRETCH_HI: f64 = 1.2;

fn apply_scale(x: &mut [f64], beta: f64) {
    x.iter_mut().for_each(|v| *v *= beta);
}

fn apply_crop(x: &mut [f64], start: usize, len: usize) {
    x[start..start + len].iter_mut().for_each(|v| *v = 0.0);
}

/// Linear resampling to `round(len * factor)` samples, then zero-padding
/// or truncation back to the original length.
fn apply_stretch(x: &[f64], factor: f64) -> Vec<f64> {
    let len = x.len();
    let new_len = ((len as f64 * factor).round() as usize).max(2);
    let mut resampled = Vec::with_capacity(new_len);
    for i in 0..new_len {
        let pos = i as f64 * (len - 1) as f64 / (new_len - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        let frac = pos - lo as f64;
        resampled.push(x[lo] * (1.0 - frac) + x[hi] * frac);
    }
    resampled.resize(len, 0.0);
    resampled
}

/// Apply one 1-D augmentation with fresh draws from `rng`.
pub fn augment_1d(x: &mut Vec<f64>, op: Augment1d, rng: &mut ChaCha8Rng) {
    match op {
        Augment1d::AddGaussian => {
            let normal = Normal::new(0.0, NOISE_STD).unwrap();
            x.iter_mut().for_each(|v| *v += normal.sample(rng));
        }
        Augment1d::Scale => {
            let beta = Normal::new(1.0, SCALE_STD).unwrap().sample(rng);
            apply_scale(x, beta);
        }
        Augment1d::Stretch => {
            let factor = rng.gen_range(STRETCH_LO..STRETCH_HI);
            *x = apply_stretch(x, factor);
        }
        Augment1d::Crop => {
            if x.len() >= CROP_LEN_1D {
                let start = rng.gen_range(0..=x.len() - CROP_LEN_1D);
                apply_crop(x, start, CROP_LEN_1D);
            }
        }
    }
}

/// Apply one 2-D augmentation; the crop masks a row-major pixel run.
pub fn augment_2d(img: &mut ImageSample, op: Augment2d, rng: &mut ChaCha8Rng) -> Result<()> {
    match op {
        Augment2d::Scale => {
            let beta = Normal::new(1.0, SCALE_STD).unwrap().sample(rng);
            apply_scale(&mut img.pixels, beta);
        }
        Augment2d::Crop => {
            if img.pixels.len() < CROP_LEN_2D {
                return Err(Error::Config {
                    what: format!(
                        "image of {} pixels is smaller than the {CROP_LEN_2D}-pixel crop",
                        img.pixels.len()
                    ),
                });
            }
            let start = rng.gen_range(0..=img.pixels.len() - CROP_LEN_2D);
            apply_crop(&mut img.pixels, start, CROP_LEN_2D);
        }
    }
    Ok(())
}

/// One augmentation slot in a pipeline: the operator plus its per-sample
/// firing probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSlot {
    pub op_1d: Option<Augment1d>,
    pub op_2d: Option<Augment2d>,
    pub probability: f64,
}

impl AugmentSlot {
    pub fn one_d(op: Augment1d, probability: f64) -> AugmentSlot {
        AugmentSlot {
            op_1d: Some(op),
            op_2d: None,
            probability,
        }
    }

    pub fn two_d(op: Augment2d, probability: f64) -> AugmentSlot {
        AugmentSlot {
            op_1d: None,
            op_2d: Some(op),
            probability,
        }
    }

    /// Parse `name` or `name@prob`.
    pub fn parse(s: &str, image: bool) -> Result<AugmentSlot> {
        let (name, prob) = match s.split_once('@') {
            Some((n, p)) => (
                n.trim(),
                p.trim().parse::<f64>().map_err(|_| Error::Config {
                    what: format!("bad augmentation probability in `{s}`"),
                })?,
            ),
            None => (s.trim(), 0.5),
        };
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::Config {
                what: format!("augmentation probability {prob} outside [0, 1]"),
            });
        }
        if image {
            let op = match name {
                "scale" => Augment2d::Scale,
                "crop" => Augment2d::Crop,
                other => {
                    return Err(Error::Config {
                        what: format!("unknown 2-D augmentation `{other}`"),
                    })
                }
            };
            Ok(AugmentSlot::two_d(op, prob))
        } else {
            let op = match name {
                "add_gaussian" | "gaussian" => Augment1d::AddGaussian,
                "scale" => Augment1d::Scale,
                "stretch" => Augment1d::Stretch,
                "crop" => Augment1d::Crop,
                other => {
                    return Err(Error::Config {
                        what: format!("unknown 1-D augmentation `{other}`"),
                    })
                }
            };
            Ok(AugmentSlot::one_d(op, prob))
        }
    }
}

/// Phase of a pipeline application; augmentation fires only in training.
pub use crate::tensor::ops::Phase;

/// Full per-sample preparation recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub input: InputKind,
    pub normalization: Normalization,
    pub augmentations: Vec<AugmentSlot>,
    /// Optional image resize applied right after the transform.
    pub image_target: Option<(usize, usize)>,
}

impl PipelineSpec {
    pub fn new(input: InputKind, normalization: Normalization) -> PipelineSpec {
        PipelineSpec {
            input,
            normalization,
            augmentations: Vec::new(),
            image_target: None,
        }
    }

    /// Reject slots whose dimensionality contradicts the input type.
    pub fn validate(&self) -> Result<()> {
        for slot in &self.augmentations {
            if !(0.0..=1.0).contains(&slot.probability) {
                return Err(Error::Config {
                    what: format!("augmentation probability {} outside [0, 1]", slot.probability),
                });
            }
            let matches_dim = if self.input.is_image() {
                slot.op_2d.is_some() && slot.op_1d.is_none()
            } else {
                slot.op_1d.is_some() && slot.op_2d.is_none()
            };
            if !matches_dim {
                return Err(Error::Config {
                    what: format!(
                        "augmentation slot {slot:?} does not match {} input dimensionality",
                        self.input.name()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// A model-ready sample: values plus their logical shape and label.
#[derive(Clone, Debug, PartialEq)]
pub enum Prepared {
    OneD { values: Vec<f64>, label: usize },
    TwoD { image: ImageSample },
}

impl Prepared {
    pub fn label(&self) -> usize {
        match self {
            Prepared::OneD { label, .. } => *label,
            Prepared::TwoD { image } => image.label,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Prepared::OneD { values, .. } => values,
            Prepared::TwoD { image } => &image.pixels,
        }
    }

    fn values_mut(&mut self) -> &mut Vec<f64> {
        match self {
            Prepared::OneD { values, .. } => values,
            Prepared::TwoD { image } => &mut image.pixels,
        }
    }
}

/// Transform only (no augmentation, no normalization); this part is pure
/// and cacheable per window.
pub fn transform_window(window: &Window1D, spec: &PipelineSpec) -> Result<Prepared> {
    let prepared = match spec.input {
        InputKind::Time => Prepared::OneD {
            values: window.values.clone(),
            label: window.label,
        },
        InputKind::Fft => Prepared::OneD {
            values: transforms::fft_halfspectrum(&window.values)?,
            label: window.label,
        },
        InputKind::Stft => Prepared::TwoD {
            image: transforms::stft_image(window)?,
        },
        InputKind::Cwt => {
            if window.values.len() < transforms::CWT_LEN {
                return Err(Error::Config {
                    what: format!(
                        "cwt needs at least {} samples, window has {}",
                        transforms::CWT_LEN,
                        window.values.len()
                    ),
                });
            }
            // the wavelet path consumes the first 100 samples of the window
            Prepared::TwoD {
                image: transforms::cwt_image(
                    &window.values[..transforms::CWT_LEN],
                    window.label,
                )?,
            }
        }
        InputKind::Slice => Prepared::TwoD {
            image: transforms::slice_image(window)?,
        },
    };
    match (prepared, spec.image_target) {
        (Prepared::TwoD { image }, Some((h, w))) => Ok(Prepared::TwoD {
            image: transforms::resize_image(&image, h, w)?,
        }),
        (p, _) => Ok(p),
    }
}

/// Augment (train phase only) and normalize an already-transformed sample.
pub fn finish_sample(
    mut sample: Prepared,
    spec: &PipelineSpec,
    phase: Phase,
    rng: &mut ChaCha8Rng,
) -> Result<Prepared> {
    if phase == Phase::Train {
        for slot in &spec.augmentations {
            if rng.gen::<f64>() >= slot.probability {
                continue;
            }
            match (&mut sample, slot.op_1d, slot.op_2d) {
                (Prepared::OneD { values, .. }, Some(op), _) => augment_1d(values, op, rng),
                (Prepared::TwoD { image }, _, Some(op)) => augment_2d(image, op, rng)?,
                _ => {
                    return Err(Error::Config {
                        what: "augmentation slot does not match sample dimensionality".into(),
                    })
                }
            }
        }
    }
    normalize(sample.values_mut(), spec.normalization);
    Ok(sample)
}

/// Transform, augment (train phase only, each op firing independently
/// with its probability), then normalize, in that fixed order.
pub fn apply_pipeline(
    window: &Window1D,
    spec: &PipelineSpec,
    phase: Phase,
    rng: &mut ChaCha8Rng,
) -> Result<Prepared> {
    let sample = transform_window(window, spec)?;
    finish_sample(sample, spec, phase, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn window(values: Vec<f64>) -> Window1D {
        Window1D {
            values,
            source_offset: 0,
            label: 4,
            record_index: 0,
        }
    }

    #[test]
    fn maxmin_forces_endpoints() {
        let mut x = vec![0.0, 1.0, 2.0];
        normalize(&mut x, Normalization::MaxMin);
        assert_eq!(x, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn pm1_is_symmetric() {
        let mut x = vec![0.0, 1.0, 2.0];
        normalize(&mut x, Normalization::Pm1);
        assert_eq!(x, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn zscore_uses_population_std() {
        let mut x = vec![0.0, 1.0, 2.0];
        normalize(&mut x, Normalization::ZScore);
        let expect = 1.224744871391589;
        assert!((x[0] + expect).abs() < 1e-12);
        assert!(x[1].abs() < 1e-12);
        assert!((x[2] - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_samples_normalize_to_zero() {
        for m in [Normalization::MaxMin, Normalization::Pm1, Normalization::ZScore] {
            let mut x = vec![3.0; 5];
            normalize(&mut x, m);
            assert_eq!(x, vec![0.0; 5], "{m:?}");
        }
    }

    #[test]
    fn normalization_ranges_hold_on_random_samples() {
        let mut rng = stream(1, "norm");
        for _ in 0..100 {
            let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-9.0..9.0)).collect();

            let mut a = x.clone();
            normalize(&mut a, Normalization::MaxMin);
            assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));

            let mut b = x.clone();
            normalize(&mut b, Normalization::Pm1);
            assert!(b.iter().all(|&v| (-1.0..=1.0).contains(&v)));

            let mut c = x.clone();
            normalize(&mut c, Normalization::ZScore);
            let mean = c.iter().sum::<f64>() / 64.0;
            let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn scale_with_unit_beta_is_identity() {
        let mut x = vec![1.0, -2.0, 3.5];
        apply_scale(&mut x, 1.0);
        assert_eq!(x, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn crop_zeroes_exactly_ten_positions() {
        let mut rng = stream(5, "crop");
        for _ in 0..50 {
            let mut x = vec![1.0; 256];
            augment_1d(&mut x, Augment1d::Crop, &mut rng);
            assert_eq!(x.iter().filter(|v| **v == 0.0).count(), 10);
            assert_eq!(x.len(), 256);
        }
    }

    #[test]
    fn add_gaussian_statistics_match_the_distribution() {
        let mut rng = stream(9, "gauss");
        let n = 1_000_000;
        let mut x = vec![0.0; n];
        augment_1d(&mut x, Augment1d::AddGaussian, &mut rng);
        let mean = x.iter().sum::<f64>() / n as f64;
        let std = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        assert!(mean.abs() < 0.001, "mean {mean}");
        assert!((std - 0.1).abs() < 0.005, "std {std}");
    }

    #[test]
    fn stretch_preserves_length() {
        let mut rng = stream(2, "stretch");
        for _ in 0..50 {
            let mut x: Vec<f64> = (0..128).map(|i| (i as f64 * 0.1).sin()).collect();
            augment_1d(&mut x, Augment1d::Stretch, &mut rng);
            assert_eq!(x.len(), 128);
        }
    }

    #[test]
    fn stretch_by_one_is_near_identity() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).cos()).collect();
        let y = apply_stretch(&x, 1.0);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn crop_2d_zeroes_twenty_and_nothing_else() {
        let mut rng = stream(3, "crop2");
        let mut img = ImageSample::constant(8, 8, 2.0, 0);
        augment_2d(&mut img, Augment2d::Crop, &mut rng).unwrap();
        let zeros = img.pixels.iter().filter(|v| **v == 0.0).count();
        let twos = img.pixels.iter().filter(|v| **v == 2.0).count();
        assert_eq!(zeros, 20);
        assert_eq!(twos, 44);
    }

    #[test]
    fn crop_2d_on_tiny_image_is_a_config_error() {
        let mut rng = stream(3, "crop2");
        let mut img = ImageSample::constant(4, 4, 1.0, 0);
        assert!(augment_2d(&mut img, Augment2d::Crop, &mut rng).is_err());
    }

    #[test]
    fn eval_phase_never_augments() {
        let spec = PipelineSpec {
            input: InputKind::Time,
            normalization: Normalization::None,
            augmentations: vec![
                AugmentSlot::one_d(Augment1d::AddGaussian, 1.0),
                AugmentSlot::one_d(Augment1d::Crop, 1.0),
            ],
            image_target: None,
        };
        let w = window((0..1024).map(|i| f64::from(i) + 1.0).collect());
        let mut rng = stream(0, "eval");
        let out = apply_pipeline(&w, &spec, Phase::Eval, &mut rng).unwrap();
        assert_eq!(out.values(), &w.values[..]);
        assert_eq!(out.label(), 4);
    }

    #[test]
    fn no_ops_pipeline_is_the_transform_output() {
        let spec = PipelineSpec::new(InputKind::Fft, Normalization::None);
        let w = window((0..1024).map(|i| (i as f64 * 0.02).sin()).collect());
        let mut rng = stream(0, "plain");
        let out = apply_pipeline(&w, &spec, Phase::Train, &mut rng).unwrap();
        let direct = crate::transforms::fft_halfspectrum(&w.values).unwrap();
        assert_eq!(out.values(), &direct[..]);
    }

    #[test]
    fn fire_rate_tracks_probability() {
        let spec = PipelineSpec {
            input: InputKind::Time,
            normalization: Normalization::None,
            augmentations: vec![AugmentSlot::one_d(Augment1d::Crop, 0.5)],
            image_target: None,
        };
        let w = window(vec![1.0; 1024]);
        let mut rng = stream(13, "fire");
        let trials = 10_000;
        let mut fired = 0;
        for _ in 0..trials {
            let out = apply_pipeline(&w, &spec, Phase::Train, &mut rng).unwrap();
            if out.values().iter().any(|&v| v == 0.0) {
                fired += 1;
            }
        }
        let rate = fired as f64 / trials as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn pipeline_is_deterministic_under_a_seed() {
        let spec = PipelineSpec {
            input: InputKind::Fft,
            normalization: Normalization::ZScore,
            augmentations: vec![
                AugmentSlot::one_d(Augment1d::AddGaussian, 0.5),
                AugmentSlot::one_d(Augment1d::Stretch, 0.5),
            ],
            image_target: None,
        };
        let w = window((0..1024).map(|i| (i as f64 * 0.05).sin()).collect());
        let mut r1 = stream(77, "pipe");
        let mut r2 = stream(77, "pipe");
        for _ in 0..20 {
            let a = apply_pipeline(&w, &spec, Phase::Train, &mut r1).unwrap();
            let b = apply_pipeline(&w, &spec, Phase::Train, &mut r2).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dimensionality_validation() {
        let mut spec = PipelineSpec::new(InputKind::Stft, Normalization::None);
        spec.augmentations.push(AugmentSlot::one_d(Augment1d::Crop, 0.5));
        assert!(spec.validate().is_err());

        let mut spec = PipelineSpec::new(InputKind::Time, Normalization::None);
        spec.augmentations.push(AugmentSlot::two_d(Augment2d::Crop, 0.5));
        assert!(spec.validate().is_err());

        let mut spec = PipelineSpec::new(InputKind::Slice, Normalization::ZScore);
        spec.augmentations.push(AugmentSlot::two_d(Augment2d::Scale, 0.5));
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn label_passes_through_every_path() {
        let mut rng = stream(0, "labels");
        for input in [InputKind::Time, InputKind::Fft, InputKind::Stft, InputKind::Cwt, InputKind::Slice] {
            let spec = PipelineSpec::new(input, Normalization::ZScore);
            let w = window((0..1024).map(|i| (i as f64 * 0.11).sin()).collect());
            let out = apply_pipeline(&w, &spec, Phase::Train, &mut rng).unwrap();
            assert_eq!(out.label(), 4, "{input:?}");
        }
    }
}
