//! Per-pixel scalar Kalman filtering of still images.
//!
//! Each pixel carries a static scalar state (identity transition). Its
//! measurement sequence is the pixel's own neighbourhood, visited from the
//! centre outwards by Euclidean distance with row-major tie-breaking.
//! Windows overhanging the border replicate edge pixels.

use thiserror::Error;

use crate::image_io::{clamp_unit, Image};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("window must be an odd integer >= 1, got {0}")]
    EvenWindow(usize),
    #[error("{name} must be finite and >= 0, got {value}")]
    NegativeVariance { name: &'static str, value: f64 },
    #[error("initial variance must be finite and > 0, got {0}")]
    InitialVariance(f64),
    #[error("process and measurement noise cannot both be zero for window {0}")]
    DegenerateNoise(usize),
    #[error("Kalman gain undefined: predicted variance {predicted} plus measurement noise {r} is zero")]
    UndefinedGain { predicted: f64, r: f64 },
    #[error("noise estimation needs at least a 3x3 image, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    /// Intensity estimate.
    pub x: f64,
    /// Estimate variance, never negative.
    pub p: f64,
}

/// Measurement-noise variance: fixed, or estimated per image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurementNoise {
    Fixed(f64),
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    pub q: f64,
    pub r: MeasurementNoise,
    pub init_p: f64,
    pub window: usize,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            q: 1e-4,
            r: MeasurementNoise::Auto,
            init_p: 1.0,
            window: 3,
        }
    }
}

fn check_variance(name: &'static str, value: f64) -> Result<(), KalmanError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(KalmanError::NegativeVariance { name, value })
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<(), KalmanError> {
        if self.window % 2 == 0 {
            return Err(KalmanError::EvenWindow(self.window));
        }
        check_variance("q", self.q)?;
        if let MeasurementNoise::Fixed(r) = self.r {
            check_variance("r", r)?;
            if r == 0.0 && self.q == 0.0 && self.window > 1 {
                return Err(KalmanError::DegenerateNoise(self.window));
            }
        }
        if !(self.init_p.is_finite() && self.init_p > 0.0) {
            return Err(KalmanError::InitialVariance(self.init_p));
        }
        Ok(())
    }
}

/// Gain of the update that follows predicting `p` forward by `q`.
pub fn kalman_gain(p: f64, q: f64, r: f64) -> Result<f64, KalmanError> {
    let predicted = p + q;
    if predicted + r == 0.0 {
        return Err(KalmanError::UndefinedGain { predicted, r });
    }
    Ok(predicted / (predicted + r))
}

/// One predict/update cycle against measurement `z`.
pub fn kalman_step(s: KalmanState, z: f64, q: f64, r: f64) -> Result<KalmanState, KalmanError> {
    let gain = kalman_gain(s.p, q, r)?;
    // (1 - K)(p + q) written as K r, which avoids cancellation when K is near 1
    Ok(KalmanState {
        x: s.x + gain * (z - s.x),
        p: gain * r,
    })
}

/// Window offsets ordered by distance from the centre, then row-major.
fn window_offsets(window: usize) -> Vec<(isize, isize)> {
    let half = (window / 2) as isize;
    let mut offsets: Vec<(isize, isize)> = (-half..=half)
        .flat_map(|dy| (-half..=half).map(move |dx| (dx, dy)))
        .collect();
    offsets.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    offsets
}

pub fn denoise_image(img: &Image, cfg: &KalmanConfig) -> Result<Image, KalmanError> {
    cfg.validate()?;
    let r = match cfg.r {
        MeasurementNoise::Fixed(r) => r,
        MeasurementNoise::Auto if img.width() >= 3 && img.height() >= 3 => {
            estimate_noise_variance(img)?
        }
        MeasurementNoise::Auto => 0.0,
    };
    if r == 0.0 && cfg.q == 0.0 && cfg.window > 1 {
        return Err(KalmanError::DegenerateNoise(cfg.window));
    }
    let offsets = window_offsets(cfg.window);
    let mut out = Vec::with_capacity(img.pixels().len());
    for y in 0..img.height() as isize {
        for x in 0..img.width() as isize {
            let mut state = KalmanState {
                x: img.get_clamped(x, y),
                p: cfg.init_p,
            };
            for &(dx, dy) in &offsets {
                state = kalman_step(state, img.get_clamped(x + dx, y + dy), cfg.q, r)?;
            }
            out.push(clamp_unit(state.x));
        }
    }
    Ok(Image::new(img.width(), img.height(), out).expect("dimensions preserved"))
}

/// Noise variance from the median absolute deviation of the 4-neighbour
/// Laplacian over interior pixels. For i.i.d. noise of variance σ² the
/// Laplacian has variance 20σ², and MAD ≈ 0.6745·sd for a Gaussian.
pub fn estimate_noise_variance(img: &Image) -> Result<f64, KalmanError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(KalmanError::TooSmall {
            width: w,
            height: h,
        });
    }
    let mut lap = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let neighbours =
                img.get(x - 1, y) + img.get(x + 1, y) + img.get(x, y - 1) + img.get(x, y + 1);
            lap.push(neighbours - 4.0 * img.get(x, y));
        }
    }
    let med = median(&mut lap);
    let mut dev: Vec<f64> = lap.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    let sd = mad / (0.674_489_750_196_081_7 * 20f64.sqrt());
    Ok(sd * sd)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Peak signal-to-noise ratio in dB with peak 1.0. Identical images yield
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, KalmanError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(KalmanError::DimensionMismatch(
            (a.width(), a.height()),
            (b.width(), b.height()),
        ));
    }
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noise_image(side: usize, mean: f64, sd: f64, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(mean, sd).unwrap();
        Image::from_clamped(side, side, (0..side * side).map(|_| n.sample(&mut rng)).collect())
            .unwrap()
    }

    #[test]
    fn step_examples() {
        let s = kalman_step(KalmanState { x: 0.0, p: 1.0 }, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(s, KalmanState { x: 0.5, p: 0.5 });
        assert_eq!(kalman_gain(1.0, 0.0, 1.0).unwrap(), 0.5);

        let s = kalman_step(KalmanState { x: 0.3, p: 0.7 }, 0.3, 0.2, 0.4).unwrap();
        assert_eq!(s.x, 0.3);

        let s = kalman_step(KalmanState { x: 0.3, p: 0.7 }, 0.9, 0.1, 0.0).unwrap();
        assert!((s.x - 0.9).abs() < 1e-15);
        assert_eq!(s.p, 0.0);

        assert!(matches!(
            kalman_step(KalmanState { x: 0.0, p: 0.0 }, 1.0, 0.0, 0.0),
            Err(KalmanError::UndefinedGain { .. })
        ));
    }

    #[test]
    fn offsets_order() {
        let o = window_offsets(3);
        assert_eq!(o[0], (0, 0));
        assert_eq!(&o[1..5], &[(0, -1), (-1, 0), (1, 0), (0, 1)]);
        assert_eq!(&o[5..], &[(-1, -1), (1, -1), (-1, 1), (1, 1)]);
        assert_eq!(window_offsets(1), vec![(0, 0)]);
    }

    #[test]
    fn config_validation() {
        assert!(KalmanConfig::default().validate().is_ok());
        let even = KalmanConfig {
            window: 4,
            ..Default::default()
        };
        assert_eq!(even.validate(), Err(KalmanError::EvenWindow(4)));
        let neg = KalmanConfig {
            q: -1.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
        let both_zero = KalmanConfig {
            q: 0.0,
            r: MeasurementNoise::Fixed(0.0),
            ..Default::default()
        };
        assert!(both_zero.validate().is_err());
        let bad_p = KalmanConfig {
            init_p: 0.0,
            ..Default::default()
        };
        assert!(bad_p.validate().is_err());
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = Image::filled(7, 5, 0.42).unwrap();
        for cfg in [
            KalmanConfig::default(),
            KalmanConfig {
                window: 5,
                q: 0.3,
                r: MeasurementNoise::Fixed(0.01),
                init_p: 4.0,
            },
        ] {
            assert_eq!(denoise_image(&img, &cfg).unwrap(), img);
        }
    }

    #[test]
    fn diffuse_prior_gives_window_mean() {
        let img = noise_image(6, 0.5, 0.2, 9);
        let cfg = KalmanConfig {
            q: 0.0,
            r: MeasurementNoise::Fixed(0.01),
            init_p: 1e9,
            window: 3,
        };
        let out = denoise_image(&img, &cfg).unwrap();
        for y in 1..5 {
            for x in 1..5 {
                let mut sum = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        sum += img.get(x + dx - 1, y + dy - 1);
                    }
                }
                assert!((out.get(x, y) - sum / 9.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn denoising_improves_psnr() {
        let clean = crate::image_io::synth_thermal(2, 1, 64, 0.0, 0)
            .unwrap()
            .items
            .remove(0)
            .0;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = Normal::new(0.0, 0.1).unwrap();
        let noisy = Image::from_clamped(
            64,
            64,
            clean.pixels().iter().map(|v| v + n.sample(&mut rng)).collect(),
        )
        .unwrap();
        let denoised = denoise_image(&noisy, &KalmanConfig::default()).unwrap();
        assert!(psnr(&denoised, &clean).unwrap() > psnr(&noisy, &clean).unwrap());
    }

    #[test]
    fn noise_estimates() {
        assert_eq!(
            estimate_noise_variance(&Image::filled(5, 5, 0.3).unwrap()).unwrap(),
            0.0
        );
        let img = noise_image(64, 0.5, 0.1, 21);
        let est = estimate_noise_variance(&img).unwrap();
        assert!((est - 0.01).abs() <= 0.003, "estimate {est}");

        let shifted = Image::new(
            64,
            64,
            img.pixels().iter().map(|v| (v * 0.5) + 0.25).collect(),
        )
        .unwrap();
        let lifted =
            Image::new(64, 64, shifted.pixels().iter().map(|v| v + 0.1).collect()).unwrap();
        let a = estimate_noise_variance(&shifted).unwrap();
        let b = estimate_noise_variance(&lifted).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.max(1e-12));

        assert!(matches!(
            estimate_noise_variance(&Image::filled(2, 5, 0.1).unwrap()),
            Err(KalmanError::TooSmall { .. })
        ));
    }

    #[test]
    fn psnr_cases() {
        let a = Image::filled(2, 2, 0.5).unwrap();
        let b = Image::filled(2, 2, 0.6).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let c = Image::filled(3, 2, 0.5).unwrap();
        assert!(psnr(&a, &c).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Image::new(8, 8, (0..64).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y = Image::new(8, 8, (0..64).map(|_| rng.random::<f64>()).collect()).unwrap();
        let mut mse = 0.0;
        for i in 0..64 {
            mse += (x.pixels()[i] - y.pixels()[i]).powi(2);
        }
        mse /= 64.0;
        assert!((psnr(&x, &y).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn gain_is_a_weight(p in 0.0f64..1e3, q in 0.0f64..1e3, r in 0.0f64..1e3) {
            prop_assume!(p + q + r > 0.0);
            let k = kalman_gain(p, q, r).unwrap();
            prop_assert!((0.0..=1.0).contains(&k));
        }

        #[test]
        fn update_is_convex(x in -5.0f64..5.0, p in 0.0f64..10.0, z in -5.0f64..5.0,
                            q in 0.0f64..1.0, r in 1e-6f64..1.0) {
            let s = kalman_step(KalmanState { x, p }, z, q, r).unwrap();
            prop_assert!(s.x >= x.min(z) - 1e-12 && s.x <= x.max(z) + 1e-12);
            prop_assert!(s.p >= 0.0 && s.p <= p + q);
        }

        #[test]
        fn gains_decrease_without_process_noise(p in 1e-3f64..10.0, r in 1e-3f64..10.0,
                                                zs in proptest::collection::vec(0.0f64..1.0, 2..20)) {
            let mut s = KalmanState { x: 0.5, p };
            let mut last = f64::INFINITY;
            for z in zs {
                let k = kalman_gain(s.p, 0.0, r).unwrap();
                prop_assert!(k < last);
                last = k;
                s = kalman_step(s, z, 0.0, r).unwrap();
            }
        }

        #[test]
        fn output_within_window_range(seed in any::<u64>()) {
            let img = noise_image(6, 0.5, 0.3, seed);
            let out = denoise_image(&img, &KalmanConfig::default()).unwrap();
            for y in 0..6isize {
                for x in 0..6isize {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let v = img.get_clamped(x + dx, y + dy);
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                    let v = out.get(x as usize, y as usize);
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }
}
