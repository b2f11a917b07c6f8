use std::f64::consts::PI;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Image, ImageError, LabeledDataset};

/// `CxNxS` shorthand: classes × images per class × side length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub side: usize,
}

impl FromStr for SynthSpec {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| ImageError::SynthSpec {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let parts: Vec<&str> = s.trim().split(['x', 'X']).collect();
        if parts.len() != 3 {
            return Err(err("expected CLASSESxPER_CLASSxSIDE"));
        }
        let mut nums = [0usize; 3];
        for (slot, part) in nums.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| err("components must be positive integers"))?;
        }
        let [classes, per_class, side] = nums;
        if classes < 2 {
            return Err(err("need at least 2 classes"));
        }
        if per_class == 0 {
            return Err(err("need at least 1 image per class"));
        }
        if !(4..=1024).contains(&side) {
            return Err(err("side must be between 4 and 1024"));
        }
        Ok(SynthSpec {
            classes,
            per_class,
            side,
        })
    }
}

fn class_name(k: usize, num_classes: usize) -> String {
    let digits = (num_classes - 1).to_string().len();
    format!("class_{k:0digits$}")
}

/// Deterministic thermal-like dataset: class `k` is a Gaussian hot spot on a
/// cool background, centred at angle `2πk/num_classes` on a ring around the
/// image centre, plus i.i.d. Gaussian pixel noise clamped to `[0, 1]`.
pub fn synth_thermal(
    num_classes: usize,
    per_class: usize,
    side: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<LabeledDataset, ImageError> {
    if num_classes < 2 || per_class == 0 {
        return Err(ImageError::SynthSize);
    }
    if side == 0 {
        return Err(ImageError::ZeroDimension {
            width: side,
            height: side,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd.abs()).expect("finite standard deviation");
    let centre = (side as f64 - 1.0) / 2.0;
    let ring = side as f64 * 0.25;
    let spread = side as f64 / 8.0;
    let class_names = (0..num_classes)
        .map(|k| class_name(k, num_classes))
        .collect();
    let mut items = Vec::with_capacity(num_classes * per_class);
    for k in 0..num_classes {
        let angle = 2.0 * PI * k as f64 / num_classes as f64;
        let (cx, cy) = (centre + ring * angle.cos(), centre + ring * angle.sin());
        let clean: Vec<f64> = (0..side * side)
            .map(|i| {
                let (x, y) = ((i % side) as f64, (i / side) as f64);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                0.2 + 0.6 * (-d2 / (2.0 * spread * spread)).exp()
            })
            .collect();
        for _ in 0..per_class {
            let pixels = if noise_sd == 0.0 {
                clean.clone()
            } else {
                clean.iter().map(|v| v + noise.sample(&mut rng)).collect()
            };
            items.push((Image::from_clamped(side, side, pixels)?, k));
        }
    }
    Ok(LabeledDataset { items, class_names })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nearest_centroid_accuracy(train: &LabeledDataset, test: &LabeledDataset) -> f64 {
        let n = train.items[0].0.pixels().len();
        let mut centroids = vec![vec![0.0; n]; train.num_classes()];
        let counts = train.class_counts();
        for (img, label) in &train.items {
            for (c, p) in centroids[*label].iter_mut().zip(img.pixels()) {
                *c += p / counts[*label] as f64;
            }
        }
        let correct = test
            .items
            .iter()
            .filter(|(img, label)| {
                let dist = |c: &Vec<f64>| -> f64 {
                    c.iter()
                        .zip(img.pixels())
                        .map(|(a, b)| (a - b).powi(2))
                        .sum()
                };
                let best = (0..centroids.len())
                    .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                    .unwrap();
                best == *label
            })
            .count();
        correct as f64 / test.len() as f64
    }

    #[test]
    fn deterministic() {
        let a = synth_thermal(2, 10, 32, 0.0, 7).unwrap();
        let b = synth_thermal(2, 10, 32, 0.0, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_thermal(3, 4, 16, 0.1, 7).unwrap();
        let d = synth_thermal(3, 4, 16, 0.1, 7).unwrap();
        assert_eq!(c, d);
        assert_ne!(c, synth_thermal(3, 4, 16, 0.1, 8).unwrap());
    }

    #[test]
    fn noiseless_classes_are_constant() {
        let ds = synth_thermal(3, 5, 16, 0.0, 1).unwrap();
        for k in 0..3 {
            let imgs: Vec<&Image> = ds
                .items
                .iter()
                .filter(|(_, l)| *l == k)
                .map(|(i, _)| i)
                .collect();
            assert!(imgs.windows(2).all(|w| w[0] == w[1]));
        }
        assert_eq!(ds.class_names, vec!["class_0", "class_1", "class_2"]);
    }

    #[test]
    fn classes_are_separable() {
        let train = synth_thermal(2, 50, 32, 0.05, 3).unwrap();
        let test = synth_thermal(2, 50, 32, 0.05, 4).unwrap();
        assert!(nearest_centroid_accuracy(&train, &test) >= 0.95);
        assert!(nearest_centroid_accuracy(&train, &train) >= 0.95);
    }

    #[test]
    fn class_names_sort_lexicographically() {
        let ds = synth_thermal(12, 1, 8, 0.0, 0).unwrap();
        let mut sorted = ds.class_names.clone();
        sorted.sort();
        assert_eq!(sorted, ds.class_names);
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            "2x50x32".parse::<SynthSpec>().unwrap(),
            SynthSpec {
                classes: 2,
                per_class: 50,
                side: 32
            }
        );
        for bad in ["2x50", "1x5x32", "2x0x32", "2x5x2", "axbxc", "2x5x32x1", ""] {
            assert!(bad.parse::<SynthSpec>().is_err(), "{bad}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn extreme_noise_stays_in_range(sd in 0.0f64..50.0, seed in any::<u64>()) {
            let ds = synth_thermal(2, 2, 8, sd, seed).unwrap();
            for (img, _) in &ds.items {
                prop_assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
