use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, CHANNELS};
use crate::error::{Error, Result};

const TINT: f64 = 0.08;
const STRIPE: f64 = 0.25;
const NOISE: f64 = 0.12;

/// Class-conditional images: oriented sinusoidal stripes with a random
/// per-sample phase, a faint per-class colour tint and Gaussian pixel noise.
/// Labels cycle `0, 1, .., classes-1`, so every class gets `n / classes`
/// samples (the first `n % classes` classes get one more). Pixels are
/// clamped to [0,1].
pub fn synth_dataset(seed: u64, n: usize, classes: usize, size: usize) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("synthetic data needs at least 2 classes, got {classes}")));
    }
    if size < 8 {
        return Err(Error::InvalidArgument(format!("synthetic images must be at least 8x8, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let styles: Vec<([f64; 3], f64, f64)> = (0..classes)
        .map(|c| {
            let tint = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let angle = PI * c as f64 / classes as f64;
            let freq = 2.0 + (c % 3) as f64;
            (tint, angle, freq)
        })
        .collect();
    let noise = Normal::new(0.0, NOISE).expect("finite");
    let mut images = Vec::with_capacity(n * CHANNELS * size * size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let (tint, angle, freq) = styles[c];
        let phase = rng.random_range(0.0..2.0 * PI);
        let (ca, sa) = (angle.cos(), angle.sin());
        for t in tint {
            for y in 0..size {
                for x in 0..size {
                    let u = (x as f64 * ca + y as f64 * sa) / size as f64;
                    let v = 0.5 + TINT * t + STRIPE * (2.0 * PI * freq * u + phase).sin() + noise.sample(&mut rng);
                    images.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
        labels.push(c);
    }
    Dataset::new(format!("synth{classes}"), classes, size, size, images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = synth_dataset(9, 400, 4, 8).unwrap();
        let b = synth_dataset(9, 400, 4, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![100; 4]);
        assert_ne!(a, synth_dataset(10, 400, 4, 8).unwrap());
        assert!(a.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(synth_dataset(0, 10, 1, 8).is_err());
        assert!(synth_dataset(0, 10, 2, 7).is_err());
    }
}
