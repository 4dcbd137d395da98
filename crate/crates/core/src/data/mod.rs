//! Image datasets: CIFAR binary ingestion, deterministic synthetic data,
//! stratified splits, normalization and mini-batching.

mod cifar;
mod synth;

pub use cifar::{encode_cifar, load_cifar, load_cifar_files, CifarPart, CifarVariant};
pub use synth::synth_dataset;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// N×3×H×W images stored as `f32` to halve memory; batches are widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    images: Vec<f32>,
    labels: Vec<usize>,
    /// CIFAR-100 coarse labels, kept so records re-encode bit-exactly.
    coarse: Option<Vec<u8>>,
}

pub const CHANNELS: usize = 3;

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        height: usize,
        width: usize,
        images: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let per = CHANNELS * height * width;
        if per == 0 || images.len() != labels.len() * per {
            return Err(Error::InvalidArgument(format!(
                "{} pixel values for {} images of 3x{height}x{width}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            height,
            width,
            images,
            labels,
            coarse: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_len(&self) -> usize {
        CHANNELS * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.images
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            name: self.name.clone(),
            num_classes: self.num_classes,
            height: self.height,
            width: self.width,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            coarse: self
                .coarse
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    /// Stacks the selected images into an N×3×H×W tensor, optionally augmented.
    pub fn batch<R: Rng + ?Sized>(&self, indices: &[usize], augment: Option<(&Augment, &mut R)>) -> Batch {
        let (h, w) = (self.height, self.width);
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        match augment {
            None => {
                for &i in indices {
                    data.extend(self.image(i).iter().map(|&v| v as f64));
                }
            }
            Some((aug, rng)) => {
                for &i in indices {
                    let img = self.image(i);
                    let flip = aug.flip && rng.random_bool(0.5);
                    let p = aug.crop_pad as i64;
                    let (dy, dx) = if p > 0 {
                        (rng.random_range(-p..=p) as isize, rng.random_range(-p..=p) as isize)
                    } else {
                        (0, 0)
                    };
                    for c in 0..CHANNELS {
                        for y in 0..h {
                            for x in 0..w {
                                let sy = y as isize + dy;
                                let sx0 = if flip { (w - 1 - x) as isize } else { x as isize };
                                let sx = sx0 + dx;
                                let v = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    0.0
                                } else {
                                    img[(c * h + sy as usize) * w + sx as usize] as f64
                                };
                                data.push(v);
                            }
                        }
                    }
                }
            }
        }
        let images = Tensor::new(vec![indices.len(), CHANNELS, h, w], data).expect("consistent batch shape");
        Batch {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Whole dataset as consecutive batches of at most `size` images.
    pub fn sequential_batches(&self, size: usize) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = (0..self.len())
            .collect::<Vec<_>>()
            .chunks(size.max(1))
            .map(<[usize]>::to_vec)
            .collect();
        // a lone trailing sample joins the previous batch
        if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
            let last = out.pop().expect("non-empty");
            out.last_mut().expect("non-empty").extend(last);
        }
        out
    }
}

/// One mini-batch ready for a forward pass.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Training-time augmentation: random horizontal flip and zero-pad-and-crop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augment {
    pub flip: bool,
    pub crop_pad: usize,
}

/// Shuffled index batches. Batches smaller than two images are dropped
/// because batch statistics are undefined for a single sample.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1))
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Per-channel standardization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub const CIFAR10: Normalization = Normalization {
        mean: [0.4914, 0.4822, 0.4465],
        std: [0.2470, 0.2435, 0.2616],
    };

    pub const CIFAR100: Normalization = Normalization {
        mean: [0.5071, 0.4865, 0.4409],
        std: [0.2673, 0.2564, 0.2762],
    };

    /// Exact channel statistics of `data`.
    pub fn from_data(data: &Dataset) -> Self {
        let plane = data.height * data.width;
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for i in 0..data.len() {
            let img = data.image(i);
            for c in 0..CHANNELS {
                for &v in &img[c * plane..(c + 1) * plane] {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
        }
        let n = (data.len() * plane).max(1) as f64;
        let mut mean = [0.0; 3];
        let mut std = [1.0; 3];
        for c in 0..CHANNELS {
            mean[c] = sum[c] / n;
            let var = (sq[c] / n - mean[c] * mean[c]).max(0.0);
            std[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("normalization", "std must be positive and all values finite"));
        }
        Ok(())
    }

    pub fn apply(&self, data: &mut Dataset) {
        let plane = data.height * data.width;
        let per = data.image_len();
        for img in data.images.chunks_mut(per) {
            for c in 0..CHANNELS {
                let (m, s) = (self.mean[c], self.std[c]);
                for v in &mut img[c * plane..(c + 1) * plane] {
                    *v = ((*v as f64 - m) / s) as f32;
                }
            }
        }
    }
}

/// Fraction of each class assigned to the weight-training half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub weight_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            weight_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_fraction > 0.0 && self.weight_fraction < 1.0) {
            return Err(Error::config("split.weight_fraction", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

/// Stratified, seeded split into (weight set, alpha set).
///
/// Within each class, samples are ordered by a seeded hash of their content,
/// so membership does not depend on the order of the input.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (a, b) = split_indices(data, spec)?;
    Ok((data.subset(&a), data.subset(&b)))
}

pub fn split_indices(data: &Dataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let mut by_class: Vec<Vec<([u8; 32], usize)>> = vec![Vec::new(); data.num_classes];
    for i in 0..data.len() {
        let mut h = Sha256::new();
        h.update(spec.seed.to_le_bytes());
        h.update((data.labels[i] as u64).to_le_bytes());
        for v in data.image(i) {
            h.update(v.to_le_bytes());
        }
        by_class[data.labels[i]].push((h.finalize().into(), i));
    }
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} sample(s); a split needs at least 2",
                members.len()
            )));
        }
        members.sort();
        let k = ((members.len() as f64 * spec.weight_fraction).round() as usize).clamp(1, members.len() - 1);
        first.extend(members[..k].iter().map(|m| m.1));
        second.extend(members[k..].iter().map(|m| m.1));
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_split_is_balanced_and_disjoint() {
        let d = synth_dataset(1, 100, 5, 8).unwrap();
        let (a, b) = split_indices(&d, &SplitSpec::default()).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(b.len(), 50);
        let ca = d.subset(&a).class_counts();
        let cb = d.subset(&b).class_counts();
        assert_eq!(ca, cb);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_needs_two_per_class() {
        let d = Dataset::new("t", 2, 1, 1, vec![0.0; 9], vec![0, 0, 1]).unwrap();
        assert!(split(&d, &SplitSpec::default()).is_err());
        let bad = SplitSpec {
            weight_fraction: 1.0,
            seed: 0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn normalization_standardizes_channels() {
        let mut d = synth_dataset(3, 64, 4, 8).unwrap();
        let norm = Normalization::from_data(&d);
        norm.apply(&mut d);
        let after = Normalization::from_data(&d);
        for c in 0..3 {
            assert!(after.mean[c].abs() < 0.02);
            assert!((after.std[c] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn flip_only_augmentation_mirrors_rows() {
        let d = Dataset::new("t", 2, 1, 3, (0..9).map(|v| v as f32).collect(), vec![1]).unwrap();
        let aug = Augment { flip: true, crop_pad: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen_flip = false;
        for _ in 0..20 {
            let b = d.batch(&[0], Some((&aug, &mut rng)));
            let row = &b.images.data()[0..3];
            assert!(row == [0.0, 1.0, 2.0] || row == [2.0, 1.0, 0.0]);
            seen_flip |= row[0] == 2.0;
        }
        assert!(seen_flip);
    }

    #[test]
    fn short_batches_are_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = shuffled_batches(9, 4, &mut rng);
        assert_eq!(b.len(), 2);
        let b = shuffled_batches(10, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    }
}
