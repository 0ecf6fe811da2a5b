//! Dataset ingestion, normalization, augmentation, splitting, and batching.
//!
//! MNIST images are scaled to [0,1] at load; CIFAR images are kept as raw
//! byte values and standardized per sample in the pipeline. The two are not
//! mixed.

mod cifar;
mod mnist;

pub use cifar::{load_cifar, CifarVariant};
pub use mnist::load_mnist;

use rand::seq::SliceRandom;
use rand::RngExt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// A labeled image set in NCHW layout.
#[derive(Debug, Clone)]
pub struct LabeledDataset<F> {
    pub images: Tensor<F>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl<F: Scalar> LabeledDataset<F> {
    pub fn new(
        images: Tensor<F>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let (n, _, _, _) = images.dims4()?;
        if labels.len() != n {
            return Err(Error::Data(format!(
                "{} labels for {n} images",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_dims(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = self.images.dims4().expect("validated at construction");
        (c, h, w)
    }

    /// Copies the given records (in order) into a batch tensor.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<F>, Vec<usize>) {
        let (c, h, w) = self.image_dims();
        let chw = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * chw);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * chw..(i + 1) * chw]);
            labels.push(self.labels[i]);
        }
        (
            Tensor::new(&[indices.len(), c, h, w], data).expect("shape matches count"),
            labels,
        )
    }

    /// Keeps only the first `limit` records.
    pub fn truncated(mut self, limit: usize) -> Self {
        if limit >= self.len() {
            return self;
        }
        let (c, h, w) = self.image_dims();
        let chw = c * h * w;
        self.images = Tensor::new(
            &[limit, c, h, w],
            self.images.data()[..limit * chw].to_vec(),
        )
        .expect("shape matches count");
        self.labels.truncate(limit);
        self
    }
}

/// Splits off the last `val_count` records as validation, order preserved.
pub fn split_train_val<F: Scalar>(
    ds: LabeledDataset<F>,
    val_count: usize,
) -> Result<(LabeledDataset<F>, LabeledDataset<F>)> {
    let n = ds.len();
    if val_count >= n {
        return Err(Error::config(format!(
            "validation count {val_count} must be below the dataset size {n}"
        )));
    }
    let (c, h, w) = ds.image_dims();
    let chw = c * h * w;
    let n_train = n - val_count;
    let train = LabeledDataset {
        images: Tensor::new(
            &[n_train, c, h, w],
            ds.images.data()[..n_train * chw].to_vec(),
        )
        .expect("shape matches count"),
        labels: ds.labels[..n_train].to_vec(),
        num_classes: ds.num_classes,
        split: Split::Train,
    };
    let val = LabeledDataset {
        images: Tensor::new(
            &[val_count, c, h, w],
            ds.images.data()[n_train * chw..].to_vec(),
        )
        .expect("shape matches count"),
        labels: ds.labels[n_train..].to_vec(),
        num_classes: ds.num_classes,
        split: Split::Val,
    };
    Ok((train, val))
}

/// Per-image standardization: subtract the image's mean, divide by its
/// standard deviation plus a 1e-8 guard.
pub fn normalize_samplewise<F: Scalar>(mut ds: LabeledDataset<F>) -> LabeledDataset<F> {
    let (c, h, w) = ds.image_dims();
    let chw = c * h * w;
    let inv = F::one() / F::c(chw as f64);
    let guard = F::c(1e-8);
    for i in 0..ds.len() {
        let img = &mut ds.images.data_mut()[i * chw..(i + 1) * chw];
        let mut mean = F::zero();
        for &v in img.iter() {
            mean += v;
        }
        mean = mean * inv;
        let mut var = F::zero();
        for &v in img.iter() {
            let d = v - mean;
            var += d * d;
        }
        let std = (var * inv).sqrt();
        let scale = F::one() / (std + guard);
        for v in img.iter_mut() {
            *v = (*v - mean) * scale;
        }
    }
    ds
}

/// Per-batch augmentation policy.
#[derive(Debug, Clone, Copy)]
pub struct AugmentPolicy {
    pub shift_fraction: f64,
    pub horizontal_flip: bool,
}

impl AugmentPolicy {
    pub fn mnist() -> Self {
        AugmentPolicy {
            shift_fraction: 0.10,
            horizontal_flip: false,
        }
    }

    pub fn cifar() -> Self {
        AugmentPolicy {
            shift_fraction: 0.20,
            horizontal_flip: true,
        }
    }
}

pub(crate) fn shift_image<F: Scalar>(
    src: &[F],
    dst: &mut [F],
    c: usize,
    h: usize,
    w: usize,
    dy: i64,
    dx: i64,
) {
    for ch in 0..c {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (sy, sx) = (y - dy, x - dx);
                dst[(ch * h + y as usize) * w + x as usize] =
                    if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                        src[(ch * h + sy as usize) * w + sx as usize]
                    } else {
                        F::zero()
                    };
            }
        }
    }
}

pub(crate) fn flip_horizontal<F: Scalar>(img: &mut [F], c: usize, h: usize, w: usize) {
    for ch in 0..c {
        for y in 0..h {
            let row = &mut img[(ch * h + y) * w..(ch * h + y + 1) * w];
            row.reverse();
        }
    }
}

/// Shifts each image by integer pixels drawn uniformly from
/// [-round(frac*dim), +round(frac*dim)] per axis (vertical first), filling
/// vacated pixels with zero, then flips horizontally with probability 0.5
/// when the policy enables it. Per image the draw order is dy, dx, flip.
pub fn augment<F: Scalar>(
    batch: &Tensor<F>,
    policy: &AugmentPolicy,
    rng: &mut SeededRng,
) -> Result<Tensor<F>> {
    if !(0.0..1.0).contains(&policy.shift_fraction) {
        return Err(Error::config(format!(
            "shift fraction {} outside [0, 1)",
            policy.shift_fraction
        )));
    }
    let (n, c, h, w) = batch.dims4()?;
    let my = (policy.shift_fraction * h as f64).round() as i64;
    let mx = (policy.shift_fraction * w as f64).round() as i64;
    let chw = c * h * w;
    let mut out = Tensor::zeros(&[n, c, h, w]);
    for i in 0..n {
        let dy = rng.random_range(-my..=my);
        let dx = rng.random_range(-mx..=mx);
        let src = &batch.data()[i * chw..(i + 1) * chw];
        let dst = &mut out.data_mut()[i * chw..(i + 1) * chw];
        shift_image(src, dst, c, h, w, dy, dx);
        if policy.horizontal_flip && rng.random_bool(0.5) {
            flip_horizontal(dst, c, h, w);
        }
    }
    Ok(out)
}

/// Lazily yields `(images, labels)` batches; the final partial batch is
/// emitted. Record order is shuffled once up front when requested.
pub struct Batches<'a, F: Scalar> {
    ds: &'a LabeledDataset<F>,
    order: Vec<usize>,
    batch_size: usize,
    next_start: usize,
}

impl<'a, F: Scalar> Batches<'a, F> {
    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl<'a, F: Scalar> Iterator for Batches<'a, F> {
    type Item = (Tensor<F>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_start >= self.order.len() {
            return None;
        }
        let end = (self.next_start + self.batch_size).min(self.order.len());
        let batch = self.ds.gather(&self.order[self.next_start..end]);
        self.next_start = end;
        Some(batch)
    }
}

pub fn batches<'a, F: Scalar>(
    ds: &'a LabeledDataset<F>,
    batch_size: usize,
    shuffle: bool,
    rng: &mut SeededRng,
) -> Result<Batches<'a, F>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if shuffle {
        order.shuffle(rng);
    }
    Ok(Batches {
        ds,
        order,
        batch_size,
        next_start: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy(n: usize, chw: (usize, usize, usize)) -> LabeledDataset<f64> {
        let (c, h, w) = chw;
        let data: Vec<f64> = (0..n * c * h * w).map(|i| i as f64).collect();
        LabeledDataset::new(
            Tensor::new(&[n, c, h, w], data).unwrap(),
            (0..n).map(|i| i % 10).collect(),
            10,
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn label_range_enforced() {
        let images = Tensor::<f64>::zeros(&[2, 1, 2, 2]);
        assert!(LabeledDataset::new(images.clone(), vec![0, 10], 10, Split::Train).is_err());
        assert!(LabeledDataset::new(images.clone(), vec![0], 10, Split::Train).is_err());
        assert!(LabeledDataset::new(images, vec![0, 9], 10, Split::Train).is_ok());
    }

    #[test]
    fn split_takes_last_records_in_order() {
        let ds = toy(5, (1, 2, 2));
        let (train, val) = split_train_val(ds, 2).unwrap();
        assert_eq!(train.len(), 3);
        assert_eq!(val.len(), 2);
        assert_eq!(train.labels, vec![0, 1, 2]);
        assert_eq!(val.labels, vec![3, 4]);
        assert_eq!(val.images.data()[0], 12.0);
        assert_eq!(val.split, Split::Val);
    }

    #[test]
    fn split_rejects_oversized_val() {
        assert!(split_train_val(toy(5, (1, 2, 2)), 5).is_err());
        let (train, val) = split_train_val(toy(5, (1, 2, 2)), 0).unwrap();
        assert_eq!(train.len(), 5);
        assert!(val.is_empty());
    }

    #[test]
    fn standardization_properties() {
        let mut ds = toy(4, (1, 3, 3));
        // make one image constant
        for v in ds.images.data_mut()[..9].iter_mut() {
            *v = 7.0;
        }
        let ds = normalize_samplewise(ds);
        assert!(ds.images.data()[..9].iter().all(|&v| v == 0.0));
        for i in 1..4 {
            let img = &ds.images.data()[i * 9..(i + 1) * 9];
            let mean: f64 = img.iter().sum::<f64>() / 9.0;
            let var: f64 = img.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-6);
        }
        // idempotent up to the epsilon guard
        let again = normalize_samplewise(ds.clone());
        for (a, b) in ds.images.data().iter().zip(again.images.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_shift_no_flip_is_identity() {
        let ds = toy(3, (2, 4, 4));
        let policy = AugmentPolicy {
            shift_fraction: 0.0,
            horizontal_flip: false,
        };
        let mut rng = SeededRng::seed_from_u64(1);
        let out = augment(&ds.images, &policy, &mut rng).unwrap();
        assert_eq!(out.data(), ds.images.data());
    }

    #[test]
    fn flip_is_an_involution() {
        let mut img: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64).collect();
        let orig = img.clone();
        flip_horizontal(&mut img, 2, 3, 4);
        assert_ne!(img, orig);
        flip_horizontal(&mut img, 2, 3, 4);
        assert_eq!(img, orig);
    }

    #[test]
    fn shift_zero_fills_vacated_pixels() {
        let src = vec![1.0f64; 5 * 6];
        let mut dst = vec![9.0f64; 5 * 6];
        shift_image(&src, &mut dst, 1, 5, 6, 2, -1);
        let mut zeros = 0;
        for y in 0..5usize {
            for x in 0..6usize {
                let v = dst[y * 6 + x];
                if y < 2 || x == 5 {
                    assert_eq!(v, 0.0);
                    zeros += 1;
                } else {
                    assert_eq!(v, 1.0);
                }
            }
        }
        assert_eq!(zeros, 5 * 6 - 3 * 5);
    }

    #[test]
    fn mnist_shift_bound_is_three() {
        // round(0.10 * 28) = 3; both extremes must be reachable
        let ds = toy(400, (1, 28, 28));
        let policy = AugmentPolicy::mnist();
        let mut rng = SeededRng::seed_from_u64(2);
        let out = augment(&ds.images, &policy, &mut rng).unwrap();
        assert_eq!(out.shape(), ds.images.shape());
        let mut rng = SeededRng::seed_from_u64(2);
        let (mut lo, mut hi) = (0i64, 0i64);
        for _ in 0..400 {
            let dy = rng.random_range(-3i64..=3);
            let _dx = rng.random_range(-3i64..=3);
            lo = lo.min(dy);
            hi = hi.max(dy);
        }
        assert_eq!((lo, hi), (-3, 3));
    }

    #[test]
    fn batch_arithmetic_for_paper_batch_size() {
        let ds = toy(50_000, (1, 1, 1));
        let mut rng = SeededRng::seed_from_u64(3);
        let iter = batches(&ds, 512, false, &mut rng).unwrap();
        assert_eq!(iter.batch_count(), 98);
        let sizes: Vec<usize> = iter.map(|(_, l)| l.len()).collect();
        assert_eq!(sizes.len(), 98);
        assert!(sizes[..97].iter().all(|&s| s == 512));
        assert_eq!(sizes[97], 336);
    }

    #[test]
    fn single_batch_when_size_covers_all() {
        let ds = toy(17, (1, 1, 1));
        let mut rng = SeededRng::seed_from_u64(4);
        let got: Vec<_> = batches(&ds, 17, false, &mut rng).unwrap().collect();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].1.len(), 17);
        assert!(batches(&ds, 0, false, &mut rng).is_err());
    }

    #[test]
    fn shuffle_is_deterministic_and_lossless() {
        let ds = toy(100, (1, 1, 1));
        let run = |seed: u64| -> Vec<f64> {
            let mut rng = SeededRng::seed_from_u64(seed);
            batches(&ds, 7, true, &mut rng)
                .unwrap()
                .flat_map(|(x, _)| x.data().to_vec())
                .collect()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
        let mut seen = run(9);
        seen.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn truncated_keeps_prefix() {
        let ds = toy(10, (1, 2, 2)).truncated(4);
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.labels, vec![0, 1, 2, 3]);
        assert_eq!(ds.images.shape(), &[4, 1, 2, 2]);
    }
}
