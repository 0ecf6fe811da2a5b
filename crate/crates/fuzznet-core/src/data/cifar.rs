//! CIFAR-10/100 binary batch loader. Each record is label byte(s) followed by
//! 3072 pixel bytes laid out as full R, G, B planes, which maps directly onto
//! the NCHW layout. Pixels are kept as raw 0-255 values; the training
//! pipeline standardizes them per sample.

use std::fs;
use std::path::Path;

use super::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn record_len(self) -> usize {
        match self {
            // 1 label + 3072 pixels; cifar100 adds a coarse label byte
            CifarVariant::Cifar10 => 1 + PIXELS,
            CifarVariant::Cifar100 => 2 + PIXELS,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    /// Byte index of the label used for training (the fine label on cifar100).
    fn label_index(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 0,
            CifarVariant::Cifar100 => 1,
        }
    }
}

pub fn load_cifar<F: Scalar>(
    paths: &[impl AsRef<Path>],
    variant: CifarVariant,
) -> Result<LabeledDataset<F>> {
    let rec = variant.record_len();
    let mut images: Vec<F> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        if bytes.len() % rec != 0 {
            return Err(Error::format(
                path,
                bytes.len() - bytes.len() % rec,
                format!(
                    "file size {} is not a multiple of the {rec}-byte record",
                    bytes.len()
                ),
            ));
        }
        for record in bytes.chunks_exact(rec) {
            labels.push(record[variant.label_index()] as usize);
            let skip = rec - PIXELS;
            images.extend(record[skip..].iter().map(|&b| F::c(b as f64)));
        }
    }
    let n = labels.len();
    LabeledDataset::new(
        Tensor::new(&[n, 3, 32, 32], images)?,
        labels,
        variant.num_classes(),
        Split::Train,
    )
}
