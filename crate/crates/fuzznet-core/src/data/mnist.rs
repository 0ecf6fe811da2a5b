//! IDX-format MNIST loader. Integers are big-endian; image files carry magic
//! 2051 and labels 2049. Pixel bytes are scaled to [0,1].

use std::fs;
use std::path::Path;

use super::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::format(
            path,
            offset,
            format!("file truncated: wanted 4 bytes, have {}", bytes.len() - offset.min(bytes.len())),
        ));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().expect("checked length")))
}

fn check_payload(bytes: &[u8], header: usize, expected: usize, path: &Path) -> Result<()> {
    let have = bytes.len() - header;
    if have != expected {
        return Err(Error::format(
            path,
            header,
            format!("payload holds {have} bytes, header promises {expected}"),
        ));
    }
    Ok(())
}

pub fn load_mnist<F: Scalar>(
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<LabeledDataset<F>> {
    let image_path = image_path.as_ref();
    let label_path = label_path.as_ref();

    let bytes = fs::read(image_path)?;
    let magic = be_u32(&bytes, 0, image_path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            image_path,
            0,
            format!("bad image magic {magic}, expected {IMAGE_MAGIC}"),
        ));
    }
    let n = be_u32(&bytes, 4, image_path)? as usize;
    let rows = be_u32(&bytes, 8, image_path)? as usize;
    let cols = be_u32(&bytes, 12, image_path)? as usize;
    check_payload(&bytes, 16, n * rows * cols, image_path)?;
    let scale = F::c(1.0 / 255.0);
    let images: Vec<F> = bytes[16..].iter().map(|&b| F::c(b as f64) * scale).collect();

    let lbytes = fs::read(label_path)?;
    let magic = be_u32(&lbytes, 0, label_path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            label_path,
            0,
            format!("bad label magic {magic}, expected {LABEL_MAGIC}"),
        ));
    }
    let ln = be_u32(&lbytes, 4, label_path)? as usize;
    if ln != n {
        return Err(Error::format(
            label_path,
            4,
            format!("{ln} labels for {n} images"),
        ));
    }
    check_payload(&lbytes, 8, ln, label_path)?;
    let labels: Vec<usize> = lbytes[8..].iter().map(|&b| b as usize).collect();

    LabeledDataset::new(
        Tensor::new(&[n, 1, rows, cols], images)?,
        labels,
        10,
        Split::Train,
    )
}
