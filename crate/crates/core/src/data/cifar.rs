use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Dataset, Normalization, CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CifarVariant {
    C10,
    C100,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::C10 => 1,
            CifarVariant::C100 => 2,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::C10 => 10,
            CifarVariant::C100 => 100,
        }
    }

    pub fn record_len(self, side: usize) -> usize {
        self.label_bytes() + CHANNELS * side * side
    }

    /// Folder name inside the official binary archive.
    pub fn archive_dir(self) -> &'static str {
        match self {
            CifarVariant::C10 => "cifar-10-batches-bin",
            CifarVariant::C100 => "cifar-100-binary",
        }
    }

    pub fn default_normalization(self) -> Normalization {
        match self {
            CifarVariant::C10 => Normalization::CIFAR10,
            CifarVariant::C100 => Normalization::CIFAR100,
        }
    }

    fn files(self, part: CifarPart) -> Vec<&'static str> {
        match (self, part) {
            (CifarVariant::C10, CifarPart::Train) => vec![
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            (CifarVariant::C10, CifarPart::Test) => vec!["test_batch.bin"],
            (CifarVariant::C100, CifarPart::Train) => vec!["train.bin"],
            (CifarVariant::C100, CifarPart::Test) => vec!["test.bin"],
        }
    }
}

impl FromStr for CifarVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c10" | "cifar10" => Ok(CifarVariant::C10),
            "c100" | "cifar100" => Ok(CifarVariant::C100),
            other => Err(Error::InvalidArgument(format!("unknown CIFAR variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarPart {
    Train,
    Test,
}

/// Loads the official binary files found in `dir` (the standard
/// `cifar-10-batches-bin` / `cifar-100-binary` contents). Pixels are scaled
/// to [0,1] and, when `norm` is given, standardized per channel.
pub fn load_cifar(dir: &Path, variant: CifarVariant, part: CifarPart, norm: Option<&Normalization>) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::Data {
            path: dir.to_path_buf(),
            reason: "dataset directory not found".into(),
        });
    }
    let paths: Vec<PathBuf> = variant.files(part).into_iter().map(|f| dir.join(f)).collect();
    let mut data = load_cifar_files(&paths, variant, 32)?;
    if let Some(n) = norm {
        n.validate()?;
        n.apply(&mut data);
    }
    Ok(data)
}

/// Reads raw records of `side`×`side` images from the given files in order.
pub fn load_cifar_files(paths: &[PathBuf], variant: CifarVariant, side: usize) -> Result<Dataset> {
    let rec = variant.record_len(side);
    let pixels = CHANNELS * side * side;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut coarse = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Data {
                    path: path.clone(),
                    reason: "file not found".into(),
                }
            } else {
                Error::io(path, e)
            }
        })?;
        if bytes.len() % rec != 0 {
            let whole = bytes.len() / rec;
            return Err(Error::Format {
                path: path.clone(),
                offset: (whole * rec) as u64,
                reason: format!(
                    "length {} is not a multiple of the {rec}-byte record; expected {} or {} bytes",
                    bytes.len(),
                    whole * rec,
                    (whole + 1) * rec
                ),
            });
        }
        for (k, r) in bytes.chunks_exact(rec).enumerate() {
            let label = r[variant.label_bytes() - 1] as usize;
            if label >= variant.num_classes() {
                return Err(Error::Format {
                    path: path.clone(),
                    offset: (k * rec + variant.label_bytes() - 1) as u64,
                    reason: format!("label {label} out of range"),
                });
            }
            if variant == CifarVariant::C100 {
                coarse.push(r[0]);
            }
            labels.push(label);
            images.extend(r[variant.label_bytes()..].iter().map(|&b| b as f32 / 255.0));
        }
        debug_assert_eq!(images.len(), labels.len() * pixels);
    }
    let name = match variant {
        CifarVariant::C10 => "cifar10",
        CifarVariant::C100 => "cifar100",
    };
    let mut data = Dataset::new(name, variant.num_classes(), side, side, images, labels)?;
    if variant == CifarVariant::C100 {
        data.coarse = Some(coarse);
    }
    Ok(data)
}

/// Encodes an unnormalized dataset (pixels in [0,1]) in the CIFAR record
/// layout. CIFAR-100 coarse labels are written back when known, else 0.
pub fn encode_cifar(data: &Dataset, variant: CifarVariant) -> Result<Vec<u8>> {
    if data.height != data.width {
        return Err(Error::InvalidArgument("CIFAR records need square images".into()));
    }
    if data.num_classes > variant.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "{} classes do not fit the {} label space",
            data.num_classes,
            variant.num_classes()
        )));
    }
    let mut out = Vec::with_capacity(data.len() * variant.record_len(data.height));
    for i in 0..data.len() {
        if variant == CifarVariant::C100 {
            out.push(data.coarse.as_ref().map_or(0, |c| c[i]));
        }
        out.push(data.labels[i] as u8);
        for &v in data.image(i) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "pixel value {v} outside [0,1]; encode before normalizing"
                )));
            }
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}
