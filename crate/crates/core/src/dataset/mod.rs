//! Dataset packaging: threshold normalization, 8-bit quantization, the
//! per-modality / per-height directory layout, manifests and splits.

mod export;
mod manifest;
mod normalize;

use std::path::PathBuf;

pub use export::{
    export_sample, import_raw_sample, import_sample, list_samples, parse_sample_name, sample_file_name,
    ExportOptions, SampleId, RAY_DIR,
};
pub use manifest::{split_dataset, DatasetManifest, ManifestRecord, Split};
pub use normalize::{
    dequantize, normalize, normalize_value, quantize_u8, quantize_value, ChannelThresholds, Range,
};

use crate::image_io::ImageError;
use crate::rm3d::FormatError;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: file name does not match <BID>_<x>X_<y>Y.png")]
    BadName { path: PathBuf },
    #[error("{path}: already exists (pass force to overwrite)")]
    Exists { path: PathBuf },
    #[error("{path}: {message}")]
    Layout { path: PathBuf, message: String },
    #[error("volume is already normalized")]
    AlreadyNormalized,
    #[error("volume is not normalized")]
    NotNormalized,
    #[error("thresholds: {0}")]
    Thresholds(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("split needs at least 2 records, got {0}")]
    TooFewRecords(usize),
    #[error("split ratio {0} outside [0, 1]")]
    Ratio(f64),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DatasetError {
    let path = path.into();
    move |source| DatasetError::Io { path, source }
}
