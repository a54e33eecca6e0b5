//! Mammography super-resolution codec toolkit: DICOM ingest, 16-bit image
//! handling, downscale/upscale codec, quality metrics, dataset manifests and
//! evaluation statistics.

pub mod codec;
pub mod dataset;
pub mod dicom;
pub mod image;
pub mod metrics;
pub mod pngio;
pub mod resample;
pub mod stats;
pub mod synth;

pub use codec::{
    chain_length, compress_image, decompress_image, run_batch, BackendKind, BackendSpec, BatchOp,
    BatchSummary, BicubicUpscaler, CodecConfig, CodecError, Upscaler,
};
pub use dicom::{parse_dicom, read_dicom_file, to_gray16, DicomError, DicomImage};
pub use image::{Image16, ImageError};
pub use metrics::{
    batch_metrics, fsim, phase_congruency, psnr, AggregateReport, FsimConfig, MetricResult,
    MetricsConfig, MetricsError,
};
pub use pngio::{decode_png16, encode_png16, load_png16, save_png16, PngError};
pub use resample::{resize_bicubic, ResizeSpec};
pub use dataset::{
    derive_label, split_patients, Label, LabelOutcome, Split, SplitAssignment, StudyRecord,
};
pub use stats::{
    auc, bootstrap_ci, size_report, threshold_metrics, BootstrapConfig, Metric, PredictionRecord,
    SizeReport, StatsError,
};
