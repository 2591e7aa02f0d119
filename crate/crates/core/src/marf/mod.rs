//! Audio recognition: WAV loading, preprocessing filters, FFT spectral
//! features and a mean-vector classifier.

pub mod classifier;
pub mod features;
pub mod fft;
pub mod matrix;
pub mod preprocess;
pub mod stages;
pub mod synth;
pub mod wav;

use thiserror::Error;

use crate::codec::DecodeError;

pub use classifier::{Classification, SubjectModel, TrainingSet};
pub use features::{extract_features, FeatureVector};
pub use fft::{fft, fft_in_place, Direction};
pub use matrix::{to_complex, ComplexMatrix, Matrix, ToComplex};
pub use preprocess::{
    preprocess, MethodKind, Preprocessing, PreprocessingFactory, PreprocessingMethod,
};
pub use stages::stage_executors;
pub use wav::{encode_pcm16, load_sample};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub rate: u32,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarfError {
    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("real and imaginary parts differ in length ({re} vs {im})")]
    LengthMismatch { re: usize, im: usize },
    #[error("invalid cutoff: {0}")]
    InvalidCutoff(String),
    #[error("sample has no data")]
    EmptySample,
    #[error("sample of {len} points is shorter than the {window}-point window")]
    SampleTooShort { len: usize, window: usize },
    #[error("training set is empty")]
    EmptyModel,
    #[error("feature dimension {found} does not match {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("bad stage data: {0}")]
    Decode(#[from] DecodeError),
}
