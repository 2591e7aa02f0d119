use serde::{Deserialize, Serialize};

use super::fft::{fft_in_place, Direction};
use super::matrix::{to_complex, Matrix};
use super::{MarfError, Sample};

/// Which preprocessing to apply. Cutoffs are in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PreprocessingMethod {
    #[default]
    NormalizeOnly,
    LowPass {
        high_hz: f64,
    },
    HighPass {
        low_hz: f64,
    },
    BandPass {
        low_hz: f64,
        high_hz: f64,
    },
    BandStop {
        low_hz: f64,
        high_hz: f64,
    },
}

/// The method name alone, as written in job documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MethodKind {
    NormalizeOnly,
    LowPass,
    HighPass,
    BandPass,
    BandStop,
}

impl PreprocessingMethod {
    pub fn kind(&self) -> MethodKind {
        match self {
            PreprocessingMethod::NormalizeOnly => MethodKind::NormalizeOnly,
            PreprocessingMethod::LowPass { .. } => MethodKind::LowPass,
            PreprocessingMethod::HighPass { .. } => MethodKind::HighPass,
            PreprocessingMethod::BandPass { .. } => MethodKind::BandPass,
            PreprocessingMethod::BandStop { .. } => MethodKind::BandStop,
        }
    }

    /// `(low_hz, high_hz)`, each present only where the method uses it.
    pub fn cutoffs(&self) -> (Option<f64>, Option<f64>) {
        match *self {
            PreprocessingMethod::NormalizeOnly => (None, None),
            PreprocessingMethod::LowPass { high_hz } => (None, Some(high_hz)),
            PreprocessingMethod::HighPass { low_hz } => (Some(low_hz), None),
            PreprocessingMethod::BandPass { low_hz, high_hz }
            | PreprocessingMethod::BandStop { low_hz, high_hz } => (Some(low_hz), Some(high_hz)),
        }
    }

    /// Assemble from a method name and optional cutoffs. Cutoffs the
    /// method does not use are ignored; missing ones are an error.
    pub fn from_parts(
        kind: MethodKind,
        low_hz: Option<f64>,
        high_hz: Option<f64>,
    ) -> Result<Self, MarfError> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| MarfError::InvalidCutoff(format!("{kind:?} needs {name}")))
        };
        Ok(match kind {
            MethodKind::NormalizeOnly => PreprocessingMethod::NormalizeOnly,
            MethodKind::LowPass => PreprocessingMethod::LowPass {
                high_hz: need(high_hz, "highHz")?,
            },
            MethodKind::HighPass => PreprocessingMethod::HighPass {
                low_hz: need(low_hz, "lowHz")?,
            },
            MethodKind::BandPass => PreprocessingMethod::BandPass {
                low_hz: need(low_hz, "lowHz")?,
                high_hz: need(high_hz, "highHz")?,
            },
            MethodKind::BandStop => PreprocessingMethod::BandStop {
                low_hz: need(low_hz, "lowHz")?,
                high_hz: need(high_hz, "highHz")?,
            },
        })
    }
}

pub trait Preprocessing: Send + Sync {
    fn preprocess(&self, sample: &Sample) -> Result<Sample, MarfError>;
}

pub struct Normalizer;

impl Preprocessing for Normalizer {
    fn preprocess(&self, sample: &Sample) -> Result<Sample, MarfError> {
        if sample.data.is_empty() {
            return Err(MarfError::EmptySample);
        }
        let peak = sample.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let data = if peak == 0.0 {
            sample.data.clone()
        } else {
            sample.data.iter().map(|x| x / peak).collect()
        };
        Ok(Sample {
            data,
            ..sample.clone()
        })
    }
}

/// A band rule for the FFT filter: which frequencies get zeroed.
pub trait FrequencyBand: Send + Sync {
    fn rejects(&self, hz: f64) -> bool;
}

pub struct LowPass {
    pub high_hz: f64,
}

pub struct HighPass {
    pub low_hz: f64,
}

pub struct BandPass {
    pub low_hz: f64,
    pub high_hz: f64,
}

pub struct BandStop {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl FrequencyBand for LowPass {
    fn rejects(&self, hz: f64) -> bool {
        hz > self.high_hz
    }
}

impl FrequencyBand for HighPass {
    fn rejects(&self, hz: f64) -> bool {
        hz < self.low_hz
    }
}

impl FrequencyBand for BandPass {
    fn rejects(&self, hz: f64) -> bool {
        hz < self.low_hz || hz > self.high_hz
    }
}

impl FrequencyBand for BandStop {
    fn rejects(&self, hz: f64) -> bool {
        (self.low_hz..=self.high_hz).contains(&hz)
    }
}

/// Zero-pads to a power of two, transforms, zeroes every bin whose
/// frequency the band rejects (both halves of the spectrum), transforms
/// back and truncates to the original length.
pub struct FftFilter<B: FrequencyBand> {
    band: B,
}

impl<B: FrequencyBand> FftFilter<B> {
    pub fn new(band: B) -> Self {
        Self { band }
    }
}

impl<B: FrequencyBand> Preprocessing for FftFilter<B> {
    fn preprocess(&self, sample: &Sample) -> Result<Sample, MarfError> {
        let len = sample.data.len();
        if len == 0 {
            return Err(MarfError::EmptySample);
        }
        let n = len.next_power_of_two();
        let mut padded = sample.data.clone();
        padded.resize(n, 0.0);
        let mut spectrum = to_complex(&Matrix::row(padded)).into_owned();
        let (re, im) = spectrum.planes_mut();
        fft_in_place(re, im, Direction::Forward)?;
        for k in 0..n {
            let bin = k.min(n - k);
            let hz = bin as f64 * f64::from(sample.rate) / n as f64;
            if self.band.rejects(hz) {
                re[k] = 0.0;
                im[k] = 0.0;
            }
        }
        fft_in_place(re, im, Direction::Inverse)?;
        let (mut data, _) = spectrum.into_planes();
        data.truncate(len);
        Ok(Sample {
            data,
            ..sample.clone()
        })
    }
}

pub struct PreprocessingFactory;

impl PreprocessingFactory {
    /// Build the strategy for `method`, validating cutoffs against the
    /// Nyquist frequency of `rate`.
    pub fn create(
        method: &PreprocessingMethod,
        rate: u32,
    ) -> Result<Box<dyn Preprocessing>, MarfError> {
        let nyquist = f64::from(rate) / 2.0;
        let positive = |what: &str, hz: f64| {
            if hz.is_finite() && hz > 0.0 {
                Ok(())
            } else {
                Err(MarfError::InvalidCutoff(format!(
                    "{what} cutoff {hz} Hz must be positive"
                )))
            }
        };
        let band = |low: f64, high: f64| {
            if low.is_finite() && high.is_finite() && 0.0 < low && low < high && high < nyquist {
                Ok(())
            } else {
                Err(MarfError::InvalidCutoff(format!(
                    "band {low}..{high} Hz must satisfy 0 < low < high < {nyquist}"
                )))
            }
        };
        Ok(match *method {
            PreprocessingMethod::NormalizeOnly => Box::new(Normalizer),
            PreprocessingMethod::LowPass { high_hz } => {
                positive("low-pass", high_hz)?;
                Box::new(FftFilter::new(LowPass { high_hz }))
            }
            PreprocessingMethod::HighPass { low_hz } => {
                positive("high-pass", low_hz)?;
                Box::new(FftFilter::new(HighPass { low_hz }))
            }
            PreprocessingMethod::BandPass { low_hz, high_hz } => {
                band(low_hz, high_hz)?;
                Box::new(FftFilter::new(BandPass { low_hz, high_hz }))
            }
            PreprocessingMethod::BandStop { low_hz, high_hz } => {
                band(low_hz, high_hz)?;
                Box::new(FftFilter::new(BandStop { low_hz, high_hz }))
            }
        })
    }
}

pub fn preprocess(sample: &Sample, method: &PreprocessingMethod) -> Result<Sample, MarfError> {
    PreprocessingFactory::create(method, sample.rate)?.preprocess(sample)
}
