//! Job and result documents (JSON).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::demand::fnv1a64;
use crate::marf::features::DEFAULT_WINDOW;
use crate::marf::stages::encode_training_set;
use crate::marf::{MethodKind, PreprocessingMethod, TrainingSet};

use super::FusionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobMode {
    Train,
    Classify,
}

mod b64 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => s.serialize_some(&STANDARD.encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let text: Option<String> = Option::deserialize(d)?;
        text.map(|t| STANDARD.decode(t.trim()).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleSpec {
    pub sample_id: String,
    /// WAV file contents, base64 in documents.
    #[serde(
        default,
        with = "b64",
        alias = "wav_base64",
        skip_serializing_if = "Option::is_none"
    )]
    pub wav_base64: Option<Vec<u8>>,
    /// WAV file to read instead, relative to the job document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
}

impl SampleSpec {
    pub fn inline(sample_id: &str, wav: Vec<u8>, subject_id: Option<&str>) -> Self {
        Self {
            sample_id: sample_id.to_owned(),
            wav_base64: Some(wav),
            path: None,
            subject_id: subject_id.map(str::to_owned),
        }
    }

    pub fn wav(&self) -> Result<&[u8], FusionError> {
        self.wav_base64.as_deref().ok_or_else(|| {
            FusionError::InvalidJob(format!("sample {:?} has no WAV data", self.sample_id))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PipelineSpec {
    pub method: MethodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high_hz: Option<f64>,
    #[serde(default = "default_window")]
    pub window_size: usize,
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self {
            method: MethodKind::NormalizeOnly,
            low_hz: None,
            high_hz: None,
            window_size: DEFAULT_WINDOW,
        }
    }
}

impl PipelineSpec {
    pub fn with_method(method: PreprocessingMethod, window_size: usize) -> Self {
        let (low_hz, high_hz) = method.cutoffs();
        Self {
            method: method.kind(),
            low_hz,
            high_hz,
            window_size,
        }
    }

    pub fn preprocessing(&self) -> Result<PreprocessingMethod, FusionError> {
        PreprocessingMethod::from_parts(self.method, self.low_hz, self.high_hz)
            .map_err(|e| FusionError::InvalidJob(e.to_string()))
    }
}

fn default_deadline() -> u64 {
    60_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JobSpec {
    pub mode: JobMode,
    pub samples: Vec<SampleSpec>,
    #[serde(default)]
    pub pipeline: PipelineSpec,
    #[serde(default = "default_deadline")]
    pub deadline_ms: u64,
    /// Training set to classify against, or to extend when training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<TrainingSet>,
}

impl JobSpec {
    pub fn from_json(text: &str) -> Result<Self, FusionError> {
        serde_json::from_str(text)
            .map_err(|e| FusionError::InvalidJob(format!("job document: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("job spec serializes")
    }

    /// Read a job document and inline every sample given by path.
    pub fn load(path: &Path) -> Result<Self, FusionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FusionError::Io(format!("{}: {e}", path.display())))?;
        let mut spec = Self::from_json(&text)?;
        spec.inline_paths(path.parent().unwrap_or(Path::new(".")))?;
        Ok(spec)
    }

    pub fn inline_paths(&mut self, base: &Path) -> Result<(), FusionError> {
        for s in &mut self.samples {
            if s.wav_base64.is_none() {
                if let Some(p) = s.path.take() {
                    let full = base.join(&p);
                    let bytes = std::fs::read(&full)
                        .map_err(|e| FusionError::Io(format!("{}: {e}", full.display())))?;
                    s.wav_base64 = Some(bytes);
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.samples.is_empty() {
            return Err(FusionError::EmptyJob);
        }
        let w = self.pipeline.window_size;
        if w < 2 || !w.is_power_of_two() {
            return Err(FusionError::InvalidJob(format!(
                "windowSize {w} is not a power of two"
            )));
        }
        self.pipeline.preprocessing()?;
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(FusionError::InvalidJob(format!(
                    "duplicate sampleId {:?}",
                    s.sample_id
                )));
            }
            s.wav()?;
            if self.mode == JobMode::Train && s.subject_id.is_none() {
                return Err(FusionError::InvalidJob(format!(
                    "TRAIN sample {:?} has no subjectId",
                    s.sample_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SampleStatus {
    Ok,
    Failed,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleResult {
    pub status: SampleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    /// Stage that failed or stalled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl SampleResult {
    pub fn ok(subject_id: Option<String>, distance: Option<f64>) -> Self {
        Self {
            status: SampleStatus::Ok,
            subject_id,
            distance,
            stage: None,
            detail: None,
        }
    }

    pub fn failed(stage: &str, detail: String) -> Self {
        Self {
            status: SampleStatus::Failed,
            subject_id: None,
            distance: None,
            stage: Some(stage.into()),
            detail: Some(detail),
        }
    }

    pub fn stalled(stage: &str) -> Self {
        Self {
            status: SampleStatus::Stalled,
            subject_id: None,
            distance: None,
            stage: Some(stage.into()),
            detail: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JobStats {
    /// Demands the runtime had to compute (written and not already cached).
    pub demands_executed: u64,
    pub cache_hits: u64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JobResult {
    pub mode: JobMode,
    pub results: BTreeMap<String, SampleResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<TrainingSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_digest: Option<String>,
    #[serde(default)]
    pub stalled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<JobStats>,
}

/// Hex digest of a training set's binary form.
pub fn model_digest(ts: &TrainingSet) -> String {
    format!("{:016x}", fnv1a64(&encode_training_set(ts)))
}

impl JobResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("job result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FusionError> {
        serde_json::from_str(text)
            .map_err(|e| FusionError::InvalidJob(format!("result document: {e}")))
    }

    /// The result without run statistics, for comparing runs.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.stats = None;
        serde_json::to_string(&c).expect("job result serializes")
    }

    /// `(sampleId, stage, detail)` for every failed sample.
    pub fn failures(&self) -> Vec<(&str, &str, &str)> {
        self.results
            .iter()
            .filter(|(_, r)| r.status == SampleStatus::Failed)
            .map(|(id, r)| {
                (
                    id.as_str(),
                    r.stage.as_deref().unwrap_or(""),
                    r.detail.as_deref().unwrap_or(""),
                )
            })
            .collect()
    }

    pub fn is_success(&self) -> bool {
        !self.stalled && self.results.values().all(|r| r.status == SampleStatus::Ok)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_shape() {
        let doc = r#"{
            "mode": "CLASSIFY",
            "samples": [{"sampleId": "a", "wav_base64": "UklGRg=="}, {"sampleId": "b", "path": "b.wav"}],
            "pipeline": {"method": "BAND_PASS", "lowHz": 100, "highHz": 3000, "windowSize": 256},
            "deadlineMs": 5000
        }"#;
        let spec = JobSpec::from_json(doc).unwrap();
        assert_eq!(spec.samples[0].wav_base64.as_deref(), Some(&b"RIFF"[..]));
        assert_eq!(spec.samples[1].path.as_deref(), Some(Path::new("b.wav")));
        assert_eq!(
            spec.pipeline.preprocessing().unwrap(),
            PreprocessingMethod::BandPass {
                low_hz: 100.0,
                high_hz: 3000.0
            }
        );
        assert_eq!((spec.pipeline.window_size, spec.deadline_ms), (256, 5000));
        let back = JobSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn validation() {
        let mut spec = JobSpec {
            mode: JobMode::Train,
            samples: vec![],
            pipeline: PipelineSpec::default(),
            deadline_ms: 1000,
            model: None,
        };
        assert!(matches!(spec.validate(), Err(FusionError::EmptyJob)));
        spec.samples.push(SampleSpec::inline("a", vec![1], None));
        assert!(matches!(spec.validate(), Err(FusionError::InvalidJob(_))));
        spec.samples[0].subject_id = Some("x".into());
        spec.validate().unwrap();
        spec.samples
            .push(SampleSpec::inline("a", vec![1], Some("y")));
        assert!(matches!(spec.validate(), Err(FusionError::InvalidJob(_))));
        spec.samples.pop();
        spec.pipeline.window_size = 100;
        assert!(matches!(spec.validate(), Err(FusionError::InvalidJob(_))));
    }

    #[test]
    fn canonical_form_drops_stats() {
        let mut r = JobResult {
            mode: JobMode::Classify,
            results: BTreeMap::from([(
                "s".to_owned(),
                SampleResult::ok(Some("alice".into()), Some(0.5)),
            )]),
            model: None,
            model_digest: None,
            stalled: false,
            stats: Some(JobStats {
                demands_executed: 4,
                cache_hits: 0,
                elapsed_ms: 12,
            }),
        };
        let a = r.canonical_json();
        r.stats = Some(JobStats::default());
        assert_eq!(a, r.canonical_json());
        assert!(!a.contains("stats"));
        assert_eq!(JobResult::from_json(&r.to_json()).unwrap(), r);
        assert!(r.is_success());
    }
}
