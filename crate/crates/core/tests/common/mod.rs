//! Shared fixtures: the synthetic two-speaker corpus, a direct-call
//! pipeline oracle and a naive DFT.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use edugrid::fusion::{
    model_digest, JobMode, JobResult, JobSpec, PipelineSpec, SampleResult, SampleSpec,
};
use edugrid::marf::PreprocessingMethod;
use edugrid::marf::{encode_pcm16, extract_features, load_sample, preprocess, synth};
use edugrid::tier::{Executor, ExecutorRegistry};

pub const RATE: u32 = 8000;
pub const LEN: usize = 4096;

/// Tone-family WAV: `hz` fundamental, optionally noisy at 20 dB SNR.
pub fn tone_wav(hz: f64, noise_seed: Option<u64>) -> Vec<u8> {
    let clean = synth::tone(hz, RATE, LEN, 0.5);
    let data = match noise_seed {
        Some(seed) => synth::with_noise(&clean, 20.0, seed),
        None => clean,
    };
    encode_pcm16(RATE, &data)
}

pub fn pipeline() -> PipelineSpec {
    PipelineSpec::with_method(
        PreprocessingMethod::BandPass {
            low_hz: 100.0,
            high_hz: 3500.0,
        },
        256,
    )
}

/// Clean tones of each speaker, for training.
pub fn training_job() -> JobSpec {
    JobSpec {
        mode: JobMode::Train,
        samples: vec![
            SampleSpec::inline("train-440", tone_wav(440.0, None), Some("speaker-440")),
            SampleSpec::inline("train-2000", tone_wav(2000.0, None), Some("speaker-2000")),
            SampleSpec::inline("train-450", tone_wav(450.0, None), Some("speaker-440")),
            SampleSpec::inline("train-1950", tone_wav(1950.0, None), Some("speaker-2000")),
        ],
        pipeline: pipeline(),
        deadline_ms: 30_000,
        model: None,
    }
}

/// The fixed four-sample classify job: two noisy variants per speaker.
pub fn classify_job() -> JobSpec {
    JobSpec {
        mode: JobMode::Classify,
        samples: vec![
            SampleSpec::inline("a1", tone_wav(440.0, Some(1)), None),
            SampleSpec::inline("a2", tone_wav(445.0, Some(2)), None),
            SampleSpec::inline("b1", tone_wav(2000.0, Some(3)), None),
            SampleSpec::inline("b2", tone_wav(2010.0, Some(4)), None),
        ],
        pipeline: pipeline(),
        deadline_ms: 30_000,
        model: Some(
            oracle(&training_job())
                .model
                .expect("training yields a model"),
        ),
    }
}

pub fn expected_speaker(sample_id: &str) -> &'static str {
    if sample_id.starts_with('a') {
        "speaker-440"
    } else {
        "speaker-2000"
    }
}

/// The job computed by calling the pipeline functions directly, with no
/// runtime in between. Stats are left out.
pub fn oracle(spec: &JobSpec) -> JobResult {
    let method = spec.pipeline.preprocessing().expect("valid method");
    let mut model = spec
        .model
        .clone()
        .filter(|_| spec.mode == JobMode::Train)
        .unwrap_or_default();
    let mut results = BTreeMap::new();
    for s in &spec.samples {
        let mut run = || -> Result<(String, SampleResult), String> {
            let sample = load_sample(s.wav_base64.as_deref().unwrap_or_default(), &s.sample_id)
                .map_err(|e| format!("load|{e}"))?;
            let filtered = preprocess(&sample, &method).map_err(|e| format!("preprocess|{e}"))?;
            let fv = extract_features(&filtered, spec.pipeline.window_size)
                .map_err(|e| format!("feature|{e}"))?;
            match spec.mode {
                JobMode::Train => {
                    let subject = s.subject_id.clone().unwrap_or_default();
                    model
                        .train(&fv, &subject)
                        .map_err(|e| format!("train|{e}"))?;
                    Ok((s.sample_id.clone(), SampleResult::ok(Some(subject), None)))
                }
                JobMode::Classify => {
                    let c = spec
                        .model
                        .as_ref()
                        .expect("model")
                        .classify(&fv)
                        .map_err(|e| format!("classify|{e}"))?;
                    Ok((
                        s.sample_id.clone(),
                        SampleResult::ok(Some(c.subject), Some(c.distance)),
                    ))
                }
            }
        };
        let (id, r) = run().unwrap_or_else(|e| {
            let (stage, detail) = e.split_once('|').unwrap();
            (
                s.sample_id.clone(),
                SampleResult::failed(stage, detail.to_owned()),
            )
        });
        results.insert(id, r);
    }
    let trained = spec.mode == JobMode::Train;
    JobResult {
        mode: spec.mode,
        results,
        model_digest: trained.then(|| model_digest(&model)),
        model: trained.then_some(model),
        stalled: false,
        stats: None,
    }
}

/// O(n^2) DFT with the same sign convention as the library transform:
/// forward uses exp(+2 pi i jk / n) unscaled.
pub fn naive_dft(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = re.len();
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for k in 0..n {
        let (mut sr, mut si) = (0.0, 0.0);
        for j in 0..n {
            let angle = 2.0 * PI * ((j * k) % n) as f64 / n as f64;
            let (s, c) = angle.sin_cos();
            sr += re[j] * c - im[j] * s;
            si += re[j] * s + im[j] * c;
        }
        out_re[k] = sr;
        out_im[k] = si;
    }
    (out_re, out_im)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Every stage sleeps `ms` before running, so jobs last long enough to
/// interrupt.
pub fn slow_executors(ms: u64) -> ExecutorRegistry {
    let mut r = edugrid::marf::stage_executors();
    r.wrap_all(|_, inner: Executor| {
        Arc::new(move |p: &[u8], i: &[u8]| {
            thread::sleep(Duration::from_millis(ms));
            inner(p, i)
        })
    });
    r
}
