//! Binary forms of pipeline values and the stage executors built on them.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::tier::ExecutorRegistry;

use super::classifier::SubjectModel;
use super::preprocess::MethodKind;
use super::{
    extract_features, load_sample, preprocess, Classification, FeatureVector, MarfError,
    PreprocessingMethod, Sample, TrainingSet,
};

pub const SAMPLE_TAG: u8 = 0x11;
pub const FEATURES_TAG: u8 = 0x12;
pub const TRAINING_SET_TAG: u8 = 0x13;
pub const CLASSIFICATION_TAG: u8 = 0x14;
pub const METHOD_TAG: u8 = 0x15;

pub const STAGE_NAMES: [&str; 5] = ["load", "preprocess", "feature", "train", "classify"];

pub fn encode_sample(s: &Sample) -> Vec<u8> {
    let mut e = Encoder::with_tag(SAMPLE_TAG);
    e.str(&s.id).u32(s.rate).f64s(&s.data);
    e.finish()
}

pub fn decode_sample(bytes: &[u8]) -> Result<Sample, DecodeError> {
    let mut d = Decoder::new(bytes);
    d.expect_tag(SAMPLE_TAG, "sample")?;
    let s = Sample {
        id: d.string()?,
        rate: d.u32()?,
        data: d.f64s()?,
    };
    d.finish()?;
    Ok(s)
}

pub fn encode_features(fv: &FeatureVector) -> Vec<u8> {
    let mut e = Encoder::with_tag(FEATURES_TAG);
    e.f64s(&fv.values);
    e.finish()
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureVector, DecodeError> {
    let mut d = Decoder::new(bytes);
    d.expect_tag(FEATURES_TAG, "feature vector")?;
    let fv = FeatureVector { values: d.f64s()? };
    d.finish()?;
    Ok(fv)
}

pub fn encode_training_set(ts: &TrainingSet) -> Vec<u8> {
    let mut e = Encoder::with_tag(TRAINING_SET_TAG);
    e.u32(ts.subjects.len() as u32);
    for (id, m) in &ts.subjects {
        e.str(id).u64(m.count).f64s(&m.mean);
    }
    e.finish()
}

pub fn decode_training_set(bytes: &[u8]) -> Result<TrainingSet, DecodeError> {
    let mut d = Decoder::new(bytes);
    d.expect_tag(TRAINING_SET_TAG, "training set")?;
    let n = d.u32()?;
    let mut subjects = BTreeMap::new();
    for _ in 0..n {
        let id = d.string()?;
        let model = SubjectModel {
            count: d.u64()?,
            mean: d.f64s()?,
        };
        if model.count == 0 {
            return Err(DecodeError::Invalid(format!(
                "subject {id:?} has zero samples"
            )));
        }
        if subjects.insert(id.clone(), model).is_some() {
            return Err(DecodeError::Invalid(format!("duplicate subject {id:?}")));
        }
    }
    d.finish()?;
    Ok(TrainingSet { subjects })
}

pub fn encode_classification(c: &Classification) -> Vec<u8> {
    let mut e = Encoder::with_tag(CLASSIFICATION_TAG);
    e.str(&c.subject).f64(c.distance);
    e.finish()
}

pub fn decode_classification(bytes: &[u8]) -> Result<Classification, DecodeError> {
    let mut d = Decoder::new(bytes);
    d.expect_tag(CLASSIFICATION_TAG, "classification")?;
    let c = Classification {
        subject: d.string()?,
        distance: d.f64()?,
    };
    d.finish()?;
    Ok(c)
}

fn kind_code(k: MethodKind) -> u8 {
    match k {
        MethodKind::NormalizeOnly => 0,
        MethodKind::LowPass => 1,
        MethodKind::HighPass => 2,
        MethodKind::BandPass => 3,
        MethodKind::BandStop => 4,
    }
}

pub fn encode_method(m: &PreprocessingMethod) -> Vec<u8> {
    let (low, high) = m.cutoffs();
    let mut e = Encoder::with_tag(METHOD_TAG);
    e.u8(kind_code(m.kind()));
    for v in [low, high] {
        match v {
            Some(hz) => e.u8(1).f64(hz),
            None => e.u8(0),
        };
    }
    e.finish()
}

pub fn decode_method(bytes: &[u8]) -> Result<PreprocessingMethod, DecodeError> {
    let mut d = Decoder::new(bytes);
    d.expect_tag(METHOD_TAG, "preprocessing method")?;
    let kind = match d.u8()? {
        0 => MethodKind::NormalizeOnly,
        1 => MethodKind::LowPass,
        2 => MethodKind::HighPass,
        3 => MethodKind::BandPass,
        4 => MethodKind::BandStop,
        other => {
            return Err(DecodeError::Invalid(format!(
                "preprocessing method {other}"
            )))
        }
    };
    let mut cutoff = || -> Result<Option<f64>, DecodeError> {
        Ok(match d.u8()? {
            0 => None,
            _ => Some(d.f64()?),
        })
    };
    let (low, high) = (cutoff()?, cutoff()?);
    d.finish()?;
    PreprocessingMethod::from_parts(kind, low, high)
        .map_err(|e| DecodeError::Invalid(e.to_string()))
}

pub fn encode_window(window: usize) -> Vec<u8> {
    (window as u32).to_le_bytes().to_vec()
}

fn decode_window(params: &[u8]) -> Result<usize, MarfError> {
    let mut d = Decoder::new(params);
    let w = d.u32()?;
    d.finish()?;
    Ok(w as usize)
}

fn text(params: &[u8]) -> Result<&str, MarfError> {
    std::str::from_utf8(params).map_err(|_| MarfError::Decode(DecodeError::BadUtf8(0)))
}

/// load: params = sample id (UTF-8), input = WAV file.
pub fn run_load(params: &[u8], input: &[u8]) -> Result<Vec<u8>, MarfError> {
    Ok(encode_sample(&load_sample(input, text(params)?)?))
}

/// preprocess: params = encoded method, input = sample.
pub fn run_preprocess(params: &[u8], input: &[u8]) -> Result<Vec<u8>, MarfError> {
    Ok(encode_sample(&preprocess(
        &decode_sample(input)?,
        &decode_method(params)?,
    )?))
}

/// feature: params = window size (u32), input = sample.
pub fn run_feature(params: &[u8], input: &[u8]) -> Result<Vec<u8>, MarfError> {
    Ok(encode_features(&extract_features(
        &decode_sample(input)?,
        decode_window(params)?,
    )?))
}

/// train: params = subject id (UTF-8), input = feature vector. Yields a
/// one-sample training set; sets are merged by the caller.
pub fn run_train(params: &[u8], input: &[u8]) -> Result<Vec<u8>, MarfError> {
    let mut ts = TrainingSet::new();
    ts.train(&decode_features(input)?, text(params)?)?;
    Ok(encode_training_set(&ts))
}

/// classify: params = encoded training set, input = feature vector.
pub fn run_classify(params: &[u8], input: &[u8]) -> Result<Vec<u8>, MarfError> {
    let ts = decode_training_set(params)?;
    Ok(encode_classification(
        &ts.classify(&decode_features(input)?)?,
    ))
}

type StageFn = fn(&[u8], &[u8]) -> Result<Vec<u8>, MarfError>;

/// The five pipeline stages as named executors.
pub fn stage_executors() -> ExecutorRegistry {
    let stages: [(&str, StageFn); 5] = [
        ("load", run_load),
        ("preprocess", run_preprocess),
        ("feature", run_feature),
        ("train", run_train),
        ("classify", run_classify),
    ];
    let mut r = ExecutorRegistry::new();
    for (name, f) in stages {
        r.register(
            name,
            Arc::new(move |p: &[u8], i: &[u8]| f(p, i).map_err(|e| e.to_string())),
        );
    }
    r
}
