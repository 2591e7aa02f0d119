//! Job compilation: one chain of four stage demands per sample.

use crate::demand::{fnv1a64, Context, Demand, DemandSignature};
use crate::marf::stages::{encode_method, encode_training_set, encode_window};
use crate::tier::{StageInput, StagePayload};

use super::job::{JobMode, JobSpec};
use super::FusionError;

pub const CHAIN_LEN: usize = 4;

#[derive(Debug, Clone)]
pub struct PlannedChain {
    pub sample_id: String,
    /// load, preprocess, feature, then train or classify.
    pub demands: Vec<Demand>,
}

impl PlannedChain {
    pub fn stage(&self, index: usize) -> &str {
        self.demands[index].context().get("stage").unwrap_or("?")
    }
}

#[derive(Debug, Clone)]
pub struct DemandPlan {
    pub mode: JobMode,
    pub chains: Vec<PlannedChain>,
}

impl DemandPlan {
    pub fn demand_count(&self) -> usize {
        self.chains.iter().map(|c| c.demands.len()).sum()
    }

    pub fn chains(&self) -> Vec<Vec<Demand>> {
        self.chains.iter().map(|c| c.demands.clone()).collect()
    }
}

/// Digest of a stage's parameters chained onto its predecessor's, so a
/// change anywhere upstream gives every later stage a new context.
fn params_digest(prev: u64, params: &[u8]) -> u64 {
    let mut bytes = prev.to_le_bytes().to_vec();
    bytes.extend_from_slice(params);
    fnv1a64(&bytes)
}

/// Build the demand chains for `spec`. CLASSIFY jobs use `spec.model`,
/// which must be present and non-empty.
pub fn compile_job(spec: &JobSpec) -> Result<DemandPlan, FusionError> {
    spec.validate()?;
    let method = encode_method(&spec.pipeline.preprocessing()?);
    let window = encode_window(spec.pipeline.window_size);
    let model = match spec.mode {
        JobMode::Classify => {
            let m = spec.model.as_ref().filter(|m| !m.is_empty());
            Some(encode_training_set(m.ok_or_else(|| {
                FusionError::InvalidJob("CLASSIFY needs a non-empty model".into())
            })?))
        }
        JobMode::Train => None,
    };
    let chains = spec
        .samples
        .iter()
        .map(|s| {
            let last = match spec.mode {
                JobMode::Train => (
                    "train",
                    s.subject_id.clone().unwrap_or_default().into_bytes(),
                ),
                JobMode::Classify => ("classify", model.clone().unwrap_or_default()),
            };
            let stages: [(&str, Vec<u8>); CHAIN_LEN] = [
                ("load", s.sample_id.as_bytes().to_vec()),
                ("preprocess", method.clone()),
                ("feature", window.clone()),
                last,
            ];
            let mut demands: Vec<Demand> = Vec::with_capacity(CHAIN_LEN);
            let mut digest = 0u64;
            for (stage, params) in stages {
                digest = params_digest(digest, &params);
                let input = match demands.last() {
                    None => StageInput::Inline(s.wav().map(<[u8]>::to_vec).unwrap_or_default()),
                    Some(prev) => StageInput::Ref(prev.signature()),
                };
                let ctx = Context::new()
                    .with("stage", stage)
                    .with("sampleId", s.sample_id.as_str())
                    .with("paramsDigest", format!("{digest:016x}"));
                demands.push(Demand::procedural(
                    ctx,
                    StagePayload { params, input }.to_bytes(),
                ));
            }
            PlannedChain {
                sample_id: s.sample_id.clone(),
                demands,
            }
        })
        .collect();
    Ok(DemandPlan {
        mode: spec.mode,
        chains,
    })
}

/// Signature of each chain's final demand.
pub fn terminal_signatures(plan: &DemandPlan) -> Vec<DemandSignature> {
    plan.chains
        .iter()
        .filter_map(|c| c.demands.last().map(Demand::signature))
        .collect()
}
