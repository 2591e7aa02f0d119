//! Recognition jobs on the tier runtime: job documents, compilation into
//! per-sample demand chains, running instances and healing.

pub mod compile;
pub mod instance;
pub mod job;
pub mod service;

use thiserror::Error;

use crate::store::StoreError;
use crate::tier::TierError;

pub use compile::{compile_job, terminal_signatures, DemandPlan, PlannedChain, CHAIN_LEN};
pub use instance::{monitor_and_heal, HealEvent, HealPolicy, Instance, NodeConfig, TopologyConfig};
pub use job::{
    model_digest, JobMode, JobResult, JobSpec, JobStats, PipelineSpec, SampleResult, SampleSpec,
    SampleStatus,
};
pub use service::{GimClient, GimService};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("job has no samples")]
    EmptyJob,
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("job did not finish before its deadline")]
    JobStalled(Box<job::JobResult>),
    /// The manager could not run the job.
    #[error("job failed: {0}")]
    JobFailed(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Tier(#[from] TierError),
}

impl From<StoreError> for FusionError {
    fn from(e: StoreError) -> Self {
        FusionError::Tier(TierError::Store(e))
    }
}
