//! Tiers and the nodes that host them: generator (DGT), store (DST),
//! worker (DWT) and instance manager (GIM).

mod config;
mod executor;
mod generator;
mod gim;
mod node;
mod options;
mod worker;
mod wrapper;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::StoreError;
use crate::transport::TransportError;

pub use config::Configuration;
pub use executor::{
    decode_error_record, error_record, Executor, ExecutorRegistry, StageInput, StagePayload,
    ERROR_RECORD_TAG,
};
pub use generator::{generate, ChainOutcome, ChainStatus, GeneratorOptions};
pub use gim::{gim_allocate, Allocation, NodeDescriptor, Placement};
pub use node::{Node, NodeClient, NodeStats, TierStats};
pub use options::{options, parse_option_file, OptionError, OptionsRegistry};
pub use wrapper::{
    create_tier, create_tier_with, factory_for, DgtWrapper, DstWrapper, DwtWrapper, GimWrapper,
    Lifecycle, TierFactory, TierWrapper,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TierIdentity {
    Dgt,
    Dwt,
    Dst,
    Gim,
}

impl TierIdentity {
    pub const ALL: [TierIdentity; 4] = [
        TierIdentity::Dst,
        TierIdentity::Gim,
        TierIdentity::Dgt,
        TierIdentity::Dwt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TierIdentity::Dgt => "DGT",
            TierIdentity::Dwt => "DWT",
            TierIdentity::Dst => "DST",
            TierIdentity::Gim => "GIM",
        }
    }
}

impl fmt::Display for TierIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TierIdentity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TierIdentity::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown tier identity {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TierError {
    #[error("missing configuration key {0:?}")]
    MissingConfig(String),
    #[error("invalid value for {key:?}: {detail}")]
    InvalidConfig { key: String, detail: String },
    #[error("cannot {action} a tier that is {from:?}")]
    IllegalLifecycle {
        from: Lifecycle,
        action: &'static str,
    },
    #[error("no live node can host {0}")]
    Unsatisfiable(TierIdentity),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("unknown tier {0:?}")]
    UnknownTier(String),
    #[error("node {0:?} is dead")]
    NodeDead(String),
    #[error("job did not finish before its deadline")]
    JobStalled,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{0}")]
    Remote(String),
}
