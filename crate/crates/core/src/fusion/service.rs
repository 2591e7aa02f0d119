//! Instance-manager requests served on the manager node's control port,
//! and the client for them.

use std::sync::Weak;

use crate::codec::{Decoder, Encoder};
use crate::protocol::*;
use crate::tier::{NodeClient, TierError};
use crate::transport::{Endpoint, Message, TransportOptions};

use super::instance::Instance;
use super::job::{JobResult, JobSpec};
use super::FusionError;

pub struct GimService {
    instance: Weak<Instance>,
}

impl GimService {
    pub fn new(instance: Weak<Instance>) -> Self {
        Self { instance }
    }

    fn submit(instance: &Instance, body: &[u8]) -> Message {
        let spec = match std::str::from_utf8(body)
            .map_err(|e| e.to_string())
            .and_then(|t| JobSpec::from_json(t).map_err(|e| e.to_string()))
        {
            Ok(s) => s,
            Err(e) => return err(ERR_BAD_REQUEST, &e),
        };
        match instance.run_job(&spec) {
            Ok(r) => ok(r.to_json().into_bytes()),
            Err(FusionError::JobStalled(partial)) => ok(partial.to_json().into_bytes()),
            Err(e @ (FusionError::EmptyJob | FusionError::InvalidJob(_))) => {
                err(ERR_BAD_REQUEST, &e.to_string())
            }
            Err(e) => err(ERR_FAILED, &e.to_string()),
        }
    }
}

impl crate::protocol::RequestHandler for GimService {
    fn handle(&self, request: Message) -> Option<Message> {
        let Message::Control { opcode, body } = &request else {
            return None;
        };
        let instance = self.instance.upgrade()?;
        Some(match *opcode {
            OP_SUBMIT_JOB => Self::submit(&instance, body),
            OP_INJECT_FAULT => match Decoder::new(body).str() {
                Ok(node_id) => match instance.inject_fault(node_id) {
                    Ok(()) => ok(Vec::new()),
                    Err(FusionError::Tier(TierError::UnknownNode(n))) => err(ERR_UNKNOWN_NODE, &n),
                    Err(e) => err(ERR_FAILED, &e.to_string()),
                },
                Err(e) => err(ERR_BAD_REQUEST, &e.to_string()),
            },
            OP_INSTANCE_STATS => ok(instance.stats_kv().into_bytes()),
            _ => return None,
        })
    }
}

/// Extra reply wait beyond a job's own deadline.
const SUBMIT_SLACK_MS: u64 = 30_000;

/// Client for a manager node.
pub struct GimClient {
    node: NodeClient,
}

impl GimClient {
    pub fn connect(endpoint: &Endpoint, opts: TransportOptions) -> Result<Self, FusionError> {
        Ok(Self {
            node: NodeClient::connect(endpoint, opts)?,
        })
    }

    /// Run a job on the instance. A stalled job comes back with
    /// `stalled` set rather than as an error.
    pub fn submit(&self, spec: &JobSpec) -> Result<JobResult, FusionError> {
        let wait = spec.deadline_ms + SUBMIT_SLACK_MS;
        match self
            .node
            .request(OP_SUBMIT_JOB, spec.to_json().into_bytes(), wait)
        {
            Ok(body) => JobResult::from_json(&String::from_utf8_lossy(&body)),
            Err(Ok(reply)) if reply.code == ERR_BAD_REQUEST => {
                Err(FusionError::InvalidJob(reply.detail))
            }
            Err(Ok(reply)) => Err(FusionError::JobFailed(reply.detail)),
            Err(Err(e)) => Err(TierError::Transport(e).into()),
        }
    }

    pub fn inject_fault(&self, node_id: &str) -> Result<(), FusionError> {
        let mut e = Encoder::new();
        e.str(node_id);
        self.node.call(OP_INJECT_FAULT, e.finish(), 30_000)?;
        Ok(())
    }

    /// `key=value` stats. Nodes that do not run the manager answer with
    /// their own node and store counters instead.
    pub fn stats(&self) -> Result<String, FusionError> {
        match self.node.call(OP_INSTANCE_STATS, Vec::new(), 30_000) {
            Ok(body) => Ok(String::from_utf8_lossy(&body).into_owned()),
            Err(TierError::Remote(_)) => {
                let mut out = String::new();
                if let Ok(body) = self.node.call(OP_STATS, Vec::new(), 30_000) {
                    String::from_utf8_lossy(&body)
                        .lines()
                        .for_each(|l| out += &format!("store.{l}\n"));
                }
                out += &self.node.stats()?.to_kv();
                Ok(out)
            }
            Err(e) => Err(e.into()),
        }
    }
}
