use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};

use parking_lot::{Mutex, RwLock};

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::protocol::*;
use crate::store::{DemandStore, StoreHandler};
use crate::transport::{self, Endpoint, Message, TransportAgent, TransportKind, TransportOptions};

use super::wrapper::{DgtWrapper, DstWrapper};
use super::{
    create_tier_with, Configuration, ExecutorRegistry, Lifecycle, TierError, TierIdentity,
    TierWrapper,
};

/// The node's running DST and the store it owns.
type HostedStore = (Arc<dyn TierWrapper>, Arc<DemandStore>);

/// A host for tiers with one control port. Store requests arriving on
/// the port go to the node's DST, if it runs one.
pub struct Node {
    node_id: String,
    kind: TransportKind,
    base: Configuration,
    executors: ExecutorRegistry,
    alive: AtomicBool,
    tiers: Mutex<BTreeMap<String, Arc<dyn TierWrapper>>>,
    dst: RwLock<Option<HostedStore>>,
    extension: RwLock<Option<Arc<dyn RequestHandler>>>,
    service: Mutex<Option<Service>>,
    endpoint: RwLock<Option<Endpoint>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TierStats {
    pub tier_id: String,
    pub identity: TierIdentity,
    pub lifecycle: Lifecycle,
    pub working: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeStats {
    pub node_id: String,
    pub alive: bool,
    pub tiers: Vec<TierStats>,
    pub invocations: BTreeMap<String, u64>,
}

impl NodeStats {
    pub fn to_kv(&self) -> String {
        let mut out = format!("node.id={}\nnode.alive={}\n", self.node_id, self.alive);
        for t in &self.tiers {
            out += &format!(
                "tier.{}={},{},{}\n",
                t.tier_id, t.identity, t.lifecycle, t.working
            );
        }
        for (stage, n) in &self.invocations {
            out += &format!("exec.{stage}={n}\n");
        }
        out
    }

    pub fn from_kv(text: &str) -> Result<Self, String> {
        let mut s = NodeStats {
            node_id: String::new(),
            alive: false,
            tiers: Vec::new(),
            invocations: BTreeMap::new(),
        };
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("bad stats line {line:?}"))?;
            if k == "node.id" {
                s.node_id = v.to_owned();
            } else if k == "node.alive" {
                s.alive = v.parse().map_err(|_| format!("bad alive flag {v:?}"))?;
            } else if let Some(tier_id) = k.strip_prefix("tier.") {
                let parts: Vec<&str> = v.split(',').collect();
                let [identity, lifecycle, working] = parts[..] else {
                    return Err(format!("bad tier line {line:?}"));
                };
                s.tiers.push(TierStats {
                    tier_id: tier_id.to_owned(),
                    identity: identity.parse()?,
                    lifecycle: lifecycle.parse()?,
                    working: working
                        .parse()
                        .map_err(|_| format!("bad working flag {working:?}"))?,
                });
            } else if let Some(stage) = k.strip_prefix("exec.") {
                s.invocations.insert(
                    stage.to_owned(),
                    v.parse().map_err(|_| format!("bad count {v:?}"))?,
                );
            }
        }
        Ok(s)
    }
}

impl Node {
    /// `base` is copied into every tier this node starts.
    pub fn new(
        node_id: &str,
        kind: TransportKind,
        base: Configuration,
        executors: ExecutorRegistry,
    ) -> Arc<Self> {
        Arc::new(Self {
            node_id: node_id.to_owned(),
            kind,
            base,
            executors,
            alive: AtomicBool::new(true),
            tiers: Mutex::default(),
            dst: RwLock::default(),
            extension: RwLock::default(),
            service: Mutex::default(),
            endpoint: RwLock::default(),
        })
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn executors(&self) -> &ExecutorRegistry {
        &self.executors
    }

    pub fn is_alive(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }

    /// Open the control port. Returns the bound endpoint (a TCP port of 0
    /// is replaced by the one chosen).
    pub fn serve(
        self: &Arc<Self>,
        endpoint: &Endpoint,
        opts: TransportOptions,
    ) -> Result<Endpoint, TierError> {
        let listener = transport::listen(endpoint, opts)?;
        let handler = Arc::new(NodeHandler {
            node: Arc::downgrade(self),
        });
        let service = Service::spawn(&format!("node-{}", self.node_id), listener, handler);
        let bound = service.endpoint().clone();
        *self.service.lock() = Some(service);
        *self.endpoint.write() = Some(bound.clone());
        Ok(bound)
    }

    pub fn endpoint(&self) -> Option<Endpoint> {
        self.endpoint.read().clone()
    }

    /// Handler for control opcodes this node does not serve itself.
    pub fn set_extension(&self, handler: Arc<dyn RequestHandler>) {
        *self.extension.write() = Some(handler);
    }

    /// Create and start a tier. Its configuration is a copy of the node
    /// base overlaid with `overrides`.
    pub fn start_tier(
        &self,
        identity: TierIdentity,
        tier_id: &str,
        overrides: &Configuration,
    ) -> Result<(), TierError> {
        if !self.is_alive() {
            return Err(TierError::NodeDead(self.node_id.clone()));
        }
        let mut config = self.base.clone();
        config.overlay(overrides);
        config.set("tier.id", tier_id);
        let mut tiers = self.tiers.lock();
        if let Some(existing) = tiers.get(tier_id) {
            if existing.lifecycle() == Lifecycle::Running {
                return Err(TierError::IllegalLifecycle {
                    from: Lifecycle::Running,
                    action: "start",
                });
            }
        }
        let tier = create_tier_with(identity, config, self.kind, &self.executors)?;
        tier.start_worker()?;
        if let Some(dst) = tier.as_any().downcast_ref::<DstWrapper>() {
            *self.dst.write() = Some((tier.clone(), dst.store().clone()));
        }
        tiers.insert(tier_id.to_owned(), tier);
        Ok(())
    }

    pub fn stop_tier(&self, tier_id: &str) -> Result<(), TierError> {
        let tier = self
            .tier(tier_id)
            .ok_or_else(|| TierError::UnknownTier(tier_id.to_owned()))?;
        tier.stop_worker()
    }

    pub fn tier(&self, tier_id: &str) -> Option<Arc<dyn TierWrapper>> {
        self.tiers.lock().get(tier_id).cloned()
    }

    pub fn tiers(&self) -> Vec<Arc<dyn TierWrapper>> {
        self.tiers.lock().values().cloned().collect()
    }

    /// The running DST's store, if this node has one.
    pub fn store(&self) -> Option<Arc<DemandStore>> {
        let dst = self.dst.read();
        let (tier, store) = dst.as_ref()?;
        (tier.lifecycle() == Lifecycle::Running).then(|| store.clone())
    }

    /// Run `f` against a running generator tier on this node.
    pub fn with_generator<T>(&self, f: impl FnOnce(&DgtWrapper) -> T) -> Option<T> {
        let tier = self
            .tiers()
            .into_iter()
            .find(|t| t.identity() == TierIdentity::Dgt && t.lifecycle() == Lifecycle::Running)?;
        tier.as_any().downcast_ref::<DgtWrapper>().map(f)
    }

    /// Crash the node: every tier halts without draining. The control
    /// port stays up so the death can be observed.
    pub fn kill(&self) {
        self.alive.store(false, Ordering::SeqCst);
        for t in self.tiers() {
            t.kill();
        }
    }

    /// Stop tiers in an orderly way (generators and workers before the
    /// store) and close the control port.
    pub fn shutdown(&self) {
        let order = [
            TierIdentity::Dgt,
            TierIdentity::Dwt,
            TierIdentity::Gim,
            TierIdentity::Dst,
        ];
        let tiers = self.tiers();
        for identity in order {
            for t in tiers.iter().filter(|t| t.identity() == identity) {
                if t.lifecycle() == Lifecycle::Running {
                    let _ = t.stop_worker();
                }
            }
        }
        if let Some(mut s) = self.service.lock().take() {
            s.shutdown();
        }
    }

    pub fn stats(&self) -> NodeStats {
        NodeStats {
            node_id: self.node_id.clone(),
            alive: self.is_alive(),
            tiers: self
                .tiers
                .lock()
                .values()
                .map(|t| TierStats {
                    tier_id: t.tier_id().to_owned(),
                    identity: t.identity(),
                    lifecycle: t.lifecycle(),
                    working: t.is_working(),
                })
                .collect(),
            invocations: self.executors.invocation_counts(),
        }
    }
}

struct NodeHandler {
    node: Weak<Node>,
}

fn tier_reply(r: Result<(), TierError>) -> Message {
    match r {
        Ok(()) => ok(Vec::new()),
        Err(TierError::UnknownNode(n)) => err(ERR_UNKNOWN_NODE, &n),
        Err(e) => err(ERR_FAILED, &e.to_string()),
    }
}

fn start_request(body: &[u8]) -> Result<(TierIdentity, String, Configuration), DecodeError> {
    let mut d = Decoder::new(body);
    let identity = d
        .str()?
        .parse::<TierIdentity>()
        .map_err(DecodeError::Invalid)?;
    let tier_id = d.string()?;
    let config = Configuration::from_kv(d.str()?);
    d.finish()?;
    Ok((identity, tier_id, config))
}

impl RequestHandler for NodeHandler {
    fn handle(&self, request: Message) -> Option<Message> {
        let node = self.node.upgrade()?;
        let store_request = match &request {
            Message::Demand(_) => true,
            Message::Control { opcode, .. } => StoreHandler::serves(*opcode),
        };
        if store_request {
            return Some(match node.store() {
                Some(store) => StoreHandler::new(store).handle(request)?,
                None => err(
                    ERR_UNSUPPORTED,
                    &format!("node {} has no running store tier", node.node_id),
                ),
            });
        }
        let Message::Control { opcode, body } = &request else {
            return None;
        };
        Some(match *opcode {
            OP_START_TIER => match start_request(body) {
                Ok((identity, tier_id, config)) => {
                    tier_reply(node.start_tier(identity, &tier_id, &config))
                }
                Err(e) => err(ERR_BAD_REQUEST, &e.to_string()),
            },
            OP_STOP_TIER => match Decoder::new(body).str() {
                Ok(tier_id) => tier_reply(node.stop_tier(tier_id)),
                Err(e) => err(ERR_BAD_REQUEST, &e.to_string()),
            },
            OP_KILL => {
                node.kill();
                ok(Vec::new())
            }
            OP_NODE_STATS => ok(node.stats().to_kv().into_bytes()),
            _ => {
                let ext = node.extension.read().clone();
                return ext.and_then(|h| h.handle(request));
            }
        })
    }
}

/// Control-port client for a node.
pub struct NodeClient {
    agent: Mutex<Box<dyn TransportAgent>>,
    endpoint: Endpoint,
}

/// Reply wait for control requests.
const CONTROL_WAIT_MS: u64 = 30_000;

impl NodeClient {
    pub fn connect(endpoint: &Endpoint, opts: TransportOptions) -> Result<Self, TierError> {
        Ok(Self {
            agent: Mutex::new(transport::connect(endpoint, opts)?),
            endpoint: endpoint.clone(),
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// One request/reply exchange with the node.
    pub fn call(&self, opcode: u8, body: Vec<u8>, wait_ms: u64) -> Result<Vec<u8>, TierError> {
        match self.request(opcode, body, wait_ms) {
            Ok(body) => Ok(body),
            Err(Ok(reply)) if reply.code == ERR_UNKNOWN_NODE => {
                Err(TierError::UnknownNode(reply.detail))
            }
            Err(Ok(reply)) => Err(TierError::Remote(reply.detail)),
            Err(Err(e)) => Err(TierError::Transport(e)),
        }
    }

    /// Like [`NodeClient::call`] but keeps the error reply code.
    pub fn request(
        &self,
        opcode: u8,
        body: Vec<u8>,
        wait_ms: u64,
    ) -> Result<Vec<u8>, Result<ErrorReply, transport::TransportError>> {
        let agent = self.agent.lock();
        let r = call(&**agent, opcode, body, wait_ms);
        if matches!(r, Err(Err(transport::TransportError::TimeoutExpired))) {
            // a late reply would be mistaken for the next one
            agent.abort();
        }
        r
    }

    pub fn ping(&self) -> Result<(), TierError> {
        self.call(OP_PING, Vec::new(), CONTROL_WAIT_MS).map(drop)
    }

    pub fn start_tier(
        &self,
        identity: TierIdentity,
        tier_id: &str,
        config: &Configuration,
    ) -> Result<(), TierError> {
        let mut e = Encoder::new();
        e.str(identity.name()).str(tier_id).str(&config.to_kv());
        self.call(OP_START_TIER, e.finish(), CONTROL_WAIT_MS)
            .map(drop)
    }

    pub fn stop_tier(&self, tier_id: &str) -> Result<(), TierError> {
        let mut e = Encoder::new();
        e.str(tier_id);
        self.call(OP_STOP_TIER, e.finish(), CONTROL_WAIT_MS)
            .map(drop)
    }

    pub fn kill(&self) -> Result<(), TierError> {
        self.call(OP_KILL, Vec::new(), CONTROL_WAIT_MS).map(drop)
    }

    pub fn stats(&self) -> Result<NodeStats, TierError> {
        let body = self.call(OP_NODE_STATS, Vec::new(), CONTROL_WAIT_MS)?;
        NodeStats::from_kv(&String::from_utf8_lossy(&body)).map_err(TierError::Remote)
    }
}
