//! A running instance: nodes, the tier allocation over them, the current
//! model and the healing loop.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::{self, Clock};
use crate::diag;
use crate::marf::stages::{decode_classification, decode_training_set};
use crate::marf::TrainingSet;
use crate::store::{RemoteStore, StoreApi, DEFAULT_LEASE_MS};
use crate::tier::{
    create_tier_with, gim_allocate, Allocation, ChainStatus, Configuration, DgtWrapper,
    ExecutorRegistry, Node, NodeClient, NodeDescriptor, NodeStats, TierError, TierIdentity,
};
use crate::transport::{Endpoint, TransportKind, TransportOptions};

use super::compile::compile_job;
use super::job::{model_digest, JobMode, JobResult, JobSpec, JobStats, SampleResult};
use super::service::GimService;
use super::FusionError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeConfig {
    pub node_id: String,
    #[serde(default = "default_host")]
    pub host: String,
    /// 0 picks a free port when the whole instance runs in one process.
    #[serde(default)]
    pub port: u16,
    #[serde(alias = "hostedTiers")]
    pub tiers: Vec<TierIdentity>,
}

fn default_host() -> String {
    "127.0.0.1".into()
}

fn default_lease() -> u64 {
    DEFAULT_LEASE_MS
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TopologyConfig {
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub replication: BTreeMap<TierIdentity, usize>,
    #[serde(default = "default_lease")]
    pub lease_ms: u64,
    #[serde(default = "default_kind")]
    pub transport_kind: TransportKind,
    #[serde(default = "yes")]
    pub replace_nodes: bool,
}

fn default_kind() -> TransportKind {
    TransportKind::Local
}

impl TopologyConfig {
    pub fn from_json(text: &str) -> Result<Self, FusionError> {
        let t: Self = serde_json::from_str(text)
            .map_err(|e| FusionError::Config(format!("topology: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    /// Every tier on one node.
    pub fn single_node(kind: TransportKind) -> Self {
        Self {
            nodes: vec![NodeConfig {
                node_id: "n0".into(),
                host: default_host(),
                port: 0,
                tiers: TierIdentity::ALL.to_vec(),
            }],
            replication: BTreeMap::new(),
            lease_ms: DEFAULT_LEASE_MS,
            transport_kind: kind,
            replace_nodes: true,
        }
    }

    /// A control node (store, manager, generator) plus `workers` worker
    /// nodes, with one worker tier per worker node.
    pub fn spread(kind: TransportKind, workers: usize) -> Self {
        let mut nodes = vec![NodeConfig {
            node_id: "n0".into(),
            host: default_host(),
            port: 0,
            tiers: vec![TierIdentity::Dst, TierIdentity::Gim, TierIdentity::Dgt],
        }];
        for i in 1..=workers {
            nodes.push(NodeConfig {
                node_id: format!("n{i}"),
                host: default_host(),
                port: 0,
                tiers: vec![TierIdentity::Dwt],
            });
        }
        Self {
            nodes,
            replication: BTreeMap::from([(TierIdentity::Dwt, workers.max(1))]),
            lease_ms: DEFAULT_LEASE_MS,
            transport_kind: kind,
            replace_nodes: true,
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.nodes.is_empty() {
            return Err(FusionError::Config("topology has no nodes".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for n in &self.nodes {
            if n.node_id.is_empty() || !seen.insert(n.node_id.as_str()) {
                return Err(FusionError::Config(format!(
                    "bad or duplicate nodeId {:?}",
                    n.node_id
                )));
            }
        }
        if self.lease_ms == 0 {
            return Err(FusionError::Config("leaseMs must be positive".into()));
        }
        self.allocate(None).map(drop)
    }

    fn endpoint(&self, n: &NodeConfig, bus_prefix: Option<&str>) -> Result<Endpoint, FusionError> {
        let e = match (self.transport_kind, bus_prefix) {
            (TransportKind::Local, Some(prefix)) => {
                Endpoint::local(format!("{prefix}/{}", n.node_id))
            }
            (TransportKind::Local, None) => Endpoint::local(n.node_id.clone()),
            (TransportKind::Tcp, _) => Endpoint::tcp(n.host.clone(), n.port),
        };
        e.map_err(|e| FusionError::Config(e.to_string()))
    }

    /// Allocation over the configured endpoints (or the bound ones).
    pub fn allocate(&self, bound: Option<&[Endpoint]>) -> Result<Allocation, FusionError> {
        let descriptors = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let endpoint = match bound {
                    Some(b) => b[i].clone(),
                    None => self.endpoint(n, None)?,
                };
                Ok(NodeDescriptor::new(
                    n.node_id.clone(),
                    endpoint,
                    n.tiers.clone(),
                ))
            })
            .collect::<Result<Vec<_>, FusionError>>()?;
        Ok(gim_allocate(&descriptors, &self.replication)?)
    }

    /// The node that runs the instance manager.
    pub fn manager_node(&self) -> Result<String, FusionError> {
        let a = self.allocate(None)?;
        Ok(a.placements(TierIdentity::Gim)[0].node_id.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HealPolicy {
    pub lease_ms: u64,
    pub replace_nodes: bool,
    /// Pause between sweeps.
    pub sweep_ms: u64,
}

impl HealPolicy {
    pub fn new(lease_ms: u64, replace_nodes: bool) -> Self {
        Self {
            lease_ms,
            replace_nodes,
            sweep_ms: (lease_ms / 4).clamp(10, 500),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "camelCase")]
pub enum HealEvent {
    LeaseReverted {
        count: usize,
    },
    NodeDead {
        node_id: String,
    },
    Reroute {
        identity: TierIdentity,
        tier_id: String,
        from: String,
        to: String,
    },
    RerouteFailed {
        tier_id: String,
        detail: String,
    },
    /// No live node can take over; the instance cannot recover.
    Unsatisfiable {
        identity: TierIdentity,
    },
}

impl fmt::Display for HealEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HealEvent::LeaseReverted { count } => {
                write!(f, "lease expiry returned {count} demand(s) to pending")
            }
            HealEvent::NodeDead { node_id } => write!(f, "node {node_id} is dead"),
            HealEvent::Reroute {
                identity,
                tier_id,
                from,
                to,
            } => {
                write!(f, "{identity} tier {tier_id} moved from {from} to {to}")
            }
            HealEvent::RerouteFailed { tier_id, detail } => {
                write!(f, "could not move tier {tier_id}: {detail}")
            }
            HealEvent::Unsatisfiable { identity } => {
                write!(f, "no live node can host {identity}; instance degraded")
            }
        }
    }
}

/// A node as the instance sees it: in this process, or behind its control port.
struct NodeHandle {
    node_id: String,
    endpoint: Endpoint,
    local: Option<Arc<Node>>,
    client: Mutex<Option<NodeClient>>,
    opts: TransportOptions,
}

impl NodeHandle {
    fn remote<T>(
        &self,
        f: impl FnOnce(&NodeClient) -> Result<T, TierError>,
    ) -> Result<T, TierError> {
        let mut slot = self.client.lock();
        if slot.is_none() {
            *slot = Some(NodeClient::connect(&self.endpoint, self.opts)?);
        }
        let r = f(slot.as_ref().expect("client connected"));
        if matches!(r, Err(TierError::Transport(_))) {
            *slot = None;
        }
        r
    }

    fn start_tier(
        &self,
        identity: TierIdentity,
        tier_id: &str,
        overrides: &Configuration,
    ) -> Result<(), TierError> {
        match &self.local {
            Some(n) => n.start_tier(identity, tier_id, overrides),
            None => self.remote(|c| c.start_tier(identity, tier_id, overrides)),
        }
    }

    fn kill(&self) -> Result<(), TierError> {
        match &self.local {
            Some(n) => {
                n.kill();
                Ok(())
            }
            None => self.remote(NodeClient::kill),
        }
    }

    fn stats(&self) -> Result<NodeStats, TierError> {
        match &self.local {
            Some(n) => Ok(n.stats()),
            None => self.remote(NodeClient::stats),
        }
    }

    /// Unreachable nodes count as dead.
    fn is_alive(&self) -> bool {
        match &self.local {
            Some(n) => n.is_alive(),
            None => self.stats().map(|s| s.alive).unwrap_or(false),
        }
    }
}

struct Monitor {
    stop: Arc<AtomicBool>,
    handle: JoinHandle<()>,
}

pub struct Instance {
    topology: TopologyConfig,
    base: Configuration,
    executors: ExecutorRegistry,
    nodes: Vec<NodeHandle>,
    allocation: Mutex<Allocation>,
    store_endpoint: Endpoint,
    opts: TransportOptions,
    sweeper: RemoteStore,
    model: Mutex<TrainingSet>,
    events: Mutex<Vec<HealEvent>>,
    monitor: Mutex<Option<Monitor>>,
    heal_lock: Mutex<()>,
}

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(0);

/// How long the manager waits for remote nodes to come up.
const BOOT_WAIT: Duration = Duration::from_secs(30);

impl Instance {
    /// Start every node of `topology` in this process and run its tiers.
    /// `base` is the tuning configuration copied into each tier.
    pub fn boot(
        topology: &TopologyConfig,
        executors: ExecutorRegistry,
        base: Configuration,
    ) -> Result<Arc<Self>, FusionError> {
        topology.validate()?;
        let opts = transport_options(&base)?;
        let prefix = format!(
            "edugrid-{}-{}",
            std::process::id(),
            NEXT_INSTANCE.fetch_add(1, Ordering::SeqCst)
        );
        let mut handles = Vec::new();
        for n in &topology.nodes {
            let node = Node::new(
                &n.node_id,
                topology.transport_kind,
                base.clone(),
                executors.clone(),
            );
            let endpoint = node.serve(&topology.endpoint(n, Some(&prefix))?, opts)?;
            handles.push(NodeHandle {
                node_id: n.node_id.clone(),
                endpoint,
                local: Some(node),
                client: Mutex::default(),
                opts,
            });
        }
        Self::assemble(topology, handles, executors, base, opts)
    }

    /// Run as the manager on `local`, one node of a multi-process
    /// topology; the other nodes are reached at their configured endpoints.
    pub fn attach(
        topology: &TopologyConfig,
        local: Arc<Node>,
        executors: ExecutorRegistry,
        base: Configuration,
    ) -> Result<Arc<Self>, FusionError> {
        topology.validate()?;
        let opts = transport_options(&base)?;
        let mut handles = Vec::new();
        for n in &topology.nodes {
            let mine = n.node_id == local.node_id();
            let endpoint = match (mine, local.endpoint()) {
                (true, Some(e)) => e,
                _ => topology.endpoint(n, None)?,
            };
            let h = NodeHandle {
                node_id: n.node_id.clone(),
                endpoint,
                local: mine.then(|| local.clone()),
                client: Mutex::default(),
                opts,
            };
            if !mine {
                wait_reachable(&h)?;
            }
            handles.push(h);
        }
        Self::assemble(topology, handles, executors, base, opts)
    }

    fn assemble(
        topology: &TopologyConfig,
        nodes: Vec<NodeHandle>,
        executors: ExecutorRegistry,
        base: Configuration,
        opts: TransportOptions,
    ) -> Result<Arc<Self>, FusionError> {
        let bound: Vec<Endpoint> = nodes.iter().map(|h| h.endpoint.clone()).collect();
        let allocation = topology.allocate(Some(&bound))?;
        let dst = &allocation.placements(TierIdentity::Dst)[0];
        let store_endpoint = nodes
            .iter()
            .find(|h| h.node_id == dst.node_id)
            .expect("DST host")
            .endpoint
            .clone();
        let overrides = Configuration::new().with("store.endpoint", store_endpoint.to_string());
        for identity in [
            TierIdentity::Dst,
            TierIdentity::Gim,
            TierIdentity::Dwt,
            TierIdentity::Dgt,
        ] {
            for p in allocation.placements(identity) {
                let h = nodes
                    .iter()
                    .find(|h| h.node_id == p.node_id)
                    .expect("placement on a known node");
                h.start_tier(identity, &p.tier_id, &overrides)?;
            }
        }
        let sweeper = RemoteStore::connect(&store_endpoint, opts).map_err(TierError::from)?;
        let gim_node = allocation.placements(TierIdentity::Gim)[0].node_id.clone();
        let instance = Arc::new(Self {
            topology: topology.clone(),
            base,
            executors,
            nodes,
            allocation: Mutex::new(allocation),
            store_endpoint,
            opts,
            sweeper,
            model: Mutex::default(),
            events: Mutex::default(),
            monitor: Mutex::default(),
            heal_lock: Mutex::new(()),
        });
        if let Some(node) = instance.handle(&gim_node).and_then(|h| h.local.clone()) {
            node.set_extension(Arc::new(GimService::new(Arc::downgrade(&instance))));
        }
        Ok(instance)
    }

    pub fn topology(&self) -> &TopologyConfig {
        &self.topology
    }

    pub fn allocation(&self) -> Allocation {
        self.allocation.lock().clone()
    }

    pub fn store_endpoint(&self) -> &Endpoint {
        &self.store_endpoint
    }

    /// Control endpoint of a node.
    pub fn endpoint(&self, node_id: &str) -> Option<Endpoint> {
        self.handle(node_id).map(|h| h.endpoint.clone())
    }

    /// Control endpoint of the node running the instance manager.
    pub fn manager_endpoint(&self) -> Endpoint {
        let a = self.allocation.lock();
        let id = &a.placements(TierIdentity::Gim)[0].node_id;
        self.handle(id).expect("manager node").endpoint.clone()
    }

    fn handle(&self, node_id: &str) -> Option<&NodeHandle> {
        self.nodes.iter().find(|h| h.node_id == node_id)
    }

    pub fn model(&self) -> TrainingSet {
        self.model.lock().clone()
    }

    pub fn set_model(&self, model: TrainingSet) {
        *self.model.lock() = model;
    }

    pub fn events(&self) -> Vec<HealEvent> {
        self.events.lock().clone()
    }

    /// Stage executor invocations across the instance, by stage.
    pub fn executor_invocations(&self) -> BTreeMap<String, u64> {
        let mut counts = self.executors.invocation_counts();
        for h in self.nodes.iter().filter(|h| h.local.is_none()) {
            if let Ok(s) = h.stats() {
                for (stage, n) in s.invocations {
                    *counts.entry(stage).or_default() += n;
                }
            }
        }
        counts
    }

    /// Run a job to completion, or until its deadline.
    pub fn run_job(&self, spec: &JobSpec) -> Result<JobResult, FusionError> {
        let started = Instant::now();
        let mut spec = spec.clone();
        if spec.mode == JobMode::Classify && spec.model.is_none() {
            spec.model = Some(self.model());
        }
        let plan = compile_job(&spec)?;
        let deadline = started + Duration::from_millis(spec.deadline_ms);
        let outcomes = self.with_generator(|g| g.generate(&plan.chains(), deadline))??;

        let mut model = spec
            .model
            .clone()
            .filter(|_| spec.mode == JobMode::Train)
            .unwrap_or_default();
        let mut results = BTreeMap::new();
        let (mut executed, mut cached, mut stalled) = (0u64, 0u64, false);
        for ((chain, out), sample) in plan.chains.iter().zip(outcomes).zip(&spec.samples) {
            executed += (out.written - out.cached) as u64;
            cached += out.cached as u64;
            let last = chain.demands.len() - 1;
            let r = match out.status {
                ChainStatus::Completed => {
                    let bytes = out.results.last().map(Vec::as_slice).unwrap_or_default();
                    let r = match spec.mode {
                        JobMode::Train => decode_training_set(bytes)
                            .map_err(|e| e.to_string())
                            .and_then(|ts| model.merge(&ts).map_err(|e| e.to_string()))
                            .map(|()| SampleResult::ok(sample.subject_id.clone(), None)),
                        JobMode::Classify => decode_classification(bytes)
                            .map(|c| SampleResult::ok(Some(c.subject), Some(c.distance)))
                            .map_err(|e| e.to_string()),
                    };
                    r.unwrap_or_else(|detail| SampleResult::failed(chain.stage(last), detail))
                }
                ChainStatus::Failed { index, detail } => {
                    SampleResult::failed(chain.stage(index), detail)
                }
                ChainStatus::Stalled { index } => {
                    stalled = true;
                    SampleResult::stalled(chain.stage(index))
                }
            };
            results.insert(chain.sample_id.clone(), r);
        }
        let trained = spec.mode == JobMode::Train;
        let result = JobResult {
            mode: spec.mode,
            results,
            model_digest: trained.then(|| model_digest(&model)),
            model: trained.then(|| model.clone()),
            stalled,
            stats: Some(JobStats {
                demands_executed: executed,
                cache_hits: cached,
                elapsed_ms: started.elapsed().as_millis() as u64,
            }),
        };
        if stalled {
            return Err(FusionError::JobStalled(Box::new(result)));
        }
        if trained {
            self.set_model(model);
        }
        Ok(result)
    }

    /// Run `f` on a running generator tier in this process, or on a
    /// short-lived one when none is available.
    fn with_generator<T>(&self, f: impl FnOnce(&DgtWrapper) -> T) -> Result<T, FusionError> {
        let mut f = Some(f);
        for h in &self.nodes {
            if let Some(node) = h.local.as_ref().filter(|n| n.is_alive()) {
                if let Some(r) = node.with_generator(|g| (f.take().expect("called once"))(g)) {
                    return Ok(r);
                }
            }
        }
        let mut cfg = self.base.clone();
        cfg.set("store.endpoint", self.store_endpoint.to_string());
        cfg.set("tier.id", "dgt-transient");
        let tier = create_tier_with(
            TierIdentity::Dgt,
            cfg,
            self.store_endpoint.kind(),
            &self.executors,
        )?;
        tier.start_worker()?;
        let g = tier
            .as_any()
            .downcast_ref::<DgtWrapper>()
            .expect("generator tier");
        let r = (f.take().expect("called once"))(g);
        tier.stop_worker()?;
        Ok(r)
    }

    /// Crash a node: its tiers halt at once and its claims leak until the
    /// lease runs out. A node that is already dead is left alone.
    pub fn inject_fault(&self, node_id: &str) -> Result<(), FusionError> {
        let h = self
            .handle(node_id)
            .ok_or_else(|| TierError::UnknownNode(node_id.to_owned()))?;
        if !h.is_alive() {
            return Ok(());
        }
        h.kill()?;
        Ok(())
    }

    /// One supervisory pass: expire stale claims, then detect dead nodes
    /// and move their tiers.
    pub fn heal_once(&self, policy: &HealPolicy) -> Vec<HealEvent> {
        let _guard = self.heal_lock.lock();
        let mut events = Vec::new();
        match self
            .sweeper
            .lease_sweep(clock::SystemClock.now_ms(), policy.lease_ms)
        {
            Ok(0) => {}
            Ok(count) => events.push(HealEvent::LeaseReverted { count }),
            Err(e) => diag::report("monitor", "lease sweep", &e.to_string()),
        }
        let current = self.allocation();
        for n in current.nodes.iter().filter(|n| n.alive) {
            let Some(h) = self.handle(&n.node_id) else {
                continue;
            };
            if h.is_alive() {
                continue;
            }
            events.push(HealEvent::NodeDead {
                node_id: n.node_id.clone(),
            });
            let alloc = self.allocation();
            let next = if policy.replace_nodes {
                match alloc.replace(&n.node_id) {
                    Ok((next, moved)) => {
                        self.restart_moved(&n.node_id, moved, &mut events);
                        next
                    }
                    Err(TierError::Unsatisfiable(identity)) => {
                        events.push(HealEvent::Unsatisfiable { identity });
                        alloc.mark_dead(&n.node_id).unwrap_or(alloc)
                    }
                    Err(e) => {
                        diag::report("monitor", "replace", &e.to_string());
                        alloc.mark_dead(&n.node_id).unwrap_or(alloc)
                    }
                }
            } else {
                alloc.mark_dead(&n.node_id).unwrap_or(alloc)
            };
            *self.allocation.lock() = next;
        }
        self.events.lock().extend(events.iter().cloned());
        events
    }

    fn restart_moved(
        &self,
        from: &str,
        moved: Vec<(TierIdentity, crate::tier::Placement)>,
        events: &mut Vec<HealEvent>,
    ) {
        let overrides =
            Configuration::new().with("store.endpoint", self.store_endpoint.to_string());
        for (identity, p) in moved {
            let started = self
                .handle(&p.node_id)
                .ok_or_else(|| TierError::UnknownNode(p.node_id.clone()))
                .and_then(|h| h.start_tier(identity, &p.tier_id, &overrides));
            events.push(match started {
                Ok(()) => HealEvent::Reroute {
                    identity,
                    tier_id: p.tier_id,
                    from: from.to_owned(),
                    to: p.node_id,
                },
                Err(e) => {
                    diag::report("monitor", "reroute", &e.to_string());
                    HealEvent::RerouteFailed {
                        tier_id: p.tier_id,
                        detail: e.to_string(),
                    }
                }
            });
        }
    }

    /// Start the supervisory loop, replacing any running one.
    pub fn start_monitor(self: &Arc<Self>, policy: HealPolicy) {
        self.stop_monitor();
        let stop = Arc::new(AtomicBool::new(false));
        let weak = Arc::downgrade(self);
        let flag = stop.clone();
        let handle = thread::Builder::new()
            .name("instance-monitor".into())
            .spawn(move || {
                while !flag.load(Ordering::SeqCst) {
                    let Some(instance) = weak.upgrade() else {
                        return;
                    };
                    for e in instance.heal_once(&policy) {
                        log::warn!("heal: {e}");
                    }
                    drop(instance);
                    thread::sleep(Duration::from_millis(policy.sweep_ms));
                }
            })
            .expect("spawn monitor thread");
        *self.monitor.lock() = Some(Monitor { stop, handle });
    }

    pub fn stop_monitor(&self) {
        if let Some(m) = self.monitor.lock().take() {
            m.stop.store(true, Ordering::SeqCst);
            if m.handle.thread().id() != thread::current().id() {
                let _ = m.handle.join();
            }
        }
    }

    /// Store counters, per-node tier states, executor counts and heal
    /// events as `key=value` lines.
    pub fn stats_kv(&self) -> String {
        let mut out = String::new();
        match self.sweeper.stats() {
            Ok(s) => s
                .to_kv()
                .lines()
                .for_each(|l| out += &format!("store.{l}\n")),
            Err(e) => out += &format!("store.error={e}\n"),
        }
        for h in &self.nodes {
            match h.stats() {
                Ok(s) => {
                    out += &format!("node.{}.alive={}\n", h.node_id, s.alive);
                    for t in s.tiers {
                        out += &format!(
                            "node.{}.tier.{}={},{},{}\n",
                            h.node_id, t.tier_id, t.identity, t.lifecycle, t.working
                        );
                    }
                }
                Err(_) => out += &format!("node.{}.alive=false\n", h.node_id),
            }
        }
        for (stage, n) in self.executor_invocations() {
            out += &format!("exec.{stage}={n}\n");
        }
        let events = self.events();
        out += &format!("heal.events={}\n", events.len());
        for (i, e) in events.iter().enumerate() {
            out += &format!("heal.{i}={e}\n");
        }
        out
    }

    /// Stop the monitor and every node in this process, store last.
    pub fn shutdown(&self) {
        self.stop_monitor();
        self.sweeper.close();
        let dst_node = self.allocation().placements(TierIdentity::Dst)[0]
            .node_id
            .clone();
        let (last, first): (Vec<_>, Vec<_>) =
            self.nodes.iter().partition(|h| h.node_id == dst_node);
        for h in first.into_iter().chain(last) {
            if let Some(n) = &h.local {
                n.shutdown();
            }
        }
    }

    pub fn transport_options(&self) -> TransportOptions {
        self.opts
    }
}

/// Start the instance's supervisory loop. Events are read back with
/// [`Instance::events`].
pub fn monitor_and_heal(instance: &Arc<Instance>, policy: HealPolicy) {
    instance.start_monitor(policy);
}

fn transport_options(base: &Configuration) -> Result<TransportOptions, FusionError> {
    let defaults = TransportOptions::default();
    Ok(TransportOptions {
        max_frame: base.parse_or("transport.max_frame", defaults.max_frame)?,
    })
}

fn wait_reachable(h: &NodeHandle) -> Result<(), FusionError> {
    let until = Instant::now() + BOOT_WAIT;
    loop {
        match h.remote(NodeClient::ping) {
            Ok(()) => return Ok(()),
            Err(e) if Instant::now() >= until => {
                return Err(FusionError::Config(format!(
                    "node {} at {} unreachable: {e}",
                    h.node_id, h.endpoint
                )))
            }
            Err(_) => thread::sleep(Duration::from_millis(100)),
        }
    }
}
