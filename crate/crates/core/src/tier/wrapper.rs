use std::any::Any;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Instant;

use parking_lot::Mutex;

use crate::clock;
use crate::demand::Demand;
use crate::store::{DemandStore, RemoteStore, StoreApi};
use crate::transport::{Endpoint, TransportKind, TransportOptions};

use super::generator::{generate, ChainOutcome, GeneratorOptions};
use super::worker::{self, WorkerCtx};
use super::{Configuration, ExecutorRegistry, TierError, TierIdentity};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lifecycle {
    Created,
    Running,
    Stopped,
}

impl Lifecycle {
    pub fn name(self) -> &'static str {
        match self {
            Lifecycle::Created => "CREATED",
            Lifecycle::Running => "RUNNING",
            Lifecycle::Stopped => "STOPPED",
        }
    }
}

impl std::fmt::Display for Lifecycle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Lifecycle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [Lifecycle::Created, Lifecycle::Running, Lifecycle::Stopped]
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown lifecycle {s:?}"))
    }
}

/// Uniform control surface over every tier kind.
pub trait TierWrapper: Send + Sync {
    fn tier_id(&self) -> &str;
    fn identity(&self) -> TierIdentity;
    fn config(&self) -> &Configuration;
    fn lifecycle(&self) -> Lifecycle;
    fn is_working(&self) -> bool;
    /// CREATED or STOPPED to RUNNING.
    fn start_worker(&self) -> Result<(), TierError>;
    /// RUNNING to STOPPED, finishing any demand in hand first.
    fn stop_worker(&self) -> Result<(), TierError>;
    /// Halt at once without draining, as a crash would. No-op unless RUNNING.
    fn kill(&self);
    fn as_any(&self) -> &dyn Any;
}

/// Lifecycle state machine shared by the wrappers.
struct Control {
    state: Mutex<Lifecycle>,
    working: Arc<AtomicBool>,
}

impl Control {
    fn new() -> Self {
        Self {
            state: Mutex::new(Lifecycle::Created),
            working: Arc::default(),
        }
    }

    fn start(&self, on_start: impl FnOnce() -> Result<(), TierError>) -> Result<(), TierError> {
        let mut s = self.state.lock();
        if *s == Lifecycle::Running {
            return Err(TierError::IllegalLifecycle {
                from: *s,
                action: "start",
            });
        }
        self.working.store(true, Ordering::SeqCst);
        if let Err(e) = on_start() {
            self.working.store(false, Ordering::SeqCst);
            return Err(e);
        }
        *s = Lifecycle::Running;
        Ok(())
    }

    fn stop(&self, on_stop: impl FnOnce()) -> Result<(), TierError> {
        let mut s = self.state.lock();
        if *s != Lifecycle::Running {
            return Err(TierError::IllegalLifecycle {
                from: *s,
                action: "stop",
            });
        }
        self.working.store(false, Ordering::SeqCst);
        on_stop();
        *s = Lifecycle::Stopped;
        Ok(())
    }

    fn kill(&self, on_kill: impl FnOnce()) {
        let mut s = self.state.lock();
        if *s == Lifecycle::Running {
            self.working.store(false, Ordering::SeqCst);
            on_kill();
            *s = Lifecycle::Stopped;
        }
    }

    fn lifecycle(&self) -> Lifecycle {
        *self.state.lock()
    }

    fn is_working(&self) -> bool {
        self.working.load(Ordering::SeqCst)
    }
}

macro_rules! common_accessors {
    ($identity:expr) => {
        fn tier_id(&self) -> &str {
            &self.tier_id
        }

        fn identity(&self) -> TierIdentity {
            $identity
        }

        fn config(&self) -> &Configuration {
            &self.config
        }

        fn lifecycle(&self) -> Lifecycle {
            self.control.lifecycle()
        }

        fn is_working(&self) -> bool {
            self.control.is_working()
        }

        fn as_any(&self) -> &dyn Any {
            self
        }
    };
}

fn transport_options(config: &Configuration) -> Result<TransportOptions, TierError> {
    let default = TransportOptions::default();
    Ok(TransportOptions {
        max_frame: config.parse_or("transport.max_frame", default.max_frame)?,
    })
}

/// The configured store endpoint, which must use the tier's transport.
fn store_endpoint(config: &Configuration, kind: TransportKind) -> Result<Endpoint, TierError> {
    let raw = config.require("store.endpoint")?;
    let ep = Endpoint::parse(raw).map_err(|e| TierError::InvalidConfig {
        key: "store.endpoint".into(),
        detail: e.to_string(),
    })?;
    if ep.kind() != kind {
        return Err(TierError::InvalidConfig {
            key: "store.endpoint".into(),
            detail: format!("{ep} is not a {kind} endpoint"),
        });
    }
    Ok(ep)
}

/// Store tier: owns the demand store. Requests reach it through the
/// hosting node while it is RUNNING.
pub struct DstWrapper {
    tier_id: String,
    config: Configuration,
    control: Control,
    store: Arc<DemandStore>,
}

impl DstWrapper {
    pub fn store(&self) -> &Arc<DemandStore> {
        &self.store
    }
}

impl TierWrapper for DstWrapper {
    common_accessors!(TierIdentity::Dst);

    fn start_worker(&self) -> Result<(), TierError> {
        self.control.start(|| Ok(()))
    }

    fn stop_worker(&self) -> Result<(), TierError> {
        self.control.stop(|| {})
    }

    fn kill(&self) {
        self.control.kill(|| {})
    }
}

struct WorkerThread {
    handle: JoinHandle<()>,
    store: Arc<RemoteStore>,
    killed: Arc<AtomicBool>,
}

/// Worker tier: a loop that takes demands and runs stage executors.
pub struct DwtWrapper {
    tier_id: String,
    config: Configuration,
    control: Control,
    endpoint: Endpoint,
    opts: TransportOptions,
    executors: ExecutorRegistry,
    poll_ms: u64,
    input_wait_ms: u64,
    thread: Mutex<Option<WorkerThread>>,
}

impl DwtWrapper {
    pub fn executors(&self) -> &ExecutorRegistry {
        &self.executors
    }
}

impl TierWrapper for DwtWrapper {
    common_accessors!(TierIdentity::Dwt);

    fn start_worker(&self) -> Result<(), TierError> {
        self.control.start(|| {
            let store = Arc::new(RemoteStore::connect(&self.endpoint, self.opts)?);
            let killed = Arc::new(AtomicBool::new(false));
            let ctx = WorkerCtx {
                tier_id: self.tier_id.clone(),
                store: store.clone(),
                executors: self.executors.clone(),
                working: self.control.working.clone(),
                killed: killed.clone(),
                poll_ms: self.poll_ms,
                input_wait_ms: self.input_wait_ms,
            };
            let handle = thread::Builder::new()
                .name(format!("{}-worker", self.tier_id))
                .spawn(move || worker::run(ctx))
                .expect("spawn worker thread");
            *self.thread.lock() = Some(WorkerThread {
                handle,
                store,
                killed,
            });
            Ok(())
        })
    }

    fn stop_worker(&self) -> Result<(), TierError> {
        self.control.stop(|| {
            if let Some(t) = self.thread.lock().take() {
                let _ = t.handle.join();
                t.store.close();
            }
        })
    }

    fn kill(&self) {
        self.control.kill(|| {
            // the thread is left to notice on its own; nothing it holds is committed
            if let Some(t) = self.thread.lock().take() {
                t.killed.store(true, Ordering::SeqCst);
            }
        })
    }
}

/// Generator tier: writes planned demand chains to the store.
pub struct DgtWrapper {
    tier_id: String,
    config: Configuration,
    control: Control,
    endpoint: Endpoint,
    opts: GeneratorOptions,
}

impl DgtWrapper {
    /// Feed `chains` to the store; see [`generate`].
    pub fn generate(
        &self,
        chains: &[Vec<Demand>],
        deadline: Instant,
    ) -> Result<Vec<ChainOutcome>, TierError> {
        let state = self.control.lifecycle();
        if state != Lifecycle::Running {
            return Err(TierError::IllegalLifecycle {
                from: state,
                action: "generate with",
            });
        }
        let (endpoint, transport) = (self.endpoint.clone(), self.opts.transport);
        let connect = move || -> Result<Arc<dyn StoreApi>, TierError> {
            Ok(Arc::new(RemoteStore::connect(&endpoint, transport)?))
        };
        Ok(generate(
            &connect,
            chains,
            deadline,
            &self.opts,
            &self.control.working,
        ))
    }
}

impl TierWrapper for DgtWrapper {
    common_accessors!(TierIdentity::Dgt);

    fn start_worker(&self) -> Result<(), TierError> {
        self.control.start(|| Ok(()))
    }

    fn stop_worker(&self) -> Result<(), TierError> {
        self.control.stop(|| {})
    }

    fn kill(&self) {
        self.control.kill(|| {})
    }
}

/// Instance-manager tier. Allocation state lives with the instance; the
/// wrapper marks where the manager runs.
pub struct GimWrapper {
    tier_id: String,
    config: Configuration,
    control: Control,
}

impl TierWrapper for GimWrapper {
    common_accessors!(TierIdentity::Gim);

    fn start_worker(&self) -> Result<(), TierError> {
        self.control.start(|| Ok(()))
    }

    fn stop_worker(&self) -> Result<(), TierError> {
        self.control.stop(|| {})
    }

    fn kill(&self) {
        self.control.kill(|| {})
    }
}

/// Builds CREATED wrappers of one identity.
pub trait TierFactory: Send + Sync {
    fn identity(&self) -> TierIdentity;
    fn create(
        &self,
        config: Configuration,
        kind: TransportKind,
    ) -> Result<Arc<dyn TierWrapper>, TierError>;
}

static NEXT_TIER: AtomicU64 = AtomicU64::new(0);

fn tier_id(identity: TierIdentity, config: &Configuration) -> String {
    config.get("tier.id").map(str::to_owned).unwrap_or_else(|| {
        format!(
            "{}-auto{}",
            identity.name().to_lowercase(),
            NEXT_TIER.fetch_add(1, Ordering::Relaxed)
        )
    })
}

struct DstFactory;
struct DgtFactory;
struct GimFactory;
struct DwtFactory {
    executors: ExecutorRegistry,
}

impl TierFactory for DstFactory {
    fn identity(&self) -> TierIdentity {
        TierIdentity::Dst
    }

    fn create(
        &self,
        config: Configuration,
        _kind: TransportKind,
    ) -> Result<Arc<dyn TierWrapper>, TierError> {
        Ok(Arc::new(DstWrapper {
            tier_id: tier_id(TierIdentity::Dst, &config),
            config,
            control: Control::new(),
            store: Arc::new(DemandStore::with_clock(clock::system())),
        }))
    }
}

impl TierFactory for DwtFactory {
    fn identity(&self) -> TierIdentity {
        TierIdentity::Dwt
    }

    fn create(
        &self,
        config: Configuration,
        kind: TransportKind,
    ) -> Result<Arc<dyn TierWrapper>, TierError> {
        Ok(Arc::new(DwtWrapper {
            tier_id: tier_id(TierIdentity::Dwt, &config),
            endpoint: store_endpoint(&config, kind)?,
            opts: transport_options(&config)?,
            executors: self.executors.clone(),
            poll_ms: config.parse_or("worker.poll_ms", 10)?,
            input_wait_ms: config.parse_or("worker.input_wait_ms", 5_000)?,
            config,
            control: Control::new(),
            thread: Mutex::new(None),
        }))
    }
}

impl TierFactory for DgtFactory {
    fn identity(&self) -> TierIdentity {
        TierIdentity::Dgt
    }

    fn create(
        &self,
        config: Configuration,
        kind: TransportKind,
    ) -> Result<Arc<dyn TierWrapper>, TierError> {
        let defaults = GeneratorOptions::default();
        let opts = GeneratorOptions {
            threads: config
                .parse_or("generator.threads", defaults.threads)?
                .max(1),
            retry_ms: config.parse_or("generator.retry_ms", defaults.retry_ms)?,
            transport: transport_options(&config)?,
        };
        Ok(Arc::new(DgtWrapper {
            tier_id: tier_id(TierIdentity::Dgt, &config),
            endpoint: store_endpoint(&config, kind)?,
            opts,
            config,
            control: Control::new(),
        }))
    }
}

impl TierFactory for GimFactory {
    fn identity(&self) -> TierIdentity {
        TierIdentity::Gim
    }

    fn create(
        &self,
        config: Configuration,
        _kind: TransportKind,
    ) -> Result<Arc<dyn TierWrapper>, TierError> {
        Ok(Arc::new(GimWrapper {
            tier_id: tier_id(TierIdentity::Gim, &config),
            config,
            control: Control::new(),
        }))
    }
}

/// The factory for `identity`. Worker tiers run `executors`.
pub fn factory_for(identity: TierIdentity, executors: &ExecutorRegistry) -> Box<dyn TierFactory> {
    match identity {
        TierIdentity::Dst => Box::new(DstFactory),
        TierIdentity::Dgt => Box::new(DgtFactory),
        TierIdentity::Gim => Box::new(GimFactory),
        TierIdentity::Dwt => Box::new(DwtFactory {
            executors: executors.clone(),
        }),
    }
}

/// Create a tier whose workers run the recognition stages.
pub fn create_tier(
    identity: TierIdentity,
    config: Configuration,
    kind: TransportKind,
) -> Result<Arc<dyn TierWrapper>, TierError> {
    create_tier_with(identity, config, kind, &crate::marf::stage_executors())
}

pub fn create_tier_with(
    identity: TierIdentity,
    config: Configuration,
    kind: TransportKind,
    executors: &ExecutorRegistry,
) -> Result<Arc<dyn TierWrapper>, TierError> {
    factory_for(identity, executors).create(config, kind)
}
