//! Transport agents move framed messages between tiers.
//!
//! Two agents implement the same contract: an in-process bus rendezvoused
//! by name and a TCP agent speaking `[u32 BE length][body]` frames. Routing
//! and destination matching are the store's business; an agent is one FIFO
//! queue per connection.

mod local;
mod tcp;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::DecodeError;
use crate::demand::{Demand, DEMAND_VERSION};
use crate::diag;

pub use local::{LocalAgent, LocalListener};
pub use tcp::{TcpAgent, TcpTransportListener};

/// Version byte of control messages.
pub const CONTROL_VERSION: u8 = 0x02;
/// Control opcode announcing an orderly close. Never surfaces to callers.
pub(crate) const OP_BYE: u8 = 0x00;

pub const DEFAULT_MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Local,
    Tcp,
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportKind::Local => "local",
            TransportKind::Tcp => "tcp",
        })
    }
}

impl FromStr for TransportKind {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(TransportKind::Local),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(TransportError::InvalidEndpoint(format!(
                "unknown transport kind {other:?}"
            ))),
        }
    }
}

/// Written as `host:port` or `local:<bus>` in documents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Endpoint {
    Local { bus: String },
    Tcp { host: String, port: u16 },
}

impl Endpoint {
    pub fn local(bus: impl Into<String>) -> Result<Self, TransportError> {
        let bus = bus.into();
        if bus.is_empty() {
            return Err(TransportError::InvalidEndpoint("empty bus name".into()));
        }
        Ok(Endpoint::Local { bus })
    }

    pub fn tcp(host: impl Into<String>, port: u16) -> Result<Self, TransportError> {
        let host = host.into();
        if host.is_empty() {
            return Err(TransportError::InvalidEndpoint("empty host".into()));
        }
        Ok(Endpoint::Tcp { host, port })
    }

    /// Parses `host:port` as TCP and `local:<bus>` as an in-process bus.
    pub fn parse(s: &str) -> Result<Self, TransportError> {
        if let Some(bus) = s.strip_prefix("local:") {
            return Self::local(bus);
        }
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| TransportError::InvalidEndpoint(format!("{s:?} is not host:port")))?;
        let port = port
            .parse::<u16>()
            .map_err(|_| TransportError::InvalidEndpoint(format!("bad port in {s:?}")))?;
        Self::tcp(host, port)
    }

    pub fn kind(&self) -> TransportKind {
        match self {
            Endpoint::Local { .. } => TransportKind::Local,
            Endpoint::Tcp { .. } => TransportKind::Tcp,
        }
    }

    pub fn port(&self) -> Option<u16> {
        match self {
            Endpoint::Tcp { port, .. } => Some(*port),
            Endpoint::Local { .. } => None,
        }
    }
}

impl TryFrom<String> for Endpoint {
    type Error = TransportError;

    fn try_from(s: String) -> Result<Self, TransportError> {
        Self::parse(&s)
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> String {
        e.to_string()
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Local { bus } => write!(f, "local:{bus}"),
            Endpoint::Tcp { host, port } => write!(f, "{host}:{port}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Client,
    Server,
}

/// Kinds of failure reported to exception handlers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailureKind {
    Disconnected,
    MalformedFrame,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::Disconnected => "Disconnected",
            FailureKind::MalformedFrame => "MalformedFrame",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("connect failed: {0}")]
    ConnectFailed(String),
    #[error("disconnected: {0}")]
    Disconnected(String),
    #[error("frame of {size} bytes exceeds maximum {max}")]
    FrameTooLarge { size: usize, max: usize },
    #[error("timed out")]
    TimeoutExpired,
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("unexpected message: {0}")]
    UnexpectedMessage(String),
}

pub type ExceptionHandler = Arc<dyn Fn(FailureKind, &str) + Send + Sync>;

#[derive(Debug, Clone, Copy)]
pub struct TransportOptions {
    pub max_frame: usize,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self {
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

/// A frame body: either a canonical demand or a control message.
#[derive(Debug, Clone)]
pub enum Message {
    Demand(Demand),
    Control { opcode: u8, body: Vec<u8> },
}

impl Message {
    pub fn control(opcode: u8, body: Vec<u8>) -> Self {
        Message::Control { opcode, body }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Message::Demand(d) => d.to_bytes(),
            Message::Control { opcode, body } => {
                let mut out = Vec::with_capacity(body.len() + 2);
                out.push(CONTROL_VERSION);
                out.push(*opcode);
                out.extend_from_slice(body);
                out
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        match bytes.first() {
            Some(&DEMAND_VERSION) => Demand::from_bytes(bytes).map(Message::Demand),
            Some(&CONTROL_VERSION) if bytes.len() >= 2 => Ok(Message::Control {
                opcode: bytes[1],
                body: bytes[2..].to_vec(),
            }),
            Some(&found) => Err(DecodeError::BadTag {
                found,
                expected: "frame version",
            }),
            None => Err(DecodeError::Truncated(0)),
        }
    }
}

/// One end of a connection.
///
/// Safe for one concurrent sender and one concurrent receiver; frames from
/// concurrent senders are never interleaved.
pub trait TransportAgent: Send + Sync {
    fn kind(&self) -> TransportKind;

    /// The endpoint this agent is bound to or connected through.
    fn local_endpoint(&self) -> Endpoint;

    fn max_frame(&self) -> usize;

    /// Send one frame body. The body is not inspected.
    fn send_frame(&self, body: &[u8]) -> Result<(), TransportError>;

    /// Next frame body in FIFO order, waiting up to `timeout_ms`.
    fn recv_frame(&self, timeout_ms: u64) -> Result<Vec<u8>, TransportError>;

    /// Replace the handler for asynchronous failures.
    fn set_exception_handler(&self, handler: ExceptionHandler);

    /// Orderly close; the peer sees `Disconnected` on its next call but no
    /// failure is reported.
    fn close(&self);

    /// Abrupt close, as if the process died. The peer reports a failure.
    fn abort(&self);

    /// Report an undecodable body and drop the connection.
    fn reject_malformed(&self, detail: &str);

    fn send_message(&self, msg: &Message) -> Result<(), TransportError> {
        self.send_frame(&msg.to_bytes())
    }

    fn recv_message(&self, timeout_ms: u64) -> Result<Message, TransportError> {
        let body = self.recv_frame(timeout_ms)?;
        Message::from_bytes(&body).map_err(|e| {
            let detail = format!("undecodable {}-byte body: {e}", body.len());
            self.reject_malformed(&detail);
            TransportError::MalformedFrame(detail)
        })
    }

    fn send(&self, d: &Demand) -> Result<(), TransportError> {
        self.send_frame(&d.to_bytes())
    }

    fn recv(&self, timeout_ms: u64) -> Result<Demand, TransportError> {
        match self.recv_message(timeout_ms)? {
            Message::Demand(d) => Ok(d),
            Message::Control { opcode, .. } => Err(TransportError::UnexpectedMessage(format!(
                "control opcode {opcode:#04x} where a demand was expected"
            ))),
        }
    }
}

/// Accepts incoming connections on a bound endpoint.
pub trait Listener: Send + Sync {
    fn local_endpoint(&self) -> Endpoint;
    fn accept(&self, timeout_ms: u64) -> Result<Box<dyn TransportAgent>, TransportError>;
    fn close(&self);
}

pub fn connect(
    endpoint: &Endpoint,
    opts: TransportOptions,
) -> Result<Box<dyn TransportAgent>, TransportError> {
    match endpoint {
        Endpoint::Local { bus } => Ok(Box::new(local::connect(bus, opts)?)),
        Endpoint::Tcp { host, port } => Ok(Box::new(tcp::connect(host, *port, opts)?)),
    }
}

pub fn listen(
    endpoint: &Endpoint,
    opts: TransportOptions,
) -> Result<Box<dyn Listener>, TransportError> {
    match endpoint {
        Endpoint::Local { bus } => Ok(Box::new(LocalListener::bind(bus, opts)?)),
        Endpoint::Tcp { host, port } => {
            Ok(Box::new(TcpTransportListener::bind(host, *port, opts)?))
        }
    }
}

/// Open one point-to-point agent. A server agent binds immediately and
/// pairs with the first peer that connects.
pub fn open_transport(
    kind: TransportKind,
    endpoint: &Endpoint,
    role: Role,
) -> Result<Box<dyn TransportAgent>, TransportError> {
    open_transport_with(kind, endpoint, role, TransportOptions::default())
}

pub fn open_transport_with(
    kind: TransportKind,
    endpoint: &Endpoint,
    role: Role,
    opts: TransportOptions,
) -> Result<Box<dyn TransportAgent>, TransportError> {
    if endpoint.kind() != kind {
        return Err(TransportError::InvalidEndpoint(format!(
            "{endpoint} is not a {kind} endpoint"
        )));
    }
    match role {
        Role::Client => connect(endpoint, opts),
        Role::Server => Ok(Box::new(ServerAgent {
            kind,
            listener: listen(endpoint, opts)?,
            peer: Mutex::new(None),
            handler: Mutex::new(None),
            max_frame: opts.max_frame,
        })),
    }
}

/// How long a server agent's `send` waits for its first peer.
const PEER_WAIT_MS: u64 = 5_000;

struct ServerAgent {
    kind: TransportKind,
    listener: Box<dyn Listener>,
    peer: Mutex<Option<Arc<dyn TransportAgent>>>,
    handler: Mutex<Option<ExceptionHandler>>,
    max_frame: usize,
}

impl ServerAgent {
    fn peer(&self, timeout_ms: u64) -> Result<Arc<dyn TransportAgent>, TransportError> {
        let mut slot = self.peer.lock();
        if let Some(p) = slot.as_ref() {
            return Ok(p.clone());
        }
        let agent: Arc<dyn TransportAgent> = Arc::from(self.listener.accept(timeout_ms)?);
        if let Some(h) = self.handler.lock().clone() {
            agent.set_exception_handler(h);
        }
        *slot = Some(agent.clone());
        Ok(agent)
    }
}

impl TransportAgent for ServerAgent {
    fn kind(&self) -> TransportKind {
        self.kind
    }

    fn local_endpoint(&self) -> Endpoint {
        self.listener.local_endpoint()
    }

    fn max_frame(&self) -> usize {
        self.max_frame
    }

    fn send_frame(&self, body: &[u8]) -> Result<(), TransportError> {
        if body.len() > self.max_frame {
            return Err(TransportError::FrameTooLarge {
                size: body.len(),
                max: self.max_frame,
            });
        }
        let peer = self.peer(PEER_WAIT_MS).map_err(|e| match e {
            TransportError::TimeoutExpired => {
                TransportError::Disconnected("no peer connected".into())
            }
            other => other,
        })?;
        peer.send_frame(body)
    }

    fn recv_frame(&self, timeout_ms: u64) -> Result<Vec<u8>, TransportError> {
        let start = std::time::Instant::now();
        let peer = self.peer(timeout_ms)?;
        let left = timeout_ms.saturating_sub(start.elapsed().as_millis() as u64);
        peer.recv_frame(left)
    }

    fn set_exception_handler(&self, handler: ExceptionHandler) {
        *self.handler.lock() = Some(handler.clone());
        if let Some(p) = self.peer.lock().as_ref() {
            p.set_exception_handler(handler);
        }
    }

    fn close(&self) {
        if let Some(p) = self.peer.lock().take() {
            p.close();
        }
        self.listener.close();
    }

    fn abort(&self) {
        if let Some(p) = self.peer.lock().take() {
            p.abort();
        }
        self.listener.close();
    }

    fn reject_malformed(&self, detail: &str) {
        if let Some(p) = self.peer.lock().take() {
            p.reject_malformed(detail);
        }
    }
}

/// What a connection's receive queue carries.
pub(crate) enum Inbound {
    Frame(Vec<u8>),
    Failed(FailureKind, String),
    Closed,
}

/// State shared between an agent and its background machinery.
pub(crate) struct LinkState {
    handler: RwLock<Option<ExceptionHandler>>,
    /// This end has been closed or aborted.
    pub(crate) closed: AtomicBool,
    /// The peer is known to be gone.
    pub(crate) peer_gone: AtomicBool,
    source: &'static str,
}

impl LinkState {
    pub(crate) fn new(source: &'static str) -> Arc<Self> {
        Arc::new(Self {
            handler: RwLock::new(None),
            closed: AtomicBool::new(false),
            peer_gone: AtomicBool::new(false),
            source,
        })
    }

    pub(crate) fn set_handler(&self, h: ExceptionHandler) {
        *self.handler.write() = Some(h);
    }

    /// Deliver one failure notification, falling back to the diagnostic
    /// stream when nobody registered a handler.
    pub(crate) fn fire(&self, kind: FailureKind, detail: &str) {
        let h = self.handler.read().clone();
        match h {
            Some(h) => h(kind, detail),
            None => diag::report(self.source, &kind.to_string(), detail),
        }
    }

    pub(crate) fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    pub(crate) fn is_peer_gone(&self) -> bool {
        self.peer_gone.load(Ordering::SeqCst)
    }

    /// Shared receive path over an inbound queue.
    pub(crate) fn recv(
        &self,
        inbox: &Receiver<Inbound>,
        timeout_ms: u64,
    ) -> Result<Vec<u8>, TransportError> {
        if self.is_closed() {
            return Err(TransportError::Disconnected("agent is closed".into()));
        }
        if self.is_peer_gone() && inbox.is_empty() {
            return Err(TransportError::Disconnected("peer has gone away".into()));
        }
        match inbox.recv_timeout(Duration::from_millis(timeout_ms)) {
            Ok(Inbound::Frame(body)) => Ok(body),
            Ok(Inbound::Failed(FailureKind::Disconnected, detail)) => {
                self.peer_gone.store(true, Ordering::SeqCst);
                Err(TransportError::Disconnected(detail))
            }
            Ok(Inbound::Failed(FailureKind::MalformedFrame, detail)) => {
                self.peer_gone.store(true, Ordering::SeqCst);
                self.closed.store(true, Ordering::SeqCst);
                Err(TransportError::MalformedFrame(detail))
            }
            Ok(Inbound::Closed) => {
                self.peer_gone.store(true, Ordering::SeqCst);
                Err(TransportError::Disconnected(
                    "peer closed the connection".into(),
                ))
            }
            Err(RecvTimeoutError::Timeout) => Err(TransportError::TimeoutExpired),
            Err(RecvTimeoutError::Disconnected) => {
                self.peer_gone.store(true, Ordering::SeqCst);
                Err(TransportError::Disconnected("connection closed".into()))
            }
        }
    }
}

pub(crate) fn bye_frame() -> Vec<u8> {
    vec![CONTROL_VERSION, OP_BYE]
}
