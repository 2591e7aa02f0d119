//! In-process agent. Connections rendezvous through a process-wide table of
//! named buses; frames travel as byte bodies so size limits and decoding
//! behave exactly as on TCP.

use std::collections::HashMap;
use std::sync::atomic::Ordering;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use parking_lot::Mutex;

use super::{
    Endpoint, ExceptionHandler, FailureKind, Inbound, LinkState, Listener, TransportAgent,
    TransportError, TransportKind, TransportOptions,
};

type Registry = Mutex<HashMap<String, Sender<LocalAgent>>>;

fn registry() -> &'static Registry {
    static BUSES: OnceLock<Registry> = OnceLock::new();
    BUSES.get_or_init(Default::default)
}

pub struct LocalAgent {
    bus: String,
    state: Arc<LinkState>,
    peer: Arc<LinkState>,
    inbox: Receiver<Inbound>,
    outbox: Sender<Inbound>,
    max_frame: usize,
}

fn pair(bus: &str, opts: TransportOptions) -> (LocalAgent, LocalAgent) {
    let (a_tx, a_rx) = unbounded();
    let (b_tx, b_rx) = unbounded();
    let a_state = LinkState::new("transport.local");
    let b_state = LinkState::new("transport.local");
    let a = LocalAgent {
        bus: bus.to_owned(),
        state: a_state.clone(),
        peer: b_state.clone(),
        inbox: a_rx,
        outbox: b_tx,
        max_frame: opts.max_frame,
    };
    let b = LocalAgent {
        bus: bus.to_owned(),
        state: b_state,
        peer: a_state,
        inbox: b_rx,
        outbox: a_tx,
        max_frame: opts.max_frame,
    };
    (a, b)
}

pub(crate) fn connect(bus: &str, opts: TransportOptions) -> Result<LocalAgent, TransportError> {
    let server_tx = registry()
        .lock()
        .get(bus)
        .cloned()
        .ok_or_else(|| TransportError::ConnectFailed(format!("no listener on bus {bus:?}")))?;
    let (client, server) = pair(bus, opts);
    server_tx
        .send(server)
        .map_err(|_| TransportError::ConnectFailed(format!("listener on bus {bus:?} is gone")))?;
    Ok(client)
}

impl LocalAgent {
    fn shut(&self, notify_peer: Option<(FailureKind, &str)>) {
        if self.state.closed.swap(true, Ordering::SeqCst) {
            return;
        }
        match notify_peer {
            None => {
                let _ = self.outbox.send(Inbound::Closed);
            }
            Some((kind, detail)) => {
                let _ = self.outbox.send(Inbound::Failed(kind, detail.to_owned()));
                if !self.peer.is_closed() {
                    self.peer.fire(kind, detail);
                }
            }
        }
    }
}

impl TransportAgent for LocalAgent {
    fn kind(&self) -> TransportKind {
        TransportKind::Local
    }

    fn local_endpoint(&self) -> Endpoint {
        Endpoint::Local {
            bus: self.bus.clone(),
        }
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
        if self.state.is_closed() {
            return Err(TransportError::Disconnected("agent is closed".into()));
        }
        if self.peer.is_closed() || self.state.is_peer_gone() {
            return Err(TransportError::Disconnected(format!(
                "peer on bus {:?} has closed",
                self.bus
            )));
        }
        self.outbox
            .send(Inbound::Frame(body.to_vec()))
            .map_err(|_| {
                TransportError::Disconnected(format!("peer on bus {:?} dropped", self.bus))
            })
    }

    fn recv_frame(&self, timeout_ms: u64) -> Result<Vec<u8>, TransportError> {
        self.state.recv(&self.inbox, timeout_ms)
    }

    fn set_exception_handler(&self, handler: ExceptionHandler) {
        self.state.set_handler(handler);
    }

    fn close(&self) {
        self.shut(None);
    }

    fn abort(&self) {
        self.shut(Some((
            FailureKind::Disconnected,
            "peer connection aborted without close",
        )));
    }

    fn reject_malformed(&self, detail: &str) {
        if self.state.is_closed() {
            return;
        }
        self.state.fire(FailureKind::MalformedFrame, detail);
        self.shut(Some((
            FailureKind::Disconnected,
            "peer dropped connection after a malformed frame",
        )));
    }
}

impl Drop for LocalAgent {
    fn drop(&mut self) {
        self.close();
    }
}

pub struct LocalListener {
    bus: String,
    incoming: Receiver<LocalAgent>,
    // Kept so `close` can identify our registration.
    sender: Sender<LocalAgent>,
}

impl LocalListener {
    pub fn bind(bus: &str, _opts: TransportOptions) -> Result<Self, TransportError> {
        if bus.is_empty() {
            return Err(TransportError::InvalidEndpoint("empty bus name".into()));
        }
        let mut buses = registry().lock();
        if buses.contains_key(bus) {
            return Err(TransportError::ConnectFailed(format!(
                "bus {bus:?} is already bound"
            )));
        }
        let (tx, rx) = unbounded();
        buses.insert(bus.to_owned(), tx.clone());
        Ok(Self {
            bus: bus.to_owned(),
            incoming: rx,
            sender: tx,
        })
    }
}

impl Listener for LocalListener {
    fn local_endpoint(&self) -> Endpoint {
        Endpoint::Local {
            bus: self.bus.clone(),
        }
    }

    fn accept(&self, timeout_ms: u64) -> Result<Box<dyn TransportAgent>, TransportError> {
        match self
            .incoming
            .recv_timeout(Duration::from_millis(timeout_ms))
        {
            Ok(agent) => Ok(Box::new(agent)),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::TimeoutExpired),
            Err(RecvTimeoutError::Disconnected) => {
                Err(TransportError::Disconnected("listener closed".into()))
            }
        }
    }

    fn close(&self) {
        let mut buses = registry().lock();
        if buses
            .get(&self.bus)
            .is_some_and(|tx| tx.same_channel(&self.sender))
        {
            buses.remove(&self.bus);
        }
    }
}

impl Drop for LocalListener {
    fn drop(&mut self) {
        Listener::close(self);
    }
}
