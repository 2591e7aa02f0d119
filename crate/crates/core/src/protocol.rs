//! Control opcodes and the request/reply service loop shared by the store,
//! node control ports and the instance manager.
//!
//! Requests are control messages (`0x02, opcode, body`); a bare demand
//! frame is accepted as a store WRITE. Every request gets exactly one reply:
//! `OK` with an opcode-specific body, or `ERR` with a code and detail text.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use parking_lot::Mutex;

use crate::codec::{Decoder, Encoder};
use crate::diag;
use crate::transport::{Endpoint, Listener, Message, TransportAgent, TransportError};

pub const OP_PING: u8 = 0x01;

pub const OP_WRITE: u8 = 0x10;
pub const OP_TAKE: u8 = 0x11;
pub const OP_PUT_RESULT: u8 = 0x12;
pub const OP_GET_RESULT: u8 = 0x13;
pub const OP_POLL: u8 = 0x14;
pub const OP_STATS: u8 = 0x15;
pub const OP_SWEEP: u8 = 0x16;

pub const OP_START_TIER: u8 = 0x20;
pub const OP_STOP_TIER: u8 = 0x21;
pub const OP_KILL: u8 = 0x22;
pub const OP_NODE_STATS: u8 = 0x23;

pub const OP_SUBMIT_JOB: u8 = 0x30;
pub const OP_INJECT_FAULT: u8 = 0x31;
pub const OP_INSTANCE_STATS: u8 = 0x32;

pub const OP_OK: u8 = 0x7E;
pub const OP_ERR: u8 = 0x7F;

pub const ERR_TIMEOUT: u8 = 1;
pub const ERR_UNKNOWN_DEMAND: u8 = 2;
pub const ERR_RESULT_CONFLICT: u8 = 3;
pub const ERR_INVALID_DESTINATION: u8 = 4;
pub const ERR_BAD_REQUEST: u8 = 5;
pub const ERR_UNSUPPORTED: u8 = 6;
pub const ERR_UNKNOWN_NODE: u8 = 7;
pub const ERR_FAILED: u8 = 8;

/// How long a connection thread waits between checks of the stop flag.
const IDLE_POLL_MS: u64 = 100;

pub fn ok(body: Vec<u8>) -> Message {
    Message::control(OP_OK, body)
}

pub fn err(code: u8, detail: &str) -> Message {
    let mut e = Encoder::with_tag(code);
    e.str(detail);
    Message::control(OP_ERR, e.finish())
}

/// A decoded error reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorReply {
    pub code: u8,
    pub detail: String,
}

pub fn decode_err(body: &[u8]) -> ErrorReply {
    let mut d = Decoder::new(body);
    match (d.u8(), d.string()) {
        (Ok(code), Ok(detail)) => ErrorReply { code, detail },
        _ => ErrorReply {
            code: ERR_BAD_REQUEST,
            detail: "undecodable error reply".into(),
        },
    }
}

/// Splits a reply into its OK body or error.
pub fn reply_body(reply: Message) -> Result<Vec<u8>, Result<ErrorReply, TransportError>> {
    match reply {
        Message::Control {
            opcode: OP_OK,
            body,
        } => Ok(body),
        Message::Control {
            opcode: OP_ERR,
            body,
        } => Err(Ok(decode_err(&body))),
        Message::Control { opcode, .. } => Err(Err(TransportError::UnexpectedMessage(format!(
            "reply opcode {opcode:#04x}"
        )))),
        Message::Demand(_) => Err(Err(TransportError::UnexpectedMessage(
            "demand frame as reply".into(),
        ))),
    }
}

/// Serves one request. `None` means the opcode is not handled here.
pub trait RequestHandler: Send + Sync {
    fn handle(&self, request: Message) -> Option<Message>;
}

/// Accept loop plus one thread per connection.
pub struct Service {
    endpoint: Endpoint,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<Arc<dyn TransportAgent>>>>,
    accept_thread: Option<JoinHandle<()>>,
}

impl Service {
    pub fn spawn(
        name: &str,
        listener: Box<dyn Listener>,
        handler: Arc<dyn RequestHandler>,
    ) -> Self {
        let endpoint = listener.local_endpoint();
        let stop = Arc::new(AtomicBool::new(false));
        let connections: Arc<Mutex<Vec<Arc<dyn TransportAgent>>>> = Arc::default();
        let (stop2, conns2) = (stop.clone(), connections.clone());
        let name = name.to_owned();
        let accept_thread = thread::Builder::new()
            .name(format!("{name}-accept"))
            .spawn(move || {
                while !stop2.load(Ordering::SeqCst) {
                    match listener.accept(IDLE_POLL_MS) {
                        Ok(agent) => {
                            let agent: Arc<dyn TransportAgent> = Arc::from(agent);
                            conns2.lock().push(agent.clone());
                            let (stop3, handler) = (stop2.clone(), handler.clone());
                            let conns3 = conns2.clone();
                            let _ = thread::Builder::new().name(format!("{name}-conn")).spawn(
                                move || {
                                    serve_connection(&*agent, &*handler, &stop3);
                                    conns3.lock().retain(|a| !Arc::ptr_eq(a, &agent));
                                },
                            );
                        }
                        Err(TransportError::TimeoutExpired) => {}
                        Err(e) => {
                            if !stop2.load(Ordering::SeqCst) {
                                diag::report(&name, "accept", &e.to_string());
                            }
                            break;
                        }
                    }
                }
                listener.close();
            })
            .expect("spawn accept thread");
        Self {
            endpoint,
            stop,
            connections,
            accept_thread: Some(accept_thread),
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Stop accepting and close every connection in an orderly way.
    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for c in self.connections.lock().drain(..) {
            c.close();
        }
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    /// Drop every connection abruptly, as a crashed process would.
    pub fn kill(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for c in self.connections.lock().drain(..) {
            c.abort();
        }
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_connection(agent: &dyn TransportAgent, handler: &dyn RequestHandler, stop: &AtomicBool) {
    loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        let request = match agent.recv_message(IDLE_POLL_MS) {
            Ok(m) => m,
            Err(TransportError::TimeoutExpired) => continue,
            // disconnects and malformed frames were already reported by the agent
            Err(_) => return,
        };
        let reply = match &request {
            Message::Control {
                opcode: OP_PING, ..
            } => Some(ok(Vec::new())),
            _ => None,
        };
        let reply = match reply {
            Some(r) => r,
            None => {
                let label = match &request {
                    Message::Control { opcode, .. } => format!("{opcode:#04x}"),
                    Message::Demand(_) => "write".into(),
                };
                handler.handle(request).unwrap_or_else(|| {
                    err(ERR_UNSUPPORTED, &format!("opcode {label} not served here"))
                })
            }
        };
        if let Err(e) = agent.send_message(&reply) {
            if !stop.load(Ordering::SeqCst) {
                diag::report("service", "reply", &e.to_string());
            }
            return;
        }
    }
}

/// Send one request and wait for its reply.
pub fn call(
    agent: &dyn TransportAgent,
    opcode: u8,
    body: Vec<u8>,
    wait_ms: u64,
) -> Result<Vec<u8>, Result<ErrorReply, TransportError>> {
    agent
        .send_message(&Message::control(opcode, body))
        .map_err(Err)?;
    let reply = agent.recv_message(wait_ms).map_err(Err)?;
    reply_body(reply)
}
