use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use parking_lot::Mutex;

use super::{
    bye_frame, Endpoint, ExceptionHandler, FailureKind, Inbound, LinkState, Listener,
    TransportAgent, TransportError, TransportKind, TransportOptions, CONTROL_VERSION, OP_BYE,
};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);

pub struct TcpAgent {
    endpoint: Endpoint,
    state: Arc<LinkState>,
    writer: Mutex<TcpStream>,
    inbox: Receiver<Inbound>,
    max_frame: usize,
}

pub(crate) fn connect(
    host: &str,
    port: u16,
    opts: TransportOptions,
) -> Result<TcpAgent, TransportError> {
    let addrs = (host, port)
        .to_socket_addrs()
        .map_err(|e| TransportError::ConnectFailed(format!("cannot resolve {host}:{port}: {e}")))?;
    let mut last = None;
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT) {
            Ok(stream) => return TcpAgent::from_stream(stream, opts),
            Err(e) => last = Some(format!("{addr}: {e}")),
        }
    }
    Err(TransportError::ConnectFailed(last.unwrap_or_else(|| {
        format!("{host}:{port} resolved to no addresses")
    })))
}

impl TcpAgent {
    fn from_stream(stream: TcpStream, opts: TransportOptions) -> Result<Self, TransportError> {
        let io = |e: std::io::Error| TransportError::ConnectFailed(e.to_string());
        stream.set_nodelay(true).map_err(io)?;
        let local = stream.local_addr().map_err(io)?;
        let reader = stream.try_clone().map_err(io)?;
        let state = LinkState::new("transport.tcp");
        let (tx, rx) = unbounded();
        let reader_state = state.clone();
        let max_frame = opts.max_frame;
        thread::Builder::new()
            .name(format!("tcp-reader-{local}"))
            .spawn(move || read_loop(reader, reader_state, tx, max_frame))
            .map_err(io)?;
        Ok(Self {
            endpoint: Endpoint::Tcp {
                host: local.ip().to_string(),
                port: local.port(),
            },
            state,
            writer: Mutex::new(stream),
            inbox: rx,
            max_frame,
        })
    }

    fn write_frame(&self, body: &[u8]) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(body.len() + 4);
        buf.extend_from_slice(&(body.len() as u32).to_be_bytes());
        buf.extend_from_slice(body);
        let mut w = self.writer.lock();
        w.write_all(&buf)?;
        w.flush()
    }
}

fn read_loop(mut stream: TcpStream, state: Arc<LinkState>, tx: Sender<Inbound>, max_frame: usize) {
    let graceful = AtomicBool::new(false);
    let lost = |detail: String| {
        if state.is_closed() || graceful.load(Ordering::SeqCst) {
            return;
        }
        state.peer_gone.store(true, Ordering::SeqCst);
        let _ = tx.send(Inbound::Failed(FailureKind::Disconnected, detail.clone()));
        state.fire(FailureKind::Disconnected, &detail);
    };
    loop {
        let mut len = [0u8; 4];
        if let Err(e) = stream.read_exact(&mut len) {
            if graceful.load(Ordering::SeqCst) {
                return;
            }
            lost(if e.kind() == ErrorKind::UnexpectedEof {
                "peer closed the connection without a goodbye".to_owned()
            } else {
                format!("read failed: {e}")
            });
            return;
        }
        let len = u32::from_be_bytes(len) as usize;
        if len > max_frame {
            if state.is_closed() {
                return;
            }
            let detail = format!("frame length {len} exceeds maximum {max_frame}");
            state.peer_gone.store(true, Ordering::SeqCst);
            let _ = tx.send(Inbound::Failed(FailureKind::MalformedFrame, detail.clone()));
            state.fire(FailureKind::MalformedFrame, &detail);
            state.closed.store(true, Ordering::SeqCst);
            let _ = stream.shutdown(Shutdown::Both);
            return;
        }
        let mut body = vec![0u8; len];
        if let Err(e) = stream.read_exact(&mut body) {
            lost(format!("connection lost mid-frame ({len}-byte body): {e}"));
            return;
        }
        if body.len() == 2 && body[0] == CONTROL_VERSION && body[1] == OP_BYE {
            graceful.store(true, Ordering::SeqCst);
            state.peer_gone.store(true, Ordering::SeqCst);
            let _ = tx.send(Inbound::Closed);
            continue;
        }
        if tx.send(Inbound::Frame(body)).is_err() {
            return;
        }
    }
}

impl TransportAgent for TcpAgent {
    fn kind(&self) -> TransportKind {
        TransportKind::Tcp
    }

    fn local_endpoint(&self) -> Endpoint {
        self.endpoint.clone()
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
        if self.state.is_peer_gone() {
            return Err(TransportError::Disconnected("peer has gone away".into()));
        }
        self.write_frame(body)
            .map_err(|e| TransportError::Disconnected(format!("write failed: {e}")))
    }

    fn recv_frame(&self, timeout_ms: u64) -> Result<Vec<u8>, TransportError> {
        self.state.recv(&self.inbox, timeout_ms)
    }

    fn set_exception_handler(&self, handler: ExceptionHandler) {
        self.state.set_handler(handler);
    }

    fn close(&self) {
        if self.state.is_closed() {
            return;
        }
        if !self.state.is_peer_gone() {
            let _ = self.write_frame(&bye_frame());
        }
        self.state.closed.store(true, Ordering::SeqCst);
        let _ = self.writer.lock().shutdown(Shutdown::Both);
    }

    fn abort(&self) {
        self.state.closed.store(true, Ordering::SeqCst);
        let _ = self.writer.lock().shutdown(Shutdown::Both);
    }

    fn reject_malformed(&self, detail: &str) {
        if self.state.is_closed() {
            return;
        }
        self.state.fire(FailureKind::MalformedFrame, detail);
        self.abort();
    }
}

impl Drop for TcpAgent {
    fn drop(&mut self) {
        self.close();
    }
}

pub struct TcpTransportListener {
    listener: TcpListener,
    endpoint: Endpoint,
    opts: TransportOptions,
    closed: AtomicBool,
}

impl TcpTransportListener {
    pub fn bind(host: &str, port: u16, opts: TransportOptions) -> Result<Self, TransportError> {
        let listener = TcpListener::bind((host, port)).map_err(|e| {
            TransportError::ConnectFailed(format!("cannot bind {host}:{port}: {e}"))
        })?;
        listener
            .set_nonblocking(true)
            .map_err(|e| TransportError::ConnectFailed(e.to_string()))?;
        let bound = listener
            .local_addr()
            .map_err(|e| TransportError::ConnectFailed(e.to_string()))?;
        Ok(Self {
            listener,
            endpoint: Endpoint::Tcp {
                host: host.to_owned(),
                port: bound.port(),
            },
            opts,
            closed: AtomicBool::new(false),
        })
    }
}

impl Listener for TcpTransportListener {
    fn local_endpoint(&self) -> Endpoint {
        self.endpoint.clone()
    }

    fn accept(&self, timeout_ms: u64) -> Result<Box<dyn TransportAgent>, TransportError> {
        let deadline = Instant::now() + Duration::from_millis(timeout_ms);
        loop {
            if self.closed.load(Ordering::SeqCst) {
                return Err(TransportError::Disconnected("listener closed".into()));
            }
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream
                        .set_nonblocking(false)
                        .map_err(|e| TransportError::ConnectFailed(e.to_string()))?;
                    return Ok(Box::new(TcpAgent::from_stream(stream, self.opts)?));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(TransportError::TimeoutExpired);
                    }
                    thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(TransportError::ConnectFailed(format!("accept failed: {e}"))),
            }
        }
    }

    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
    }
}
