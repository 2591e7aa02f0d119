use parking_lot::Mutex;

use crate::clock::Millis;
use crate::codec::{Decoder, Encoder};
use crate::demand::{Demand, DemandSignature, Destination};
use crate::protocol::*;
use crate::transport::{self, Endpoint, TransportAgent, TransportError, TransportOptions};

use super::{Committed, StoreApi, StoreError, StoreStats, WriteOutcome};

/// Extra time allowed for a reply beyond the server-side wait.
const REPLY_SLACK_MS: u64 = 10_000;

/// Store client over any transport agent. One request in flight at a time.
pub struct RemoteStore {
    agent: Mutex<Box<dyn TransportAgent>>,
    endpoint: Endpoint,
}

impl RemoteStore {
    pub fn connect(endpoint: &Endpoint, opts: TransportOptions) -> Result<Self, StoreError> {
        Ok(Self::over(
            transport::connect(endpoint, opts)?,
            endpoint.clone(),
        ))
    }

    pub fn over(agent: Box<dyn TransportAgent>, endpoint: Endpoint) -> Self {
        Self {
            agent: Mutex::new(agent),
            endpoint,
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Close the connection in an orderly way.
    pub fn close(&self) {
        self.agent.lock().close();
    }

    /// Drop the connection without a goodbye.
    pub fn abort(&self) {
        self.agent.lock().abort();
    }

    /// One request/reply exchange; `classify` maps error replies that
    /// carry a known code.
    fn request(
        &self,
        opcode: u8,
        body: Vec<u8>,
        server_wait_ms: u64,
        classify: impl FnOnce(&ErrorReply) -> Option<StoreError>,
    ) -> Result<Vec<u8>, StoreError> {
        let agent = self.agent.lock();
        match call(
            &**agent,
            opcode,
            body,
            server_wait_ms.saturating_add(REPLY_SLACK_MS),
        ) {
            Ok(body) => Ok(body),
            Err(Ok(reply)) if reply.code == ERR_TIMEOUT => Err(StoreError::TimeoutExpired),
            Err(Ok(reply)) => Err(classify(&reply).unwrap_or(StoreError::Remote(reply.detail))),
            Err(Err(e)) => {
                // a lost reply leaves the connection out of step
                if matches!(e, TransportError::TimeoutExpired) {
                    agent.abort();
                }
                Err(StoreError::Transport(e))
            }
        }
    }
}

fn by_sig(sig: DemandSignature) -> impl FnOnce(&ErrorReply) -> Option<StoreError> {
    move |r| match r.code {
        ERR_UNKNOWN_DEMAND => Some(StoreError::UnknownDemand(sig)),
        ERR_RESULT_CONFLICT => Some(StoreError::ResultConflict(sig)),
        _ => None,
    }
}

fn malformed(e: impl std::fmt::Display) -> StoreError {
    StoreError::Transport(TransportError::MalformedFrame(format!("store reply: {e}")))
}

impl StoreApi for RemoteStore {
    fn write(&self, d: Demand) -> Result<WriteOutcome, StoreError> {
        let body = self.request(OP_WRITE, d.to_bytes(), 0, |_| None)?;
        body.first()
            .and_then(|c| WriteOutcome::from_code(*c))
            .ok_or_else(|| malformed("bad write outcome"))
    }

    fn take_pending(
        &self,
        taker: &str,
        dest: &Destination,
        timeout_ms: u64,
    ) -> Result<Demand, StoreError> {
        let mut e = Encoder::new();
        e.str(taker);
        dest.encode(&mut e);
        e.u64(timeout_ms);
        let body = self.request(OP_TAKE, e.finish(), timeout_ms, |r| {
            (r.code == ERR_INVALID_DESTINATION).then(|| StoreError::InvalidDestination {
                taker: taker.to_owned(),
                dest: dest.to_string(),
            })
        })?;
        Demand::from_bytes(&body).map_err(malformed)
    }

    fn put_result(&self, sig: DemandSignature, result: Vec<u8>) -> Result<(), StoreError> {
        let mut e = Encoder::new();
        e.u64(sig.0).bytes(&result);
        self.request(OP_PUT_RESULT, e.finish(), 0, by_sig(sig))
            .map(drop)
    }

    fn get_result(&self, sig: DemandSignature, timeout_ms: u64) -> Result<Vec<u8>, StoreError> {
        let mut e = Encoder::new();
        e.u64(sig.0).u64(timeout_ms);
        self.request(OP_GET_RESULT, e.finish(), timeout_ms, by_sig(sig))
    }

    fn lease_sweep(&self, now: Millis, lease_ms: u64) -> Result<usize, StoreError> {
        let mut e = Encoder::new();
        e.u64(now).u64(lease_ms);
        let body = self.request(OP_SWEEP, e.finish(), 0, |_| None)?;
        Decoder::new(&body)
            .u64()
            .map(|n| n as usize)
            .map_err(malformed)
    }

    fn poll_committed(&self, cursor: u64, max: usize) -> Result<Committed, StoreError> {
        let mut e = Encoder::new();
        e.u64(cursor).u32(max.min(u32::MAX as usize) as u32);
        let body = self.request(OP_POLL, e.finish(), 0, |_| None)?;
        let mut d = Decoder::new(&body);
        let parse = |d: &mut Decoder<'_>| -> Result<_, crate::codec::DecodeError> {
            let next = d.u64()?;
            let n = d.u32()?;
            let mut items = Vec::new();
            for _ in 0..n {
                let sig = DemandSignature(d.u64()?);
                items.push((sig, d.bytes()?.to_vec()));
            }
            d.finish()?;
            Ok((items, next))
        };
        parse(&mut d).map_err(malformed)
    }

    fn stats(&self) -> Result<StoreStats, StoreError> {
        let body = self.request(OP_STATS, Vec::new(), 0, |_| None)?;
        let text = String::from_utf8(body).map_err(malformed)?;
        StoreStats::from_kv(&text).map_err(malformed)
    }
}
