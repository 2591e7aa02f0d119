use std::sync::Arc;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::demand::{Demand, DemandSignature, Destination};
use crate::protocol::*;
use crate::transport::Message;

use super::{DemandStore, StoreError};

/// Serves store opcodes against a local store.
pub struct StoreHandler {
    store: Arc<DemandStore>,
}

impl StoreHandler {
    pub fn new(store: Arc<DemandStore>) -> Self {
        Self { store }
    }
}

pub(crate) fn store_err(e: &StoreError) -> Message {
    let code = match e {
        StoreError::TimeoutExpired => ERR_TIMEOUT,
        StoreError::UnknownDemand(_) => ERR_UNKNOWN_DEMAND,
        StoreError::ResultConflict(_) => ERR_RESULT_CONFLICT,
        StoreError::InvalidDestination { .. } => ERR_INVALID_DESTINATION,
        _ => ERR_FAILED,
    };
    err(code, &e.to_string())
}

fn bad(e: DecodeError) -> Message {
    err(ERR_BAD_REQUEST, &format!("undecodable request: {e}"))
}

impl StoreHandler {
    fn dispatch(
        &self,
        opcode: u8,
        body: &[u8],
    ) -> Result<Result<Vec<u8>, StoreError>, DecodeError> {
        let mut d = Decoder::new(body);
        let store = &self.store;
        Ok(match opcode {
            OP_WRITE => {
                let demand = Demand::from_bytes(body)?;
                Ok(vec![store.write(demand).code()])
            }
            OP_TAKE => {
                let taker = d.string()?;
                let dest = Destination::decode(&mut d)?;
                let timeout = d.u64()?;
                d.finish()?;
                store
                    .take_pending(&taker, &dest, timeout)
                    .map(|dm| dm.to_bytes())
            }
            OP_PUT_RESULT => {
                let sig = DemandSignature(d.u64()?);
                let result = d.bytes()?.to_vec();
                d.finish()?;
                store.put_result(sig, result).map(|_| Vec::new())
            }
            OP_GET_RESULT => {
                let sig = DemandSignature(d.u64()?);
                let timeout = d.u64()?;
                d.finish()?;
                store.get_result(sig, timeout)
            }
            OP_POLL => {
                let cursor = d.u64()?;
                let max = d.u32()? as usize;
                d.finish()?;
                let (items, next) = store.poll_committed(cursor, max);
                let mut e = Encoder::new();
                e.u64(next).u32(items.len() as u32);
                for (sig, r) in &items {
                    e.u64(sig.0).bytes(r);
                }
                Ok(e.finish())
            }
            OP_STATS => Ok(store.stats().to_kv().into_bytes()),
            OP_SWEEP => {
                let now = d.u64()?;
                let lease = d.u64()?;
                d.finish()?;
                Ok((store.lease_sweep(now, lease) as u64)
                    .to_le_bytes()
                    .to_vec())
            }
            _ => {
                return Err(DecodeError::BadTag {
                    found: opcode,
                    expected: "store opcode",
                })
            }
        })
    }

    pub fn serves(opcode: u8) -> bool {
        matches!(
            opcode,
            OP_WRITE | OP_TAKE | OP_PUT_RESULT | OP_GET_RESULT | OP_POLL | OP_STATS | OP_SWEEP
        )
    }
}

impl RequestHandler for StoreHandler {
    fn handle(&self, request: Message) -> Option<Message> {
        let (opcode, body) = match request {
            Message::Demand(d) => return Some(ok(vec![self.store.write(d).code()])),
            Message::Control { opcode, body } if Self::serves(opcode) => (opcode, body),
            Message::Control { .. } => return None,
        };
        Some(match self.dispatch(opcode, &body) {
            Ok(Ok(reply)) => ok(reply),
            Ok(Err(e)) => store_err(&e),
            Err(e) => bad(e),
        })
    }
}
