use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::demand::DemandSignature;

/// A pure stage function: `(params, input) -> output`.
pub type Executor = Arc<dyn Fn(&[u8], &[u8]) -> Result<Vec<u8>, String> + Send + Sync>;

#[derive(Clone)]
struct Entry {
    run: Executor,
    calls: Arc<AtomicU64>,
}

/// Named stage executors with invocation counters. Clones share counters.
#[derive(Clone, Default)]
pub struct ExecutorRegistry {
    entries: BTreeMap<String, Entry>,
}

impl ExecutorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, run: Executor) {
        self.entries.insert(
            name.to_owned(),
            Entry {
                run,
                calls: Arc::default(),
            },
        );
    }

    /// Replace every executor with `wrap(name, original)`, keeping counters.
    pub fn wrap_all(&mut self, wrap: impl Fn(&str, Executor) -> Executor) {
        for (name, e) in self.entries.iter_mut() {
            e.run = wrap(name, e.run.clone());
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Run `name`, counting the call. `None` if no such executor.
    pub fn invoke(
        &self,
        name: &str,
        params: &[u8],
        input: &[u8],
    ) -> Option<Result<Vec<u8>, String>> {
        let e = self.entries.get(name)?;
        e.calls.fetch_add(1, Ordering::SeqCst);
        Some((e.run)(params, input))
    }

    pub fn invocations(&self, name: &str) -> u64 {
        self.entries
            .get(name)
            .map_or(0, |e| e.calls.load(Ordering::SeqCst))
    }

    pub fn invocation_counts(&self) -> BTreeMap<String, u64> {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), e.calls.load(Ordering::SeqCst)))
            .collect()
    }

    pub fn total_invocations(&self) -> u64 {
        self.entries
            .values()
            .map(|e| e.calls.load(Ordering::SeqCst))
            .sum()
    }
}

impl std::fmt::Debug for ExecutorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map().entries(self.invocation_counts()).finish()
    }
}

/// First byte of a result that records a failure instead of an output.
pub const ERROR_RECORD_TAG: u8 = 0xEE;

pub fn error_record(detail: &str) -> Vec<u8> {
    let detail = if detail.trim().is_empty() {
        "(no detail supplied)"
    } else {
        detail
    };
    let mut out = Vec::with_capacity(detail.len() + 1);
    out.push(ERROR_RECORD_TAG);
    out.extend_from_slice(detail.as_bytes());
    out
}

pub fn decode_error_record(result: &[u8]) -> Option<String> {
    match result.split_first() {
        Some((&ERROR_RECORD_TAG, rest)) => Some(String::from_utf8_lossy(rest).into_owned()),
        _ => None,
    }
}

const PAYLOAD_TAG: u8 = 0x21;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageInput {
    Inline(Vec<u8>),
    /// The result of another demand, fetched from the store.
    Ref(DemandSignature),
}

/// Demand payload for a stage: its parameters and where its input comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePayload {
    pub params: Vec<u8>,
    pub input: StageInput,
}

impl StagePayload {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_tag(PAYLOAD_TAG);
        e.bytes(&self.params);
        match &self.input {
            StageInput::Inline(b) => e.u8(0).bytes(b),
            StageInput::Ref(sig) => e.u8(1).u64(sig.0),
        };
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        d.expect_tag(PAYLOAD_TAG, "stage payload")?;
        let params = d.bytes()?.to_vec();
        let input = match d.u8()? {
            0 => StageInput::Inline(d.bytes()?.to_vec()),
            1 => StageInput::Ref(DemandSignature(d.u64()?)),
            _ => return Err(DecodeError::Invalid("stage input kind".into())),
        };
        d.finish()?;
        Ok(Self { params, input })
    }
}
