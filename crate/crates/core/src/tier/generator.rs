use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use crate::demand::Demand;
use crate::diag;
use crate::store::{StoreApi, StoreError, WriteOutcome};
use crate::transport::TransportOptions;

use super::executor::decode_error_record;
use super::TierError;

#[derive(Debug, Clone, Copy)]
pub struct GeneratorOptions {
    /// Chains fed concurrently, each over its own store connection.
    pub threads: usize,
    /// Pause before reconnecting after a store failure.
    pub retry_ms: u64,
    pub transport: TransportOptions,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self {
            threads: 8,
            retry_ms: 20,
            transport: TransportOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainStatus {
    Completed,
    /// The demand at `index` computed to an error record.
    Failed {
        index: usize,
        detail: String,
    },
    /// The deadline passed (or the generator stopped) while waiting on `index`.
    Stalled {
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainOutcome {
    /// Results of the demands that finished, in chain order.
    pub results: Vec<Vec<u8>>,
    pub written: usize,
    /// Writes answered from the result cache.
    pub cached: usize,
    pub status: ChainStatus,
}

/// Longest single wait on the store, so stop requests are noticed.
const WAIT_SLICE_MS: u64 = 200;

type Connect<'a> = &'a (dyn Fn() -> Result<Arc<dyn StoreApi>, TierError> + Sync);

/// Write each chain's demands in order, each one only after its
/// predecessor has computed. Chains are independent and run concurrently.
/// A chain stops at its first error record.
pub fn generate(
    connect: Connect<'_>,
    chains: &[Vec<Demand>],
    deadline: Instant,
    opts: &GeneratorOptions,
    running: &AtomicBool,
) -> Vec<ChainOutcome> {
    let slots: Vec<Mutex<Option<ChainOutcome>>> = chains.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let threads = opts.threads.max(1).min(chains.len());
    thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| {
                let mut feeder = Feeder {
                    connect,
                    store: None,
                    opts,
                    running,
                    deadline,
                    failing: false,
                };
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(chain) = chains.get(i) else { break };
                    *slots[i].lock() = Some(feeder.run_chain(chain));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("every chain was fed"))
        .collect()
}

struct Feeder<'a> {
    connect: Connect<'a>,
    store: Option<Arc<dyn StoreApi>>,
    opts: &'a GeneratorOptions,
    running: &'a AtomicBool,
    deadline: Instant,
    failing: bool,
}

impl Feeder<'_> {
    fn remaining_ms(&self) -> Option<u64> {
        if !self.running.load(Ordering::SeqCst) {
            return None;
        }
        let left = self
            .deadline
            .saturating_duration_since(Instant::now())
            .as_millis() as u64;
        (left > 0).then_some(left)
    }

    /// Run `op` against the store, reconnecting on failure, until it
    /// succeeds or time runs out. `TimeoutExpired` from the store is retried.
    fn attempt<T>(
        &mut self,
        mut op: impl FnMut(&dyn StoreApi, u64) -> Result<T, StoreError>,
    ) -> Option<T> {
        loop {
            let left = self.remaining_ms()?;
            let store = match &self.store {
                Some(s) => s.clone(),
                None => match (self.connect)() {
                    Ok(s) => {
                        self.store = Some(s.clone());
                        s
                    }
                    Err(e) => {
                        self.failed(&e.to_string());
                        continue;
                    }
                },
            };
            match op(&*store, left.min(WAIT_SLICE_MS)) {
                Ok(v) => {
                    self.failing = false;
                    return Some(v);
                }
                Err(StoreError::TimeoutExpired) => {}
                Err(e) => {
                    self.store = None;
                    self.failed(&e.to_string());
                }
            }
        }
    }

    fn failed(&mut self, detail: &str) {
        if !self.failing {
            diag::report("generator", "store", detail);
            self.failing = true;
        }
        thread::sleep(Duration::from_millis(self.opts.retry_ms.max(1)));
    }

    fn run_chain(&mut self, chain: &[Demand]) -> ChainOutcome {
        let mut out = ChainOutcome {
            results: Vec::new(),
            written: 0,
            cached: 0,
            status: ChainStatus::Completed,
        };
        for (index, d) in chain.iter().enumerate() {
            let Some(outcome) = self.attempt(|s, _| s.write(d.clone())) else {
                out.status = ChainStatus::Stalled { index };
                return out;
            };
            out.written += 1;
            if outcome == WriteOutcome::Cached {
                out.cached += 1;
            }
            let sig = d.signature();
            let Some(result) = self.attempt(|s, wait| s.get_result(sig, wait)) else {
                out.status = ChainStatus::Stalled { index };
                return out;
            };
            let failure = decode_error_record(&result);
            out.results.push(result);
            if let Some(detail) = failure {
                out.status = ChainStatus::Failed { index, detail };
                return out;
            }
        }
        out
    }
}
