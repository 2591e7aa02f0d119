//! The demand store: a linearizable staging area between generators and
//! workers.
//!
//! Every state change happens under one lock, giving a single commit
//! order. Subscriber callbacks are dispatched after the lock is released,
//! in commit order, by whichever committing thread holds the dispatch
//! token.

mod remote;
mod server;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use thiserror::Error;

use crate::clock::{self, Clock, Millis};
use crate::demand::{route_destination, Demand, DemandSignature, DemandState, Destination};
use crate::transport::TransportError;

pub use remote::RemoteStore;
pub use server::StoreHandler;

/// Default claim lease before a stalled demand is handed to another worker.
pub const DEFAULT_LEASE_MS: u64 = 5_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("timed out")]
    TimeoutExpired,
    #[error("unknown demand {0}")]
    UnknownDemand(DemandSignature),
    #[error("conflicting result for demand {0}")]
    ResultConflict(DemandSignature),
    #[error("taker {taker} may not take from {dest}")]
    InvalidDestination { taker: String, dest: String },
    #[error("unknown subscription {0}")]
    UnknownSubscription(u64),
    #[error("store request failed: {0}")]
    Remote(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// What `write` did with a demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteOutcome {
    /// Staged as a new pending entry.
    Queued,
    /// Already staged or claimed under the same signature.
    Duplicate,
    /// Already computed; served from the result cache.
    Cached,
    /// Not pending and not cached; nothing to stage.
    Ignored,
}

impl WriteOutcome {
    pub(crate) fn code(self) -> u8 {
        match self {
            WriteOutcome::Queued => 0,
            WriteOutcome::Duplicate => 1,
            WriteOutcome::Cached => 2,
            WriteOutcome::Ignored => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => WriteOutcome::Queued,
            1 => WriteOutcome::Duplicate,
            2 => WriteOutcome::Cached,
            3 => WriteOutcome::Ignored,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StoreEntry {
    pub demand: Demand,
    pub destination: Destination,
    pub claimed_at: Option<Millis>,
    pub claimed_by: Option<String>,
    seq: u64,
}

/// Signature to result memo. A mapping, once written, never changes.
#[derive(Debug, Default)]
pub struct ResultCache {
    entries: HashMap<DemandSignature, Arc<Vec<u8>>>,
    hits: u64,
    misses: u64,
}

impl ResultCache {
    pub fn get(&self, sig: &DemandSignature) -> Option<&Arc<Vec<u8>>> {
        self.entries.get(sig)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    /// Returns false when a different value is already recorded.
    fn insert(&mut self, sig: DemandSignature, result: Arc<Vec<u8>>) -> bool {
        match self.entries.get(&sig) {
            Some(existing) => existing.as_slice() == result.as_slice(),
            None => {
                self.entries.insert(sig, result);
                true
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StoreStats {
    pub pending: u64,
    pub in_process: u64,
    pub computed: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub notifications_sent: u64,
}

impl StoreStats {
    pub fn count(&self, state: DemandState) -> u64 {
        match state {
            DemandState::Pending => self.pending,
            DemandState::InProcess => self.in_process,
            DemandState::Computed => self.computed,
        }
    }

    pub fn total(&self) -> u64 {
        self.pending + self.in_process + self.computed
    }

    /// `key=value` lines, one per counter.
    pub fn to_kv(&self) -> String {
        format!(
            "pending={}\nin_process={}\ncomputed={}\ncache_hits={}\ncache_misses={}\nnotifications_sent={}\n",
            self.pending,
            self.in_process,
            self.computed,
            self.cache_hits,
            self.cache_misses,
            self.notifications_sent
        )
    }

    pub fn from_kv(text: &str) -> Result<Self, String> {
        let mut s = StoreStats::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("bad stats line {line:?}"))?;
            let v: u64 = v
                .trim()
                .parse()
                .map_err(|_| format!("bad stats value in {line:?}"))?;
            match k.trim() {
                "pending" => s.pending = v,
                "in_process" => s.in_process = v,
                "computed" => s.computed = v,
                "cache_hits" => s.cache_hits = v,
                "cache_misses" => s.cache_misses = v,
                "notifications_sent" => s.notifications_sent = v,
                _ => {}
            }
        }
        Ok(s)
    }
}

/// Operations every store front end offers, local or remote.
/// A batch of committed results and the cursor to resume from.
pub type Committed = (Vec<(DemandSignature, Vec<u8>)>, u64);

pub trait StoreApi: Send + Sync {
    fn write(&self, d: Demand) -> Result<WriteOutcome, StoreError>;
    fn take_pending(
        &self,
        taker: &str,
        dest: &Destination,
        timeout_ms: u64,
    ) -> Result<Demand, StoreError>;
    fn put_result(&self, sig: DemandSignature, result: Vec<u8>) -> Result<(), StoreError>;
    fn get_result(&self, sig: DemandSignature, timeout_ms: u64) -> Result<Vec<u8>, StoreError>;
    fn lease_sweep(&self, now: Millis, lease_ms: u64) -> Result<usize, StoreError>;
    /// Committed results after `cursor`, at most `max` of them, and the
    /// cursor to resume from.
    fn poll_committed(&self, cursor: u64, max: usize) -> Result<Committed, StoreError>;
    fn stats(&self) -> Result<StoreStats, StoreError>;
}

pub type Subscriber = Arc<dyn Fn(DemandSignature, &[u8]) + Send + Sync>;

#[derive(Default)]
struct Inner {
    entries: HashMap<DemandSignature, StoreEntry>,
    queues: HashMap<Destination, BTreeMap<u64, DemandSignature>>,
    next_seq: u64,
    cache: ResultCache,
    committed: Vec<DemandSignature>,
    subscribers: BTreeMap<u64, Subscriber>,
    next_subscription: u64,
    outbox: VecDeque<(DemandSignature, Arc<Vec<u8>>)>,
    notifications_sent: u64,
}

impl Inner {
    fn enqueue(&mut self, dest: Destination, seq: u64, sig: DemandSignature) {
        self.queues.entry(dest).or_default().insert(seq, sig);
    }

    fn dequeue(&mut self, dest: &Destination, seq: u64) {
        if let Some(q) = self.queues.get_mut(dest) {
            q.remove(&seq);
        }
    }

    /// Oldest pending entry for `dest`, exact destination first, then ANY_DEST.
    fn pick(&self, dest: &Destination) -> Option<DemandSignature> {
        let first = |d: &Destination| {
            self.queues
                .get(d)
                .and_then(|q| q.first_key_value())
                .map(|(_, sig)| *sig)
        };
        first(dest).or_else(|| first(&Destination::AnyDest))
    }
}

pub struct DemandStore {
    inner: Mutex<Inner>,
    changed: Condvar,
    dispatch: Mutex<()>,
    clock: Arc<dyn Clock>,
}

impl Default for DemandStore {
    fn default() -> Self {
        Self::new()
    }
}

impl DemandStore {
    pub fn new() -> Self {
        Self::with_clock(clock::system())
    }

    pub fn with_clock(clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: Mutex::new(Inner::default()),
            changed: Condvar::new(),
            dispatch: Mutex::new(()),
            clock,
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn subscribe(&self, callback: Subscriber) -> u64 {
        let mut inner = self.inner.lock();
        inner.next_subscription += 1;
        let id = inner.next_subscription;
        inner.subscribers.insert(id, callback);
        id
    }

    pub fn unsubscribe(&self, id: u64) -> Result<(), StoreError> {
        self.inner
            .lock()
            .subscribers
            .remove(&id)
            .map(drop)
            .ok_or(StoreError::UnknownSubscription(id))
    }

    /// Snapshot of a staged (pending or claimed) entry.
    pub fn entry(&self, sig: DemandSignature) -> Option<StoreEntry> {
        self.inner.lock().entries.get(&sig).cloned()
    }

    pub fn state_of(&self, sig: DemandSignature) -> Option<DemandState> {
        let inner = self.inner.lock();
        if inner.cache.get(&sig).is_some() {
            return Some(DemandState::Computed);
        }
        inner.entries.get(&sig).map(|e| e.demand.state())
    }

    pub fn cached(&self, sig: DemandSignature) -> Option<Vec<u8>> {
        self.inner
            .lock()
            .cache
            .get(&sig)
            .map(|r| r.as_ref().clone())
    }

    pub fn write(&self, d: Demand) -> WriteOutcome {
        let sig = d.signature();
        let mut inner = self.inner.lock();
        if inner.cache.get(&sig).is_some() {
            return WriteOutcome::Cached;
        }
        if inner.entries.contains_key(&sig) {
            return WriteOutcome::Duplicate;
        }
        if d.state() != DemandState::Pending {
            return WriteOutcome::Ignored;
        }
        let destination = route_destination(&d);
        let seq = inner.next_seq;
        inner.next_seq += 1;
        inner.enqueue(destination.clone(), seq, sig);
        inner.entries.insert(
            sig,
            StoreEntry {
                demand: d,
                destination,
                claimed_at: None,
                claimed_by: None,
                seq,
            },
        );
        drop(inner);
        self.changed.notify_all();
        WriteOutcome::Queued
    }

    pub fn take_pending(
        &self,
        taker: &str,
        dest: &Destination,
        timeout_ms: u64,
    ) -> Result<Demand, StoreError> {
        let allowed = match dest {
            Destination::Dwt | Destination::Dgt => true,
            Destination::TierId(id) => id == taker,
            Destination::AnyDest => false,
        };
        if !allowed {
            return Err(StoreError::InvalidDestination {
                taker: taker.to_owned(),
                dest: dest.to_string(),
            });
        }
        let deadline = Instant::now() + Duration::from_millis(timeout_ms);
        let mut inner = self.inner.lock();
        loop {
            if let Some(sig) = inner.pick(dest) {
                let now = self.clock.now_ms();
                let entry = inner
                    .entries
                    .get(&sig)
                    .expect("queued signature has an entry");
                let (entry_dest, seq) = (entry.destination.clone(), entry.seq);
                inner.dequeue(&entry_dest, seq);
                let entry = inner
                    .entries
                    .get_mut(&sig)
                    .expect("queued signature has an entry");
                entry.demand.claim().expect("queued entries are pending");
                let at = entry
                    .demand
                    .timeline()
                    .last()
                    .map_or(now, |p| p.at.max(now));
                entry
                    .demand
                    .record_access(taker, at)
                    .expect("timestamp clamped to timeline");
                entry.claimed_at = Some(now);
                entry.claimed_by = Some(taker.to_owned());
                return Ok(entry.demand.clone());
            }
            if self.changed.wait_until(&mut inner, deadline).timed_out()
                && inner.pick(dest).is_none()
            {
                return Err(StoreError::TimeoutExpired);
            }
        }
    }

    pub fn put_result(&self, sig: DemandSignature, result: Vec<u8>) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        if let Some(existing) = inner.cache.get(&sig) {
            return if existing.as_slice() == result.as_slice() {
                Ok(())
            } else {
                Err(StoreError::ResultConflict(sig))
            };
        }
        let mut entry = inner
            .entries
            .remove(&sig)
            .ok_or(StoreError::UnknownDemand(sig))?;
        if entry.demand.state() == DemandState::Pending {
            // a late result from a lapsed claim; the work is deterministic
            inner.dequeue(&entry.destination, entry.seq);
            entry
                .demand
                .claim()
                .expect("pending demands can be claimed");
        }
        entry
            .demand
            .store_result(result)
            .expect("claimed demands can complete");
        let result = Arc::new(entry.demand.result().unwrap_or_default().to_vec());
        inner.cache.insert(sig, result.clone());
        inner.committed.push(sig);
        inner.outbox.push_back((sig, result));
        drop(inner);
        self.changed.notify_all();
        self.dispatch_notifications();
        Ok(())
    }

    fn dispatch_notifications(&self) {
        loop {
            let Some(_token) = self.dispatch.try_lock() else {
                return;
            };
            loop {
                let next = {
                    let mut inner = self.inner.lock();
                    inner.outbox.pop_front().map(|n| {
                        let subs: Vec<Subscriber> = inner.subscribers.values().cloned().collect();
                        inner.notifications_sent += subs.len() as u64;
                        (n, subs)
                    })
                };
                let Some(((sig, result), subs)) = next else {
                    break;
                };
                for s in subs {
                    s(sig, &result);
                }
            }
            drop(_token);
            if self.inner.lock().outbox.is_empty() {
                return;
            }
        }
    }

    pub fn get_result(&self, sig: DemandSignature, timeout_ms: u64) -> Result<Vec<u8>, StoreError> {
        let deadline = Instant::now() + Duration::from_millis(timeout_ms);
        let mut inner = self.inner.lock();
        if let Some(r) = inner.cache.get(&sig).cloned() {
            inner.cache.hits += 1;
            return Ok(r.as_ref().clone());
        }
        loop {
            let timed_out = self.changed.wait_until(&mut inner, deadline).timed_out();
            if let Some(r) = inner.cache.get(&sig).cloned() {
                inner.cache.misses += 1;
                return Ok(r.as_ref().clone());
            }
            if timed_out {
                return Err(StoreError::TimeoutExpired);
            }
        }
    }

    /// Revert claims older than `lease_ms` to pending. Returns how many.
    pub fn lease_sweep(&self, now: Millis, lease_ms: u64) -> usize {
        let mut inner = self.inner.lock();
        let expired: Vec<DemandSignature> = inner
            .entries
            .iter()
            .filter(|(_, e)| {
                e.demand.state() == DemandState::InProcess
                    && e.claimed_at
                        .is_some_and(|at| now.saturating_sub(at) > lease_ms)
            })
            .map(|(sig, _)| *sig)
            .collect();
        for sig in &expired {
            let entry = inner.entries.get_mut(sig).expect("collected from entries");
            entry
                .demand
                .release()
                .expect("in-process demands can be released");
            entry.claimed_at = None;
            entry.claimed_by = None;
            let (dest, seq) = (entry.destination.clone(), entry.seq);
            inner.enqueue(dest, seq, *sig);
        }
        drop(inner);
        if !expired.is_empty() {
            self.changed.notify_all();
        }
        expired.len()
    }

    pub fn poll_committed(&self, cursor: u64, max: usize) -> Committed {
        let inner = self.inner.lock();
        let start = (cursor as usize).min(inner.committed.len());
        let end = start.saturating_add(max).min(inner.committed.len());
        let items = inner.committed[start..end]
            .iter()
            .map(|sig| {
                (
                    *sig,
                    inner
                        .cache
                        .get(sig)
                        .expect("committed results are cached")
                        .to_vec(),
                )
            })
            .collect();
        (items, end as u64)
    }

    pub fn stats(&self) -> StoreStats {
        let inner = self.inner.lock();
        let mut s = StoreStats {
            computed: inner.cache.len() as u64,
            cache_hits: inner.cache.hits,
            cache_misses: inner.cache.misses,
            notifications_sent: inner.notifications_sent,
            ..StoreStats::default()
        };
        for e in inner.entries.values() {
            match e.demand.state() {
                DemandState::Pending => s.pending += 1,
                DemandState::InProcess => s.in_process += 1,
                DemandState::Computed => {}
            }
        }
        s
    }
}

impl StoreApi for DemandStore {
    fn write(&self, d: Demand) -> Result<WriteOutcome, StoreError> {
        Ok(DemandStore::write(self, d))
    }

    fn take_pending(
        &self,
        taker: &str,
        dest: &Destination,
        timeout_ms: u64,
    ) -> Result<Demand, StoreError> {
        DemandStore::take_pending(self, taker, dest, timeout_ms)
    }

    fn put_result(&self, sig: DemandSignature, result: Vec<u8>) -> Result<(), StoreError> {
        DemandStore::put_result(self, sig, result)
    }

    fn get_result(&self, sig: DemandSignature, timeout_ms: u64) -> Result<Vec<u8>, StoreError> {
        DemandStore::get_result(self, sig, timeout_ms)
    }

    fn lease_sweep(&self, now: Millis, lease_ms: u64) -> Result<usize, StoreError> {
        Ok(DemandStore::lease_sweep(self, now, lease_ms))
    }

    fn poll_committed(&self, cursor: u64, max: usize) -> Result<Committed, StoreError> {
        Ok(DemandStore::poll_committed(self, cursor, max))
    }

    fn stats(&self) -> Result<StoreStats, StoreError> {
        Ok(DemandStore::stats(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::demand::{Context, DemandType};
    use std::sync::atomic::{AtomicU64, Ordering};

    fn demand(n: u64) -> Demand {
        Demand::procedural(Context::new().with_num("n", n), vec![n as u8])
    }

    #[test]
    fn pending_procedural_is_queued_for_workers() {
        let store = DemandStore::new();
        let d = demand(1);
        assert_eq!(store.write(d.clone()), WriteOutcome::Queued);
        let e = store.entry(d.signature()).unwrap();
        assert_eq!(e.destination, Destination::Dwt);
        assert!(e.claimed_at.is_none() && e.claimed_by.is_none());
    }

    #[test]
    fn duplicate_write_is_idempotent() {
        let store = DemandStore::new();
        assert_eq!(store.write(demand(1)), WriteOutcome::Queued);
        assert_eq!(store.write(demand(1)), WriteOutcome::Duplicate);
        assert_eq!(store.stats().pending, 1);
    }

    #[test]
    fn cached_signature_completes_on_write() {
        let store = DemandStore::new();
        let d = demand(1);
        store.write(d.clone());
        store.take_pending("w1", &Destination::Dwt, 0).unwrap();
        store.put_result(d.signature(), b"R".to_vec()).unwrap();
        assert_eq!(store.write(d.clone()), WriteOutcome::Cached);
        assert_eq!(store.stats().pending, 0);
        assert!(matches!(
            store.take_pending("w1", &Destination::Dwt, 10),
            Err(StoreError::TimeoutExpired)
        ));
    }

    #[test]
    fn take_claims_and_records_taker() {
        let clock = ManualClock::new(1_000);
        let store = DemandStore::with_clock(clock.clone());
        let d = demand(1);
        store.write(d.clone());
        let got = store.take_pending("w1", &Destination::Dwt, 0).unwrap();
        assert_eq!(got.signature(), d.signature());
        assert_eq!(got.state(), DemandState::InProcess);
        assert_eq!(got.access_count(), 1);
        assert_eq!(got.timeline().last().unwrap().tier_id, "w1");
        let e = store.entry(d.signature()).unwrap();
        assert_eq!(e.claimed_by.as_deref(), Some("w1"));
        assert_eq!(e.claimed_at, Some(1_000));
    }

    #[test]
    fn take_times_out_on_empty_store() {
        let store = DemandStore::new();
        let t = Instant::now();
        assert_eq!(
            store.take_pending("w", &Destination::Dwt, 20),
            Err(StoreError::TimeoutExpired)
        );
        assert!(t.elapsed() >= Duration::from_millis(20));
    }

    #[test]
    fn take_rejects_foreign_destinations() {
        let store = DemandStore::new();
        assert!(matches!(
            store.take_pending("w1", &Destination::TierId("w2".into()), 0),
            Err(StoreError::InvalidDestination { .. })
        ));
        assert!(store.take_pending("w1", &Destination::AnyDest, 0).is_err());
    }

    #[test]
    fn exact_destination_preferred_over_any_dest() {
        let store = DemandStore::new();
        let any = Demand::new(
            DemandType::Resource,
            Context::new().with("k", "r"),
            vec![],
            None,
        )
        .unwrap();
        let dwt = demand(2);
        store.write(any.clone());
        store.write(dwt.clone());
        assert_eq!(
            store
                .take_pending("w", &Destination::Dwt, 0)
                .unwrap()
                .signature(),
            dwt.signature()
        );
        assert_eq!(
            store
                .take_pending("w", &Destination::Dwt, 0)
                .unwrap()
                .signature(),
            any.signature()
        );
    }

    #[test]
    fn system_demand_only_for_its_tier() {
        let store = DemandStore::new();
        let sys = Demand::new(
            DemandType::System,
            Context::new(),
            vec![],
            Some("DST-1".into()),
        )
        .unwrap();
        store.write(sys.clone());
        assert!(store.take_pending("w", &Destination::Dwt, 0).is_err());
        let got = store
            .take_pending("DST-1", &Destination::TierId("DST-1".into()), 0)
            .unwrap();
        assert_eq!(got.signature(), sys.signature());
    }

    #[test]
    fn fifo_within_destination() {
        let store = DemandStore::new();
        for n in 0..5 {
            store.write(demand(n));
        }
        for n in 0..5 {
            assert_eq!(
                store
                    .take_pending("w", &Destination::Dwt, 0)
                    .unwrap()
                    .signature(),
                demand(n).signature()
            );
        }
    }

    #[test]
    fn put_result_notifies_each_subscriber_once() {
        let store = DemandStore::new();
        let a = Arc::new(AtomicU64::new(0));
        let b = Arc::new(AtomicU64::new(0));
        let (ca, cb) = (a.clone(), b.clone());
        store.subscribe(Arc::new(move |_, _| {
            ca.fetch_add(1, Ordering::SeqCst);
        }));
        store.subscribe(Arc::new(move |_, _| {
            cb.fetch_add(1, Ordering::SeqCst);
        }));
        let d = demand(1);
        store.write(d.clone());
        store.take_pending("w", &Destination::Dwt, 0).unwrap();
        store.put_result(d.signature(), b"R".to_vec()).unwrap();
        store.put_result(d.signature(), b"R".to_vec()).unwrap();
        assert_eq!(a.load(Ordering::SeqCst), 1);
        assert_eq!(b.load(Ordering::SeqCst), 1);
        assert_eq!(store.state_of(d.signature()), Some(DemandState::Computed));
        assert_eq!(store.stats().notifications_sent, 2);
    }

    #[test]
    fn put_result_errors() {
        let store = DemandStore::new();
        let d = demand(1);
        assert_eq!(
            store.put_result(d.signature(), vec![]),
            Err(StoreError::UnknownDemand(d.signature()))
        );
        store.write(d.clone());
        store.take_pending("w", &Destination::Dwt, 0).unwrap();
        store.put_result(d.signature(), b"A".to_vec()).unwrap();
        assert_eq!(
            store.put_result(d.signature(), b"B".to_vec()),
            Err(StoreError::ResultConflict(d.signature()))
        );
    }

    #[test]
    fn subscribers_see_commit_order_and_unsubscribe_works() {
        let store = DemandStore::new();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let s = seen.clone();
        let id = store.subscribe(Arc::new(move |sig, _| s.lock().push(sig)));
        let ds: Vec<_> = (0..3).map(demand).collect();
        for d in &ds {
            store.write(d.clone());
        }
        for d in &ds {
            store.take_pending("w", &Destination::Dwt, 0).unwrap();
            store.put_result(d.signature(), vec![1]).unwrap();
        }
        assert_eq!(
            *seen.lock(),
            ds.iter().map(Demand::signature).collect::<Vec<_>>()
        );
        store.unsubscribe(id).unwrap();
        assert_eq!(
            store.unsubscribe(id),
            Err(StoreError::UnknownSubscription(id))
        );
        let d = demand(9);
        store.write(d.clone());
        store.take_pending("w", &Destination::Dwt, 0).unwrap();
        store.put_result(d.signature(), vec![]).unwrap();
        assert_eq!(seen.lock().len(), 3);
    }

    #[test]
    fn get_result_counts_hits_and_misses() {
        let store = Arc::new(DemandStore::new());
        let d = demand(1);
        assert_eq!(
            store.get_result(d.signature(), 20),
            Err(StoreError::TimeoutExpired)
        );
        store.write(d.clone());
        store.take_pending("w", &Destination::Dwt, 0).unwrap();
        let waiter = {
            let (store, sig) = (store.clone(), d.signature());
            std::thread::spawn(move || store.get_result(sig, 5_000))
        };
        std::thread::sleep(Duration::from_millis(30));
        store.put_result(d.signature(), b"R".to_vec()).unwrap();
        assert_eq!(waiter.join().unwrap().unwrap(), b"R");
        assert_eq!(store.get_result(d.signature(), 0).unwrap(), b"R");
        let s = store.stats();
        assert_eq!((s.cache_hits, s.cache_misses), (1, 1));
    }

    #[test]
    fn lease_threshold() {
        let clock = ManualClock::new(10_000);
        let store = DemandStore::with_clock(clock.clone());
        let d = demand(1);
        store.write(d.clone());
        store.take_pending("w1", &Destination::Dwt, 0).unwrap();
        assert_eq!(store.lease_sweep(10_000 + 100 - 1, 100), 0);
        assert_eq!(store.lease_sweep(10_000 + 100, 100), 0);
        assert_eq!(store.lease_sweep(10_000 + 100 + 1, 100), 1);
        let e = store.entry(d.signature()).unwrap();
        assert_eq!(e.demand.state(), DemandState::Pending);
        assert!(e.claimed_by.is_none() && e.claimed_at.is_none());

        clock.advance(500);
        let again = store.take_pending("w2", &Destination::Dwt, 0).unwrap();
        assert_eq!(again.access_count(), 2);
        store.put_result(d.signature(), b"ok".to_vec()).unwrap();
        assert_eq!(store.state_of(d.signature()), Some(DemandState::Computed));
    }

    #[test]
    fn late_result_after_lapse_is_accepted() {
        let clock = ManualClock::new(0);
        let store = DemandStore::with_clock(clock.clone());
        let d = demand(1);
        store.write(d.clone());
        store.take_pending("w1", &Destination::Dwt, 0).unwrap();
        store.lease_sweep(1_000, 10);
        store.put_result(d.signature(), b"late".to_vec()).unwrap();
        assert_eq!(store.stats().pending, 0);
        assert_eq!(store.get_result(d.signature(), 0).unwrap(), b"late");
    }

    #[test]
    fn poll_committed_pages() {
        let store = DemandStore::new();
        for n in 0..3 {
            let d = demand(n);
            store.write(d.clone());
            store.take_pending("w", &Destination::Dwt, 0).unwrap();
            store.put_result(d.signature(), vec![n as u8]).unwrap();
        }
        let (first, cur) = store.poll_committed(0, 2);
        assert_eq!(first.len(), 2);
        let (rest, cur) = store.poll_committed(cur, 10);
        assert_eq!(rest, vec![(demand(2).signature(), vec![2])]);
        assert_eq!(cur, 3);
    }

    #[test]
    fn stats_roundtrip_through_kv() {
        let s = StoreStats {
            pending: 1,
            in_process: 2,
            computed: 3,
            cache_hits: 4,
            cache_misses: 5,
            notifications_sent: 6,
        };
        assert_eq!(StoreStats::from_kv(&s.to_kv()).unwrap(), s);
    }
}
