//! Shared persistence layer for the authority services.
//!
//! Two engines sit behind one interface: an in-memory map (named instances
//! are shared process-wide, so several replicas opened with the same
//! `mem://name` URI see one database, the way several containers would share
//! one backend) and an append-only single-file log guarded by `flock` for
//! cross-process use.
//!
//! `consume_once` is the single cross-replica synchronization point: an
//! atomic insert-if-absent whose outcome is durable before it returns,
//! regardless of the store's write mode. Plain `put` respects the write
//! mode; in `Async(delay_ms)` the write is queued and becomes visible only
//! once a background writer applies it, which is exactly the window that
//! lets duplicate ticket submissions slip through a PCA running in async
//! mode.

mod file;
mod mem;

pub use file::FileEngine;
pub use mem::MemEngine;

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

/// Logical table. Operations never cross namespaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Namespace {
    Vehicles,
    TicketsLedger,
    ConsumedTickets,
    IssuanceRecords,
    Crl,
}

impl Namespace {
    fn prefix(self) -> &'static str {
        match self {
            Namespace::Vehicles => "vehicles/",
            Namespace::TicketsLedger => "tickets_ledger/",
            Namespace::ConsumedTickets => "consumed_tickets/",
            Namespace::IssuanceRecords => "issuance_records/",
            Namespace::Crl => "crl/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteMode {
    Strict,
    Async { delay_ms: u64 },
}

impl WriteMode {
    pub fn parse(mode: &str, delay_ms: u64) -> Option<WriteMode> {
        match mode {
            "strict" => Some(WriteMode::Strict),
            "async" => Some(WriteMode::Async { delay_ms }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsumeOutcome {
    Won,
    AlreadyConsumed,
}

#[derive(Debug, thiserror::Error, Clone)]
pub enum StoreError {
    #[error("store unavailable: {0}")]
    Unavailable(String),
    #[error("key must be non-empty")]
    EmptyKey,
    #[error("unsupported store uri: {0}")]
    BadUri(String),
}

/// Raw keyed byte storage. Implementations must be safe for concurrent use
/// and provide atomic insert-if-absent.
pub trait Engine: Send + Sync {
    fn get(&self, key: &str) -> Result<Option<Vec<u8>>, StoreError>;
    fn put(&self, key: &str, value: &[u8]) -> Result<(), StoreError>;
    /// Returns true when this call created the key.
    fn insert_if_absent(&self, key: &str, value: &[u8]) -> Result<bool, StoreError>;
    fn scan_prefix(&self, prefix: &str) -> Result<Vec<(String, Vec<u8>)>, StoreError>;
}

struct AsyncQueue {
    queue: VecDeque<(Instant, String, Vec<u8>)>,
    applying: bool,
    shutdown: bool,
}

struct Writer {
    state: Mutex<AsyncQueue>,
    wake: Condvar,
}

struct Inner {
    engine: Arc<dyn Engine>,
    mode: WriteMode,
    writer: Option<Arc<Writer>>,
    worker: Mutex<Option<std::thread::JoinHandle<()>>>,
    uri: String,
}

impl Drop for Inner {
    fn drop(&mut self) {
        if let Some(writer) = &self.writer {
            let mut st = writer.state.lock().unwrap();
            st.shutdown = true;
            writer.wake.notify_all();
            drop(st);
            if let Some(handle) = self.worker.lock().unwrap().take() {
                let _ = handle.join();
            }
        }
    }
}

/// Handle to one logical database. Cloning shares the handle (and the async
/// write queue, if any).
#[derive(Clone)]
pub struct Store {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Store({}, {:?})", self.inner.uri, self.inner.mode)
    }
}

impl Store {
    /// Opens `mem://name` (shared per name within the process; `mem://`
    /// alone gives a private instance) or `file://path`.
    pub fn open(uri: &str, mode: WriteMode) -> Result<Store, StoreError> {
        let engine: Arc<dyn Engine> = if let Some(name) = uri.strip_prefix("mem://") {
            mem::shared(name)
        } else if let Some(path) = uri.strip_prefix("file://") {
            if path.is_empty() {
                return Err(StoreError::BadUri(uri.to_string()));
            }
            Arc::new(FileEngine::open(std::path::Path::new(path))?)
        } else {
            return Err(StoreError::BadUri(uri.to_string()));
        };
        Ok(Store::with_engine(engine, mode, uri))
    }

    pub fn with_engine(engine: Arc<dyn Engine>, mode: WriteMode, uri: &str) -> Store {
        let writer = match mode {
            WriteMode::Strict => None,
            WriteMode::Async { .. } => Some(Arc::new(Writer {
                state: Mutex::new(AsyncQueue {
                    queue: VecDeque::new(),
                    applying: false,
                    shutdown: false,
                }),
                wake: Condvar::new(),
            })),
        };
        let inner = Arc::new(Inner {
            engine: engine.clone(),
            mode,
            writer: writer.clone(),
            worker: Mutex::new(None),
            uri: uri.to_string(),
        });
        if let Some(writer) = writer {
            let handle = std::thread::spawn(move || write_behind(writer, engine));
            *inner.worker.lock().unwrap() = Some(handle);
        }
        Store { inner }
    }

    pub fn mode(&self) -> WriteMode {
        self.inner.mode
    }

    fn full_key(ns: Namespace, key: &str) -> Result<String, StoreError> {
        if key.is_empty() {
            return Err(StoreError::EmptyKey);
        }
        Ok(format!("{}{}", ns.prefix(), key))
    }

    pub fn get(&self, ns: Namespace, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        self.inner.engine.get(&Self::full_key(ns, key)?)
    }

    /// Writes a record. In strict mode the write is durable before this
    /// returns; in async mode it is queued for the background writer.
    pub fn put(&self, ns: Namespace, key: &str, value: &[u8]) -> Result<(), StoreError> {
        let full = Self::full_key(ns, key)?;
        match (self.inner.mode, &self.inner.writer) {
            (WriteMode::Strict, _) | (_, None) => self.inner.engine.put(&full, value),
            (WriteMode::Async { delay_ms }, Some(writer)) => {
                let apply_at = Instant::now() + Duration::from_millis(delay_ms);
                let mut st = writer.state.lock().unwrap();
                st.queue.push_back((apply_at, full, value.to_vec()));
                writer.wake.notify_all();
                Ok(())
            }
        }
    }

    /// Writes through to the engine regardless of write mode. For
    /// control-plane records (revocations, registration state) whose
    /// durability must not depend on the issuance-path mode.
    pub fn put_durable(&self, ns: Namespace, key: &str, value: &[u8]) -> Result<(), StoreError> {
        self.inner.engine.put(&Self::full_key(ns, key)?, value)
    }

    /// Atomic single-use claim on the consumed-tickets namespace. Exactly
    /// one caller per key ever receives `Won`, across every replica sharing
    /// the store; the outcome is durable before the call returns even when
    /// the store otherwise runs in async mode.
    pub fn consume_once(
        &self,
        ns: Namespace,
        key: &str,
    ) -> Result<ConsumeOutcome, StoreError> {
        let created = self.inner.engine.insert_if_absent(&Self::full_key(ns, key)?, b"1")?;
        Ok(if created { ConsumeOutcome::Won } else { ConsumeOutcome::AlreadyConsumed })
    }

    pub fn scan_prefix(
        &self,
        ns: Namespace,
        prefix: &str,
    ) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
        let full = format!("{}{}", ns.prefix(), prefix);
        let items = self.inner.engine.scan_prefix(&full)?;
        Ok(items
            .into_iter()
            .map(|(k, v)| (k[ns.prefix().len()..].to_string(), v))
            .collect())
    }

    /// Number of queued-but-unapplied async writes.
    pub fn backlog(&self) -> usize {
        match &self.inner.writer {
            None => 0,
            Some(w) => {
                let st = w.state.lock().unwrap();
                st.queue.len() + usize::from(st.applying)
            }
        }
    }

    /// Blocks until every queued async write has been applied.
    pub fn flush(&self) {
        if let Some(writer) = &self.inner.writer {
            let mut st = writer.state.lock().unwrap();
            while !st.queue.is_empty() || st.applying {
                st = writer.wake.wait(st).unwrap();
            }
        }
    }
}

fn write_behind(writer: Arc<Writer>, engine: Arc<dyn Engine>) {
    let mut st = writer.state.lock().unwrap();
    loop {
        if st.queue.is_empty() {
            if st.shutdown {
                return;
            }
            st = writer.wake.wait(st).unwrap();
            continue;
        }
        let due = st.queue[0].0;
        let now = Instant::now();
        // Once shutdown is requested, drain immediately rather than waiting
        // out the artificial delay.
        if now < due && !st.shutdown {
            let (next, _) = writer.wake.wait_timeout(st, due - now).unwrap();
            st = next;
            continue;
        }
        let (_, key, value) = st.queue.pop_front().unwrap();
        st.applying = true;
        drop(st);
        // Errors here model a write-behind store losing data; nothing to
        // report back to the caller that already returned.
        let _ = engine.put(&key, &value);
        st = writer.state.lock().unwrap();
        st.applying = false;
        writer.wake.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn mem_store() -> Store {
        Store::open("mem://", WriteMode::Strict).unwrap()
    }

    #[test]
    fn put_get_roundtrip() {
        let s = mem_store();
        s.put(Namespace::Vehicles, "k", b"v").unwrap();
        assert_eq!(s.get(Namespace::Vehicles, "k").unwrap(), Some(b"v".to_vec()));
    }

    #[test]
    fn get_absent_not_found() {
        let s = mem_store();
        assert_eq!(s.get(Namespace::Vehicles, "absent").unwrap(), None);
    }

    #[test]
    fn empty_key_rejected() {
        let s = mem_store();
        assert!(matches!(s.put(Namespace::Vehicles, "", b"v"), Err(StoreError::EmptyKey)));
    }

    #[test]
    fn scan_prefix_cardinality() {
        let s = mem_store();
        for i in 0..1000 {
            s.put(Namespace::TicketsLedger, &format!("t/{i:04}"), b"x").unwrap();
        }
        s.put(Namespace::TicketsLedger, "u/other", b"x").unwrap();
        let items = s.scan_prefix(Namespace::TicketsLedger, "t/").unwrap();
        assert_eq!(items.len(), 1000);
        assert!(items.iter().all(|(k, _)| k.starts_with("t/")));
    }

    #[test]
    fn namespaces_isolated() {
        let s = mem_store();
        s.put(Namespace::Vehicles, "k", b"a").unwrap();
        assert_eq!(s.get(Namespace::TicketsLedger, "k").unwrap(), None);
        assert_eq!(s.scan_prefix(Namespace::TicketsLedger, "").unwrap().len(), 0);
    }

    #[test]
    fn consume_once_basic() {
        let s = mem_store();
        assert_eq!(
            s.consume_once(Namespace::ConsumedTickets, "t1").unwrap(),
            ConsumeOutcome::Won
        );
        assert_eq!(
            s.consume_once(Namespace::ConsumedTickets, "t1").unwrap(),
            ConsumeOutcome::AlreadyConsumed
        );
        assert_eq!(
            s.consume_once(Namespace::ConsumedTickets, "t2").unwrap(),
            ConsumeOutcome::Won
        );
    }

    #[test]
    fn consume_once_race_exactly_one_winner() {
        // 64 concurrent claimants per round; the winner count must be
        // exactly 1 in every round, not merely on average.
        let s = Store::open("mem://race-test", WriteMode::Strict).unwrap();
        for round in 0..100 {
            let key = format!("ticket-{round}");
            let wins = Arc::new(AtomicUsize::new(0));
            let barrier = Arc::new(std::sync::Barrier::new(64));
            let handles: Vec<_> = (0..64)
                .map(|_| {
                    let s = s.clone();
                    let key = key.clone();
                    let wins = wins.clone();
                    let barrier = barrier.clone();
                    std::thread::spawn(move || {
                        barrier.wait();
                        if s.consume_once(Namespace::ConsumedTickets, &key).unwrap()
                            == ConsumeOutcome::Won
                        {
                            wins.fetch_add(1, Ordering::SeqCst);
                        }
                    })
                })
                .collect();
            for h in handles {
                h.join().unwrap();
            }
            assert_eq!(wins.load(Ordering::SeqCst), 1, "round {round}");
        }
    }

    #[test]
    fn async_write_visible_within_bound() {
        let s = Store::open("mem://", WriteMode::Async { delay_ms: 50 }).unwrap();
        s.put(Namespace::IssuanceRecords, "r", b"v").unwrap();
        // Bound is delay + generous scheduling slack (10x the delay).
        let deadline = Instant::now() + Duration::from_millis(500);
        loop {
            if s.get(Namespace::IssuanceRecords, "r").unwrap() == Some(b"v".to_vec()) {
                break;
            }
            assert!(Instant::now() < deadline, "async write not visible within 10x delay");
            std::thread::sleep(Duration::from_millis(2));
        }
    }

    #[test]
    fn async_backlog_observable_and_flush_drains() {
        let s = Store::open("mem://", WriteMode::Async { delay_ms: 500 }).unwrap();
        for i in 0..5 {
            s.put(Namespace::IssuanceRecords, &format!("r{i}"), b"v").unwrap();
        }
        assert!(s.backlog() >= 1, "queued writes must be observable");
        s.flush();
        assert_eq!(s.backlog(), 0);
        for i in 0..5 {
            assert!(s.get(Namespace::IssuanceRecords, &format!("r{i}")).unwrap().is_some());
        }
    }

    #[test]
    fn consume_once_is_strict_even_in_async_mode() {
        let s = Store::open("mem://", WriteMode::Async { delay_ms: 10_000 }).unwrap();
        assert_eq!(
            s.consume_once(Namespace::ConsumedTickets, "t").unwrap(),
            ConsumeOutcome::Won
        );
        // Immediately durable: a second claim loses with no flush needed.
        assert_eq!(
            s.consume_once(Namespace::ConsumedTickets, "t").unwrap(),
            ConsumeOutcome::AlreadyConsumed
        );
    }

    #[test]
    fn mem_named_instances_shared() {
        let a = Store::open("mem://shared-x", WriteMode::Strict).unwrap();
        let b = Store::open("mem://shared-x", WriteMode::Strict).unwrap();
        a.put(Namespace::Vehicles, "k", b"v").unwrap();
        assert_eq!(b.get(Namespace::Vehicles, "k").unwrap(), Some(b"v".to_vec()));

        let c = Store::open("mem://", WriteMode::Strict).unwrap();
        assert_eq!(c.get(Namespace::Vehicles, "k").unwrap(), None);
    }

    #[test]
    fn bad_uri_rejected() {
        assert!(matches!(
            Store::open("redis://x", WriteMode::Strict),
            Err(StoreError::BadUri(_))
        ));
        assert!(matches!(
            Store::open("file://", WriteMode::Strict),
            Err(StoreError::BadUri(_))
        ));
    }

    #[test]
    fn last_writer_wins() {
        let s = mem_store();
        s.put(Namespace::Vehicles, "k", b"one").unwrap();
        s.put(Namespace::Vehicles, "k", b"two").unwrap();
        assert_eq!(s.get(Namespace::Vehicles, "k").unwrap(), Some(b"two".to_vec()));
    }
}
