//! Append-only single-file engine.
//!
//! The log is a sequence of put records `[key_len u32 BE][key][val_len
//! u32 BE][val]`; the current state is the last-writer-wins fold of the
//! log. Every operation takes an exclusive `flock` on the log, replays any
//! bytes appended since the last look, performs the operation (appends are
//! fsynced before the lock drops), and unlocks. `flock` is per open file
//! description, so separate handles exclude each other both across
//! processes and within one process.
//!
//! A truncated final record (a writer crashed mid-append) is repaired by
//! truncating back to the last complete record. Structural corruption
//! (lengths beyond sanity caps, non-UTF-8 keys) is reported, not repaired.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::os::unix::io::AsRawFd;
use std::path::Path;
use std::sync::Mutex;

use super::{Engine, StoreError};

const MAX_KEY_LEN: usize = 1 << 16;
const MAX_VAL_LEN: usize = 1 << 26;

struct State {
    file: File,
    index: BTreeMap<String, Vec<u8>>,
    /// Byte offset of the last complete record we have replayed.
    offset: u64,
}

pub struct FileEngine {
    state: Mutex<State>,
}

impl FileEngine {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| StoreError::Unavailable(format!("create {parent:?}: {e}")))?;
            }
        }
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)
            .map_err(|e| StoreError::Unavailable(format!("open {path:?}: {e}")))?;
        let engine = FileEngine {
            state: Mutex::new(State { file, index: BTreeMap::new(), offset: 0 }),
        };
        // Validate and repair the log up front rather than on first use.
        engine.with_locked(|_| Ok(()))?;
        Ok(engine)
    }

    /// Runs `f` with the flock held and the index refreshed to the current
    /// end of the log.
    fn with_locked<T>(
        &self,
        f: impl FnOnce(&mut State) -> Result<T, StoreError>,
    ) -> Result<T, StoreError> {
        let mut st = self.state.lock().unwrap();
        flock_exclusive(&st.file)?;
        let result = refresh(&mut st).and_then(|()| f(&mut st));
        let rc = unsafe { libc::flock(st.file.as_raw_fd(), libc::LOCK_UN) };
        debug_assert_eq!(rc, 0);
        result
    }
}

fn flock_exclusive(file: &File) -> Result<(), StoreError> {
    loop {
        let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX) };
        if rc == 0 {
            return Ok(());
        }
        let err = std::io::Error::last_os_error();
        if err.kind() != std::io::ErrorKind::Interrupted {
            return Err(StoreError::Unavailable(format!("flock: {err}")));
        }
    }
}

/// Replays records appended since `st.offset`, repairing a truncated tail.
fn refresh(st: &mut State) -> Result<(), StoreError> {
    let end = st
        .file
        .seek(SeekFrom::End(0))
        .map_err(|e| StoreError::Unavailable(format!("seek: {e}")))?;
    if end < st.offset {
        // The log shrank under us: another handle repaired a torn tail we
        // had not yet replayed past, or the file was replaced. Refold.
        st.index.clear();
        st.offset = 0;
    }
    if end == st.offset {
        return Ok(());
    }
    let mut buf = vec![0u8; (end - st.offset) as usize];
    st.file
        .seek(SeekFrom::Start(st.offset))
        .and_then(|_| st.file.read_exact(&mut buf))
        .map_err(|e| StoreError::Unavailable(format!("read: {e}")))?;

    let mut pos = 0usize;
    loop {
        match parse_record(&buf[pos..])? {
            Parsed::Record { key, value, len } => {
                st.index.insert(key, value);
                pos += len;
            }
            Parsed::Partial => {
                // Torn tail from a crashed writer: truncate it away. We hold
                // the flock, so no live writer can be mid-append.
                let good = st.offset + pos as u64;
                st.file
                    .set_len(good)
                    .and_then(|_| st.file.sync_data())
                    .map_err(|e| StoreError::Unavailable(format!("repair: {e}")))?;
                st.offset = good;
                return Ok(());
            }
            Parsed::End => {
                st.offset = end;
                return Ok(());
            }
        }
    }
}

enum Parsed {
    Record { key: String, value: Vec<u8>, len: usize },
    Partial,
    End,
}

fn parse_record(buf: &[u8]) -> Result<Parsed, StoreError> {
    if buf.is_empty() {
        return Ok(Parsed::End);
    }
    if buf.len() < 4 {
        return Ok(Parsed::Partial);
    }
    let key_len = u32::from_be_bytes(buf[0..4].try_into().unwrap()) as usize;
    if key_len == 0 || key_len > MAX_KEY_LEN {
        return Err(StoreError::Unavailable(format!("corrupt log: key length {key_len}")));
    }
    if buf.len() < 4 + key_len + 4 {
        return Ok(Parsed::Partial);
    }
    let key = std::str::from_utf8(&buf[4..4 + key_len])
        .map_err(|_| StoreError::Unavailable("corrupt log: non-utf8 key".into()))?
        .to_string();
    let val_at = 4 + key_len;
    let val_len =
        u32::from_be_bytes(buf[val_at..val_at + 4].try_into().unwrap()) as usize;
    if val_len > MAX_VAL_LEN {
        return Err(StoreError::Unavailable(format!("corrupt log: value length {val_len}")));
    }
    let total = val_at + 4 + val_len;
    if buf.len() < total {
        return Ok(Parsed::Partial);
    }
    Ok(Parsed::Record { key, value: buf[val_at + 4..total].to_vec(), len: total })
}

fn append(st: &mut State, key: &str, value: &[u8]) -> Result<(), StoreError> {
    let mut record = Vec::with_capacity(8 + key.len() + value.len());
    record.extend_from_slice(&(key.len() as u32).to_be_bytes());
    record.extend_from_slice(key.as_bytes());
    record.extend_from_slice(&(value.len() as u32).to_be_bytes());
    record.extend_from_slice(value);
    st.file
        .seek(SeekFrom::End(0))
        .and_then(|_| st.file.write_all(&record))
        .and_then(|_| st.file.sync_data())
        .map_err(|e| StoreError::Unavailable(format!("append: {e}")))?;
    st.offset += record.len() as u64;
    st.index.insert(key.to_string(), value.to_vec());
    Ok(())
}

impl Engine for FileEngine {
    fn get(&self, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        self.with_locked(|st| Ok(st.index.get(key).cloned()))
    }

    fn put(&self, key: &str, value: &[u8]) -> Result<(), StoreError> {
        self.with_locked(|st| append(st, key, value))
    }

    fn insert_if_absent(&self, key: &str, value: &[u8]) -> Result<bool, StoreError> {
        self.with_locked(|st| {
            if st.index.contains_key(key) {
                return Ok(false);
            }
            append(st, key, value)?;
            Ok(true)
        })
    }

    fn scan_prefix(&self, prefix: &str) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
        self.with_locked(|st| {
            Ok(st
                .index
                .range(prefix.to_string()..)
                .take_while(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{ConsumeOutcome, Namespace, Store, WriteMode};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn tmp_uri(dir: &tempfile::TempDir) -> String {
        format!("file://{}", dir.path().join("db.log").display())
    }

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let uri = tmp_uri(&dir);
        {
            let s = Store::open(&uri, WriteMode::Strict).unwrap();
            s.put(Namespace::Vehicles, "veh-1", b"record").unwrap();
            s.consume_once(Namespace::ConsumedTickets, "t-1").unwrap();
        }
        let s = Store::open(&uri, WriteMode::Strict).unwrap();
        assert_eq!(s.get(Namespace::Vehicles, "veh-1").unwrap(), Some(b"record".to_vec()));
        assert_eq!(
            s.consume_once(Namespace::ConsumedTickets, "t-1").unwrap(),
            ConsumeOutcome::AlreadyConsumed
        );
    }

    #[test]
    fn two_handles_see_each_other() {
        let dir = tempfile::tempdir().unwrap();
        let uri = tmp_uri(&dir);
        let a = Store::open(&uri, WriteMode::Strict).unwrap();
        let b = Store::open(&uri, WriteMode::Strict).unwrap();
        a.put(Namespace::Vehicles, "k", b"from-a").unwrap();
        assert_eq!(b.get(Namespace::Vehicles, "k").unwrap(), Some(b"from-a".to_vec()));
        b.put(Namespace::Vehicles, "k", b"from-b").unwrap();
        assert_eq!(a.get(Namespace::Vehicles, "k").unwrap(), Some(b"from-b".to_vec()));
    }

    #[test]
    fn consume_once_exclusive_across_handles() {
        let dir = tempfile::tempdir().unwrap();
        let uri = tmp_uri(&dir);
        for round in 0..10 {
            let key = format!("t-{round}");
            let wins = Arc::new(AtomicUsize::new(0));
            let barrier = Arc::new(std::sync::Barrier::new(8));
            let handles: Vec<_> = (0..8)
                .map(|_| {
                    // A fresh handle per thread: synchronization must come
                    // from the file lock, not shared process state.
                    let s = Store::open(&uri, WriteMode::Strict).unwrap();
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
    fn torn_tail_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.log");
        let uri = format!("file://{}", path.display());
        {
            let s = Store::open(&uri, WriteMode::Strict).unwrap();
            s.put(Namespace::Vehicles, "k1", b"v1").unwrap();
            s.put(Namespace::Vehicles, "k2", b"v2").unwrap();
        }
        // Simulate a crash mid-append: a record header promising more bytes
        // than were written.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&20u32.to_be_bytes()).unwrap();
        f.write_all(b"vehicles/k3").unwrap();
        drop(f);

        let s = Store::open(&uri, WriteMode::Strict).unwrap();
        assert_eq!(s.get(Namespace::Vehicles, "k1").unwrap(), Some(b"v1".to_vec()));
        assert_eq!(s.get(Namespace::Vehicles, "k2").unwrap(), Some(b"v2".to_vec()));
        assert_eq!(s.get(Namespace::Vehicles, "k3").unwrap(), None);
        // The torn bytes are gone: appends after repair parse cleanly.
        s.put(Namespace::Vehicles, "k4", b"v4").unwrap();
        let again = Store::open(&uri, WriteMode::Strict).unwrap();
        assert_eq!(again.get(Namespace::Vehicles, "k4").unwrap(), Some(b"v4".to_vec()));
    }

    #[test]
    fn corrupt_length_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.log");
        std::fs::write(&path, 0xFFFF_FFFFu32.to_be_bytes()).unwrap();
        let uri = format!("file://{}", path.display());
        assert!(matches!(
            Store::open(&uri, WriteMode::Strict),
            Err(StoreError::Unavailable(_))
        ));
    }

    #[test]
    fn empty_value_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(&tmp_uri(&dir), WriteMode::Strict).unwrap();
        s.put(Namespace::Crl, "issued_at", b"").unwrap();
        assert_eq!(s.get(Namespace::Crl, "issued_at").unwrap(), Some(Vec::new()));
    }
}
