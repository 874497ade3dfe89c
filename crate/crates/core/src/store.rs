//! Append-only channel-configuration store.
//!
//! Every write appends one JSON line `{"key":[..],"config":{..},"version":n,"written_ts":ns}`
//! to the log and then publishes the record in an in-memory latest-version
//! index. Writers are funneled through a single commit mutex, so versions
//! for a key are assigned in commit order; readers only take the shared
//! side of the index lock.
//!
//! On open the log is replayed. A torn final line (a crash in the middle of
//! an append) is dropped with a warning and cut off the file; an unreadable
//! line anywhere else is reported as corruption.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ChannelConfig, ConfigKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub key: ConfigKey,
    pub config: ChannelConfig,
    pub version: u64,
    pub written_ts: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StoreStats {
    pub record_count: u64,
    pub read_count: u64,
    pub write_count: u64,
    pub hit_count: u64,
    pub miss_count: u64,
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: corrupt log entry: {reason}", path.display())]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

/// How far an append is pushed before `write` returns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Durability {
    /// Handed to the kernel (survives process death).
    #[default]
    Flush,
    /// `fdatasync` after every append (survives power loss).
    Sync,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub entries: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadRetry {
    pub interval_ms: f64,
    pub max_retries: u32,
}

impl Default for ReadRetry {
    fn default() -> Self {
        Self {
            interval_ms: 100.0,
            max_retries: 3,
        }
    }
}

/// Pause between read attempts; the wall clock sleeps, simulated clocks advance.
pub trait RetryClock {
    fn sleep_ms(&mut self, ms: f64);
}

pub struct WallClock;

impl RetryClock for WallClock {
    fn sleep_ms(&mut self, ms: f64) {
        std::thread::sleep(Duration::from_secs_f64(ms / 1000.0));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryOutcome {
    pub record: Option<StoreRecord>,
    pub attempts: u32,
}

enum Sink {
    Memory,
    File {
        path: PathBuf,
        out: BufWriter<File>,
        durability: Durability,
    },
    Custom(Box<dyn Write + Send>),
}

impl Sink {
    fn append(&mut self, line: &[u8]) -> Result<(), StorageError> {
        match self {
            Sink::Memory => Ok(()),
            Sink::File { path, out, durability } => {
                let res = out.write_all(line).and_then(|()| out.flush()).and_then(|()| {
                    if *durability == Durability::Sync {
                        out.get_ref().sync_data()
                    } else {
                        Ok(())
                    }
                });
                res.map_err(|source| StorageError::Io {
                    path: path.clone(),
                    source,
                })
            }
            Sink::Custom(w) => w
                .write_all(line)
                .and_then(|()| w.flush())
                .map_err(|source| StorageError::Io {
                    path: PathBuf::from("<custom sink>"),
                    source,
                }),
        }
    }
}

pub struct ConfigStore {
    index: RwLock<HashMap<ConfigKey, StoreRecord>>,
    commit: Mutex<Sink>,
    reads: AtomicU64,
    hits: AtomicU64,
    writes: AtomicU64,
}

/// The canonical log line for a record, newline included.
pub fn serialize_line(record: &StoreRecord) -> String {
    let mut line = serde_json::to_string(record).expect("record serializes");
    line.push('\n');
    line
}

pub fn now_unix_ns() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

impl ConfigStore {
    /// A store without a log file; contents are lost on drop.
    pub fn in_memory() -> Self {
        Self::with_sink(Sink::Memory, HashMap::new())
    }

    /// A store that appends to an arbitrary writer without replaying anything.
    pub fn with_writer(writer: Box<dyn Write + Send>) -> Self {
        Self::with_sink(Sink::Custom(writer), HashMap::new())
    }

    fn with_sink(sink: Sink, index: HashMap<ConfigKey, StoreRecord>) -> Self {
        Self {
            index: RwLock::new(index),
            commit: Mutex::new(sink),
            reads: AtomicU64::new(0),
            hits: AtomicU64::new(0),
            writes: AtomicU64::new(0),
        }
    }

    /// Opens (creating if absent) the log at `path` and replays it.
    pub fn recover(path: impl AsRef<Path>) -> Result<(Self, RecoveryReport), StorageError> {
        Self::recover_with(path, Durability::default())
    }

    pub fn recover_with(
        path: impl AsRef<Path>,
        durability: Durability,
    ) -> Result<(Self, RecoveryReport), StorageError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| StorageError::Io {
            path: path.clone(),
            source,
        };
        let mut bytes = Vec::new();
        match File::open(&path) {
            Ok(mut f) => {
                f.read_to_end(&mut bytes).map_err(io_err)?;
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(e)),
        }
        let (index, report, valid_len) = replay(&path, &bytes)?;
        for w in &report.warnings {
            log::warn!("{w}");
        }

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        if valid_len < bytes.len() {
            file.set_len(valid_len as u64).map_err(io_err)?;
        }
        let sink = Sink::File {
            path: path.clone(),
            out: BufWriter::new(file),
            durability,
        };
        Ok((Self::with_sink(sink, index), report))
    }

    pub fn read(&self, key: &ConfigKey) -> Option<StoreRecord> {
        let found = self.index.read().get(key).copied();
        self.reads.fetch_add(1, Ordering::Relaxed);
        if found.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        found
    }

    /// Reads `key`, retrying up to `policy.max_retries` times with
    /// `policy.interval_ms` pauses in between while it is absent.
    pub fn read_with_retry(&self, key: &ConfigKey, policy: ReadRetry, clock: &mut dyn RetryClock) -> RetryOutcome {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if let Some(record) = self.read(key) {
                return RetryOutcome {
                    record: Some(record),
                    attempts,
                };
            }
            if attempts > policy.max_retries {
                return RetryOutcome { record: None, attempts };
            }
            clock.sleep_ms(policy.interval_ms);
        }
    }

    /// Appends a new version of `key`, stamped with the wall clock.
    pub fn write(&self, key: ConfigKey, config: ChannelConfig) -> Result<StoreRecord, StorageError> {
        self.write_at(key, config, now_unix_ns())
    }

    /// Appends a new version of `key` stamped with `written_ts`. The record is
    /// in the log before it becomes visible to readers.
    pub fn write_at(
        &self,
        key: ConfigKey,
        config: ChannelConfig,
        written_ts: u64,
    ) -> Result<StoreRecord, StorageError> {
        let mut sink = self.commit.lock();
        let version = self.index.read().get(&key).map_or(0, |r| r.version) + 1;
        let record = StoreRecord {
            key,
            config,
            version,
            written_ts,
        };
        sink.append(serialize_line(&record).as_bytes())?;
        self.index.write().insert(key, record);
        self.writes.fetch_add(1, Ordering::Relaxed);
        Ok(record)
    }

    pub fn stats(&self) -> StoreStats {
        let reads = self.reads.load(Ordering::Relaxed);
        let hits = self.hits.load(Ordering::Relaxed);
        StoreStats {
            record_count: self.index.read().len() as u64,
            read_count: reads,
            write_count: self.writes.load(Ordering::Relaxed),
            hit_count: hits,
            miss_count: reads - hits,
        }
    }

    /// Latest version of every key, ordered by key.
    pub fn snapshot(&self) -> Vec<StoreRecord> {
        let mut all: Vec<StoreRecord> = self.index.read().values().copied().collect();
        all.sort_by_key(|r| r.key);
        all
    }
}

fn replay(path: &Path, bytes: &[u8]) -> Result<(HashMap<ConfigKey, StoreRecord>, RecoveryReport, usize), StorageError> {
    let mut index: HashMap<ConfigKey, StoreRecord> = HashMap::new();
    let mut report = RecoveryReport::default();
    let mut offset = 0;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let (line, terminated) = match rest.iter().position(|&b| b == b'\n') {
            Some(n) => (&rest[..n], true),
            None => (rest, false),
        };
        let next = offset + line.len() + usize::from(terminated);
        let is_last = next >= bytes.len();
        if line.iter().all(u8::is_ascii_whitespace) {
            offset = next;
            continue;
        }
        let parsed = if terminated {
            serde_json::from_slice::<StoreRecord>(line).map_err(|e| e.to_string())
        } else {
            Err("missing line terminator".to_string())
        };
        match parsed {
            Ok(rec) => {
                let newer = index.get(&rec.key).is_none_or(|cur| rec.version > cur.version);
                if newer {
                    index.insert(rec.key, rec);
                }
                report.entries += 1;
                offset = next;
            }
            Err(reason) if is_last => {
                report.warnings.push(format!(
                    "{}:{line_no}: discarding torn tail entry ({} bytes): {reason}",
                    path.display(),
                    line.len()
                ));
                break;
            }
            Err(reason) => {
                return Err(StorageError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason,
                })
            }
        }
    }
    Ok((index, report, offset))
}

/// Rewrites the log at `path` so it holds only the latest version of each key.
pub fn compact(path: impl AsRef<Path>) -> Result<RecoveryReport, StorageError> {
    let path = path.as_ref();
    let (store, report) = ConfigStore::recover(path)?;
    let records = store.snapshot();
    drop(store);
    let tmp = path.with_extension("compact.tmp");
    let io_err = |source| StorageError::Io {
        path: tmp.clone(),
        source,
    };
    let mut out = BufWriter::new(File::create(&tmp).map_err(io_err)?);
    for r in &records {
        out.write_all(serialize_line(r).as_bytes()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    out.get_ref().sync_all().map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Modulation;
    use std::sync::Arc;

    fn cfg(snr: f64) -> ChannelConfig {
        ChannelConfig {
            modulation: Modulation::Qam16,
            code_rate: 0.75,
            bandwidth_hz: 10e9,
            tx_power_dbm: 10.0,
            predicted_snr_db: snr,
            predicted_ber: 1.5e-7,
        }
    }

    fn key(i: i64) -> ConfigKey {
        ConfigKey([30, i, 4, 4, 9, -3, 10])
    }

    #[test]
    fn empty_store_misses() {
        let store = ConfigStore::in_memory();
        assert_eq!(store.read(&key(1)), None);
        let s = store.stats();
        assert_eq!((s.read_count, s.miss_count, s.hit_count), (1, 1, 0));
    }

    #[test]
    fn read_after_write() {
        let store = ConfigStore::in_memory();
        let written = store.write(key(1), cfg(20.0)).unwrap();
        assert_eq!(written.version, 1);
        let read = store.read(&key(1)).unwrap();
        assert_eq!(read.config, cfg(20.0));
        assert_eq!(read.version, 1);
    }

    #[test]
    fn last_writer_wins() {
        let store = ConfigStore::in_memory();
        store.write(key(1), cfg(1.0)).unwrap();
        store.write(key(1), cfg(2.0)).unwrap();
        let r = store.read(&key(1)).unwrap();
        assert_eq!((r.config, r.version), (cfg(2.0), 2));
    }

    #[test]
    fn hundred_writes_reach_version_hundred() {
        let store = ConfigStore::in_memory();
        for i in 0..100 {
            store.write(key(3), cfg(i as f64)).unwrap();
        }
        assert_eq!(store.read(&key(3)).unwrap().version, 100);
        assert_eq!(store.stats().write_count, 100);
    }

    #[test]
    fn concurrent_distinct_keys_all_readable() {
        let dir = tempfile::tempdir().unwrap();
        let (store, _) = ConfigStore::recover(dir.path().join("log.jsonl")).unwrap();
        let store = Arc::new(store);
        std::thread::scope(|s| {
            for i in 1..=8 {
                let store = Arc::clone(&store);
                s.spawn(move || store.write(key(i), cfg(i as f64)).unwrap());
            }
        });
        for i in 1..=8 {
            let r = store.read(&key(i)).expect("key readable");
            assert_eq!((r.config.predicted_snr_db, r.version), (i as f64, 1));
        }
        drop(store);
        let (again, report) = ConfigStore::recover(dir.path().join("log.jsonl")).unwrap();
        assert_eq!(report.entries, 8);
        assert_eq!(again.stats().record_count, 8);
    }

    struct ScriptedClock<'a> {
        slept_ms: f64,
        on_first_sleep: Option<Box<dyn FnOnce() + 'a>>,
    }

    impl RetryClock for ScriptedClock<'_> {
        fn sleep_ms(&mut self, ms: f64) {
            self.slept_ms += ms;
            if let Some(f) = self.on_first_sleep.take() {
                f();
            }
        }
    }

    #[test]
    fn retry_hit_first_attempt() {
        let store = ConfigStore::in_memory();
        store.write(key(1), cfg(1.0)).unwrap();
        let mut clock = ScriptedClock {
            slept_ms: 0.0,
            on_first_sleep: None,
        };
        let out = store.read_with_retry(&key(1), ReadRetry::default(), &mut clock);
        assert_eq!(out.attempts, 1);
        assert_eq!(clock.slept_ms, 0.0);
        assert_eq!(store.stats().read_count, 1);
    }

    #[test]
    fn retry_exhaustion() {
        let store = ConfigStore::in_memory();
        let mut clock = ScriptedClock {
            slept_ms: 0.0,
            on_first_sleep: None,
        };
        let policy = ReadRetry {
            interval_ms: 100.0,
            max_retries: 3,
        };
        let out = store.read_with_retry(&key(1), policy, &mut clock);
        assert_eq!(out.record, None);
        assert_eq!(out.attempts, 4);
        assert_eq!(store.stats().read_count, 4);
        assert!(clock.slept_ms >= 300.0);
    }

    #[test]
    fn retry_wall_clock_elapsed() {
        let store = ConfigStore::in_memory();
        let policy = ReadRetry {
            interval_ms: 10.0,
            max_retries: 3,
        };
        let start = std::time::Instant::now();
        let out = store.read_with_retry(&key(1), policy, &mut WallClock);
        assert_eq!(out.attempts, 4);
        assert!(start.elapsed() >= Duration::from_millis(30));
    }

    #[test]
    fn retry_sees_concurrent_writer() {
        let store = ConfigStore::in_memory();
        let mut clock = ScriptedClock {
            slept_ms: 0.0,
            on_first_sleep: Some(Box::new(|| {
                store.write(key(9), cfg(9.0)).unwrap();
            })),
        };
        let out = store.read_with_retry(&key(9), ReadRetry::default(), &mut clock);
        assert_eq!(out.attempts, 2);
        assert_eq!(out.record.unwrap().config, cfg(9.0));
    }

    #[test]
    fn recover_absent_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("absent.jsonl");
        let (store, report) = ConfigStore::recover(&path).unwrap();
        assert_eq!(store.stats().record_count, 0);
        assert_eq!(report, RecoveryReport::default());
        assert!(path.exists());
        let (store, _) = ConfigStore::recover(&path).unwrap();
        assert_eq!(store.stats().record_count, 0);
    }

    fn write_three(path: &Path) -> Vec<u8> {
        let (store, _) = ConfigStore::recover(path).unwrap();
        for i in 1..=3 {
            store.write_at(key(i), cfg(i as f64), i as u64).unwrap();
        }
        drop(store);
        fs::read(path).unwrap()
    }

    #[test]
    fn recover_three_writes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_three(&path);
        let (store, report) = ConfigStore::recover(&path).unwrap();
        assert_eq!(report.entries, 3);
        assert!(report.warnings.is_empty());
        assert_eq!(store.stats().record_count, 3);
    }

    #[test]
    fn recover_discards_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut bytes = write_three(&path);
        let fourth = serialize_line(&StoreRecord {
            key: key(4),
            config: cfg(4.0),
            version: 1,
            written_ts: 4,
        });
        bytes.extend_from_slice(&fourth.as_bytes()[..fourth.len() / 2]);
        fs::write(&path, &bytes).unwrap();

        let (store, report) = ConfigStore::recover(&path).unwrap();
        assert_eq!(store.stats().record_count, 3);
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(store.read(&key(4)), None);
        // the torn bytes are cut so new appends start on a clean line
        store.write_at(key(5), cfg(5.0), 5).unwrap();
        drop(store);
        let (store, report) = ConfigStore::recover(&path).unwrap();
        assert!(report.warnings.is_empty());
        assert_eq!(store.stats().record_count, 4);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let bytes = write_three(&path);
        let text = String::from_utf8(bytes).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1] = "{\"key\":garbage";
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        match ConfigStore::recover(&path) {
            Err(StorageError::Corrupt { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected corruption, got {:?}", other.map(|(_, r)| r)),
        }
    }

    #[test]
    fn line_format_is_bit_exact() {
        let rec = StoreRecord {
            key: key(2),
            config: cfg(17.123456789012345),
            version: 3,
            written_ts: 99,
        };
        let line = serialize_line(&rec);
        assert!(line.starts_with("{\"key\":[30,2,4,4,9,-3,10],\"config\":{"));
        assert!(line.ends_with(",\"version\":3,\"written_ts\":99}\n"));
        let back: StoreRecord = serde_json::from_str(line.trim_end()).unwrap();
        assert_eq!(serialize_line(&back), line);
    }

    struct FullDisk;

    impl Write for FullDisk {
        fn write(&mut self, _: &[u8]) -> io::Result<usize> {
            Err(io::Error::other("no space left on device"))
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn failed_append_is_not_published() {
        let store = ConfigStore::with_writer(Box::new(FullDisk));
        assert!(matches!(store.write(key(1), cfg(1.0)), Err(StorageError::Io { .. })));
        assert_eq!(store.read(&key(1)), None);
        assert_eq!(store.stats().write_count, 0);
    }

    #[test]
    fn compaction_keeps_latest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let (store, _) = ConfigStore::recover(&path).unwrap();
            for v in 0..5 {
                store.write_at(key(1), cfg(v as f64), v).unwrap();
                store.write_at(key(2), cfg(v as f64), v).unwrap();
            }
        }
        compact(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let (store, _) = ConfigStore::recover(&path).unwrap();
        assert_eq!(store.read(&key(1)).unwrap().version, 5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum Op {
            Read(i64),
            Write(i64, f64),
        }

        fn op() -> impl Strategy<Value = Op> {
            prop_oneof![
                (0..4i64).prop_map(Op::Read),
                (0..4i64, -50.0..50.0f64).prop_map(|(k, s)| Op::Write(k, s)),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn counters_and_versions(ops in proptest::collection::vec(op(), 0..60)) {
                let store = ConfigStore::in_memory();
                let mut last_seen: HashMap<i64, u64> = HashMap::new();
                for op in ops {
                    match op {
                        Op::Read(k) => {
                            if let Some(r) = store.read(&key(k)) {
                                let prev = last_seen.insert(k, r.version).unwrap_or(0);
                                prop_assert!(r.version >= prev);
                            }
                        }
                        Op::Write(k, s) => {
                            let r = store.write_at(key(k), cfg(s), 0).unwrap();
                            let prev = last_seen.insert(k, r.version).unwrap_or(0);
                            prop_assert_eq!(r.version, prev + 1);
                        }
                    }
                    let st = store.stats();
                    prop_assert_eq!(st.hit_count + st.miss_count, st.read_count);
                }
            }

            #[test]
            fn durable_and_replay_idempotent(
                writes in proptest::collection::vec((0..6i64, -50.0..50.0f64, any::<u64>()), 1..40)
            ) {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("log.jsonl");
                let mut acked = Vec::new();
                {
                    let (store, _) = ConfigStore::recover(&path).unwrap();
                    for (k, s, ts) in &writes {
                        acked.push(store.write_at(key(*k), cfg(*s), *ts).unwrap());
                    }
                    // dropped without any shutdown step
                }
                let (first, _) = ConfigStore::recover(&path).unwrap();
                for rec in &acked {
                    let latest = first.read(&rec.key).unwrap();
                    prop_assert!(latest.version >= rec.version);
                }
                let snap = first.snapshot();
                let copy = dir.path().join("copy.jsonl");
                let text: String = snap.iter().map(serialize_line).collect();
                fs::write(&copy, &text).unwrap();
                let (second, _) = ConfigStore::recover(&copy).unwrap();
                prop_assert_eq!(second.snapshot(), snap);
            }
        }
    }
}
