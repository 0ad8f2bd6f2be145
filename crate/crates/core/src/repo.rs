//! Versioned on-disk store of detector snapshots for warm starts.
//!
//! Layout: `<root>/<step>/<component>/<detector>/v<N>.bin` plus a `latest`
//! pointer file, with path segments percent-encoded. Versions are written to
//! a temp file and renamed into place; the pointer is replaced last, so it
//! always names a complete, CRC-checked blob.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::TrySendError;
use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use thiserror::Error;
use tracing::{debug, warn};

use crate::iftm::{AnyDetector, DetectorKind, ModelBlob};

pub const MAGIC: &[u8; 4] = b"ZMDL";
pub const FORMAT_VERSION: u8 = 1;
pub const DEFAULT_RETENTION: usize = 5;
const HEADER_LEN: usize = 4 + 1 + 1 + 4;
const LATEST: &str = "latest";

const SEGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_');

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelKey {
    pub step: String,
    pub component: String,
    pub detector: DetectorKind,
}

impl ModelKey {
    pub fn new(step: impl Into<String>, component: impl Into<String>, detector: DetectorKind) -> Self {
        Self { step: step.into(), component: component.into(), detector }
    }

    fn relative_dir(&self) -> PathBuf {
        let enc = |s: &str| utf8_percent_encode(s, SEGMENT).to_string();
        [enc(&self.step), enc(&self.component), self.detector.to_string()].iter().collect()
    }
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.step, self.component, self.detector)
    }
}

/// Where a put can be made to stop early, to exercise crash recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    AfterTempWrite,
    AfterBlobRename,
}

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("no model stored for {0}")]
    NotFound(String),
    #[error("corrupt model file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("model key parts must be non-empty")]
    BadKey,
    #[error("payload must be non-empty")]
    EmptyPayload,
    #[error("blob holds a {found} model but the key names {expected}")]
    KindMismatch { expected: DetectorKind, found: DetectorKind },
    #[error("simulated crash {0:?}")]
    InjectedCrash(CrashPoint),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RepoError + '_ {
    move |source| RepoError::Io { path: path.to_path_buf(), source }
}

/// Serializes a blob with header and trailing CRC32.
pub fn encode_blob(blob: &ModelBlob, version: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + blob.payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(blob.kind.tag());
    out.extend_from_slice(&version.to_be_bytes());
    out.extend_from_slice(&blob.payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    out
}

/// Parses and CRC-checks a stored blob; `path` only labels errors.
pub fn decode_blob(bytes: &[u8], path: &Path) -> Result<(u32, ModelBlob), RepoError> {
    let corrupt = |reason: &str| RepoError::Corrupt { path: path.to_path_buf(), reason: reason.to_string() };
    if bytes.len() < HEADER_LEN + 4 {
        return Err(corrupt("file too short"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_be_bytes(tail.try_into().expect("4-byte tail"));
    if crc32fast::hash(body) != stored {
        return Err(corrupt("CRC mismatch"));
    }
    if &body[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    if body[4] != FORMAT_VERSION {
        return Err(corrupt("unsupported format version"));
    }
    let kind = DetectorKind::from_tag(body[5]).ok_or_else(|| corrupt("unknown detector tag"))?;
    let version = u32::from_be_bytes(body[6..10].try_into().expect("4 bytes"));
    Ok((version, ModelBlob { kind, payload: body[HEADER_LEN..].to_vec() }))
}

fn version_file(v: u32) -> String {
    format!("v{v}.bin")
}

fn parse_version_file(name: &str) -> Option<u32> {
    name.strip_prefix('v')?.strip_suffix(".bin")?.parse().ok()
}

fn sync_dir(dir: &Path) {
    // Best effort: directory fsync is not supported everywhere.
    if let Ok(d) = fs::File::open(dir) {
        let _ = d.sync_all();
    }
}

fn write_atomically(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, RepoError> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io(&tmp))?;
    Ok(tmp)
}

/// Shareable handle on a model repository directory.
#[derive(Debug)]
pub struct ModelRepo {
    root: PathBuf,
    retention: usize,
    locks: Mutex<HashMap<ModelKey, Arc<Mutex<()>>>>,
    crash: Mutex<Option<CrashPoint>>,
}

impl ModelRepo {
    /// Opens a repository rooted at `root`. Nothing is created until the first put.
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            retention: DEFAULT_RETENTION,
            locks: Mutex::new(HashMap::new()),
            crash: Mutex::new(None),
        }
    }

    pub fn with_retention(mut self, keep: usize) -> Self {
        self.retention = keep.max(1);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Makes the next put stop at `point` and report [`RepoError::InjectedCrash`].
    pub fn inject_crash(&self, point: CrashPoint) {
        *self.crash.lock().unwrap_or_else(|e| e.into_inner()) = Some(point);
    }

    fn take_crash(&self, at: CrashPoint) -> Result<(), RepoError> {
        let mut c = self.crash.lock().unwrap_or_else(|e| e.into_inner());
        if *c == Some(at) {
            *c = None;
            return Err(RepoError::InjectedCrash(at));
        }
        Ok(())
    }

    fn dir(&self, key: &ModelKey) -> Result<PathBuf, RepoError> {
        if key.step.is_empty() || key.component.is_empty() {
            return Err(RepoError::BadKey);
        }
        Ok(self.root.join(key.relative_dir()))
    }

    fn key_lock(&self, key: &ModelKey) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(key.clone()).or_default().clone()
    }

    fn read_pointer(dir: &Path) -> Result<Option<u32>, RepoError> {
        let path = dir.join(LATEST);
        match fs::read_to_string(&path) {
            Ok(s) => s
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| RepoError::Corrupt { path, reason: "unparseable latest pointer".into() }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(RepoError::Io { path, source: e }),
        }
    }

    /// Version numbers with a file on disk, ascending.
    pub fn versions(&self, key: &ModelKey) -> Result<Vec<u32>, RepoError> {
        let dir = self.dir(key)?;
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(RepoError::Io { path: dir, source: e }),
        };
        let mut vs: Vec<u32> =
            entries.filter_map(|e| e.ok()).filter_map(|e| parse_version_file(&e.file_name().to_string_lossy())).collect();
        vs.sort_unstable();
        Ok(vs)
    }

    /// Stores a new version and returns its number.
    pub fn put(&self, key: &ModelKey, blob: &ModelBlob) -> Result<u32, RepoError> {
        if blob.payload.is_empty() {
            return Err(RepoError::EmptyPayload);
        }
        if blob.kind != key.detector {
            return Err(RepoError::KindMismatch { expected: key.detector, found: blob.kind });
        }
        let dir = self.dir(key)?;
        let lock = self.key_lock(key);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        fs::create_dir_all(&dir).map_err(io(&dir))?;

        let existing = self.versions(key)?;
        let newest = existing.last().copied().max(Self::read_pointer(&dir)?).unwrap_or(0);
        let version = newest.checked_add(1).ok_or_else(|| RepoError::Corrupt {
            path: dir.clone(),
            reason: "version counter exhausted".into(),
        })?;

        let name = version_file(version);
        let tmp = write_atomically(&dir, &name, &encode_blob(blob, version))?;
        self.take_crash(CrashPoint::AfterTempWrite)?;
        let target = dir.join(&name);
        fs::rename(&tmp, &target).map_err(io(&target))?;
        sync_dir(&dir);
        self.take_crash(CrashPoint::AfterBlobRename)?;

        let ptr_tmp = write_atomically(&dir, LATEST, format!("{version}\n").as_bytes())?;
        let ptr = dir.join(LATEST);
        fs::rename(&ptr_tmp, &ptr).map_err(io(&ptr))?;
        sync_dir(&dir);
        debug!(key = %key, version, "model stored");

        self.prune(&dir, version);
        Ok(version)
    }

    /// Drops versions outside the retention window and stale temp files.
    fn prune(&self, dir: &Path, latest: u32) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        let floor = latest.saturating_sub(self.retention as u32 - 1);
        for e in entries.filter_map(|e| e.ok()) {
            let name = e.file_name().to_string_lossy().into_owned();
            let stale = match parse_version_file(&name) {
                Some(v) => v < floor,
                None => name.starts_with('.') && name.ends_with(".tmp"),
            };
            if stale {
                if let Err(err) = fs::remove_file(e.path()) {
                    warn!(path = %e.path().display(), error = %err, "prune failed");
                }
            }
        }
    }

    pub fn get(&self, key: &ModelKey, version: u32) -> Result<ModelBlob, RepoError> {
        let path = self.dir(key)?.join(version_file(version));
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(RepoError::NotFound(format!("{key} v{version}")))
            }
            Err(e) => return Err(RepoError::Io { path, source: e }),
        };
        let (stored_version, blob) = decode_blob(&bytes, &path)?;
        if stored_version != version {
            return Err(RepoError::Corrupt { path, reason: format!("header says version {stored_version}") });
        }
        if blob.kind != key.detector {
            return Err(RepoError::Corrupt { path, reason: format!("holds a {} model", blob.kind) });
        }
        Ok(blob)
    }

    pub fn get_latest(&self, key: &ModelKey) -> Result<(u32, ModelBlob), RepoError> {
        let dir = self.dir(key)?;
        let version = Self::read_pointer(&dir)?.ok_or_else(|| RepoError::NotFound(key.to_string()))?;
        Ok((version, self.get(key, version)?))
    }

    /// All keys that have a committed version, sorted.
    pub fn keys(&self) -> Result<Vec<ModelKey>, RepoError> {
        let mut out = Vec::new();
        let subdirs = |p: &Path| -> Result<Vec<(String, PathBuf)>, RepoError> {
            match fs::read_dir(p) {
                Ok(rd) => Ok(rd
                    .filter_map(|e| e.ok())
                    .filter(|e| e.path().is_dir())
                    .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
                    .collect()),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
                Err(e) => Err(RepoError::Io { path: p.to_path_buf(), source: e }),
            }
        };
        let decode = |s: &str| percent_decode_str(s).decode_utf8_lossy().into_owned();
        for (step, sp) in subdirs(&self.root)? {
            for (comp, cp) in subdirs(&sp)? {
                for (det, dp) in subdirs(&cp)? {
                    let Ok(kind) = det.parse::<DetectorKind>() else { continue };
                    if dp.join(LATEST).is_file() {
                        out.push(ModelKey::new(decode(&step), decode(&comp), kind));
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Restores the latest stored detector for `key`, if there is a usable one.
pub fn warm_start(repo: &ModelRepo, key: &ModelKey) -> Option<(u32, AnyDetector)> {
    match repo.get_latest(key) {
        Ok((v, blob)) => match AnyDetector::restore_as(key.detector, &blob) {
            Ok(d) => Some((v, d)),
            Err(e) => {
                warn!(key = %key, version = v, error = %e, "stored model unusable, starting cold");
                None
            }
        },
        Err(RepoError::NotFound(_)) => None,
        Err(e) => {
            warn!(key = %key, error = %e, "cannot read model repo, starting cold");
            None
        }
    }
}

/// Periodically persists detector snapshots from a background writer thread.
///
/// The detector's own thread calls [`Checkpointer::offer`]; a snapshot is
/// taken only when a period has passed and the writer is idle, so a slow or
/// failing repository never stalls detection.
pub struct Checkpointer {
    period: Duration,
    last: Option<Instant>,
    tx: Option<crossbeam_channel::Sender<ModelBlob>>,
    writer: Option<JoinHandle<()>>,
    stored: Arc<AtomicU64>,
    failed: Arc<AtomicU64>,
}

impl Checkpointer {
    pub fn spawn(repo: Arc<ModelRepo>, key: ModelKey, period: Duration) -> Self {
        let (tx, rx) = crossbeam_channel::bounded::<ModelBlob>(1);
        let stored = Arc::new(AtomicU64::new(0));
        let failed = Arc::new(AtomicU64::new(0));
        let (s, f) = (stored.clone(), failed.clone());
        let writer = std::thread::Builder::new()
            .name(format!("checkpoint-{}", key.component))
            .spawn(move || {
                for blob in rx {
                    match repo.put(&key, &blob) {
                        Ok(_) => s.fetch_add(1, Ordering::Relaxed),
                        Err(e) => {
                            warn!(key = %key, error = %e, "checkpoint failed");
                            f.fetch_add(1, Ordering::Relaxed)
                        }
                    };
                }
            })
            .expect("spawn checkpoint writer");
        Self { period, last: None, tx: Some(tx), writer: Some(writer), stored, failed }
    }

    /// Hands over a snapshot if the period has elapsed. The first call only
    /// starts the clock.
    pub fn offer(&mut self, detector: &AnyDetector) {
        let now = Instant::now();
        let due = match self.last {
            None => {
                self.last = Some(now);
                false
            }
            Some(t) => now.duration_since(t) >= self.period,
        };
        if !due {
            return;
        }
        let Some(tx) = &self.tx else { return };
        if tx.is_full() {
            return;
        }
        match tx.try_send(detector.snapshot()) {
            Ok(()) | Err(TrySendError::Full(_)) => self.last = Some(now),
            Err(TrySendError::Disconnected(_)) => self.tx = None,
        }
    }

    pub fn stored(&self) -> u64 {
        self.stored.load(Ordering::Relaxed)
    }

    pub fn failed(&self) -> u64 {
        self.failed.load(Ordering::Relaxed)
    }

    /// Writes a final snapshot and waits for the writer to finish.
    pub fn finish(mut self, detector: Option<&AnyDetector>) -> (u64, u64) {
        if let (Some(tx), Some(d)) = (&self.tx, detector) {
            let _ = tx.send(d.snapshot());
        }
        self.shutdown();
        (self.stored(), self.failed())
    }

    fn shutdown(&mut self) {
        self.tx = None;
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
    }
}

impl Drop for Checkpointer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iftm::DetectorParams;

    fn key() -> ModelKey {
        ModelKey::new("detect step", "host/a", DetectorKind::Birch)
    }

    fn blob(n: u8) -> ModelBlob {
        ModelBlob { kind: DetectorKind::Birch, payload: vec![n; 16] }
    }

    #[test]
    fn first_put_is_version_one_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let repo = ModelRepo::open(dir.path());
        assert!(matches!(repo.get_latest(&key()), Err(RepoError::NotFound(_))));
        assert_eq!(repo.put(&key(), &blob(1)).unwrap(), 1);
        assert_eq!(repo.put(&key(), &blob(2)).unwrap(), 2);
        assert_eq!(repo.put(&key(), &blob(3)).unwrap(), 3);
        assert_eq!(repo.get_latest(&key()).unwrap(), (3, blob(3)));
        assert_eq!(repo.get(&key(), 1).unwrap(), blob(1));
        assert_eq!(repo.keys().unwrap(), vec![key()]);
    }

    #[test]
    fn path_segments_are_encoded() {
        let dir = tempfile::tempdir().unwrap();
        let repo = ModelRepo::open(dir.path());
        repo.put(&key(), &blob(1)).unwrap();
        assert!(dir.path().join("detect%20step/host%2Fa/birch/v1.bin").is_file());
        assert!(dir.path().join("detect%20step/host%2Fa/birch/latest").is_file());
    }

    #[test]
    fn blob_layout_is_exact() {
        let bytes = encode_blob(&ModelBlob { kind: DetectorKind::Arima, payload: vec![0xAB] }, 7);
        assert_eq!(&bytes[..10], b"ZMDL\x01\x02\x00\x00\x00\x07");
        assert_eq!(bytes[10], 0xAB);
        let crc = crc32fast::hash(&bytes[..11]);
        assert_eq!(&bytes[11..], &crc.to_be_bytes());
    }

    #[test]
    fn bit_flip_is_reported_with_file_name() {
        let dir = tempfile::tempdir().unwrap();
        let repo = ModelRepo::open(dir.path());
        repo.put(&key(), &blob(1)).unwrap();
        let path = dir.path().join("detect%20step/host%2Fa/birch/v1.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[12] ^= 0x10;
        fs::write(&path, bytes).unwrap();
        let err = repo.get_latest(&key()).unwrap_err();
        assert!(matches!(&err, RepoError::Corrupt { path: p, .. } if p == &path), "{err}");
        assert!(err.to_string().contains("v1.bin"));
    }

    #[test]
    fn crashes_keep_prior_version_and_never_reuse_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let repo = ModelRepo::open(dir.path());
        repo.put(&key(), &blob(1)).unwrap();
        repo.inject_crash(CrashPoint::AfterTempWrite);
        assert!(matches!(repo.put(&key(), &blob(2)), Err(RepoError::InjectedCrash(_))));
        assert_eq!(repo.get_latest(&key()).unwrap(), (1, blob(1)));
        repo.inject_crash(CrashPoint::AfterBlobRename);
        assert!(repo.put(&key(), &blob(2)).is_err());
        assert_eq!(repo.get_latest(&key()).unwrap(), (1, blob(1)));
        // v2 exists on disk without a pointer, so the next put skips it.
        assert_eq!(repo.put(&key(), &blob(3)).unwrap(), 3);
        assert_eq!(repo.get_latest(&key()).unwrap(), (3, blob(3)));
    }

    #[test]
    fn retention_keeps_last_five() {
        let dir = tempfile::tempdir().unwrap();
        let repo = ModelRepo::open(dir.path());
        for i in 0..8 {
            repo.put(&key(), &blob(i)).unwrap();
        }
        assert_eq!(repo.versions(&key()).unwrap(), vec![4, 5, 6, 7, 8]);
    }

    #[test]
    fn rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let repo = ModelRepo::open(dir.path());
        assert!(matches!(repo.put(&key(), &ModelBlob { kind: DetectorKind::Birch, payload: vec![] }), Err(RepoError::EmptyPayload)));
        assert!(matches!(
            repo.put(&key(), &ModelBlob { kind: DetectorKind::Rnn, payload: vec![1] }),
            Err(RepoError::KindMismatch { .. })
        ));
        assert!(matches!(repo.put(&ModelKey::new("", "c", DetectorKind::Birch), &blob(1)), Err(RepoError::BadKey)));
    }

    #[test]
    fn warm_start_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let repo = ModelRepo::open(dir.path());
        let mut d = AnyDetector::new(DetectorKind::Birch, "c".into(), 2, &DetectorParams::default()).unwrap();
        for i in 0..20 {
            d.score(&[i as f64, 1.0]).unwrap();
        }
        let k = ModelKey::new("s", "c", DetectorKind::Birch);
        assert!(warm_start(&repo, &k).is_none());
        repo.put(&k, &d.snapshot()).unwrap();
        let (v, restored) = warm_start(&repo, &k).unwrap();
        assert_eq!(v, 1);
        assert_eq!(restored, d);
    }

    #[test]
    fn unwritable_repo_degrades_gracefully() {
        let dir = tempfile::tempdir().unwrap();
        // A regular file where the repo root should be: writes fail even as root.
        let root = dir.path().join("not-a-dir");
        fs::write(&root, b"x").unwrap();
        let repo = Arc::new(ModelRepo::open(&root));
        let d = AnyDetector::new(DetectorKind::Arima, "c".into(), 2, &DetectorParams::default()).unwrap();
        let cp = Checkpointer::spawn(repo, ModelKey::new("s", "c", DetectorKind::Arima), Duration::ZERO);
        let (stored, failed) = cp.finish(Some(&d));
        assert_eq!((stored, failed), (0, 1));
    }
}
