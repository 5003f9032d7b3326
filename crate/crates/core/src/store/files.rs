//! Filesystem primitives: atomic replace, prefix-committed append logs, the
//! store lock and the fault-injection hook used by crash tests.

use std::cell::Cell;
use std::fs::{File, OpenOptions, TryLockError};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir)
        .and_then(|f| f.sync_all())
        .map_err(|e| Error::io(dir, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().expect("file path").to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8], sync: bool) -> Result<()> {
    let tmp = tmp_path(path);
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    if sync {
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    if sync {
        match path.parent() {
            Some(parent) if !parent.as_os_str().is_empty() => sync_dir(parent)?,
            _ => sync_dir(Path::new("."))?,
        }
    }
    Ok(())
}

/// Truncates the log to its committed length, then appends one JSON line per
/// item. Returns the new length in bytes.
pub fn append_lines<I: Serialize>(
    path: &Path,
    committed_len: u64,
    items: &[I],
    sync: bool,
) -> Result<u64> {
    let mut f = OpenOptions::new()
        .create(true)
        .truncate(false)
        .read(true)
        .write(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let actual = f.metadata().map_err(|e| Error::io(path, e))?.len();
    if actual < committed_len {
        return Err(Error::Corrupt(format!(
            "{} shorter than committed length ({actual} < {committed_len})",
            path.display()
        )));
    }
    f.set_len(committed_len).map_err(|e| Error::io(path, e))?;
    f.seek(SeekFrom::Start(committed_len))
        .map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("log entries serialize");
        buf.push(b'\n');
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    if sync {
        f.sync_all().map_err(|e| Error::io(path, e))?;
    }
    Ok(committed_len + buf.len() as u64)
}

/// Reads exactly `count` JSON lines from the committed prefix of a log.
pub fn read_lines<I: DeserializeOwned>(path: &Path, committed_len: u64, count: usize) -> Result<Vec<I>> {
    if count == 0 && committed_len == 0 {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(committed_len as usize);
    f.take(committed_len)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    if (buf.len() as u64) < committed_len {
        return Err(Error::Corrupt(format!("{} truncated", path.display())));
    }
    let mut out = Vec::with_capacity(count);
    for line in buf.split(|b| *b == b'\n').filter(|l| !l.is_empty()) {
        let item = serde_json::from_slice(line)
            .map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
        out.push(item);
    }
    if out.len() != count {
        return Err(Error::Corrupt(format!(
            "{} holds {} entries, expected {count}",
            path.display(),
            out.len()
        )));
    }
    Ok(out)
}

/// Exclusive advisory lock on `<dir>/store.lock`, released on drop or when
/// the holding process dies.
#[derive(Debug)]
pub struct StoreLock {
    _file: File,
}

impl StoreLock {
    pub const FILE: &'static str = "store.lock";

    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(TryLockError::WouldBlock) => Err(Error::Locked(dir.to_path_buf())),
            Err(TryLockError::Error(e)) => Err(Error::io(&path, e)),
        }
    }
}

/// Environment variable naming the persistence step at which to abort.
pub const FAULT_ENV: &str = "CVARTUNE_FAULT_POINT";

/// Counts persistence steps and aborts the process when the configured one is
/// reached. Inert unless a fault point is set.
#[derive(Debug, Default)]
pub struct FaultInjector {
    target: Option<u32>,
    seen: Cell<u32>,
}

impl FaultInjector {
    pub fn new(target: Option<u32>) -> Self {
        Self {
            target,
            seen: Cell::new(0),
        }
    }

    pub fn from_env() -> Self {
        Self::new(std::env::var(FAULT_ENV).ok().and_then(|v| v.parse().ok()))
    }

    pub fn step(&self) {
        let n = self.seen.get() + 1;
        self.seen.set(n);
        if self.target == Some(n) {
            std::process::abort();
        }
    }

    pub fn steps_seen(&self) -> u32 {
        self.seen.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_atomic(&p, b"one", false).unwrap();
        write_atomic(&p, b"two", true).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert!(!dir.path().join("x.json.tmp").exists());
    }

    #[test]
    fn append_discards_uncommitted_tail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        let len = append_lines(&p, 0, &[1u32, 2], false).unwrap();
        // simulate a torn write after the committed prefix
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(b"{\"garb").unwrap();
        let len2 = append_lines(&p, len, &[3u32], false).unwrap();
        let items: Vec<u32> = read_lines(&p, len2, 3).unwrap();
        assert_eq!(items, [1, 2, 3]);
        assert!(read_lines::<u32>(&p, len2, 4).is_err());
        assert_eq!(read_lines::<u32>(&p, len, 2).unwrap(), [1, 2]);
    }

    #[test]
    fn second_lock_fails_fast() {
        let dir = tempfile::tempdir().unwrap();
        let held = StoreLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            StoreLock::acquire(dir.path()),
            Err(Error::Locked(_))
        ));
        drop(held);
        assert!(StoreLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn fault_injector_counts_steps() {
        let f = FaultInjector::new(None);
        f.step();
        f.step();
        assert_eq!(f.steps_seen(), 2);
    }
}
