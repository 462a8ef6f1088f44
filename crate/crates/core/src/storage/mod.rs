//! Persistent bundle storage. Bundles are kept one file per bundle under
//! `<dir>/<first two hex digits>/<storage_id>.bp7`; the index is rebuilt by
//! scanning the directory.

pub mod cla;
pub mod command;
pub mod filter;
pub mod remote;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, UNIX_EPOCH};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bundle::{decode_bundle, expiry_time, Bundle, BundleError, CreationTimestamp};
use crate::clock::{system_time_to_dtn_ms, DTN_EPOCH_UNIX_SECS};
use crate::eid::EndpointId;

pub use cla::{StorageCla, StorageConfig, StorageHandle, StorageService, CLA_NAME, DEFAULT_SWEEP_INTERVAL_MS};
pub use command::{StorageCommand, StorageReply, Verb};
pub use filter::BundleFilter;
pub use remote::remote_command;

pub const DEFAULT_QUOTA: u64 = 64 * 1024 * 1024;
pub const DEFAULT_AGENT_ID: &str = "sqa";
const EXTENSION: &str = "bp7";
const TMP_EXTENSION: &str = "tmp";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage full: {size} octets do not fit ({used} of {quota} used)")]
    StorageFull { size: u64, used: u64, quota: u64 },
    #[error("storage I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a bundle: {0}")]
    Decode(#[from] BundleError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordMeta {
    pub destination: EndpointId,
    pub source: EndpointId,
    pub creation: CreationTimestamp,
    pub lifetime_ms: u64,
    pub stored_at: u64,
    pub size: u64,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredRecord {
    pub storage_id: String,
    pub meta: RecordMeta,
}

pub fn storage_id(serialized: &[u8]) -> String {
    hex::encode(Sha256::digest(serialized))
}

fn meta_of(b: &Bundle, stored_at: u64, size: u64) -> RecordMeta {
    RecordMeta {
        destination: b.destination.clone(),
        source: b.source.clone(),
        creation: b.creation,
        lifetime_ms: b.lifetime_ms,
        stored_at,
        size,
        // Bundles without creation time and without an age block are unusable anyway.
        expires_at: expiry_time(b, stored_at).unwrap_or(stored_at),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreOutcome {
    /// False if identical bytes were already stored.
    pub created: bool,
}

/// The on-disk store. Owned by exactly one task.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    quota: u64,
    used: u64,
    index: BTreeMap<String, RecordMeta>,
}

impl Store {
    /// Opens (creating if needed) a store and indexes what is on disk.
    /// Leftover temporary files from an interrupted write are removed.
    pub fn open(dir: impl Into<PathBuf>, quota: u64) -> Result<Store, StorageError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut store = Store {
            dir,
            quota,
            used: 0,
            index: BTreeMap::new(),
        };
        store.scan()?;
        Ok(store)
    }

    fn scan(&mut self) -> Result<(), StorageError> {
        for shard in fs::read_dir(&self.dir)? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for entry in fs::read_dir(shard.path())? {
                let path = entry?.path();
                match path.extension().and_then(|e| e.to_str()) {
                    Some(TMP_EXTENSION) => {
                        log::info!("storage: removing incomplete write {}", path.display());
                        fs::remove_file(&path)?;
                    }
                    Some(EXTENSION) => self.index_file(&path),
                    _ => {}
                }
            }
        }
        log::info!(
            "storage: {} bundles ({} octets) in {}",
            self.index.len(),
            self.used,
            self.dir.display()
        );
        Ok(())
    }

    fn index_file(&mut self, path: &Path) {
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            return;
        };
        let data = match fs::read(path) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("storage: cannot read {}: {e}", path.display());
                return;
            }
        };
        if storage_id(&data) != stem {
            log::warn!("storage: {} does not match its content hash, ignored", path.display());
            return;
        }
        let bundle = match decode_bundle(&data) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("storage: {} is not a bundle: {e}", path.display());
                return;
            }
        };
        let stored_at = fs::metadata(path)
            .and_then(|m| m.modified())
            .map(system_time_to_dtn_ms)
            .unwrap_or(0);
        self.used += data.len() as u64;
        self.index
            .insert(stem.to_string(), meta_of(&bundle, stored_at, data.len() as u64));
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(&id[..2]).join(format!("{id}.{EXTENSION}"))
    }

    /// Persists serialized bundle bytes. Returns after the file is synced and renamed into place.
    pub fn store(&mut self, serialized: &[u8], now: u64) -> Result<(String, StoreOutcome), StorageError> {
        let id = storage_id(serialized);
        if self.index.contains_key(&id) {
            return Ok((id, StoreOutcome { created: false }));
        }
        let size = serialized.len() as u64;
        if self.used + size > self.quota {
            return Err(StorageError::StorageFull {
                size,
                used: self.used,
                quota: self.quota,
            });
        }
        let bundle = decode_bundle(serialized)?;
        let path = self.path_for(&id);
        let shard = path.parent().expect("sharded path");
        fs::create_dir_all(shard)?;
        let tmp = path.with_extension(TMP_EXTENSION);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(serialized)?;
            let unix = Duration::from_millis(now) + Duration::from_secs(DTN_EPOCH_UNIX_SECS);
            f.set_modified(UNIX_EPOCH + unix)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        if let Ok(d) = fs::File::open(shard) {
            let _ = d.sync_all();
        }
        self.used += size;
        self.index.insert(id.clone(), meta_of(&bundle, now, size));
        Ok((id, StoreOutcome { created: true }))
    }

    pub fn get(&self, id: &str) -> Option<&RecordMeta> {
        self.index.get(id)
    }

    pub fn read(&self, id: &str) -> Result<Vec<u8>, StorageError> {
        Ok(fs::read(self.path_for(id))?)
    }

    pub fn remove(&mut self, id: &str) -> Result<bool, StorageError> {
        let Some(meta) = self.index.remove(id) else {
            return Ok(false);
        };
        self.used -= meta.size;
        match fs::remove_file(self.path_for(id)) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(true),
            Err(e) => Err(e.into()),
        }
    }

    pub fn query(&self, filter: &BundleFilter) -> Vec<StoredRecord> {
        let matching = self.index.iter().filter(|(_, m)| filter.matches(m)).map(|(id, m)| StoredRecord {
            storage_id: id.clone(),
            meta: m.clone(),
        });
        match filter.limit {
            Some(n) => matching.take(n as usize).collect(),
            None => matching.collect(),
        }
    }

    pub fn delete(&mut self, filter: &BundleFilter) -> Result<u64, StorageError> {
        let ids: Vec<String> = self.query(filter).into_iter().map(|r| r.storage_id).collect();
        let mut n = 0;
        for id in ids {
            if self.remove(&id)? {
                n += 1;
            }
        }
        Ok(n)
    }

    /// Removes every bundle whose lifetime has elapsed at `now`.
    pub fn expire_sweep(&mut self, now: u64) -> Result<u64, StorageError> {
        let expired: Vec<String> = self
            .index
            .iter()
            .filter(|(_, m)| m.expires_at <= now)
            .map(|(id, _)| id.clone())
            .collect();
        for id in &expired {
            self.remove(id)?;
        }
        if !expired.is_empty() {
            log::info!("storage: {} expired bundles removed", expired.len());
        }
        Ok(expired.len() as u64)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::encode_bundle;
    use crate::crc::CrcType;

    fn bundle(dst: &str, creation: u64, lifetime: u64, payload: usize) -> Bundle {
        Bundle::new(
            "dtn://a.dtn/src".parse().unwrap(),
            dst.parse().unwrap(),
            CreationTimestamp::new(creation, 0),
            lifetime,
            vec![7; payload],
            CrcType::Crc32C,
        )
    }

    #[test]
    fn idempotent_store() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path(), DEFAULT_QUOTA).unwrap();
        let bytes = encode_bundle(&bundle("dtn://b.dtn/app", 10, 1000, 4)).unwrap();
        let (a, first) = s.store(&bytes, 10).unwrap();
        let (b, second) = s.store(&bytes, 11).unwrap();
        assert_eq!(a, b);
        assert!(first.created && !second.created);
        assert_eq!(s.len(), 1);
        assert_eq!(a, storage_id(&bytes));
        assert!(s.path_for(&a).ends_with(format!("{}/{a}.bp7", &a[..2])));
        assert_eq!(s.read(&a).unwrap(), bytes);
    }

    #[test]
    fn quota() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path(), 1024).unwrap();
        let bytes = encode_bundle(&bundle("dtn://b.dtn/app", 10, 1000, 2048)).unwrap();
        assert!(matches!(s.store(&bytes, 10), Err(StorageError::StorageFull { .. })));
        assert!(s.is_empty());
    }

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle("dtn://b.dtn/app", 10, 1000, 4);
        let bytes = encode_bundle(&b).unwrap();
        let id = {
            let mut s = Store::open(dir.path(), DEFAULT_QUOTA).unwrap();
            s.store(&bytes, 777_000).unwrap().0
        };
        let s = Store::open(dir.path(), DEFAULT_QUOTA).unwrap();
        let all = s.query(&BundleFilter::all());
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].storage_id, id);
        let m = &all[0].meta;
        assert_eq!(m.destination, b.destination);
        assert_eq!(m.creation, b.creation);
        assert_eq!(m.lifetime_ms, 1000);
        assert_eq!(m.size, bytes.len() as u64);
        assert_eq!(m.stored_at, 777_000);
        assert_eq!(s.used(), bytes.len() as u64);
    }

    #[test]
    fn interrupted_write_is_never_indexed() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = encode_bundle(&bundle("dtn://b.dtn/app", 10, 1000, 4)).unwrap();
        let id = storage_id(&bytes);
        // A crash before rename leaves only the temporary file.
        let shard = dir.path().join(&id[..2]);
        fs::create_dir_all(&shard).unwrap();
        let tmp = shard.join(format!("{id}.tmp"));
        fs::write(&tmp, &bytes[..bytes.len() / 2]).unwrap();
        // A truncated file under the final name fails the hash check.
        let other = encode_bundle(&bundle("dtn://b.dtn/app", 11, 1000, 4)).unwrap();
        let other_id = storage_id(&other);
        fs::create_dir_all(dir.path().join(&other_id[..2])).unwrap();
        fs::write(dir.path().join(&other_id[..2]).join(format!("{other_id}.bp7")), &other[..5]).unwrap();
        let s = Store::open(dir.path(), DEFAULT_QUOTA).unwrap();
        assert!(s.is_empty());
        assert!(!tmp.exists());
    }

    #[test]
    fn delete_and_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path(), DEFAULT_QUOTA).unwrap();
        for (i, lifetime) in [100u64, 5000, 200].iter().enumerate() {
            let b = bundle("dtn://b.dtn/app", 1000 + i as u64, *lifetime, 4);
            s.store(&encode_bundle(&b).unwrap(), 1000).unwrap();
        }
        assert_eq!(s.expire_sweep(1150).unwrap(), 1);
        assert_eq!(s.len(), 2);
        let f = BundleFilter {
            source: Some("ipn:9.1".parse().unwrap()),
            ..BundleFilter::all()
        };
        assert_eq!(s.delete(&f).unwrap(), 0);
        assert_eq!(s.delete(&BundleFilter::all()).unwrap(), 2);
        assert_eq!(s.used(), 0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn sweep_removes_exactly_the_expired_subset(
            lifetimes in proptest::collection::vec(1u64..10_000, 1..12),
            now in 1000u64..12_000,
        ) {
            let dir = tempfile::tempdir().unwrap();
            let mut s = Store::open(dir.path(), DEFAULT_QUOTA).unwrap();
            let mut expect_kept = Vec::new();
            for (i, l) in lifetimes.iter().enumerate() {
                let creation = 1000 + i as u64;
                let bytes = encode_bundle(&bundle("dtn://b.dtn/app", creation, *l, 1)).unwrap();
                let (id, _) = s.store(&bytes, creation).unwrap();
                if creation + l > now {
                    expect_kept.push(id);
                }
            }
            let removed = s.expire_sweep(now).unwrap();
            proptest::prop_assert_eq!(removed as usize, lifetimes.len() - expect_kept.len());
            let mut kept: Vec<String> = s.query(&BundleFilter::all()).into_iter().map(|r| r.storage_id).collect();
            kept.sort();
            expect_kept.sort();
            proptest::prop_assert_eq!(kept, expect_kept);
        }
    }
}
