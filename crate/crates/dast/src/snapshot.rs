//! Content snapshots of a working copy and their differences.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use pasta_core::runtime::ContentDiff;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileState {
    pub size: u64,
    pub hash: [u8; 32],
}

/// Regular files under a root, keyed by `/`-separated relative path.
pub type Snapshot = BTreeMap<String, FileState>;

pub fn snapshot(root: &Path) -> io::Result<Snapshot> {
    let mut snap = Snapshot::new();
    for entry in WalkDir::new(root).follow_links(false).sort_by_file_name() {
        let entry = entry.map_err(io::Error::other)?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walk stays under root");
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let bytes = fs::read(entry.path())?;
        snap.insert(
            key,
            FileState {
                size: bytes.len() as u64,
                hash: Sha256::digest(&bytes).into(),
            },
        );
    }
    Ok(snap)
}

/// Set difference by path; a file is modified when its hash changed.
pub fn diff_contents(before: &Snapshot, after: &Snapshot) -> ContentDiff {
    let mut diff = ContentDiff::default();
    for (path, new) in after {
        match before.get(path) {
            None => diff.added.push((path.clone(), new.size)),
            Some(old) if old.hash != new.hash => {
                diff.modified
                    .push((path.clone(), new.size as i64 - old.size as i64));
            }
            Some(_) => {}
        }
    }
    diff.removed = before
        .keys()
        .filter(|p| !after.contains_key(*p))
        .cloned()
        .collect();
    diff
}
