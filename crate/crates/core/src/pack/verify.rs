//! Compare a packed image against its source tree, the integrity gate before
//! originals are deleted.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::pack::{scan_source, NodeKind, PackOptions};
use crate::reader::{BundleReader, EntryKind};

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub path: PathBuf,
    pub what: String,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub entries_checked: u64,
    pub mismatches: Vec<Mismatch>,
}

impl VerifyReport {
    pub fn clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn file_digest(path: &Path) -> Result<[u8; 32]> {
    let mut hasher = Sha256::new();
    let mut f = File::open(path)?;
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().into())
}

fn bundle_digest(reader: &BundleReader, r: crate::format::InodeRef) -> Result<[u8; 32]> {
    let mut hasher = Sha256::new();
    let mut offset = 0u64;
    loop {
        let chunk = reader.read(r, offset, 1 << 20)?;
        if chunk.is_empty() {
            break;
        }
        offset += chunk.len() as u64;
        hasher.update(&chunk);
    }
    Ok(hasher.finalize().into())
}

/// Walk the image and the source side by side, comparing names, kinds,
/// sizes, modes, symlink targets and full content digests.
pub fn verify(image: impl AsRef<Path>, source: impl AsRef<Path>) -> Result<VerifyReport> {
    let reader = BundleReader::open(image)?;
    let tree = scan_source(source, &PackOptions::default())?;

    struct ImageEntry {
        kind: EntryKind,
        size: u64,
        mode: u16,
        inode_ref: crate::format::InodeRef,
    }

    let mut in_image: BTreeMap<PathBuf, ImageEntry> = BTreeMap::new();
    let mut walker = ImageWalk::new(&reader);
    while let Some(item) = walker.next_entry()? {
        in_image.insert(
            item.0,
            ImageEntry {
                kind: item.1,
                size: item.2,
                mode: item.3,
                inode_ref: item.4,
            },
        );
    }

    let mut report = VerifyReport {
        entries_checked: 0,
        mismatches: Vec::new(),
    };
    fn push(report: &mut VerifyReport, path: &Path, what: String) {
        report.mismatches.push(Mismatch {
            path: path.to_path_buf(),
            what,
        });
    }

    for node in &tree.nodes {
        report.entries_checked += 1;
        let rel = node.rel_path.clone();
        let Some(entry) = in_image.remove(&rel) else {
            push(&mut report, &rel, "missing from image".into());
            continue;
        };
        let want_kind = match node.kind {
            NodeKind::Dir => EntryKind::Dir,
            NodeKind::File => EntryKind::File,
            NodeKind::Symlink => EntryKind::Symlink,
        };
        if entry.kind != want_kind {
            push(
                &mut report,
                &rel,
                format!("kind {:?} != {:?}", entry.kind, want_kind),
            );
            continue;
        }
        if entry.mode != node.mode {
            push(
                &mut report,
                &rel,
                format!("mode {:o} != {:o}", entry.mode, node.mode),
            );
        }
        match node.kind {
            NodeKind::File => {
                if entry.size != node.size {
                    push(
                        &mut report,
                        &rel,
                        format!("size {} != {}", entry.size, node.size),
                    );
                } else if bundle_digest(&reader, entry.inode_ref)?
                    != file_digest(&tree.abs_path(node))?
                {
                    push(&mut report, &rel, "content digest mismatch".into());
                }
            }
            NodeKind::Symlink => {
                let target = reader.readlink(entry.inode_ref)?;
                if target != node.target {
                    push(
                        &mut report,
                        &rel,
                        format!(
                            "symlink target {:?} != {:?}",
                            String::from_utf8_lossy(&target),
                            String::from_utf8_lossy(&node.target)
                        ),
                    );
                }
            }
            NodeKind::Dir => {}
        }
    }
    for (path, _) in in_image {
        report.entries_checked += 1;
        report.mismatches.push(Mismatch {
            path,
            what: "extra entry in image".into(),
        });
    }
    Ok(report)
}

/// Walk yielding source-relative paths and inode refs (the public walk
/// yields "/"-rooted paths without refs).
struct ImageWalk<'a> {
    reader: &'a BundleReader,
    stack: Vec<(PathBuf, std::collections::VecDeque<(Vec<u8>, EntryKind, crate::format::InodeRef)>)>,
    emitted_root: bool,
}

impl<'a> ImageWalk<'a> {
    fn new(reader: &'a BundleReader) -> Self {
        ImageWalk {
            reader,
            stack: Vec::new(),
            emitted_root: false,
        }
    }

    #[allow(clippy::type_complexity)]
    fn next_entry(
        &mut self,
    ) -> Result<Option<(PathBuf, EntryKind, u64, u16, crate::format::InodeRef)>> {
        use std::ffi::OsString;
        use std::os::unix::ffi::OsStringExt;
        if !self.emitted_root {
            self.emitted_root = true;
            let root = self.reader.root();
            let attr = self.reader.getattr(root)?;
            self.stack
                .push((PathBuf::new(), self.reader.readdir(root)?.into()));
            return Ok(Some((PathBuf::new(), attr.kind, attr.size, attr.mode, root)));
        }
        while let Some((dir, entries)) = self.stack.last_mut() {
            let Some((name, kind, child)) = entries.pop_front() else {
                self.stack.pop();
                continue;
            };
            let path = dir.join::<OsString>(OsString::from_vec(name));
            let attr = self.reader.getattr(child)?;
            if kind == EntryKind::Dir {
                self.stack.push((path.clone(), self.reader.readdir(child)?.into()));
            }
            return Ok(Some((path, kind, attr.size, attr.mode, child)));
        }
        Ok(None)
    }
}
