//! Read-only virtual filesystem over one opened bundle.
//!
//! All metadata access goes through an explicit userspace block cache, so
//! cold/warm scan behaviour is controllable without privileges: clearing the
//! cache restores the cold state regardless of what the OS page cache holds.

mod cache;

use std::collections::VecDeque;
use std::ffi::OsString;
use std::os::unix::ffi::OsStringExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;

pub use cache::{BlockCache, CacheKey, CacheStats, Region};

use crate::error::{Error, Result};
use crate::format::{
    self, decode_dir_listing, decode_inode, parse_superblock, read_fragment_table, read_id_table,
    read_metadata_block, Codec, FragmentEntry, InodePayload, InodeRecord, InodeRef, MetaCursor,
    Superblock, DATA_UNCOMPRESSED, FRAGMENT_NONE, SUPERBLOCK_SIZE,
};
use crate::source::{ByteSource, FileSource};

/// Default cache budget: 64 MiB.
pub const DEFAULT_CACHE_BUDGET: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Dir,
    File,
    Symlink,
}

impl EntryKind {
    pub fn from_tag(tag: u16) -> Result<EntryKind> {
        match tag {
            format::kind::BASIC_DIR | format::kind::EXT_DIR => Ok(EntryKind::Dir),
            format::kind::BASIC_FILE | format::kind::EXT_FILE => Ok(EntryKind::File),
            format::kind::SYMLINK => Ok(EntryKind::Symlink),
            other => Err(Error::UnsupportedInodeKind(format!("tag {other}"))),
        }
    }
}

/// Resolved attributes of one inode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Attr {
    pub kind: EntryKind,
    pub size: u64,
    pub mode: u16,
    pub uid: u32,
    pub gid: u32,
    pub mtime: u32,
    pub inode_number: u32,
    pub nlink: u32,
}

impl Attr {
    /// Permission bits with the file-type bits set, as stat(2) reports.
    pub fn unix_mode(&self) -> u32 {
        let type_bits = match self.kind {
            EntryKind::Dir => 0o040000,
            EntryKind::File => 0o100000,
            EntryKind::Symlink => 0o120000,
        };
        type_bits | u32::from(self.mode)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CacheAction {
    Clear,
    Stats,
    Resize(u64),
}

/// An opened bundle image.
pub struct BundleReader {
    source: Box<dyn ByteSource>,
    label: String,
    superblock: Superblock,
    codec: Codec,
    ids: Vec<u32>,
    fragments: Vec<FragmentEntry>,
    cache: Mutex<BlockCache>,
    open_elapsed: Duration,
}

impl BundleReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with_budget(path, DEFAULT_CACHE_BUDGET)
    }

    pub fn open_with_budget(path: impl AsRef<Path>, budget: u64) -> Result<Self> {
        let path = path.as_ref();
        let source = FileSource::open(path).map_err(|e| Error::Unreadable {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_source(Box::new(source), path.display().to_string(), budget)
            .map_err(|e| e.with_image(path))
    }

    /// Open over any byte source. Tables are loaded eagerly: the cost is
    /// proportional to table sizes, not data size.
    pub fn from_source(source: Box<dyn ByteSource>, label: String, budget: u64) -> Result<Self> {
        let started = Instant::now();
        let mut head = [0u8; SUPERBLOCK_SIZE];
        source
            .read_exact_at(0, &mut head)
            .map_err(|_| Error::TruncatedBlock(0))?;
        let superblock = parse_superblock(&head)?;
        let codec = superblock.codec()?;
        if superblock.bytes_used > source.len() {
            return Err(Error::Geometry(format!(
                "superblock claims {} bytes used but the image holds {}",
                superblock.bytes_used,
                source.len()
            )));
        }
        let ids = read_id_table(
            &*source,
            codec,
            superblock.id_table_start,
            superblock.id_count,
        )?;
        let fragments = read_fragment_table(
            &*source,
            codec,
            superblock.fragment_table_start,
            superblock.fragment_count,
            superblock.block_size,
        )?;
        Ok(BundleReader {
            source,
            label,
            superblock,
            codec,
            ids,
            fragments,
            cache: Mutex::new(BlockCache::new(budget)),
            open_elapsed: started.elapsed(),
        })
    }

    pub fn superblock(&self) -> &Superblock {
        &self.superblock
    }

    pub fn inode_count(&self) -> u32 {
        self.superblock.inode_count
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Wall time spent parsing the superblock and loading tables at open.
    pub fn open_elapsed(&self) -> Duration {
        self.open_elapsed
    }

    pub fn root(&self) -> InodeRef {
        self.superblock.root_inode_ref
    }

    pub fn cache_control(&self, action: CacheAction) -> CacheStats {
        let mut cache = self.cache.lock().unwrap();
        match action {
            CacheAction::Clear => cache.clear(),
            CacheAction::Stats => {}
            CacheAction::Resize(budget) => cache.resize(budget),
        }
        cache.stats()
    }

    fn fetch_meta(&self, region: Region, rel_offset: u64) -> Result<(Arc<Vec<u8>>, u64)> {
        let key = CacheKey {
            region,
            offset: rel_offset,
        };
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit);
        }
        let base = match region {
            Region::InodeTable => self.superblock.inode_table_start,
            Region::DirTable => self.superblock.directory_table_start,
            Region::Data => unreachable!("data blocks are not metadata"),
        };
        let (payload, consumed) =
            read_metadata_block(&*self.source, self.codec, base + rel_offset)?;
        let payload = Arc::new(payload);
        self.cache
            .lock()
            .unwrap()
            .insert(key, payload.clone(), consumed);
        Ok((payload, consumed))
    }

    fn meta_cursor(&self, region: Region, start: InodeRef) -> Result<MetaCursor<'_>> {
        let fetch = move |rel: u64| self.fetch_meta(region, rel);
        MetaCursor::new(Box::new(fetch), start)
    }

    /// Decode the inode record addressed by `r`.
    pub fn inode_at(&self, r: InodeRef) -> Result<InodeRecord> {
        let mut cursor = self.meta_cursor(Region::InodeTable, r)?;
        let rec = decode_inode(&mut cursor, self.superblock.block_size)?;
        if rec.inode_number < 1 || rec.inode_number > self.superblock.inode_count {
            return Err(Error::Corrupt(format!(
                "inode number {} outside 1..={}",
                rec.inode_number, self.superblock.inode_count
            )));
        }
        Ok(rec)
    }

    fn listing_of(&self, rec: &InodeRecord) -> Result<Vec<format::DirEntry>> {
        let (start, offset, listing_size) = match rec.payload {
            InodePayload::BasicDir {
                dir_block_start,
                dir_block_offset,
                listing_size,
                ..
            } => (dir_block_start, dir_block_offset, u32::from(listing_size)),
            InodePayload::ExtDir {
                dir_block_start,
                dir_block_offset,
                listing_size,
                ..
            } => (dir_block_start, dir_block_offset, listing_size),
            _ => return Err(Error::NotADirectory),
        };
        if listing_size <= 3 {
            return Ok(Vec::new());
        }
        let mut cursor =
            self.meta_cursor(Region::DirTable, InodeRef::new(u64::from(start), offset))?;
        decode_dir_listing(&mut cursor, listing_size)
    }

    pub fn lookup(&self, dir: InodeRef, name: &[u8]) -> Result<InodeRef> {
        let rec = self.inode_at(dir)?;
        let listing = self.listing_of(&rec)?;
        for entry in listing {
            if entry.name == name {
                return Ok(InodeRef::new(
                    u64::from(entry.inode_block_start),
                    entry.intra_offset,
                ));
            }
        }
        Err(Error::NotFound)
    }

    pub fn getattr(&self, r: InodeRef) -> Result<Attr> {
        let rec = self.inode_at(r)?;
        self.attr_of(&rec)
    }

    fn resolve_id(&self, index: u16) -> Result<u32> {
        self.ids
            .get(index as usize)
            .copied()
            .ok_or_else(|| Error::Corrupt(format!("id index {index} out of range")))
    }

    fn attr_of(&self, rec: &InodeRecord) -> Result<Attr> {
        let (kind, size, nlink) = match &rec.payload {
            InodePayload::BasicDir {
                listing_size,
                link_count,
                ..
            } => (EntryKind::Dir, u64::from(*listing_size), *link_count),
            InodePayload::ExtDir {
                listing_size,
                link_count,
                ..
            } => (EntryKind::Dir, u64::from(*listing_size), *link_count),
            InodePayload::BasicFile { file_size, .. } => (EntryKind::File, u64::from(*file_size), 1),
            InodePayload::ExtFile {
                file_size,
                link_count,
                ..
            } => (EntryKind::File, *file_size, *link_count),
            InodePayload::Symlink { target, link_count } => {
                (EntryKind::Symlink, target.len() as u64, *link_count)
            }
        };
        Ok(Attr {
            kind,
            size,
            mode: rec.mode,
            uid: self.resolve_id(rec.uid_index)?,
            gid: self.resolve_id(rec.gid_index)?,
            mtime: rec.mtime,
            inode_number: rec.inode_number,
            nlink,
        })
    }

    /// Entries of a directory in stored (byte-sorted) order, excluding "."
    /// and "..".
    pub fn readdir(&self, dir: InodeRef) -> Result<Vec<(Vec<u8>, EntryKind, InodeRef)>> {
        let rec = self.inode_at(dir)?;
        let listing = self.listing_of(&rec)?;
        listing
            .into_iter()
            .map(|e| {
                Ok((
                    e.name,
                    EntryKind::from_tag(e.kind_tag)?,
                    InodeRef::new(u64::from(e.inode_block_start), e.intra_offset),
                ))
            })
            .collect()
    }

    pub fn readlink(&self, r: InodeRef) -> Result<Vec<u8>> {
        match self.inode_at(r)?.payload {
            InodePayload::Symlink { target, .. } => Ok(target),
            _ => Err(Error::NotASymlink),
        }
    }

    /// Read up to `len` bytes of a regular file starting at `offset`.
    /// `offset` at or past the end returns an empty buffer; reads crossing
    /// block boundaries, sparse blocks and fragment tails are transparent.
    pub fn read(&self, file: InodeRef, offset: u64, len: u32) -> Result<Vec<u8>> {
        let rec = self.inode_at(file)?;
        let view = FileView::of(&rec)?;
        let block_size = u64::from(self.superblock.block_size);
        if offset >= view.file_size || len == 0 {
            return Ok(Vec::new());
        }
        let end = view.file_size.min(offset + u64::from(len));
        let mut out = Vec::with_capacity((end - offset) as usize);

        // Span covered by listed data blocks; anything past it is the
        // fragment tail.
        let block_span = view.block_sizes.len() as u64 * block_size;
        let mut disk = view.data_start;
        for (i, word) in view.block_sizes.iter().enumerate() {
            let logical_start = i as u64 * block_size;
            if logical_start >= end {
                break;
            }
            let logical_len = block_size.min(view.file_size - logical_start);
            let logical_end = logical_start + logical_len;
            if logical_end > offset {
                let payload = self.data_block(disk, *word, logical_len)?;
                let lo = offset.saturating_sub(logical_start) as usize;
                let hi = (end.min(logical_end) - logical_start) as usize;
                match &payload {
                    Some(bytes) => out.extend_from_slice(&bytes[lo..hi]),
                    None => out.resize(out.len() + (hi - lo), 0),
                }
            }
            disk += u64::from(word & 0x00ff_ffff);
        }

        if end > block_span {
            let tail = self.fragment_tail(&view)?;
            let lo = offset.saturating_sub(block_span) as usize;
            let hi = (end - block_span) as usize;
            out.extend_from_slice(&tail[lo..hi]);
        }
        Ok(out)
    }

    /// Fetch one data block. `None` means a sparse block of zeros.
    fn data_block(
        &self,
        disk_offset: u64,
        size_word: u32,
        expect_len: u64,
    ) -> Result<Option<Arc<Vec<u8>>>> {
        let stored = size_word & 0x00ff_ffff;
        if stored == 0 {
            return Ok(None);
        }
        let key = CacheKey {
            region: Region::Data,
            offset: disk_offset,
        };
        if let Some((payload, _)) = self.cache.lock().unwrap().get(&key) {
            return Ok(Some(payload));
        }
        let mut raw = vec![0u8; stored as usize];
        self.source
            .read_exact_at(disk_offset, &mut raw)
            .map_err(|_| Error::TruncatedBlock(disk_offset))?;
        let payload = if size_word & DATA_UNCOMPRESSED != 0 {
            raw
        } else {
            self.codec.decompress(&raw, self.superblock.block_size)?
        };
        if payload.len() as u64 != expect_len {
            return Err(Error::Corrupt(format!(
                "data block at {disk_offset} decoded to {} bytes, expected {expect_len}",
                payload.len()
            )));
        }
        let payload = Arc::new(payload);
        let mut cache = self.cache.lock().unwrap();
        if payload.len() as u64 <= cache.budget() / 8 {
            cache.insert(key, payload.clone(), 0);
        }
        Ok(Some(payload))
    }

    fn fragment_tail(&self, view: &FileView) -> Result<Arc<Vec<u8>>> {
        let (index, frag_offset) = view
            .fragment
            .ok_or_else(|| Error::Corrupt("file tail past its data blocks".into()))?;
        let entry = self
            .fragments
            .get(index as usize)
            .copied()
            .ok_or_else(|| Error::Corrupt(format!("fragment index {index} out of range")))?;
        let frag_len = u64::from(entry.size_word & 0x00ff_ffff);
        let block = self
            .data_block(entry.start, entry.size_word, frag_len)?
            .ok_or_else(|| Error::Corrupt("sparse fragment block".into()))?;
        let tail_len =
            view.file_size - view.block_sizes.len() as u64 * u64::from(self.superblock.block_size);
        let lo = frag_offset as usize;
        let hi = lo + tail_len as usize;
        if hi > block.len() {
            return Err(Error::Corrupt(format!(
                "fragment slice {lo}..{hi} outside {}-byte fragment block",
                block.len()
            )));
        }
        Ok(Arc::new(block[lo..hi].to_vec()))
    }

    /// Resolve a virtual absolute path to an inode ref. `..` never escapes
    /// the root; symlinks along the way are followed, the final component
    /// only when `follow_final` is set.
    pub fn resolve(&self, path: &[u8], follow_final: bool) -> Result<InodeRef> {
        if path.contains(&0) {
            return Err(Error::InvalidName("path contains NUL".into()));
        }
        let mut pending: VecDeque<Vec<u8>> = path
            .split(|b| *b == b'/')
            .filter(|c| !c.is_empty() && *c != b".")
            .map(<[u8]>::to_vec)
            .collect();
        let mut stack: Vec<InodeRef> = vec![self.root()];
        let mut hops = 0u32;
        while let Some(comp) = pending.pop_front() {
            if comp == b".." {
                if stack.len() > 1 {
                    stack.pop();
                }
                continue;
            }
            let current = *stack.last().expect("stack holds at least the root");
            let child = self.lookup(current, &comp)?;
            let rec = self.inode_at(child)?;
            if let InodePayload::Symlink { ref target, .. } = rec.payload {
                if !pending.is_empty() || follow_final {
                    hops += 1;
                    if hops > 40 {
                        return Err(Error::NotFound);
                    }
                    if target.starts_with(b"/") {
                        stack.truncate(1);
                    }
                    for comp in target
                        .split(|b| *b == b'/')
                        .filter(|c| !c.is_empty() && *c != b".")
                        .rev()
                    {
                        pending.push_front(comp.to_vec());
                    }
                    continue;
                }
            }
            stack.push(child);
        }
        Ok(*stack.last().expect("stack holds at least the root"))
    }

    /// Depth-first traversal: root first, children in readdir order. Yields
    /// every inode exactly once.
    pub fn walk(&self) -> Walk<'_> {
        Walk {
            reader: self,
            stack: Vec::new(),
            started: false,
            done: false,
        }
    }
}

struct FileView<'a> {
    data_start: u64,
    file_size: u64,
    fragment: Option<(u32, u32)>,
    block_sizes: &'a [u32],
}

impl<'a> FileView<'a> {
    fn of(rec: &'a InodeRecord) -> Result<Self> {
        match &rec.payload {
            InodePayload::BasicFile {
                data_start,
                fragment_index,
                fragment_offset,
                file_size,
                block_sizes,
            } => Ok(FileView {
                data_start: u64::from(*data_start),
                file_size: u64::from(*file_size),
                fragment: (*fragment_index != FRAGMENT_NONE)
                    .then_some((*fragment_index, *fragment_offset)),
                block_sizes,
            }),
            InodePayload::ExtFile {
                data_start,
                file_size,
                fragment_index,
                fragment_offset,
                block_sizes,
                ..
            } => Ok(FileView {
                data_start: *data_start,
                file_size: *file_size,
                fragment: (*fragment_index != FRAGMENT_NONE)
                    .then_some((*fragment_index, *fragment_offset)),
                block_sizes,
            }),
            _ => Err(Error::NotAFile),
        }
    }
}

/// Item yielded by [`BundleReader::walk`].
#[derive(Debug, Clone)]
pub struct WalkItem {
    pub path: PathBuf,
    pub attr: Attr,
}

pub struct Walk<'a> {
    reader: &'a BundleReader,
    stack: Vec<(PathBuf, VecDeque<(Vec<u8>, EntryKind, InodeRef)>)>,
    started: bool,
    done: bool,
}

impl Walk<'_> {
    fn step(&mut self) -> Result<Option<WalkItem>> {
        if !self.started {
            self.started = true;
            let root = self.reader.root();
            let attr = self.reader.getattr(root)?;
            let entries = self.reader.readdir(root)?;
            let path = PathBuf::from("/");
            self.stack.push((path.clone(), entries.into()));
            return Ok(Some(WalkItem { path, attr }));
        }
        while let Some((dir_path, entries)) = self.stack.last_mut() {
            let Some((name, kind, child)) = entries.pop_front() else {
                self.stack.pop();
                continue;
            };
            let path = dir_path.join::<OsString>(OsString::from_vec(name));
            let attr = self.reader.getattr(child)?;
            if kind == EntryKind::Dir {
                let entries = self.reader.readdir(child)?;
                self.stack.push((path.clone(), entries.into()));
            }
            return Ok(Some(WalkItem { path, attr }));
        }
        Ok(None)
    }
}

impl Iterator for Walk<'_> {
    type Item = Result<WalkItem>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.step() {
            Ok(Some(item)) => Some(Ok(item)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}
