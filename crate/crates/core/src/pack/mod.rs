//! Build a bundle image from a source directory tree.

mod scan;
mod verify;

use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use scan::{scan_source, scan_source_filtered, NodeKind, SourceNode, SourceTree};
pub use verify::{verify, Mismatch, VerifyReport};

use crate::error::{Error, Result};
use crate::format::{
    encode_dir_listing, encode_inode, flags, kind, write_lookup_table, write_superblock, Codec,
    DirEntry, InodePayload, InodeRecord, InodeRef, MetaStreamWriter, Superblock,
    BASIC_DIR_MAX_LISTING, DATA_UNCOMPRESSED, FRAGMENT_NONE, MAX_BLOCK_SIZE, MIN_BLOCK_SIZE,
    SUPERBLOCK_SIZE, TABLE_ABSENT,
};

#[derive(Debug, Clone)]
pub struct PackOptions {
    pub block_size: u32,
    pub codec: Codec,
    /// Overrides every stored timestamp, making output reproducible.
    pub force_mtime: Option<u32>,
    pub follow_symlinks: bool,
    pub parallel_workers: usize,
}

impl Default for PackOptions {
    fn default() -> Self {
        PackOptions {
            block_size: 131_072,
            codec: Codec::Zlib,
            force_mtime: None,
            follow_symlinks: false,
            parallel_workers: 1,
        }
    }
}

impl PackOptions {
    pub fn validate(&self) -> Result<()> {
        if !self.block_size.is_power_of_two()
            || self.block_size < MIN_BLOCK_SIZE
            || self.block_size > MAX_BLOCK_SIZE
        {
            return Err(Error::Geometry(format!(
                "block size {} out of range or not a power of two",
                self.block_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct PackSummary {
    pub bytes_written: u64,
    pub inode_count: u32,
    /// Image bytes per source file byte; absent for trees with no file data.
    pub compression_ratio: Option<f64>,
    pub source_file_bytes: u64,
    /// Paths whose size or mtime drifted between scan and pack. Each was
    /// re-read with fresh metadata.
    pub drifted: Vec<PathBuf>,
}

struct FileData {
    data_start: u64,
    size_words: Vec<u32>,
    /// Size actually packed, re-measured while reading.
    file_size: u64,
    sparse_bytes: u64,
}

/// Interned uid/gid values in first-use order.
#[derive(Default)]
struct IdTable {
    order: Vec<u32>,
}

impl IdTable {
    fn index_of(&mut self, id: u32) -> Result<u16> {
        if let Some(at) = self.order.iter().position(|v| *v == id) {
            return Ok(at as u16);
        }
        if self.order.len() >= usize::from(u16::MAX) {
            return Err(Error::Corrupt(
                "more than 65535 distinct uid/gid values".into(),
            ));
        }
        self.order.push(id);
        Ok((self.order.len() - 1) as u16)
    }
}

/// Compress one data block. A block of zeros becomes a sparse marker (size
/// word 0, nothing stored); an incompressible block is stored verbatim.
fn encode_data_block(codec: Codec, chunk: &[u8]) -> Result<(Vec<u8>, u32)> {
    if chunk.iter().all(|b| *b == 0) {
        return Ok((Vec::new(), 0));
    }
    let compressed = codec.compress(chunk)?;
    if compressed.len() < chunk.len() {
        let stored = compressed.len() as u32;
        Ok((compressed, stored))
    } else {
        Ok((chunk.to_vec(), chunk.len() as u32 | DATA_UNCOMPRESSED))
    }
}

/// Compress a batch of blocks, preserving order. Output bytes are identical
/// for any worker count.
fn encode_batch(codec: Codec, chunks: &[Vec<u8>], workers: usize) -> Result<Vec<(Vec<u8>, u32)>> {
    if workers <= 1 || chunks.len() <= 1 {
        return chunks.iter().map(|c| encode_data_block(codec, c)).collect();
    }
    let per = chunks.len().div_ceil(workers);
    let mut slots: Vec<Option<Result<(Vec<u8>, u32)>>> = Vec::new();
    slots.resize_with(chunks.len(), || None);
    std::thread::scope(|scope| {
        for (slot_group, chunk_group) in slots.chunks_mut(per).zip(chunks.chunks(per)) {
            scope.spawn(move || {
                for (slot, chunk) in slot_group.iter_mut().zip(chunk_group) {
                    *slot = Some(encode_data_block(codec, chunk));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("all slots filled"))
        .collect()
}

/// Pack a scanned tree into a bundle image at `out`.
///
/// Data blocks are written first in tree order, then the inode table, the
/// directory table and the deduplicated ID table. The writer emits no
/// fragments, no export table and no xattrs; file tails shorter than the
/// block size become a short final data block.
pub fn pack(tree: &SourceTree, opts: &PackOptions, out: impl AsRef<Path>) -> Result<PackSummary> {
    opts.validate()?;
    let out = out.as_ref();
    let file = File::create(out)?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    w.write_all(&[0u8; SUPERBLOCK_SIZE])?;
    let mut pos = SUPERBLOCK_SIZE as u64;
    let mut drifted = Vec::new();

    // Data pass, tree order.
    let mut file_data: Vec<Option<FileData>> = Vec::new();
    file_data.resize_with(tree.nodes.len(), || None);
    let batch_blocks = (opts.parallel_workers.max(1) * 4).max(4);
    for (idx, node) in tree.nodes.iter().enumerate() {
        if node.kind != NodeKind::File {
            continue;
        }
        let abs = tree.abs_path(node);
        let meta = fs::symlink_metadata(&abs).map_err(|e| Error::Unreadable {
            path: abs.clone(),
            source: e,
        })?;
        if meta.len() != node.size || scan::mtime_of(&meta) != node.mtime {
            drifted.push(node.rel_path.clone());
        }
        let mut src = File::open(&abs).map_err(|e| Error::Unreadable {
            path: abs.clone(),
            source: e,
        })?;
        let mut data = FileData {
            data_start: pos,
            size_words: Vec::new(),
            file_size: 0,
            sparse_bytes: 0,
        };
        'file: loop {
            let mut chunks = Vec::with_capacity(batch_blocks);
            let mut at_eof = false;
            for _ in 0..batch_blocks {
                let mut chunk = vec![0u8; opts.block_size as usize];
                let mut filled = 0;
                while filled < chunk.len() {
                    let n = src.read(&mut chunk[filled..])?;
                    if n == 0 {
                        at_eof = true;
                        break;
                    }
                    filled += n;
                }
                chunk.truncate(filled);
                if chunk.is_empty() {
                    break;
                }
                data.file_size += chunk.len() as u64;
                chunks.push(chunk);
                if at_eof {
                    break;
                }
            }
            if chunks.is_empty() {
                break 'file;
            }
            for (bytes, word) in encode_batch(opts.codec, &chunks, opts.parallel_workers)? {
                if word == 0 {
                    data.sparse_bytes += u64::from(opts.block_size);
                }
                w.write_all(&bytes)?;
                pos += bytes.len() as u64;
                data.size_words.push(word);
            }
            if at_eof {
                break 'file;
            }
        }
        if data.file_size == 0 {
            data.data_start = 0;
        }
        // A sparse final block only saves up to the file tail.
        if data.size_words.last() == Some(&0) {
            let tail = data.file_size % u64::from(opts.block_size);
            if tail != 0 {
                data.sparse_bytes -= u64::from(opts.block_size) - tail;
            }
        }
        file_data[idx] = Some(data);
    }

    // Metadata pass, post-order: children's inode records exist before the
    // parent's listing references them, and a directory's listing lands in
    // the directory stream just before its own inode record.
    let mut inode_stream = MetaStreamWriter::new(opts.codec);
    let mut dir_stream = MetaStreamWriter::new(opts.codec);
    let mut refs: Vec<InodeRef> = vec![InodeRef::default(); tree.nodes.len()];
    let mut ids = IdTable::default();
    let root_parent = tree.nodes.len() as u32 + 1;

    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    while let Some((idx, child_at)) = stack.pop() {
        let node = &tree.nodes[idx];
        if child_at < node.children.len() {
            let child = node.children[child_at];
            stack.push((idx, child_at + 1));
            stack.push((child, 0));
            continue;
        }
        let uid_index = ids.index_of(node.uid)?;
        let gid_index = ids.index_of(node.gid)?;
        let mtime = opts.force_mtime.unwrap_or(node.mtime);
        let payload = match node.kind {
            NodeKind::File => {
                let data = file_data[idx].take().expect("file data written");
                file_payload(&data)
            }
            NodeKind::Symlink => InodePayload::Symlink {
                link_count: 1,
                target: node.target.clone(),
            },
            NodeKind::Dir => {
                let mut entries = Vec::with_capacity(node.children.len());
                let mut subdirs = 0u32;
                for &child_idx in &node.children {
                    let child = &tree.nodes[child_idx];
                    if child.kind == NodeKind::Dir {
                        subdirs += 1;
                    }
                    let child_ref = refs[child_idx];
                    entries.push(DirEntry {
                        name: child.name.clone(),
                        kind_tag: match child.kind {
                            NodeKind::Dir => kind::BASIC_DIR,
                            NodeKind::File => kind::BASIC_FILE,
                            NodeKind::Symlink => kind::SYMLINK,
                        },
                        inode_number: child.inode_number,
                        inode_block_start: u32::try_from(child_ref.block_start)
                            .map_err(|_| Error::Corrupt("inode table exceeds 4 GiB".into()))?,
                        intra_offset: child_ref.intra_offset,
                    });
                }
                let (listing, listing_size) = encode_dir_listing(&entries)?;
                let dir_ref = dir_stream.append(&listing)?;
                let dir_block_start = u32::try_from(dir_ref.block_start)
                    .map_err(|_| Error::Corrupt("directory table exceeds 4 GiB".into()))?;
                let parent_inode = if idx == 0 {
                    root_parent
                } else {
                    tree.nodes[node.parent].inode_number
                };
                let link_count = 2 + subdirs;
                if listing_size as usize <= BASIC_DIR_MAX_LISTING + 3 {
                    InodePayload::BasicDir {
                        dir_block_start,
                        link_count,
                        listing_size: listing_size as u16,
                        dir_block_offset: dir_ref.intra_offset,
                        parent_inode,
                    }
                } else {
                    InodePayload::ExtDir {
                        link_count,
                        listing_size,
                        dir_block_start,
                        parent_inode,
                        dir_block_offset: dir_ref.intra_offset,
                    }
                }
            }
        };
        let record = InodeRecord {
            mode: node.mode,
            uid_index,
            gid_index,
            mtime,
            inode_number: node.inode_number,
            payload,
        };
        refs[idx] = inode_stream.append(&encode_inode(&record))?;
    }

    let inode_table_start = pos;
    let inode_blob = inode_stream.finish()?;
    w.write_all(&inode_blob)?;
    pos += inode_blob.len() as u64;

    let directory_table_start = pos;
    let dir_blob = dir_stream.finish()?;
    w.write_all(&dir_blob)?;
    pos += dir_blob.len() as u64;

    let mut id_entries = Vec::with_capacity(ids.order.len() * 4);
    for id in &ids.order {
        id_entries.extend_from_slice(&id.to_le_bytes());
    }
    let (id_blob, id_index_offset) = write_lookup_table(&id_entries, opts.codec, pos)?;
    let id_table_start = pos + id_index_offset;
    w.write_all(&id_blob)?;
    pos += id_blob.len() as u64;

    let superblock = Superblock {
        inode_count: tree.nodes.len() as u32,
        mod_time: opts.force_mtime.unwrap_or_else(now_epoch),
        block_size: opts.block_size,
        fragment_count: 0,
        compressor_id: opts.codec.id(),
        block_log: opts.block_size.trailing_zeros() as u16,
        flags: flags::NO_FRAGMENTS | flags::NO_XATTRS,
        id_count: ids.order.len() as u16,
        root_inode_ref: refs[0],
        bytes_used: pos,
        id_table_start,
        xattr_table_start: TABLE_ABSENT,
        inode_table_start,
        directory_table_start,
        fragment_table_start: TABLE_ABSENT,
        export_table_start: TABLE_ABSENT,
    };

    // Pad to a 4 KiB multiple, then drop the superblock in at offset 0.
    let padded = pos.div_ceil(4096) * 4096;
    if padded > pos {
        w.write_all(&vec![0u8; (padded - pos) as usize])?;
    }
    let mut file = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    file.seek(SeekFrom::Start(0))?;
    file.write_all(&write_superblock(&superblock)?)?;
    file.sync_all()?;

    Ok(PackSummary {
        bytes_written: padded,
        inode_count: tree.nodes.len() as u32,
        compression_ratio: (tree.total_file_bytes > 0)
            .then(|| padded as f64 / tree.total_file_bytes as f64),
        source_file_bytes: tree.total_file_bytes,
        drifted,
    })
}

fn file_payload(data: &FileData) -> InodePayload {
    let fits_basic = data.file_size <= u64::from(u32::MAX)
        && data.data_start <= u64::from(u32::MAX)
        && data.sparse_bytes == 0;
    if fits_basic {
        InodePayload::BasicFile {
            data_start: data.data_start as u32,
            fragment_index: FRAGMENT_NONE,
            fragment_offset: 0,
            file_size: data.file_size as u32,
            block_sizes: data.size_words.clone(),
        }
    } else {
        InodePayload::ExtFile {
            data_start: data.data_start,
            file_size: data.file_size,
            sparse_bytes: data.sparse_bytes,
            link_count: 1,
            fragment_index: FRAGMENT_NONE,
            fragment_offset: 0,
            block_sizes: data.size_words.clone(),
        }
    }
}

fn now_epoch() -> u32 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().min(u64::from(u32::MAX)) as u32)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reader::{BundleReader, CacheAction, EntryKind};
    use std::os::unix::fs::symlink;

    fn pack_tmp(src: &Path, opts: &PackOptions) -> (tempfile::TempDir, PathBuf, PackSummary) {
        let out_dir = tempfile::tempdir().unwrap();
        let out = out_dir.path().join("test.sqfs");
        let tree = scan_source(src, opts).unwrap();
        let summary = pack(&tree, opts, &out).unwrap();
        (out_dir, out, summary)
    }

    #[test]
    fn single_file_roundtrip() {
        let src = tempfile::tempdir().unwrap();
        fs::write(src.path().join("hello.txt"), b"hello\n").unwrap();
        let (_keep, out, summary) = pack_tmp(src.path(), &PackOptions::default());
        assert_eq!(summary.inode_count, 2);

        let reader = BundleReader::open(&out).unwrap();
        assert_eq!(reader.inode_count(), 2);
        let r = reader.lookup(reader.root(), b"hello.txt").unwrap();
        assert_eq!(reader.read(r, 0, 1024).unwrap(), b"hello\n");
        assert_eq!(reader.getattr(r).unwrap().size, 6);
        assert_eq!(reader.read(r, 0, 0).unwrap(), b"");
        assert_eq!(reader.read(r, 6, 10).unwrap(), b"");
        assert_eq!(reader.read(r, 2, 2).unwrap(), b"ll");
    }

    #[test]
    fn empty_dir_image() {
        let src = tempfile::tempdir().unwrap();
        let (_keep, out, summary) = pack_tmp(src.path(), &PackOptions::default());
        assert_eq!(summary.inode_count, 1);
        let reader = BundleReader::open(&out).unwrap();
        let attr = reader.getattr(reader.root()).unwrap();
        assert_eq!(attr.kind, EntryKind::Dir);
        assert_eq!(attr.size, 3);
        assert_eq!(attr.nlink, 2);
        assert!(reader.readdir(reader.root()).unwrap().is_empty());
        let items: Vec<_> = reader.walk().collect::<Result<Vec<_>>>().unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].path, PathBuf::from("/"));
    }

    #[test]
    fn tree_walk_reproduces_source() {
        let src = tempfile::tempdir().unwrap();
        fs::create_dir_all(src.path().join("a/b")).unwrap();
        fs::create_dir(src.path().join("z")).unwrap();
        fs::write(src.path().join("a/one"), vec![7u8; 1000]).unwrap();
        fs::write(src.path().join("a/b/two"), b"contents").unwrap();
        fs::write(src.path().join("z/three"), b"").unwrap();
        symlink("../a/one", src.path().join("z/link")).unwrap();

        let (_keep, out, summary) = pack_tmp(src.path(), &PackOptions::default());
        assert_eq!(summary.inode_count, 8);
        let reader = BundleReader::open(&out).unwrap();
        let items: Vec<_> = reader.walk().collect::<Result<Vec<_>>>().unwrap();
        let paths: Vec<String> = items
            .iter()
            .map(|i| i.path.to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            paths,
            vec!["/", "/a", "/a/b", "/a/b/two", "/a/one", "/z", "/z/link", "/z/three"]
        );
        assert_eq!(items.len(), reader.inode_count() as usize);

        let link = reader.resolve(b"/z/link", false).unwrap();
        assert_eq!(reader.readlink(link).unwrap(), b"../a/one");
        // Following the symlink reaches the file contents.
        let through = reader.resolve(b"/z/link", true).unwrap();
        assert_eq!(reader.read(through, 0, 2048).unwrap(), vec![7u8; 1000]);
    }

    #[test]
    fn multi_block_file_and_sparse() {
        let src = tempfile::tempdir().unwrap();
        let opts = PackOptions {
            block_size: 4096,
            ..PackOptions::default()
        };
        // Three full blocks: data, zeros (sparse), incompressible-ish tail.
        let mut content = vec![1u8; 4096];
        content.extend_from_slice(&[0u8; 4096]);
        let mut x: u32 = 99;
        for _ in 0..5000 {
            x ^= x << 13;
            x ^= x >> 17;
            x ^= x << 5;
            content.push(x as u8);
        }
        fs::write(src.path().join("blocks.bin"), &content).unwrap();
        let (_keep, out, _) = pack_tmp(src.path(), &opts);
        let reader = BundleReader::open(&out).unwrap();
        let r = reader.lookup(reader.root(), b"blocks.bin").unwrap();
        assert_eq!(reader.read(r, 0, 1 << 20).unwrap(), content);
        // Cross-boundary read.
        assert_eq!(reader.read(r, 4090, 12).unwrap(), &content[4090..4102]);
        // Sparse region reads as zeros.
        assert_eq!(reader.read(r, 4096, 4096).unwrap(), vec![0u8; 4096]);
    }

    #[test]
    fn deterministic_with_force_mtime_and_workers() {
        let src = tempfile::tempdir().unwrap();
        fs::create_dir(src.path().join("d")).unwrap();
        for i in 0..20 {
            fs::write(src.path().join(format!("d/f{i}")), vec![i as u8; 9000]).unwrap();
        }
        let mut images = Vec::new();
        for workers in [1usize, 4] {
            let opts = PackOptions {
                block_size: 4096,
                force_mtime: Some(1_700_000_000),
                parallel_workers: workers,
                ..PackOptions::default()
            };
            let (_keep, out, _) = pack_tmp(src.path(), &opts);
            images.push(fs::read(&out).unwrap());
        }
        assert_eq!(images[0], images[1]);
    }

    #[test]
    fn verify_detects_modification() {
        let src = tempfile::tempdir().unwrap();
        fs::write(src.path().join("a"), b"original").unwrap();
        fs::write(src.path().join("b"), b"other").unwrap();
        let (_keep, out, _) = pack_tmp(src.path(), &PackOptions::default());

        let clean = verify(&out, src.path()).unwrap();
        assert_eq!(clean.mismatches.len(), 0);
        assert_eq!(clean.entries_checked, 3);

        fs::write(src.path().join("a"), b"modified").unwrap();
        let dirty = verify(&out, src.path()).unwrap();
        assert_eq!(dirty.mismatches.len(), 1);
        assert_eq!(dirty.mismatches[0].path, PathBuf::from("a"));
    }

    #[test]
    fn truncated_image_is_structured_error() {
        let src = tempfile::tempdir().unwrap();
        fs::write(src.path().join("f"), vec![3u8; 100_000]).unwrap();
        let (_keep, out, _) = pack_tmp(src.path(), &PackOptions::default());
        let full = fs::read(&out).unwrap();
        fs::write(&out, &full[..full.len() - 4096]).unwrap();
        match BundleReader::open(&out) {
            Err(e) => assert!(!format!("{e}").is_empty()),
            Ok(_) => panic!("truncated image must not open"),
        }
    }

    #[test]
    fn inode_count_matches_composition() {
        let src = tempfile::tempdir().unwrap();
        fs::create_dir_all(src.path().join("x/y")).unwrap();
        fs::write(src.path().join("x/f1"), b"1").unwrap();
        fs::write(src.path().join("x/y/f2"), b"2").unwrap();
        symlink("x/f1", src.path().join("s")).unwrap();
        let tree = scan_source(src.path(), &PackOptions::default()).unwrap();
        assert_eq!(tree.files, 2);
        assert_eq!(tree.dirs, 3);
        assert_eq!(tree.symlinks, 1);
        let (_keep, out, summary) = pack_tmp(src.path(), &PackOptions::default());
        assert_eq!(
            u64::from(summary.inode_count),
            tree.files + tree.dirs + tree.symlinks
        );
        let reader = BundleReader::open(&out).unwrap();
        assert_eq!(reader.inode_count(), summary.inode_count);
    }

    #[test]
    fn cache_budget_zero_still_correct() {
        let src = tempfile::tempdir().unwrap();
        for i in 0..50 {
            fs::write(src.path().join(format!("f{i:02}")), format!("data{i}")).unwrap();
        }
        let (_keep, out, _) = pack_tmp(src.path(), &PackOptions::default());
        let cached = BundleReader::open(&out).unwrap();
        let uncached = BundleReader::open_with_budget(&out, 0).unwrap();
        let a: Vec<_> = cached.walk().collect::<Result<Vec<_>>>().unwrap();
        let b: Vec<_> = uncached.walk().collect::<Result<Vec<_>>>().unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.path, y.path);
            assert_eq!(x.attr, y.attr);
        }
        let stats = uncached.cache_control(CacheAction::Stats);
        assert_eq!(stats.hits, 0);
        assert!(stats.misses > 0);
    }

    #[test]
    fn warm_walk_hits_cache() {
        let src = tempfile::tempdir().unwrap();
        for d in 0..20 {
            let sub = src.path().join(format!("d{d:02}"));
            fs::create_dir(&sub).unwrap();
            for f in 0..20 {
                fs::write(sub.join(format!("f{f:02}")), b"x").unwrap();
            }
        }
        let (_keep, out, _) = pack_tmp(src.path(), &PackOptions::default());
        let reader = BundleReader::open(&out).unwrap();
        reader.cache_control(CacheAction::Clear);
        let cold = reader.walk().count();
        let after_cold = reader.cache_control(CacheAction::Stats);
        assert!(after_cold.misses > 0);
        let warm = reader.walk().count();
        let after_warm = reader.cache_control(CacheAction::Stats);
        assert_eq!(cold, warm);
        // Second walk re-decompresses nothing: no new misses.
        assert_eq!(after_warm.misses, after_cold.misses);
        let new_hits = after_warm.hits - after_cold.hits;
        let new_total = new_hits + (after_warm.misses - after_cold.misses);
        assert!(new_hits as f64 / new_total as f64 > 0.9);
    }
}
